import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp
from scipy import ndimage

from cowtopo.labels import CLASS_NAMES, DEFAULT_LABEL_MAP
from cowtopo.metrics import (
    CaseMetrics,
    ClassScore,
    betti0,
    cl_dice,
    class_overlap,
    dice,
    evaluate_case,
    per_class_dice,
)
from cowtopo.phantom import DropClass, FloatingBlob, apply_corruption
from cowtopo.skeleton import skeletonize
from cowtopo.volume import LabelVolume, RoiBox
from oracles import ball, dice_from_sets, flood_fill_count, index_set, tube

LM = DEFAULT_LABEL_MAP


def half_tube_pair():
    gt = tube((48, 12, 12), 4, 44, (6, 6), 2)
    pred = gt.copy()
    pred[24:] = False
    return gt, pred


# ----------------------------------------------------------------------------
# Dice


def test_dice_identity_and_disjoint():
    a = np.zeros((6, 6, 6), bool)
    a[1:3, 1:3, 1:3] = True
    b = np.roll(a, 3, axis=0)
    assert dice(a, a) == 1.0
    assert dice(a, b) == 0.0
    assert dice(np.zeros_like(a), np.zeros_like(a)) == 1.0


def test_dice_shifted_cube():
    gt = np.zeros((20, 20, 20), bool)
    gt[2:12, 2:12, 2:12] = True
    pred = np.roll(gt, 5, axis=0)
    assert len(index_set(gt) & index_set(pred)) == 500
    assert dice(gt, pred) == dice_from_sets(index_set(gt), index_set(pred)) == 0.5


def test_dice_shape_mismatch():
    with pytest.raises(ValueError, match="shape"):
        dice(np.ones((2, 2, 2)), np.ones((2, 2, 3)))


@settings(max_examples=50, deadline=None)
@given(a=hnp.arrays(np.bool_, (5, 5, 5)), b=hnp.arrays(np.bool_, (5, 5, 5)))
def test_dice_properties(a, b):
    assert dice(a, b) == dice(b, a)
    assert dice(a, b) == pytest.approx(dice_from_sets(index_set(a), index_set(b)))
    assert 0.0 <= dice(a, b) <= 1.0
    if a.any():
        assert dice(a, a) == 1.0


def test_per_class_dice():
    g = np.zeros((6, 6, 6), np.uint8)
    g[0:2] = LM["Acom"]
    p = g.copy()
    gt, pred = LabelVolume(g), LabelVolume(p)
    assert per_class_dice(gt, pred, "Acom") == 1.0
    assert per_class_dice(gt, LabelVolume(np.zeros_like(g)), "Acom") == 0.0
    assert per_class_dice(gt, pred, "3rd-A2") is None


@settings(max_examples=40, deadline=None)
@given(
    g=hnp.arrays(np.uint8, (5, 5, 4), elements=st.integers(0, 13)),
    p=hnp.arrays(np.uint8, (5, 5, 4), elements=st.integers(0, 13)),
)
def test_class_overlap_matches_per_class(g, p):
    gt, pred = LabelVolume(g), LabelVolume(p)
    overlap = class_overlap(gt, pred)
    for name in CLASS_NAMES:
        d, n_gt, n_pred = overlap[name]
        assert d == per_class_dice(gt, pred, name)
        assert n_gt == int((g == LM[name]).sum()) and n_pred == int((p == LM[name]).sum())


# ----------------------------------------------------------------------------
# skeleton


def test_empty_skeleton():
    assert not skeletonize(np.zeros((5, 5, 5), bool)).any()


def test_tube_skeleton_is_a_path():
    mask = tube((50, 12, 12), 5, 45, (6, 6), 2)
    skel = skeletonize(mask)
    assert flood_fill_count(skel, 26) == 1
    assert not (skel & ~mask).any()
    # a simple path: every voxel has at most two 26-neighbours
    neighbours = ndimage.convolve(skel.astype(int), np.ones((3, 3, 3), int), mode="constant") - 1
    assert neighbours[skel].max() <= 2
    assert (neighbours[skel] == 1).sum() == 2
    # it spans the tube almost end to end
    xs = np.nonzero(skel)[0]
    assert xs.min() <= 7 and xs.max() >= 42


def test_two_tubes_give_two_skeleton_components():
    mask = tube((40, 20, 12), 5, 35, (5, 6), 2) | tube((40, 20, 12), 5, 35, (14, 6), 2)
    assert flood_fill_count(skeletonize(mask), 26) == 2


def test_skeleton_of_ball_is_compact():
    mask = ball((15, 15, 15), (7, 7, 7), 5)
    skel = skeletonize(mask)
    assert flood_fill_count(skel, 26) == 1 and skel.sum() <= 3


def test_skeleton_keeps_loop():
    # a square ring keeps its hole
    mask = np.zeros((20, 20, 5), bool)
    mask[3:17, 3:17, 1:4] = True
    mask[7:13, 7:13, :] = False
    skel = skeletonize(mask)
    assert flood_fill_count(skel, 26) == 1
    # the projected skeleton still encloses the hole
    proj = skel.any(axis=2)
    assert flood_fill_count(~proj[:, :, None], 6) == 2
    assert not (skel & ~mask).any()


def test_skeleton_agrees_with_skimage_on_tube():
    skimage_morph = pytest.importorskip("skimage.morphology")
    mask = tube((50, 12, 12), 5, 45, (6, 6), 2)
    ours = skeletonize(mask)
    ref = skimage_morph.skeletonize(mask) > 0
    assert flood_fill_count(ref, 26) == flood_fill_count(ours, 26) == 1
    assert abs(int(ours.sum()) - int(ref.sum())) <= 4


@settings(max_examples=25, deadline=None)
@given(mask=hnp.arrays(np.bool_, (7, 7, 7)))
def test_skeleton_subset_and_components(mask):
    skel = skeletonize(mask)
    assert not (skel & ~mask).any()
    assert flood_fill_count(skel, 26) == flood_fill_count(mask, 26)


def test_skeleton_preserves_phantom_components(lattice):
    for spec, vol, roi, _ in lattice[:6]:
        mask = vol.data[roi.slices] != 0
        skel = skeletonize(mask)
        assert not (skel & ~mask).any()
        assert flood_fill_count(skel, 26) == flood_fill_count(mask, 26)


# ----------------------------------------------------------------------------
# clDice


def test_cldice_identity():
    gt, _ = half_tube_pair()
    assert cl_dice(gt, gt) == 1.0


def test_cldice_half_tube():
    gt, pred = half_tube_pair()
    sg, sp = skeletonize(gt), skeletonize(pred)
    tprec = (sp & gt).sum() / sp.sum()
    tsens = (sg & pred).sum() / sg.sum()
    assert tprec == 1.0
    assert tsens == pytest.approx(0.5, abs=0.05)
    assert cl_dice(gt, pred) == pytest.approx(2 / 3, abs=0.05)


def test_cldice_disjoint_and_empty():
    a = tube((40, 20, 12), 5, 35, (5, 6), 2)
    b = tube((40, 20, 12), 5, 35, (14, 6), 2)
    empty = np.zeros_like(a)
    assert cl_dice(a, b) == 0.0
    assert cl_dice(a, empty) == cl_dice(empty, a) == 0.0
    assert cl_dice(empty, empty) == 1.0


@pytest.mark.parametrize("rank", [1, 2, 3])
def test_cldice_stable_under_dilation(rank):
    # long enough that the one-voxel growth at the cut end stays a small share
    gt = tube((88, 14, 14), 4, 84, (7, 7), 2)
    pred = gt.copy()
    pred[44:] = False
    st = ndimage.generate_binary_structure(3, rank)
    grown = cl_dice(ndimage.binary_dilation(gt, st), ndimage.binary_dilation(pred, st))
    assert grown == pytest.approx(cl_dice(gt, pred), abs=0.02)


# ----------------------------------------------------------------------------
# Betti-0


def test_betti0_examples():
    assert betti0(np.zeros((5, 5, 5), bool)) == 0
    assert betti0(ball((11, 11, 11), (5, 5, 5), 4)) == 1
    mask = ball((30, 12, 12), (6, 6, 6), 4) | ball((30, 12, 12), (18, 6, 6), 4)
    mask[27, 6, 6] = True
    assert betti0(mask) == flood_fill_count(mask) == 3


@pytest.mark.parametrize("connectivity", [6, 18, 26])
@pytest.mark.parametrize("p", [0.05, 0.2, 0.5])
def test_betti0_matches_flood_fill(connectivity, p):
    rng = np.random.default_rng(int(p * 100) + connectivity)
    for _ in range(10):
        mask = rng.random((20, 20, 20)) < p
        assert betti0(mask, connectivity) == flood_fill_count(mask, connectivity)


def test_betti0_connectivity_differs_on_diagonal():
    mask = np.zeros((3, 3, 3), bool)
    mask[0, 0, 0] = mask[1, 1, 1] = True
    assert betti0(mask, 26) == 1
    assert betti0(mask, 18) == betti0(mask, 6) == 2


def test_bad_connectivity():
    with pytest.raises(ValueError, match="connectivity"):
        betti0(np.ones((2, 2, 2)), 8)


# ----------------------------------------------------------------------------
# evaluate_case


def test_identity_scores_perfect(full_phantom):
    vol, roi, _ = full_phantom
    m = evaluate_case(vol, vol, roi)
    assert m.binary_dice == m.binary_cldice == m.class_avg_dice == 1.0
    assert m.binary_betti0_error == 0 and m.class_avg_betti0_error == 0
    assert m.score("3rd-A2").dice is None
    assert sum(s.present for s in m.class_scores) == 12


def test_deleted_acom(full_phantom):
    vol, roi, graph = full_phantom
    pred = apply_corruption(vol, DropClass("Acom"))
    m = evaluate_case(vol, pred, roi)
    acom = m.score("Acom")
    assert acom.dice == 0.0 and acom.betti0_error == 1
    # with both Pcoms the circle stays closed: removing Acom does not split it
    merged_gt = flood_fill_count(vol.data != 0)
    merged_pred = flood_fill_count(pred.data != 0)
    assert merged_gt == merged_pred == 1
    assert m.binary_betti0_error == 0


def test_deleted_acom_splits_without_pcoms(phantom_of):
    vol, roi, _ = phantom_of(r_pcom=False, l_pcom=False)
    pred = apply_corruption(vol, DropClass("Acom"))
    m = evaluate_case(vol, pred, roi)
    assert flood_fill_count(pred.data[roi.slices] != 0) - flood_fill_count(vol.data[roi.slices] != 0) == 1
    assert m.binary_betti0_error == 1


def test_floating_ba_blob(full_phantom):
    vol, roi, _ = full_phantom
    data = vol.data.copy()
    x, y, z = roi.min_corner
    data[x + 1, y + 1, z + 1 : z + 4] = LM["BA"]  # three voxels in a corner of the ROI
    pred = vol.replace(data)
    m = evaluate_case(vol, pred, roi)
    assert m.binary_betti0_error == 1
    assert m.score("BA").betti0_error == 1
    assert m.score("BA").betti0_pred == flood_fill_count(data[roi.slices] == LM["BA"]) == 2


def test_class_average_over_present_classes_only():
    m = CaseMetrics("c", None, 1.0, 1.0, 0, [ClassScore("BA", 0.5, 1, 1), ClassScore("Acom", None, 0, 0)])
    assert m.class_avg_dice == 0.5
    assert m.class_avg_betti0_error == 0.0
    scores = [ClassScore(n, 0.8, 1, 2) for n in CLASS_NAMES[:5]]
    m = CaseMetrics("c", None, 1.0, 1.0, 0, scores)
    assert m.class_avg_dice == pytest.approx(0.8) and m.class_avg_betti0_error == 1.0


def test_record_roundtrip(full_phantom):
    vol, roi, _ = full_phantom
    m = evaluate_case(vol, apply_corruption(vol, FloatingBlob("BA", 1.0, (0.0, 0.0, 8.0))), roi, case_id="x")
    again = CaseMetrics.from_record(m.to_record())
    assert again.to_record() == m.to_record()


def test_binary_task_has_no_class_scores(full_phantom):
    vol, roi, _ = full_phantom
    m = evaluate_case(vol, vol, roi, task="binary")
    assert m.class_scores == [] and m.class_avg_dice is None
    assert "class_avg_dice" not in m.to_record()


def test_evaluate_errors(full_phantom):
    vol, _, _ = full_phantom
    small = LabelVolume(np.zeros((4, 4, 4), np.uint8))
    with pytest.raises(ValueError, match="dims mismatch"):
        evaluate_case(vol, small)
    with pytest.raises(ValueError, match="task"):
        evaluate_case(small, small, task="both")
    with pytest.raises(ValueError, match="label map"):
        evaluate_case(small, small.replace(np.full((4, 4, 4), 99, np.uint8)))
    with pytest.raises(ValueError, match="ROI"):
        evaluate_case(small, small, RoiBox((2, 2, 2), (3, 3, 3)))


def test_roi_restricts_evaluation():
    g = np.zeros((10, 10, 10), np.uint8)
    g[1:4, 1:4, 1:4] = LM["BA"]
    p = g.copy()
    p[8, 8, 8] = LM["BA"]  # outside the ROI
    roi = RoiBox((0, 0, 0), (5, 5, 5))
    assert evaluate_case(LabelVolume(g), LabelVolume(p), roi).binary_betti0_error == 0
    assert evaluate_case(LabelVolume(g), LabelVolume(p)).binary_betti0_error == 1
