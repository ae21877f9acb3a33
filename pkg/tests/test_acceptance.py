"""Acceptance suite: one test per criterion, each logging a pass/fail line."""

import itertools
import math
import os
import time

import numpy as np
from scipy import ndimage

from cowtopo.harness import Settings, cmd_evaluate, cmd_phantom
from cowtopo.labels import DEFAULT_LABEL_MAP
from cowtopo.metrics import betti0, cl_dice, evaluate_case
from cowtopo.phantom import (
    _T,
    Break,
    CrossoverSwap,
    DilateErode,
    DropClass,
    FloatingBlob,
    PhantomSpec,
    apply_corruption,
    expected_graph,
    generate_phantom,
    spec_lattice,
)
from cowtopo.ranking import Column, rank_teams
from cowtopo.skeleton import skeletonize
from cowtopo.topology import (
    DetectionCounts,
    Outcome,
    detect_class,
    extract_component_graph,
    match_anterior,
    match_case,
    match_posterior,
    precision_recall,
)
from cowtopo.volume import IntensityVolume, LabelVolume, RoiBox, crop_to_roi, read_roi_file, read_volume, write_roi_file, write_volume
from criteria import criterion
from oracles import ball, flood_fill_count, truth_table, tube

LM = DEFAULT_LABEL_MAP


def mm_to_index(spec, point_mm):
    center = (np.array(spec.dims) - 1) / 2.0 * np.array(spec.spacing)
    return tuple(int(round(v)) for v in (np.asarray(point_mm) + center) / np.array(spec.spacing))


# ----------------------------------------------------------------------------


def test_criterion_1_metric_identity():
    with criterion(1, "metric identity over the variant lattice") as info:
        start = time.perf_counter()
        specs = spec_lattice()
        assert len(specs) >= 32
        for spec in specs:
            vol, _, _ = generate_phantom(spec)
            m = evaluate_case(vol, vol)
            assert m.binary_dice == 1.0 and m.binary_cldice == 1.0, spec
            assert m.binary_betti0_error == 0, spec
            for s in m.class_scores:
                if s.present:
                    assert s.dice == 1.0 and s.betti0_error == 0, (spec, s)
                else:
                    assert s.cls not in spec.present_classes(), (spec, s)
        elapsed = time.perf_counter() - start
        info.append(f"{len(specs)} specs, generate+evaluate {elapsed:.1f} s")
        assert elapsed < 60


def test_criterion_2_betti0_matches_flood_fill():
    with criterion(2, "betti0 agrees with a brute-force flood fill") as info:
        rng = np.random.default_rng(2024)
        compared = 0
        for density in (0.1, 0.3, 0.5):
            for _ in range(100):
                mask = rng.random((20, 20, 20)) < density
                for connectivity in (6, 18, 26):
                    assert betti0(mask, connectivity) == flood_fill_count(mask, connectivity), (density, connectivity)
                    compared += 1
        info.append(f"{compared}/900 agree")
        assert compared == 900


def test_criterion_3_cldice_and_skeleton():
    with criterion(3, "clDice analytic fixtures and skeleton properties") as info:
        gt = tube((48, 12, 12), 4, 44, (6, 6), 2)
        half = gt.copy()
        half[24:] = False
        score = cl_dice(gt, half)
        info.append(f"half tube {score:.4f}")
        assert abs(score - 0.667) <= 0.05

        a = tube((40, 20, 12), 5, 35, (5, 6), 2)
        b = tube((40, 20, 12), 5, 35, (14, 6), 2)
        assert cl_dice(a, b) == 0.0

        ring = ball((24, 24, 9), (11.5, 11.5, 4), 9) & ~ball((24, 24, 9), (11.5, 11.5, 4), 5)
        fixtures = [gt, half, a, b, a | b, ball((15, 15, 15), (7, 7, 7), 5), ring]
        for spec in spec_lattice()[:4]:
            vol, roi, _ = generate_phantom(spec)
            fixtures.append(vol.data[roi.slices] != 0)
        for mask in fixtures:
            skel = skeletonize(mask)
            assert not (skel & ~mask).any()
            assert flood_fill_count(skel) == flood_fill_count(mask)
        info.append(f"{len(fixtures)} skeleton fixtures")


def test_criterion_4_detection_truth_table():
    with criterion(4, "detection truth table and nan precision") as info:
        shape = (8, 8, 8)
        rows = 0
        for gt_has, pred_has, overlap in itertools.product((False, True), repeat=3):
            if overlap and not (gt_has and pred_has):
                continue
            gt = np.zeros(shape, np.uint8)
            pred = np.zeros(shape, np.uint8)
            if gt_has:
                gt[1:3, 1:3, 1:3] = LM["Acom"]
            if pred_has:
                if overlap:
                    pred[2:4, 2:4, 2:4] = LM["Acom"]
                else:
                    pred[5:7, 5:7, 5:7] = LM["Acom"]
            got = detect_class(LabelVolume(gt), LabelVolume(pred), "Acom")
            assert got.value == truth_table(gt_has, pred_has, overlap), (gt_has, pred_has, overlap)
            rows += 1
        assert rows == 5

        counts = DetectionCounts()
        counts.add("Acom", Outcome.FN, 2)
        counts.add("Acom", Outcome.TN, 3)
        counts.add("3rd-A2", Outcome.TN, 5)
        counts.add("BA", Outcome.TP, 5)
        pr = precision_recall(counts)
        assert math.isnan(pr["Acom"][0]) and pr["Acom"][1] == 0.0
        assert all(math.isnan(v) for v in pr["3rd-A2"])
        assert pr["BA"] == (1.0, 1.0)
        info.append(f"{rows} presence/overlap rows")


def test_criterion_5_graph_oracle(lattice):
    with criterion(5, "component graph equals the expected graph") as info:
        for spec, vol, _, graph in lattice:
            measured = extract_component_graph(vol)
            assert measured == expected_graph(spec) == graph, spec
            assert measured.counts == graph.counts
            assert measured.class_edges() == graph.class_edges()
        info.append(f"{len(lattice)} specs")


def _anterior_tail_box(spec, vol):
    y_cut = mm_to_index(spec, (0, _T["a1a2"][1] - 4, 0))[1]
    mask = vol.data == LM["R-ACA"]
    mask[:, y_cut:, :] = False
    return RoiBox.around(mask)


def _blob_near_ica(spec, vol):
    target = np.asarray(mm_to_index(spec, np.add(_T["ica_top"], (2.6, 0, 0)))) * np.asarray(spec.spacing)
    source = (np.argwhere(vol.data == LM["R-ACA"]) * np.asarray(spec.spacing)).mean(axis=0)
    return FloatingBlob("R-ACA", 1.0, tuple(target - source))


OPERATORS = [
    ("Break", {}, lambda s, v: Break("Acom", 1.5), "Acom:betti0"),
    ("DropClass", {}, lambda s, v: DropClass("Acom"), "Acom:presence"),
    ("FloatingBlob", {"r_a1": "aplastic"}, _blob_near_ica, "R-ACA:neighbour-R-ICA"),
    ("CrossoverSwap", {}, lambda s, v: CrossoverSwap("R-ACA", "L-ACA", _anterior_tail_box(s, v)), "L-ACA:betti0"),
    ("DilateErode", {}, lambda s, v: DilateErode("R-Pcom", -2), "R-Pcom:presence"),
]


def test_criterion_6_matching_sensitivity(lattice, phantom_of):
    with criterion(6, "variant matching sensitivity") as info:
        for name, fields, make, target in OPERATORS:
            gt, _, g = phantom_of(**fields)
            pred = apply_corruption(gt, make(PhantomSpec(**fields), gt))
            report = match_case(name, g, extract_component_graph(pred))
            assert target in report.failed_conditions, (name, report.failed_conditions)
        info.append(f"{len(OPERATORS)} operators")

        matched = sum(not match_case("self", g, extract_component_graph(vol)).failed_conditions for _, vol, _, g in lattice)
        info.append(f"self-match {matched}/{len(lattice)}")
        assert matched == len(lattice)

        # Case 116: an Acom predicted where the ground truth has none
        gt, _, _ = phantom_of(acom="absent", seed=3)
        pred, _, _ = phantom_of(acom="present", seed=3)
        ok, failed = match_anterior(extract_component_graph(gt), extract_component_graph(pred))
        assert not ok and "Acom:presence" in failed

        # Case 120: 3rd-A2 present but cut off from the Acom
        gt, _, _ = phantom_of(third_a2=True)
        near = ndimage.distance_transform_edt(gt.data != LM["Acom"], sampling=gt.spacing) < 1.6
        data = gt.data.copy()
        data[near & (data == LM["3rd-A2"])] = 0
        ok, failed = match_anterior(extract_component_graph(gt), extract_component_graph(gt.replace(data)))
        assert not ok and failed == ["3rd-A2:connect-Acom"]

        # Case 126: fetal PCA split into two pieces
        spec = PhantomSpec(r_fetal=True)
        gt, _, _ = phantom_of(r_fetal=True)
        pred = apply_corruption(gt, Break("R-PCA", 1.5, center=mm_to_index(spec, _T["p1p2"])))
        ok, failed = match_posterior(extract_component_graph(gt), extract_component_graph(pred))
        assert not ok and "R-PCA:betti0" in failed
        info.append("cases 116/120/126 fail as documented")


def test_criterion_7_ranking_fixture():
    with criterion(7, "hand-enumerated leaderboard and rescaling invariance") as info:
        columns = [Column("dice"), Column("cldice"), Column("betti0_error", higher_is_better=False)]
        scores = {
            "A": {"dice": 95, "cldice": 98, "betti0_error": 0.5},
            "B": {"dice": 92, "cldice": 97, "betti0_error": 0.3},
            "C": {"dice": 90, "cldice": 99, "betti0_error": 0.7},
        }
        board = rank_teams(scores, columns)
        assert board.order == ["A", "B", "C"]
        assert [round(board.average[t], 2) for t in "ABC"] == [1.67, 2.0, 2.33]
        transforms = [lambda v: 3 * v - 7, lambda v: v**3, np.log1p, lambda v: 1e-3 * v + 1e6]
        for f in transforms:
            rescaled = {t: {c: float(f(v)) for c, v in row.items()} for t, row in scores.items()}
            other = rank_teams(rescaled, columns)
            assert other.ranks == board.ranks and other.order == board.order
        info.append(f"order {''.join(board.order)}, {len(transforms)} rescalings")


def _widened(roi: RoiBox, dims, size=(160, 120, 80)) -> RoiBox:
    """ROI grown to at least ``size`` around its centre, kept inside the grid."""
    new = [max(s, t) for s, t in zip(roi.size, size)]
    lo = [min(max(m + s // 2 - n // 2, 0), d - n) for m, s, n, d in zip(roi.min_corner, roi.size, new, dims)]
    return RoiBox(tuple(lo), tuple(new))


def test_criterion_8_performance(tmp_path):
    with criterion(8, "MRA-scale runtime") as info:
        dims, spacing = (480, 580, 190), (0.3, 0.3, 0.6)
        specs = {f"src-{i}": s for i, s in enumerate(spec_lattice(dims=dims, spacing=spacing)[:5])}
        cmd_phantom(tmp_path, specs, [Break("BA", 1.5)])
        rois = {k: _widened(r, dims) for k, r in read_roi_file(tmp_path / "roi.jsonl").items()}

        gt = read_volume(tmp_path / "gt" / "src-0.nii.gz")
        pred = read_volume(tmp_path / "pred" / "src-0.nii.gz")
        start = time.perf_counter()
        m = evaluate_case(crop_to_roi(gt, rois["src-0"]), crop_to_roi(pred, rois["src-0"]))
        single = time.perf_counter() - start
        assert m.binary_betti0_error == 1
        info.append(f"one case {single:.2f} s at ROI {rois['src-0'].size}")

        # 35 cases drawn from the five distinct phantoms
        for sub in ("bgt", "bpred"):
            (tmp_path / sub).mkdir()
        batch_rois = {}
        for i in range(35):
            src, case = f"src-{i % 5}", f"mra-{i:03d}"
            os.symlink(tmp_path / "gt" / f"{src}.nii.gz", tmp_path / "bgt" / f"{case}.nii.gz")
            os.symlink(tmp_path / "pred" / f"{src}.nii.gz", tmp_path / "bpred" / f"{case}.nii.gz")
            batch_rois[case] = rois[src]
        write_roi_file(tmp_path / "roi35.jsonl", batch_rois)
        start = time.perf_counter()
        result, status = cmd_evaluate(
            tmp_path / "bgt", tmp_path / "bpred", tmp_path / "out",
            roi_file=tmp_path / "roi35.jsonl", settings=Settings(jobs=8), figures=False,
        )
        batch = time.perf_counter() - start
        assert status == 0 and len(result.cases) == 35
        info.append(f"35-case batch {batch:.1f} s with 8 workers on {os.cpu_count()} CPU")
        assert single < 5
        assert batch < 30


def test_criterion_9_io_roundtrip(tmp_path):
    with criterion(9, "bitwise NIfTI round-trip, raw and gzipped") as info:
        volumes = []
        for spec in spec_lattice()[:6]:
            vol, _, _ = generate_phantom(spec)
            volumes.append(vol)
        volumes.append(generate_phantom(PhantomSpec(dims=(160, 160, 80), spacing=(0.3, 0.3, 0.6)))[0])
        rng = np.random.default_rng(9)
        volumes.append(IntensityVolume(rng.integers(-1024, 3000, (40, 30, 20), dtype=np.int16), (0.45, 0.45, 0.7)))
        n = 0
        for i, vol in enumerate(volumes):
            for suffix in (".nii", ".nii.gz"):
                first = tmp_path / f"v{i}{suffix}"
                second = tmp_path / f"w{i}{suffix}"
                write_volume(vol, first)
                back = read_volume(first, kind=vol.kind)
                assert back.data.dtype == vol.data.dtype
                assert back.data.tobytes() == vol.data.tobytes()
                assert back.spacing == vol.spacing and back.origin == vol.origin
                write_volume(back, second)
                assert first.read_bytes() == second.read_bytes()
                n += 1
        info.append(f"{n}/{n} files")
