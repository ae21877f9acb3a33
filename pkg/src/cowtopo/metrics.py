"""Segmentation metrics: Dice, centerline Dice and Betti-0 errors."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .labels import CLASS_NAMES, DEFAULT_LABEL_MAP, LabelMap
from .skeleton import skeletonize
from .volume import LabelVolume, RoiBox, crop_to_roi

CONNECTIVITIES = {6: 1, 18: 2, 26: 3}


def structure(connectivity: int) -> np.ndarray:
    try:
        rank = CONNECTIVITIES[connectivity]
    except KeyError:
        raise ValueError(f"connectivity must be 6, 18 or 26, not {connectivity}") from None
    return ndimage.generate_binary_structure(3, rank)


def _same_shape(a: np.ndarray, b: np.ndarray):
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")


def _mask(x) -> np.ndarray:
    if isinstance(x, LabelVolume):
        x = x.data
    return np.asarray(x) != 0


def dice(a, b) -> float:
    """Dice overlap of two binary masks; two empty masks agree perfectly (1.0)."""
    a, b = _mask(a), _mask(b)
    _same_shape(a, b)
    total = int(np.count_nonzero(a)) + int(np.count_nonzero(b))
    if total == 0:
        return 1.0
    return 2.0 * np.count_nonzero(a & b) / total


def per_class_dice(gt: LabelVolume, pred: LabelVolume, cls, label_map: LabelMap = DEFAULT_LABEL_MAP):
    """Dice of one class, or ``None`` when the class is absent from both volumes."""
    value = label_map.resolve(cls)
    _same_shape(gt.data, pred.data)
    g = gt.data == value
    p = pred.data == value
    total = int(np.count_nonzero(g)) + int(np.count_nonzero(p))
    if total == 0:
        return None
    return 2.0 * np.count_nonzero(g & p) / total


def cl_dice(gt_bin, pred_bin) -> float:
    """Centerline Dice: harmonic mean of topology precision and sensitivity.

    Topology precision is the fraction of the prediction's skeleton lying in
    the ground-truth mask, topology sensitivity the fraction of the
    ground-truth skeleton inside the prediction.
    """
    g, p = _mask(gt_bin), _mask(pred_bin)
    _same_shape(g, p)
    g_any, p_any = g.any(), p.any()
    if not g_any and not p_any:
        return 1.0
    if not g_any or not p_any:
        return 0.0
    skel_g = skeletonize(g)
    skel_p = skeletonize(p)
    tprec = np.count_nonzero(skel_p & g) / np.count_nonzero(skel_p)
    tsens = np.count_nonzero(skel_g & p) / np.count_nonzero(skel_g)
    if tprec + tsens == 0:
        return 0.0
    return 2.0 * tprec * tsens / (tprec + tsens)


def betti0(mask, connectivity: int = 26) -> int:
    """Number of foreground connected components."""
    _, n = ndimage.label(_mask(mask), structure=structure(connectivity))
    return int(n)


@dataclass
class ClassScore:
    cls: str
    dice: float | None
    betti0_gt: int
    betti0_pred: int

    @property
    def betti0_error(self) -> int:
        return abs(self.betti0_pred - self.betti0_gt)

    @property
    def present(self) -> bool:
        return self.dice is not None


@dataclass
class CaseMetrics:
    case_id: str
    modality: str | None
    binary_dice: float
    binary_cldice: float
    binary_betti0_error: int
    class_scores: list[ClassScore] = field(default_factory=list)

    @property
    def class_avg_dice(self) -> float | None:
        values = [s.dice for s in self.class_scores if s.present]
        return float(np.mean(values)) if values else None

    @property
    def class_avg_betti0_error(self) -> float | None:
        values = [s.betti0_error for s in self.class_scores if s.present]
        return float(np.mean(values)) if values else None

    def score(self, cls: str) -> ClassScore:
        for s in self.class_scores:
            if s.cls == cls:
                return s
        raise KeyError(cls)

    def to_record(self) -> dict:
        """Flat, JSON-ready record (one key per value)."""
        rec = {
            "case": self.case_id,
            "modality": self.modality,
            "binary_dice": self.binary_dice,
            "binary_cldice": self.binary_cldice,
            "binary_betti0_error": self.binary_betti0_error,
        }
        if self.class_scores:
            rec["class_avg_dice"] = self.class_avg_dice
            rec["class_avg_betti0_error"] = self.class_avg_betti0_error
            for s in self.class_scores:
                rec[f"dice[{s.cls}]"] = s.dice
                rec[f"betti0_gt[{s.cls}]"] = s.betti0_gt
                rec[f"betti0_pred[{s.cls}]"] = s.betti0_pred
                rec[f"betti0_error[{s.cls}]"] = s.betti0_error
        return rec

    @classmethod
    def from_record(cls, rec: dict) -> "CaseMetrics":
        scores = []
        for key in rec:
            if key.startswith("dice["):
                name = key[5:-1]
                scores.append(
                    ClassScore(name, rec[key], rec[f"betti0_gt[{name}]"], rec[f"betti0_pred[{name}]"])
                )
        return cls(
            rec["case"],
            rec.get("modality"),
            rec["binary_dice"],
            rec["binary_cldice"],
            rec["binary_betti0_error"],
            scores,
        )


def _class_boxes(gt: np.ndarray, pred: np.ndarray):
    """Per label value, the bounding box covering it in either volume."""
    boxes = {}
    for arr in (gt, pred):
        for value, box in enumerate(ndimage.find_objects(arr), start=1):
            if box is None:
                continue
            if value in boxes:
                old = boxes[value]
                box = tuple(slice(min(a.start, b.start), max(a.stop, b.stop)) for a, b in zip(old, box))
            boxes[value] = box
    return boxes


def evaluate_case(
    gt: LabelVolume,
    pred: LabelVolume,
    roi: RoiBox | None = None,
    label_map: LabelMap | None = None,
    *,
    task: str = "multiclass",
    connectivity: int = 26,
    case_id: str = "",
    modality: str | None = None,
) -> CaseMetrics:
    """Score one prediction against its ground truth inside the ROI.

    The binary columns (Dice, clDice, Betti-0 error) are always computed on
    the merged foreground. For ``task="multiclass"`` every class of the
    label map also gets a Dice and a Betti-0 count; classes absent from both
    volumes are left out of the per-case averages.
    """
    if task not in ("binary", "multiclass"):
        raise ValueError(f"task must be 'binary' or 'multiclass', not {task!r}")
    if gt.dims != pred.dims:
        raise ValueError(f"dims mismatch: ground truth {gt.dims} vs prediction {pred.dims}")
    label_map = label_map or DEFAULT_LABEL_MAP
    structure(connectivity)
    if roi is not None:
        gt, pred = crop_to_roi(gt, roi), crop_to_roi(pred, roi)
    g, p = gt.data, pred.data

    g_bin, p_bin = g != 0, p != 0
    metrics = CaseMetrics(
        case_id,
        modality,
        binary_dice=dice(g_bin, p_bin),
        binary_cldice=cl_dice(g_bin, p_bin),
        binary_betti0_error=abs(betti0(p_bin, connectivity) - betti0(g_bin, connectivity)),
    )
    if task == "binary":
        return metrics

    overlap = class_overlap(gt, pred, label_map)
    boxes = _class_boxes(g, p)
    st = structure(connectivity)
    for name, (d, n_gt_vox, n_pred_vox) in overlap.items():
        if d is None:
            metrics.class_scores.append(ClassScore(name, None, 0, 0))
            continue
        box = boxes[label_map[name]]
        value = label_map[name]
        n_gt = ndimage.label(g[box] == value, structure=st)[1] if n_gt_vox else 0
        n_pred = ndimage.label(p[box] == value, structure=st)[1] if n_pred_vox else 0
        metrics.class_scores.append(ClassScore(name, d, int(n_gt), int(n_pred)))
    return metrics


def class_overlap(gt: LabelVolume, pred: LabelVolume, label_map: LabelMap | None = None):
    """Per class name: (Dice or None, ground-truth voxels, predicted voxels).

    One joint histogram pass serves all classes. Values outside the label
    map raise ``ValueError``.
    """
    label_map = label_map or DEFAULT_LABEL_MAP
    _same_shape(gt.data, pred.data)
    gt.check_labels(label_map)
    pred.check_labels(label_map)
    codes = gt.data.astype(np.uint16) << 8 | pred.data
    joint = np.bincount(codes.ravel(), minlength=65536).reshape(256, 256)
    gt_counts, pred_counts = joint.sum(axis=1), joint.sum(axis=0)
    out = {}
    for name in CLASS_NAMES:
        value = label_map[name]
        n_gt, n_pred = int(gt_counts[value]), int(pred_counts[value])
        d = 2.0 * int(joint[value, value]) / (n_gt + n_pred) if n_gt + n_pred else None
        out[name] = (d, n_gt, n_pred)
    return out
