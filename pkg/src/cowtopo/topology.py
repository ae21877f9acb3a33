"""Component adjacency graphs, detection outcomes and variant topology matching."""

from __future__ import annotations

import itertools
import math
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum

import networkx as nx
import numpy as np
from scipy import ndimage

from .labels import CLASS_NAMES, DEFAULT_LABEL_MAP, LabelMap
from .metrics import per_class_dice, structure
from .volume import LabelVolume

NodeKey = tuple[str, int]


@dataclass(frozen=True)
class Node:
    cls: str
    index: int
    voxels: int | None = None  # unknown for symbolic graphs

    @property
    def key(self) -> NodeKey:
        return (self.cls, self.index)


@dataclass
class ComponentGraph:
    """Connected components of every class and the contacts between them.

    Two graphs compare equal when a class-preserving relabelling of
    component indices maps one edge set onto the other; voxel counts are
    ignored so that a symbolic graph can be compared with a measured one.
    """

    nodes: list[Node] = field(default_factory=list)
    edges: set[frozenset] = field(default_factory=set)

    def __post_init__(self):
        self.edges = {frozenset(e) for e in self.edges}
        keys = {n.key for n in self.nodes}
        for e in self.edges:
            if len(e) != 2:
                raise ValueError(f"self edge {set(e)}")
            if not e <= keys:
                raise ValueError(f"edge {set(e)} references unknown nodes")

    @property
    def counts(self) -> dict[str, int]:
        return dict(Counter(n.cls for n in self.nodes))

    def betti0(self, cls: str) -> int:
        return sum(1 for n in self.nodes if n.cls == cls)

    def present(self, cls: str) -> bool:
        return any(n.cls == cls for n in self.nodes)

    def touches(self, a: str, b: str) -> bool:
        """Whether any component of class ``a`` touches one of class ``b``."""
        for e in self.edges:
            (ca, _), (cb, _) = tuple(e)
            if {ca, cb} == {a, b} and (a != b or ca == cb):
                return True
        return False

    def class_edges(self) -> set[frozenset]:
        out = set()
        for e in self.edges:
            (ca, _), (cb, _) = tuple(e)
            out.add(frozenset((ca, cb)))
        return out

    def to_networkx(self) -> nx.Graph:
        g = nx.Graph()
        for n in self.nodes:
            g.add_node(n.key, cls=n.cls)
        g.add_edges_from(tuple(e) for e in self.edges)
        return g

    def __eq__(self, other):
        if not isinstance(other, ComponentGraph):
            return NotImplemented
        if self.counts != other.counts or len(self.edges) != len(other.edges):
            return False
        if self.edges == other.edges:
            return True
        return nx.is_isomorphic(
            self.to_networkx(),
            other.to_networkx(),
            node_match=lambda a, b: a["cls"] == b["cls"],
        )

    __hash__ = None

    def to_dict(self) -> dict:
        nodes = sorted(self.nodes, key=lambda n: (CLASS_NAMES.index(n.cls), n.index))
        edges = sorted(sorted(list(k) for k in e) for e in self.edges)
        return {
            "nodes": [{"class": n.cls, "index": n.index, "voxels": n.voxels} for n in nodes],
            "edges": edges,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ComponentGraph":
        nodes = [Node(n["class"], n["index"], n.get("voxels")) for n in d["nodes"]]
        edges = {frozenset(tuple(k) for k in e) for e in d["edges"]}
        return cls(nodes, edges)


def _half_offsets(connectivity: int):
    st = structure(connectivity)
    for off in itertools.product((-1, 0, 1), repeat=3):
        if off > (0, 0, 0) and st[off[0] + 1, off[1] + 1, off[2] + 1]:
            yield off


def extract_component_graph(
    vol: LabelVolume | np.ndarray,
    label_map: LabelMap | None = None,
    connectivity: int = 26,
    adjacency: int = 26,
) -> ComponentGraph:
    """Build the component graph of a multiclass volume.

    Nodes are the ``connectivity``-connected components of each class mask,
    numbered in scan order. Two nodes share an edge when some voxel of one
    lies in the ``adjacency`` neighbourhood of a voxel of the other.
    """
    label_map = label_map or DEFAULT_LABEL_MAP
    data = vol.data if isinstance(vol, LabelVolume) else np.asarray(vol)
    st = structure(connectivity)
    comp = np.zeros(data.shape, dtype=np.int32)
    boxes = ndimage.find_objects(data) if data.size else []
    keys: list[NodeKey] = [None]  # index 0 = background
    nodes = []
    for name in CLASS_NAMES:
        value = label_map[name]
        box = boxes[value - 1] if value <= len(boxes) else None
        if box is None:
            continue
        lab, n = ndimage.label(data[box] == value, structure=st)
        sizes = np.bincount(lab.ravel(), minlength=n + 1)
        sub = comp[box]
        hit = lab > 0
        sub[hit] = lab[hit] + (len(keys) - 1)
        for i in range(n):
            nodes.append(Node(name, i, int(sizes[i + 1])))
            keys.append((name, i))

    pairs = []
    shape = data.shape
    for off in _half_offsets(adjacency):
        src = tuple(slice(max(0, -o), n - max(0, o)) for o, n in zip(off, shape))
        dst = tuple(slice(max(0, o), n - max(0, -o)) for o, n in zip(off, shape))
        a, b = comp[src], comp[dst]
        m = (a != b) & (a > 0) & (b > 0)
        if m.any():
            lo = np.minimum(a[m], b[m]).astype(np.int64)
            hi = np.maximum(a[m], b[m]).astype(np.int64)
            pairs.append(lo * len(keys) + hi)
    edges = set()
    if pairs:
        for code in np.unique(np.concatenate(pairs)):
            lo, hi = divmod(int(code), len(keys))
            edges.add(frozenset((keys[lo], keys[hi])))
    return ComponentGraph(nodes, edges)


# ----------------------------------------------------------------------------
# detection


class Outcome(str, Enum):
    TP = "TP"
    TN = "TN"
    FP = "FP"
    FN = "FN"


def classify_outcome(dice: float | None, in_gt: bool) -> Outcome:
    """Detection outcome from a class's Dice score.

    Any overlap is a hit; a missing Dice (class in neither volume) is a true
    negative; a zero Dice is a miss when the ground truth has the class and a
    false alarm otherwise.
    """
    if dice is None:
        return Outcome.TN
    if dice > 0:
        return Outcome.TP
    return Outcome.FN if in_gt else Outcome.FP


def detect_class(gt: LabelVolume, pred: LabelVolume, cls, label_map: LabelMap = DEFAULT_LABEL_MAP) -> Outcome:
    d = per_class_dice(gt, pred, cls, label_map)
    return classify_outcome(d, d is not None and bool(np.any(gt.data == label_map.resolve(cls))))


@dataclass
class DetectionCounts:
    counts: dict[str, Counter] = field(default_factory=dict)

    def add(self, cls: str, outcome: Outcome, n: int = 1):
        self.counts.setdefault(cls, Counter())[Outcome(outcome)] += n

    def get(self, cls: str, outcome: Outcome) -> int:
        return self.counts.get(cls, Counter())[Outcome(outcome)]

    def cases(self, cls: str) -> int:
        return sum(self.counts.get(cls, Counter()).values())

    def accuracy(self, cls: str) -> float:
        n = self.cases(cls)
        return (self.get(cls, Outcome.TP) + self.get(cls, Outcome.TN)) / n if n else math.nan


def count_detections(
    pairs, classes=CLASS_NAMES, label_map: LabelMap = DEFAULT_LABEL_MAP, zero_overlap: str = "fn"
) -> DetectionCounts:
    """Tally outcomes over ``(gt, pred)`` volume pairs.

    ``zero_overlap="fn+fp"`` additionally books a false positive when both
    volumes hold the class without overlapping; the per-class totals then
    exceed the number of cases.
    """
    if zero_overlap not in ("fn", "fn+fp"):
        raise ValueError(f"zero_overlap must be 'fn' or 'fn+fp', not {zero_overlap!r}")
    counts = DetectionCounts()
    for gt, pred in pairs:
        for cls in classes:
            outcome = detect_class(gt, pred, cls, label_map)
            counts.add(cls, outcome)
            if (
                zero_overlap == "fn+fp"
                and outcome is Outcome.FN
                and np.any(pred.data == label_map.resolve(cls))
            ):
                counts.add(cls, Outcome.FP)
    return counts


def precision_recall(counts: DetectionCounts) -> dict[str, tuple[float, float]]:
    """Per-class (precision, recall); ``nan`` where the denominator is zero."""
    out = {}
    for cls in counts.counts:
        tp, fp, fn = (counts.get(cls, o) for o in (Outcome.TP, Outcome.FP, Outcome.FN))
        precision = tp / (tp + fp) if tp + fp else math.nan
        recall = tp / (tp + fn) if tp + fn else math.nan
        out[cls] = (precision, recall)
    return out


# ----------------------------------------------------------------------------
# variants and topology matching


class Anterior(str, Enum):
    WITH_ACOM = "WithAcom"
    MISSING_ACOM = "MissingAcom"
    THIRD_A2 = "ThirdA2"


class Posterior(str, Enum):
    BOTH_PCOMS = "BothPcoms"
    R_PCOM_ONLY = "RPcomOnly"
    L_PCOM_ONLY = "LPcomOnly"
    NO_PCOMS = "NoPcoms"


@dataclass(frozen=True)
class VariantDiagnosis:
    anterior: Anterior
    posterior: Posterior


def classify_variants(gt_graph: ComponentGraph) -> VariantDiagnosis:
    if gt_graph.present("3rd-A2"):
        anterior = Anterior.THIRD_A2
    elif gt_graph.present("Acom"):
        anterior = Anterior.WITH_ACOM
    else:
        anterior = Anterior.MISSING_ACOM
    r, l = gt_graph.present("R-Pcom"), gt_graph.present("L-Pcom")
    if r and l:
        posterior = Posterior.BOTH_PCOMS
    elif r:
        posterior = Posterior.R_PCOM_ONLY
    elif l:
        posterior = Posterior.L_PCOM_ONLY
    else:
        posterior = Posterior.NO_PCOMS
    return VariantDiagnosis(anterior, posterior)


def _check_connector(gt, pred, cls, required, failed, any_side=None):
    """Presence, required contacts and component count of a connecting vessel."""
    if gt.present(cls) != pred.present(cls):
        failed.append(f"{cls}:presence")
        return
    if not gt.present(cls):
        return
    for neighbour in required:
        options = any_side.get(neighbour, (neighbour,)) if any_side else (neighbour,)
        if not any(pred.touches(cls, o) for o in options):
            failed.append(f"{cls}:connect-{neighbour}")
    if pred.betti0(cls) != gt.betti0(cls):
        failed.append(f"{cls}:betti0")


def _check_trunk(gt, pred, cls, neighbours, failed):
    """Component count and GT-relative neighbourhood of an ACA or PCA."""
    if pred.betti0(cls) != gt.betti0(cls):
        failed.append(f"{cls}:betti0")
    for neighbour in neighbours:
        if pred.touches(cls, neighbour) != gt.touches(cls, neighbour):
            failed.append(f"{cls}:neighbour-{neighbour}")


def match_anterior(gt_graph: ComponentGraph, pred_graph: ComponentGraph) -> tuple[bool, list[str]]:
    """Check the anterior conditions; returns (matched, failed condition ids)."""
    failed: list[str] = []
    _check_connector(gt_graph, pred_graph, "Acom", ("R-ACA", "L-ACA"), failed)
    _check_connector(gt_graph, pred_graph, "3rd-A2", ("Acom",), failed)
    for side in "RL":
        _check_trunk(gt_graph, pred_graph, f"{side}-ACA", (f"{side}-ICA", "Acom"), failed)
    return not failed, failed


def match_posterior(
    gt_graph: ComponentGraph, pred_graph: ComponentGraph, ipsilateral: bool = True
) -> tuple[bool, list[str]]:
    """Check the posterior conditions; returns (matched, failed condition ids).

    With ``ipsilateral=False`` a Pcom may connect to the ICA and PCA of
    either side.
    """
    failed: list[str] = []
    for side in "RL":
        any_side = None
        if not ipsilateral:
            any_side = {f"{side}-ICA": ("R-ICA", "L-ICA"), f"{side}-PCA": ("R-PCA", "L-PCA")}
        _check_connector(
            gt_graph, pred_graph, f"{side}-Pcom", (f"{side}-ICA", f"{side}-PCA"), failed, any_side
        )
    for side in "RL":
        _check_trunk(gt_graph, pred_graph, f"{side}-PCA", ("BA", f"{side}-Pcom"), failed)
    return not failed, failed


@dataclass
class MatchReport:
    case_id: str
    anterior_failed: list[str] = field(default_factory=list)
    posterior_failed: list[str] = field(default_factory=list)

    @property
    def anterior_matched(self) -> bool:
        return not self.anterior_failed

    @property
    def posterior_matched(self) -> bool:
        return not self.posterior_failed

    @property
    def failed_conditions(self) -> list[str]:
        return self.anterior_failed + self.posterior_failed

    def to_record(self) -> dict:
        return {
            "case": self.case_id,
            "anterior_matched": self.anterior_matched,
            "posterior_matched": self.posterior_matched,
            "failed_conditions": self.failed_conditions,
        }


def match_case(case_id: str, gt_graph: ComponentGraph, pred_graph: ComponentGraph, ipsilateral: bool = True):
    _, ant = match_anterior(gt_graph, pred_graph)
    _, post = match_posterior(gt_graph, pred_graph, ipsilateral)
    return MatchReport(case_id, ant, post)


@dataclass
class MatchRate:
    matched: int
    total: int

    @property
    def fraction(self) -> float:
        return self.matched / self.total


def aggregate_match_rates(reports, diagnoses) -> dict[str, dict[str, MatchRate]]:
    """Fraction of cases of each ground-truth variant whose topology matched.

    Variants without any case are left out.
    """
    reports, diagnoses = list(reports), list(diagnoses)
    if len(reports) != len(diagnoses):
        raise ValueError(f"{len(reports)} match reports for {len(diagnoses)} diagnoses")
    out: dict[str, dict[str, MatchRate]] = {"anterior": {}, "posterior": {}}
    for axis, variants in (("anterior", Anterior), ("posterior", Posterior)):
        for variant in variants:
            hits = [
                getattr(r, f"{axis}_matched")
                for r, d in zip(reports, diagnoses)
                if getattr(d, axis) is variant
            ]
            if hits:
                out[axis][variant.value] = MatchRate(sum(hits), len(hits))
    return out
