"""Synthetic Circle of Willis label volumes with known topology.

Every vessel is a capsule sweep around a piecewise-linear centerline laid
out after the usual textbook schematic, in millimetres relative to the grid
centre (x toward the patient's left, y posterior, z superior). A branch
starts on its parent's centerline, so the parent's tube swallows the
branch's end cap and the two share one junction contact. The parent
keeps the shared voxels. Vessels that are not supposed to touch are
kept at least two background voxels apart; ``generate_phantom`` checks
this on the realised voxels and refuses specs that violate it.
"""

from __future__ import annotations

import itertools
from dataclasses import asdict, dataclass, field, replace
from functools import singledispatch

import numpy as np
from scipy import ndimage

from .labels import CLASS_NAMES, DEFAULT_LABEL_MAP, LabelMap
from .topology import ComponentGraph, Node
from .volume import LabelVolume, RoiBox

RADIUS_RANGE = (0.5, 4.0)

DEFAULT_RADII = {
    "BA": 1.6,
    "R-PCA": 1.1,
    "L-PCA": 1.1,
    "R-ICA": 2.0,
    "L-ICA": 2.0,
    "R-MCA": 1.4,
    "L-MCA": 1.4,
    "R-Pcom": 0.7,
    "L-Pcom": 0.7,
    "Acom": 0.8,
    "R-ACA": 1.1,
    "L-ACA": 1.1,
    "3rd-A2": 0.8,
}

SEGMENT_STATES = ("normal", "hypoplastic", "aplastic")
ACOM_STATES = ("present", "absent", "double")

# Paint order: later classes overwrite earlier ones where tubes overlap.
_PAINT_ORDER = (
    "3rd-A2",
    "Acom",
    "R-Pcom",
    "L-Pcom",
    "R-MCA",
    "L-MCA",
    "R-ACA",
    "L-ACA",
    "R-PCA",
    "L-PCA",
    "R-ICA",
    "L-ICA",
    "BA",
)

# Right-side template (mm); the left side mirrors x.
_T = {
    "ica_base": (-9.0, -2.0, -12.0),
    "pcom_origin": (-9.0, -2.0, -3.0),
    "ica_top": (-9.0, -4.0, 0.0),
    "mca_bend": (-15.0, -4.0, 0.5),
    "mca_end": (-21.0, -3.0, 3.0),
    "a1_bend": (-6.0, -4.5, 0.2),
    "a1a2": (-4.5, -12.0, 1.0),
    "a2_end": (-5.0, -20.0, 5.0),
    "p1p2": (-7.0, 12.0, -1.0),
    "p2_bend": (-13.0, 17.0, 1.0),
    "p2_end": (-18.0, 22.0, 3.0),
}
_BA_BASE = (0.0, 14.0, -14.0)
_BA_TOP = (0.0, 12.0, -2.0)
_THIRD_A2_END = (0.0, -13.0, 10.0)
# free ends that receive the seeded jitter
_FREE = ("ica_base", "mca_end", "a2_end", "p2_end")


@dataclass(frozen=True)
class PhantomSpec:
    """Parametric synthetic CoW.

    ``*_a1`` and ``*_p1`` take ``normal``, ``hypoplastic`` (half radius) or
    ``aplastic`` (segment missing). A fetal side gives the Pcom the calibre
    of its PCA. ``radii`` overrides the per-class defaults in mm.
    """

    dims: tuple[int, int, int] = (128, 128, 128)
    spacing: tuple[float, float, float] = (0.5, 0.5, 0.5)
    acom: str = "present"
    third_a2: bool = False
    r_pcom: bool = True
    l_pcom: bool = True
    r_a1: str = "normal"
    l_a1: str = "normal"
    r_p1: str = "normal"
    l_p1: str = "normal"
    r_fetal: bool = False
    l_fetal: bool = False
    radii: dict = field(default_factory=dict)
    seed: int = 0
    jitter: float = 0.4

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(n) for n in self.dims))
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))
        object.__setattr__(self, "radii", dict(self.radii))
        self.validate()

    def validate(self):
        if len(self.dims) != 3 or min(self.dims) < 1:
            raise ValueError(f"bad dims {self.dims}")
        if len(self.spacing) != 3 or min(self.spacing) <= 0:
            raise ValueError(f"bad spacing {self.spacing}")
        if self.acom not in ACOM_STATES:
            raise ValueError(f"acom must be one of {ACOM_STATES}")
        for name in ("r_a1", "l_a1", "r_p1", "l_p1"):
            if getattr(self, name) not in SEGMENT_STATES:
                raise ValueError(f"{name} must be one of {SEGMENT_STATES}")
        unknown = set(self.radii) - set(CLASS_NAMES)
        if unknown:
            raise ValueError(f"radii for unknown classes {sorted(unknown)}")
        lo, hi = RADIUS_RANGE
        for name, r in self.radius_table().items():
            if not lo <= r <= hi:
                raise ValueError(f"radius of {name} ({r} mm) outside [{lo}, {hi}]")
        if self.jitter < 0:
            raise ValueError("jitter must be non-negative")
        for side in "rl":
            if getattr(self, f"{side}_fetal") and not getattr(self, f"{side}_pcom"):
                raise ValueError(f"fetal {side.upper()}-PCA needs the {side.upper()}-Pcom")
            if getattr(self, f"{side}_p1") == "aplastic" and not getattr(self, f"{side}_pcom"):
                raise ValueError(f"aplastic {side.upper()}-P1 needs the {side.upper()}-Pcom")
            if getattr(self, f"{side}_a1") == "aplastic" and self.acom == "absent":
                raise ValueError(f"aplastic {side.upper()}-A1 needs an Acom")
        if self.third_a2 and self.acom == "absent":
            raise ValueError("a 3rd-A2 arises from the Acom")
        # branch tubes must fit inside their parent at the junction
        r = self.radius_table()
        for side in "RL":
            pcom = self._pcom_radius(side)
            pairs = [
                (f"{side}-MCA", f"{side}-ICA", r[f"{side}-MCA"]),
                (f"{side}-ACA", f"{side}-ICA", r[f"{side}-ACA"]),
                (f"{side}-PCA", "BA", r[f"{side}-PCA"]),
                (f"{side}-Pcom", f"{side}-ICA", pcom),
                (f"{side}-Pcom", f"{side}-PCA", pcom),
                ("Acom", f"{side}-ACA", r["Acom"]),
            ]
            for child, parent, rc in pairs:
                if rc > r[parent]:
                    raise ValueError(f"{child} radius {rc} exceeds its parent {parent} ({r[parent]})")
        if r["3rd-A2"] > r["Acom"]:
            raise ValueError("3rd-A2 radius exceeds the Acom radius")

    def radius_table(self) -> dict[str, float]:
        return {**DEFAULT_RADII, **{k: float(v) for k, v in self.radii.items()}}

    def _pcom_radius(self, side: str) -> float:
        r = self.radius_table()
        if getattr(self, f"{side.lower()}_fetal"):
            return r[f"{side}-PCA"]
        return r[f"{side}-Pcom"]

    def present_classes(self) -> list[str]:
        out = []
        for name in CLASS_NAMES:
            if name == "Acom" and self.acom == "absent":
                continue
            if name == "3rd-A2" and not self.third_a2:
                continue
            if name == "R-Pcom" and not self.r_pcom or name == "L-Pcom" and not self.l_pcom:
                continue
            out.append(name)
        return out

    def to_dict(self) -> dict:
        d = asdict(self)
        d["dims"], d["spacing"] = list(self.dims), list(self.spacing)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PhantomSpec":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown phantom spec keys {sorted(unknown)}")
        return cls(**d)


# ----------------------------------------------------------------------------
# geometry


def _mirror(p):
    return (-p[0], p[1], p[2])


def _segment_radius(base: float, state: str) -> float:
    return max(RADIUS_RANGE[0], 0.5 * base) if state == "hypoplastic" else base


def centerlines(spec: PhantomSpec) -> dict[str, list[tuple[np.ndarray, np.ndarray, float]]]:
    """Per class, the capsule segments ``(start, end, radius)`` in mm."""
    rng = np.random.default_rng(spec.seed)
    r = spec.radius_table()
    segs: dict[str, list] = {}

    def pts(side):
        t = {k: np.array(v if side == "R" else _mirror(v)) for k, v in _T.items()}
        for key in _FREE:
            t[key] = t[key] + rng.uniform(-spec.jitter, spec.jitter, 3)
        return t

    sides = {s: pts(s) for s in "RL"}
    ba_base = np.array(_BA_BASE) + rng.uniform(-spec.jitter, spec.jitter, 3)
    third_end = np.array(_THIRD_A2_END) + rng.uniform(-spec.jitter, spec.jitter, 3)
    ba_top = np.array(_BA_TOP)

    def chain(points, radii):
        return [(a, b, rad) for a, b, rad in zip(points[:-1], points[1:], radii)]

    segs["BA"] = chain([ba_base, ba_top], [r["BA"]])
    for side, t in sides.items():
        low = side.lower()
        segs[f"{side}-ICA"] = chain([t["ica_base"], t["pcom_origin"], t["ica_top"]], [r[f"{side}-ICA"]] * 2)
        segs[f"{side}-MCA"] = chain([t["ica_top"], t["mca_bend"], t["mca_end"]], [r[f"{side}-MCA"]] * 2)

        a1_state = getattr(spec, f"{low}_a1")
        aca = r[f"{side}-ACA"]
        a2 = chain([t["a1a2"], t["a2_end"]], [aca])
        if a1_state == "aplastic":
            segs[f"{side}-ACA"] = a2
        else:
            a1r = _segment_radius(aca, a1_state)
            segs[f"{side}-ACA"] = chain([t["ica_top"], t["a1_bend"], t["a1a2"]], [a1r, a1r]) + a2

        p1_state = getattr(spec, f"{low}_p1")
        pca = r[f"{side}-PCA"]
        p2 = chain([t["p1p2"], t["p2_bend"], t["p2_end"]], [pca, pca])
        if p1_state == "aplastic":
            segs[f"{side}-PCA"] = p2
        else:
            segs[f"{side}-PCA"] = chain([ba_top, t["p1p2"]], [_segment_radius(pca, p1_state)]) + p2

        if getattr(spec, f"{low}_pcom"):
            segs[f"{side}-Pcom"] = chain([t["pcom_origin"], t["p1p2"]], [spec._pcom_radius(side)])

    if spec.acom != "absent":
        jr, jl = sides["R"]["a1a2"], sides["L"]["a1a2"]
        segs["Acom"] = chain([jr, jl], [r["Acom"]])
        if spec.acom == "double":
            kr = 0.5 * (jr + sides["R"]["a2_end"])
            kl = 0.5 * (jl + sides["L"]["a2_end"])
            segs["Acom"] += chain([kr, kl], [r["Acom"]])
        if spec.third_a2:
            segs["3rd-A2"] = chain([0.5 * (jr + jl), third_end], [r["3rd-A2"]])
    return segs


def _grid_center(spec: PhantomSpec) -> np.ndarray:
    return (np.array(spec.dims) - 1) / 2.0 * np.array(spec.spacing)


def _paint_capsule(data: np.ndarray, value: int, a, b, radius: float, spacing, center):
    """Set every voxel whose centre lies within ``radius`` of segment ab."""
    spacing = np.asarray(spacing)
    lo = np.floor((np.minimum(a, b) - radius + center) / spacing).astype(int)
    hi = np.ceil((np.maximum(a, b) + radius + center) / spacing).astype(int) + 1
    lo = np.maximum(lo, 0)
    hi = np.minimum(hi, data.shape)
    if np.any(hi <= lo):
        return
    axes = [np.arange(l, h) * s - c for l, h, s, c in zip(lo, hi, spacing, center)]
    x, y, z = np.meshgrid(*axes, indexing="ij", sparse=True)
    ab = b - a
    denom = float(ab @ ab)
    t = ((x - a[0]) * ab[0] + (y - a[1]) * ab[1] + (z - a[2]) * ab[2]) / denom if denom else 0.0
    t = np.clip(t, 0.0, 1.0)
    d2 = (x - a[0] - t * ab[0]) ** 2 + (y - a[1] - t * ab[1]) ** 2 + (z - a[2] - t * ab[2]) ** 2
    sub = data[lo[0] : hi[0], lo[1] : hi[1], lo[2] : hi[2]]
    sub[d2 <= radius * radius] = value


def expected_graph(spec: PhantomSpec) -> ComponentGraph:
    """Component graph implied by the schematic and the spec's toggles."""
    counts = {name: 1 for name in spec.present_classes()}
    if spec.acom == "double":
        counts["Acom"] = 2
    nodes = [Node(name, i) for name in CLASS_NAMES if name in counts for i in range(counts[name])]
    edges = set()

    def link(a, b, ia=0, ib=0):
        edges.add(frozenset(((a, ia), (b, ib))))

    for side in "RL":
        low = side.lower()
        link(f"{side}-MCA", f"{side}-ICA")
        if getattr(spec, f"{low}_a1") != "aplastic":
            link(f"{side}-ACA", f"{side}-ICA")
        if getattr(spec, f"{low}_p1") != "aplastic":
            link(f"{side}-PCA", "BA")
        if getattr(spec, f"{low}_pcom"):
            link(f"{side}-Pcom", f"{side}-ICA")
            link(f"{side}-Pcom", f"{side}-PCA")
        for i in range(counts.get("Acom", 0)):
            link("Acom", f"{side}-ACA", i)
    if spec.third_a2:
        link("3rd-A2", "Acom")
    return ComponentGraph(nodes, edges)


def _check_separation(data: np.ndarray, graph: ComponentGraph, label_map: LabelMap):
    """Raise if two classes without a schematic edge come within two voxels."""
    allowed = graph.class_edges()
    boxes = ndimage.find_objects(data)
    cube = np.ones((5, 5, 5), dtype=bool)
    for name in graph.counts:
        value = label_map[name]
        box = boxes[value - 1]
        grown = tuple(slice(max(s.start - 2, 0), min(s.stop + 2, n)) for s, n in zip(box, data.shape))
        sub = data[grown]
        near = ndimage.binary_dilation(sub == value, structure=cube)
        for other in np.unique(sub[near]):
            if other in (0, value):
                continue
            other_name = label_map.name(int(other))
            if frozenset((name, other_name)) not in allowed:
                raise ValueError(f"{name} and {other_name} come within two voxels of each other")


def generate_phantom(spec: PhantomSpec, label_map: LabelMap | None = None):
    """Voxelise ``spec``.

    Returns the label volume, a ROI box around all foreground with a
    two-voxel margin, and the expected component graph.
    """
    label_map = label_map or DEFAULT_LABEL_MAP
    segs = centerlines(spec)
    center = _grid_center(spec)
    half = center + 0.5 * np.array(spec.spacing)
    for name, parts in segs.items():
        for a, b, rad in parts:
            if np.any(np.abs(a) + rad > half) or np.any(np.abs(b) + rad > half):
                raise ValueError(f"{name} does not fit in a {spec.dims} grid at spacing {spec.spacing}")

    data = np.zeros(spec.dims, dtype=np.uint8)
    for name in _PAINT_ORDER:
        for a, b, rad in segs.get(name, ()):
            _paint_capsule(data, label_map[name], a, b, rad, spec.spacing, center)
    graph = expected_graph(spec)
    _check_separation(data, graph, label_map)
    vol = LabelVolume(data, spec.spacing)
    roi = RoiBox.around(data, margin=2)
    return vol, roi, graph


def spec_lattice(**overrides) -> list[PhantomSpec]:
    """A set of valid specs covering every variant toggle.

    All anterior configurations are crossed with all Pcom combinations; the
    A1/P1 states and fetal sides are then added on top of representative
    bases.
    """
    specs = []
    anterior = [("present", False), ("present", True), ("absent", False), ("double", False), ("double", True)]
    for (acom, third), r_pcom, l_pcom in itertools.product(anterior, (True, False), (True, False)):
        specs.append(PhantomSpec(acom=acom, third_a2=third, r_pcom=r_pcom, l_pcom=l_pcom, **overrides))
    base = PhantomSpec(**overrides)
    for side in "rl":
        for state in ("hypoplastic", "aplastic"):
            specs.append(replace(base, **{f"{side}_a1": state}))
            specs.append(replace(base, **{f"{side}_p1": state}))
        specs.append(replace(base, **{f"{side}_fetal": True}))
        specs.append(replace(base, **{f"{side}_fetal": True, f"{side}_p1": "aplastic"}))
    specs.append(replace(base, acom="absent", r_pcom=False, l_pcom=False, r_a1="hypoplastic"))
    specs.append(
        replace(base, r_a1="aplastic", l_a1="hypoplastic", third_a2=True, r_fetal=True, r_p1="hypoplastic")
    )
    for i, s in enumerate(specs):
        specs[i] = replace(s, seed=i)
    return specs


# ----------------------------------------------------------------------------
# corruptions


@dataclass(frozen=True)
class Break:
    """Cut a slab ``gap_mm`` thick across the class.

    The slab is perpendicular to the class's principal axis at relative
    ``position`` along it, or, when ``center`` (voxel index) is given,
    perpendicular to the local axis of the voxels around that point.
    """

    cls: str
    gap_mm: float = 1.5
    position: float = 0.5
    center: tuple | None = None


@dataclass(frozen=True)
class DropClass:
    cls: str


@dataclass(frozen=True)
class FloatingBlob:
    """Ball of the class, centred ``offset_mm`` from the class centroid.

    Only background voxels are painted.
    """

    cls: str
    radius_mm: float = 1.0
    offset_mm: tuple = (0.0, 0.0, 0.0)


@dataclass(frozen=True)
class CrossoverSwap:
    cls_a: str
    cls_b: str
    region: RoiBox


@dataclass(frozen=True)
class DilateErode:
    """Grow (positive ``steps``) into background or shrink the class."""

    cls: str
    steps: int


def _coords_mm(idx, spacing):
    return np.stack(idx, axis=1) * np.asarray(spacing)


def _principal_axis(points: np.ndarray) -> np.ndarray:
    centred = points - points.mean(axis=0)
    _, _, vt = np.linalg.svd(centred, full_matrices=False)
    return vt[0]


def apply_corruption(vol: LabelVolume, corruption, label_map: LabelMap | None = None) -> LabelVolume:
    """Return a corrupted copy of ``vol``; the input is left untouched."""
    return _apply(corruption, vol, label_map or DEFAULT_LABEL_MAP)


@singledispatch
def _apply(corruption, vol, label_map):
    raise TypeError(f"unknown corruption {corruption!r}")


@_apply.register
def _(c: Break, vol, label_map):
    value = label_map[c.cls]
    data = vol.data.copy()
    idx = np.nonzero(data == value)
    if len(idx[0]) == 0:
        raise ValueError(f"{c.cls} not present")
    pts = _coords_mm(idx, vol.spacing)
    if c.center is not None:
        centre = np.asarray(c.center, dtype=float) * np.asarray(vol.spacing)
        if np.any(np.asarray(c.center) < 0) or np.any(np.asarray(c.center) >= vol.dims):
            raise ValueError(f"break centre {c.center} outside the volume")
        reach = max(3.0 * c.gap_mm, 3.0)
        local = np.linalg.norm(pts - centre, axis=1) <= reach
        if local.sum() < 2:
            raise ValueError(f"no {c.cls} voxels near {c.center}")
        axis = _principal_axis(pts[local])
        cut = local & (np.abs((pts - centre) @ axis) <= c.gap_mm / 2)
    else:
        axis = _principal_axis(pts)
        proj = pts @ axis
        t0 = proj.min() + c.position * (proj.max() - proj.min())
        cut = np.abs(proj - t0) <= c.gap_mm / 2
    data[tuple(i[cut] for i in idx)] = 0
    return vol.replace(data)


@_apply.register
def _(c: DropClass, vol, label_map):
    data = vol.data.copy()
    data[data == label_map[c.cls]] = 0
    return vol.replace(data)


@_apply.register
def _(c: FloatingBlob, vol, label_map):
    value = label_map[c.cls]
    idx = np.nonzero(vol.data == value)
    if len(idx[0]) == 0:
        raise ValueError(f"{c.cls} not present")
    spacing = np.asarray(vol.spacing)
    centre = _coords_mm(idx, spacing).mean(axis=0) + np.asarray(c.offset_mm, dtype=float)
    extent = np.asarray(vol.dims) * spacing
    if np.any(centre < 0) or np.any(centre >= extent):
        raise ValueError(f"blob centre {centre.round(2)} mm lies outside the volume")
    data = vol.data.copy()
    ball = np.zeros(vol.dims, dtype=np.uint8)
    _paint_capsule(ball, 1, centre, centre, c.radius_mm, spacing, np.zeros(3))
    data[(ball == 1) & (data == 0)] = value
    return vol.replace(data)


@_apply.register
def _(c: CrossoverSwap, vol, label_map):
    if not c.region.fits(vol.dims):
        raise ValueError(f"swap region {c.region} exceeds volume dims {vol.dims}")
    a, b = label_map[c.cls_a], label_map[c.cls_b]
    data = vol.data.copy()
    sub = data[c.region.slices]
    is_a, is_b = sub == a, sub == b
    sub[is_a] = b
    sub[is_b] = a
    return vol.replace(data)


@_apply.register
def _(c: DilateErode, vol, label_map):
    value = label_map[c.cls]
    data = vol.data.copy()
    mask = data == value
    if c.steps > 0:
        grown = ndimage.binary_dilation(mask, iterations=c.steps)
        data[grown & (data == 0)] = value
    elif c.steps < 0:
        kept = ndimage.binary_erosion(mask, iterations=-c.steps)
        data[mask & ~kept] = 0
    return vol.replace(data)


def corruption_to_dict(c) -> dict:
    d = {"kind": type(c).__name__}
    for key, value in asdict(c).items():
        d[key] = value
    if isinstance(c, CrossoverSwap):
        d["region"] = {"min": list(c.region.min_corner), "size": list(c.region.size)}
    return d


_KINDS = {k.__name__: k for k in (Break, DropClass, FloatingBlob, CrossoverSwap, DilateErode)}


def corruption_from_dict(d: dict):
    d = dict(d)
    kind = _KINDS.get(d.pop("kind", None))
    if kind is None:
        raise ValueError(f"unknown corruption kind; expected one of {sorted(_KINDS)}")
    if kind is CrossoverSwap:
        d["region"] = RoiBox(tuple(d["region"]["min"]), tuple(d["region"]["size"]))
    for key in ("center", "offset_mm"):
        if d.get(key) is not None:
            d[key] = tuple(d[key])
    return kind(**d)
