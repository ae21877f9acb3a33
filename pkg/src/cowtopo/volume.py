"""Label and intensity volumes, ROI boxes and their on-disk forms."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import ClassVar

import numpy as np

from . import nifti
from .labels import LabelMap

CANONICAL = "LPS"
# RAS+ world axis letters for a positive / negative direction
_POS, _NEG = "RAS", "LPI"


class Volume:
    """A 3D voxel grid in canonical LPS+ axes.

    ``data`` is indexed ``[x, y, z]``. Instances are immutable: the array is
    exposed as a read-only view and every operation returns a new volume.
    """

    dtype: ClassVar[np.dtype]
    kind: ClassVar[str]

    def __init__(self, data, spacing=(1.0, 1.0, 1.0), origin=(0.0, 0.0, 0.0), orientation=CANONICAL):
        arr = np.asarray(data)
        if arr.ndim != 3:
            raise ValueError(f"volume data must be 3D, got shape {arr.shape}")
        if arr.dtype != self.dtype:
            cast = arr.astype(self.dtype)
            if not np.array_equal(cast, arr):
                raise ValueError(f"values do not fit {self.dtype}")
            arr = cast
        arr = arr.view()
        arr.flags.writeable = False
        spacing = tuple(float(s) for s in spacing)
        if len(spacing) != 3 or not all(s > 0 for s in spacing):
            raise ValueError(f"spacing must be three positive values, got {spacing}")
        self.data = arr
        self.spacing = spacing
        self.origin = tuple(float(o) for o in origin)
        self.orientation = orientation

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(int(n) for n in self.data.shape)

    def replace(self, data) -> "Volume":
        return type(self)(data, self.spacing, self.origin, self.orientation)

    @property
    def affine(self) -> np.ndarray:
        """Voxel index -> RAS+ world (mm) for the canonical LPS+ axes."""
        aff = np.diag([-self.spacing[0], -self.spacing[1], self.spacing[2], 1.0])
        aff[:3, 3] = self.origin
        return aff

    def __eq__(self, other):
        if type(other) is not type(self):
            return NotImplemented
        return (
            self.dims == other.dims
            and self.spacing == other.spacing
            and np.array_equal(self.data, other.data)
        )

    __hash__ = None

    def __repr__(self):
        return f"{type(self).__name__}(dims={self.dims}, spacing={self.spacing})"


class LabelVolume(Volume):
    dtype = np.dtype(np.uint8)
    kind = "label"

    def check_labels(self, label_map: LabelMap) -> None:
        """Raise ``ValueError`` when a voxel holds a value outside the map."""
        present = np.flatnonzero(np.bincount(self.data.ravel(), minlength=256))
        unknown = sorted(set(int(v) for v in present) - set(label_map.entries) - {0})
        if unknown:
            raise ValueError(f"label values {unknown} are not in the label map")


class IntensityVolume(Volume):
    dtype = np.dtype(np.int16)
    kind = "intensity"


@dataclass(frozen=True)
class RoiBox:
    min_corner: tuple[int, int, int]
    size: tuple[int, int, int]

    def __post_init__(self):
        object.__setattr__(self, "min_corner", tuple(int(v) for v in self.min_corner))
        object.__setattr__(self, "size", tuple(int(v) for v in self.size))
        if len(self.min_corner) != 3 or len(self.size) != 3:
            raise ValueError("ROI needs three coordinates")
        if min(self.min_corner) < 0:
            raise ValueError(f"negative ROI corner {self.min_corner}")
        if min(self.size) < 1:
            raise ValueError(f"empty ROI size {self.size}")

    @classmethod
    def whole(cls, dims) -> "RoiBox":
        return cls((0, 0, 0), tuple(dims))

    @classmethod
    def around(cls, mask: np.ndarray, margin: int = 0) -> "RoiBox":
        """Bounding box of the non-zero voxels, grown by ``margin`` and clipped."""
        idx = np.nonzero(mask)
        if len(idx[0]) == 0:
            raise ValueError("cannot bound an empty mask")
        lo = [max(int(i.min()) - margin, 0) for i in idx]
        hi = [min(int(i.max()) + 1 + margin, n) for i, n in zip(idx, mask.shape)]
        return cls(tuple(lo), tuple(h - l for l, h in zip(lo, hi)))

    @property
    def max_corner(self) -> tuple[int, int, int]:
        return tuple(m + s for m, s in zip(self.min_corner, self.size))

    @property
    def slices(self) -> tuple[slice, slice, slice]:
        return tuple(slice(m, m + s) for m, s in zip(self.min_corner, self.size))

    def fits(self, dims) -> bool:
        return all(hi <= n for hi, n in zip(self.max_corner, dims))

    def to_record(self, case_id: str) -> dict:
        return {"case": case_id, "min": list(self.min_corner), "size": list(self.size)}


# ----------------------------------------------------------------------------
# file I/O


def _axis_codes(affine: np.ndarray) -> list[tuple[int, int]]:
    """(world axis, sign) of the dominant direction of each voxel axis."""
    codes = []
    for col in affine[:3, :3].T:
        axis = int(np.argmax(np.abs(col)))
        codes.append((axis, 1 if col[axis] >= 0 else -1))
    return codes


def axis_code_string(affine: np.ndarray) -> str:
    return "".join((_POS if sign > 0 else _NEG)[axis] for axis, sign in _axis_codes(affine))


def _to_canonical(data: np.ndarray, affine: np.ndarray, pixdim):
    codes = _axis_codes(affine)
    if len({axis for axis, _ in codes}) != 3:
        raise nifti.NiftiError(f"degenerate orientation {axis_code_string(affine)}")
    # canonical LPS+ in RAS world: x negative, y negative, z positive
    target = (-1, -1, 1)
    perm = [next(i for i, (axis, _) in enumerate(codes) if axis == w) for w in range(3)]
    flips = [codes[perm[w]][1] != target[w] for w in range(3)]
    if perm == [0, 1, 2] and not any(flips):
        return data, affine, tuple(pixdim)

    # new index -> old index, as a 4x4 transform
    shape = data.shape
    transform = np.zeros((4, 4))
    transform[3, 3] = 1.0
    for new_axis, old_axis in enumerate(perm):
        if flips[new_axis]:
            transform[old_axis, new_axis] = -1.0
            transform[old_axis, 3] = shape[old_axis] - 1
        else:
            transform[old_axis, new_axis] = 1.0
    out = np.transpose(data, perm)
    out = out[tuple(slice(None, None, -1) if f else slice(None) for f in flips)]
    return out, affine @ transform, tuple(pixdim[p] for p in perm)


def read_volume(path: str | Path, kind: str = "label") -> Volume:
    """Load a NIfTI-1 file as a label or intensity volume in LPS+ axes.

    Label volumes accept any integer datatype whose values lie in 0..255;
    intensity volumes accept int8, uint8 and int16 (lossless into int16).

    Raises
    ------
    FileNotFoundError
        If ``path`` does not exist.
    NiftiError
        For a malformed header or an unsupported datatype.
    """
    if kind not in ("label", "intensity"):
        raise ValueError(f"kind must be 'label' or 'intensity', not {kind!r}")
    img = nifti.read(path)
    data = img.data
    if kind == "label":
        if data.dtype.kind not in "iu":
            raise nifti.NiftiError(f"label volume with non-integer datatype {data.dtype}")
        if data.dtype.itemsize > 1 or data.dtype.kind == "i":
            lo, hi = (int(data.min()), int(data.max())) if data.size else (0, 0)
            if lo < 0 or hi > 255:
                raise nifti.NiftiError(f"label values {lo}..{hi} do not fit 8-bit unsigned")
            data = data.astype(np.uint8)
        cls = LabelVolume
    else:
        if data.dtype.itemsize > 2 or data.dtype.str[1:] == "u2":
            raise nifti.NiftiError(f"intensity datatype {data.dtype} does not widen to int16")
        data = data.astype(np.int16, copy=False) if data.dtype.itemsize < 2 else data
        cls = IntensityVolume
    if not data.dtype.isnative:
        data = data.astype(data.dtype.newbyteorder("="))
    data, affine, spacing = _to_canonical(data, img.affine, img.pixdim)
    return cls(data, spacing, tuple(affine[:3, 3]))


def write_volume(vol: Volume, path: str | Path) -> None:
    """Write ``vol`` as single-file NIfTI-1; a ``.gz`` suffix gzips it."""
    nifti.write(path, nifti.encode(vol.data, vol.spacing, vol.affine))


# ----------------------------------------------------------------------------
# voxel operations


def crop_to_roi(vol: Volume, roi: RoiBox) -> Volume:
    if not roi.fits(vol.dims):
        raise ValueError(f"ROI {roi.min_corner}+{roi.size} exceeds volume dims {vol.dims}")
    origin = vol.affine @ np.array([*roi.min_corner, 1.0])
    return type(vol)(np.ascontiguousarray(vol.data[roi.slices]), vol.spacing, tuple(origin[:3]))


def merge_to_binary(vol: LabelVolume) -> LabelVolume:
    return vol.replace((vol.data != 0).view(np.uint8))


def read_roi_file(path: str | Path) -> dict[str, RoiBox]:
    """Read ROI boxes, one JSON record per line: ``{"case", "min", "size"}``."""
    boxes = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            try:
                rec = json.loads(line)
                boxes[str(rec["case"])] = RoiBox(tuple(rec["min"]), tuple(rec["size"]))
            except (KeyError, TypeError, json.JSONDecodeError) as exc:
                raise ValueError(f"{path}:{lineno}: malformed ROI record ({exc})") from None
    return boxes


def write_roi_file(path: str | Path, boxes: dict[str, RoiBox]) -> None:
    with open(path, "w") as fh:
        for case_id in sorted(boxes):
            fh.write(json.dumps(boxes[case_id].to_record(case_id)) + "\n")
