"""Minimal NIfTI-1 codec for scalar 3D label and intensity volumes.

Only single-file images (``n+1``) and header/image pairs with the ``ni1``
magic are understood, and only integer datatypes that convert losslessly to
the in-memory representation. The reader returns the voxel array with the
axes of the file plus the world affine (RAS+, as in the format definition);
reorientation is the caller's job.
"""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

HEADER_SIZE = 348
_GZIP_MAGIC = b"\x1f\x8b"

# NIfTI datatype code -> numpy kind/size (byte order applied later)
DATATYPES = {
    2: "u1",
    4: "i2",
    8: "i4",
    256: "i1",
    512: "u2",
    768: "u4",
}
CODES = {np.dtype(v).str[1:]: k for k, v in DATATYPES.items()}

MAX_VOXELS = 2**34


class NiftiError(ValueError):
    pass


@dataclass
class NiftiImage:
    data: np.ndarray  # shape (nx, ny, nz), axes as stored
    pixdim: tuple[float, float, float]
    affine: np.ndarray  # 4x4, voxel index -> RAS+ mm
    datatype: int


def _float32_value(x) -> float:
    # shortest decimal that round-trips through float32, so 0.3 stays 0.3
    return float(str(np.float32(x)))


def _quaternion_affine(b, c, d, qfac, pixdim, offset):
    a = 1.0 - (b * b + c * c + d * d)
    a = np.sqrt(a) if a > 0 else 0.0
    rot = np.array(
        [
            [a * a + b * b - c * c - d * d, 2 * (b * c - a * d), 2 * (b * d + a * c)],
            [2 * (b * c + a * d), a * a + c * c - b * b - d * d, 2 * (c * d - a * b)],
            [2 * (b * d - a * c), 2 * (c * d + a * b), a * a + d * d - c * c - b * b],
        ]
    )
    scale = np.array([pixdim[0], pixdim[1], pixdim[2] * qfac])
    affine = np.eye(4)
    affine[:3, :3] = rot * scale
    affine[:3, 3] = offset
    return affine


def read_bytes(path: str | Path) -> bytes:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:2] == _GZIP_MAGIC:
        raw = gzip.decompress(raw)
    return raw


def decode(raw: bytes, image_raw: bytes | None = None) -> NiftiImage:
    """Decode a NIfTI-1 header and payload.

    ``image_raw`` carries the ``.img`` contents for two-file images.
    """
    if len(raw) < HEADER_SIZE:
        raise NiftiError("file shorter than a NIfTI-1 header")
    for endian in "<>":
        if struct.unpack(endian + "i", raw[:4])[0] == HEADER_SIZE:
            break
    else:
        raise NiftiError("sizeof_hdr is not 348 in either byte order")

    magic = raw[344:348]
    if magic not in (b"n+1\x00", b"ni1\x00"):
        raise NiftiError(f"bad NIfTI-1 magic {magic!r}")
    single_file = magic == b"n+1\x00"

    dim = struct.unpack(endian + "8h", raw[40:56])
    datatype, bitpix = struct.unpack(endian + "2h", raw[70:74])
    pixdim = struct.unpack(endian + "8f", raw[76:108])
    vox_offset = struct.unpack(endian + "f", raw[108:112])[0]
    scl_slope, scl_inter = struct.unpack(endian + "2f", raw[112:120])
    qform_code, sform_code = struct.unpack(endian + "2h", raw[252:256])
    quatern = struct.unpack(endian + "6f", raw[256:280])
    srows = struct.unpack(endian + "12f", raw[280:328])

    ndim = dim[0]
    if not 1 <= ndim <= 7:
        raise NiftiError(f"invalid dim[0] = {ndim}")
    shape = [dim[i] if i <= ndim else 1 for i in range(1, 8)]
    if any(n < 1 for n in shape):
        raise NiftiError(f"non-positive dimension in {shape[:ndim]}")
    if any(n != 1 for n in shape[3:]):
        raise NiftiError("only scalar single-timepoint 3D volumes are supported")
    nx, ny, nz = shape[:3]
    count = nx * ny * nz
    if count > MAX_VOXELS:
        raise NiftiError(f"dimension product {count} too large")

    if datatype not in DATATYPES:
        raise NiftiError(f"unsupported NIfTI datatype code {datatype}")
    dtype = np.dtype(endian + DATATYPES[datatype])
    if bitpix and bitpix != dtype.itemsize * 8:
        raise NiftiError(f"bitpix {bitpix} inconsistent with datatype {datatype}")
    unscaled = np.isnan(scl_slope) or scl_slope == 0.0 or (scl_slope == 1.0 and not scl_inter)
    if not unscaled:
        raise NiftiError("intensity scaling (scl_slope/scl_inter) is not supported")

    offset = int(vox_offset)
    if single_file:
        if offset < HEADER_SIZE:
            raise NiftiError(f"vox_offset {vox_offset} inside the header")
        payload = raw
    else:
        if image_raw is None:
            raise NiftiError("two-file image needs its .img payload")
        payload = image_raw
    nbytes = count * dtype.itemsize
    if len(payload) < offset + nbytes:
        raise NiftiError(
            f"payload truncated: need {nbytes} bytes at offset {offset}, have {len(payload) - offset}"
        )
    data = np.frombuffer(payload, dtype=dtype, count=count, offset=offset)
    data = data.reshape((nx, ny, nz), order="F")

    spacing = tuple(abs(_float32_value(p)) for p in pixdim[1:4])
    if sform_code > 0:
        affine = np.eye(4)
        affine[:3, :] = np.array(srows, dtype=float).reshape(3, 4)
    elif qform_code > 0:
        qfac = -1.0 if pixdim[0] < 0 else 1.0
        affine = _quaternion_affine(*quatern[:3], qfac, spacing, quatern[3:])
    else:
        affine = np.diag([*spacing, 1.0])
    return NiftiImage(data, spacing, affine, datatype)


def read(path: str | Path) -> NiftiImage:
    path = Path(path)
    raw = read_bytes(path)
    image_raw = None
    if raw[344:348] == b"ni1\x00":
        name = path.name
        for suffix in (".hdr.gz", ".hdr"):
            if name.endswith(suffix):
                stem = name[: -len(suffix)]
                break
        else:
            raise NiftiError("ni1 magic but the file is not a .hdr")
        for suffix in (".img", ".img.gz"):
            candidate = path.with_name(stem + suffix)
            if candidate.exists():
                image_raw = read_bytes(candidate)
                break
        else:
            raise NiftiError(f"missing image file for {path}")
    return decode(raw, image_raw)


def encode(data: np.ndarray, spacing, affine: np.ndarray, description: str = "cowtopo") -> bytes:
    """Encode a 3D array as a single-file NIfTI-1 image (little endian)."""
    data = np.asarray(data)
    if data.ndim != 3:
        raise NiftiError("only 3D arrays can be written")
    key = data.dtype.str[1:]
    if key not in CODES:
        raise NiftiError(f"unsupported dtype {data.dtype}")
    datatype = CODES[key]
    le = data.dtype.newbyteorder("<")

    header = bytearray(HEADER_SIZE)
    struct.pack_into("<i", header, 0, HEADER_SIZE)
    struct.pack_into("<8h", header, 40, 3, *data.shape, 1, 1, 1, 1)
    struct.pack_into("<2h", header, 70, datatype, le.itemsize * 8)
    struct.pack_into("<8f", header, 76, 1.0, *spacing, 1.0, 1.0, 1.0, 1.0)
    struct.pack_into("<f", header, 108, 352.0)
    struct.pack_into("<2f", header, 112, 1.0, 0.0)
    header[123] = 2 | 8  # mm, seconds
    desc = description.encode("ascii", "replace")[:79]
    header[148 : 148 + len(desc)] = desc

    rot = affine[:3, :3] / np.asarray(spacing, dtype=float)
    quat = _rotation_to_quaternion(rot)
    if quat is None:
        qform_code, quat, qfac = 0, (0.0, 0.0, 0.0), 1.0
    else:
        qform_code, (quat, qfac) = 1, quat
    struct.pack_into("<f", header, 76, qfac)
    struct.pack_into("<2h", header, 252, qform_code, 1)
    struct.pack_into("<6f", header, 256, *quat, *affine[:3, 3])
    struct.pack_into("<12f", header, 280, *affine[:3, :].ravel())
    header[344:348] = b"n+1\x00"

    payload = data.astype(le, copy=False).tobytes(order="F")
    return bytes(header) + b"\x00" * 4 + payload


def _rotation_to_quaternion(rot: np.ndarray):
    """Return ((b, c, d), qfac) for an orthonormal matrix, or None if not one."""
    if not np.allclose(rot @ rot.T, np.eye(3), atol=1e-4):
        return None
    qfac = 1.0
    if np.linalg.det(rot) < 0:
        qfac = -1.0
        rot = rot.copy()
        rot[:, 2] *= -1
    trace = rot[0, 0] + rot[1, 1] + rot[2, 2] + 1.0
    if trace > 0.5:
        a = 0.5 * np.sqrt(trace)
        b = 0.25 * (rot[2, 1] - rot[1, 2]) / a
        c = 0.25 * (rot[0, 2] - rot[2, 0]) / a
        d = 0.25 * (rot[1, 0] - rot[0, 1]) / a
    else:
        xd = 1.0 + rot[0, 0] - (rot[1, 1] + rot[2, 2])
        yd = 1.0 + rot[1, 1] - (rot[0, 0] + rot[2, 2])
        zd = 1.0 + rot[2, 2] - (rot[0, 0] + rot[1, 1])
        if xd > 1.0:
            b = 0.5 * np.sqrt(xd)
            c = 0.25 * (rot[0, 1] + rot[1, 0]) / b
            d = 0.25 * (rot[0, 2] + rot[2, 0]) / b
            a = 0.25 * (rot[2, 1] - rot[1, 2]) / b
        elif yd > 1.0:
            c = 0.5 * np.sqrt(yd)
            b = 0.25 * (rot[0, 1] + rot[1, 0]) / c
            d = 0.25 * (rot[1, 2] + rot[2, 1]) / c
            a = 0.25 * (rot[0, 2] - rot[2, 0]) / c
        else:
            d = 0.5 * np.sqrt(zd)
            b = 0.25 * (rot[0, 2] + rot[2, 0]) / d
            c = 0.25 * (rot[1, 2] + rot[2, 1]) / d
            a = 0.25 * (rot[1, 0] - rot[0, 1]) / d
        if a < 0:
            b, c, d = -b, -c, -d
    return (float(b), float(c), float(d)), qfac


def write(path: str | Path, blob: bytes) -> None:
    path = Path(path)
    if path.name.endswith(".gz"):
        blob = gzip.compress(blob, compresslevel=6, mtime=0)
    with open(path, "wb") as fh:
        fh.write(blob)
