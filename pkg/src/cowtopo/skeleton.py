"""Topology-preserving 3D thinning.

Border voxels are peeled one face direction at a time (six subiterations per
pass). Within a subiteration the candidates are collected first and then
re-tested one by one before removal, so every deletion is of a simple point
with respect to the current image. A voxel is simple when its foreground
26-neighbours form exactly one 26-component and the background inside its
18-neighbourhood has exactly one 6-component touching one of its faces.
Curve end points (one foreground neighbour) are kept, which keeps the
medial curves of elongated objects instead of shrinking them to points.
"""

from __future__ import annotations

import itertools

import numpy as np
from numba import njit

_OFFSETS = np.array(list(itertools.product((-1, 0, 1), repeat=3)), dtype=np.int64)
_CENTER = 13


def _tables():
    n = len(_OFFSETS)
    cheb = np.abs(_OFFSETS[:, None, :] - _OFFSETS[None, :, :]).max(axis=2)
    manh = np.abs(_OFFSETS[:, None, :] - _OFFSETS[None, :, :]).sum(axis=2)
    in18 = np.abs(_OFFSETS).sum(axis=1) <= 2
    in18[_CENTER] = False
    adj26 = np.full((n, 26), -1, dtype=np.int64)
    adj6 = np.full((n, 6), -1, dtype=np.int64)
    for p in range(n):
        q26 = [q for q in range(n) if q != _CENTER and cheb[p, q] == 1]
        adj26[p, : len(q26)] = q26
        if in18[p]:
            q6 = [q for q in range(n) if in18[q] and manh[p, q] == 1]
            adj6[p, : len(q6)] = q6
    faces = np.array([p for p in range(n) if np.abs(_OFFSETS[p]).sum() == 1], dtype=np.int64)
    return adj26, adj6, faces


_ADJ26, _ADJ6, _FACES = _tables()
_DIRECTIONS = np.array(
    [[0, 1, 0], [0, -1, 0], [1, 0, 0], [-1, 0, 0], [0, 0, 1], [0, 0, -1]], dtype=np.int64
)


@njit(cache=True)
def _neighbourhood(img, i, j, k, offsets, nb):
    count = 0
    for p in range(27):
        v = img[i + offsets[p, 0], j + offsets[p, 1], k + offsets[p, 2]]
        nb[p] = v
        if p != 13 and v:
            count += 1
    return count


@njit(cache=True)
def _is_simple(nb, adj26, adj6, faces, seen, stack):
    # foreground: exactly one 26-component among the 26 neighbours
    seen[:] = 0
    comps = 0
    for p in range(27):
        if p == 13 or nb[p] == 0 or seen[p]:
            continue
        comps += 1
        if comps > 1:
            return False
        seen[p] = 1
        top = 0
        stack[top] = p
        top += 1
        while top:
            top -= 1
            q = stack[top]
            for m in range(26):
                r = adj26[q, m]
                if r < 0:
                    break
                if nb[r] and not seen[r]:
                    seen[r] = 1
                    stack[top] = r
                    top += 1
    if comps != 1:
        return False
    # background: exactly one 6-component in N18 that is 6-adjacent to the centre
    seen[:] = 0
    comps = 0
    for f in range(6):
        p = faces[f]
        if nb[p] or seen[p]:
            continue
        comps += 1
        if comps > 1:
            return False
        seen[p] = 1
        top = 0
        stack[top] = p
        top += 1
        while top:
            top -= 1
            q = stack[top]
            for m in range(6):
                r = adj6[q, m]
                if r < 0:
                    break
                if nb[r] == 0 and not seen[r]:
                    seen[r] = 1
                    stack[top] = r
                    top += 1
    return comps == 1


@njit(cache=True)
def _thin(img, coords, offsets, adj26, adj6, faces, directions):
    """Thin ``img`` (uint8, zero border of width 1) in place."""
    nb = np.zeros(27, dtype=np.uint8)
    seen = np.zeros(27, dtype=np.uint8)
    stack = np.zeros(27, dtype=np.int64)
    n = coords.shape[0]
    candidates = np.empty(n, dtype=np.int64)
    while True:
        removed = 0
        for d in range(6):
            di, dj, dk = directions[d, 0], directions[d, 1], directions[d, 2]
            ncand = 0
            for t in range(n):
                i, j, k = coords[t, 0], coords[t, 1], coords[t, 2]
                if img[i + di, j + dj, k + dk]:
                    continue
                if _neighbourhood(img, i, j, k, offsets, nb) <= 1:
                    continue
                if _is_simple(nb, adj26, adj6, faces, seen, stack):
                    candidates[ncand] = t
                    ncand += 1
            for c in range(ncand):
                t = candidates[c]
                i, j, k = coords[t, 0], coords[t, 1], coords[t, 2]
                if _neighbourhood(img, i, j, k, offsets, nb) <= 1:
                    continue
                if _is_simple(nb, adj26, adj6, faces, seen, stack):
                    img[i, j, k] = 0
                    removed += 1
        if removed == 0:
            break
        # drop deleted voxels from the work list
        m = 0
        for t in range(n):
            if img[coords[t, 0], coords[t, 1], coords[t, 2]]:
                coords[m] = coords[t]
                m += 1
        n = m


def skeletonize(mask) -> np.ndarray:
    """Centerline voxels of a binary 3D mask as a boolean array.

    The result is a subset of ``mask`` with the same number of 26-connected
    components; an empty mask gives an empty skeleton.
    """
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim != 3:
        raise ValueError("skeletonize expects a 3D mask")
    out = np.zeros(mask.shape, dtype=bool)
    idx = np.nonzero(mask)
    if len(idx[0]) == 0:
        return out
    box = tuple(slice(int(i.min()), int(i.max()) + 1) for i in idx)
    work = np.pad(mask[box], 1).astype(np.uint8)
    coords = np.argwhere(work).astype(np.int64)
    _thin(work, coords, _OFFSETS, _ADJ26, _ADJ6, _FACES, _DIRECTIONS)
    out[box] = work[1:-1, 1:-1, 1:-1].astype(bool)
    return out
