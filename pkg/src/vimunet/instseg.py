"""Targets and watershed post-processing for the two instance pipelines.

Pipeline (i) predicts foreground and boundary probabilities; pipeline (ii)
predicts foreground plus center- and boundary-distance maps.  Both are turned
back into instance label images by a seeded priority flood.

Label images are integer arrays, 0 = background.  Connectivity is 4
everywhere.  Pixels outside the image count as background for distance
computations.
"""

from __future__ import annotations

import heapq
import os
from pathlib import Path

import numpy as np
from scipy import ndimage

__all__ = [
    "connected_components",
    "distance_transform",
    "make_targets_boundary",
    "make_targets_distance",
    "watershed_from_boundary",
    "watershed_from_distance",
    "priority_flood",
    "remove_small",
    "relabel_sequential",
    "write_pgm",
    "read_pgm",
    "BOUNDARY_SEED_THRESHOLD",
    "DISTANCE_SEED_THRESHOLD",
    "MIN_SIZE",
]

FG_THRESHOLD = 0.5
BOUNDARY_SEED_THRESHOLD = 0.5
DISTANCE_SEED_THRESHOLD = 0.4
MIN_SIZE = 5

_FOUR = ndimage.generate_binary_structure(2, 1)


def connected_components(mask: np.ndarray) -> np.ndarray:
    """4-connected labeling; labels 1..n in raster order of each component's first pixel."""
    labels, _ = ndimage.label(np.asarray(mask, dtype=bool), structure=_FOUR)
    return labels.astype(np.int32, copy=False)


# ---------------------------------------------------------------------------
# exact Euclidean distance transform (Felzenszwalb & Huttenlocher lower envelope)


def _envelope_1d(f: np.ndarray) -> np.ndarray:
    """Squared distance transform of a sampled function: min_q (p - q)^2 + f[q].

    ``f`` must be finite; with integer inputs every output is an exact integer.
    """
    n = f.shape[0]
    d = np.empty(n)
    v = np.zeros(n, dtype=np.int64)
    z = np.empty(n + 1)
    k = 0
    z[0], z[1] = -np.inf, np.inf
    for q in range(1, n):
        fq = f[q] + q * q
        s = (fq - (f[v[k]] + v[k] * v[k])) / (2.0 * (q - v[k]))
        while s <= z[k]:
            k -= 1
            s = (fq - (f[v[k]] + v[k] * v[k])) / (2.0 * (q - v[k]))
        k += 1
        v[k] = q
        z[k] = s
        z[k + 1] = np.inf
    k = 0
    for p in range(n):
        while z[k + 1] < p:
            k += 1
        diff = p - v[k]
        d[p] = diff * diff + f[v[k]]
    return d


def squared_distance_transform(mask: np.ndarray) -> np.ndarray:
    """Exact squared distance from each foreground pixel to the nearest background pixel."""
    fg = np.pad(np.asarray(mask, dtype=bool), 1)  # out-of-image frame is background
    h, w = fg.shape
    # columns: two vectorized sweeps; the frame keeps every run finite
    up = np.zeros((h, w))
    for i in range(1, h):
        up[i] = np.where(fg[i], up[i - 1] + 1, 0.0)
    down = np.zeros((h, w))
    for i in range(h - 2, -1, -1):
        down[i] = np.where(fg[i], down[i + 1] + 1, 0.0)
    col = np.minimum(up, down) ** 2
    # rows: lower envelope of parabolas
    out = np.zeros_like(col)
    for i in np.flatnonzero(fg.any(axis=1)).tolist():
        out[i] = _envelope_1d(col[i])
    return out[1:-1, 1:-1]


def distance_transform(mask: np.ndarray) -> np.ndarray:
    """Exact Euclidean distance to the nearest background pixel; 0 on background."""
    return np.sqrt(squared_distance_transform(mask))


# ---------------------------------------------------------------------------
# targets


def _boundary_pixels(labels: np.ndarray) -> np.ndarray:
    diff = np.zeros(labels.shape, dtype=bool)
    dv = labels[1:] != labels[:-1]
    dh = labels[:, 1:] != labels[:, :-1]
    diff[1:] |= dv
    diff[:-1] |= dv
    diff[:, 1:] |= dh
    diff[:, :-1] |= dh
    return diff & (labels > 0)


def make_targets_boundary(gt: np.ndarray) -> np.ndarray:
    """[2, H, W] float32: foreground, one-pixel boundary on each side of every label change."""
    gt = np.asarray(gt)
    fg = gt > 0
    return np.stack([fg, _boundary_pixels(gt)]).astype(np.float32)


def _bboxes(labels: np.ndarray) -> dict[int, tuple[slice, slice]]:
    return {i + 1: sl for i, sl in enumerate(ndimage.find_objects(labels)) if sl is not None}


def make_targets_distance(gt: np.ndarray) -> np.ndarray:
    """[3, H, W] float32: foreground, center distance, boundary distance.

    Per instance both distances are normalized by their instance maximum.
    The center channel is inverted (1 at the centroid, 0 at the farthest
    pixel); the boundary channel is 1 deepest inside the instance.
    """
    gt = np.asarray(gt)
    h, w = gt.shape
    center = np.zeros((h, w))
    boundary = np.zeros((h, w))
    labels = gt.astype(np.int64)
    for lab, (rs, cs) in _bboxes(labels).items():
        # one-pixel margin so the crop keeps the true neighbours; image edge stays background
        r0, r1 = max(rs.start - 1, 0), min(rs.stop + 1, h)
        c0, c1 = max(cs.start - 1, 0), min(cs.stop + 1, w)
        own = labels[r0:r1, c0:c1] == lab
        rr, cc = np.nonzero(own)
        dt = distance_transform(own)
        peak = dt.max()
        boundary[r0:r1, c0:c1][own] = dt[own] / peak
        cy, cx = rr.mean(), cc.mean()
        dc = np.hypot(rr - cy, cc - cx)
        far = dc.max()
        center[r0 + rr, c0 + cc] = 1.0 - dc / far if far > 0 else 1.0
    return np.stack([gt > 0, center, boundary]).astype(np.float32)


# ---------------------------------------------------------------------------
# watershed


def priority_flood(elevation: np.ndarray, seeds: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Grow labeled ``seeds`` over ``mask`` in increasing elevation.

    Queue order is (elevation, insertion counter); seed pixels are inserted in
    raster order, so results are fully deterministic.  A pixel takes the label
    of whichever basin first reaches it; masked pixels no seed can reach stay 0.
    """
    h, w = elevation.shape
    seeded = np.where(mask, seeds, 0).astype(np.int32)
    elev = elevation.ravel().tolist()
    flat = seeded.ravel().tolist()
    open_ = bytearray((np.asarray(mask, dtype=bool) & (seeded == 0)).ravel().tobytes())
    heap = [(elev[idx], n, idx) for n, idx in enumerate(np.flatnonzero(seeded).tolist())]
    counter = len(heap)
    heapq.heapify(heap)
    pop, push = heapq.heappop, heapq.heappush
    last = h * w - w
    while heap:
        _, _, idx = pop(heap)
        lab = flat[idx]
        c = idx % w
        for nb, ok in ((idx - w, idx >= w), (idx - 1, c > 0), (idx + 1, c < w - 1),
                       (idx + w, idx < last)):
            if ok and open_[nb]:
                open_[nb] = 0
                flat[nb] = lab
                push(heap, (elev[nb], counter, nb))
                counter += 1
    return np.asarray(flat, dtype=np.int32).reshape(h, w)


def relabel_sequential(labels: np.ndarray) -> np.ndarray:
    """Map labels to 1..n preserving their numeric order."""
    ids = np.unique(labels)
    ids = ids[ids > 0]
    lut = np.zeros(int(labels.max(initial=0)) + 1, dtype=np.int32)
    lut[ids] = np.arange(1, ids.size + 1, dtype=np.int32)
    return lut[labels]


def remove_small(labels: np.ndarray, min_size: int = MIN_SIZE) -> np.ndarray:
    if min_size <= 1 or not labels.any():
        return labels
    sizes = np.bincount(labels.ravel())
    small = sizes < min_size
    small[0] = False
    out = labels.copy()
    out[small[labels]] = 0
    return relabel_sequential(out)


def watershed_from_boundary(fg: np.ndarray, bnd: np.ndarray, fg_threshold: float = FG_THRESHOLD,
                            seed_threshold: float = BOUNDARY_SEED_THRESHOLD,
                            min_size: int = MIN_SIZE) -> np.ndarray:
    """Seeds are low-boundary foreground components; flood over the boundary map."""
    mask = np.asarray(fg) > fg_threshold
    seeds = connected_components(mask & (np.asarray(bnd) < seed_threshold))
    labels = priority_flood(np.asarray(bnd, dtype=np.float64), seeds, mask)
    return remove_small(labels, min_size)


def watershed_from_distance(fg: np.ndarray, center_dist: np.ndarray, boundary_dist: np.ndarray,
                            fg_threshold: float = FG_THRESHOLD,
                            seed_threshold: float = DISTANCE_SEED_THRESHOLD,
                            min_size: int = MIN_SIZE) -> np.ndarray:
    """Seeds are components that are both near a center and deep inside an instance.

    Requiring depth as well keeps seeds of two touching instances apart: along a
    shared border the center map can stay high, the boundary map cannot.  The
    flood runs over 1 - boundary distance.
    """
    mask = np.asarray(fg) > fg_threshold
    core = (np.asarray(center_dist) > seed_threshold) & (np.asarray(boundary_dist) > seed_threshold)
    seeds = connected_components(mask & core)
    elevation = 1.0 - np.asarray(boundary_dist, dtype=np.float64)
    labels = priority_flood(elevation, seeds, mask)
    return remove_small(labels, min_size)


# ---------------------------------------------------------------------------
# label image I/O: binary PGM, maxval 65535, big-endian samples


def write_pgm(path: str | os.PathLike, labels: np.ndarray) -> None:
    labels = np.asarray(labels)
    if labels.ndim != 2:
        raise ValueError(f"write_pgm: expected a 2D label image, got shape {labels.shape}")
    if labels.min(initial=0) < 0 or labels.max(initial=0) > 65535:
        raise ValueError("write_pgm: labels must lie in [0, 65535]")
    h, w = labels.shape
    body = labels.astype(">u2").tobytes()
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(b"P5\n%d %d\n65535\n" % (w, h) + body)
    os.replace(tmp, path)


def read_pgm(path: str | os.PathLike) -> np.ndarray:
    data = Path(path).read_bytes()
    fields: list[bytes] = []
    pos = 0
    while len(fields) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        end = pos
        while not data[end:end + 1].isspace():
            end += 1
        fields.append(data[pos:end])
        pos = end
    pos += 1  # single whitespace before the raster
    magic, w, h, maxval = fields[0], int(fields[1]), int(fields[2]), int(fields[3])
    if magic != b"P5":
        raise ValueError(f"read_pgm: unsupported magic {magic!r}")
    dtype = ">u2" if maxval > 255 else "u1"
    raster = np.frombuffer(data, dtype=dtype, count=w * h, offset=pos)
    return raster.reshape(h, w).astype(np.int32)
