"""Depth background modeling and per-frame foreground extraction.

The background is modeled from two per-pixel statistics over a sequence:
the fraction of zero (out-of-range) readings, and the maximum observed
depth. Foreground is whatever sits clearly in front of that model,
refined to its largest connected component.
"""

import numpy as np
from numba import njit

from .depthio import write_pgm


def _as_stack(frames) -> np.ndarray:
    frames = np.asarray(frames)
    if frames.ndim == 2:
        frames = frames[None]
    if frames.ndim != 3 or frames.shape[0] == 0:
        raise ValueError("need at least one frame")
    return frames


def probability_map(frames) -> np.ndarray:
    """Per-pixel fraction of frames with a zero (no-reading) depth value."""
    frames = _as_stack(frames)
    return (frames == 0).mean(axis=0)


def max_depth_map(frames) -> np.ndarray:
    """Per-pixel maximum depth over the frame stack."""
    frames = _as_stack(frames)
    return frames.max(axis=0)


def build_background(prob: np.ndarray, max_depth: np.ndarray, t1: float) -> np.ndarray:
    """Combine the zero-probability and max-depth maps into a background plate.

    Pixels whose zero probability strictly exceeds t1 are treated as
    out-of-range background (value 0); all others take the maximum
    observed depth.
    """
    if not 0.0 <= t1 <= 1.0:
        raise ValueError("t1 must be in [0, 1]")
    prob = np.asarray(prob)
    max_depth = np.asarray(max_depth)
    if prob.shape != max_depth.shape:
        raise ValueError("probability and max-depth maps must share a grid")
    return np.where(prob > t1, 0, max_depth).astype(np.uint16)


def extract_foreground(bg: np.ndarray, frame: np.ndarray, t2_factor: float) -> np.ndarray:
    """Segment one frame against the background plate.

    A pixel is a candidate when it has a reading and is either closer
    than the modeled background by more than T2, or lies where the model
    is out-of-range (an object in formerly empty space must be
    foreground). T2 is t2_factor times the largest background-minus-frame
    difference among candidates. Only the largest 8-connected component
    is kept; an all-false mask is returned when nothing qualifies.
    """
    bg = np.asarray(bg)
    frame = np.asarray(frame)
    if bg.shape != frame.shape:
        raise ValueError("frame and background must share a grid")
    diff = bg.astype(np.int64) - frame.astype(np.int64)
    live = frame > 0
    pos = live & (diff > 0)
    far = live & (bg == 0)
    if not pos.any() and not far.any():
        return np.zeros(frame.shape, bool)
    t2 = t2_factor * diff[pos].max() if pos.any() else 0.0
    raw = far | (pos & (diff > t2))
    if not raw.any():
        return np.zeros(frame.shape, bool)
    labels, areas = label_components(raw, 8)
    return labels == (int(areas.argmax()) + 1)


def label_components(mask: np.ndarray, connectivity: int = 8):
    """Two-pass connected-component labeling with union-find resolution.

    Returns (labels, areas): labels are dense from 1 in raster order of
    first appearance, 0 is background; areas[i] is the pixel count of
    label i+1.
    """
    if connectivity not in (4, 8):
        raise ValueError("connectivity must be 4 or 8")
    mask = np.ascontiguousarray(np.asarray(mask, dtype=bool))
    if mask.ndim != 2:
        raise ValueError("mask must be 2-D")
    labels = _two_pass(mask, connectivity == 8)
    n = int(labels.max())
    areas = np.bincount(labels.ravel(), minlength=n + 1)[1:]
    return labels, areas


@njit(cache=True)
def _find(parent, x):
    root = x
    while parent[root] != root:
        root = parent[root]
    while parent[x] != root:
        parent[x], x = root, parent[x]
    return root


@njit(cache=True)
def _two_pass(mask, eight):
    h, w = mask.shape
    labels = np.zeros((h, w), np.int32)
    # worst case (4-connectivity checkerboard) uses one provisional label per 2 pixels
    parent = np.zeros(h * w // 2 + 2, np.int32)
    nxt = 1
    neigh = np.empty(4, np.int32)
    for i in range(h):
        for j in range(w):
            if not mask[i, j]:
                continue
            k = 0
            if j > 0 and mask[i, j - 1]:
                neigh[k] = labels[i, j - 1]
                k += 1
            if i > 0:
                if mask[i - 1, j]:
                    neigh[k] = labels[i - 1, j]
                    k += 1
                if eight:
                    if j > 0 and mask[i - 1, j - 1]:
                        neigh[k] = labels[i - 1, j - 1]
                        k += 1
                    if j + 1 < w and mask[i - 1, j + 1]:
                        neigh[k] = labels[i - 1, j + 1]
                        k += 1
            if k == 0:
                parent[nxt] = nxt
                labels[i, j] = nxt
                nxt += 1
            else:
                m = _find(parent, neigh[0])
                for t in range(1, k):
                    r = _find(parent, neigh[t])
                    if r < m:
                        m = r
                labels[i, j] = m
                for t in range(k):
                    r = _find(parent, neigh[t])
                    if r != m:
                        parent[r] = m
    dense = np.zeros(nxt, np.int32)
    count = 0
    for i in range(h):
        for j in range(w):
            if labels[i, j] != 0:
                r = _find(parent, labels[i, j])
                if dense[r] == 0:
                    count += 1
                    dense[r] = count
                labels[i, j] = dense[r]
    return labels


def dump_maps(prefix, prob, max_depth, bg) -> None:
    """Debug dump of the three model maps as 16-bit PGMs (probability scaled)."""
    write_pgm(f"{prefix}_prob.pgm", np.round(np.asarray(prob) * 65535).astype(np.uint16))
    write_pgm(f"{prefix}_maxdepth.pgm", np.asarray(max_depth, dtype=np.uint16))
    write_pgm(f"{prefix}_background.pgm", np.asarray(bg, dtype=np.uint16))
