"""Codebook learning and histogram encoding of descriptor sets.

A sequence becomes a concatenation of L1-normalized vector-quantization
histograms: one per descriptor scale plus one for the shape vectors.
Grid-partition (pyramid) and distance-weighted encoders are provided for
comparison.
"""

import struct
from dataclasses import dataclass

import numpy as np

CDBK_MAGIC = b"CDBK"
CDBK_VERSION = 1


@dataclass(frozen=True)
class Codebook:
    """A set of k centroids over d-dimensional descriptors."""

    centroids: np.ndarray
    seed: int
    kind: str = ""

    @property
    def k(self) -> int:
        return self.centroids.shape[0]

    @property
    def dim(self) -> int:
        return self.centroids.shape[1]


@dataclass(frozen=True)
class Representation:
    """A fused histogram vector with a named-segment layout."""

    values: np.ndarray
    layout: tuple  # of (name, offset, length)

    def segment(self, name: str) -> np.ndarray:
        for seg, off, length in self.layout:
            if seg == name:
                return self.values[off : off + length]
        raise KeyError(name)


def _pairwise_sq_dist(x: np.ndarray, c: np.ndarray) -> np.ndarray:
    d2 = (
        np.einsum("ij,ij->i", x, x)[:, None]
        - 2.0 * (x @ c.T)
        + np.einsum("ij,ij->i", c, c)[None, :]
    )
    return np.maximum(d2, 0.0)


def _init_centroids(x: np.ndarray, k: int, rng) -> np.ndarray:
    distinct = np.unique(x, axis=0)
    if len(distinct) >= k:
        idx = rng.choice(len(distinct), size=k, replace=False)
        return distinct[np.sort(idx)].copy()
    # fewer distinct points than centroids: use them all, then perturbed copies
    out = np.empty((k, x.shape[1]))
    out[: len(distinct)] = distinct
    for j in range(len(distinct), k):
        out[j] = distinct[j % len(distinct)] + rng.normal(0.0, 1e-6, x.shape[1])
    return out


def _lloyd(x: np.ndarray, k: int, rng, max_iters: int, tol: float):
    centroids = _init_centroids(x, k, rng)
    n = len(x)
    prev = np.inf
    for _ in range(max_iters):
        d2 = _pairwise_sq_dist(x, centroids)
        assign = d2.argmin(axis=1)
        nearest = d2[np.arange(n), assign]
        distortion = float(nearest.sum())
        assert distortion <= prev * (1 + 1e-9) + 1e-12, "distortion increased"
        if np.isfinite(prev) and prev - distortion < tol * max(prev, 1e-300):
            prev = distortion
            break
        prev = distortion
        counts = np.bincount(assign, minlength=k)
        empties = np.nonzero(counts == 0)[0]
        if empties.size:
            # hand each empty cluster the point currently farthest from its centroid
            order = np.argsort(-nearest, kind="stable")
            for rank, e in enumerate(empties):
                centroids[e] = x[order[rank % n]]
            continue
        for j in range(k):
            centroids[j] = x[assign == j].mean(axis=0)
    return centroids, prev


def kmeans(descriptors, k: int, seed: int, max_iters: int = 100, tol: float = 1e-6,
           restarts: int = 1, kind: str = "") -> Codebook:
    """Lloyd's algorithm with seeded initialization, deterministic per seed.

    Initial centroids are k distinct input points chosen at random (all
    points plus perturbed duplicates when fewer exist). Empty clusters are
    reseeded to the farthest point. Iteration stops at max_iters or when
    the total distortion improves by less than tol relatively. With
    restarts > 1 the lowest-distortion run wins.
    """
    x = np.asarray(descriptors, dtype=np.float64)
    if x.ndim != 2 or len(x) == 0:
        raise ValueError("need a nonempty (n, d) descriptor array")
    if k < 1:
        raise ValueError("k must be >= 1")
    if np.isnan(x).any():
        raise ValueError("descriptors contain NaN")
    best = None
    for j in range(max(restarts, 1)):
        rng = np.random.default_rng([seed, j])
        centroids, distortion = _lloyd(x, k, rng, max_iters, tol)
        if best is None or distortion < best[1]:
            best = (centroids, distortion)
    return Codebook(best[0], seed=seed, kind=kind)


def vq_histogram(descriptors, codebook: Codebook) -> np.ndarray:
    """Hard-assignment histogram over the codebook, L1-normalized.

    Ties go to the lowest centroid index; an empty descriptor set yields
    an all-zero histogram.
    """
    x = np.asarray(descriptors, dtype=np.float64)
    if x.size == 0:
        return np.zeros(codebook.k)
    if x.ndim != 2 or x.shape[1] != codebook.dim:
        raise ValueError(f"descriptor dim {x.shape} does not match codebook d={codebook.dim}")
    assign = _pairwise_sq_dist(x, codebook.centroids).argmin(axis=1)
    counts = np.bincount(assign, minlength=codebook.k).astype(np.float64)
    return counts / counts.sum()


def fuse(motion_hists, shape_hist) -> Representation:
    """Concatenate per-scale motion histograms and the shape histogram."""
    motion_hists = [np.asarray(h, dtype=np.float64) for h in motion_hists]
    shape_hist = np.asarray(shape_hist, dtype=np.float64)
    if not motion_hists:
        raise ValueError("need at least one motion histogram")
    k1 = len(motion_hists[0])
    if any(len(h) != k1 for h in motion_hists):
        raise ValueError("motion histograms must share a length")
    layout = []
    parts = []
    offset = 0
    for i, h in enumerate(motion_hists):
        layout.append((f"motion_scale_{i}", offset, k1))
        parts.append(h)
        offset += k1
    layout.append(("shape", offset, len(shape_hist)))
    parts.append(shape_hist)
    return Representation(np.concatenate(parts), tuple(layout))


def _cell_index(value: float, lo: float, hi: float, n: int) -> int:
    if n == 1 or hi <= lo:
        return 0
    return min(int(n * (value - lo) / (hi - lo)), n - 1)


def stp_encode(points, descriptors, codebook: Codebook, levels, extent) -> np.ndarray:
    """Pyramid encoding: one quantization histogram per grid cell per level.

    levels is a list of (nt, ny, nx) grids partitioning the sequence
    extent ((t0, t1), (y0, y1), (x0, x1)); every point lands in exactly
    one cell per level. Cells are concatenated t-major, then y, then x.
    """
    if not levels:
        raise ValueError("need at least one pyramid level")
    points = list(points)
    x = np.asarray(descriptors, dtype=np.float64)
    (t0, t1), (y0, y1), (x0, x1) = extent
    chunks = []
    for nt, ny, nx in levels:
        cells = [[] for _ in range(nt * ny * nx)]
        for i, p in enumerate(points):
            it = _cell_index(p.f, t0, t1, nt)
            iy = _cell_index(p.y, y0, y1, ny)
            ix = _cell_index(p.x, x0, x1, nx)
            cells[(it * ny + iy) * nx + ix].append(i)
        for members in cells:
            chunks.append(vq_histogram(x[members], codebook))
    return np.concatenate(chunks)


def stw_encode(points, descriptors, codebook: Codebook, origin) -> np.ndarray:
    """Distance-weighted histogram: votes weighted by offset from the origin.

    Each point votes its normalized (max = 1 over the set) Euclidean
    distance to the 4-D origin into its nearest-centroid bin. All points
    at the origin yield the documented all-zero degenerate output.
    """
    points = list(points)
    if not points:
        raise ValueError("need at least one point")
    x = np.asarray(descriptors, dtype=np.float64)
    if x.shape[0] != len(points):
        raise ValueError("points and descriptors must align")
    origin = np.asarray(origin, dtype=np.float64)
    coords = np.array([p.coords() for p in points], dtype=np.float64)
    dist = np.sqrt(((coords - origin) ** 2).sum(axis=1))
    top = dist.max()
    if top == 0:
        return np.zeros(codebook.k)
    weights = dist / top
    assign = _pairwise_sq_dist(x, codebook.centroids).argmin(axis=1)
    hist = np.zeros(codebook.k)
    np.add.at(hist, assign, weights)
    total = hist.sum()
    return hist / total if total > 0 else hist


def write_codebook(path, codebook: Codebook) -> None:
    """Binary codebook dump: magic, version, k, d, seed, float32 centroids."""
    with open(path, "wb") as fh:
        fh.write(
            struct.pack(
                "<4sHIIQ", CDBK_MAGIC, CDBK_VERSION, codebook.k, codebook.dim, codebook.seed
            )
        )
        fh.write(np.ascontiguousarray(codebook.centroids, dtype="<f4").tobytes())


def read_codebook(path, kind: str = "") -> Codebook:
    with open(path, "rb") as fh:
        head = fh.read(struct.calcsize("<4sHIIQ"))
        magic, version, k, dim, seed = struct.unpack("<4sHIIQ", head)
        if magic != CDBK_MAGIC or version != CDBK_VERSION:
            raise ValueError(f"{path}: not a codebook file")
        data = np.frombuffer(fh.read(k * dim * 4), dtype="<f4")
    return Codebook(data.reshape(k, dim).astype(np.float64), seed=int(seed), kind=kind)


def write_representations(path, rows) -> None:
    """CSV dump, one row per sequence: subject_id, label, values..."""
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        for subject_id, label, values in rows:
            cells = ",".join(repr(float(v)) for v in values)
            fh.write(f"{subject_id},{label},{cells}\n")
