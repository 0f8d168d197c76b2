"""Interest-point detection over depth video.

Each frame's foreground is projected onto three orthogonal planes.
Candidate points are sampled at equal arc length along the silhouette
contours of those planes and lifted back to 4-D (x, y, z, f). Candidates
are then filtered by per-frame inter-frame motion boxes (motion points)
or by the boxes of the motion accumulated over the whole sequence
(shape points, a superset of the motion points).
"""

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
from scipy.ndimage import binary_dilation, binary_erosion

from .background import label_components

VIEWS = ("xy", "xz", "zy")


@dataclass(frozen=True)
class PlaneMap:
    """One orthogonal projection of a frame's foreground.

    Grid layout by view:
      xy: grid[y, x]    = depth (mm)
      xz: grid[zbin, x] = vertical pixel coordinate of the highest-y voxel
      zy: grid[zbin, y] = horizontal pixel coordinate of the highest-x voxel
    `occupied` marks cells backed by (or interpolated between) real voxels;
    grid is 0 elsewhere.
    """

    view: str
    grid: np.ndarray
    occupied: np.ndarray
    z_bin_mm: float


@dataclass(frozen=True)
class Stip:
    """A 4-D interest point: pixel coords, depth in mm, frame index."""

    x: int
    y: int
    z: int
    f: int
    kind: str = "candidate"

    def coords(self):
        return (self.x, self.y, self.z, self.f)


@dataclass(frozen=True)
class Box:
    """Inclusive axis-aligned rectangle in (row, col) grid coordinates."""

    rmin: int
    cmin: int
    rmax: int
    cmax: int

    def contains(self, r, c) -> bool:
        return self.rmin <= r <= self.rmax and self.cmin <= c <= self.cmax


@dataclass(frozen=True)
class MotionBoxes:
    xy: Optional[Box] = None
    xz: Optional[Box] = None
    zy: Optional[Box] = None

    @property
    def complete(self) -> bool:
        return self.xy is not None and self.xz is not None and self.zy is not None


def _fill_z_gaps(grid: np.ndarray, occupied: np.ndarray) -> None:
    # interpolate the stored coordinate across unoccupied z bins between
    # occupied ones, column by column; no extrapolation past the ends
    for c in range(grid.shape[1]):
        rows = np.nonzero(occupied[:, c])[0]
        if rows.size < 2:
            continue
        lo, hi = rows[0], rows[-1]
        if rows.size == hi - lo + 1:
            continue
        missing = np.nonzero(~occupied[lo : hi + 1, c])[0] + lo
        grid[missing, c] = np.interp(missing, rows, grid[rows, c])
        occupied[lo : hi + 1, c] = True


def project_foreground(frame, mask, z_bin_mm: float, n_z_bins: Optional[int] = None):
    """Project one frame's foreground onto the xy, xz and zy planes.

    Depth is quantized into bins of z_bin_mm for the two side views; the
    side views store the extreme pixel coordinate seen per cell and are
    filled along the depth axis by linear interpolation so silhouettes
    stay solid despite depth discontinuities. Pass n_z_bins to force a
    common grid across the frames of a sequence.
    """
    frame = np.asarray(frame)
    mask = np.asarray(mask, dtype=bool)
    if frame.shape != mask.shape:
        raise ValueError("frame and mask must share a grid")
    if z_bin_mm <= 0:
        raise ValueError("z_bin_mm must be positive")
    occ_xy = mask & (frame > 0)
    if not occ_xy.any():
        raise ValueError("empty foreground mask")
    h, w = frame.shape
    ys, xs = np.nonzero(occ_xy)
    zs = frame[ys, xs].astype(np.float64)
    zbins = (zs // z_bin_mm).astype(np.int64)
    if n_z_bins is None:
        n_z_bins = int(zbins.max()) + 1
    zbins = np.clip(zbins, 0, n_z_bins - 1)

    xy = PlaneMap("xy", np.where(occ_xy, frame, 0).astype(np.float64), occ_xy, z_bin_mm)

    acc = np.full((n_z_bins, w), -1.0)
    np.maximum.at(acc, (zbins, xs), ys.astype(np.float64))
    occ = acc >= 0
    grid = np.where(occ, acc, 0.0)
    _fill_z_gaps(grid, occ)
    xz = PlaneMap("xz", grid, occ, z_bin_mm)

    acc = np.full((n_z_bins, h), -1.0)
    np.maximum.at(acc, (zbins, ys), xs.astype(np.float64))
    occ = acc >= 0
    grid = np.where(occ, acc, 0.0)
    _fill_z_gaps(grid, occ)
    zy = PlaneMap("zy", grid, occ, z_bin_mm)
    return xy, xz, zy


# clockwise Moore neighborhood as (dr, dc), starting at west
_RING = ((0, -1), (-1, -1), (-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1))


def trace_outer_contour(silhouette: np.ndarray, start) -> list:
    """Moore-neighbor trace of the outer boundary of one 8-connected component.

    `start` must be the component's first pixel in raster order (its west
    neighbor is then guaranteed to be background). The walk ends when a
    (pixel, backtrack) state repeats, which closes the boundary and
    terminates even on thin structures where the start state is never
    re-entered. Returns the ordered walk of boundary pixels.
    """
    sil = silhouette
    h, w = sil.shape
    sr, sc = start

    def fg(r, c):
        return 0 <= r < h and 0 <= c < w and sil[r, c]

    cur = (sr, sc)
    back = (sr, sc - 1)
    contour = [cur]
    seen = {(cur, back)}
    while True:
        i0 = _RING.index((back[0] - cur[0], back[1] - cur[1]))
        nxt = None
        last_bg = back
        for k in range(1, 9):
            dr, dc = _RING[(i0 + k) % 8]
            cand = (cur[0] + dr, cur[1] + dc)
            if fg(*cand):
                nxt = cand
                break
            last_bg = cand
        if nxt is None:
            break  # isolated pixel
        cur, back = nxt, last_bg
        if (cur, back) in seen:
            break
        seen.add((cur, back))
        contour.append(cur)
    return contour


def _sample_along(contour, spacing: float) -> list:
    samples = [contour[0]]
    acc = 0.0
    for prev, cur in zip(contour, contour[1:]):
        acc += 1.0 if prev[0] == cur[0] or prev[1] == cur[1] else np.sqrt(2.0)
        if acc >= spacing:
            samples.append(cur)
            acc = 0.0
    return samples


def _contour_samples(silhouette: np.ndarray, spacing: float) -> list:
    """Sample every outer contour of the silhouette at equal arc length."""
    labels, areas = label_components(silhouette, 8)
    points = []
    for li in range(1, len(areas) + 1):
        comp = labels == li
        rows, cols = np.nonzero(comp)
        start = (int(rows[0]), int(cols[0]))  # raster order from nonzero
        points.extend(_sample_along(trace_outer_contour(comp, start), spacing))
    return points


def sample_contour_candidates(planes, frame, spacing: float, frame_index: int = 0) -> list:
    """Sample candidate points along all three plane silhouettes and lift to 4-D.

    Every `spacing` pixels of arc length along a contour yields one point.
    Plane points are lifted using the frame depth (xy view) or the stored
    extreme coordinate (side views) and deduplicated; only points whose
    (x, y) location is a real foreground pixel are kept.
    """
    if spacing < 1:
        raise ValueError("contour spacing must be >= 1")
    xy, xz, zy = planes
    if not xy.occupied.any():
        raise ValueError("empty silhouette")
    frame = np.asarray(frame)
    h, w = xy.grid.shape
    out = {}

    def emit(x, y, z):
        x = int(min(max(x, 0), w - 1))
        y = int(min(max(y, 0), h - 1))
        if not xy.occupied[y, x]:
            return
        key = (x, y, int(z), frame_index)
        if key not in out:
            out[key] = Stip(x, y, int(z), frame_index)

    for r, c in _contour_samples(xy.occupied, spacing):
        emit(c, r, frame[r, c])
    for r, c in _contour_samples(xz.occupied, spacing):
        emit(c, int(round(xz.grid[r, c])), r * xz.z_bin_mm)
    for r, c in _contour_samples(zy.occupied, spacing):
        emit(int(round(zy.grid[r, c])), c, r * zy.z_bin_mm)
    return list(out.values())


def motion_region(map_f: PlaneMap, map_prev: PlaneMap, epsilon: float) -> np.ndarray:
    """Binary map of cells whose value changed by strictly more than epsilon."""
    if map_f.view != map_prev.view:
        raise ValueError(f"view mismatch: {map_f.view} vs {map_prev.view}")
    if map_f.grid.shape != map_prev.grid.shape:
        raise ValueError("plane grids must match")
    return np.abs(map_f.grid - map_prev.grid) > epsilon


def disk_element(radius: int) -> np.ndarray:
    yy, xx = np.ogrid[-radius : radius + 1, -radius : radius + 1]
    return xx * xx + yy * yy <= radius * radius


def binary_closing(mask: np.ndarray, element: np.ndarray) -> np.ndarray:
    # dilation treats outside as background, erosion as foreground, so the
    # closing is extensive even at image borders
    return binary_erosion(binary_dilation(mask, element), element, border_value=1)


def refine_motion(region: np.ndarray, disk_radius: int):
    """Close the motion region, drop small components, return mask + box.

    After morphological closing with a disk, every connected component
    whose area exceeds 0.8 of the largest is kept. The box is the tight
    bounding rectangle of the kept components, None for an empty input.
    """
    region = np.asarray(region, dtype=bool)
    if not region.any():
        return np.zeros(region.shape, bool), None
    closed = binary_closing(region, disk_element(disk_radius))
    labels, areas = label_components(closed, 8)
    keep = np.zeros(len(areas) + 1, bool)
    keep[1:] = areas > 0.8 * areas.max()
    refined = keep[labels]
    rows, cols = np.nonzero(refined)
    box = Box(int(rows.min()), int(cols.min()), int(rows.max()), int(cols.max()))
    return refined, box


def accumulate_motion(regions, disk_radius: int):
    """Sum per-frame motion maps and box the overall extent of motion."""
    regions = list(regions)
    if not regions:
        return None, None
    counts = np.zeros(regions[0].shape, np.int64)
    for r in regions:
        if r.shape != counts.shape:
            raise ValueError("motion maps must share a grid")
        counts += r
    _, box = refine_motion(counts > 0, disk_radius)
    return counts, box


def select_stips(candidates, boxes: MotionBoxes, kind: str, z_bin_mm: float) -> list:
    """Keep candidates whose three projections all fall inside the view boxes.

    With any box missing, motion selection is empty; shape selection falls
    back to every candidate (a sequence without motion still has a shape).
    """
    if kind not in ("motion", "shape"):
        raise ValueError("kind must be 'motion' or 'shape'")
    if not boxes.complete:
        if kind == "motion":
            return []
        return [replace(s, kind=kind) for s in candidates]
    picked = []
    for s in candidates:
        zb = int(s.z // z_bin_mm)
        if boxes.xy.contains(s.y, s.x) and boxes.xz.contains(zb, s.x) and boxes.zy.contains(zb, s.y):
            picked.append(replace(s, kind=kind))
    return picked


@dataclass(frozen=True)
class StipDetection:
    candidates: tuple  # per frame, tuple of Stip
    motion: tuple
    shape: tuple
    motion_boxes: tuple  # per frame MotionBoxes
    shape_boxes: MotionBoxes


def detect_stips(frames, masks, spacing, epsilon, disk_radius, z_bin_mm) -> StipDetection:
    """Run candidate sampling plus motion- and shape-based selection.

    frames: (N, H, W) depth stack; masks: per-frame foreground. Frames
    with an empty foreground contribute no candidates and no motion.
    """
    frames = np.asarray(frames)
    masks = np.asarray(masks, dtype=bool)
    n = frames.shape[0]
    live = masks & (frames > 0)
    z_max = int(frames[live].max()) if live.any() else 0
    n_z_bins = int(z_max // z_bin_mm) + 1

    planes = [None] * n
    candidates = [[] for _ in range(n)]
    for f in range(n):
        if not live[f].any():
            continue
        planes[f] = project_foreground(frames[f], masks[f], z_bin_mm, n_z_bins)
        candidates[f] = sample_contour_candidates(planes[f], frames[f], spacing, f)

    def empty_like(plane: PlaneMap) -> PlaneMap:
        shape = plane.grid.shape
        return PlaneMap(plane.view, np.zeros(shape), np.zeros(shape, bool), plane.z_bin_mm)

    per_view_regions = {v: [] for v in VIEWS}
    motion_boxes = [MotionBoxes()] * n
    motion = []
    for f in range(1, n):
        if planes[f] is None and planes[f - 1] is None:
            continue
        # a foreground appearing from (or vanishing into) an empty frame is
        # itself motion: diff against all-zero maps
        cur = planes[f] if planes[f] is not None else tuple(map(empty_like, planes[f - 1]))
        prev = planes[f - 1] if planes[f - 1] is not None else tuple(map(empty_like, planes[f]))
        boxes = {}
        for vi, view in enumerate(VIEWS):
            region = motion_region(cur[vi], prev[vi], epsilon)
            per_view_regions[view].append(region)
            _, boxes[view] = refine_motion(region, disk_radius)
        motion_boxes[f] = MotionBoxes(**boxes)
        motion.extend(select_stips(candidates[f], motion_boxes[f], "motion", z_bin_mm))

    shape_box = {}
    for view in VIEWS:
        _, shape_box[view] = accumulate_motion(per_view_regions[view], disk_radius)
    shape_boxes = MotionBoxes(**shape_box)
    shape = []
    for f in range(n):
        shape.extend(select_stips(candidates[f], shape_boxes, "shape", z_bin_mm))

    return StipDetection(
        candidates=tuple(tuple(c) for c in candidates),
        motion=tuple(motion),
        shape=tuple(shape),
        motion_boxes=tuple(motion_boxes),
        shape_boxes=shape_boxes,
    )


def dump_stips(path, stips) -> None:
    """Write points as text lines 'f x y z kind', one point per line."""
    with open(path, "w", encoding="ascii") as fh:
        for s in stips:
            fh.write(f"{s.f} {s.x} {s.y} {s.z} {s.kind}\n")
