import numpy as np
import pytest

from conftest import moving_blob_scene
from depthaction.background import build_background, extract_foreground, max_depth_map, probability_map
from depthaction.stip import (
    Box,
    MotionBoxes,
    PlaneMap,
    Stip,
    _contour_samples,
    _sample_along,
    accumulate_motion,
    detect_stips,
    disk_element,
    dump_stips,
    motion_region,
    project_foreground,
    refine_motion,
    sample_contour_candidates,
    select_stips,
    trace_outer_contour,
)

SQRT2 = np.sqrt(2.0)


def square_walk(top, left, side):
    """Brute-force boundary walk of a filled square, clockwise from top-left."""
    walk = [(top, left + c) for c in range(side)]
    walk += [(top + r, left + side - 1) for r in range(1, side)]
    walk += [(top + side - 1, left + side - 2 - c) for c in range(side - 1)]
    walk += [(top + side - 1 - r, left) for r in range(1, side - 1)]
    return walk


def emit_every(walk, spacing):
    samples = [walk[0]]
    acc = 0.0
    for prev, cur in zip(walk, walk[1:]):
        acc += 1.0 if prev[0] == cur[0] or prev[1] == cur[1] else SQRT2
        if acc >= spacing:
            samples.append(cur)
            acc = 0.0
    return samples


class TestContourTracing:
    def test_two_by_two_square(self):
        sil = np.zeros((4, 4), bool)
        sil[1:3, 1:3] = True
        contour = trace_outer_contour(sil, (1, 1))
        assert contour == [(1, 1), (1, 2), (2, 2), (2, 1)]

    def test_isolated_pixel(self):
        sil = np.zeros((3, 3), bool)
        sil[1, 1] = True
        assert trace_outer_contour(sil, (1, 1)) == [(1, 1)]

    def test_square_walk_matches_oracle(self):
        sil = np.zeros((16, 16), bool)
        sil[2:14, 2:14] = True
        contour = trace_outer_contour(sil, (2, 2))
        assert sorted(contour) == sorted(square_walk(2, 2, 12))
        assert len(contour) == 44

    def test_square_sample_count_matches_walk_oracle(self):
        # walking the 44-pixel boundary ring of a 12x12 square and emitting
        # every 3 pixels of arc length gives 15 samples
        oracle = emit_every(square_walk(2, 2, 12), 3)
        assert len(oracle) == 15
        sil = np.zeros((16, 16), bool)
        sil[2:14, 2:14] = True
        samples = _contour_samples(sil, 3)
        assert len(samples) == len(oracle)
        assert set(samples) == set(oracle)

    def test_spacing_larger_than_perimeter_gives_one_sample(self):
        sil = np.zeros((8, 8), bool)
        sil[3:5, 3:5] = True
        assert len(_contour_samples(sil, 1000)) == 1

    def test_sample_spacing_invariant(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            sil = np.zeros((24, 24), bool)
            r, c = rng.integers(2, 10, 2)
            h, w = rng.integers(4, 12, 2)
            sil[r : r + h, c : c + w] = True
            lam = int(rng.integers(2, 6))
            contour = trace_outer_contour(sil, (int(r), int(c)))
            samples = _sample_along(contour, lam)
            pos = {p: i for i, p in enumerate(contour)}
            for a, b in zip(samples, samples[1:]):
                arc = 0.0
                for i in range(pos[a], pos[b]):
                    p, q = contour[i], contour[i + 1]
                    arc += 1.0 if p[0] == q[0] or p[1] == q[1] else SQRT2
                assert lam <= arc < lam + SQRT2


class TestProjection:
    def test_single_voxel_lifts_to_all_three_planes(self):
        frame = np.zeros((8, 8), np.uint16)
        mask = np.zeros((8, 8), bool)
        frame[4, 3] = 1000
        mask[4, 3] = True
        xy, xz, zy = project_foreground(frame, mask, 10.0)
        assert xy.grid[4, 3] == 1000
        assert xz.grid[100, 3] == 4
        assert zy.grid[100, 4] == 3
        assert xz.occupied[100, 3] and zy.occupied[100, 4]

    def test_vertical_bar_projects_to_row_segment(self):
        frame = np.zeros((10, 10), np.uint16)
        mask = np.zeros((10, 10), bool)
        frame[2:8, 5] = 2000
        mask[2:8, 5] = True
        _, xz, _ = project_foreground(frame, mask, 10.0)
        assert xz.occupied[200, 5]
        assert xz.grid[200, 5] == 7  # deepest y of the bar
        assert xz.occupied.sum() == 1

    def test_gap_bins_filled_by_linear_interpolation(self):
        # hand-computed: y goes 4 -> 14 across bins 100 -> 110, so bin 105 -> 9
        frame = np.zeros((20, 8), np.uint16)
        mask = np.zeros((20, 8), bool)
        frame[4, 3] = 1000
        frame[14, 3] = 1100
        mask[4, 3] = mask[14, 3] = True
        _, xz, _ = project_foreground(frame, mask, 10.0)
        assert xz.occupied[100:111, 3].all()
        assert xz.grid[105, 3] == pytest.approx(9.0)
        assert xz.grid[103, 3] == pytest.approx(np.interp(103, [100, 110], [4, 14]))

    def test_empty_mask_rejected(self):
        with pytest.raises(ValueError):
            project_foreground(np.zeros((4, 4), np.uint16), np.zeros((4, 4), bool), 10.0)


class TestCandidates:
    def make_planes(self, side=6):
        frame = np.zeros((12, 12), np.uint16)
        mask = np.zeros((12, 12), bool)
        frame[3 : 3 + side, 2 : 2 + side] = 1500
        mask[3 : 3 + side, 2 : 2 + side] = True
        return project_foreground(frame, mask, 10.0), frame

    def test_candidates_lie_on_foreground(self):
        planes, frame = self.make_planes()
        cands = sample_contour_candidates(planes, frame, 3, frame_index=2)
        assert cands
        for s in cands:
            assert frame[s.y, s.x] > 0
            assert s.f == 2
            assert s.kind == "candidate"

    def test_candidates_deduplicated(self):
        planes, frame = self.make_planes()
        cands = sample_contour_candidates(planes, frame, 1)
        coords = [s.coords() for s in cands]
        assert len(coords) == len(set(coords))

    def test_bad_spacing(self):
        planes, frame = self.make_planes()
        with pytest.raises(ValueError):
            sample_contour_candidates(planes, frame, 0)


def plane(view, grid, occupied=None, z_bin=10.0):
    grid = np.asarray(grid, float)
    if occupied is None:
        occupied = grid > 0
    return PlaneMap(view, grid, occupied, z_bin)


class TestMotionRegion:
    def test_identical_maps_empty(self):
        a = plane("xy", np.full((4, 4), 9.0))
        assert not motion_region(a, a, 50.0).any()

    def test_strictly_above_epsilon(self):
        a = plane("xy", np.zeros((3, 3)))
        b0 = np.zeros((3, 3))
        b0[1, 1] = 51
        b = plane("xy", b0)
        region = motion_region(b, a, 50.0)
        assert region[1, 1] and region.sum() == 1

    def test_exactly_epsilon_not_set(self):
        a = plane("xy", np.zeros((3, 3)))
        b0 = np.zeros((3, 3))
        b0[0, 0] = 50
        assert not motion_region(plane("xy", b0), a, 50.0).any()

    def test_symmetric_and_shift_invariant(self):
        rng = np.random.default_rng(5)
        for _ in range(25):
            g1 = rng.integers(0, 3000, (6, 6)).astype(float)
            g2 = rng.integers(0, 3000, (6, 6)).astype(float)
            eps = float(rng.uniform(0, 100))
            r12 = motion_region(plane("xz", g1), plane("xz", g2), eps)
            r21 = motion_region(plane("xz", g2), plane("xz", g1), eps)
            assert np.array_equal(r12, r21)
            shift = motion_region(plane("xz", g1 + 123), plane("xz", g2 + 123), eps)
            assert np.array_equal(r12, shift)

    def test_view_mismatch(self):
        with pytest.raises(ValueError):
            motion_region(plane("xy", np.zeros((2, 2))), plane("xz", np.zeros((2, 2))), 1.0)


class TestRefineMotion:
    def test_keeps_components_above_ratio(self):
        mask = np.zeros((40, 40), bool)
        mask[1:11, 1:11] = True  # 100 px
        mask[1:18, 34:39] = True  # 85 px
        refined, box = refine_motion(mask, 0)
        assert refined.sum() == 185
        assert box == Box(1, 1, 17, 38)

    def test_drops_small_components(self):
        mask = np.zeros((40, 40), bool)
        mask[1:11, 1:11] = True  # 100 px
        mask[30:35, 30:36] = True  # 30 px
        refined, box = refine_motion(mask, 0)
        assert refined.sum() == 100
        assert box == Box(1, 1, 10, 10)

    def test_empty_input_gives_no_box(self):
        refined, box = refine_motion(np.zeros((5, 5), bool), 5)
        assert box is None
        assert not refined.any()

    def test_closing_bridges_nearby_components(self):
        mask = np.zeros((20, 20), bool)
        mask[8:12, 2:8] = True
        mask[8:12, 10:16] = True  # 2 px gap, disk radius 5 bridges it
        refined, _ = refine_motion(mask, 5)
        assert refined[9, 8] and refined[9, 9]

    def test_kept_area_rule_and_nonempty(self):
        rng = np.random.default_rng(6)
        for _ in range(20):
            mask = rng.random((24, 24)) < 0.2
            if not mask.any():
                continue
            refined, box = refine_motion(mask, 1)
            assert refined.any()
            assert box is not None
            from depthaction.background import label_components

            _, areas = label_components(refined, 8)
            assert (areas > 0.8 * areas.max()).all()

    def test_disk_element(self):
        d = disk_element(5)
        assert d.shape == (11, 11)
        assert d[5, 5] and d[5, 0] and d[0, 5]
        assert not d[0, 0]


class TestAccumulateMotion:
    def test_single_pair_equals_region(self):
        r = np.zeros((6, 6), bool)
        r[2:4, 2:4] = True
        counts, box = accumulate_motion([r], 0)
        assert np.array_equal(counts, r.astype(int))
        assert box == Box(2, 2, 3, 3)

    def test_disjoint_motions_union(self):
        r1 = np.zeros((6, 6), bool)
        r1[0, 0] = True
        r2 = np.zeros((6, 6), bool)
        r2[5, 5] = True
        counts, _ = accumulate_motion([r1, r2], 0)
        assert counts[0, 0] == 1 and counts[5, 5] == 1
        assert counts.sum() == 2

    def test_oscillating_pixel_counts_every_pair(self):
        r = np.zeros((4, 4), bool)
        r[1, 1] = True
        counts, _ = accumulate_motion([r] * 7, 0)
        assert counts[1, 1] == 7


class TestSelectStips:
    def boxes(self):
        return MotionBoxes(xy=Box(0, 0, 10, 10), xz=Box(90, 0, 110, 10), zy=Box(90, 0, 110, 10))

    def test_inside_all_three_selected(self):
        s = Stip(x=5, y=5, z=1000, f=0)
        picked = select_stips([s], self.boxes(), "motion", 10.0)
        assert len(picked) == 1
        assert picked[0].kind == "motion"

    def test_outside_one_view_rejected(self):
        s = Stip(x=5, y=5, z=2000, f=0)  # z bin 200 outside the xz box
        assert select_stips([s], self.boxes(), "motion", 10.0) == []

    def test_missing_box_motion_empty_shape_all(self):
        s = Stip(x=5, y=5, z=1000, f=0)
        boxes = MotionBoxes(xy=Box(0, 0, 10, 10), xz=None, zy=Box(90, 0, 110, 10))
        assert select_stips([s], boxes, "motion", 10.0) == []
        shape = select_stips([s], boxes, "shape", 10.0)
        assert len(shape) == 1 and shape[0].kind == "shape"

    def test_bad_kind(self):
        with pytest.raises(ValueError):
            select_stips([], self.boxes(), "other", 10.0)


class TestDetection:
    def detect(self, seed):
        res = moving_blob_scene(seed, width=40, height=40, n_frames=8)
        frames = res.sequence.frames
        bg = build_background(probability_map(frames), max_depth_map(frames), 0.8)
        masks = np.stack([extract_foreground(bg, fr, 0.01) for fr in frames])
        return detect_stips(frames, masks, 3, 10.0, 5, 10.0)

    def test_motion_subset_of_shape(self):
        for seed in range(5):
            det = self.detect(seed)
            motion = {s.coords() for s in det.motion}
            shape = {s.coords() for s in det.shape}
            assert motion <= shape

    def test_kinds_are_labeled(self):
        det = self.detect(1)
        assert all(s.kind == "motion" for s in det.motion)
        assert all(s.kind == "shape" for s in det.shape)
        assert all(s.kind == "candidate" for frame in det.candidates for s in frame)

    def test_no_motion_sequence_falls_back_to_candidates(self):
        frames = np.full((4, 16, 16), 3000, np.uint16)
        frames[:, 5:11, 5:11] = 1000
        masks = np.zeros((4, 16, 16), bool)
        masks[:, 5:11, 5:11] = True
        det = detect_stips(frames, masks, 3, 50.0, 5, 10.0)
        assert det.motion == ()
        cands = {s.coords() for frame in det.candidates for s in frame}
        assert {s.coords() for s in det.shape} == cands

    def test_dump_format(self, tmp_path):
        det = self.detect(2)
        out = tmp_path / "points.txt"
        dump_stips(out, det.motion[:3])
        lines = out.read_text().splitlines()
        assert len(lines) == 3
        for line, s in zip(lines, det.motion[:3]):
            f, x, y, z, kind = line.split()
            assert (int(f), int(x), int(y), int(z), kind) == (s.f, s.x, s.y, s.z, "motion")
