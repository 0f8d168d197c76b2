"""End-to-end acceptance suite.

One test per acceptance criterion; the session summary prints a PASS/FAIL
line for each. Tolerances and budgets are pinned here, not configurable.
"""

import time

import numpy as np
import pytest

from conftest import flood_fill_labels, moving_blob_scene
from depthaction.background import (
    build_background,
    extract_foreground,
    label_components,
    max_depth_map,
    probability_map,
)
from depthaction.classify import chi2_gram, chi2_kernel
from depthaction.cli import (
    PipelineConfig,
    _benchmark_spec,
    _seed_child,
    make_benchmark_dataset,
    run_pipeline,
    run_robustness,
)
from depthaction.depthio import synth_action
from depthaction.descriptor import DescriptorParams, adaptive_scale, lsk3d, stv
from depthaction.encode import Codebook, fuse, stp_encode
from depthaction.stip import Stip, detect_stips

T1 = 0.8
T2_FACTOR = 0.01


def test_criterion_1_background_oracle():
    started = time.perf_counter()
    for seed in range(20):
        scene = moving_blob_scene(seed)
        frames = scene.sequence.frames
        prob = probability_map(frames)
        bg = build_background(prob, max_depth_map(frames), T1)
        stable = prob <= T1
        recovered = (bg[stable] == scene.background[stable]).mean()
        assert recovered >= 0.99, f"scene {seed}: background recovery {recovered:.4f}"
        for f in range(frames.shape[0]):
            mask = extract_foreground(bg, frames[f], T2_FACTOR)
            inter = (mask & scene.masks[f]).sum()
            union = (mask | scene.masks[f]).sum()
            assert inter / union >= 0.95, f"scene {seed} frame {f}: IoU {inter / union:.4f}"
    elapsed = time.perf_counter() - started
    assert elapsed < 30.0, f"background oracle took {elapsed:.1f}s"


def test_criterion_2_ccl_equivalence():
    rng = np.random.default_rng(123)
    densities = (0.15, 0.3, 0.5, 0.7, 0.85)
    started = time.perf_counter()
    for i in range(1000):
        mask = rng.random((64, 64)) < densities[i % 5]
        for connectivity in (4, 8):
            labels, areas = label_components(mask, connectivity)
            ref_labels, ref_areas = flood_fill_labels(mask, connectivity)
            assert np.array_equal(labels, ref_labels), f"mask {i} conn {connectivity}"
            assert np.array_equal(areas, ref_areas), f"mask {i} conn {connectivity}"
    elapsed = time.perf_counter() - started
    assert elapsed < 10.0, f"ccl equivalence took {elapsed:.1f}s"


def test_criterion_3_motion_subset_of_shape():
    violations = 0
    checked = 0
    for i in range(100):
        if i < 60:
            scene = moving_blob_scene(1000 + i, width=40, height=40, n_frames=8)
            seq = scene.sequence
        else:
            j = i - 60
            action = 1 + j % 3
            subject = 1 + j % 5
            episode = 1 + j // 15
            spec = _benchmark_spec(action, subject, episode, 99, 48, 48, 10, 3, 15)
            seq = synth_action(spec, _seed_child(99, subject, action, episode)).sequence
        frames = seq.frames
        bg = build_background(probability_map(frames), max_depth_map(frames), T1)
        masks = np.stack([extract_foreground(bg, fr, T2_FACTOR) for fr in frames])
        det = detect_stips(frames, masks, 3, 10.0, 5, 10.0)
        shape = {s.coords() for s in det.shape}
        per_frame_motion = {}
        for s in det.motion:
            per_frame_motion.setdefault(s.f, set()).add(s.coords())
        for f, pts in per_frame_motion.items():
            checked += 1
            violations += sum(1 for p in pts if p not in shape)
    assert checked > 0
    assert violations == 0, f"{violations} motion points outside the shape set"


def test_criterion_4_descriptor_invariants():
    rng = np.random.default_rng(7)
    params = DescriptorParams(scales=(3,))
    for i in range(500):
        side = 5 if i % 2 else 7
        cube = rng.random((side, side, side)) * rng.uniform(1.0, 4000.0)
        d = lsk3d(cube, params)
        assert d.min() >= 0.0
        assert abs(d.sum() - 1.0) <= 1e-9
        axis = i % 3
        flipped = lsk3d(np.flip(cube, axis), params).reshape(side, side, side)
        base = np.flip(d.reshape(side, side, side), axis)
        assert np.abs(flipped - base).max() <= 1e-6

    for _ in range(500):
        z_ref = float(rng.uniform(1.0, 1e4))
        z = float(rng.uniform(1.0, 1e4))
        radius = int(rng.integers(1, 15))
        r_hat = adaptive_scale(z_ref, z, radius)
        assert abs(r_hat * z - z_ref * radius) <= 1e-9 * abs(z_ref * radius)

    for _ in range(100):
        pts = [
            Stip(int(a), int(b), int(c), int(d))
            for a, b, c, d in rng.integers(0, 200, (int(rng.integers(1, 20)), 4))
        ]
        vectors = stv(pts)
        assert vectors.min() >= 0.0 and vectors.max() <= 1.0
        moved = [Stip(p.x + 17, p.y + 5, p.z + 250, p.f + 3) for p in pts]
        assert np.array_equal(vectors, stv(moved))


def test_criterion_5_kernel_properties():
    rng = np.random.default_rng(17)
    gamma = 0.8
    for _ in range(50):
        n = int(rng.integers(2, 21))
        hists = rng.random((n, 16))
        hists /= hists.sum(axis=1, keepdims=True)
        gram = chi2_gram(hists, hists, gamma)
        assert np.array_equal(gram, gram.T), "gram not exactly symmetric"
        eigs = np.linalg.eigvalsh(gram)
        assert eigs.min() >= -1e-8 * np.trace(gram)

    for _ in range(50):
        x = rng.random(12)
        y = rng.random(12)
        x[rng.random(12) < 0.25] = 0.0
        y[rng.random(12) < 0.25] = 0.0
        assert chi2_kernel(x, y, gamma) == chi2_kernel(y, x, gamma)
        base = chi2_kernel(x, y, gamma)
        for c in (0.5, 2.0, 10.0):
            scaled = chi2_kernel(c * x, c * y, gamma)
            assert scaled == pytest.approx(c**gamma * base, rel=1e-9)
        textbook = float(np.sum(2 * x * y / np.where(x + y > 0, x + y, 1.0)))
        assert abs(chi2_kernel(x, y, 1.0) - textbook) <= 1e-12


def test_criterion_6_dimension_checks():
    # fused length L*k1 + k2 (k1 + k2 in the single-scale case)
    for n_scales, k1, k2 in ((1, 2000, 1000), (3, 64, 32)):
        rep = fuse([np.full(k1, 1.0 / k1)] * n_scales, np.full(k2, 1.0 / k2))
        assert len(rep.values) == n_scales * k1 + k2

    rng = np.random.default_rng(3)
    k1 = 16
    codebook = Codebook(rng.random((k1, 4)), seed=0)
    pts = [
        Stip(int(x), int(y), int(z), int(f)) for x, y, z, f in rng.integers(0, 30, (40, 4))
    ]
    descs = rng.random((40, 4))
    extent = ((0, 29), (0, 29), (0, 29))
    # the experiment grid 1x1x1 + 2x2x1 + 3x3x2 spans 23 cells; the
    # illustrated pyramid 1x1x1 + 1x2x2 + 1x4x4 is the 21-cell variant
    experiment = stp_encode(pts, descs, codebook, [(1, 1, 1), (2, 2, 1), (3, 3, 2)], extent)
    assert len(experiment) == 23 * k1
    illustrated = stp_encode(pts, descs, codebook, [(1, 1, 1), (1, 2, 2), (1, 4, 4)], extent)
    assert len(illustrated) == 21 * k1


@pytest.fixture(scope="module")
def benchmark_run(benchmark_cfg, benchmark_dataset, tmp_path_factory):
    root, _ = benchmark_dataset
    out = tmp_path_factory.mktemp("bench_run")
    started = time.perf_counter()
    report = run_pipeline(benchmark_cfg, root, [1, 2, 3], [4, 5, 6], out)
    report["elapsed"] = time.perf_counter() - started
    return report


def test_criterion_7_end_to_end_benchmark(
    benchmark_cfg, benchmark_dataset, benchmark_run, tmp_path
):
    assert benchmark_run["accuracy"] >= 0.95
    assert benchmark_run["elapsed"] < 300.0, f"benchmark took {benchmark_run['elapsed']:.0f}s"
    root, _ = benchmark_dataset
    rerun = run_pipeline(benchmark_cfg, root, [1, 2, 3], [4, 5, 6], tmp_path / "again")
    assert rerun["accuracy"] == benchmark_run["accuracy"]
    for name in ("model.modl", "representations.csv", "confusion.csv", "manifest.txt"):
        first = (benchmark_run["out"] / name).read_bytes()
        second = (tmp_path / "again" / name).read_bytes()
        assert first == second, f"{name} differs between reruns"


def test_criterion_8_robustness_harness(benchmark_cfg, benchmark_dataset, tmp_path):
    root, _ = benchmark_dataset
    pepper = run_robustness(
        benchmark_cfg, root, [1, 2, 3], [4, 5, 6], "pepper", None, tmp_path / "pepper"
    )
    levels = [lvl for lvl, _ in pepper["rows"]]
    assert levels == [0.0, 0.01, 0.025, 0.05, 0.075, 0.10, 0.20]
    accs = [acc for _, acc in pepper["rows"]]
    assert accs[0] == pepper["baseline"], "0% pepper must equal the baseline"
    for prev, cur in zip(accs, accs[1:]):
        assert cur <= prev + 0.05 + 1e-12, f"pepper accuracy rose {prev:.3f} -> {cur:.3f}"

    occlusion = run_robustness(
        benchmark_cfg, root, [1, 2, 3], [4, 5, 6], "occlusion", None, tmp_path / "occ"
    )
    assert [lvl for lvl, _ in occlusion["rows"]] == [1, 2, 3, 4, 5, 6, 7, 8]
    table = (tmp_path / "occ" / "robustness_occlusion.csv").read_text().splitlines()
    assert len(table) == 9  # header + 8 types
    for level, acc in occlusion["rows"]:
        assert acc <= occlusion["baseline"] + 0.02 + 1e-12, (
            f"occlusion {level} above baseline: {acc:.3f} vs {occlusion['baseline']:.3f}"
        )


def test_criterion_9_pipeline_determinism(tmp_path):
    data = tmp_path / "data"
    make_benchmark_dataset(data, seed=4, n_subjects=4, n_reps=2)
    cfg = PipelineConfig(k1=16, k2=8, scales=(3,), epsilon=10.0, seed=21)
    run_pipeline(cfg, data, [1, 2], [3, 4], tmp_path / "r1")
    run_pipeline(cfg, data, [1, 2], [3, 4], tmp_path / "r2")
    manifest1 = (tmp_path / "r1" / "manifest.txt").read_bytes()
    manifest2 = (tmp_path / "r2" / "manifest.txt").read_bytes()
    assert manifest1 == manifest2, "manifests differ; runs are not comparable"
    for name in ("model.modl", "representations.csv", "confusion.csv"):
        a = (tmp_path / "r1" / name).read_bytes()
        b = (tmp_path / "r2" / name).read_bytes()
        assert a == b, f"{name} differs between identical-manifest runs"
