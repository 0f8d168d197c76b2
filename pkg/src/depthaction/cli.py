"""Batch orchestration: synthesize data, run the pipeline, sweep robustness.

Subcommands: synth, pipeline, robustness, inspect, gridsearch. All outputs
land under --out together with a manifest.txt recording the configuration,
seed and library versions; identical manifests give byte-identical outputs.
Exit codes: 0 success, 1 pipeline error, 2 usage error.
"""

import argparse
import sys
import zlib
from dataclasses import dataclass, replace
from importlib import metadata
from multiprocessing import Pool
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .background import (
    build_background,
    dump_maps,
    extract_foreground,
    max_depth_map,
    probability_map,
)
from .classify import (
    KernelParams,
    evaluate,
    grid_search,
    param_grid,
    train_svm,
    write_confusion,
    write_model,
)
from .depthio import (
    BlobSpec,
    DepthSequence,
    OcclusionType,
    SequenceFormatError,
    SynthSpec,
    add_pepper_noise,
    apply_occlusion,
    load_sequence,
    save_sequence,
    synth_action,
    write_pgm,
)
from .descriptor import DescriptorParams, describe_at_scales, probe_depths, stv, write_descriptors
from .encode import fuse, kmeans, vq_histogram, write_representations
from .stip import Stip, detect_stips, dump_stips

PEPPER_LEVELS = (0.0, 0.01, 0.025, 0.05, 0.075, 0.10, 0.20)
OCCLUSION_LEVELS = (1, 2, 3, 4, 5, 6, 7, 8)


class PipelineError(Exception):
    """A stage failed; the message names the sequence and the stage."""


@dataclass(frozen=True)
class PipelineConfig:
    """All tunables of the pipeline, with the documented defaults."""

    lambda_px: int = 3
    epsilon: float = 50.0
    t1: float = 0.8
    t2_factor: float = 0.01
    disk_radius: int = 5
    probe_radius: int = 3
    scales: tuple = (7,)
    k1: int = 2000
    k2: int = 1000
    gamma: float = 0.8
    C: float = 1.0
    seed: int = 0
    z_bin_mm: float = 10.0
    kmeans_restarts: int = 1
    kmeans_max_iters: int = 100
    kmeans_tol: float = 1e-4
    svm_max_epochs: int = 200
    svm_gap_tol: float = 1e-3

    def __post_init__(self):
        if self.lambda_px < 1:
            raise ValueError("lambda must be >= 1")
        if not 0.0 <= self.t1 <= 1.0:
            raise ValueError("t1 must be in [0, 1]")
        if self.t2_factor <= 0 or self.epsilon < 0:
            raise ValueError("t2_factor must be positive and epsilon nonnegative")
        if self.disk_radius < 0 or self.probe_radius < 1:
            raise ValueError("bad morphology or probe radius")
        scales = tuple(int(s) for s in self.scales)
        if not scales or any(s < 1 for s in scales):
            raise ValueError("scales must be a nonempty list of radii >= 1")
        object.__setattr__(self, "scales", scales)
        if self.k1 < 1 or self.k2 < 1:
            raise ValueError("codebook sizes must be >= 1")
        if self.gamma <= 0 or self.C <= 0 or self.z_bin_mm <= 0:
            raise ValueError("gamma, C and z_bin_mm must be positive")
        if self.kmeans_restarts < 1:
            raise ValueError("kmeans_restarts must be >= 1")

    def descriptor_params(self) -> DescriptorParams:
        return DescriptorParams(scales=self.scales, probe_radius=self.probe_radius)

    def feature_hash(self) -> str:
        # covers only detection-relevant keys, so codebook/classifier sweeps
        # reuse the cached interest points
        keys = (
            self.lambda_px,
            self.epsilon,
            self.t1,
            self.t2_factor,
            self.disk_radius,
            self.probe_radius,
            self.z_bin_mm,
        )
        return f"{zlib.crc32(repr(keys).encode()):08x}"


_CONFIG_KEYS = {
    "lambda": ("lambda_px", int),
    "epsilon": ("epsilon", float),
    "t1": ("t1", float),
    "t2_factor": ("t2_factor", float),
    "disk_radius": ("disk_radius", int),
    "probe_radius": ("probe_radius", int),
    "scales": ("scales", lambda s: tuple(int(v) for v in str(s).split(","))),
    "k1": ("k1", int),
    "k2": ("k2", int),
    "gamma": ("gamma", float),
    "C": ("C", float),
    "seed": ("seed", int),
    "z_bin_mm": ("z_bin_mm", float),
    "kmeans_restarts": ("kmeans_restarts", int),
    "kmeans_max_iters": ("kmeans_max_iters", int),
    "kmeans_tol": ("kmeans_tol", float),
    "svm_max_epochs": ("svm_max_epochs", int),
    "svm_gap_tol": ("svm_gap_tol", float),
}


def parse_config(text: str) -> PipelineConfig:
    """Parse 'key = value' lines; '#' starts a comment, unknown keys error."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected 'key = value'")
        key, _, val = line.partition("=")
        key = key.strip()
        if key not in _CONFIG_KEYS:
            raise ValueError(f"config line {lineno}: unknown key {key!r}")
        attr, conv = _CONFIG_KEYS[key]
        try:
            values[attr] = conv(val.strip())
        except Exception as exc:
            raise ValueError(f"config line {lineno}: bad value for {key!r}: {exc}") from exc
    return PipelineConfig(**values)


def load_config(path) -> PipelineConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"))


def config_text(cfg: PipelineConfig) -> str:
    lines = []
    for key in sorted(_CONFIG_KEYS):
        attr, _ = _CONFIG_KEYS[key]
        value = getattr(cfg, attr)
        if key == "scales":
            value = ",".join(str(v) for v in value)
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


def manifest_text(cfg: PipelineConfig, extra: dict) -> str:
    lines = [f"depthaction {__version__}"]
    for pkg in ("numpy", "scipy", "numba"):
        lines.append(f"{pkg} {metadata.version(pkg)}")
    lines.append("")
    lines.append(config_text(cfg).rstrip("\n"))
    lines.append("")
    for key in sorted(extra):
        lines.append(f"{key} = {extra[key]}")
    return "\n".join(lines) + "\n"


@dataclass
class SequenceFeatures:
    """Per-sequence detection artifacts; descriptors are derived later."""

    name: str
    subject_id: int
    action_label: int
    path: str
    masks: np.ndarray
    motion: list  # surviving motion points, frame-major order
    motion_depths: np.ndarray
    shape: list
    stv: np.ndarray
    frames: Optional[np.ndarray] = None  # kept for in-memory (perturbed) input

    def load_frames(self) -> np.ndarray:
        if self.frames is not None:
            return self.frames
        return load_sequence(self.path).frames


def compute_features(seq: DepthSequence, cfg: PipelineConfig, path: str = "") -> SequenceFeatures:
    """Background model, foreground masks, interest points and shape vectors."""
    frames = seq.frames
    prob = probability_map(frames)
    maxd = max_depth_map(frames)
    bg = build_background(prob, maxd, cfg.t1)
    masks = np.stack([extract_foreground(bg, fr, cfg.t2_factor) for fr in frames])
    det = detect_stips(frames, masks, cfg.lambda_px, cfg.epsilon, cfg.disk_radius, cfg.z_bin_mm)
    masked = np.where(masks, frames, 0).astype(np.float64)
    motion, depths = probe_depths(masked, det.motion, cfg.probe_radius)
    shape = list(det.shape)
    shape_vectors = stv(shape) if shape else np.zeros((0, 4))
    return SequenceFeatures(
        name=seq.name,
        subject_id=seq.subject_id,
        action_label=seq.action_label,
        path=path,
        masks=masks,
        motion=motion,
        motion_depths=depths,
        shape=shape,
        stv=shape_vectors,
        frames=frames,
    )


def _stips_to_array(points) -> np.ndarray:
    return np.array([[p.x, p.y, p.z, p.f] for p in points], np.int64).reshape(len(points), 4)


def _stips_from_array(arr, kind) -> list:
    return [Stip(int(x), int(y), int(z), int(f), kind) for x, y, z, f in arr]


def _write_feature_cache(path, feats: SequenceFeatures) -> None:
    np.savez_compressed(
        path,
        name=np.array(feats.name),
        subject_id=np.array(feats.subject_id),
        action_label=np.array(feats.action_label),
        masks=feats.masks,
        motion=_stips_to_array(feats.motion),
        motion_depths=feats.motion_depths,
        shape=_stips_to_array(feats.shape),
        stv=feats.stv,
    )


def _read_feature_cache(path, seq_path: str) -> SequenceFeatures:
    with np.load(path) as npz:
        return SequenceFeatures(
            name=str(npz["name"]),
            subject_id=int(npz["subject_id"]),
            action_label=int(npz["action_label"]),
            path=seq_path,
            masks=npz["masks"],
            motion=_stips_from_array(npz["motion"], "motion"),
            motion_depths=npz["motion_depths"],
            shape=_stips_from_array(npz["shape"], "shape"),
            stv=npz["stv"],
        )


def load_features(path, cfg: PipelineConfig, cache_dir=None) -> SequenceFeatures:
    """Compute (or reload from the per-config cache) one sequence's features."""
    path = Path(path)
    cache = None
    if cache_dir is not None:
        cache = Path(cache_dir) / f"{path.stem}.{cfg.feature_hash()}.npz"
        if cache.exists():
            return _read_feature_cache(cache, str(path))
    seq = load_sequence(path)
    feats = compute_features(seq, cfg, str(path))
    if cache is not None:
        cache.parent.mkdir(parents=True, exist_ok=True)
        _write_feature_cache(cache, feats)
    return feats


def _warm_cache_worker(args) -> None:
    path, cfg, cache_dir = args
    load_features(path, cfg, cache_dir)


def _warm_cache(paths, cfg, cache_dir, jobs) -> None:
    cold = [p for p in paths if not (Path(cache_dir) / f"{Path(p).stem}.{cfg.feature_hash()}.npz").exists()]
    if jobs > 1 and len(cold) > 1:
        with Pool(jobs) as pool:
            pool.map(_warm_cache_worker, [(str(p), cfg, str(cache_dir)) for p in cold])
    else:
        for p in cold:
            load_features(p, cfg, cache_dir)


def _seed_child(seed: int, *tags: int) -> int:
    return int(np.random.SeedSequence([seed, *tags]).generate_state(1)[0])


def sequence_descriptors(feats: SequenceFeatures, cfg: PipelineConfig, z_ref: float):
    """Per-scale descriptor arrays for a sequence's surviving motion points."""
    masked = np.where(feats.masks, feats.load_frames(), 0).astype(np.float64)
    return describe_at_scales(
        masked, feats.motion, feats.motion_depths, cfg.descriptor_params(), z_ref
    )


def fit_encoders(loader, train_paths, cfg: PipelineConfig):
    """Fit the reference depth and every codebook from the training split only.

    `loader` maps a sequence path to its SequenceFeatures; only training
    paths are ever passed to it here. Returns (z_ref, motion codebooks,
    shape codebook, per-path training descriptor arrays) so callers can
    reuse the descriptors when encoding the training split.
    """
    feats = [loader(p) for p in train_paths]
    depths = [f.motion_depths for f in feats if len(f.motion_depths)]
    if not depths:
        raise PipelineError("fit: no motion points with usable depth in the training split")
    z_ref = float(np.concatenate(depths).mean())

    train_descriptors = {}
    pools = [[] for _ in cfg.scales]
    for path, f in zip(train_paths, feats):
        per_scale = sequence_descriptors(f, cfg, z_ref)
        train_descriptors[path] = per_scale
        if not f.motion:
            continue
        for i, rows in enumerate(per_scale):
            pools[i].append(rows)
    motion_codebooks = []
    for i, pool in enumerate(pools):
        if not pool:
            raise PipelineError("fit: no motion descriptors in the training split")
        arr = np.concatenate(pool)
        motion_codebooks.append(
            kmeans(
                arr,
                cfg.k1,
                seed=_seed_child(cfg.seed, 1, i),
                max_iters=cfg.kmeans_max_iters,
                tol=cfg.kmeans_tol,
                restarts=cfg.kmeans_restarts,
                kind=f"motion_scale_{i}",
            )
        )
    stv_pool = [f.stv for f in feats if len(f.stv)]
    if not stv_pool:
        raise PipelineError("fit: no shape points in the training split")
    shape_codebook = kmeans(
        np.concatenate(stv_pool),
        cfg.k2,
        seed=_seed_child(cfg.seed, 2),
        max_iters=cfg.kmeans_max_iters,
        tol=cfg.kmeans_tol,
        restarts=cfg.kmeans_restarts,
        kind="shape",
    )
    return z_ref, motion_codebooks, shape_codebook, train_descriptors


def encode_sequence(feats, cfg, z_ref, motion_codebooks, shape_codebook, per_scale=None):
    if per_scale is None:
        per_scale = sequence_descriptors(feats, cfg, z_ref)
    motion_hists = [vq_histogram(rows, cb) for rows, cb in zip(per_scale, motion_codebooks)]
    shape_hist = vq_histogram(feats.stv, shape_codebook)
    return fuse(motion_hists, shape_hist)


def _scan_dataset(dataset_dir) -> list:
    paths = sorted(Path(dataset_dir).glob("*.dseq"))
    if not paths:
        raise PipelineError(f"no .dseq sequences found in {dataset_dir}")
    return paths


def _split_paths(feats_by_path, train_subjects, test_subjects):
    train_subjects = set(train_subjects)
    test_subjects = set(test_subjects)
    if not train_subjects or not test_subjects:
        raise PipelineError("both subject splits must be nonempty")
    if train_subjects & test_subjects:
        raise PipelineError("train and test subjects overlap")
    present = {f.subject_id for f in feats_by_path.values()}
    missing = (train_subjects | test_subjects) - present
    if missing:
        raise PipelineError(f"subjects not present in the dataset: {sorted(missing)}")
    train = [p for p, f in feats_by_path.items() if f.subject_id in train_subjects]
    test = [p for p, f in feats_by_path.items() if f.subject_id in test_subjects]
    return train, test


def _staged(stage: str, name: str, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except PipelineError:
        raise
    except Exception as exc:
        raise PipelineError(f"{name}: {stage}: {exc}") from exc


def run_pipeline(cfg, dataset_dir, train_subjects, test_subjects, out_dir, jobs: int = 1):
    """Fit on the train split, evaluate on the test split, write artifacts."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cache_dir = out / "cache"
    paths = _scan_dataset(dataset_dir)
    _warm_cache(paths, cfg, cache_dir, jobs)

    def loader(p):
        return _staged("features", Path(p).name, load_features, p, cfg, cache_dir)

    feats_by_path = {p: loader(p) for p in paths}
    train_paths, test_paths = _split_paths(feats_by_path, train_subjects, test_subjects)

    z_ref, motion_cbs, shape_cb, train_descs = _staged(
        "fit", "training split", fit_encoders, loader, train_paths, cfg
    )
    reps = {
        p: _staged(
            "encode", Path(p).name, encode_sequence,
            feats_by_path[p], cfg, z_ref, motion_cbs, shape_cb, train_descs.get(p),
        )
        for p in paths
    }
    train_labels = [feats_by_path[p].action_label for p in train_paths]
    model = _staged(
        "train", "training split", train_svm,
        [reps[p] for p in train_paths], train_labels,
        cfg.C, KernelParams(cfg.gamma), cfg.seed,
        max_epochs=cfg.svm_max_epochs, gap_tol=cfg.svm_gap_tol,
    )
    model.z_ref = z_ref
    model.codebooks = [*motion_cbs, shape_cb]
    for codebook, (_, _, length) in zip(model.codebooks, model.layout):
        assert codebook.k == length, "codebook size out of step with the representation layout"
    model.params = {
        "lambda": cfg.lambda_px,
        "epsilon": cfg.epsilon,
        "t1": cfg.t1,
        "t2_factor": cfg.t2_factor,
        "disk_radius": cfg.disk_radius,
        "probe_radius": cfg.probe_radius,
        "scales": cfg.scales,
        "k1": cfg.k1,
        "k2": cfg.k2,
        "C": cfg.C,
        "seed": cfg.seed,
        "z_bin_mm": cfg.z_bin_mm,
    }
    accuracy, confusion = evaluate(
        model, [(reps[p], feats_by_path[p].action_label) for p in test_paths]
    )

    write_model(out / "model.modl", model)
    write_representations(
        out / "representations.csv",
        [
            (feats_by_path[p].subject_id, feats_by_path[p].action_label, reps[p].values)
            for p in paths
        ],
    )
    write_confusion(out / "confusion.csv", model.classes, confusion)
    extra = {
        "command": "pipeline",
        "dataset": str(dataset_dir),
        "n_sequences": len(paths),
        "train_subjects": ",".join(str(s) for s in sorted(set(train_subjects))),
        "test_subjects": ",".join(str(s) for s in sorted(set(test_subjects))),
    }
    (out / "manifest.txt").write_text(manifest_text(cfg, extra), encoding="utf-8")
    return {
        "accuracy": accuracy,
        "confusion": confusion,
        "model": model,
        "reps": reps,
        "feats": feats_by_path,
        "train_paths": train_paths,
        "test_paths": test_paths,
        "out": out,
    }


def _perturb(seq: DepthSequence, mode: str, level, seed: int) -> DepthSequence:
    if mode == "occlusion":
        return apply_occlusion(seq, OcclusionType(int(level)))
    if mode == "pepper":
        return add_pepper_noise(seq, float(level), seed)
    raise PipelineError(f"unknown robustness mode {mode!r}")


def run_robustness(cfg, dataset_dir, train_subjects, test_subjects, mode, levels, out_dir,
                   jobs: int = 1):
    """Train a clean baseline, then re-evaluate with perturbed test input."""
    if mode not in ("occlusion", "pepper"):
        raise PipelineError(f"unknown robustness mode {mode!r}")
    if levels is None:
        levels = OCCLUSION_LEVELS if mode == "occlusion" else PEPPER_LEVELS
    out = Path(out_dir)
    base = run_pipeline(cfg, dataset_dir, train_subjects, test_subjects, out, jobs=jobs)
    model = base["model"]
    feats_by_path = base["feats"]
    rows = []
    for level in levels:
        pairs = []
        for p in base["test_paths"]:
            name = Path(p).name
            seq = load_sequence(p)
            seed = _seed_child(cfg.seed, 3, zlib.crc32(name.encode()))
            perturbed = _perturb(seq, mode, level, seed)
            feats = _staged("features", name, compute_features, perturbed, cfg, str(p))
            rep = _staged(
                "encode", name, encode_sequence,
                feats, cfg, model.z_ref, model.codebooks[:-1], model.codebooks[-1],
            )
            pairs.append((rep, feats_by_path[p].action_label))
        acc, _ = evaluate(model, pairs)
        rows.append((level, acc))
    table = out / f"robustness_{mode}.csv"
    with open(table, "w", encoding="ascii", newline="\n") as fh:
        fh.write("level,accuracy\n")
        for level, acc in rows:
            fh.write(f"{level},{repr(float(acc))}\n")
    return {"baseline": base["accuracy"], "rows": rows, "table": table}


def run_gridsearch(cfg, dataset_dir, train_subjects, grids, folds, out_dir, jobs: int = 1):
    """Five-fold (by default) subject-stratified search over encoder/classifier knobs."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cache_dir = out / "cache"
    paths = [
        p
        for p in _scan_dataset(dataset_dir)
        if load_features(p, cfg, cache_dir).subject_id in set(train_subjects)
    ]
    if not paths:
        raise PipelineError("no sequences for the requested train subjects")
    _warm_cache(paths, cfg, cache_dir, jobs)
    feats = [load_features(p, cfg, cache_dir) for p in paths]
    subjects = [f.subject_id for f in feats]

    def eval_fn(params, train_idx, val_idx):
        sub_cfg = replace(
            cfg,
            k1=int(params.get("k1", cfg.k1)),
            k2=int(params.get("k2", cfg.k2)),
            scales=tuple(params.get("scales", cfg.scales)),
            C=float(params.get("C", cfg.C)),
        )
        tr = [paths[i] for i in train_idx]
        va = [paths[i] for i in val_idx]
        loader = lambda p: load_features(p, sub_cfg, cache_dir)
        z_ref, mcbs, scb, tr_descs = fit_encoders(loader, tr, sub_cfg)
        model = train_svm(
            [encode_sequence(loader(p), sub_cfg, z_ref, mcbs, scb, tr_descs.get(p)) for p in tr],
            [loader(p).action_label for p in tr],
            sub_cfg.C,
            KernelParams(sub_cfg.gamma),
            sub_cfg.seed,
            max_epochs=sub_cfg.svm_max_epochs,
            gap_tol=sub_cfg.svm_gap_tol,
        )
        acc, _ = evaluate(
            model, [(encode_sequence(loader(p), sub_cfg, z_ref, mcbs, scb), loader(p).action_label) for p in va]
        )
        return acc

    grid = param_grid(grids)
    best_params, best_score, table = grid_search(subjects, grid, folds, eval_fn, cfg.seed)
    with open(out / "gridsearch.csv", "w", encoding="ascii", newline="\n") as fh:
        keys = list(grids)
        fh.write(",".join(keys) + ",accuracy\n")
        for params, score in table:
            cells = [str(params[k]).replace(",", ";").replace(" ", "") for k in keys]
            fh.write(",".join(cells) + f",{repr(float(score))}\n")
    extra = {"command": "gridsearch", "dataset": str(dataset_dir), "folds": folds}
    (out / "manifest.txt").write_text(manifest_text(cfg, extra), encoding="utf-8")
    return {"best": best_params, "score": best_score, "table": table}


def run_inspect(cfg, seq_path, stage, out_dir):
    """Dump one stage's artifacts for a single sequence."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    seq = load_sequence(seq_path)
    name = seq.name or "sequence"
    extra = {"command": "inspect", "sequence": str(seq_path), "stage": stage}
    (out / "manifest.txt").write_text(manifest_text(cfg, extra), encoding="utf-8")
    prob = probability_map(seq.frames)
    maxd = max_depth_map(seq.frames)
    bg = build_background(prob, maxd, cfg.t1)
    if stage == "background":
        dump_maps(out / name, prob, maxd, bg)
        return
    masks = np.stack([extract_foreground(bg, fr, cfg.t2_factor) for fr in seq.frames])
    if stage == "foreground":
        for f, mask in enumerate(masks):
            write_pgm(out / f"{name}_fg_{f:04d}.pgm", mask.astype(np.uint16) * 65535)
        return
    det = detect_stips(
        seq.frames, masks, cfg.lambda_px, cfg.epsilon, cfg.disk_radius, cfg.z_bin_mm
    )
    if stage == "stips":
        points = [s for frame in det.candidates for s in frame]
        points += list(det.motion) + list(det.shape)
        dump_stips(out / f"{name}.stips.txt", points)
        return
    if stage == "descriptors":
        feats = compute_features(seq, cfg, str(seq_path))
        if not feats.motion:
            raise PipelineError(f"{name}: descriptors: no motion points survive")
        # self-referenced depth scale: fine for inspection, training uses the split mean
        z_ref = float(feats.motion_depths.mean())
        for i, rows in enumerate(sequence_descriptors(feats, cfg, z_ref)):
            write_descriptors(out / f"{name}.scale{i}.desc", rows)
        write_descriptors(out / f"{name}.stv.desc", feats.stv)
        return
    raise PipelineError(f"unknown inspect stage {stage!r}")


ACTION_RAISE, ACTION_SWEEP, ACTION_PICKUP = 1, 2, 3


def _benchmark_spec(action, subject, episode, seed, width, height, n_frames,
                    far_field_cols, texture_mm) -> SynthSpec:
    rng = np.random.default_rng([seed, subject, action, episode])
    jx, jy = int(rng.integers(-2, 3)), int(rng.integers(-2, 3))
    rx = 6 + subject % 3
    ry = 6 + (subject + 1) % 3
    depth = 1700 + 80 * subject
    background = 4000
    if action == ACTION_RAISE:
        # depth drift keeps all three views seeing the motion
        actor = BlobSpec(width // 2 + jx, height - ry - 3 + jy, rx, ry, depth, vy=-2.0, vz=40.0)
        held = None
    elif action == ACTION_SWEEP:
        actor = BlobSpec(rx + 3 + jx, height // 2 + jy, rx, ry, depth, vx=2.0, vz=-30.0)
        held = None
    elif action == ACTION_PICKUP:
        cx = width // 2 - 4 + jx
        cy = height // 2 + jy
        actor = BlobSpec(cx, cy, rx, ry, depth)
        # overlaps the actor edge so the merged region stays one component
        held = BlobSpec(cx + rx + 2, cy, 4, 4, depth - 150, appear_frame=n_frames // 2)
    else:
        raise ValueError(f"unknown action {action}")
    return SynthSpec(
        width=width,
        height=height,
        n_frames=n_frames,
        background_depth=background,
        actor=actor,
        held_object=held,
        far_field_cols=far_field_cols,
        texture_mm=texture_mm,
    )


def make_benchmark_dataset(out_dir, seed: int = 0, n_subjects: int = 6, n_reps: int = 4,
                           width: int = 48, height: int = 48, n_frames: int = 10,
                           far_field_cols: int = 3, texture_mm: int = 15) -> list:
    """Write a 3-action synthetic dataset (aAA_sSS_eEE.dseq naming)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for subject in range(1, n_subjects + 1):
        for action in (ACTION_RAISE, ACTION_SWEEP, ACTION_PICKUP):
            for episode in range(1, n_reps + 1):
                spec = _benchmark_spec(
                    action, subject, episode, seed, width, height, n_frames,
                    far_field_cols, texture_mm,
                )
                result = synth_action(spec, _seed_child(seed, subject, action, episode))
                name = f"a{action:02d}_s{subject:02d}_e{episode:02d}"
                seq = DepthSequence(result.sequence.frames, subject, action, name)
                path = out / f"{name}.dseq"
                save_sequence(seq, path)
                paths.append(path)
    return paths


def _parse_subjects(text: str) -> list:
    try:
        return [int(v) for v in text.split(",") if v.strip() != ""]
    except ValueError as exc:
        raise PipelineError(f"bad subject list {text!r}") from exc


def _parse_levels(text, mode):
    if text is None:
        return None
    vals = [v for v in text.split(",") if v.strip() != ""]
    return [int(v) for v in vals] if mode == "occlusion" else [float(v) for v in vals]


def _load_cfg(args) -> PipelineConfig:
    cfg = load_config(args.config) if args.config else PipelineConfig()
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed)
    return cfg


def _cmd_synth(args) -> int:
    seed = args.seed if args.seed is not None else 0
    paths = make_benchmark_dataset(
        args.out,
        seed=seed,
        n_subjects=args.subjects,
        n_reps=args.reps,
        width=args.width,
        height=args.height,
        n_frames=args.frames,
    )
    lines = [
        f"depthaction {__version__}",
        "command = synth",
        f"seed = {seed}",
        f"subjects = {args.subjects}",
        f"reps = {args.reps}",
        f"width = {args.width}",
        f"height = {args.height}",
        f"frames = {args.frames}",
        f"n_sequences = {len(paths)}",
    ]
    (Path(args.out) / "manifest.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"wrote {len(paths)} sequences to {args.out}")
    return 0


def _cmd_pipeline(args) -> int:
    cfg = _load_cfg(args)
    report = run_pipeline(
        cfg,
        args.dataset,
        _parse_subjects(args.train_subjects),
        _parse_subjects(args.test_subjects),
        args.out,
        jobs=args.jobs,
    )
    print(f"accuracy {report['accuracy']:.4f} ({len(report['test_paths'])} test sequences)")
    return 0


def _cmd_robustness(args) -> int:
    cfg = _load_cfg(args)
    report = run_robustness(
        cfg,
        args.dataset,
        _parse_subjects(args.train_subjects),
        _parse_subjects(args.test_subjects),
        args.mode,
        _parse_levels(args.levels, args.mode),
        args.out,
        jobs=args.jobs,
    )
    print(f"baseline {report['baseline']:.4f}")
    for level, acc in report["rows"]:
        print(f"{args.mode} {level}: {acc:.4f}")
    return 0


def _cmd_inspect(args) -> int:
    cfg = _load_cfg(args)
    run_inspect(cfg, args.sequence, args.stage, args.out)
    return 0


def _cmd_gridsearch(args) -> int:
    cfg = _load_cfg(args)
    grids = {}
    if args.k1_grid:
        grids["k1"] = [int(v) for v in args.k1_grid.split(",")]
    if args.k2_grid:
        grids["k2"] = [int(v) for v in args.k2_grid.split(",")]
    if args.scales_grid:
        grids["scales"] = [
            tuple(int(v) for v in group.split(",")) for group in args.scales_grid.split("|")
        ]
    if args.c_grid:
        grids["C"] = [float(v) for v in args.c_grid.split(",")]
    if not grids:
        raise PipelineError("gridsearch needs at least one of --k1-grid/--k2-grid/--scales-grid/--c-grid")
    report = run_gridsearch(
        cfg,
        args.dataset,
        _parse_subjects(args.train_subjects),
        grids,
        args.folds,
        args.out,
        jobs=args.jobs,
    )
    print(f"best {report['best']} accuracy {report['score']:.4f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="depthaction",
        description="Depth-video action recognition pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_synth = sub.add_parser("synth", help="generate the synthetic benchmark dataset")
    p_synth.add_argument("--out", required=True)
    p_synth.add_argument("--seed", type=int, default=None)
    p_synth.add_argument("--subjects", type=int, default=6)
    p_synth.add_argument("--reps", type=int, default=4)
    p_synth.add_argument("--width", type=int, default=48)
    p_synth.add_argument("--height", type=int, default=48)
    p_synth.add_argument("--frames", type=int, default=10)
    p_synth.set_defaults(func=_cmd_synth)

    def common(p, subjects=True):
        p.add_argument("dataset")
        p.add_argument("--config", default=None)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", required=True)
        p.add_argument("--jobs", type=int, default=1)
        p.add_argument("--train-subjects", required=True)
        if subjects:
            p.add_argument("--test-subjects", required=True)

    p_pipe = sub.add_parser("pipeline", help="train on one subject split, test on the other")
    common(p_pipe)
    p_pipe.set_defaults(func=_cmd_pipeline)

    p_rob = sub.add_parser("robustness", help="accuracy under test-set perturbations")
    common(p_rob)
    p_rob.add_argument("--mode", choices=("occlusion", "pepper"), required=True)
    p_rob.add_argument("--levels", default=None)
    p_rob.set_defaults(func=_cmd_robustness)

    p_ins = sub.add_parser("inspect", help="dump one stage's artifacts for a sequence")
    p_ins.add_argument("sequence")
    p_ins.add_argument("--stage", choices=("background", "foreground", "stips", "descriptors"),
                       required=True)
    p_ins.add_argument("--config", default=None)
    p_ins.add_argument("--seed", type=int, default=None)
    p_ins.add_argument("--out", required=True)
    p_ins.set_defaults(func=_cmd_inspect)

    p_grid = sub.add_parser("gridsearch", help="cross-validated parameter search on the train split")
    common(p_grid, subjects=False)
    p_grid.add_argument("--folds", type=int, default=5)
    p_grid.add_argument("--k1-grid", default=None)
    p_grid.add_argument("--k2-grid", default=None)
    p_grid.add_argument("--scales-grid", default=None, help="pipe-separated scale lists, e.g. '3|3,5'")
    p_grid.add_argument("--c-grid", default=None)
    p_grid.set_defaults(func=_cmd_gridsearch)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (PipelineError, SequenceFormatError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
