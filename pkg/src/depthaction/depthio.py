"""Depth sequence data model, binary I/O, synthetic scenes and perturbations.

A depth sequence is a stack of equal-sized 16-bit frames holding millimeter
readings, with 0 meaning "no reading" (out of sensor range). Sequences are
immutable after construction; every operation here returns a new object.
"""

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

DSEQ_MAGIC = b"DSEQ"
DSEQ_VERSION = 1
_DSEQ_HEADER = struct.Struct("<4sHHHIii")


class SequenceFormatError(ValueError):
    """A depth-sequence file or directory could not be decoded."""


class MalformedHeaderError(SequenceFormatError):
    pass


class EmptySequenceError(SequenceFormatError):
    pass


class TruncatedPayloadError(SequenceFormatError):
    pass


class DimensionMismatchError(SequenceFormatError):
    pass


@dataclass(frozen=True, eq=False)
class DepthSequence:
    """An ordered stack of depth frames plus subject/action metadata.

    frames is a (N, H, W) uint16 array, N >= 2. Values are millimeters,
    0 = no reading / far field.
    """

    frames: np.ndarray
    subject_id: int = 0
    action_label: int = 0
    name: str = ""

    def __post_init__(self):
        frames = np.asarray(self.frames)
        if frames.ndim != 3:
            raise DimensionMismatchError("frames must be a (N, H, W) array")
        if frames.shape[0] == 0:
            raise EmptySequenceError("empty sequence")
        if frames.shape[0] < 2:
            raise EmptySequenceError("a sequence needs at least 2 frames")
        if frames.dtype != np.uint16:
            if frames.min() < 0 or frames.max() > np.iinfo(np.uint16).max:
                raise ValueError("depth values must fit in uint16")
            frames = frames.astype(np.uint16)
        frames = np.ascontiguousarray(frames)
        frames.setflags(write=False)
        object.__setattr__(self, "frames", frames)

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def height(self) -> int:
        return self.frames.shape[1]

    @property
    def width(self) -> int:
        return self.frames.shape[2]

    def __eq__(self, other):
        if not isinstance(other, DepthSequence):
            return NotImplemented
        return (
            self.frames.shape == other.frames.shape
            and np.array_equal(self.frames, other.frames)
            and self.subject_id == other.subject_id
            and self.action_label == other.action_label
            and self.name == other.name
        )

    def with_frames(self, frames) -> "DepthSequence":
        return DepthSequence(frames, self.subject_id, self.action_label, self.name)


def save_sequence(seq: DepthSequence, path) -> None:
    """Write a sequence in the DSEQ container (little-endian, bit-exact round trip)."""
    header = _DSEQ_HEADER.pack(
        DSEQ_MAGIC,
        DSEQ_VERSION,
        seq.width,
        seq.height,
        seq.n_frames,
        seq.subject_id,
        seq.action_label,
    )
    payload = np.ascontiguousarray(seq.frames, dtype="<u2").tobytes()
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)


def load_sequence(path) -> DepthSequence:
    """Read a DSEQ file, or a directory of 16-bit binary PGM frames.

    PGM frames are stacked in lexicographic filename order.
    """
    p = Path(path)
    if p.is_dir():
        return _load_pgm_dir(p)
    data = p.read_bytes()
    if len(data) < _DSEQ_HEADER.size:
        raise MalformedHeaderError(f"{p}: header truncated")
    magic, version, width, height, n, subject_id, action_label = _DSEQ_HEADER.unpack_from(data)
    if magic != DSEQ_MAGIC:
        raise MalformedHeaderError(f"{p}: bad magic {magic!r}")
    if version != DSEQ_VERSION:
        raise MalformedHeaderError(f"{p}: unsupported version {version}")
    if n == 0:
        raise EmptySequenceError(f"{p}: empty sequence")
    if width == 0 or height == 0:
        raise MalformedHeaderError(f"{p}: zero-sized frames")
    expected = n * width * height * 2
    got = len(data) - _DSEQ_HEADER.size
    if got < expected:
        raise TruncatedPayloadError(f"{p}: expected {expected} payload bytes, found {got}")
    if got > expected:
        raise MalformedHeaderError(f"{p}: {got - expected} trailing bytes")
    frames = (
        np.frombuffer(data, dtype="<u2", offset=_DSEQ_HEADER.size)
        .reshape(n, height, width)
        .astype(np.uint16)
    )
    return DepthSequence(frames, subject_id, action_label, name=p.stem)


def write_pgm(path, image: np.ndarray) -> None:
    """Write a 2-D uint16 array as a binary P5 PGM (maxval 65535, big-endian)."""
    image = np.asarray(image)
    if image.ndim != 2:
        raise ValueError("PGM image must be 2-D")
    header = f"P5\n{image.shape[1]} {image.shape[0]}\n65535\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(image, dtype=">u2").tobytes())


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    fields = []
    pos = 0
    # header: magic, width, height, maxval; '#' starts a comment to end of line
    while len(fields) < 4:
        if pos >= len(data):
            raise MalformedHeaderError(f"{path}: truncated PGM header")
        ch = data[pos : pos + 1]
        if ch == b"#":
            pos = data.index(b"\n", pos) + 1
        elif ch.isspace():
            pos += 1
        else:
            end = pos
            while end < len(data) and not data[end : end + 1].isspace():
                end += 1
            fields.append(data[pos:end])
            pos = end
    pos += 1  # single whitespace byte after maxval
    if fields[0] != b"P5":
        raise MalformedHeaderError(f"{path}: not a binary PGM")
    width, height, maxval = (int(f) for f in fields[1:])
    if maxval != 65535:
        raise MalformedHeaderError(f"{path}: expected 16-bit PGM, maxval={maxval}")
    n_bytes = width * height * 2
    if len(data) - pos < n_bytes:
        raise TruncatedPayloadError(f"{path}: PGM payload truncated")
    return (
        np.frombuffer(data, dtype=">u2", offset=pos, count=width * height)
        .reshape(height, width)
        .astype(np.uint16)
    )


def _load_pgm_dir(p: Path) -> DepthSequence:
    files = sorted(f for f in p.iterdir() if f.suffix.lower() == ".pgm")
    if not files:
        raise EmptySequenceError(f"{p}: no PGM frames found")
    frames = [read_pgm(f) for f in files]
    shape = frames[0].shape
    for f, img in zip(files, frames):
        if img.shape != shape:
            raise DimensionMismatchError(f"{f}: frame shape {img.shape} != {shape}")
    return DepthSequence(np.stack(frames), name=p.name)


@dataclass(frozen=True)
class BlobSpec:
    """An elliptical patch at a nominal depth, translating at a fixed velocity.

    The center starts at (cx, cy) and advances (vx, vy) pixels per frame
    while the depth advances vz millimeters per frame; the patch is absent
    before appear_frame.
    """

    cx: float
    cy: float
    rx: int
    ry: int
    depth: int
    vx: float = 0.0
    vy: float = 0.0
    vz: float = 0.0
    appear_frame: int = 0


@dataclass(frozen=True)
class SynthSpec:
    """Scene recipe for a synthetic depth action.

    A flat background plane at background_depth fills the scene, optionally
    with the leftmost far_field_cols columns out of range (depth 0). The
    actor blob, and optionally a held-object blob, occlude the plane.
    texture_mm adds a seeded per-pixel depth texture (static for the
    background, attached to each blob so it travels with it).
    """

    width: int
    height: int
    n_frames: int
    background_depth: int
    actor: BlobSpec
    held_object: Optional[BlobSpec] = None
    far_field_cols: int = 0
    texture_mm: int = 0


@dataclass(frozen=True)
class SynthResult:
    sequence: DepthSequence
    masks: np.ndarray  # (N, H, W) bool, ground-truth foreground
    boxes: tuple  # per frame: tuple of (x0, y0, x1, y1) per visible blob
    background: np.ndarray  # (H, W) uint16 ground-truth clean plate


def _ellipse_offsets(rx: int, ry: int):
    dy, dx = np.mgrid[-ry : ry + 1, -rx : rx + 1]
    inside = (dx / max(rx, 1)) ** 2 + (dy / max(ry, 1)) ** 2 <= 1.0
    return dx[inside], dy[inside]


def _blob_center(blob: BlobSpec, f: int):
    return int(round(blob.cx + f * blob.vx)), int(round(blob.cy + f * blob.vy))


def _blob_depth(blob: BlobSpec, f: int) -> int:
    return int(round(blob.depth + f * blob.vz))


def _check_blob(blob: BlobSpec, spec: SynthSpec, label: str) -> None:
    for f in range(blob.appear_frame, spec.n_frames):
        depth = _blob_depth(blob, f)
        if depth >= spec.background_depth:
            raise ValueError(f"{label} depth must stay closer than the background plane")
        if depth <= 0:
            raise ValueError(f"{label} depth must stay positive")
        cx, cy = _blob_center(blob, f)
        if cx - blob.rx < 0 or cx + blob.rx >= spec.width:
            raise ValueError(f"{label} leaves the frame at frame {f}")
        if cy - blob.ry < 0 or cy + blob.ry >= spec.height:
            raise ValueError(f"{label} leaves the frame at frame {f}")


def synth_action(spec: SynthSpec, seed: int) -> SynthResult:
    """Render a deterministic synthetic action with ground truth.

    Returns the depth sequence together with per-frame foreground masks,
    per-frame blob bounding boxes and the clean background plate, so that
    downstream stages can be checked against known answers.
    """
    if spec.n_frames < 2:
        raise ValueError("need at least 2 frames")
    blobs = [("actor", spec.actor)]
    if spec.held_object is not None:
        blobs.append(("held object", spec.held_object))
    for label, blob in blobs:
        _check_blob(blob, spec, label)

    rng = np.random.default_rng(seed)
    h, w = spec.height, spec.width

    def texture(shape):
        if spec.texture_mm <= 0:
            return np.zeros(shape, np.int64)
        return rng.integers(-spec.texture_mm, spec.texture_mm + 1, shape)

    background = np.clip(spec.background_depth + texture((h, w)), 1, 65535).astype(np.uint16)
    if spec.far_field_cols > 0:
        background[:, : spec.far_field_cols] = 0
    blob_textures = [texture((2 * b.ry + 1, 2 * b.rx + 1)) for _, b in blobs]

    frames = np.empty((spec.n_frames, h, w), np.uint16)
    masks = np.zeros((spec.n_frames, h, w), bool)
    boxes = []
    for f in range(spec.n_frames):
        img = background.copy()
        frame_boxes = []
        for (_, blob), tex in zip(blobs, blob_textures):
            if f < blob.appear_frame:
                continue
            cx, cy = _blob_center(blob, f)
            dx, dy = _ellipse_offsets(blob.rx, blob.ry)
            xs, ys = cx + dx, cy + dy
            vals = np.clip(_blob_depth(blob, f) + tex[dy + blob.ry, dx + blob.rx], 1, 65535)
            # nearer surface wins where blobs overlap
            img[ys, xs] = np.minimum(img[ys, xs], vals.astype(np.uint16))
            masks[f, ys, xs] = True
            frame_boxes.append((int(xs.min()), int(ys.min()), int(xs.max()), int(ys.max())))
        frames[f] = img
        boxes.append(tuple(frame_boxes))

    seq = DepthSequence(frames, name="synthetic")
    return SynthResult(seq, masks, tuple(boxes), background)


@dataclass(frozen=True)
class OcclusionType:
    """One of the 8 octants of the (x, y, t) volume.

    index = 1 + bit_x + 2*bit_y + 4*bit_t where bit 0 selects the half
    below the midpoint (floor(dim / 2)) and bit 1 the half at or above it.
    """

    index: int

    def __post_init__(self):
        if not 1 <= self.index <= 8:
            raise ValueError("occlusion index must be in 1..8")


def apply_occlusion(seq: DepthSequence, occ: OcclusionType) -> DepthSequence:
    """Zero out every depth value inside one octant of the sequence volume."""
    n, h, w = seq.frames.shape
    bits = occ.index - 1
    mx, my, mt = w // 2, h // 2, n // 2
    xs = slice(0, mx) if not bits & 1 else slice(mx, w)
    ys = slice(0, my) if not bits & 2 else slice(my, h)
    ts = slice(0, mt) if not bits & 4 else slice(mt, n)
    frames = seq.frames.copy()
    frames[ts, ys, xs] = 0
    return seq.with_frames(frames)


def add_pepper_noise(seq: DepthSequence, fraction: float, seed: int) -> DepthSequence:
    """Zero exactly round(fraction * W * H) distinct pixels per frame.

    Pixel positions are chosen by seeded uniform sampling without
    replacement, independently per frame; deterministic for a fixed seed.
    """
    if not 0.0 <= fraction <= 1.0:
        raise ValueError("fraction must be in [0, 1]")
    n, h, w = seq.frames.shape
    count = int(round(fraction * w * h))
    if count == 0:
        return seq.with_frames(seq.frames)
    rng = np.random.default_rng(seed)
    frames = seq.frames.copy()
    flat = frames.reshape(n, h * w)
    for f in range(n):
        idx = rng.choice(h * w, size=count, replace=False)
        flat[f, idx] = 0
    return seq.with_frames(frames)
