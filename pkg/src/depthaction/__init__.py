"""Depth-video action recognition: detection, description, encoding, classification."""

from .depthio import (
    BlobSpec,
    DepthSequence,
    OcclusionType,
    SynthSpec,
    add_pepper_noise,
    apply_occlusion,
    load_sequence,
    save_sequence,
    synth_action,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    "BlobSpec",
    "DepthSequence",
    "OcclusionType",
    "SynthSpec",
    "add_pepper_noise",
    "apply_occlusion",
    "load_sequence",
    "save_sequence",
    "synth_action",
]
