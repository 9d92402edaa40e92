"""Spatiotemporal feature-reduction network for scene-independent change detection."""

from .datasets import SampleWindow, SplitManifest, VideoSequence, WindowSet, synth_sequence, table2_manifest
from .estimator import ChangeDetector
from .network import NetworkParams, forward, init_params, param_count
from .trainer import SGDConfig, load_checkpoint, save_checkpoint, train

__all__ = [
    "ChangeDetector",
    "NetworkParams",
    "SGDConfig",
    "SampleWindow",
    "SplitManifest",
    "VideoSequence",
    "WindowSet",
    "forward",
    "init_params",
    "load_checkpoint",
    "param_count",
    "save_checkpoint",
    "synth_sequence",
    "table2_manifest",
    "train",
]

__version__ = "0.1.0"
