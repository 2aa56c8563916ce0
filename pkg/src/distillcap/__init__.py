"""Teacher-student video captioning on spectrally pooled, down-sampled inputs."""

from .compression import AudioFrames, VideoFrames, downsample_frames, spectral_pool
from .config import REP_ONLY, REP_PLUS_CE, ExperimentConfig
from .metrics import accuracy_diff, final_score, score_corpus

__all__ = [
    "AudioFrames",
    "ExperimentConfig",
    "REP_ONLY",
    "REP_PLUS_CE",
    "VideoFrames",
    "accuracy_diff",
    "downsample_frames",
    "final_score",
    "score_corpus",
    "spectral_pool",
]
__version__ = "0.1.0"
