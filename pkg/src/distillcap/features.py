"""Frozen toy feature extractors, precomputed-feature files, and latent fusion.

The toy extractors stand in for pretrained audio and image backbones. Their
weights are drawn once from a seed and never trained.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .compression import AudioFrames, VideoFrames
from .errors import DimensionMismatchError, FormatError, ShapeError, TruncatedFileError
from .tensor import Tensor, as_tensor, concat, mean_over_time

AUDIO, VISUAL = "audio", "visual"
MODALITY_CODES = {AUDIO: 0, VISUAL: 1}

AUDIO_WINDOW = 8
AUDIO_STRIDE = 4

FEATURE_MAGIC = b"DCFT"
FEATURE_VERSION = 1


@dataclass(frozen=True)
class FeatureSequence:
    data: np.ndarray  # [T, D]
    modality: str

    def __post_init__(self):
        if self.modality not in MODALITY_CODES:
            raise ValueError(f"unknown modality {self.modality!r}")
        if self.data.ndim != 2:
            raise ShapeError(f"feature sequence must be [T, D], got {self.data.shape}")

    @property
    def length(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class Extractor:
    """A frozen feature extractor.

    ``toy-conv`` extractors carry their weights in ``params``; ``precomputed``
    ones read ``<feature_dir>/<name>.<modality>.dcft`` for the frames' name.
    """

    kind: str
    modality: str
    seed: int = 0
    dim: int = 0
    params: dict = field(default_factory=dict, compare=False, repr=False)
    feature_dir: str | None = None


def make_audio_extractor(n_rows: int, dim: int = 32, seed: int = 0) -> Extractor:
    """Strided 1-D convolution over time: ``n_rows`` channels in, ``dim`` out, width 8, stride 4."""
    rng = np.random.default_rng([seed, 0xA0])
    fan_in = n_rows * AUDIO_WINDOW
    w = rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=(fan_in, dim))
    b = rng.normal(0.0, 0.1, size=dim)
    return Extractor("toy-conv", AUDIO, seed, dim, {"w": w, "b": b, "n_rows": n_rows})


def make_visual_extractor(channels: int = 3, dim: int = 64, seed: int = 0, hidden: int = 16) -> Extractor:
    """Two strided convolutions (4x4/2 then 3x3/2) with ReLU, then global average pooling."""
    rng = np.random.default_rng([seed, 0xB1])
    f1 = channels * 4 * 4
    f2 = hidden * 3 * 3
    params = {
        "w1": rng.normal(0.0, np.sqrt(2.0 / f1), size=(f1, hidden)),
        "b1": rng.normal(0.0, 0.05, size=hidden),
        "w2": rng.normal(0.0, np.sqrt(2.0 / f2), size=(f2, dim)),
        "b2": rng.normal(0.0, 0.05, size=dim),
        "channels": channels,
    }
    return Extractor("toy-conv", VISUAL, seed, dim, params)


def precomputed_extractor(modality: str, feature_dir) -> Extractor:
    return Extractor("precomputed", modality, feature_dir=str(feature_dir))


def audio_window_starts(n_frames: int) -> np.ndarray:
    if n_frames <= AUDIO_WINDOW:
        return np.zeros(1, dtype=np.int64)
    return np.arange(0, n_frames - AUDIO_WINDOW + 1, AUDIO_STRIDE)


def _load_for(ex: Extractor, name: str | None, modality: str) -> FeatureSequence:
    if name is None:
        raise ValueError("precomputed extraction needs named frames")
    seq = load_precomputed_features(Path(ex.feature_dir) / f"{name}.{modality}.dcft")
    if seq.modality != modality:
        raise FormatError(f"feature file for {name} holds {seq.modality} features, expected {modality}")
    return seq


def extract_audio_features(audio: AudioFrames, ex: Extractor) -> FeatureSequence:
    if ex.modality != AUDIO:
        raise ValueError("extractor is not an audio extractor")
    if ex.kind == "precomputed":
        return _load_for(ex, audio.name, AUDIO)
    x = audio.data
    if x.shape[0] != ex.params["n_rows"]:
        raise ShapeError(f"audio has {x.shape[0]} spectral rows, extractor expects {ex.params['n_rows']}")
    if x.shape[1] < AUDIO_WINDOW:
        x = np.pad(x, ((0, 0), (0, AUDIO_WINDOW - x.shape[1])))
    windows = sliding_window_view(x, AUDIO_WINDOW, axis=1)[:, ::AUDIO_STRIDE]  # [S, T, 8]
    cols = windows.transpose(1, 0, 2).reshape(windows.shape[1], -1)
    out = np.maximum(cols @ ex.params["w"] + ex.params["b"], 0.0)
    return FeatureSequence(out, AUDIO)


def _conv2d(img: np.ndarray, w: np.ndarray, b: np.ndarray, size: int, stride: int) -> np.ndarray:
    # img [C, H, W] -> [H', W', out]
    patches = sliding_window_view(img, (size, size), axis=(1, 2))[:, ::stride, ::stride]
    c, h, wd = patches.shape[:3]
    cols = patches.transpose(1, 2, 0, 3, 4).reshape(h * wd, c * size * size)
    return np.maximum(cols @ w + b, 0.0).reshape(h, wd, -1)


def _visual_frame(frame: np.ndarray, p: dict) -> np.ndarray:
    x = frame.astype(np.float64) / 255.0
    h = _conv2d(x, p["w1"], p["b1"], 4, 2)
    h = _conv2d(h.transpose(2, 0, 1), p["w2"], p["b2"], 3, 2)
    return h.mean(axis=(0, 1))


def extract_visual_features(video: VideoFrames, ex: Extractor) -> FeatureSequence:
    if ex.modality != VISUAL:
        raise ValueError("extractor is not a visual extractor")
    if ex.kind == "precomputed":
        return _load_for(ex, video.name, VISUAL)
    if video.frames.shape[1] != ex.params["channels"]:
        raise ShapeError(f"frames have {video.frames.shape[1]} channels, extractor expects {ex.params['channels']}")
    # frames go through one at a time so every row depends on its own frame only
    rows = [_visual_frame(f, ex.params) for f in video.frames]
    return FeatureSequence(np.stack(rows), VISUAL)


def pool_and_fuse(audio: FeatureSequence, visual: FeatureSequence) -> np.ndarray:
    """Mean over time per modality, then audio entries followed by visual entries."""
    if audio.modality != AUDIO or visual.modality != VISUAL:
        raise ValueError("pool_and_fuse expects (audio, visual) feature sequences")
    fused = concat(mean_over_time(as_tensor(audio.data)), mean_over_time(as_tensor(visual.data)))
    return fused.data


def pool_and_fuse_tensor(audio: Tensor, visual: Tensor) -> Tensor:
    return concat(mean_over_time(audio), mean_over_time(visual))


# layout (little-endian): b"DCFT", u16 version, u8 modality, u64 T, u64 D, T*D float32


def save_features(path, seq: FeatureSequence) -> None:
    header = FEATURE_MAGIC + struct.pack("<HBQQ", FEATURE_VERSION, MODALITY_CODES[seq.modality], *seq.data.shape)
    Path(path).write_bytes(header + np.ascontiguousarray(seq.data, dtype="<f4").tobytes())


def load_precomputed_features(path) -> FeatureSequence:
    buf = Path(path).read_bytes()
    if len(buf) < 4 or buf[:4] != FEATURE_MAGIC:
        raise FormatError(f"{path}: bad magic, not a feature file")
    head = struct.calcsize("<HBQQ")
    if len(buf) < 4 + head:
        raise TruncatedFileError(f"{path}: header truncated")
    version, code, t, d = struct.unpack_from("<HBQQ", buf, 4)
    if version != FEATURE_VERSION:
        raise FormatError(f"{path}: unsupported feature file version {version}")
    modality = {v: k for k, v in MODALITY_CODES.items()}.get(code)
    if modality is None:
        raise FormatError(f"{path}: unknown modality code {code}")
    body = buf[4 + head :]
    need = 4 * t * d
    if len(body) < need:
        raise TruncatedFileError(f"{path}: expected {need} data bytes, found {len(body)}")
    if len(body) > need:
        raise DimensionMismatchError(f"{path}: {len(body)} data bytes do not match header dims {t}x{d}")
    data = np.frombuffer(body, dtype="<f4").reshape(t, d).astype(np.float32)
    return FeatureSequence(data, modality)


def extract_latent(audio: AudioFrames, video: VideoFrames, audio_ex: Extractor, visual_ex: Extractor) -> np.ndarray:
    return pool_and_fuse(extract_audio_features(audio, audio_ex), extract_visual_features(video, visual_ex))
