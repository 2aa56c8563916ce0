"""Frame-count reduction front-ends driven by a compression rate ``k``.

Audio is compressed by spectral pooling: DFT along time, keep the lowest
frequencies of a DC-centred crop, inverse DFT at the shorter length. Video is
compressed by picking uniformly spaced frames.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConsistencyError, InvalidRateError, ShapeError

RESIDUE_LIMIT = 1e-6


@dataclass(frozen=True)
class AudioFrames:
    """Spectral-frame matrix of shape [S, N_a] (feature rows by time)."""

    data: np.ndarray
    frame_rate: float = 1.0
    name: str | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.data.ndim != 2 or min(self.data.shape) < 1:
            raise ShapeError(f"audio frames must be a non-empty S x N matrix, got {self.data.shape}")
        if not np.isfinite(self.data).all():
            raise ShapeError("audio frames contain non-finite values")

    @property
    def n_frames(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class VideoFrames:
    """``N_v`` uint8 images stacked as [N_v, C, H, W]."""

    frames: np.ndarray
    fps: float = 1.0
    name: str | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.frames.ndim != 4 or self.frames.shape[0] < 1:
            raise ShapeError(f"video frames must be [N, C, H, W] with N >= 1, got {self.frames.shape}")
        if self.frames.dtype != np.uint8:
            raise ShapeError(f"video frames must be uint8, got {self.frames.dtype}")

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]


def validate_rate(k: float) -> float:
    k = float(k)
    if not 0.0 < k <= 1.0:
        raise InvalidRateError(f"compression rate must lie in (0, 1], got {k}")
    return k


def compressed_length(n: int, k: float) -> int:
    """Number of frames kept: ``max(1, round_half_up(k * n))``."""
    if n < 1:
        raise ValueError("frame count must be positive")
    k = validate_rate(k)
    return min(n, max(1, math.floor(k * n + 0.5 + 1e-9)))


def kept_frequencies(m: int) -> np.ndarray:
    """Signed frequencies of a DC-centred crop of width ``m``.

    For even ``m`` the extra bin sits on the negative side: ``-m/2 .. m/2 - 1``.
    """
    return np.arange(-(m // 2), (m - 1) // 2 + 1)


def spectral_pool(audio: AudioFrames, k: float) -> AudioFrames:
    """Compress every spectral row along time to ``compressed_length(N_a, k)`` samples."""
    x = audio.data
    n = x.shape[1]
    m = compressed_length(n, k)
    if m == n:
        return AudioFrames(x.copy(), audio.frame_rate, audio.name)
    spec = np.fft.fft(x, axis=1)
    freqs = kept_frequencies(m)
    cropped = np.zeros((x.shape[0], m), dtype=complex)
    cropped[:, freqs % m] = spec[:, freqs % n] * (m / n)
    if m % 2 == 0:
        # the lone -m/2 bin aliases onto the length-m Nyquist bin, which must be
        # real for a real signal; keeping its real part equals taking Re(IDFT)
        nyq = m // 2
        cropped[:, nyq] = cropped[:, nyq].real
    out = np.fft.ifft(cropped, axis=1)
    residue = np.abs(out.imag).max(initial=0.0)
    if residue > RESIDUE_LIMIT:
        raise ConsistencyError(f"spectral pooling left imaginary residue {residue:.3g}")
    return AudioFrames(np.ascontiguousarray(out.real), audio.frame_rate * m / n, audio.name)


def downsample_indices(n: int, k: float) -> np.ndarray:
    """Source frame ``floor(j / k)`` for each output position ``j``."""
    k = validate_rate(k)
    m = compressed_length(n, k)
    idx = np.floor(np.arange(m) / k + 1e-9).astype(np.int64)
    return np.minimum(idx, n - 1)


def downsample_frames(video: VideoFrames, k: float) -> VideoFrames:
    idx = downsample_indices(video.n_frames, k)
    return VideoFrames(video.frames[idx].copy(), video.fps * len(idx) / video.n_frames, video.name)
