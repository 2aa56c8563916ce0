"""Manifests, raw media files, caption tokenization, vocabularies, and the toy dataset.

Manifest lines are ``id<TAB>audio_path<TAB>video_path<TAB>cap1|cap2|...``;
relative paths resolve against the manifest's directory.
"""

from __future__ import annotations

import itertools
import struct
import unicodedata
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .compression import AudioFrames, VideoFrames
from .errors import DimensionMismatchError, DuplicateIdError, FormatError, ManifestError, TruncatedFileError

PAD, BOS, EOS, UNK = 0, 1, 2, 3
SPECIALS = ("<pad>", "<bos>", "<eos>", "<unk>")

AUDIO_MAGIC = b"DCAU"
VIDEO_MAGIC = b"DCVI"
MEDIA_VERSION = 1


def tokenize(raw: str | bytes) -> list[str]:
    """Case-fold, drop Unicode punctuation, split on whitespace."""
    if isinstance(raw, bytes):
        raw = raw.decode("utf-8")  # UnicodeDecodeError on invalid input
    text = "".join(ch for ch in raw.casefold() if not unicodedata.category(ch).startswith("P"))
    return text.split()


class Vocabulary:
    """Token/index bijection with PAD, BOS, EOS, UNK at indices 0..3."""

    def __init__(self, tokens: Sequence[str], min_freq: int = 1):
        self.itos = list(SPECIALS) + list(tokens)
        self.stoi = {t: i for i, t in enumerate(self.itos)}
        if len(self.stoi) != len(self.itos):
            raise ValueError("vocabulary tokens must be unique")
        self.min_freq = min_freq

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, token: str) -> bool:
        return token in self.stoi

    def index(self, token: str) -> int:
        return self.stoi.get(token, UNK)

    def encode(self, tokens: Iterable[str]) -> list[int]:
        """Wrap tokens as ``BOS ... EOS``; unknown words become UNK."""
        return [BOS] + [self.index(t) for t in tokens] + [EOS]

    def decode(self, ids: Iterable[int]) -> list[str]:
        """Inverse of :meth:`encode`: drops BOS/PAD and stops at EOS."""
        out = []
        for i in ids:
            if i == EOS:
                break
            if i in (PAD, BOS):
                continue
            out.append(self.itos[i])
        return out

    def to_dict(self) -> dict:
        return {"tokens": self.itos[len(SPECIALS):], "min_freq": self.min_freq}

    @classmethod
    def from_dict(cls, d: dict) -> "Vocabulary":
        return cls(d["tokens"], d.get("min_freq", 1))


def build_vocabulary(corpus: Iterable[Sequence[str]], min_freq: int = 1) -> Vocabulary:
    """Keep tokens seen at least ``min_freq`` times, ordered by (-count, token)."""
    counts = Counter(t for sent in corpus for t in sent)
    kept = sorted((t for t, c in counts.items() if c >= min_freq and t not in SPECIALS), key=lambda t: (-counts[t], t))
    return Vocabulary(kept, min_freq)


@dataclass(frozen=True)
class VideoSample:
    id: str
    audio_path: Path
    video_path: Path
    captions: tuple[str, ...]

    def load_audio(self) -> AudioFrames:
        return read_audio(self.audio_path, name=self.id)

    def load_video(self) -> VideoFrames:
        return read_video(self.video_path, name=self.id)


def load_manifest(path) -> list[VideoSample]:
    path = Path(path)
    root = path.parent
    samples: list[VideoSample] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            fields = line.split("\t")
            if len(fields) != 4:
                raise ManifestError(f"expected 4 tab-separated fields, found {len(fields)}", lineno)
            vid, audio, video, caps = fields
            if not vid:
                raise ManifestError("empty id", lineno)
            captions = tuple(c.strip() for c in caps.split("|") if c.strip())
            if not captions:
                raise ManifestError(f"video {vid!r} has no captions", lineno)
            if vid in seen:
                raise DuplicateIdError(f"duplicate id {vid!r}", lineno)
            seen.add(vid)
            samples.append(VideoSample(vid, root / audio, root / video, captions))
    return samples


def _manifest_path(p, root: Path) -> str:
    # media under the manifest's directory is stored relative to it, anything else absolute
    p = Path(p).resolve()
    return (p.relative_to(root) if p.is_relative_to(root) else p).as_posix()


def write_manifest(path, samples: Iterable[VideoSample]) -> None:
    root = Path(path).parent.resolve()
    lines = []
    for s in samples:
        a, v = _manifest_path(s.audio_path, root), _manifest_path(s.video_path, root)
        lines.append("\t".join([s.id, a, v, "|".join(s.captions)]))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def split_samples(samples: Sequence[VideoSample], seed: int, train_fraction: float = 0.8):
    """Seeded train/test split; both halves keep manifest order."""
    n = len(samples)
    order = np.random.default_rng([seed, 0x5B]).permutation(n)
    n_train = min(n - 1, max(1, int(round(train_fraction * n)))) if n > 1 else n
    train_idx = sorted(order[:n_train].tolist())
    test_idx = sorted(order[n_train:].tolist())
    return [samples[i] for i in train_idx], [samples[i] for i in test_idx]


# raw media: magic, u16 version, f64 rate, then dims (u64) and data
#   DCAU: S, N_a, S*N_a float32
#   DCVI: N_v, C, H, W, N_v*C*H*W uint8


def write_audio(path, audio: AudioFrames) -> None:
    head = AUDIO_MAGIC + struct.pack("<HdQQ", MEDIA_VERSION, audio.frame_rate, *audio.data.shape)
    Path(path).write_bytes(head + np.ascontiguousarray(audio.data, dtype="<f4").tobytes())


def write_video(path, video: VideoFrames) -> None:
    head = VIDEO_MAGIC + struct.pack("<HdQQQQ", MEDIA_VERSION, video.fps, *video.frames.shape)
    Path(path).write_bytes(head + np.ascontiguousarray(video.frames).tobytes())


def _read_media(path, magic: bytes, fmt: str, itemsize: int):
    buf = Path(path).read_bytes()
    if buf[:4] != magic:
        raise FormatError(f"{path}: bad magic, expected {magic!r}")
    size = struct.calcsize(fmt)
    if len(buf) < 4 + size:
        raise TruncatedFileError(f"{path}: header truncated")
    version, rate, *dims = struct.unpack_from(fmt, buf, 4)
    if version != MEDIA_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    body = buf[4 + size :]
    need = itemsize * int(np.prod(dims))
    if len(body) < need:
        raise TruncatedFileError(f"{path}: expected {need} data bytes, found {len(body)}")
    if len(body) > need:
        raise DimensionMismatchError(f"{path}: data size does not match header dims {dims}")
    return rate, dims, body


def read_audio(path, name: str | None = None) -> AudioFrames:
    rate, dims, body = _read_media(path, AUDIO_MAGIC, "<HdQQ", 4)
    data = np.frombuffer(body, dtype="<f4").reshape(dims).astype(np.float64)
    return AudioFrames(data, rate, name)


def read_video(path, name: str | None = None) -> VideoFrames:
    rate, dims, body = _read_media(path, VIDEO_MAGIC, "<HdQQQQ", 1)
    return VideoFrames(np.frombuffer(body, dtype=np.uint8).reshape(dims).copy(), rate, name)


# ---------------------------------------------------------------------------
# synthetic toy corpus

TOY_SPECTRAL_ROWS = 16
TOY_AUDIO_FRAMES = 64
TOY_VIDEO_FRAMES = 20
TOY_FRAME_SIZE = 32

SHAPES = ("dot", "bar", "pillar")
COLORS = {"red": 0, "green": 1, "blue": 2}
# sound class -> (active spectral rows, temporal modulation in cycles per clip)
SOUNDS = {
    "beeping": ((2, 3, 4), 16.0),
    "humming": ((9, 10, 11), 0.0),
    "whistling": ((13, 14, 15), 3.0),
}

TEMPLATES = (
    "a {color} {shape} moves while {sound} is heard",
    "a {color} {shape} moving with {sound} in the background",
)


def toy_captions(shape: str, color: str, sound: str) -> tuple[str, ...]:
    return tuple(t.format(shape=shape, color=color, sound=sound) for t in TEMPLATES)


def _shape_mask(shape: str, cy: float, cx: float, size: int) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size]
    dy, dx = np.abs(yy - cy), np.abs(xx - cx)
    if shape == "dot":
        return dy * dy + dx * dx <= 16.0
    if shape == "bar":
        return (dy <= 3) & (dx <= 11)
    return (dy <= 11) & (dx <= 3)


def _toy_video(rng: np.random.Generator, shape: str, color: str) -> VideoFrames:
    n, size = TOY_VIDEO_FRAMES, TOY_FRAME_SIZE
    start = rng.uniform(8.0, size - 8.0, size=2)
    end = rng.uniform(8.0, size - 8.0, size=2)
    frames = np.empty((n, 3, size, size), dtype=np.uint8)
    for t in range(n):
        cy, cx = start + (end - start) * t / (n - 1)
        img = rng.normal(30.0, 8.0, size=(3, size, size))
        img[COLORS[color], _shape_mask(shape, cy, cx, size)] = 220.0
        frames[t] = np.clip(img, 0, 255).astype(np.uint8)
    return VideoFrames(frames, fps=10.0)


def _toy_audio(rng: np.random.Generator, sound: str) -> AudioFrames:
    rows, cycles = SOUNDS[sound]
    t = np.arange(TOY_AUDIO_FRAMES) / TOY_AUDIO_FRAMES
    data = rng.normal(0.0, 0.05, size=(TOY_SPECTRAL_ROWS, TOY_AUDIO_FRAMES))
    for row in rows:
        # a static tone has no phase; a random one would scale its level
        phase = rng.uniform(0, 2 * np.pi) if cycles else 0.0
        envelope = 0.5 + 0.5 * np.cos(2 * np.pi * cycles * t + phase)
        data[row] += rng.uniform(0.8, 1.2) * envelope
    return AudioFrames(data, frame_rate=32.0)


def generate_toy_dataset(seed: int, n_videos: int, out_dir) -> Path:
    """Write a synthetic corpus and its manifest; return the manifest path.

    Each video shows one coloured shape drifting across the frame with one
    sound class on the audio rows, and its captions name all three.
    """
    if n_videos < 2:
        raise ValueError("toy dataset needs at least 2 videos")
    out = Path(out_dir)
    (out / "media").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng([seed, 0x70])
    combos = list(itertools.product(SHAPES, COLORS, SOUNDS))
    # shuffled passes over every combination, so the corpus covers them all
    order = np.concatenate([rng.permutation(len(combos)) for _ in range(-(-n_videos // len(combos)))])
    samples = []
    for i in range(n_videos):
        shape, color, sound = combos[order[i]]
        vid = f"toy{i:04d}"
        audio_path = out / "media" / f"{vid}.dcau"
        video_path = out / "media" / f"{vid}.dcvi"
        write_audio(audio_path, _toy_audio(rng, sound))
        write_video(video_path, _toy_video(rng, shape, color))
        samples.append(VideoSample(vid, audio_path, video_path, toy_captions(shape, color, sound)))
    manifest = out / "manifest.tsv"
    write_manifest(manifest, samples)
    return manifest
