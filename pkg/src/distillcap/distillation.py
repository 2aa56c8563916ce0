"""Teacher/student training with latent-representation distillation.

The teacher captioner sees latents from uncompressed frames. A student sees
latents from frames compressed at rate ``k``; a two-hidden-layer adapter maps
them towards the teacher's latents under an L1 loss. Two student regimes:

* ``rep``: fit the adapter on L1 alone, freeze it, then train a fresh
  captioner with cross-entropy on the adapted latents.
* ``rep+ce``: train adapter and captioner jointly on CE + lambda * L1.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import captioner as cap
from .compression import downsample_frames, spectral_pool, validate_rate
from .config import REGIMES, REP_ONLY, FeatureConfig, ModelConfig, TrainConfig
from .dataio import TOY_SPECTRAL_ROWS, VideoSample, Vocabulary, build_vocabulary, load_manifest, split_samples, tokenize
from .errors import MissingCheckpointError, ShapeError
from .features import Extractor, extract_latent, make_audio_extractor, make_visual_extractor
from .metrics import score_corpus
from .tensor import Adam, Tensor, add, as_tensor, backward, l1_loss, load_checkpoint, matmul, parameter, relu, save_checkpoint

log = logging.getLogger(__name__)

PARAMS_FILE = "params.dckp"
META_FILE = "meta.json"
LOSS_FILE = "loss.log"


# ---------------------------------------------------------------------------
# adapter


def init_adapter(d_in: int, d_out: int, hidden: int | None = None, seed: int = 0) -> dict[str, Tensor]:
    """Three linear maps ``d_in -> hidden -> hidden -> d_out``; hidden defaults to ``d_out``."""
    hidden = d_out if hidden is None else hidden
    rng = np.random.default_rng([seed, 0xAD])
    params = {}
    for i, (a, b) in enumerate([(d_in, hidden), (hidden, hidden), (hidden, d_out)]):
        bound = np.sqrt(1.0 / a)
        params[f"l{i}.weight"] = parameter(rng.uniform(-bound, bound, size=(a, b)))
        params[f"l{i}.bias"] = parameter(rng.uniform(-bound, bound, size=b))
    return params


def identity_adapter(dim: int) -> dict[str, Tensor]:
    eye = np.eye(dim)
    return {f"l{i}.{kind}": parameter(eye if kind == "weight" else np.zeros(dim)) for i in range(3) for kind in ("weight", "bias")}


def adapter_forward(ad, student_latent) -> Tensor:
    """linear -> ReLU -> linear -> ReLU -> linear."""
    x = as_tensor(student_latent)
    if x.shape[-1] != ad["l0.weight"].shape[0]:
        raise ShapeError(f"adapter expects inputs of size {ad['l0.weight'].shape[0]}, got {x.shape[-1]}")
    x = relu(add(matmul(x, ad["l0.weight"]), ad["l0.bias"]))
    x = relu(add(matmul(x, ad["l1.weight"]), ad["l1.bias"]))
    return add(matmul(x, ad["l2.weight"]), ad["l2.bias"])


# ---------------------------------------------------------------------------
# data


def make_extractors(cfg: FeatureConfig, n_rows: int = TOY_SPECTRAL_ROWS, channels: int = 3) -> tuple[Extractor, Extractor]:
    return (
        make_audio_extractor(n_rows, cfg.audio_dim, cfg.extractor_seed),
        make_visual_extractor(channels, cfg.visual_dim, cfg.extractor_seed),
    )


def compressed_latent(sample: VideoSample, k: float, audio_ex: Extractor, visual_ex: Extractor) -> np.ndarray:
    audio, video = sample.load_audio(), sample.load_video()
    if k < 1.0:
        audio, video = spectral_pool(audio, k), downsample_frames(video, k)
    return extract_latent(audio, video, audio_ex, visual_ex)


class FeatureBank:
    """Fused latents for every sample, computed once per compression rate.

    Latents are standardised per rate with frozen mean/std statistics taken
    from the training split (``fit_index``), which makes the standardisation
    part of the fixed feature pipeline rather than something learned.
    """

    def __init__(self, samples: Sequence[VideoSample], audio_ex: Extractor, visual_ex: Extractor, fit_index=None):
        self.samples = list(samples)
        self.audio_ex = audio_ex
        self.visual_ex = visual_ex
        self.fit_index = None if fit_index is None else list(fit_index)
        self._raw: dict[float, np.ndarray] = {}
        self._stats: dict[float, tuple[np.ndarray, np.ndarray]] = {}

    def raw_latents(self, k: float) -> np.ndarray:
        k = validate_rate(k)
        if k not in self._raw:
            arr = np.stack([compressed_latent(s, k, self.audio_ex, self.visual_ex) for s in self.samples])
            arr.setflags(write=False)
            self._raw[k] = arr
        return self._raw[k]

    def stats(self, k: float):
        k = validate_rate(k)
        if self.fit_index is None:
            return None
        if k not in self._stats:
            self._stats[k] = latent_stats(self.raw_latents(k)[self.fit_index])
        return self._stats[k]

    def normalize(self, latent: np.ndarray, k: float) -> np.ndarray:
        stats = self.stats(k)
        if stats is None:
            return latent
        return (latent - stats[0]) / stats[1]

    def latents(self, k: float) -> np.ndarray:
        return self.normalize(self.raw_latents(k), k)

    @property
    def latent_dim(self) -> int:
        return self.audio_ex.dim + self.visual_ex.dim


def latent_stats(latents: np.ndarray, floor: float = 1e-6) -> tuple[np.ndarray, np.ndarray]:
    return latents.mean(axis=0), np.maximum(latents.std(axis=0), floor)


@dataclass
class CaptionDataset:
    manifest: Path
    samples: list[VideoSample]
    train_idx: list[int]
    test_idx: list[int]
    vocab: Vocabulary
    bank: FeatureBank

    @classmethod
    def from_manifest(cls, manifest, features: FeatureConfig, train: TrainConfig) -> "CaptionDataset":
        samples = load_manifest(manifest)
        if not samples:
            raise ValueError("dataset is empty")
        tr, te = split_samples(samples, train.split_seed, train.train_fraction)
        index = {s.id: i for i, s in enumerate(samples)}
        train_idx = [index[s.id] for s in tr]
        test_idx = [index[s.id] for s in te]
        vocab = build_vocabulary((tokenize(c) for i in train_idx for c in samples[i].captions), train.min_freq)
        first = samples[0].load_video()
        n_rows = samples[0].load_audio().data.shape[0]
        bank = FeatureBank(samples, *make_extractors(features, n_rows, first.frames.shape[1]), fit_index=train_idx)
        return cls(Path(manifest), samples, train_idx, test_idx, vocab, bank)

    def pairs(self, indices: Sequence[int]) -> list[tuple[int, list[int]]]:
        """Every (sample index, encoded caption) combination for ``indices``."""
        return [(i, self.vocab.encode(tokenize(c))) for i in indices for c in self.samples[i].captions]

    def references(self, indices: Sequence[int]) -> list[list[list[str]]]:
        return [[tokenize(c) for c in self.samples[i].captions] for i in indices]


# ---------------------------------------------------------------------------
# training loop


def _fit(params: dict[str, Tensor], items: Sequence, loss_fn: Callable, epochs: int, cfg: TrainConfig, seed_tag: int, split: str):
    """Mini-batch Adam over ``items``; returns ``[(epoch, split, mean_loss)]``."""
    opt = Adam(params, lr=cfg.lr)
    log_rows = []
    for epoch in range(epochs):
        rng = np.random.default_rng([cfg.seed, seed_tag, epoch])
        order = rng.permutation(len(items))
        total = 0.0
        for start in range(0, len(items), cfg.batch_size):
            batch = [items[j] for j in order[start : start + cfg.batch_size]]
            opt.zero_grad()
            loss = loss_fn(batch, rng)
            backward(loss)
            opt.step()
            total += loss.item() * len(batch)
        log_rows.append((epoch, split, total / len(items)))
        log.debug("%s epoch %d loss %.5f", split, epoch, log_rows[-1][2])
    return log_rows


def _ce_loss_fn(params, latents: np.ndarray, p_drop: float):
    def loss_fn(batch, rng):
        idx = [i for i, _ in batch]
        return cap.batch_teacher_forcing_loss(params, latents[idx], [c for _, c in batch], True, p_drop, rng)

    return loss_fn


def _captioner_config(dataset: CaptionDataset, model: ModelConfig, latent_dim: int) -> cap.CaptionerConfig:
    return cap.CaptionerConfig(len(dataset.vocab), latent_dim, model.hidden, model.hidden, model.layers, model.dropout, model.seed)


# ---------------------------------------------------------------------------
# checkpoints


def _digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()[:16]


def write_loss_log(path, rows) -> None:
    Path(path).write_text("".join(f"{e}\t{s}\t{l!r}\n" for e, s, l in rows), encoding="utf-8")


def read_loss_log(path) -> list[tuple[int, str, float]]:
    rows = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        e, s, l = line.split("\t")
        rows.append((int(e), s, float(l)))
    return rows


@dataclass
class TeacherCheckpoint:
    captioner: dict[str, Tensor]
    captioner_config: cap.CaptionerConfig
    features: FeatureConfig
    train: TrainConfig
    vocab: Vocabulary
    manifest: str
    loss_log: list = field(default_factory=list)
    id: str = ""

    def save(self, out_dir) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        save_checkpoint(out / PARAMS_FILE, {f"captioner.{k}": v for k, v in self.captioner.items()})
        self.id = _digest(out / PARAMS_FILE)
        meta = {
            "kind": "teacher",
            "id": self.id,
            "manifest": str(self.manifest),
            "captioner": self.captioner_config.to_dict(),
            "features": vars(self.features),
            "train": vars(self.train),
            "vocab": self.vocab.to_dict(),
        }
        (out / META_FILE).write_text(json.dumps(meta, indent=2, sort_keys=True), encoding="utf-8")
        write_loss_log(out / LOSS_FILE, self.loss_log)
        return out

    @classmethod
    def load(cls, ckpt_dir) -> "TeacherCheckpoint":
        d = Path(ckpt_dir)
        if not (d / PARAMS_FILE).is_file() or not (d / META_FILE).is_file():
            raise MissingCheckpointError(f"teacher checkpoint not found: {d}")
        meta = json.loads((d / META_FILE).read_text(encoding="utf-8"))
        arrays = load_checkpoint(d / PARAMS_FILE)
        params = {k[len("captioner."):]: parameter(v) for k, v in arrays.items() if k.startswith("captioner.")}
        return cls(
            params,
            cap.CaptionerConfig(**meta["captioner"]),
            FeatureConfig(**meta["features"]),
            TrainConfig(**meta["train"]),
            Vocabulary.from_dict(meta["vocab"]),
            meta["manifest"],
            read_loss_log(d / LOSS_FILE) if (d / LOSS_FILE).exists() else [],
            meta["id"],
        )


@dataclass
class DistilledModel:
    adapter: dict[str, Tensor]
    captioner: dict[str, Tensor]
    captioner_config: cap.CaptionerConfig
    rate: float
    regime: str
    lambda_rep: float
    teacher_id: str
    loss_log: list = field(default_factory=list)

    def save(self, out_dir) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        params = {f"adapter.{k}": v for k, v in self.adapter.items()}
        params.update({f"captioner.{k}": v for k, v in self.captioner.items()})
        save_checkpoint(out / PARAMS_FILE, params)
        meta = {
            "kind": "student",
            "rate": self.rate,
            "regime": self.regime,
            "lambda_rep": self.lambda_rep,
            "teacher_id": self.teacher_id,
            "captioner": self.captioner_config.to_dict(),
        }
        (out / META_FILE).write_text(json.dumps(meta, indent=2, sort_keys=True), encoding="utf-8")
        write_loss_log(out / LOSS_FILE, self.loss_log)
        return out

    @classmethod
    def load(cls, ckpt_dir) -> "DistilledModel":
        d = Path(ckpt_dir)
        if not (d / PARAMS_FILE).is_file():
            raise MissingCheckpointError(f"student checkpoint not found: {d}")
        meta = json.loads((d / META_FILE).read_text(encoding="utf-8"))
        arrays = load_checkpoint(d / PARAMS_FILE)
        pick = lambda p: {k[len(p):]: parameter(v) for k, v in arrays.items() if k.startswith(p)}  # noqa: E731
        return cls(
            pick("adapter."),
            pick("captioner."),
            cap.CaptionerConfig(**meta["captioner"]),
            meta["rate"],
            meta["regime"],
            meta["lambda_rep"],
            meta["teacher_id"],
            read_loss_log(d / LOSS_FILE) if (d / LOSS_FILE).exists() else [],
        )


# ---------------------------------------------------------------------------
# regimes


def train_teacher(dataset: CaptionDataset, model: ModelConfig, train: TrainConfig, features: FeatureConfig | None = None) -> TeacherCheckpoint:
    """Train a captioner with cross-entropy on uncompressed latents."""
    if not dataset.train_idx:
        raise ValueError("empty training set")
    latents = dataset.bank.latents(1.0)
    ccfg = _captioner_config(dataset, model, dataset.bank.latent_dim)
    params = cap.init_captioner(ccfg)
    rows = _fit(params, dataset.pairs(dataset.train_idx), _ce_loss_fn(params, latents, model.dropout), train.epochs, train, 1, "train")
    features = features or FeatureConfig(dataset.bank.audio_ex.dim, dataset.bank.visual_ex.dim, dataset.bank.audio_ex.seed)
    return TeacherCheckpoint(params, ccfg, features, train, dataset.vocab, str(dataset.manifest), rows)


def rep_loss_batch(adapter, student_latents, teacher_latents) -> Tensor:
    return l1_loss(adapter_forward(adapter, student_latents), teacher_latents)


def compute_rep_loss(teacher_bank: FeatureBank, adapter, sample: VideoSample, k: float) -> Tensor:
    """L1 between the adapted ``k``-compressed latent and the uncompressed one.

    The teacher side is a plain array, so no gradient can reach it.
    """
    k = validate_rate(k)
    teacher_latent = teacher_bank.normalize(compressed_latent(sample, 1.0, teacher_bank.audio_ex, teacher_bank.visual_ex), 1.0)
    student_latent = teacher_bank.normalize(compressed_latent(sample, k, teacher_bank.audio_ex, teacher_bank.visual_ex), k)
    return l1_loss(adapter_forward(adapter, student_latent), teacher_latent)


def train_adapter(adapter, student: np.ndarray, teacher: np.ndarray, indices: Sequence[int], epochs: int, train: TrainConfig):
    def loss_fn(batch, rng):
        return rep_loss_batch(adapter, student[batch], teacher[batch])

    return _fit(adapter, list(indices), loss_fn, epochs, train, 2, "train/rep")


def train_student(
    dataset: CaptionDataset,
    teacher: TeacherCheckpoint | None,
    k: float,
    regime: str,
    model: ModelConfig,
    train: TrainConfig,
) -> DistilledModel:
    k = validate_rate(k)
    if teacher is None:
        raise MissingCheckpointError("teacher checkpoint not found")
    if regime not in REGIMES:
        raise ValueError(f"unknown regime {regime!r}")
    teacher_latents = dataset.bank.latents(1.0)
    student_latents = dataset.bank.latents(k)
    d = dataset.bank.latent_dim
    adapter = init_adapter(d, teacher.captioner_config.latent_dim, seed=model.seed)
    ccfg = _captioner_config(dataset, model, teacher.captioner_config.latent_dim)
    captioner = cap.init_captioner(ccfg)
    pairs = dataset.pairs(dataset.train_idx)

    if regime == REP_ONLY:
        rows = train_adapter(adapter, student_latents, teacher_latents, dataset.train_idx, train.adapter_epochs, train)
        adapted = adapter_forward(adapter, student_latents).data
        rows += _fit(captioner, pairs, _ce_loss_fn(captioner, adapted, model.dropout), train.epochs, train, 3, "train/ce")
    else:
        lam = train.lambda_rep
        joint = {f"adapter.{n}": p for n, p in adapter.items()}
        joint.update({f"captioner.{n}": p for n, p in captioner.items()})

        def loss_fn(batch, rng):
            idx = [i for i, _ in batch]
            adapted = adapter_forward(adapter, student_latents[idx])
            ce = cap.batch_teacher_forcing_loss(captioner, adapted, [c for _, c in batch], True, model.dropout, rng)
            if lam == 0.0:
                return ce
            return add(ce, l1_loss(adapted, teacher_latents[idx]) * lam)

        rows = _fit(joint, pairs, loss_fn, train.epochs, train, 4, "train/joint")
    return DistilledModel(adapter, captioner, ccfg, k, regime, train.lambda_rep, teacher.id, rows)


# ---------------------------------------------------------------------------
# evaluation


def caption_latents(params, latents: np.ndarray, vocab: Vocabulary, max_len: int) -> list[list[str]]:
    return [vocab.decode(ids) for ids in cap.generate_captions(params, latents, max_len)]


def evaluate_teacher(teacher: TeacherCheckpoint, dataset: CaptionDataset, indices=None):
    idx = dataset.test_idx if indices is None else list(indices)
    hyps = caption_latents(teacher.captioner, dataset.bank.latents(1.0)[idx], dataset.vocab, teacher.train.max_len)
    return score_corpus(hyps, dataset.references(idx)), hyps


def evaluate_student(student: DistilledModel, dataset: CaptionDataset, max_len: int = 20, indices=None):
    idx = dataset.test_idx if indices is None else list(indices)
    adapted = adapter_forward(student.adapter, dataset.bank.latents(student.rate)[idx]).data
    hyps = caption_latents(student.captioner, adapted, dataset.vocab, max_len)
    return score_corpus(hyps, dataset.references(idx)), hyps
