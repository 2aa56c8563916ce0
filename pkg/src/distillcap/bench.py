"""Extraction timing and the end-to-end experiment runner.

``run_experiment`` works in stages (data, teacher, students, scores, timing,
reports). Each stage leaves its artefacts under the output directory and is
skipped on a rerun when those artefacts already exist.
"""

from __future__ import annotations

import json
import logging
import statistics
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .compression import downsample_frames, spectral_pool, validate_rate
from .config import REGIMES, ExperimentConfig
from .dataio import VideoSample, generate_toy_dataset, load_manifest
from .distillation import (
    META_FILE,
    CaptionDataset,
    DistilledModel,
    TeacherCheckpoint,
    evaluate_student,
    evaluate_teacher,
    make_extractors,
    train_student,
    train_teacher,
)
from .errors import StageError
from .features import Extractor, extract_latent
from .metrics import _truncate, accuracy_diff

log = logging.getLogger(__name__)

METRIC_ORDER = ("BLEU-1", "BLEU-2", "BLEU-3", "BLEU-4", "CIDEr", "ROUGE-L", "SCORE")


@dataclass
class TimingRecord:
    rate: float
    n_videos: int
    repeats: int
    times: list[float]
    mean: float = 0.0
    std: float = 0.0

    def __post_init__(self):
        if self.repeats < 1:
            raise ValueError("repeats must be at least 1")
        if self.times:
            self.mean = statistics.fmean(self.times)
            self.std = statistics.pstdev(self.times)


def time_feature_extraction(
    samples: Sequence[VideoSample],
    k: float,
    repeats: int,
    extractors: tuple[Extractor, Extractor],
    warmup: int = 2,
    seed: int = 0,
    n_videos: int | None = None,
    clock: Callable[[], float] = time.perf_counter,
) -> TimingRecord:
    """Wall-clock seconds per video for compression plus feature extraction.

    Media are read before timing starts, so disk I/O is excluded. The video
    subset is drawn with ``seed``; the first ``warmup`` videos are processed
    once untimed.
    """
    k = validate_rate(k)
    if not samples:
        raise ValueError("no videos to time")
    if repeats < 1:
        raise ValueError("repeats must be at least 1")
    rng = np.random.default_rng([seed, 0xBE])
    n = len(samples) if n_videos is None else min(n_videos, len(samples))
    chosen = sorted(rng.choice(len(samples), size=n, replace=False).tolist())
    media = [(samples[i].load_audio(), samples[i].load_video()) for i in chosen]
    audio_ex, visual_ex = extractors

    def run(audio, video):
        if k < 1.0:
            audio, video = spectral_pool(audio, k), downsample_frames(video, k)
        extract_latent(audio, video, audio_ex, visual_ex)

    for audio, video in media[:warmup]:
        run(audio, video)
    times = []
    for _ in range(repeats):
        for audio, video in media:
            start = clock()
            run(audio, video)
            times.append(clock() - start)
    return TimingRecord(k, n, repeats, times)


def time_diff_percent(teacher_mean_s: float, student_mean_s: float) -> float:
    """Time saved relative to the teacher, in percent, truncated to 1 decimal."""
    if teacher_mean_s <= 0:
        raise ValueError("teacher time must be positive")
    return _truncate(100.0 * (teacher_mean_s - student_mean_s) / teacher_mean_s, 1)


# ---------------------------------------------------------------------------
# reports


@dataclass
class ScoreRow:
    name: str
    regime: str
    rate: float
    metrics: dict[str, float]
    diff: float


@dataclass
class ExperimentReport:
    scores: list[ScoreRow] = field(default_factory=list)
    timings: list[TimingRecord] = field(default_factory=list)

    @property
    def teacher(self) -> ScoreRow:
        return next(r for r in self.scores if r.regime == "teacher")

    def score_table(self) -> str:
        header = ["", *METRIC_ORDER, "Diff"]
        rows = [[r.name, *(f"{r.metrics[m]:.3f}" for m in METRIC_ORDER), f"{r.diff:.3f}"] for r in self.scores]
        return _align([header, *rows])

    def timing_table(self) -> str:
        base = _teacher_timing(self.timings)
        rows = [["Network", "mean time (s)", "std (s)", "Diff (%)"]]
        for t in self.timings:
            name = "Teacher" if t.rate == 1.0 else f"Student (k = {t.rate})"
            diff = time_diff_percent(base.mean, t.mean) if base else float("nan")
            rows.append([name, f"{t.mean:.6f}", f"{t.std:.6f}", f"{diff:.1f}"])
        return _align(rows)

    def scores_json(self) -> str:
        return json.dumps([asdict(r) for r in self.scores], indent=2, sort_keys=True)

    def timings_json(self) -> str:
        base = _teacher_timing(self.timings)
        out = [dict(asdict(t), diff_percent=time_diff_percent(base.mean, t.mean) if base else None) for t in self.timings]
        return json.dumps(out, indent=2, sort_keys=True)


def _teacher_timing(timings: Sequence[TimingRecord]) -> TimingRecord | None:
    return next((t for t in timings if t.rate == 1.0), None)


def _align(rows: list[list[str]]) -> str:
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    lines = ["  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(r, widths))) for r in rows]
    return "\n".join(lines) + "\n"


def student_name(regime: str, k: float) -> str:
    return f"{regime} student (k = {k})"


def score_rows(teacher_report: dict, student_reports: dict[tuple[str, float], dict]) -> list[ScoreRow]:
    """Table-I-shaped rows: students grouped by regime, teacher last."""
    t = teacher_report["SCORE"]
    rows = [
        ScoreRow(student_name(regime, k), regime, k, rep, accuracy_diff(t, rep["SCORE"]))
        for (regime, k), rep in sorted(student_reports.items(), key=lambda kv: (REGIMES.index(kv[0][0]), kv[0][1]))
    ]
    rows.append(ScoreRow("Teacher", "teacher", 1.0, teacher_report, 0.0))
    return rows


# ---------------------------------------------------------------------------
# orchestration


def _stage(name: str):
    def wrap(fn):
        def inner(*args, **kwargs):
            log.info("stage %s", name)
            try:
                return fn(*args, **kwargs)
            except StageError:
                raise
            except Exception as exc:
                raise StageError(name, exc) from exc

        return inner

    return wrap


def student_dir(out: Path, regime: str, k: float) -> Path:
    return out / "students" / f"{regime.replace('+', '_')}_k{k}"


@_stage("data")
def stage_data(cfg: ExperimentConfig, out: Path) -> Path:
    if cfg.dataset.manifest:
        path = Path(cfg.dataset.manifest)
        if not path.is_file():
            raise FileNotFoundError(f"manifest not found: {path}")
        return path
    manifest = out / "data" / "manifest.tsv"
    if not manifest.is_file():
        generate_toy_dataset(cfg.dataset.toy_seed, cfg.dataset.toy_videos, out / "data")
    return manifest


@_stage("teacher")
def stage_teacher(cfg: ExperimentConfig, dataset: CaptionDataset, out: Path) -> TeacherCheckpoint:
    ckpt = out / "teacher"
    if (ckpt / META_FILE).is_file():
        return TeacherCheckpoint.load(ckpt)
    teacher = train_teacher(dataset, cfg.model, cfg.train, cfg.features)
    teacher.save(ckpt)
    return teacher


@_stage("students")
def stage_students(cfg: ExperimentConfig, dataset: CaptionDataset, teacher: TeacherCheckpoint | None, out: Path) -> dict:
    students = {}
    for regime in cfg.regimes:
        for k in cfg.rates:
            if k == 1.0:
                continue
            d = student_dir(out, regime, k)
            if (d / META_FILE).is_file():
                students[regime, k] = DistilledModel.load(d)
                continue
            model = train_student(dataset, teacher, k, regime, cfg.model, cfg.train)
            model.save(d)
            students[regime, k] = model
    return students


@_stage("scores")
def stage_scores(cfg: ExperimentConfig, dataset: CaptionDataset, teacher: TeacherCheckpoint, students: dict) -> list[ScoreRow]:
    teacher_report, _ = evaluate_teacher(teacher, dataset)
    reports = {key: evaluate_student(m, dataset, cfg.train.max_len)[0] for key, m in students.items()}
    return score_rows(teacher_report, reports)


@_stage("timing")
def stage_timing(cfg: ExperimentConfig, dataset: CaptionDataset) -> list[TimingRecord]:
    extractors = (dataset.bank.audio_ex, dataset.bank.visual_ex)
    b = cfg.bench
    return [
        time_feature_extraction(dataset.samples, k, b.repeats, extractors, b.warmup, b.seed, b.n_videos)
        for k in sorted(set(cfg.rates) | {1.0})
    ]


@_stage("reports")
def stage_reports(report: ExperimentReport, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "table1.txt").write_text(report.score_table(), encoding="utf-8")
    (out / "table1.json").write_text(report.scores_json(), encoding="utf-8")
    if report.timings:
        (out / "table2.txt").write_text(report.timing_table(), encoding="utf-8")
        (out / "table2.json").write_text(report.timings_json(), encoding="utf-8")


def load_dataset(cfg: ExperimentConfig, manifest: Path) -> CaptionDataset:
    return CaptionDataset.from_manifest(manifest, cfg.features, cfg.train)


def run_experiment(config: ExperimentConfig | str | Path, out, timing: bool = True) -> ExperimentReport:
    """Train the teacher and every (regime, k) student, score them and time extraction."""
    cfg = config if isinstance(config, ExperimentConfig) else ExperimentConfig.load(config)
    out = Path(out)
    manifest = stage_data(cfg, out)
    dataset = _stage("data")(load_dataset)(cfg, manifest)
    teacher = stage_teacher(cfg, dataset, out)
    students = stage_students(cfg, dataset, teacher, out)
    report = ExperimentReport(stage_scores(cfg, dataset, teacher, students))
    if timing:
        report.timings = stage_timing(cfg, dataset)
    stage_reports(report, out)
    return report


def default_extractors(cfg: ExperimentConfig, samples: Sequence[VideoSample]) -> tuple[Extractor, Extractor]:
    first = samples[0]
    return make_extractors(cfg.features, first.load_audio().data.shape[0], first.load_video().frames.shape[1])


def bench(cfg: ExperimentConfig, manifest) -> list[TimingRecord]:
    samples = load_manifest(manifest)
    if not samples:
        raise ValueError("manifest is empty")
    extractors = default_extractors(cfg, samples)
    b = cfg.bench
    return [time_feature_extraction(samples, k, b.repeats, extractors, b.warmup, b.seed, b.n_videos) for k in sorted(set(cfg.rates) | {1.0})]
