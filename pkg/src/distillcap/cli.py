"""Command-line entry point: ``distillcap <verb> [options]``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from . import bench
from .compression import downsample_frames, spectral_pool, validate_rate
from .config import REGIMES, ExperimentConfig
from .dataio import generate_toy_dataset, load_manifest
from .distillation import META_FILE, CaptionDataset, DistilledModel, TeacherCheckpoint, evaluate_student, evaluate_teacher, train_student, train_teacher
from .errors import StageError
from .features import AUDIO, VISUAL, extract_audio_features, extract_visual_features, save_features

log = logging.getLogger("distillcap")


def _config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg.model = dataclasses.replace(cfg.model, seed=args.seed)
        cfg.train = dataclasses.replace(cfg.train, seed=args.seed)
        cfg.bench = dataclasses.replace(cfg.bench, seed=args.seed)
    return cfg


def _out(args, default: str) -> Path:
    return Path(args.out or default)


def cmd_gen_toy(args) -> None:
    cfg = _config(args)
    seed = cfg.dataset.toy_seed if args.seed is None else args.seed
    manifest = generate_toy_dataset(seed, args.videos or cfg.dataset.toy_videos, _out(args, "toy"))
    print(manifest)


def cmd_extract(args) -> None:
    cfg = _config(args)
    k = validate_rate(args.rate)
    samples = load_manifest(args.manifest)
    if not samples:
        raise ValueError("manifest is empty")
    audio_ex, visual_ex = bench.default_extractors(cfg, samples)
    out = _out(args, "features")
    out.mkdir(parents=True, exist_ok=True)
    for s in samples:
        audio, video = s.load_audio(), s.load_video()
        if k < 1.0:
            audio, video = spectral_pool(audio, k), downsample_frames(video, k)
        save_features(out / f"{s.id}.{AUDIO}.dcft", extract_audio_features(audio, audio_ex))
        save_features(out / f"{s.id}.{VISUAL}.dcft", extract_visual_features(video, visual_ex))
    print(f"wrote {2 * len(samples)} feature files to {out}")


def _dataset(cfg: ExperimentConfig, manifest) -> CaptionDataset:
    return CaptionDataset.from_manifest(manifest, cfg.features, cfg.train)


def cmd_train_teacher(args) -> None:
    cfg = _config(args)
    dataset = _dataset(cfg, args.manifest)
    teacher = train_teacher(dataset, cfg.model, cfg.train, cfg.features)
    path = teacher.save(_out(args, "teacher"))
    print(f"teacher {teacher.id} saved to {path}")


def _load_teacher(path) -> TeacherCheckpoint:
    return TeacherCheckpoint.load(path)


def cmd_train_student(args) -> None:
    cfg = _config(args)
    teacher = _load_teacher(args.teacher)
    # split and vocabulary must match the teacher's
    split = dataclasses.replace(cfg.train, split_seed=teacher.train.split_seed, train_fraction=teacher.train.train_fraction, min_freq=teacher.train.min_freq)
    dataset = CaptionDataset.from_manifest(args.manifest, teacher.features, split)
    model = train_student(dataset, teacher, args.rate, args.regime, cfg.model, split)
    path = model.save(_out(args, f"student_{args.regime.replace('+', '_')}_k{args.rate}"))
    print(f"student saved to {path}")


def cmd_score(args) -> None:
    cfg = _config(args)
    meta = json.loads((Path(args.model) / META_FILE).read_text(encoding="utf-8")) if (Path(args.model) / META_FILE).is_file() else {}
    if meta.get("kind") == "teacher":
        teacher = _load_teacher(args.model)
        dataset = CaptionDataset.from_manifest(args.manifest, teacher.features, teacher.train)
        report, hyps = evaluate_teacher(teacher, dataset)
    else:
        student = DistilledModel.load(args.model)
        dataset = _dataset(cfg, args.manifest)
        report, hyps = evaluate_student(student, dataset, cfg.train.max_len)
    text = json.dumps(report, indent=2, sort_keys=True)
    print(text)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "scores.json").write_text(text + "\n", encoding="utf-8")
        (out / "captions.txt").write_text("".join(" ".join(h) + "\n" for h in hyps), encoding="utf-8")


def cmd_bench(args) -> None:
    cfg = _config(args)
    if args.repeats is not None:
        cfg.bench = dataclasses.replace(cfg.bench, repeats=args.repeats)
    report = bench.ExperimentReport(timings=bench.bench(cfg, args.manifest))
    print(report.timing_table(), end="")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "table2.txt").write_text(report.timing_table(), encoding="utf-8")
        (out / "table2.json").write_text(report.timings_json(), encoding="utf-8")


def cmd_run(args) -> None:
    cfg = _config(args)
    out = _out(args, "run")
    report = bench.run_experiment(cfg, out, timing=not args.no_timing)
    print(report.score_table(), end="")
    if report.timings:
        print()
        print(report.timing_table(), end="")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="seed for model init, batching and bench sampling")
    common.add_argument("--config", default=argparse.SUPPRESS, help="JSON experiment config")
    common.add_argument("--out", default=argparse.SUPPRESS, help="output directory")
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)

    parser = argparse.ArgumentParser(prog="distillcap", parents=[common], description="Compressed-input teacher-student video captioning.")
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("gen-toy", parents=[common], help="write the synthetic toy corpus")
    p.add_argument("--videos", type=int)
    p.set_defaults(func=cmd_gen_toy)

    p = sub.add_parser("extract", parents=[common], help="write per-video feature files at rate k")
    p.add_argument("--manifest", required=True)
    p.add_argument("--rate", type=float, required=True)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("train-teacher", parents=[common], help="train the uncompressed teacher")
    p.add_argument("--manifest", required=True)
    p.set_defaults(func=cmd_train_teacher)

    p = sub.add_parser("train-student", parents=[common], help="distil a student at rate k")
    p.add_argument("--manifest", required=True)
    p.add_argument("--teacher", required=True)
    p.add_argument("--rate", type=float, required=True)
    p.add_argument("--regime", choices=REGIMES, default=REGIMES[1])
    p.set_defaults(func=cmd_train_student)

    p = sub.add_parser("score", parents=[common], help="caption the test split and print metrics")
    p.add_argument("--manifest", required=True)
    p.add_argument("--model", required=True)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("bench", parents=[common], help="time compression plus extraction per rate")
    p.add_argument("--manifest", required=True)
    p.add_argument("--repeats", type=int)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("run", parents=[common], help="full experiment: both tables")
    p.add_argument("--no-timing", action="store_true")
    p.set_defaults(func=cmd_run)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    for name in ("seed", "config", "out", "verbose"):
        if not hasattr(args, name):
            setattr(args, name, None)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # every failure becomes a tagged message and exit 1
        print(f"error: [{args.verb}] {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
