import itertools
import json

import pytest

from distillcap.bench import (
    TimingRecord,
    run_experiment,
    score_rows,
    time_diff_percent,
    time_feature_extraction,
)
from distillcap.cli import main
from distillcap.config import ExperimentConfig, FeatureConfig
from distillcap.dataio import generate_toy_dataset, load_manifest
from distillcap.distillation import make_extractors
from distillcap.errors import StageError
from distillcap.metrics import accuracy_diff


@pytest.fixture(scope="module")
def toy(tmp_path_factory):
    return generate_toy_dataset(3, 10, tmp_path_factory.mktemp("toy"))


@pytest.mark.parametrize("teacher,student,expected", [(13.28, 2.77, 79.1), (13.28, 8.31, 37.4), (13.28, 5.65, 57.4), (5.0, 5.0, 0.0)])
def test_time_diff_percent(teacher, student, expected):
    assert time_diff_percent(teacher, student) == expected


def test_time_diff_needs_positive_teacher():
    with pytest.raises(ValueError):
        time_diff_percent(0.0, 1.0)


def test_timing_record_statistics():
    r = TimingRecord(0.2, 2, 1, [1.0, 3.0])
    assert (r.mean, r.std) == (2.0, 1.0)
    with pytest.raises(ValueError):
        TimingRecord(0.2, 2, 0, [])


def test_repeats_multiply_measurements(toy):
    samples = load_manifest(toy)
    ex = make_extractors(FeatureConfig())
    clock = itertools.count().__next__  # every interval is exactly one tick
    rec = time_feature_extraction(samples, 0.4, 3, ex, warmup=1, clock=clock)
    assert len(rec.times) == 3 * len(samples) and rec.n_videos == len(samples)
    assert rec.mean == 1.0


def test_timing_sample_selection_is_seeded(toy):
    samples = load_manifest(toy)
    ex = make_extractors(FeatureConfig())
    a = time_feature_extraction(samples, 1.0, 1, ex, warmup=0, seed=4, n_videos=3)
    assert a.n_videos == 3 and len(a.times) == 3


def test_timing_empty_manifest():
    with pytest.raises(ValueError):
        time_feature_extraction([], 0.5, 1, make_extractors(FeatureConfig()))


def test_score_rows_layout_and_diffs():
    t = {"SCORE": 0.368}
    rows = score_rows(t, {("rep+ce", 0.2): {"SCORE": 0.365}, ("rep", 0.2): {"SCORE": 0.321}})
    assert [r.name for r in rows] == ["rep student (k = 0.2)", "rep+ce student (k = 0.2)", "Teacher"]
    assert [r.diff for r in rows] == [0.127, 0.008, 0.0]


def small_config(tmp_path, **train):
    cfg = {
        "dataset": {"toy_seed": 3, "toy_videos": 10},
        "features": {"audio_dim": 4, "visual_dim": 4},
        "model": {"hidden": 6},
        "train": {"epochs": 2, "adapter_epochs": 2, "batch_size": 4, **train},
        "bench": {"repeats": 1, "warmup": 0},
        "rates": [0.2, 0.6, 1.0],
    }
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    return path


@pytest.fixture(scope="module")
def experiment(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("run")
    cfg = small_config(tmp)
    return cfg, tmp / "out", run_experiment(cfg, tmp / "out")


def test_report_structure(experiment):
    _, out, report = experiment
    names = [r.name for r in report.scores]
    assert len(names) == 5 and names[-1] == "Teacher"
    assert {(r.regime, r.rate) for r in report.scores[:-1]} == {("rep", 0.2), ("rep", 0.6), ("rep+ce", 0.2), ("rep+ce", 0.6)}
    assert [t.rate for t in report.timings] == [0.2, 0.6, 1.0]
    for name in ("table1.txt", "table1.json", "table2.txt", "table2.json"):
        assert (out / name).is_file()


def test_report_diffs_recompute(experiment):
    _, out, report = experiment
    t = report.teacher.metrics["SCORE"]
    for row in report.scores:
        assert row.diff == accuracy_diff(t, row.metrics["SCORE"])
    timings = json.loads((out / "table2.json").read_text())
    base = next(r["mean"] for r in timings if r["rate"] == 1.0)
    for r in timings:
        assert r["diff_percent"] == time_diff_percent(base, r["mean"])


def test_rerun_reproduces_scores_without_timing(experiment, tmp_path):
    cfg, out, report = experiment
    fresh = run_experiment(cfg, tmp_path / "again", timing=False)
    assert fresh.scores_json() == report.scores_json()
    assert (tmp_path / "again" / "teacher" / "params.dckp").read_bytes() == (out / "teacher" / "params.dckp").read_bytes()


def test_resume_skips_finished_stages(experiment, monkeypatch):
    cfg, out, report = experiment
    import distillcap.bench as b

    def boom(*a, **k):
        raise AssertionError("retrained")

    monkeypatch.setattr(b, "train_teacher", boom)
    monkeypatch.setattr(b, "train_student", boom)
    assert run_experiment(cfg, out, timing=False).scores_json() == report.scores_json()


def test_stage_error_names_stage(tmp_path):
    cfg = ExperimentConfig.from_dict({"dataset": {"manifest": str(tmp_path / "missing.tsv")}})
    with pytest.raises(StageError, match=r"^\[data\]"):
        run_experiment(cfg, tmp_path / "out")


def test_cli_run_and_missing_teacher(experiment, toy, tmp_path, capsys):
    cfg, _, _ = experiment
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "o"), "--no-timing"]) == 0
    assert "Teacher" in capsys.readouterr().out
    code = main(["train-student", "--manifest", str(toy), "--teacher", str(tmp_path / "nope"), "--rate", "0.2"])
    assert code != 0
    assert "teacher checkpoint not found" in capsys.readouterr().err


def test_cli_bad_rate_is_an_error(toy, tmp_path, capsys):
    assert main(["extract", "--manifest", str(toy), "--rate", "0", "--out", str(tmp_path)]) == 1
    assert "[extract]" in capsys.readouterr().err


def test_cli_pipeline(toy, tmp_path, capsys):
    cfg = small_config(tmp_path)
    assert main(["train-teacher", "--config", str(cfg), "--manifest", str(toy), "--out", str(tmp_path / "t")]) == 0
    assert main(["train-student", "--config", str(cfg), "--manifest", str(toy), "--teacher", str(tmp_path / "t"), "--rate", "0.4", "--out", str(tmp_path / "s")]) == 0
    assert main(["score", "--config", str(cfg), "--manifest", str(toy), "--model", str(tmp_path / "t")]) == 0
    assert main(["score", "--config", str(cfg), "--manifest", str(toy), "--model", str(tmp_path / "s"), "--out", str(tmp_path / "sc")]) == 0
    assert "SCORE" in json.loads((tmp_path / "sc" / "scores.json").read_text())
    assert main(["bench", "--manifest", str(toy), "--repeats", "1", "--seed", "2"]) == 0
    assert "Teacher" in capsys.readouterr().out
