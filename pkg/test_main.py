#!/usr/bin/env python3
"""
Тесты командной строки: simulate -> track -> evaluate, коды выхода и сообщения об ошибках
"""

import pandas as pd
import pytest

from src.evaluation import PredictionTrack
from src.main import main, parse_overrides
from src.sequence_io import read_predictions, read_sequence, write_predictions, write_spec
from src.simulator import ScenarioSpec

CLI_SPEC = ScenarioSpec(name="cli", length=5, texture_seed=2, waypoints=((0, 150, 110), (4, 158, 114)))


@pytest.fixture
def sequence_dir(tmp_path):
    spec_path = tmp_path / "cli.spec"
    write_spec(spec_path, CLI_SPEC)
    out = tmp_path / "cli"
    assert main(["simulate", "--spec", str(spec_path), "--seed", "1", "--out", str(out)]) == 0
    return out


def test_simulate_writes_sequence(sequence_dir):
    record = read_sequence(sequence_dir)
    assert record.name == "cli"
    assert len(record) == 5


def test_track_writes_predictions_and_trace(sequence_dir, tmp_path):
    pred = tmp_path / "pred.txt"
    code = main(["track", "--sequence", str(sequence_dir), "--out", str(pred),
                 "--set", "init_pos=20", "--set", "init_neg=80", "--set", "regressor_samples=120"])
    assert code == 0
    assert len(read_predictions(pred)) == 5
    assert (tmp_path / "pred.txt.trace.jsonl").exists()


def test_evaluate_perfect_predictions(sequence_dir, tmp_path):
    record = read_sequence(sequence_dir)
    pred = tmp_path / "perfect.txt"
    write_predictions(pred, PredictionTrack(tuple(record.groundtruth),
                                            tuple(1.0 if b is not None else 0.0 for b in record.groundtruth)))
    report_dir = tmp_path / "report"
    assert main(["evaluate", "--pred", str(pred), "--gt", str(sequence_dir), "--out", str(report_dir)]) == 0
    summary = pd.read_csv(report_dir / "summary.csv", index_col="sequence")
    assert summary.loc["cli", "f_score"] == pytest.approx(1.0)
    assert summary.loc["cli", "precision_20px"] == pytest.approx(1.0)


def test_print_config(capsys):
    assert main(["--print-config"]) == 0
    out = capsys.readouterr().out
    assert "th_low = 0.1" in out
    assert "score_mapping = affine" in out


def test_no_command_prints_help():
    assert main([]) == 1


error_cases = [
    {"name": "нет файла предсказаний", "input": ["evaluate", "--pred", "{tmp}/none.txt", "--gt", "{tmp}/none",
                                                 "--out", "{tmp}/r"]},
    {"name": "нет каталога последовательности", "input": ["track", "--sequence", "{tmp}/none", "--out",
                                                          "{tmp}/p.txt"]},
    {"name": "неверное переопределение", "input": ["suite", "--out", "{tmp}/s", "--set", "th_low"]},
    {"name": "неизвестный ключ", "input": ["suite", "--out", "{tmp}/s", "--set", "colour=red"]},
]


@pytest.mark.parametrize("case", error_cases, ids=[c["name"] for c in error_cases])
def test_errors_exit_with_diagnostic(case, tmp_path, capsys):
    argv = [arg.format(tmp=tmp_path) for arg in case["input"]]
    assert main(argv) == 1
    assert "❌ Ошибка" in capsys.readouterr().err


def test_parse_overrides():
    assert parse_overrides(["th_low=0.2", " seed = 3 ", "stage_scales=4,16"]) == \
           {"th_low": "0.2", "seed": "3", "stage_scales": "4,16"}
    assert parse_overrides(None) == {}
    with pytest.raises(ValueError):
        parse_overrides(["th_low"])
