#!/usr/bin/env python3
"""
Тесты отчётов: CSV-таблицы и SVG-графики
"""

import pandas as pd

from src.evaluation import PredictionTrack, attribute_report, evaluate_sequence
from src.geometry import BBox
from src.reports import PLOTS, curves_frame, summary_frame, write_sequence_report, write_suite_report

G = BBox(10.0, 10.0, 20.0, 20.0)


def make_report(name, shift, attributes=("FOC",)):
    gt = [G, G, None, G]
    boxes = (G, G.translate(shift, 0.0), None, G.translate(shift, shift))
    return evaluate_sequence(PredictionTrack(boxes, (1.0, 0.8, 0.0, 0.6)), gt, name, attributes)


def test_curves_frame_lists_every_curve():
    report = make_report("a", 4.0)
    table = curves_frame(report)
    assert list(table.columns) == ["curve", "threshold", "value"]
    assert set(table["curve"]) == set(report.curves)
    assert (table["curve"] == "success").sum() == 101


def test_summary_frame():
    reports = {"a": make_report("a", 4.0), "b": make_report("b", 0.0, ("OV", "CM"))}
    table = summary_frame(reports)
    assert list(table.index) == ["a", "b"]
    assert table.loc["b", "attributes"] == "OV,CM"
    assert table.loc["b", "f_score"] == 1.0


def test_sequence_report_files(tmp_path):
    written = write_sequence_report(make_report("a", 4.0), tmp_path / "report")
    assert set(written) == {"summary", "curves"}
    summary = pd.read_csv(written["summary"], index_col="sequence")
    assert summary.loc["a", "f_score"] > 0
    assert not (tmp_path / "report" / "success.svg").exists()


def test_sequence_report_plots_are_reproducible(tmp_path):
    report = make_report("a", 4.0)
    first = write_sequence_report(report, tmp_path / "one", plots=True)
    second = write_sequence_report(report, tmp_path / "two", plots=True)
    for key in PLOTS:
        assert first[key].suffix == ".svg"
        assert first[key].read_bytes() == second[key].read_bytes()


def test_suite_report_files(tmp_path):
    reports = {"a": make_report("a", 4.0), "b": make_report("b", 0.0, ("OV",))}
    written = write_suite_report(reports, attribute_report(reports), tmp_path)
    attributes = pd.read_csv(written["attributes"], index_col=0)
    assert {"FOC", "OV", "all"} <= set(attributes.index)
    assert (tmp_path / "curves" / "a.csv").exists()
    assert (tmp_path / "curves" / "b.csv").exists()
