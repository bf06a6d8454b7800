#!/usr/bin/env python3
"""
Сквозные тесты конвейера: режимы трекера, журнал кадров, детерминизм, набор сценариев
"""

import logging
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from src.config import RunConfig, load_config
from src.geometry import iou
from src.pipeline import (FrameTrace, LongTermTracker, TrackerMode, read_trace, replay_trace, run_ablation,
                          run_sequence, run_suite, trace_path, track_record, warn_if_failure_unreachable,
                          write_trace)
from src.sequence_io import read_predictions, write_sequence
from src.simulator import ScenarioSpec, generate, standard_specs

CONFIGS = Path(__file__).parent / "data" / "configs"
FAST = {"init_pos": 20, "init_neg": 80, "regressor_samples": 120}

STATIC = ScenarioSpec(name="static", length=12, texture_seed=1)
OCCLUDED = ScenarioSpec(name="occluded", length=40, texture_seed=14, occlusions=((15, 24),), attributes=("FOC",))


def tracker_config(name="rectified.conf", **overrides):
    return load_config(CONFIGS / name, {**FAST, **overrides})


def trace(frame, mode, next_mode, present, stage=None):
    return FrameTrace(frame, mode, None, stage, None, None, None, present, next_mode)


ST, DET = TrackerMode.SHORT_TERM.value, TrackerMode.DETECTING.value


def test_static_target_stays_in_short_term():
    record = generate(STATIC, seed=0)
    result = track_record(record, tracker_config())
    assert all(t.mode == ST and t.next_mode == ST for t in result.traces)
    assert all(b is not None for b in result.track.boxes)
    assert all(iou(b, g) > 0.7 for b, g in zip(result.track.boxes, record.groundtruth))
    assert min(result.track.confidences) >= 0.6
    assert replay_trace(result.traces) == {"failures": 0, "recaptures": 0}


@pytest.mark.slow
def test_full_occlusion_switches_modes_and_recaptures():
    record = generate(OCCLUDED, seed=0)
    result = track_record(record, tracker_config())
    traces = result.traces
    failure = next(t.frame for t in traces if t.mode == ST and t.next_mode == DET)
    assert 15 <= failure <= 17
    assert result.track.boxes[failure] is None
    recapture = next(t.frame for t in traces if t.frame > failure and t.mode == DET and t.next_mode == ST)
    assert 25 <= recapture <= 34
    assert iou(result.track.boxes[recapture], record.groundtruth[recapture]) > 0.5
    assert all(b is not None for b in result.track.boxes[recapture:])
    counts = replay_trace(traces)
    assert counts["failures"] >= 1 and counts["recaptures"] >= 1


@pytest.mark.slow
def test_without_detector_tracker_never_detects():
    record = generate(OCCLUDED, seed=0)
    result = track_record(record, tracker_config("no_detector.conf"))
    assert all(t.mode == ST and t.next_mode == ST for t in result.traces)
    assert all(t.stage is None for t in result.traces)
    absent = sum(b is None for b in result.track.boxes[15:25])
    assert absent >= 7


@pytest.mark.slow
def test_nearby_reappearance_recaptured_locally():
    spec = next(s for s in standard_specs() if s.name == "reappear_near")
    record = generate(spec, seed=0)
    result = track_record(record, tracker_config())
    reappeared = spec.occlusions[0][1] + 1
    recaptures = [t for t in result.traces if t.mode == DET and t.next_mode == ST]
    assert recaptures
    assert recaptures[0].stage == "Local"
    assert reappeared <= recaptures[0].frame <= reappeared + 3
    assert iou(result.track.boxes[recaptures[0].frame], record.groundtruth[recaptures[0].frame]) > 0.7


def test_periodic_refit_counts_confident_frames():
    result = track_record(generate(STATIC, seed=0), tracker_config(refit_interval=3))
    confident = [t.update for t in result.traces if t.update.startswith("collect")]
    assert len(confident) >= 6
    assert confident == ["collect+refit" if (k + 1) % 3 == 0 else "collect" for k in range(len(confident))]


warning_cases = [
    {"name": "умолчания", "input": RunConfig(), "expected": True},
    {"name": "rectified.conf", "input": load_config(CONFIGS / "rectified.conf"), "expected": False},
    {"name": "без детектора", "input": load_config(overrides={"detector_enabled": False}), "expected": False},
    {"name": "высокий th_low", "input": load_config(overrides={"th_mid": 0.8, "th_low": 0.6}), "expected": False},
]


@pytest.mark.parametrize("case", warning_cases, ids=[c["name"] for c in warning_cases])
def test_unreachable_failure_warning(case, caplog):
    with caplog.at_level(logging.WARNING, logger="src.pipeline"):
        assert warn_if_failure_unreachable(case["input"]) == case["expected"]
    assert any("th_low" in r.getMessage() for r in caplog.records) == case["expected"]


def test_run_sequence_is_deterministic(tmp_path):
    directory = write_sequence(generate(STATIC, seed=0), tmp_path / "static")
    outputs = []
    for run in ("a", "b"):
        out = tmp_path / f"{run}.txt"
        config = tracker_config(sequence=str(directory), output=str(out))
        track = run_sequence(config)
        assert read_predictions(out) == track
        outputs.append((out.read_bytes(), trace_path(out).read_bytes()))
    assert outputs[0] == outputs[1]


def test_run_sequence_requires_sequence():
    with pytest.raises(ValueError):
        run_sequence(tracker_config())


def test_tracker_must_be_initialized():
    tracker = LongTermTracker(tracker_config())
    with pytest.raises(RuntimeError):
        tracker.step(np.zeros((240, 320)))


def test_frame_size_must_not_change(static_record):
    tracker = LongTermTracker(tracker_config())
    tracker.initialize(static_record.frames[0], static_record.groundtruth[0])
    with pytest.raises(ValueError):
        tracker.step(np.zeros((120, 160)))


def test_initial_trace():
    record = generate(STATIC, seed=0)
    tracker = LongTermTracker(tracker_config())
    state, first = tracker.initialize(record.frames[0], record.groundtruth[0])
    assert state.present and state.frame_index == 0
    assert first.decision == "Init" and first.mode == ST
    assert state.confidence == pytest.approx(first.s_t)


def test_trace_file_round_trip(tmp_path):
    traces = [trace(0, ST, ST, True), trace(1, ST, DET, False), trace(2, DET, ST, True, stage="Global")]
    path = trace_path(tmp_path / "pred.txt")
    assert path.name == "pred.txt.trace.jsonl"
    write_trace(path, traces)
    assert read_trace(path) == traces
    with pytest.raises(FileNotFoundError):
        read_trace(tmp_path / "missing.jsonl")


def test_replay_counts_transitions():
    traces = [
        trace(0, ST, ST, True),
        trace(1, ST, DET, False),
        trace(2, DET, DET, False, stage="None"),
        trace(3, DET, ST, True, stage="Area5"),
        trace(4, ST, ST, True),
    ]
    assert replay_trace(traces) == {"failures": 1, "recaptures": 1}


invalid_traces = [
    {"name": "режим не совпадает с переходом", "input": [trace(0, ST, ST, True), trace(1, DET, ST, True, "Local")]},
    {"name": "кадр срыва с целью", "input": [trace(0, ST, DET, True)]},
    {"name": "возврат без детекции", "input": [trace(0, ST, DET, False), trace(1, DET, ST, True, "None")]},
    {"name": "цель найдена, а режим не сменился",
     "input": [trace(0, ST, DET, False), trace(1, DET, DET, True, "Global")]},
    {"name": "неизвестный режим", "input": [trace(0, ST, "Sleeping", True)]},
]


@pytest.mark.parametrize("case", invalid_traces, ids=[c["name"] for c in invalid_traces])
def test_replay_rejects_invalid_traces(case):
    with pytest.raises(ValueError):
        replay_trace(case["input"])


@pytest.mark.slow
def test_suite_is_reproducible_across_workers(tmp_path):
    specs = [STATIC, replace(OCCLUDED, length=30)]
    single = run_suite(0, tmp_path / "single", tracker_config(), specs=specs)
    parallel = run_suite(0, tmp_path / "parallel", tracker_config(workers=2), specs=specs)
    assert list(single.reports) == ["static", "occluded"]
    for name in ("summary.csv", "attributes.csv"):
        assert (tmp_path / "single" / "report" / name).read_bytes() == \
               (tmp_path / "parallel" / "report" / name).read_bytes()
    assert (tmp_path / "single" / "predictions" / "occluded.txt.trace.jsonl").exists()
    assert single.attributes.loc["all", "sequences"] == 2
    assert parallel.reports["static"].f_score == pytest.approx(single.reports["static"].f_score)


@pytest.mark.slow
def test_detection_improves_long_term_suite(tmp_path):
    config = load_config(CONFIGS / "rectified.conf", {"workers": 4})
    result = run_ablation(0, tmp_path, config)
    assert (tmp_path / "ablation.csv").exists()

    reports = result.full.reports.values()
    with_reappearance = [r for r in reports if r.recapture_delays]
    assert len(with_reappearance) >= 7
    quick = [r for r in with_reappearance if all(d is not None and d <= 10 for d in r.recapture_delays)]
    assert len(quick) >= 0.9 * len(with_reappearance)
    with_absence = [r for r in reports if "FOC" in r.attributes or "OV" in r.attributes]
    assert np.mean([r.false_presence for r in with_absence]) <= 0.1

    table = result.table
    assert table.loc["full", "success_auc"] >= 0.5
    assert table.loc["full", "recall_at_0.5"] > table.loc["no_detector", "recall_at_0.5"]
