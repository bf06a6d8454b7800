#!/usr/bin/env python3
"""
Тесты краткосрочного трекера: сэмплирование, выбор кандидата, уточнение, политика обновления
"""

import numpy as np
import pytest

from conftest import FAST_APPEARANCE
from src.appearance import init_model
from src.config import SamplerConfig, Thresholds
from src.geometry import BBox, FrameDims, contains, iou
from src.simulator import ScenarioSpec, generate
from src.short_term import (TargetState, apply_update_policy, gaussian_sample, refine_by_similarity,
                            refinement_grid, select_by_classification, track_frame)

DIMS = FrameDims(320, 240)


sample_cases = [
    {"name": "в центре", "input": BBox(140, 100, 32, 32)},
    {"name": "у края", "input": BBox(300, 220, 32, 32)},
    {"name": "частично за кадром", "input": BBox(-10, -10, 32, 32)},
    {"name": "целиком за кадром", "input": BBox(1000, 1000, 32, 32)},
]


@pytest.mark.parametrize("case", sample_cases, ids=[c["name"] for c in sample_cases])
def test_gaussian_sample_inside_frame(case, rng):
    boxes = gaussian_sample(case["input"], SamplerConfig(n_candidates=64), rng, DIMS)
    assert len(boxes) == 64
    assert all(contains(DIMS.as_box(), b) for b in boxes)


def test_gaussian_sample_respects_bounds(rng):
    bounds = BBox(100, 80, 80, 80)
    boxes = gaussian_sample(BBox(120, 100, 32, 32), SamplerConfig(), rng, DIMS, n=100, bounds=bounds)
    assert all(contains(bounds, b) for b in boxes)


def test_gaussian_sample_is_seeded():
    center = BBox(140, 100, 32, 32)
    a = gaussian_sample(center, SamplerConfig(), np.random.default_rng(3), DIMS)
    b = gaussian_sample(center, SamplerConfig(), np.random.default_rng(3), DIMS)
    assert a == b


def test_gaussian_sample_spread(rng):
    center = BBox(140, 100, 32, 32)
    boxes = gaussian_sample(center, SamplerConfig(n_candidates=2000), rng, DIMS)
    cx = np.array([b.center()[0] for b in boxes])
    aspect = np.array([b.w / b.h for b in boxes])
    assert abs(cx.mean() - 156.0) < 1.0
    assert cx.std() == pytest.approx(0.3 * 32, rel=0.1)
    assert np.allclose(aspect, 1.0)


def test_gaussian_sample_rejects_empty_request(rng):
    with pytest.raises(ValueError):
        gaussian_sample(BBox(10, 10, 10, 10), SamplerConfig(), rng, DIMS, n=0)


def test_refinement_grid_starts_with_input():
    box = BBox(100, 100, 32, 32)
    grid = refinement_grid(box, SamplerConfig(), DIMS)
    assert grid[0] == box
    assert len(grid) == 25 * 3


def test_refine_recovers_exact_box(frame, box0):
    model = init_model(frame, box0, FAST_APPEARANCE, seed=0)
    refined, s_sim = refine_by_similarity(model, frame, box0.translate(1.0, -2.0), SamplerConfig(),
                                          FrameDims.from_shape(frame.shape))
    assert refined.as_tuple() == pytest.approx(box0.as_tuple())
    assert s_sim == pytest.approx(1.0)


def test_select_by_classification_takes_maximum(frame, box0):
    model = init_model(frame, box0, FAST_APPEARANCE, seed=0)
    candidates = [BBox(20, 20, 32, 32), box0, box0.translate(10, 0)]
    best, score = select_by_classification(model, frame, candidates)
    assert best == box0
    assert score == pytest.approx(max(model.classify_many(frame, candidates)))


def test_track_frame_follows_static_target(static_record, static_model, rng):
    state = TargetState(static_record.groundtruth[0], 1.0, True, 0)
    box, scores = track_frame(static_model, None, state, static_record.frames[1], SamplerConfig(), rng)
    assert iou(box, static_record.groundtruth[1]) > 0.7
    assert scores.s_sim > 0.75


def test_track_frame_follows_moving_target():
    spec = ScenarioSpec(name="drift", length=51, texture_seed=2, waypoints=((0, 100, 120), (50, 200, 120)))
    record = generate(spec, seed=0)
    model = init_model(record.frames[0], record.groundtruth[0], FAST_APPEARANCE, seed=0)
    state = TargetState(record.groundtruth[0], 1.0, True, 0)
    rng = np.random.default_rng(0)
    overlaps = []
    for t in range(1, len(record)):
        box, scores = track_frame(model, None, state, record.frames[t], SamplerConfig(), rng)
        overlaps.append(iou(box, record.groundtruth[t]))
        state = TargetState(box, scores.s_sim, True, t)
    assert min(overlaps) >= 0.8


def test_track_frame_is_deterministic(static_record, static_model):
    state = TargetState(static_record.groundtruth[0], 1.0, True, 0)
    frame = static_record.frames[1]
    a = track_frame(static_model, None, state, frame, SamplerConfig(), np.random.default_rng(9))
    b = track_frame(static_model, None, state, frame, SamplerConfig(), np.random.default_rng(9))
    assert a == b


policy_cases = [
    {"name": "уверенный кадр", "input": (0.9, 0, 0), "expected": "collect"},
    {"name": "равно th_mid", "input": (0.5, 0, 0), "expected": "none"},
    {"name": "между порогами", "input": (0.3, 0, 0), "expected": "none"},
    {"name": "равно th_low", "input": (0.1, 0, 0), "expected": "none"},
    {"name": "ниже th_low", "input": (0.05, 0, 0), "expected": "refit"},
    {"name": "каждый второй уверенный кадр", "input": (0.9, 2, 1), "expected": "collect+refit"},
    {"name": "между переобучениями", "input": (0.9, 2, 2), "expected": "collect"},
    {"name": "номер кадра не важен", "input": (0.9, 2, 0), "expected": "collect"},
]


@pytest.mark.parametrize("case", policy_cases, ids=[c["name"] for c in policy_cases])
def test_update_policy(case, frame, box0):
    model = init_model(frame, box0, FAST_APPEARANCE, seed=0)
    confidence, interval, count = case["input"]
    state = TargetState(box0, confidence, True, 4)
    digest = model.state_digest()
    action = apply_update_policy(model, state, frame, Thresholds(), refit_interval=interval, confident_count=count)
    assert action == case["expected"]
    if action == "none":
        assert model.state_digest() == digest
    if action.startswith("collect"):
        assert 4 in model.buffer.frames()


def test_update_policy_uses_explicit_score(frame, box0):
    model = init_model(frame, box0, FAST_APPEARANCE, seed=0)
    state = TargetState(box0, 0.9, True, 1)
    assert apply_update_policy(model, state, frame, Thresholds(), score=-0.2) == "refit"


def test_target_state_confidence_range(box0):
    with pytest.raises(ValueError):
        TargetState(box0, 1.2, True, 0)
