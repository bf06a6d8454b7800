#!/usr/bin/env python3
"""
Тесты оценки глобального движения блочным сопоставлением
"""

import numpy as np
import pytest

from conftest import textured_frame
from src.config import MotionConfig
from src.geometry import BBox
from src.motion import MotionVector, compensate, estimate_motion, reliable_motion

REGION = BBox(100.0, 80.0, 100.0, 80.0)


def shifted(frame: np.ndarray, dx: int, dy: int) -> np.ndarray:
    """Кадр, в котором содержимое сдвинуто на (dx, dy)."""
    return np.roll(frame, (dy, dx), axis=(0, 1))


motion_cases = [
    {"name": "нет движения", "input": (0, 0), "expected": (0.0, 0.0)},
    {"name": "вправо", "input": (5, 0), "expected": (5.0, 0.0)},
    {"name": "вверх-влево", "input": (-7, -3), "expected": (-7.0, -3.0)},
    {"name": "граница радиуса", "input": (16, -16), "expected": (16.0, -16.0)},
]


@pytest.mark.parametrize("case", motion_cases, ids=[c["name"] for c in motion_cases])
def test_known_shift(case):
    prev = textured_frame(1)
    mv = estimate_motion(prev, shifted(prev, *case["input"]), REGION)
    assert (mv.dx, mv.dy) == case["expected"]
    assert mv.reliability == pytest.approx(1.0)


def test_random_shifts_noiseless_and_noisy():
    rng = np.random.default_rng(4)
    prev = textured_frame(2)
    exact_clean = 0
    exact_noisy = 0
    for _ in range(100):
        dx, dy = (int(v) for v in rng.integers(-16, 17, size=2))
        cur = shifted(prev, dx, dy)
        mv = estimate_motion(prev, cur, REGION)
        exact_clean += (mv.dx, mv.dy) == (dx, dy)
        noisy = cur + rng.normal(0.0, 5.0, size=cur.shape)
        mv = estimate_motion(prev, noisy, REGION)
        exact_noisy += (mv.dx, mv.dy) == (dx, dy)
    assert exact_clean == 100
    assert exact_noisy >= 95


def test_flat_region_is_unreliable():
    prev = np.full((120, 160), 90.0)
    mv = estimate_motion(prev, prev.copy(), BBox(40, 40, 40, 40))
    assert mv.reliability == 0.0
    fallback = reliable_motion(prev, prev.copy(), BBox(40, 40, 40, 40))
    assert (fallback.dx, fallback.dy) == (0.0, 0.0)


def test_motion_beyond_search_radius():
    prev = textured_frame(3, sigma=3.0)
    config = MotionConfig(search_radius=16)
    mv = estimate_motion(prev, shifted(prev, 20, 0), REGION, config)
    assert mv.reliability < 0.5
    assert mv.dx >= config.search_radius - 2


def test_reliable_motion_falls_back_below_floor():
    prev = textured_frame(4)
    unrelated = textured_frame(5)
    config = MotionConfig(motion_reliability_floor=0.9)
    mv = reliable_motion(prev, unrelated, REGION, config)
    assert (mv.dx, mv.dy) == (0.0, 0.0)
    assert mv.reliability < 0.9


def test_frame_size_mismatch():
    with pytest.raises(ValueError):
        estimate_motion(np.zeros((10, 10)), np.zeros((10, 12)), BBox(0, 0, 5, 5))


def test_compensate():
    box = BBox(10.0, 20.0, 30.0, 40.0)
    moved = compensate(box, MotionVector(3.0, -4.0, 0.8))
    assert moved.as_tuple() == (13.0, 16.0, 30.0, 40.0)


def test_motion_vector_reliability_range():
    with pytest.raises(ValueError):
        MotionVector(0.0, 0.0, 1.5)
