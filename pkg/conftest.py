"""Общие фикстуры тестов: синтетические кадры, последовательности и модели."""

import numpy as np
import pytest

from src.appearance import init_model
from src.config import AppearanceConfig
from src.geometry import BBox
from src.simulator import ScenarioSpec, band_limited_texture, generate

# Уменьшенная модель: быстрее инициализация, поведение то же
FAST_APPEARANCE = AppearanceConfig(init_pos=20, init_neg=80, regressor_samples=120)


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: длинные сквозные прогоны конвейера")


def textured_frame(seed: int = 0, shape=(240, 320), sigma: float = 1.5) -> np.ndarray:
    """Кадр из сглаженного шума в диапазоне яркостей 8-bit."""
    rng = np.random.default_rng(seed)
    return np.clip(120.0 + 40.0 * band_limited_texture(rng, shape, sigma), 0, 255)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def frame():
    return textured_frame(0)


@pytest.fixture
def box0():
    return BBox(140.0, 100.0, 32.0, 32.0)


@pytest.fixture
def static_record():
    spec = ScenarioSpec(name="static", length=8, texture_seed=1, noise_sigma=1.0)
    return generate(spec, seed=0)


@pytest.fixture
def static_model(static_record):
    frames = static_record.frames
    return init_model(frames[0], static_record.groundtruth[0], FAST_APPEARANCE, seed=0)
