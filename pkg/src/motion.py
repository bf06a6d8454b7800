"""Глобальное движение между соседними кадрами: блочное сопоставление области."""

import logging
import math
from dataclasses import dataclass

import numpy as np

from src.config import MotionConfig
from src.geometry import BBox, FrameDims, clip

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class MotionVector:
    dx: float
    dy: float
    reliability: float

    def __post_init__(self):
        if not 0.0 <= self.reliability <= 1.0:
            raise ValueError(f"reliability должна лежать в [0, 1]: {self.reliability}")


def _shift_order(radius: int):
    """Сдвиги в порядке предпочтения: меньший модуль, затем построчный обход."""
    shifts = [(dy, dx) for dy in range(-radius, radius + 1) for dx in range(-radius, radius + 1)]
    return sorted(shifts, key=lambda s: (s[0] * s[0] + s[1] * s[1], s[0], s[1]))


def estimate_motion(prev: np.ndarray, cur: np.ndarray, region: BBox,
                    config: MotionConfig = MotionConfig()) -> MotionVector:
    """
    Оценивает сдвиг содержимого области между кадрами полным перебором.

    Стоимость сдвига d равна средней абсолютной разности prev[p] и cur[p + d] по сетке
    точек области (не больше max_block x max_block).

    Args:
        prev: предыдущий кадр
        cur: текущий кадр
        region: область в координатах предыдущего кадра
        config: радиус поиска и размер сетки

    Returns:
        Вектор движения с надёжностью
    """
    prev = np.asarray(prev, dtype=np.float64)
    cur = np.asarray(cur, dtype=np.float64)
    if prev.shape != cur.shape:
        raise ValueError(f"Размеры кадров не совпадают: {prev.shape} и {cur.shape}")
    dims = FrameDims.from_shape(prev.shape)
    region = clip(region, dims)
    radius = int(config.search_radius)

    x0 = int(math.floor(region.x))
    y0 = int(math.floor(region.y))
    x1 = min(int(math.ceil(region.right)), dims.width)
    y1 = min(int(math.ceil(region.bottom)), dims.height)
    stride = max(1, int(math.ceil(max(x1 - x0, y1 - y0) / config.max_block)))
    xs = np.arange(x0, x1, stride)
    ys = np.arange(y0, y1, stride)
    reference = prev[np.ix_(ys, xs)]

    padded = np.pad(cur, radius, mode="edge")
    offsets = np.arange(-radius, radius + 1)
    cols = xs[None, :] + radius + offsets[:, None]
    costs = np.empty((len(offsets), len(offsets)))
    for row, dy in enumerate(offsets):
        rows = padded[ys + radius + dy]
        candidates = rows[:, cols]  # (ny, ndx, nx)
        costs[row] = np.mean(np.abs(candidates - reference[:, None, :]), axis=(0, 2))

    order = _shift_order(radius)
    ordered = np.array([costs[dy + radius, dx + radius] for dy, dx in order])
    best = int(np.argmin(ordered))
    best_dy, best_dx = order[best]
    best_cost = float(ordered[best])

    ceiling = float(np.mean(np.abs(reference - reference.mean())))
    reliability = 0.0 if ceiling <= 0 else float(np.clip(1.0 - best_cost / ceiling, 0.0, 1.0))
    logger.debug(f"Motion ({best_dx}, {best_dy}), cost {best_cost:.3f}, reliability {reliability:.3f}")
    return MotionVector(float(best_dx), float(best_dy), reliability)


def compensate(prev_box: BBox, mv: MotionVector) -> BBox:
    """Сдвигает рамку предыдущего кадра на вектор движения (размер не меняется)."""
    return prev_box.translate(mv.dx, mv.dy)


def reliable_motion(prev: np.ndarray, cur: np.ndarray, region: BBox,
                    config: MotionConfig = MotionConfig()) -> MotionVector:
    """Оценка движения с откатом к нулевому вектору при низкой надёжности."""
    mv = estimate_motion(prev, cur, region, config)
    if mv.reliability < config.motion_reliability_floor:
        logger.warning(f"Motion ({mv.dx}, {mv.dy}) unreliable ({mv.reliability:.2f}), using zero motion")
        return MotionVector(0.0, 0.0, mv.reliability)
    return mv
