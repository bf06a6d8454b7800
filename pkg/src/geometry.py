"""Геометрия прямоугольников: перекрытие, расстояния, расширение и обрезка областей."""

import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence, Tuple

import numpy as np


@dataclass(frozen=True)
class BBox:
    """Осевой прямоугольник в пиксельных координатах (x, y: левый верхний угол)."""
    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        values = (self.x, self.y, self.w, self.h)
        if not all(math.isfinite(v) for v in values):
            raise ValueError(f"Координаты рамки должны быть конечными: {values}")
        if self.w <= 0 or self.h <= 0:
            raise ValueError(f"Рамка должна иметь w > 0 и h > 0: {values}")

    @classmethod
    def from_center(cls, cx: float, cy: float, w: float, h: float) -> "BBox":
        return cls(float(cx - w / 2.0), float(cy - h / 2.0), float(w), float(h))

    @property
    def right(self) -> float:
        return self.x + self.w

    @property
    def bottom(self) -> float:
        return self.y + self.h

    @property
    def area(self) -> float:
        return self.w * self.h

    def center(self) -> Tuple[float, float]:
        return (self.x + self.w / 2.0, self.y + self.h / 2.0)

    def as_tuple(self) -> Tuple[float, float, float, float]:
        return (self.x, self.y, self.w, self.h)

    def translate(self, dx: float, dy: float) -> "BBox":
        return BBox(self.x + dx, self.y + dy, self.w, self.h)


@dataclass(frozen=True)
class FrameDims:
    """Размер кадра в пикселях."""
    width: int
    height: int

    def __post_init__(self):
        if int(self.width) != self.width or int(self.height) != self.height:
            raise ValueError("Размеры кадра должны быть целыми")
        if self.width < 1 or self.height < 1:
            raise ValueError(f"Размеры кадра должны быть >= 1: {self.width}x{self.height}")

    @classmethod
    def from_shape(cls, shape: Sequence[int]) -> "FrameDims":
        return cls(int(shape[1]), int(shape[0]))

    @property
    def diagonal(self) -> float:
        return math.hypot(self.width, self.height)

    def as_box(self) -> BBox:
        return BBox(0.0, 0.0, float(self.width), float(self.height))


def iou(a: BBox, b: BBox) -> float:
    """Intersection-over-union двух рамок (непрерывная площадь), 0 для непересекающихся."""
    inter_w = min(a.right, b.right) - max(a.x, b.x)
    inter_h = min(a.bottom, b.bottom) - max(a.y, b.y)
    if inter_w <= 0 or inter_h <= 0:
        return 0.0
    inter = inter_w * inter_h
    union = a.area + b.area - inter
    return float(min(1.0, max(0.0, inter / union)))


def center_distance(a: BBox, b: BBox) -> float:
    """Евклидово расстояние между центрами рамок."""
    (ax, ay), (bx, by) = a.center(), b.center()
    return math.hypot(ax - bx, ay - by)


def intersect(a: BBox, b: BBox) -> Optional[BBox]:
    """Пересечение двух рамок или None, если оно вырождено."""
    left, top = max(a.x, b.x), max(a.y, b.y)
    right, bottom = min(a.right, b.right), min(a.bottom, b.bottom)
    if right - left <= 0 or bottom - top <= 0:
        return None
    return BBox(left, top, right - left, bottom - top)


def clip(b: BBox, dims: FrameDims) -> BBox:
    """
    Обрезает рамку по границам кадра.

    Args:
        b: рамка
        dims: размер кадра

    Returns:
        b ∩ кадр

    Raises:
        ValueError: рамка целиком вне кадра
    """
    clipped = intersect(b, dims.as_box())
    if clipped is None:
        raise ValueError(f"Рамка {b.as_tuple()} целиком вне кадра {dims.width}x{dims.height}")
    return clipped


def contains(outer: BBox, inner: BBox, tol: float = 1e-9) -> bool:
    return (inner.x >= outer.x - tol and inner.y >= outer.y - tol
            and inner.right <= outer.right + tol and inner.bottom <= outer.bottom + tol)


def scale_about_center(b: BBox, side_scale: float, square: bool = False) -> BBox:
    """Масштабирует стороны рамки вокруг её центра (площадь умножается на side_scale^2)."""
    cx, cy = b.center()
    if square:
        side = math.sqrt(b.area) * side_scale
        return BBox.from_center(cx, cy, side, side)
    return BBox.from_center(cx, cy, b.w * side_scale, b.h * side_scale)


def expand_region(b: BBox, side_scale: float, dims: FrameDims, square: bool = False) -> BBox:
    """
    Область поиска вокруг цели: площадь в side_scale^2 раз больше, затем обрезка по кадру.

    Args:
        b: рамка цели
        side_scale: множитель стороны (>= 1)
        dims: размер кадра
        square: квадратная область той же площади вместо сохранения пропорций

    Returns:
        Обрезанная по кадру область
    """
    if side_scale < 1:
        raise ValueError(f"side_scale должен быть >= 1, получено {side_scale}")
    return clip(scale_about_center(b, side_scale, square), dims)


# Векторные версии для массивов рамок формы (N, 4) в формате x, y, w, h

def boxes_to_array(boxes: Iterable[BBox]) -> np.ndarray:
    arr = np.array([b.as_tuple() for b in boxes], dtype=np.float64)
    return arr.reshape(-1, 4)


def array_to_boxes(arr: np.ndarray) -> list:
    return [BBox(float(x), float(y), float(w), float(h)) for x, y, w, h in np.asarray(arr, dtype=np.float64)]


def iou_many(arr: np.ndarray, b: BBox) -> np.ndarray:
    """IoU каждой рамки массива (N, 4) с рамкой b."""
    arr = np.asarray(arr, dtype=np.float64).reshape(-1, 4)
    left = np.maximum(arr[:, 0], b.x)
    top = np.maximum(arr[:, 1], b.y)
    right = np.minimum(arr[:, 0] + arr[:, 2], b.right)
    bottom = np.minimum(arr[:, 1] + arr[:, 3], b.bottom)
    inter = np.maximum(0.0, right - left) * np.maximum(0.0, bottom - top)
    union = arr[:, 2] * arr[:, 3] + b.area - inter
    return np.clip(inter / union, 0.0, 1.0)


def jitter_boxes(center: BBox, n: int, sigma_xy: float, sigma_scale: float,
                 rng: np.random.Generator) -> np.ndarray:
    """
    Гауссово возмущение рамки: сдвиг центра ~ N(0, sigma_xy * mean(w, h)),
    масштаб ~ exp(N(0, sigma_scale)), пропорции сохраняются.

    Returns:
        Массив (n, 4) рамок x, y, w, h
    """
    cx, cy = center.center()
    spread = sigma_xy * (center.w + center.h) / 2.0
    offsets = rng.normal(0.0, spread, size=(n, 2))
    scales = np.exp(rng.normal(0.0, sigma_scale, size=n))
    w = center.w * scales
    h = center.h * scales
    return np.stack([cx + offsets[:, 0] - w / 2.0, cy + offsets[:, 1] - h / 2.0, w, h], axis=1)


def clip_many(arr: np.ndarray, bounds: BBox) -> Tuple[np.ndarray, np.ndarray]:
    """
    Обрезает массив рамок по области bounds.

    Returns:
        (обрезанные рамки, маска невырожденных)
    """
    arr = np.asarray(arr, dtype=np.float64).reshape(-1, 4)
    left = np.maximum(arr[:, 0], bounds.x)
    top = np.maximum(arr[:, 1], bounds.y)
    right = np.minimum(arr[:, 0] + arr[:, 2], bounds.right)
    bottom = np.minimum(arr[:, 1] + arr[:, 3], bounds.bottom)
    out = np.stack([left, top, right - left, bottom - top], axis=1)
    valid = (out[:, 2] > 0) & (out[:, 3] > 0)
    return out, valid
