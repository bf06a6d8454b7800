"""Синтетические последовательности: текстурная цель, фон, окклюзии, выход из кадра, дистракторы."""

import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage

from src.geometry import BBox, FrameDims, center_distance, intersect

logger = logging.getLogger(__name__)

# Теги атрибутов последовательностей
ATTRIBUTES = ("ARC", "BC", "CM", "FM", "FOC", "IV", "LR", "OV", "POC", "SOB", "SV", "VC")

TARGET_SIGMA = 1.5
TARGET_CONTRAST = 45.0
OCCLUDER_SIGMA = 4.0
OCCLUDER_CONTRAST = 35.0
BACKGROUND_CONTRAST = 30.0
# Окклюдер больше цели на 15% по каждой стороне
OCCLUDER_MARGIN = 1.15
# Зазор (пиксели) между рамкой вне кадра и краем кадра
OUT_OF_VIEW_GAP = 1.0

Interval = Tuple[int, int]


@dataclass(frozen=True)
class ScenarioSpec:
    """Описание сценария. Координаты траектории мировые (совпадают с кадром 0)."""
    name: str = "scenario"
    width: int = 320
    height: int = 240
    length: int = 100
    target_size: Tuple[float, float] = (32.0, 32.0)
    texture_seed: int = 0
    # (кадр, cx, cy): кусочно-линейная траектория, скорость задаётся расстановкой ключей
    waypoints: Tuple[Tuple[float, float, float], ...] = ((0, 160.0, 120.0),)
    # (кадр, множитель ширины, множитель высоты)
    scale_keys: Tuple[Tuple[float, float, float], ...] = ((0, 1.0, 1.0),)
    occlusions: Tuple[Interval, ...] = ()
    # (начало, конец, доля ширины цели под окклюдером)
    partial_occlusions: Tuple[Tuple[float, float, float], ...] = ()
    out_of_view: Tuple[Interval, ...] = ()
    distractors: int = 0
    distractor_similarity: float = 0.0
    camera_motion: Tuple[float, float] = (0.0, 0.0)
    noise_sigma: float = 2.0
    illumination: float = 0.0
    illumination_period: float = 40.0
    appearance_drift: float = 0.0
    background_sigma: float = 6.0
    attributes: Tuple[str, ...] = ()

    def __post_init__(self):
        if self.width < 1 or self.height < 1 or self.length < 1:
            raise ValueError("width, height и length должны быть >= 1")
        tw, th = self.target_size
        if tw <= 0 or th <= 0:
            raise ValueError("target_size должен быть положительным")
        if tw > self.width or th > self.height:
            raise ValueError(f"Цель {tw}x{th} больше кадра {self.width}x{self.height}")
        if not self.waypoints:
            raise ValueError("Нужна хотя бы одна точка траектории")
        if not self.scale_keys:
            raise ValueError("Нужен хотя бы один ключ масштаба")
        for frames_list, title in ((self.waypoints, "waypoints"), (self.scale_keys, "scale_keys")):
            keys = [k[0] for k in frames_list]
            if any(b <= a for a, b in zip(keys, keys[1:])):
                raise ValueError(f"{title}: номера кадров должны строго возрастать")
        if any(sw <= 0 or sh <= 0 for _, sw, sh in self.scale_keys):
            raise ValueError("scale_keys: множители должны быть положительными")
        absent = []
        for start, end in list(self.occlusions) + list(self.out_of_view):
            self._check_interval(start, end)
            absent.append((start, end))
        absent.sort()
        if any(b[0] <= a[1] for a, b in zip(absent, absent[1:])):
            raise ValueError("Интервалы окклюзий и выхода из кадра не должны пересекаться")
        if absent and absent[0][0] == 0:
            raise ValueError("Цель должна присутствовать на кадре 0")
        for start, end, coverage in self.partial_occlusions:
            self._check_interval(int(start), int(end))
            if not 0.0 < coverage < 1.0:
                raise ValueError(f"Доля частичной окклюзии должна лежать в (0, 1): {coverage}")
        if self.distractors < 0:
            raise ValueError("distractors не может быть отрицательным")
        if not 0.0 <= self.distractor_similarity <= 1.0:
            raise ValueError("distractor_similarity должен лежать в [0, 1]")
        if self.noise_sigma < 0 or self.background_sigma <= 0 or self.illumination_period <= 0:
            raise ValueError("noise_sigma >= 0, background_sigma > 0, illumination_period > 0")
        if not 0.0 <= self.appearance_drift <= 1.0:
            raise ValueError("appearance_drift должен лежать в [0, 1]")
        unknown = set(self.attributes) - set(ATTRIBUTES)
        if unknown:
            raise ValueError(f"Неизвестные атрибуты: {', '.join(sorted(unknown))}")

    def _check_interval(self, start: int, end: int) -> None:
        if not 0 <= start <= end < self.length:
            raise ValueError(f"Интервал [{start}, {end}] вне диапазона [0, {self.length})")

    @property
    def dims(self) -> FrameDims:
        return FrameDims(self.width, self.height)

    def absent_frames(self) -> List[int]:
        """Кадры без цели: объединение окклюзий и выхода из кадра."""
        frames = set()
        for start, end in list(self.occlusions) + list(self.out_of_view):
            frames.update(range(start, end + 1))
        return sorted(frames)

    def world_box(self, t: int) -> BBox:
        """Рамка цели в мировых координатах на кадре t."""
        cx = _interpolate(self.waypoints, t, 1)
        cy = _interpolate(self.waypoints, t, 2)
        sw = _interpolate(self.scale_keys, t, 1)
        sh = _interpolate(self.scale_keys, t, 2)
        return BBox.from_center(cx, cy, self.target_size[0] * sw, self.target_size[1] * sh)

    def camera_offset(self, t: int) -> Tuple[float, float]:
        return (self.camera_motion[0] * t, self.camera_motion[1] * t)

    def image_box(self, t: int) -> BBox:
        """Рамка цели в координатах кадра; на кадрах выхода из кадра она целиком за краем."""
        ox, oy = self.camera_offset(t)
        box = self.world_box(t).translate(-ox, -oy)
        if _in_intervals(t, self.out_of_view):
            box = push_outside(box, self.dims)
        return box


def _interpolate(keys: Sequence[Tuple[float, ...]], t: float, column: int) -> float:
    frames = [k[0] for k in keys]
    values = [k[column] for k in keys]
    return float(np.interp(t, frames, values))


def _in_intervals(t: int, intervals) -> bool:
    return any(start <= t <= end for start, end, *_ in intervals)


def push_outside(b: BBox, dims: FrameDims) -> BBox:
    """Сдвигает рамку за ближайший край кадра; рамку вне кадра не меняет."""
    if intersect(b, dims.as_box()) is None:
        return b
    shifts = [(-(b.right + OUT_OF_VIEW_GAP), 0.0), (dims.width - b.x + OUT_OF_VIEW_GAP, 0.0),
              (0.0, -(b.bottom + OUT_OF_VIEW_GAP)), (0.0, dims.height - b.y + OUT_OF_VIEW_GAP)]
    dx, dy = min(shifts, key=lambda s: abs(s[0]) + abs(s[1]))
    return b.translate(dx, dy)


@dataclass(eq=False)
class SequenceRecord:
    """Кадры и разметка последовательности."""
    name: str
    frames: np.ndarray
    groundtruth: List[Optional[BBox]]
    attributes: Tuple[str, ...]
    spec_hash: str = ""
    spec: Optional[ScenarioSpec] = field(default=None, repr=False)

    def __post_init__(self):
        if len(self.frames) != len(self.groundtruth):
            raise ValueError("Число кадров и строк разметки не совпадает")
        if self.groundtruth and self.groundtruth[0] is None:
            raise ValueError("Разметка кадра 0 обязательна")

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def dims(self) -> FrameDims:
        return FrameDims.from_shape(self.frames[0].shape)

    @property
    def present(self) -> List[bool]:
        return [b is not None for b in self.groundtruth]


def band_limited_texture(rng: np.random.Generator, shape: Tuple[int, int], sigma: float) -> np.ndarray:
    """Сглаженный гауссов шум с нулевым средним и единичным СКО."""
    noise = ndimage.gaussian_filter(rng.normal(size=shape), sigma, mode="wrap")
    noise -= noise.mean()
    std = noise.std()
    return noise / std if std > 0 else noise


def mix_textures(base: np.ndarray, other: np.ndarray, similarity: float) -> np.ndarray:
    """s * base + sqrt(1 - s^2) * other: при независимых текстурах NCC с base примерно равен s."""
    return similarity * base + math.sqrt(max(0.0, 1.0 - similarity * similarity)) * other


def _coverage(start: float, size: float, count: int) -> Tuple[int, np.ndarray]:
    """Первый пиксель и доли покрытия пикселей отрезком [start, start + size)."""
    first = max(int(math.floor(start)), 0)
    last = min(int(math.ceil(start + size)), count)
    if last <= first:
        return first, np.zeros(0)
    edges = np.arange(first, last, dtype=np.float64)
    overlap = np.minimum(edges + 1.0, start + size) - np.maximum(edges, start)
    return first, np.clip(overlap, 0.0, 1.0)


def paint(canvas: np.ndarray, box: BBox, texture: np.ndarray) -> None:
    """
    Рисует текстуру в рамке с билинейным масштабированием и сглаживанием краёв.

    Args:
        canvas: кадр (изменяется на месте)
        box: рамка в координатах кадра
        texture: текстура (h, w) в единицах яркости
    """
    height, width = canvas.shape
    x0, ax = _coverage(box.x, box.w, width)
    y0, ay = _coverage(box.y, box.h, height)
    if not len(ax) or not len(ay):
        return
    th, tw = texture.shape
    # Центр пикселя j лежит в точке j + 0.5
    u = (np.arange(x0, x0 + len(ax)) + 0.5 - box.x) / box.w * tw - 0.5
    v = (np.arange(y0, y0 + len(ay)) + 0.5 - box.y) / box.h * th - 0.5
    rows, cols = np.meshgrid(v, u, indexing="ij")
    values = ndimage.map_coordinates(texture, [rows.ravel(), cols.ravel()], order=1, mode="nearest")
    values = values.reshape(len(ay), len(ax))
    alpha = ay[:, None] * ax[None, :]
    region = canvas[y0:y0 + len(ay), x0:x0 + len(ax)]
    region[...] = (1.0 - alpha) * region + alpha * values


def _place_distractors(spec: ScenarioSpec, rng: np.random.Generator) -> List[BBox]:
    """Статичные (в мировых координатах) позиции дистракторов вдали от траектории цели."""
    tw, th = spec.target_size
    path = [spec.world_box(t) for t in range(spec.length)]
    keep_away = 1.5 * max(tw, th)
    placed: List[BBox] = []
    for _ in range(spec.distractors):
        for _attempt in range(100):
            cx = rng.uniform(tw / 2.0, spec.width - tw / 2.0)
            cy = rng.uniform(th / 2.0, spec.height - th / 2.0)
            box = BBox.from_center(cx, cy, tw, th)
            if all(center_distance(box, p) >= keep_away for p in path[::5] + path[-1:]) and \
                    all(center_distance(box, d) >= max(tw, th) for d in placed):
                placed.append(box)
                break
        else:
            logger.warning(f"{spec.name}: no free place for distractor {len(placed) + 1}")
    return placed


def spec_hash(spec: ScenarioSpec, seed: int) -> str:
    payload = json.dumps({"spec": asdict(spec), "seed": int(seed)}, sort_keys=True)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def generate(spec: ScenarioSpec, seed: int = 0) -> SequenceRecord:
    """
    Генерирует последовательность по сценарию.

    Args:
        spec: сценарий
        seed: зерно (вместе с texture_seed определяет все случайные величины)

    Returns:
        Кадры uint8 и разметка с флагами присутствия
    """
    dims = spec.dims
    absent = set(spec.absent_frames())
    groundtruth: List[Optional[BBox]] = []
    for t in range(spec.length):
        if t in absent:
            groundtruth.append(None)
            continue
        visible = intersect(spec.image_box(t), dims.as_box())
        if visible is None:
            raise ValueError(f"{spec.name}: цель целиком вне кадра на кадре {t}; отметьте его как out_of_view")
        groundtruth.append(visible)

    rng = np.random.default_rng([int(seed), int(spec.texture_seed)])
    tw, th = spec.target_size
    native = (max(int(round(th)), 2), max(int(round(tw)), 2))
    base = band_limited_texture(rng, native, TARGET_SIGMA)
    drift_texture = band_limited_texture(rng, native, TARGET_SIGMA)
    target_mean = rng.uniform(100.0, 160.0)

    offsets = np.array([spec.camera_offset(t) for t in range(spec.length)])
    margin = 4
    min_off = np.floor(offsets.min(axis=0)).astype(int)
    max_off = np.ceil(offsets.max(axis=0)).astype(int)
    world_w = spec.width + (max_off[0] - min_off[0]) + 2 * margin
    world_h = spec.height + (max_off[1] - min_off[1]) + 2 * margin
    background = 120.0 + BACKGROUND_CONTRAST * band_limited_texture(rng, (world_h, world_w), spec.background_sigma)
    origin = (margin - min_off[0], margin - min_off[1])

    occluder = OCCLUDER_CONTRAST * band_limited_texture(rng, native, OCCLUDER_SIGMA) + rng.uniform(60.0, 200.0)
    distractor_boxes = _place_distractors(spec, rng)
    distractor_textures = []
    for _ in distractor_boxes:
        other = band_limited_texture(rng, native, TARGET_SIGMA)
        distractor_textures.append(target_mean + TARGET_CONTRAST * mix_textures(base, other, spec.distractor_similarity))

    ys, xs = np.mgrid[0:spec.height, 0:spec.width].astype(np.float64)
    frames = np.empty((spec.length, spec.height, spec.width), dtype=np.uint8)
    for t in range(spec.length):
        ox, oy = offsets[t]
        canvas = ndimage.map_coordinates(background, [ys + oy + origin[1], xs + ox + origin[0]],
                                         order=1, mode="nearest")
        for box, texture in zip(distractor_boxes, distractor_textures):
            paint(canvas, box.translate(-ox, -oy), texture)

        target_box = spec.image_box(t)
        if t not in absent or _in_intervals(t, spec.occlusions):
            drift = spec.appearance_drift * t / max(spec.length - 1, 1)
            pattern = base if drift == 0 else mix_textures(base, drift_texture, math.cos(drift * math.pi / 2))
            paint(canvas, target_box, target_mean + TARGET_CONTRAST * pattern)
        if _in_intervals(t, spec.occlusions):
            cx, cy = target_box.center()
            paint(canvas, BBox.from_center(cx, cy, target_box.w * OCCLUDER_MARGIN, target_box.h * OCCLUDER_MARGIN),
                  occluder)
        for start, end, coverage in spec.partial_occlusions:
            if start <= t <= end:
                pad_w = target_box.w * (OCCLUDER_MARGIN - 1.0) / 2.0
                pad_h = target_box.h * (OCCLUDER_MARGIN - 1.0) / 2.0
                partial = BBox(target_box.x - pad_w, target_box.y - pad_h,
                               target_box.w * coverage + pad_w, target_box.h + 2.0 * pad_h)
                paint(canvas, partial, occluder)

        if spec.illumination:
            wave = spec.illumination * math.sin(2.0 * math.pi * t / spec.illumination_period)
            canvas = canvas * (1.0 + wave) + 60.0 * wave * (xs / spec.width - 0.5)
        if spec.noise_sigma > 0:
            canvas = canvas + rng.normal(0.0, spec.noise_sigma, size=canvas.shape)
        frames[t] = np.clip(np.round(canvas), 0, 255).astype(np.uint8)

    logger.info(f"Generated {spec.name}: {spec.length} frames, {len(absent)} absent, "
                f"{len(distractor_boxes)} distractors")
    return SequenceRecord(spec.name, frames, groundtruth, tuple(spec.attributes), spec_hash(spec, seed), spec)


# Сериализация сценария в плоский файл key = value

def _format_rows(rows) -> str:
    return "; ".join(",".join(format(v, "g") for v in row) for row in rows)


def _parse_rows(text: str, width: int, key: str) -> Tuple[Tuple[float, ...], ...]:
    rows = []
    for chunk in text.split(";"):
        if not chunk.strip():
            continue
        values = tuple(float(v) for v in chunk.split(","))
        if len(values) != width:
            raise ValueError(f"{key}: ожидается {width} чисел в записи {chunk.strip()!r}")
        rows.append(values)
    return tuple(rows)


_ROW_WIDTH = {"waypoints": 3, "scale_keys": 3, "occlusions": 2, "partial_occlusions": 3, "out_of_view": 2}


def spec_to_settings(spec: ScenarioSpec) -> Dict[str, str]:
    """Сценарий в виде плоского словаря строк."""
    settings: Dict[str, str] = {}
    for f in fields(ScenarioSpec):
        value = getattr(spec, f.name)
        if f.name in _ROW_WIDTH:
            settings[f.name] = _format_rows(value)
        elif f.name == "attributes":
            settings[f.name] = ",".join(value)
        elif isinstance(value, tuple):
            settings[f.name] = ",".join(format(v, "g") for v in value)
        else:
            settings[f.name] = str(value)
    return settings


def spec_from_settings(settings: Dict[str, str]) -> ScenarioSpec:
    """
    Разбирает сценарий из плоского словаря строк.

    Raises:
        ValueError: неизвестный ключ или некорректное значение
    """
    known = {f.name: f for f in fields(ScenarioSpec)}
    unknown = set(settings) - set(known)
    if unknown:
        raise ValueError(f"Неизвестные ключи сценария: {', '.join(sorted(unknown))}")
    values = {}
    defaults = ScenarioSpec()
    for key, raw in settings.items():
        text = str(raw).strip()
        try:
            if key in _ROW_WIDTH:
                rows = _parse_rows(text, _ROW_WIDTH[key], key)
                if key in ("occlusions", "out_of_view"):
                    rows = tuple((int(a), int(b)) for a, b in rows)
                values[key] = rows
            elif key == "attributes":
                values[key] = tuple(part.strip() for part in text.split(",") if part.strip())
            elif key in ("target_size", "camera_motion"):
                parts = tuple(float(v) for v in text.split(","))
                if len(parts) != 2:
                    raise ValueError(text)
                values[key] = parts
            elif key == "name":
                values[key] = text
            elif isinstance(getattr(defaults, key), int):
                values[key] = int(text)
            else:
                values[key] = float(text)
        except ValueError as e:
            raise ValueError(f"Некорректное значение сценария {key}: {raw!r} ({e})") from None
    return ScenarioSpec(**values)


def standard_specs() -> List[ScenarioSpec]:
    """Фиксированный набор сценариев, покрывающий все 12 атрибутов."""
    return [
        ScenarioSpec(name="static_easy", length=60, texture_seed=1),
        ScenarioSpec(name="slow_pan", length=100, texture_seed=2,
                     waypoints=((0, 80, 120), (99, 240, 120))),
        ScenarioSpec(name="fast_motion", length=81, texture_seed=3,
                     waypoints=((0, 60, 60), (20, 200, 60), (40, 200, 180), (60, 60, 180), (80, 60, 60)),
                     attributes=("FM",)),
        ScenarioSpec(name="scale_up", length=100, texture_seed=4,
                     waypoints=((0, 140, 120), (99, 180, 120)),
                     scale_keys=((0, 1.0, 1.0), (99, 1.8, 1.8)), attributes=("SV",)),
        ScenarioSpec(name="aspect_change", length=100, texture_seed=5,
                     scale_keys=((0, 1.0, 1.0), (49, 1.6, 0.7), (99, 1.0, 1.0)), attributes=("ARC",)),
        ScenarioSpec(name="camera_pan", length=60, texture_seed=6,
                     waypoints=((0, 200, 110),), camera_motion=(1.5, 0.5), attributes=("CM",)),
        ScenarioSpec(name="illumination", length=100, texture_seed=7,
                     waypoints=((0, 120, 100), (99, 200, 140)),
                     illumination=0.35, illumination_period=40.0, attributes=("IV",)),
        ScenarioSpec(name="low_res", length=100, texture_seed=8, target_size=(12.0, 12.0),
                     waypoints=((0, 100, 100), (99, 180, 130)), attributes=("LR",)),
        ScenarioSpec(name="viewpoint", length=100, texture_seed=9,
                     waypoints=((0, 120, 120), (99, 200, 120)), appearance_drift=0.6, attributes=("VC",)),
        ScenarioSpec(name="clutter", length=100, texture_seed=10,
                     waypoints=((0, 100, 120), (99, 220, 120)), background_sigma=1.5, attributes=("BC",)),
        ScenarioSpec(name="similar_objects", length=100, texture_seed=11,
                     waypoints=((0, 160, 60), (99, 160, 180)), distractors=2, distractor_similarity=0.6,
                     attributes=("SOB",)),
        ScenarioSpec(name="distractor_heavy", length=100, texture_seed=12,
                     waypoints=((0, 160, 120),), distractors=6, distractor_similarity=0.7,
                     background_sigma=3.0, attributes=("SOB", "BC")),
        ScenarioSpec(name="partial_occlusion", length=100, texture_seed=13,
                     waypoints=((0, 100, 120), (99, 200, 120)), partial_occlusions=((40, 60, 0.5),),
                     attributes=("POC",)),
        ScenarioSpec(name="full_occlusion", length=140, texture_seed=14,
                     waypoints=((0, 100, 120), (139, 200, 120)), occlusions=((60, 80),),
                     attributes=("FOC",)),
        ScenarioSpec(name="reappear_near", length=120, texture_seed=15,
                     waypoints=((0, 100, 120), (50, 100, 120), (70, 110, 120), (119, 110, 120)),
                     occlusions=((50, 69),), attributes=("FOC",)),
        ScenarioSpec(name="reappear_far", length=150, texture_seed=16,
                     waypoints=((0, 70, 60), (59, 30, 60), (60, -20, 60), (89, -20, 200), (90, 250, 180),
                                (149, 250, 180)),
                     out_of_view=((60, 89),), attributes=("OV",)),
        ScenarioSpec(name="long_occlusion", length=260, texture_seed=17,
                     waypoints=((0, 120, 120), (259, 180, 120)), occlusions=((60, 170),),
                     attributes=("FOC",)),
        ScenarioSpec(name="out_of_view_return", length=130, texture_seed=18,
                     waypoints=((0, 160, 80), (49, 160, 30), (50, 160, -20), (79, 140, -20), (80, 120, 100),
                                (129, 120, 100)),
                     out_of_view=((50, 79),), camera_motion=(0.5, 0.0), attributes=("OV", "CM")),
        ScenarioSpec(name="occlusion_with_motion", length=100, texture_seed=19,
                     waypoints=((0, 60, 120), (40, 160, 120), (99, 260, 120)),
                     partial_occlusions=((30, 39, 0.4),), occlusions=((40, 55),),
                     attributes=("FOC", "FM", "POC")),
        ScenarioSpec(name="combined", length=120, texture_seed=20,
                     waypoints=((0, 120, 120), (119, 200, 100)),
                     scale_keys=((0, 1.0, 1.0), (60, 1.4, 1.0), (119, 1.2, 1.3)),
                     illumination=0.25, distractors=2, distractor_similarity=0.5,
                     attributes=("ARC", "SV", "IV", "SOB")),
        ScenarioSpec(name="out_of_view_long", length=160, texture_seed=21, target_size=(14.0, 14.0),
                     waypoints=((0, 100, 40), (39, 100, 12), (40, 100, -12), (99, 220, -12), (100, 220, 160),
                                (159, 220, 160)),
                     out_of_view=((40, 99),), attributes=("OV", "LR")),
    ]


def standard_suite(seed: int = 0) -> List[SequenceRecord]:
    """Генерирует стандартный набор последовательностей."""
    return [generate(spec, seed) for spec in standard_specs()]
