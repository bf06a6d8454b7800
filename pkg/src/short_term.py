"""Краткосрочный трекинг: гауссовы кандидаты, выбор классификатором, уточнение по сходству."""

import logging
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from src.appearance import MIN_BOX_SIDE, AppearanceModel, BBoxRegressor, ScorePair, as_float
from src.config import SamplerConfig, Thresholds
from src.geometry import BBox, FrameDims, array_to_boxes, clip_many, jitter_boxes

logger = logging.getLogger(__name__)

# Сколько раз пересэмплировать кандидата, целиком попавшего за границу
MAX_RETRIES = 10


@dataclass(frozen=True)
class TargetState:
    """Состояние цели на кадре: рамка, уверенность S_t, присутствие."""
    box: BBox
    confidence: float
    present: bool
    frame_index: int

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence должна лежать в [0, 1]: {self.confidence}")


def gaussian_sample(center: BBox, cfg: SamplerConfig, rng: np.random.Generator, dims: FrameDims,
                    n: Optional[int] = None, bounds: Optional[BBox] = None) -> List[BBox]:
    """
    Гауссово сэмплирование кандидатов вокруг рамки.

    Args:
        center: рамка, вокруг которой сэмплируем
        cfg: параметры сэмплирования
        rng: генератор случайных чисел
        dims: размер кадра
        n: число кандидатов (по умолчанию cfg.n_candidates)
        bounds: область обрезки (по умолчанию весь кадр)

    Returns:
        Список из n рамок внутри области
    """
    n = cfg.n_candidates if n is None else n
    if n < 1:
        raise ValueError("Число кандидатов должно быть >= 1")
    bounds = dims.as_box() if bounds is None else bounds
    boxes = jitter_boxes(center, n, cfg.sigma_xy, cfg.sigma_scale, rng)
    clipped, valid = _clip_valid(boxes, bounds)
    for _ in range(MAX_RETRIES):
        missing = np.flatnonzero(~valid)
        if not len(missing):
            break
        redraw = jitter_boxes(center, len(missing), cfg.sigma_xy, cfg.sigma_scale, rng)
        redrawn, redrawn_valid = _clip_valid(redraw, bounds)
        clipped[missing] = redrawn
        valid[missing] = redrawn_valid
    if not valid.all():
        # Кандидаты, так и не попавшие в область, заменяем обрезанным центром
        fallback, fallback_valid = _clip_valid(np.array([center.as_tuple()]), bounds)
        if not fallback_valid[0]:
            fallback = np.array([bounds.as_tuple()])
        clipped[~valid] = fallback[0]
    return array_to_boxes(clipped)


def _clip_valid(boxes: np.ndarray, bounds: BBox) -> Tuple[np.ndarray, np.ndarray]:
    clipped, valid = clip_many(boxes, bounds)
    valid &= (clipped[:, 2] >= MIN_BOX_SIDE) & (clipped[:, 3] >= MIN_BOX_SIDE)
    return clipped, valid


def select_by_classification(model: AppearanceModel, frame: np.ndarray,
                             candidates: List[BBox]) -> Tuple[BBox, float]:
    """Кандидат с максимальной оценкой классификации (первый при равенстве)."""
    scores = model.classify_many(frame, candidates)
    best = int(np.argmax(scores))
    return candidates[best], float(scores[best])


def refinement_grid(b: BBox, cfg: SamplerConfig, dims: FrameDims) -> List[BBox]:
    """
    Локальная сетка уточнения: сдвиги в пределах ±refine_radius_px и масштабы refine_scales.
    Нулевой сдвиг с масштабом 1 идёт первым.
    """
    steps = int(np.floor(cfg.refine_radius_px / cfg.refine_step_px + 1e-9))
    offsets = [(dy * cfg.refine_step_px, dx * cfg.refine_step_px)
               for dy in range(-steps, steps + 1) for dx in range(-steps, steps + 1)]
    offsets.sort(key=lambda o: (o[0] * o[0] + o[1] * o[1], o[0], o[1]))
    scales = sorted(cfg.refine_scales, key=lambda s: (abs(np.log(s)), s))
    cx, cy = b.center()
    rows = []
    for dy, dx in offsets:
        for s in scales:
            w, h = b.w * s, b.h * s
            rows.append((cx + dx - w / 2.0, cy + dy - h / 2.0, w, h))
    clipped, valid = _clip_valid(np.array(rows), dims.as_box())
    if not valid.any():
        return [b]
    return array_to_boxes(clipped[valid])


def refine_by_similarity(model: AppearanceModel, frame: np.ndarray, b: BBox, cfg: SamplerConfig,
                         dims: FrameDims) -> Tuple[BBox, float]:
    """Исчерпывающий локальный поиск рамки с максимальным сходством."""
    grid = refinement_grid(b, cfg, dims)
    sims = model.similarity_many(frame, grid)
    best = int(np.argmax(sims))
    return grid[best], float(sims[best])


def track_frame(model: AppearanceModel, regressor: Optional[BBoxRegressor], prev_state: TargetState,
                frame: np.ndarray, cfg: SamplerConfig, rng: np.random.Generator) -> Tuple[BBox, ScorePair]:
    """
    Один шаг краткосрочного трекинга.

    Args:
        model: модель внешнего вида
        regressor: регрессор рамки (здесь не используется, нужен модулю оценки)
        prev_state: состояние на предыдущем кадре
        frame: текущий кадр
        cfg: параметры сэмплирования и уточнения
        rng: генератор случайных чисел конвейера

    Returns:
        (уточнённая рамка, ScorePair: s_cls выбранного кандидата и s_sim уточнённой рамки)
    """
    frame = as_float(frame)
    dims = FrameDims.from_shape(frame.shape)
    candidates = gaussian_sample(prev_state.box, cfg, rng, dims)
    selected, s_cls = select_by_classification(model, frame, candidates)
    refined, s_sim = refine_by_similarity(model, frame, selected, cfg, dims)
    logger.debug(f"Frame {prev_state.frame_index + 1}: selected s_cls={s_cls:.3f}, refined s_sim={s_sim:.3f}")
    return refined, ScorePair(s_sim, s_cls)


def apply_update_policy(model: AppearanceModel, state: TargetState, frame: np.ndarray,
                        thresholds: Thresholds, score: Optional[float] = None,
                        refit_interval: int = 0, confident_count: int = 0) -> str:
    """
    Политика онлайн-обновления модели.

    S_t > th_mid: сбор сэмплов; S_t < th_low: переобучение классификатора;
    иначе модель не меняется.

    Args:
        model: модель внешнего вида
        state: итоговое состояние кадра (confidence = S_t)
        frame: кадр
        thresholds: th_mid и th_low
        score: оценка вместо state.confidence (см. update_score)
        refit_interval: периодическое переобучение каждые N уверенных кадров (0 = выкл.)
        confident_count: число уверенных кадров до текущего

    Returns:
        Выполненное действие: "collect", "collect+refit", "refit" или "none"
    """
    value = state.confidence if score is None else score
    if value > thresholds.th_mid:
        model.collect_samples(as_float(frame), state.box, frame_index=state.frame_index,
                              weight=min(1.0, max(0.0, value)))
        if refit_interval and (confident_count + 1) % refit_interval == 0:
            model.refit()
            return "collect+refit"
        return "collect"
    if value < thresholds.th_low:
        model.refit()
        return "refit"
    return "none"
