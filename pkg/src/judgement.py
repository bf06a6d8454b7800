"""Таблица решений по (S_s, S_c), действия восстановления, уверенность S_t и критерий срыва."""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np

from src.appearance import AppearanceModel, BBoxRegressor, ScorePair, regress
from src.config import MotionConfig, SamplerConfig, Thresholds
from src.geometry import BBox, FrameDims, expand_region
from src.motion import compensate, reliable_motion
from src.short_term import gaussian_sample, select_by_classification

logger = logging.getLogger(__name__)


class Decision(str, Enum):
    SUCCESS = "Success"
    DISTRACTOR_RESAMPLE = "DistractorResample"
    FLOW_GUIDED_RESAMPLE = "FlowGuidedResample"
    REFINE = "Refine"


def decide(scores: ScorePair, th: Thresholds) -> Decision:
    """
    Решение по паре оценок. Равенство порогу относится к «низкой» ветке.

    Args:
        scores: S_s и S_c результата краткосрочного трекинга
        th: пороги (используется th_mid)

    Returns:
        Одно из четырёх решений
    """
    high_sim = scores.s_sim > th.th_mid
    positive = scores.s_cls > 0
    if high_sim:
        return Decision.SUCCESS if positive else Decision.DISTRACTOR_RESAMPLE
    return Decision.REFINE if positive else Decision.FLOW_GUIDED_RESAMPLE


@dataclass
class JudgementContext:
    """Всё, что нужно действиям восстановления на текущем кадре."""
    frame: np.ndarray
    prev_frame: np.ndarray
    result_box: BBox
    prev_box: BBox
    model: AppearanceModel
    regressor: Optional[BBoxRegressor]
    sampler: SamplerConfig
    motion: MotionConfig
    rng: np.random.Generator


def resolve(decision: Decision, context: JudgementContext) -> BBox:
    """
    Выполняет действие, соответствующее решению.

    Args:
        decision: решение таблицы
        context: кадры, рамки и модули текущего кадра

    Returns:
        Итоговая рамка кадра (до пересчёта оценок)
    """
    if decision == Decision.SUCCESS:
        return context.result_box

    frame = context.frame
    dims = FrameDims.from_shape(frame.shape)
    if decision == Decision.DISTRACTOR_RESAMPLE:
        candidates = gaussian_sample(context.result_box, context.sampler, context.rng, dims)
        box, s_cls = select_by_classification(context.model, frame, candidates)
        logger.debug(f"Distractor resample: s_cls={s_cls:.3f}")
        return box

    if decision == Decision.FLOW_GUIDED_RESAMPLE:
        region = expand_region(context.prev_box, context.motion.flow_region_scale, dims)
        mv = reliable_motion(context.prev_frame, frame, region, context.motion)
        center = compensate(context.prev_box, mv)
        candidates = gaussian_sample(center, context.sampler, context.rng, dims)
        box, s_cls = select_by_classification(context.model, frame, candidates)
        logger.debug(f"Flow-guided resample around motion ({mv.dx}, {mv.dy}): s_cls={s_cls:.3f}")
        return box

    if context.regressor is None:
        return context.result_box
    return regress(context.regressor, frame, context.result_box)


def confidence(model: AppearanceModel, frame: np.ndarray, box: BBox) -> float:
    """S_t: сходство рамки с начальным шаблоном цели."""
    return model.initial_similarity(frame, box)


def check_failure(s_t: float, th: Thresholds) -> bool:
    """Срыв краткосрочного трекинга: S_t строго меньше th_low."""
    return s_t < th.th_low
