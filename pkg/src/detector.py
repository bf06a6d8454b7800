"""Каскадная повторная детекция: локальный поиск, области 5^2 и 18^2, весь кадр."""

import logging
import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage

from src.appearance import MIN_BOX_SIDE, AppearanceModel, ScorePair, as_float
from src.config import CascadeConfig, MotionConfig, SamplerConfig, Thresholds
from src.geometry import BBox, FrameDims, center_distance, clip, expand_region, iou_many
from src.motion import compensate, reliable_motion
from src.short_term import TargetState, gaussian_sample, refine_by_similarity

logger = logging.getLogger(__name__)

WINDOW_SCALES = (0.5, 0.71, 1.0, 1.41, 2.0)
WINDOW_ASPECTS = (0.5, 1.0, 2.0)
WINDOW_STRIDE = 0.25
RING_SCALE = 1.5
NMS_IOU = 0.7
# Радиус доводки кандидатов локальной стадии в долях max(w, h)
LOCAL_REFINE_RADIUS = 0.25
LOCAL_COARSE_STEP = 2.0


class Stage(str, Enum):
    LOCAL = "Local"
    AREA5 = "Area5"
    AREA18 = "Area18"
    GLOBAL = "Global"
    NONE = "None"


CASCADE_ORDER = (Stage.LOCAL, Stage.AREA5, Stage.AREA18, Stage.GLOBAL)


@dataclass(frozen=True)
class Proposal:
    """Кандидат детекции: рамка, объектность и (после ранжирования) оценки."""
    box: BBox
    objectness: float
    scores: Optional[ScorePair] = None
    index: int = 0


@dataclass(frozen=True)
class DetectionOutcome:
    found: bool
    box: Optional[BBox]
    scores: Optional[ScorePair]
    stage: Stage
    # Лучшее сходство среди проверенных кандидатов (уверенность кадра без цели)
    best_score: float = 0.0

    def __post_init__(self):
        if self.found and (self.box is None or self.scores is None or self.stage == Stage.NONE):
            raise ValueError("found=True требует рамку, оценки и стадию")


NOT_FOUND = DetectionOutcome(False, None, None, Stage.NONE, 0.0)


class ObjectnessMap:
    def __init__(self, frame: np.ndarray):
        """
        Интегральное изображение энергии градиента кадра (модуль оператора Собеля).

        Args:
            frame: кадр
        """
        frame = as_float(frame)
        self.dims = FrameDims.from_shape(frame.shape)
        energy = np.hypot(ndimage.sobel(frame, axis=1), ndimage.sobel(frame, axis=0))
        integral = np.zeros((frame.shape[0] + 1, frame.shape[1] + 1))
        integral[1:, 1:] = energy.cumsum(axis=0).cumsum(axis=1)
        self.integral = integral

    def _sums(self, boxes: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Сумма энергии и площадь (в пикселях) для массива рамок, обрезанных по кадру."""
        x0 = np.clip(np.round(boxes[:, 0]), 0, self.dims.width).astype(int)
        y0 = np.clip(np.round(boxes[:, 1]), 0, self.dims.height).astype(int)
        x1 = np.clip(np.round(boxes[:, 0] + boxes[:, 2]), 0, self.dims.width).astype(int)
        y1 = np.clip(np.round(boxes[:, 1] + boxes[:, 3]), 0, self.dims.height).astype(int)
        ii = self.integral
        total = ii[y1, x1] - ii[y0, x1] - ii[y1, x0] + ii[y0, x0]
        area = np.maximum(x1 - x0, 0) * np.maximum(y1 - y0, 0)
        return total, area.astype(np.float64)

    def contrast(self, boxes: np.ndarray) -> np.ndarray:
        """Средняя энергия окна минус средняя энергия кольца вокруг него."""
        boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
        inner_sum, inner_area = self._sums(boxes)
        cx = boxes[:, 0] + boxes[:, 2] / 2.0
        cy = boxes[:, 1] + boxes[:, 3] / 2.0
        ow, oh = boxes[:, 2] * RING_SCALE, boxes[:, 3] * RING_SCALE
        outer = np.stack([cx - ow / 2.0, cy - oh / 2.0, ow, oh], axis=1)
        outer_sum, outer_area = self._sums(outer)
        inner_mean = np.where(inner_area > 0, inner_sum / np.maximum(inner_area, 1.0), 0.0)
        ring_area = outer_area - inner_area
        ring_mean = np.where(ring_area > 0, (outer_sum - inner_sum) / np.maximum(ring_area, 1.0), 0.0)
        return inner_mean - ring_mean


def _positions(start: float, span: float, size: float, stride: float) -> np.ndarray:
    """Позиции окна с шагом stride; последняя позиция прижата к краю области."""
    last = start + span - size
    values = np.arange(start, last + 1e-9, stride)
    if len(values) == 0 or last - values[-1] > 1e-9:
        values = np.append(values, last)
    return values


def sliding_windows(region: BBox, prior_size: Tuple[float, float]) -> np.ndarray:
    """Окна в порядке обхода: масштаб, пропорции, строка, столбец."""
    pw, ph = prior_size
    windows = []
    for scale in WINDOW_SCALES:
        for aspect in WINDOW_ASPECTS:
            w = pw * scale * math.sqrt(aspect)
            h = ph * scale / math.sqrt(aspect)
            if w > region.w + 1e-9 or h > region.h + 1e-9 or w < MIN_BOX_SIDE or h < MIN_BOX_SIDE:
                continue
            xs = _positions(region.x, region.w, w, max(WINDOW_STRIDE * w, 1.0))
            ys = _positions(region.y, region.h, h, max(WINDOW_STRIDE * h, 1.0))
            gx, gy = np.meshgrid(xs, ys)
            block = np.stack([gx.ravel(), gy.ravel(), np.full(gx.size, w), np.full(gx.size, h)], axis=1)
            windows.append(block)
    if not windows:
        return np.zeros((0, 4))
    return np.concatenate(windows)


def propose(frame: np.ndarray, region: BBox, prior_size: Tuple[float, float], budget: int,
            objectness: Optional[ObjectnessMap] = None) -> List[Proposal]:
    """
    Разреженные кандидаты в области: скользящие окна, объектность, NMS.

    Args:
        frame: кадр
        region: область поиска
        prior_size: ожидаемый размер цели (w, h)
        budget: максимальное число предложений
        objectness: заранее посчитанная карта объектности кадра

    Returns:
        Не более budget предложений по убыванию объектности
    """
    if budget < 1:
        raise ValueError("budget должен быть >= 1")
    frame = as_float(frame)
    dims = FrameDims.from_shape(frame.shape)
    region = clip(region, dims)
    windows = sliding_windows(region, prior_size)
    if not len(windows):
        return [Proposal(region, 0.0, None, 0)]

    objectness = objectness or ObjectnessMap(frame)
    scores = objectness.contrast(windows)
    order = np.argsort(-scores, kind="stable")
    kept: List[int] = []
    kept_boxes = np.zeros((0, 4))
    for idx in order:
        if len(kept) >= budget:
            break
        candidate = windows[idx]
        if len(kept):
            overlap = iou_many(kept_boxes, BBox(*candidate))
            if np.any(overlap > NMS_IOU):
                continue
        kept.append(int(idx))
        kept_boxes = np.vstack([kept_boxes, candidate])
    return [Proposal(BBox(*map(float, windows[i])), float(scores[i]), None, i) for i in kept]


def shape_prior(b: BBox, prev_box: BBox) -> float:
    return math.exp(-abs(math.log(b.w / prev_box.w)) - abs(math.log(b.h / prev_box.h)))


def distance_prior(b: BBox, prev_box: BBox, dims: FrameDims) -> float:
    return math.exp(-center_distance(b, prev_box) / dims.diagonal)


def rank_proposals(proposals: Sequence[Proposal], prev_box: BBox, model: AppearanceModel, frame: np.ndarray,
                   mode: str = "composite", k: int = 16) -> List[Proposal]:
    """
    Ранжирует предложения по положению, расстоянию, форме и внешнему виду.

    Args:
        proposals: непустой список предложений
        prev_box: последняя известная рамка цели
        model: модель внешнего вида
        frame: кадр
        mode: composite (произведение априорных множителей и S_s) или sequential
            (K ближайших, затем ceil(K/2) наиболее похожих по форме, затем по S_s)
        k: K для последовательного режима

    Returns:
        Перестановка входных предложений с заполненными оценками
    """
    if not proposals:
        raise ValueError("Пустой список предложений")
    frame = as_float(frame)
    dims = FrameDims.from_shape(frame.shape)
    boxes = [p.box for p in proposals]
    sims = model.similarity_many(frame, boxes)
    cls = model.classify_many(frame, boxes)
    scored = [replace(p, scores=ScorePair(float(s), float(c))) for p, s, c in zip(proposals, sims, cls)]
    shapes = [shape_prior(b, prev_box) for b in boxes]
    distances = [distance_prior(b, prev_box, dims) for b in boxes]
    positions = range(len(scored))

    if mode == "sequential":
        by_distance = sorted(positions, key=lambda i: (-distances[i], proposals[i].index))
        near = by_distance[:k]
        by_shape = sorted(near, key=lambda i: (-shapes[i], proposals[i].index))
        shortlist = by_shape[:max(1, math.ceil(k / 2))]
        by_appearance = sorted(shortlist, key=lambda i: (-sims[i], -cls[i], proposals[i].index))
        order = by_appearance + by_shape[len(shortlist):] + by_distance[len(near):]
    elif mode == "composite":
        composite = [sims[i] * shapes[i] * distances[i] for i in positions]
        order = sorted(positions, key=lambda i: (-composite[i], -cls[i], proposals[i].index))
    else:
        raise ValueError(f"Неизвестный режим ранжирования: {mode}")
    return [scored[i] for i in order]


def local_span(prev_box: BBox, dims: FrameDims, cascade: CascadeConfig, motion: MotionConfig) -> BBox:
    """Область локальной стадии: не шире области первой ступени каскада."""
    scale = min(motion.flow_region_scale, cascade.stage_scales[0])
    return expand_region(prev_box, scale, dims, cascade.square_regions)


def stage_regions(prev_box: BBox, dims: FrameDims, cascade: CascadeConfig,
                  motion: MotionConfig = MotionConfig()) -> Dict[Stage, BBox]:
    """Области поиска стадий каскада (вложенные после обрезки по кадру)."""
    area5, area18 = cascade.stage_scales
    return {
        Stage.LOCAL: local_span(prev_box, dims, cascade, motion),
        Stage.AREA5: expand_region(prev_box, area5, dims, cascade.square_regions),
        Stage.AREA18: expand_region(prev_box, area18, dims, cascade.square_regions),
        Stage.GLOBAL: dims.as_box(),
    }


class CascadeDetector:
    def __init__(self, cascade: CascadeConfig, thresholds: Thresholds, sampler: SamplerConfig,
                 motion: MotionConfig, rng: np.random.Generator):
        """
        Каскадный детектор с курсором стадии для режима одной стадии на кадр.

        Args:
            cascade: параметры каскада
            thresholds: пороги det_sim и det_cls, общие для всех стадий
            sampler: параметры гауссова сэмплирования локальной стадии
            motion: параметры оценки движения
            rng: генератор конвейера
        """
        self.cascade = cascade
        self.thresholds = thresholds
        self.sampler = sampler
        self.motion = motion
        self.rng = rng
        self.cursor = 0

    def reset(self) -> None:
        self.cursor = 0

    def _passes(self, scores: ScorePair) -> bool:
        return scores.s_cls > self.thresholds.det_cls and scores.s_sim > self.thresholds.det_sim

    def _refine(self, frame: np.ndarray, proposal: Proposal, model: AppearanceModel, dims: FrameDims,
                radius: int, coarse_step: float = 1.0) -> Proposal:
        """Доводит рамку до максимума сходства в квадрате ±radius: грубый проход, затем шаг 1 px."""
        coarse = replace(self.sampler, refine_step_px=coarse_step, refine_radius_px=float(radius),
                         refine_scales=(1.0,))
        box, s_sim = refine_by_similarity(model, frame, proposal.box, coarse, dims)
        if coarse_step > 1.0:
            fine = replace(coarse, refine_step_px=1.0, refine_radius_px=coarse_step - 1.0)
            box, s_sim = refine_by_similarity(model, frame, box, fine, dims)
        return replace(proposal, box=box, scores=ScorePair(s_sim, model.classify(frame, box)))

    def _local(self, frame: np.ndarray, prev_frame: np.ndarray, prev_box: BBox,
               model: AppearanceModel, dims: FrameDims, span: BBox) -> List[Proposal]:
        """
        Локальная стадия: гауссовы кандидаты вокруг рамки, сдвинутой на глобальное движение.

        Кандидаты идут по убыванию S_c; gate_top_k лучших, разнесённых не меньше чем на радиус
        доводки, доводятся по сходству. Первым остаётся argmax классификации.
        """
        flow_region = expand_region(prev_box, self.motion.flow_region_scale, dims)
        mv = reliable_motion(prev_frame, frame, flow_region, self.motion)
        center = compensate(prev_box, mv)
        candidates = gaussian_sample(center, self.sampler, self.rng, dims, n=self.cascade.local_n, bounds=span)
        cls = model.classify_many(frame, candidates)
        radius = max(1, math.ceil(LOCAL_REFINE_RADIUS * max(prev_box.w, prev_box.h)))
        picked: List[Proposal] = []
        for i in np.argsort(-cls, kind="stable"):
            if len(picked) >= self.cascade.gate_top_k:
                break
            if any(center_distance(candidates[i], p.box) < radius for p in picked):
                continue
            picked.append(Proposal(candidates[i], 0.0, None, int(i)))
        return [self._refine(frame, p, model, dims, radius, LOCAL_COARSE_STEP) for p in picked]

    def _proposal_stage(self, frame: np.ndarray, region: BBox, prev_box: BBox, budget: int,
                        model: AppearanceModel, objectness: ObjectnessMap) -> List[Proposal]:
        dims = FrameDims.from_shape(frame.shape)
        proposals = propose(frame, region, (prev_box.w, prev_box.h), budget, objectness)
        ranked = rank_proposals(proposals, prev_box, model, frame,
                                self.cascade.ranking_mode, self.cascade.sequential_k)
        # Доводка в пределах половины шага сетки окон
        return [self._refine(frame, p, model, dims, math.ceil(WINDOW_STRIDE * max(p.box.w, p.box.h) / 2.0))
                for p in ranked[:self.cascade.gate_top_k]]

    def detect(self, frame: np.ndarray, prev_frame: np.ndarray, prev_state: TargetState,
               model: AppearanceModel) -> DetectionOutcome:
        """
        Ищет цель, расширяя область от локальной до всего кадра.

        Args:
            frame: текущий кадр
            prev_frame: предыдущий кадр
            prev_state: последнее известное состояние цели
            model: модель внешнего вида

        Returns:
            Результат первой стадии, кандидат которой прошёл оба порога
        """
        frame = as_float(frame)
        prev_frame = as_float(prev_frame)
        dims = FrameDims.from_shape(frame.shape)
        prev_box = clip(prev_state.box, dims)
        regions = stage_regions(prev_box, dims, self.cascade, self.motion)
        budgets = {Stage.AREA5: self.cascade.budget_area5, Stage.AREA18: self.cascade.budget_area18,
                   Stage.GLOBAL: self.cascade.budget_global}

        if self.cascade.one_stage_per_frame:
            stages = [CASCADE_ORDER[self.cursor]]
        else:
            stages = list(CASCADE_ORDER)

        objectness: Optional[ObjectnessMap] = None
        best_score = 0.0
        for stage in stages:
            if stage == Stage.LOCAL:
                candidates = self._local(frame, prev_frame, prev_box, model, dims, regions[Stage.LOCAL])
            else:
                objectness = objectness or ObjectnessMap(frame)
                candidates = self._proposal_stage(frame, regions[stage], prev_box, budgets[stage],
                                                  model, objectness)
            for candidate in candidates:
                best_score = max(best_score, candidate.scores.s_sim)
                if self._passes(candidate.scores):
                    return self._found(stage, candidate.box, candidate.scores, best_score)

        if self.cascade.one_stage_per_frame:
            self.cursor = (self.cursor + 1) % len(CASCADE_ORDER)
        logger.debug(f"Cascade found nothing (stages {[s.value for s in stages]}), best s_sim={best_score:.3f}")
        return DetectionOutcome(False, None, None, Stage.NONE, best_score)

    def _found(self, stage: Stage, box: BBox, scores: ScorePair, best_score: float) -> DetectionOutcome:
        self.reset()
        logger.info(f"Target re-detected at stage {stage.value}: s_sim={scores.s_sim:.3f}, s_cls={scores.s_cls:.3f}")
        return DetectionOutcome(True, box, scores, stage, best_score)


def detect(frame: np.ndarray, prev_frame: np.ndarray, prev_state: TargetState, model: AppearanceModel,
           cascade: CascadeConfig, thresholds: Thresholds = Thresholds(), sampler: SamplerConfig = SamplerConfig(),
           motion: MotionConfig = MotionConfig(), rng: Optional[np.random.Generator] = None) -> DetectionOutcome:
    """Однократный запуск полного каскада (без состояния между кадрами)."""
    rng = rng if rng is not None else np.random.default_rng(sampler.seed)
    return CascadeDetector(cascade, thresholds, sampler, motion, rng).detect(frame, prev_frame, prev_state, model)
