import hashlib
import logging
import math
from abc import ABC, abstractmethod
from collections import deque
from dataclasses import dataclass
from typing import Deque, List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage

from src.config import AppearanceConfig
from src.geometry import BBox, FrameDims, boxes_to_array, clip, intersect, iou_many, jitter_boxes
from src.template_index import TemplateIndex

logger = logging.getLogger(__name__)

# Минимальная сторона рамки, из которой ещё можно извлечь патч
MIN_BOX_SIDE = 2.0
# СКО, ниже которого патч считается однотонным
FLAT_STD = 1e-6
# 4x4 пулинг яркости + 4x4 пулинг модуля градиента
REGRESSOR_FEATURES = 32


@dataclass(frozen=True)
class ScorePair:
    """Пара оценок: сходство S_s в [0, 1] и знаковая оценка классификации S_c."""
    s_sim: float
    s_cls: float

    def __post_init__(self):
        if not 0.0 <= self.s_sim <= 1.0:
            raise ValueError(f"s_sim должен лежать в [0, 1]: {self.s_sim}")
        if not math.isfinite(self.s_cls):
            raise ValueError(f"s_cls должен быть конечным: {self.s_cls}")


def as_float(frame: np.ndarray) -> np.ndarray:
    """Кадр в float64 (без копии, если он уже float64)."""
    frame = np.asarray(frame, dtype=np.float64)
    if frame.ndim != 2:
        raise ValueError(f"Ожидается одноканальный кадр, получена форма {frame.shape}")
    return frame


def check_box(b: BBox) -> None:
    if b.w < MIN_BOX_SIDE or b.h < MIN_BOX_SIDE:
        raise ValueError(f"Вырожденная рамка {b.as_tuple()}: сторона меньше {MIN_BOX_SIDE} px")


def sample_patches(frame: np.ndarray, boxes: np.ndarray, resolution: int) -> np.ndarray:
    """
    Билинейно сэмплирует патчи resolution x resolution из кадра.

    Args:
        frame: кадр (H, W)
        boxes: массив рамок (N, 4)
        resolution: сторона патча

    Returns:
        Массив патчей (N, resolution, resolution)
    """
    frame = as_float(frame)
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    steps = (np.arange(resolution, dtype=np.float64) + 0.5) / resolution
    # Центры пикселей лежат в целых координатах
    xs = boxes[:, 0:1] + steps[None, :] * boxes[:, 2:3] - 0.5
    ys = boxes[:, 1:2] + steps[None, :] * boxes[:, 3:4] - 0.5
    n = len(boxes)
    rows = np.broadcast_to(ys[:, :, None], (n, resolution, resolution))
    cols = np.broadcast_to(xs[:, None, :], (n, resolution, resolution))
    coords = np.stack([rows.reshape(-1), cols.reshape(-1)])
    values = ndimage.map_coordinates(frame, coords, order=1, mode="nearest")
    return values.reshape(n, resolution, resolution)


def embed(patches: np.ndarray) -> np.ndarray:
    """
    Нормированный эмбеддинг патча: скалярное произведение двух эмбеддингов равно NCC.

    Однотонный патч кодируется отдельной координатой: NCC(однотонный, однотонный) = 1,
    NCC(однотонный, текстурный) = 0.

    Args:
        patches: массив (N, r, r)

    Returns:
        Массив (N, r*r + 1)
    """
    flat = np.asarray(patches, dtype=np.float64).reshape(len(patches), -1)
    centered = flat - flat.mean(axis=1, keepdims=True)
    norms = np.sqrt(np.sum(centered * centered, axis=1))
    is_flat = norms <= FLAT_STD * math.sqrt(flat.shape[1])
    safe = np.where(is_flat, 1.0, norms)
    vectors = np.where(is_flat[:, None], 0.0, centered / safe[:, None])
    indicator = is_flat.astype(np.float64)[:, None]
    return np.concatenate([vectors, indicator], axis=1)


def ncc(embeddings: np.ndarray, template: np.ndarray) -> np.ndarray:
    """NCC каждого эмбеддинга с эмбеддингом шаблона."""
    return np.clip(np.sum(embeddings * template[None, :], axis=1), -1.0, 1.0)


def map_score(values: np.ndarray, mapping: str) -> np.ndarray:
    """Переводит NCC в оценку сходства [0, 1]."""
    if mapping == "rectified":
        return np.clip(values, 0.0, 1.0)
    return np.clip((values + 1.0) / 2.0, 0.0, 1.0)


class SampleBuffer:
    def __init__(self, pos_frames: int, neg_frames: int):
        """
        Буфер обучающих сэмплов (FIFO по кадрам).

        Args:
            pos_frames: сколько последних кадров хранить положительные сэмплы
            neg_frames: сколько последних кадров хранить отрицательные сэмплы
        """
        self.positives: Deque[Tuple[int, np.ndarray]] = deque()
        self.negatives: Deque[Tuple[int, np.ndarray]] = deque()
        # Патч отслеживаемой рамки кадра и его вес (для банка шаблонов)
        self.anchors: Deque[Tuple[int, np.ndarray, float]] = deque()
        self.pos_frames = pos_frames
        self.neg_frames = neg_frames

    def __len__(self) -> int:
        return sum(len(v) for _, v in self.positives) + sum(len(v) for _, v in self.negatives)

    def is_empty(self) -> bool:
        return len(self) == 0

    def add(self, frame_index: int, positives: np.ndarray, negatives: np.ndarray,
            anchor: Optional[np.ndarray] = None, weight: float = 1.0) -> None:
        self.positives.append((frame_index, positives))
        self.negatives.append((frame_index, negatives))
        if anchor is not None:
            self.anchors.append((frame_index, anchor, float(weight)))
        while len(self.positives) > self.pos_frames:
            evicted, _ = self.positives.popleft()
            while self.anchors and self.anchors[0][0] <= evicted:
                self.anchors.popleft()
        while len(self.negatives) > self.neg_frames:
            self.negatives.popleft()

    def count_at(self, frame_index: int) -> Tuple[int, int]:
        """Сколько положительных и отрицательных сэмплов хранится для кадра."""
        pos = sum(len(v) for i, v in self.positives if i == frame_index)
        neg = sum(len(v) for i, v in self.negatives if i == frame_index)
        return pos, neg

    def frames(self) -> List[int]:
        return [i for i, _ in self.positives]

    def positive_matrix(self, dimension: int) -> np.ndarray:
        parts = [v for _, v in self.positives if len(v)]
        return np.concatenate(parts) if parts else np.zeros((0, dimension))

    def negative_matrix(self, dimension: int) -> np.ndarray:
        parts = [v for _, v in self.negatives if len(v)]
        return np.concatenate(parts) if parts else np.zeros((0, dimension))

    def digest_bytes(self) -> bytes:
        chunks = []
        for i, v in self.positives:
            chunks.append(b"p%d" % i + np.ascontiguousarray(v).tobytes())
        for i, v in self.negatives:
            chunks.append(b"n%d" % i + np.ascontiguousarray(v).tobytes())
        for i, v, w in self.anchors:
            chunks.append(b"a%d" % i + np.ascontiguousarray(v).tobytes() + np.float64(w).tobytes())
        return b"".join(chunks)


class AppearanceModel(ABC):
    """Интерфейс модели внешнего вида: сходство S_s и классификация S_c."""

    @property
    @abstractmethod
    def initial_template(self) -> np.ndarray:
        ...

    @abstractmethod
    def similarity_many(self, frame: np.ndarray, boxes: Sequence[BBox]) -> np.ndarray:
        ...

    @abstractmethod
    def initial_similarity_many(self, frame: np.ndarray, boxes: Sequence[BBox]) -> np.ndarray:
        ...

    @abstractmethod
    def classify_many(self, frame: np.ndarray, boxes: Sequence[BBox]) -> np.ndarray:
        ...

    @abstractmethod
    def collect_samples(self, frame: np.ndarray, tracked_box: BBox, frame_index: int = 0,
                        weight: float = 1.0) -> None:
        ...

    @abstractmethod
    def refit(self) -> bool:
        ...

    @abstractmethod
    def state_digest(self) -> str:
        ...

    def similarity(self, frame: np.ndarray, b: BBox) -> float:
        return float(self.similarity_many(frame, [b])[0])

    def initial_similarity(self, frame: np.ndarray, b: BBox) -> float:
        return float(self.initial_similarity_many(frame, [b])[0])

    def classify(self, frame: np.ndarray, b: BBox) -> float:
        return float(self.classify_many(frame, [b])[0])

    def scores(self, frame: np.ndarray, b: BBox) -> ScorePair:
        return ScorePair(self.similarity(frame, b), self.classify(frame, b))


class TemplateAppearanceModel(AppearanceModel):
    def __init__(self, config: AppearanceConfig, dims: FrameDims, template_patch: np.ndarray,
                 rng: np.random.Generator):
        """
        Эталонная модель: NCC с начальным шаблоном, взвешенный банк шаблонов
        и фоновые экземпляры в индексах faiss.

        Args:
            config: параметры модели
            dims: размер кадров последовательности
            template_patch: патч начальной рамки (r, r)
            rng: генератор для сэмплирования обучающих рамок
        """
        self.config = config
        self.dims = dims
        self.rng = rng
        self.resolution = config.patch_resolution
        self.dimension = self.resolution * self.resolution + 1
        patch = np.array(template_patch, dtype=np.float64)
        patch.setflags(write=False)
        self._initial_patch = patch
        self._initial_vector = embed(patch[None])[0]
        self._initial_vector.setflags(write=False)
        self.bank: Deque[Tuple[np.ndarray, float]] = deque(maxlen=max(config.bank_capacity - 1, 0))
        self.buffer = SampleBuffer(config.pos_buffer_frames, config.neg_buffer_frames)
        self.bank_index = TemplateIndex(self.dimension)
        self.background_index = TemplateIndex(self.dimension)
        self._rebuild_bank_index()

    @property
    def initial_template(self) -> np.ndarray:
        return self._initial_patch

    def bank_size(self) -> int:
        return 1 + len(self.bank)

    def _embed_boxes(self, frame: np.ndarray, boxes: Sequence[BBox]) -> np.ndarray:
        for b in boxes:
            check_box(b)
        return embed(sample_patches(frame, boxes_to_array(boxes), self.resolution))

    def _rebuild_bank_index(self) -> None:
        vectors = [self._initial_vector] + [v for v, _ in self.bank]
        weights = [1.0] + [w for _, w in self.bank]
        self.bank_index.build(np.stack(vectors), np.array(weights))

    def _rebuild_background_index(self) -> None:
        negatives = self.buffer.negative_matrix(self.dimension)
        if len(negatives):
            # Негативы, неотличимые от цели, считаем шумом разметки
            keep = ncc(negatives, self._initial_vector) < self.config.negative_gate
            negatives = negatives[keep]
        self.background_index.build(negatives)

    def similarity_many(self, frame: np.ndarray, boxes: Sequence[BBox]) -> np.ndarray:
        if self.config.similarity_source == "bank":
            emb = self._embed_boxes(frame, boxes)
            values = np.maximum(ncc(emb, self._initial_vector), self.bank_index.max_weighted(emb))
            return map_score(np.clip(values, -1.0, 1.0), self.config.score_mapping)
        return self.initial_similarity_many(frame, boxes)

    def initial_similarity_many(self, frame: np.ndarray, boxes: Sequence[BBox]) -> np.ndarray:
        emb = self._embed_boxes(frame, boxes)
        return map_score(ncc(emb, self._initial_vector), self.config.score_mapping)

    def classify_many(self, frame: np.ndarray, boxes: Sequence[BBox]) -> np.ndarray:
        emb = self._embed_boxes(frame, boxes)
        target = self.bank_index.max_weighted(emb)
        background = self.background_index.max_weighted(emb, empty_value=0.0)
        return target - background

    def _sample_boxes(self, center: BBox, count: int, sigma_xy: float, sigma_scale: float,
                      accept) -> np.ndarray:
        """Гауссовы рамки вокруг center, удовлетворяющие условию на IoU (без учёта кадра)."""
        collected = []
        total = 0
        for _ in range(50):
            if total >= count:
                break
            candidates = jitter_boxes(center, max(4 * count, 16), sigma_xy, sigma_scale, self.rng)
            candidates = candidates[accept(iou_many(candidates, center))]
            collected.append(candidates)
            total += len(candidates)
        if not collected:
            return np.zeros((0, 4))
        return np.concatenate(collected)[:count]

    def _inside_frame(self, boxes: np.ndarray) -> np.ndarray:
        if not len(boxes):
            return boxes
        inside = ((boxes[:, 0] >= 0) & (boxes[:, 1] >= 0)
                  & (boxes[:, 0] + boxes[:, 2] <= self.dims.width)
                  & (boxes[:, 1] + boxes[:, 3] <= self.dims.height)
                  & (boxes[:, 2] >= MIN_BOX_SIDE) & (boxes[:, 3] >= MIN_BOX_SIDE))
        return boxes[inside]

    def _uniform_negatives(self, center: BBox, count: int) -> np.ndarray:
        """Рамки размера цели, равномерно разбросанные по кадру, с IoU <= neg_iou."""
        if count <= 0:
            return np.zeros((0, 4))
        w = min(center.w, self.dims.width)
        h = min(center.h, self.dims.height)
        xs = self.rng.uniform(0.0, self.dims.width - w, size=4 * count)
        ys = self.rng.uniform(0.0, self.dims.height - h, size=4 * count)
        boxes = np.stack([xs, ys, np.full_like(xs, w), np.full_like(ys, h)], axis=1)
        boxes = boxes[iou_many(boxes, center) <= self.config.neg_iou]
        return boxes[:count]

    def _positive_boxes(self, center: BBox, count: int) -> np.ndarray:
        return self._sample_boxes(center, count, 0.1, 0.05,
                                  lambda overlap: overlap >= self.config.pos_iou)

    def _negative_boxes(self, center: BBox, count: int) -> np.ndarray:
        return self._sample_boxes(center, count, 1.0, 0.2,
                                  lambda overlap: overlap <= self.config.neg_iou)

    def _embed_array(self, frame: np.ndarray, boxes: np.ndarray) -> np.ndarray:
        if not len(boxes):
            return np.zeros((0, self.dimension))
        return embed(sample_patches(frame, boxes, self.resolution))

    def initialize(self, frame0: np.ndarray, box0: BBox) -> None:
        """Обучает классификатор на сэмплах первого кадра."""
        cfg = self.config
        positives = self._inside_frame(self._positive_boxes(box0, cfg.init_pos))
        near = self._inside_frame(self._negative_boxes(box0, cfg.init_neg - cfg.init_neg // 2))
        spread = self._uniform_negatives(box0, cfg.init_neg // 2)
        negatives = np.concatenate([near, spread]) if len(spread) else near
        self.buffer.add(0, self._embed_array(frame0, positives), self._embed_array(frame0, negatives))
        self._rebuild_background_index()
        logger.info(f"Appearance model initialized: {len(positives)} positives, {len(negatives)} negatives, "
                    f"{len(self.background_index)} background exemplars")

    def collect_samples(self, frame: np.ndarray, tracked_box: BBox, frame_index: int = 0,
                        weight: float = 1.0) -> None:
        """
        Добавляет сэмплы текущего кадра в буфер, а патч рамки в банк шаблонов.

        Args:
            frame: кадр
            tracked_box: результат трекинга
            frame_index: номер кадра (ключ FIFO)
            weight: вес шаблона в банке
        """
        cfg = self.config
        positives = self._inside_frame(self._positive_boxes(tracked_box, cfg.pos_per_frame))
        negatives = self._inside_frame(self._negative_boxes(tracked_box, cfg.neg_per_frame))
        clipped = intersect(tracked_box, self.dims.as_box())
        anchor = None
        if clipped is not None and clipped.w >= MIN_BOX_SIDE and clipped.h >= MIN_BOX_SIDE:
            anchor = self._embed_array(frame, boxes_to_array([tracked_box]))[0]
        self.buffer.add(frame_index, self._embed_array(frame, positives),
                        self._embed_array(frame, negatives), anchor=anchor, weight=weight)
        if anchor is not None and self.bank.maxlen:
            self.bank.append((anchor, float(weight)))
            self._rebuild_bank_index()
        logger.debug(f"Frame {frame_index}: collected {len(positives)} positives, {len(negatives)} negatives")

    def refit(self) -> bool:
        """
        Переобучает классификатор на сэмплах буфера; начальный шаблон не меняется.

        Returns:
            True, если переобучение выполнено
        """
        if self.buffer.is_empty():
            logger.warning("Refit skipped: sample buffer is empty")
            return False
        self.bank.clear()
        for _, anchor, weight in self.buffer.anchors:
            self.bank.append((anchor, weight))
        self._rebuild_bank_index()
        self._rebuild_background_index()
        logger.info(f"Classifier refit: bank {self.bank_size()} templates, "
                    f"{len(self.background_index)} background exemplars")
        return True

    def state_digest(self) -> str:
        digest = hashlib.sha256()
        digest.update(self._initial_patch.tobytes())
        digest.update(self.bank_index.digest_bytes())
        digest.update(self.background_index.digest_bytes())
        digest.update(self.buffer.digest_bytes())
        return digest.hexdigest()


def init_model(frame0: np.ndarray, box0: BBox, config: AppearanceConfig, seed: int = 0) -> TemplateAppearanceModel:
    """
    Инициализирует модель внешнего вида по первому кадру.

    Args:
        frame0: первый кадр
        box0: начальная рамка цели
        config: параметры модели
        seed: зерно для сэмплирования обучающих рамок

    Returns:
        Обученная модель
    """
    frame0 = as_float(frame0)
    dims = FrameDims.from_shape(frame0.shape)
    check_box(box0)
    box0 = clip(box0, dims)
    check_box(box0)
    patch = sample_patches(frame0, boxes_to_array([box0]), config.patch_resolution)[0]
    model = TemplateAppearanceModel(config, dims, patch, np.random.default_rng(seed))
    model.initialize(frame0, box0)
    return model


# Регрессия рамки

@dataclass(frozen=True, eq=False)
class BBoxRegressor:
    """Линейная модель: признаки рамки -> смещения (dx, dy, dlogw, dlogh)."""
    coef: np.ndarray
    intercept: np.ndarray
    feature_mean: np.ndarray
    feature_std: np.ndarray
    patch_resolution: int = 32
    trained: bool = False

    @classmethod
    def identity(cls, patch_resolution: int = 32) -> "BBoxRegressor":
        dim = REGRESSOR_FEATURES
        return cls(np.zeros((dim, 4)), np.zeros(4), np.zeros(dim), np.ones(dim), patch_resolution, True)

    def predict_offsets(self, features: np.ndarray) -> np.ndarray:
        standardized = (features - self.feature_mean) / self.feature_std
        return standardized @ self.coef + self.intercept


def regressor_features(frame: np.ndarray, boxes: np.ndarray, resolution: int) -> np.ndarray:
    """
    Признаки рамки: пулинг 4x4 нормированной яркости и модуля градиента (32 значения).

    Args:
        frame: кадр
        boxes: рамки (N, 4)
        resolution: сторона патча

    Returns:
        Матрица признаков (N, 32)
    """
    patches = sample_patches(frame, boxes, resolution)
    n = len(patches)
    flat = patches.reshape(n, -1)
    std = flat.std(axis=1)
    std = np.where(std < FLAT_STD, 1.0, std)
    normalized = (patches - flat.mean(axis=1)[:, None, None]) / std[:, None, None]
    gy, gx = np.gradient(normalized, axis=(1, 2))
    magnitude = np.sqrt(gx * gx + gy * gy)
    cell = resolution // 4
    side = cell * 4

    def pool(values: np.ndarray) -> np.ndarray:
        return values[:, :side, :side].reshape(n, 4, cell, 4, cell).mean(axis=(2, 4)).reshape(n, 16)

    return np.concatenate([pool(normalized), pool(magnitude)], axis=1)


def box_offsets(boxes: np.ndarray, target: BBox) -> np.ndarray:
    """Смещения, переводящие каждую рамку в target."""
    cx = boxes[:, 0] + boxes[:, 2] / 2.0
    cy = boxes[:, 1] + boxes[:, 3] / 2.0
    tcx, tcy = target.center()
    return np.stack([(tcx - cx) / boxes[:, 2], (tcy - cy) / boxes[:, 3],
                     np.log(target.w / boxes[:, 2]), np.log(target.h / boxes[:, 3])], axis=1)


def train_regressor(frame0: np.ndarray, box0: BBox, config: AppearanceConfig, seed: int = 0,
                    jitter: bool = True) -> BBoxRegressor:
    """
    Обучает регрессор рамки на первом кадре (гребневая регрессия).

    Args:
        frame0: первый кадр
        box0: начальная рамка
        config: параметры (ridge_lambda, regressor_samples, patch_resolution)
        seed: зерно сэмплирования
        jitter: при False все обучающие рамки совпадают с box0

    Returns:
        Обученный регрессор (неизменяемый)
    """
    frame0 = as_float(frame0)
    dims = FrameDims.from_shape(frame0.shape)
    check_box(box0)
    box0 = clip(box0, dims)
    check_box(box0)
    rng = np.random.default_rng(seed)
    n = max(config.regressor_samples, 1)
    if jitter:
        boxes = jitter_boxes(box0, 4 * n, 0.1, 0.1, rng)
        keep = ((iou_many(boxes, box0) >= 0.5) & (boxes[:, 0] >= 0) & (boxes[:, 1] >= 0)
                & (boxes[:, 0] + boxes[:, 2] <= dims.width) & (boxes[:, 1] + boxes[:, 3] <= dims.height))
        boxes = boxes[keep][:n]
        if not len(boxes):
            boxes = boxes_to_array([box0])
    else:
        boxes = np.repeat(boxes_to_array([box0]), n, axis=0)
    features = regressor_features(frame0, boxes, config.patch_resolution)
    targets = box_offsets(boxes, box0)
    mean = features.mean(axis=0)
    std = features.std(axis=0)
    std = np.where(std < 1e-12, 1.0, std)
    standardized = (features - mean) / std
    gram = standardized.T @ standardized + config.ridge_lambda * np.eye(standardized.shape[1])
    coef = np.linalg.solve(gram, standardized.T @ (targets - targets.mean(axis=0)))
    logger.info(f"Bounding box regressor trained on {len(boxes)} boxes")
    return BBoxRegressor(coef, targets.mean(axis=0), mean, std, config.patch_resolution, True)


def regress(regressor: BBoxRegressor, frame: np.ndarray, b: BBox) -> BBox:
    """
    Уточняет рамку предсказанными смещениями и обрезает по кадру.

    Args:
        regressor: обученный регрессор
        frame: кадр
        b: рамка-кандидат

    Returns:
        Уточнённая рамка
    """
    if not regressor.trained:
        raise RuntimeError("Регрессор рамки не обучен")
    frame = as_float(frame)
    dims = FrameDims.from_shape(frame.shape)
    check_box(b)
    features = regressor_features(frame, boxes_to_array([b]), regressor.patch_resolution)
    dx, dy, dlw, dlh = regressor.predict_offsets(features)[0]
    dx, dy = float(np.clip(dx, -1.0, 1.0)), float(np.clip(dy, -1.0, 1.0))
    dlw, dlh = float(np.clip(dlw, -0.5, 0.5)), float(np.clip(dlh, -0.5, 0.5))
    cx, cy = b.center()
    moved = BBox.from_center(cx + dx * b.w, cy + dy * b.h, b.w * math.exp(dlw), b.h * math.exp(dlh))
    clipped = intersect(moved, dims.as_box())
    return clipped if clipped is not None else clip(b, dims)
