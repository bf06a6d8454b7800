"""Метрики долгосрочного трекинга: Pr/Re/F по порогу уверенности, success, precision@20px, атрибуты."""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from src.geometry import BBox, center_distance, iou
from src.simulator import ATTRIBUTES

logger = logging.getLogger(__name__)

Groundtruth = Sequence[Optional[BBox]]

# Кадр считается повторно захваченным при IoU не ниже этого значения
CAPTURE_IOU = 0.3


@dataclass(frozen=True)
class PredictionTrack:
    """Выход трекера: рамка (или None, если цель не найдена) и уверенность на каждом кадре."""
    boxes: Tuple[Optional[BBox], ...]
    confidences: Tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "boxes", tuple(self.boxes))
        object.__setattr__(self, "confidences", tuple(float(c) for c in self.confidences))
        if len(self.boxes) != len(self.confidences):
            raise ValueError("Число рамок и уверенностей не совпадает")
        for i, c in enumerate(self.confidences):
            if not 0.0 <= c <= 1.0:
                raise ValueError(f"Уверенность кадра {i} вне [0, 1]: {c}")

    def __len__(self) -> int:
        return len(self.boxes)


@dataclass(frozen=True)
class MetricCurve:
    thresholds: Tuple[float, ...]
    values: Tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "thresholds", tuple(float(t) for t in self.thresholds))
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        if len(self.thresholds) != len(self.values):
            raise ValueError("Длины порогов и значений кривой не совпадают")
        if any(b <= a for a, b in zip(self.thresholds, self.thresholds[1:])):
            raise ValueError("Пороги кривой должны строго возрастать")
        if any(not 0.0 <= v <= 1.0 for v in self.values):
            raise ValueError("Значения кривой должны лежать в [0, 1]")

    def __len__(self) -> int:
        return len(self.thresholds)

    def at(self, threshold: float) -> float:
        """Значение на ближайшем пороге не меньше threshold (0 правее последнего)."""
        idx = int(np.searchsorted(np.array(self.thresholds), threshold, side="left"))
        return self.values[idx] if idx < len(self.values) else 0.0


@dataclass
class EvalReport:
    """Сводка метрик последовательности."""
    name: str
    f_score: float
    best_tau: float
    pr_at_best: float
    re_at_best: float
    success_auc: float
    precision_at_20: float
    recall_at_half: float = 0.0
    false_presence: float = 0.0
    recapture_delays: List[Optional[int]] = field(default_factory=list)
    attributes: Tuple[str, ...] = ()
    curves: Dict[str, MetricCurve] = field(default_factory=dict, repr=False)

    def summary(self) -> Dict[str, float]:
        return {
            "f_score": self.f_score,
            "best_tau": self.best_tau,
            "precision": self.pr_at_best,
            "recall": self.re_at_best,
            "success_auc": self.success_auc,
            "precision_20px": self.precision_at_20,
            "recall_at_0.5": self.recall_at_half,
            "false_presence": self.false_presence,
        }


def _check_aligned(pred: PredictionTrack, gt: Groundtruth) -> None:
    if len(pred) != len(gt):
        raise ValueError(f"Длина предсказаний ({len(pred)}) не совпадает с разметкой ({len(gt)})")


def frame_ious(pred: PredictionTrack, gt: Groundtruth) -> np.ndarray:
    """IoU по кадрам; 0, если нет рамки предсказания или разметки."""
    _check_aligned(pred, gt)
    return np.array([iou(p, g) if p is not None and g is not None else 0.0
                     for p, g in zip(pred.boxes, gt)], dtype=np.float64)


def threshold_sweep(pred: PredictionTrack) -> Tuple[float, ...]:
    """Различные уверенности предсказаний и {0, 1} по возрастанию."""
    return tuple(sorted(set(pred.confidences) | {0.0, 1.0}))


def pr_re_curves(pred: PredictionTrack, gt: Groundtruth,
                 thresholds: Optional[Sequence[float]] = None) -> Tuple[MetricCurve, MetricCurve]:
    """
    Кривые точности и полноты долгосрочного трекинга по порогу уверенности.

    На пороге tau учитываются кадры, где предсказана рамка с уверенностью >= tau.
    Pr(tau): средний IoU по учтённым кадрам (IoU = 0 там, где цели нет);
    Re(tau): сумма IoU по учтённым кадрам с целью, делённая на число кадров с целью.

    Args:
        pred: предсказания
        gt: разметка (None, если цели нет)
        thresholds: пороги (по умолчанию threshold_sweep)

    Returns:
        (кривая Pr, кривая Re)
    """
    ious = frame_ious(pred, gt)
    thresholds = tuple(thresholds) if thresholds is not None else threshold_sweep(pred)
    has_box = np.array([b is not None for b in pred.boxes])
    present = np.array([g is not None for g in gt])
    conf = np.array(pred.confidences, dtype=np.float64)
    n_present = int(present.sum())

    pr_values, re_values = [], []
    for tau in thresholds:
        counted = has_box & (conf >= tau)
        n_counted = int(counted.sum())
        pr_values.append(float(ious[counted].sum() / n_counted) if n_counted else 0.0)
        re_values.append(float(ious[counted & present].sum() / n_present) if n_present else 0.0)
    return MetricCurve(thresholds, pr_values), MetricCurve(thresholds, re_values)


def f_measure(pr: float, re: float) -> float:
    """Гармоническое среднее точности и полноты (0, если обе равны нулю)."""
    if pr + re <= 0:
        return 0.0
    return 2.0 * pr * re / (pr + re)


def f_curve(pr_curve: MetricCurve, re_curve: MetricCurve) -> MetricCurve:
    if pr_curve.thresholds != re_curve.thresholds:
        raise ValueError("Кривые Pr и Re построены на разных порогах")
    return MetricCurve(pr_curve.thresholds, [f_measure(p, r) for p, r in zip(pr_curve.values, re_curve.values)])


def f_score(pr_curve: MetricCurve, re_curve: MetricCurve) -> Tuple[float, float]:
    """
    Максимум F-меры по всем порогам.

    Returns:
        (F-score, порог); при равенстве выбирается наименьший порог
    """
    if not len(pr_curve):
        raise ValueError("Пустые кривые")
    curve = f_curve(pr_curve, re_curve)
    best = int(np.argmax(curve.values))
    return curve.values[best], curve.thresholds[best]


def success_curve(pred: PredictionTrack, gt: Groundtruth, n_thresholds: int = 101) -> Tuple[MetricCurve, float]:
    """
    Success plot: доля кадров с целью, где IoU > t0, для t0 на [0, 1].

    Returns:
        (кривая, площадь под кривой = среднее значение кривой)
    """
    ious = frame_ious(pred, gt)
    present = np.array([g is not None for g in gt])
    if not present.any():
        raise ValueError("Нет кадров с целью для success plot")
    thresholds = np.linspace(0.0, 1.0, n_thresholds)
    values = (ious[present][:, None] > thresholds[None, :]).mean(axis=0)
    return MetricCurve(thresholds, values), float(values.mean())


def center_errors(pred: PredictionTrack, gt: Groundtruth) -> np.ndarray:
    """Расстояние между центрами на кадрах с целью (inf, если рамки нет)."""
    _check_aligned(pred, gt)
    return np.array([center_distance(p, g) if p is not None else np.inf
                     for p, g in zip(pred.boxes, gt) if g is not None], dtype=np.float64)


def precision_at(pred: PredictionTrack, gt: Groundtruth, dist_px: float = 20.0) -> float:
    """Доля кадров с целью, где центр предсказания не дальше dist_px от центра разметки."""
    errors = center_errors(pred, gt)
    if not len(errors):
        raise ValueError("Нет кадров с целью для precision")
    return float(np.mean(errors <= dist_px))


def precision_curve(pred: PredictionTrack, gt: Groundtruth, max_px: int = 50) -> MetricCurve:
    """Precision plot: precision_at для порогов 0..max_px пикселей."""
    errors = center_errors(pred, gt)
    if not len(errors):
        raise ValueError("Нет кадров с целью для precision")
    thresholds = np.arange(0, max_px + 1, dtype=np.float64)
    return MetricCurve(thresholds, (errors[:, None] <= thresholds[None, :]).mean(axis=0))


def false_presence_rate(pred: PredictionTrack, gt: Groundtruth) -> float:
    """Доля кадров без цели, на которых трекер сообщил рамку."""
    _check_aligned(pred, gt)
    absent = [p is not None for p, g in zip(pred.boxes, gt) if g is None]
    return float(np.mean(absent)) if absent else 0.0


def recapture_delays(pred: PredictionTrack, gt: Groundtruth, capture_iou: float = CAPTURE_IOU) -> List[Optional[int]]:
    """
    Задержка повторного захвата после каждого появления цели.

    Returns:
        Для каждого перехода «нет цели -> есть цель» число кадров до первого
        предсказания с IoU >= capture_iou (None, если захвата до следующего исчезновения не было)
    """
    ious = frame_ious(pred, gt)
    delays: List[Optional[int]] = []
    for t in range(1, len(gt)):
        if gt[t] is None or gt[t - 1] is not None:
            continue
        delay = None
        k = t
        while k < len(gt) and gt[k] is not None:
            if pred.boxes[k] is not None and ious[k] >= capture_iou:
                delay = k - t
                break
            k += 1
        delays.append(delay)
    return delays


def evaluate_sequence(pred: PredictionTrack, gt: Groundtruth, name: str = "",
                      attributes: Sequence[str] = (), n_thresholds: int = 101,
                      dist_px: float = 20.0) -> EvalReport:
    """
    Полный набор метрик последовательности.

    Args:
        pred: предсказания
        gt: разметка
        name: имя последовательности
        attributes: теги атрибутов
        n_thresholds: число порогов success plot
        dist_px: порог расстояния для precision

    Returns:
        EvalReport с кривыми
    """
    pr, re = pr_re_curves(pred, gt)
    best_f, best_tau = f_score(pr, re)
    success, auc = success_curve(pred, gt, n_thresholds)
    half_pr, half_re = pr_re_curves(pred, gt, [0.5])
    report = EvalReport(
        name=name,
        f_score=best_f,
        best_tau=best_tau,
        pr_at_best=pr.at(best_tau),
        re_at_best=re.at(best_tau),
        success_auc=auc,
        precision_at_20=precision_at(pred, gt, dist_px),
        recall_at_half=half_re.values[0],
        false_presence=false_presence_rate(pred, gt),
        recapture_delays=recapture_delays(pred, gt),
        attributes=tuple(attributes),
        curves={"precision_recall": pr, "recall": re, "f_measure": f_curve(pr, re),
                "success": success, "precision_px": precision_curve(pred, gt)},
    )
    logger.info(f"{name or 'sequence'}: F={report.f_score:.4f} (tau={best_tau:.3f}), "
                f"AUC={auc:.4f}, P@20={report.precision_at_20:.4f}")
    return report


def attribute_report(reports: Mapping[str, EvalReport],
                     tags: Optional[Mapping[str, Sequence[str]]] = None) -> pd.DataFrame:
    """
    Таблица метрик по атрибутам: среднее по последовательностям с данным тегом и строка "all".

    Args:
        reports: отчёты по имени последовательности
        tags: теги по имени последовательности (по умолчанию report.attributes)

    Returns:
        DataFrame с индексом attribute и столбцами метрик
    """
    if not reports:
        raise ValueError("Нет отчётов для агрегации")
    tags = tags or {name: r.attributes for name, r in reports.items()}
    missing = set(reports) - set(tags)
    if missing:
        raise ValueError(f"Нет тегов для последовательностей: {', '.join(sorted(missing))}")
    for name, seq_tags in tags.items():
        unknown = set(seq_tags) - set(ATTRIBUTES)
        if unknown:
            raise ValueError(f"{name}: неизвестные атрибуты {', '.join(sorted(unknown))}")

    summary = pd.DataFrame({name: r.summary() for name, r in reports.items()}).T
    rows = []
    for attribute in ATTRIBUTES:
        members = [name for name in reports if attribute in tags[name]]
        if members:
            rows.append(summary.loc[members].mean().rename(attribute).to_frame().T.assign(sequences=len(members)))
    rows.append(summary.mean().rename("all").to_frame().T.assign(sequences=len(reports)))
    table = pd.concat(rows)
    table.index.name = "attribute"
    table["sequences"] = table["sequences"].astype(int)
    return table
