"""Долгосрочный трекер: краткосрочный трекинг -> оценка -> каскадная детекция, с переключением режимов."""

import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from src.appearance import AppearanceModel, BBoxRegressor, as_float, init_model, train_regressor
from src.config import RunConfig
from src.detector import CascadeDetector
from src.evaluation import EvalReport, PredictionTrack, attribute_report, evaluate_sequence
from src.geometry import BBox, FrameDims, clip, expand_region, intersect
from src.judgement import Decision, JudgementContext, check_failure, confidence, decide, resolve
from src.motion import compensate, reliable_motion
from src.reports import write_csv, write_suite_report
from src.sequence_io import read_sequence, write_predictions, write_sequence
from src.short_term import TargetState, apply_update_policy, track_frame
from src.simulator import ScenarioSpec, SequenceRecord, generate, standard_specs

logger = logging.getLogger(__name__)

TRACE_SUFFIX = ".trace.jsonl"
# При отображении (NCC+1)/2 несвязанная текстура даёт S около 0.5
AFFINE_CHANCE_LEVEL = 0.5


class TrackerMode(str, Enum):
    SHORT_TERM = "ShortTerm"
    DETECTING = "Detecting"


@dataclass(frozen=True)
class FrameTrace:
    """Строка журнала кадра: режим на входе и выходе, решение, стадия каскада, оценки."""
    frame: int
    mode: str
    decision: Optional[str]
    stage: Optional[str]
    s_sim: Optional[float]
    s_cls: Optional[float]
    s_t: Optional[float]
    present: bool
    next_mode: str
    update: str = "none"


@dataclass
class TrackResult:
    name: str
    track: PredictionTrack
    traces: List[FrameTrace]


class LongTermTracker:
    def __init__(self, config: RunConfig):
        """
        Конвейер долгосрочного трекинга для одной последовательности.

        Args:
            config: полная конфигурация запуска
        """
        self.config = config
        model_seq, tracker_seq = np.random.SeedSequence(config.seed).spawn(2)
        self.model_seed = int(model_seq.generate_state(1)[0])
        self.rng = np.random.default_rng(tracker_seq)
        self.mode = TrackerMode.SHORT_TERM
        self.model: Optional[AppearanceModel] = None
        self.regressor: Optional[BBoxRegressor] = None
        self.detector = CascadeDetector(config.cascade, config.thresholds, config.sampler, config.motion,
                                        self.rng)
        self.state: Optional[TargetState] = None
        self.prev_frame: Optional[np.ndarray] = None
        self.confident_frames = 0

    def initialize(self, frame0: np.ndarray, box0: BBox) -> Tuple[TargetState, FrameTrace]:
        """Инициализация по первому кадру: модель внешнего вида и регрессор рамки."""
        frame0 = as_float(frame0)
        box0 = clip(box0, FrameDims.from_shape(frame0.shape))
        self.model = init_model(frame0, box0, self.config.appearance, seed=self.model_seed)
        self.regressor = train_regressor(frame0, box0, self.config.appearance, seed=self.model_seed)
        s_t = confidence(self.model, frame0, box0)
        self.state = TargetState(box0, s_t, True, 0)
        self.prev_frame = frame0
        self.mode = TrackerMode.SHORT_TERM
        self.confident_frames = 0
        self.detector.reset()
        logger.info(f"Tracker initialized at {box0.as_tuple()}, S_t={s_t:.3f}")
        trace = FrameTrace(0, self.mode.value, "Init", None, s_t, self.model.classify(frame0, box0), s_t,
                           True, self.mode.value)
        return self.state, trace

    def step(self, frame: np.ndarray) -> Tuple[TargetState, FrameTrace]:
        """
        Обрабатывает следующий кадр.

        Returns:
            (состояние для отчёта, строка журнала)
        """
        if self.state is None:
            raise RuntimeError("Трекер не инициализирован")
        frame = as_float(frame)
        if frame.shape != self.prev_frame.shape:
            raise ValueError(f"Размер кадра изменился: {frame.shape} вместо {self.prev_frame.shape}")
        if self.mode == TrackerMode.SHORT_TERM:
            reported, trace = self._short_term_step(frame)
        else:
            reported, trace = self._detecting_step(frame)
        self.prev_frame = frame
        return reported, trace

    def _short_term_step(self, frame: np.ndarray) -> Tuple[TargetState, FrameTrace]:
        cfg = self.config
        index = self.state.frame_index + 1
        box, scores = track_frame(self.model, self.regressor, self.state, frame, cfg.sampler, self.rng)
        decision = decide(scores, cfg.thresholds)
        context = JudgementContext(frame, self.prev_frame, box, self.state.box, self.model, self.regressor,
                                   cfg.sampler, cfg.motion, self.rng)
        final_box = resolve(decision, context)
        s_sim, s_cls = scores.s_sim, scores.s_cls
        if decision != Decision.SUCCESS:
            s_sim, s_cls = self.model.similarity(frame, final_box), self.model.classify(frame, final_box)
        s_t = confidence(self.model, frame, final_box)
        failed = check_failure(s_t, cfg.thresholds)

        tracked = TargetState(final_box, s_t, not failed, index)
        update_value = s_t if cfg.update_score == "confidence" else s_cls
        update = apply_update_policy(self.model, tracked, frame, cfg.thresholds, score=update_value,
                                     refit_interval=cfg.refit_interval, confident_count=self.confident_frames)
        if update.startswith("collect"):
            self.confident_frames += 1

        if failed and cfg.detector_enabled:
            # Кадр срыва сообщается как отсутствие цели; рамка последнего уверенного кадра сохраняется
            self.state = TargetState(self.state.box, s_t, False, index)
            self.mode = TrackerMode.DETECTING
            self.detector.reset()
            logger.info(f"Frame {index}: tracking failure (S_t={s_t:.3f}), switching to detection")
        else:
            self.state = tracked
        logger.debug(f"Frame {index}: {decision.value}, s_sim={s_sim:.3f}, s_cls={s_cls:.3f}, S_t={s_t:.3f}")
        trace = FrameTrace(index, TrackerMode.SHORT_TERM.value, decision.value, None, s_sim, s_cls, s_t,
                           not failed, self.mode.value, update)
        return TargetState(final_box, s_t, not failed, index), trace

    def _carry(self, frame: np.ndarray) -> BBox:
        """Последняя известная рамка, сдвинутая на глобальное движение кадра."""
        dims = FrameDims.from_shape(frame.shape)
        carried = self.state.box
        region = expand_region(carried, self.config.motion.flow_region_scale, dims)
        moved = compensate(carried, reliable_motion(self.prev_frame, frame, region, self.config.motion))
        return moved if intersect(moved, dims.as_box()) is not None else carried

    def _detecting_step(self, frame: np.ndarray) -> Tuple[TargetState, FrameTrace]:
        index = self.state.frame_index + 1
        outcome = self.detector.detect(frame, self.prev_frame, self.state, self.model)
        mode_in = TrackerMode.DETECTING.value
        if outcome.found:
            s_t = confidence(self.model, frame, outcome.box)
            if not check_failure(s_t, self.config.thresholds):
                self.state = TargetState(outcome.box, outcome.scores.s_sim, True, index)
                self.mode = TrackerMode.SHORT_TERM
                logger.info(f"Frame {index}: target recaptured at {outcome.stage.value} stage, S_t={s_t:.3f}")
                trace = FrameTrace(index, mode_in, None, outcome.stage.value, outcome.scores.s_sim,
                                   outcome.scores.s_cls, s_t, True, self.mode.value)
                return self.state, trace
            logger.debug(f"Frame {index}: detection rejected on second judgement, S_t={s_t:.3f}")

        carried = self._carry(frame)
        self.state = TargetState(carried, outcome.best_score, False, index)
        stage = outcome.stage.value
        s_sim = outcome.scores.s_sim if outcome.scores else None
        s_cls = outcome.scores.s_cls if outcome.scores else None
        trace = FrameTrace(index, mode_in, None, stage, s_sim, s_cls, None, False, self.mode.value)
        return self.state, trace


def track_record(record: SequenceRecord, config: RunConfig) -> TrackResult:
    """
    Трекинг всей последовательности.

    Args:
        record: кадры и разметка (используется только рамка кадра 0)
        config: конфигурация

    Returns:
        Предсказания и журнал кадров
    """
    box0 = record.groundtruth[0]
    if box0 is None:
        raise ValueError(f"{record.name}: нет рамки цели на кадре 0")
    tracker = LongTermTracker(config)
    state, trace = tracker.initialize(record.frames[0], box0)
    boxes: List[Optional[BBox]] = [state.box]
    confidences: List[float] = [state.confidence]
    traces = [trace]
    for frame in record.frames[1:]:
        state, trace = tracker.step(frame)
        boxes.append(state.box if state.present else None)
        confidences.append(state.confidence)
        traces.append(trace)
    present = sum(b is not None for b in boxes)
    logger.info(f"{record.name}: tracked {len(record)} frames, target reported on {present}")
    return TrackResult(record.name, PredictionTrack(tuple(boxes), tuple(confidences)), traces)


def trace_path(prediction_path) -> Path:
    path = Path(prediction_path)
    return path.with_name(path.name + TRACE_SUFFIX)


def write_trace(path, traces: Iterable[FrameTrace]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for trace in traces:
            f.write(json.dumps(asdict(trace), ensure_ascii=False) + "\n")


def read_trace(path) -> List[FrameTrace]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Журнал не найден: {path}")
    with open(path, "r", encoding="utf-8") as f:
        return [FrameTrace(**json.loads(line)) for line in f if line.strip()]


def replay_trace(traces: Sequence[FrameTrace]) -> Dict[str, int]:
    """
    Проверяет журнал по автомату режимов.

    Допустимы только переходы ShortTerm -> Detecting (срыв, кадр без цели)
    и Detecting -> ShortTerm (успешная детекция, кадр с целью).

    Returns:
        Число переходов каждого вида

    Raises:
        ValueError: нарушение автомата
    """
    counts = {"failures": 0, "recaptures": 0}
    expected = TrackerMode.SHORT_TERM.value
    for trace in traces:
        where = f"кадр {trace.frame}"
        if trace.mode != expected:
            raise ValueError(f"{where}: режим {trace.mode}, а предыдущий кадр перевёл в {expected}")
        if trace.mode == TrackerMode.SHORT_TERM.value and trace.next_mode == TrackerMode.DETECTING.value:
            if trace.present:
                raise ValueError(f"{where}: кадр срыва должен сообщать об отсутствии цели")
            counts["failures"] += 1
        elif trace.mode == TrackerMode.DETECTING.value and trace.next_mode == TrackerMode.SHORT_TERM.value:
            if not trace.present or trace.stage in (None, "None"):
                raise ValueError(f"{where}: возврат к трекингу только после успешной детекции")
            counts["recaptures"] += 1
        elif trace.mode == TrackerMode.DETECTING.value and trace.present:
            raise ValueError(f"{where}: найденная цель должна вернуть трекер в ShortTerm")
        elif trace.next_mode not in (TrackerMode.SHORT_TERM.value, TrackerMode.DETECTING.value):
            raise ValueError(f"{where}: неизвестный режим {trace.next_mode}")
        expected = trace.next_mode
    return counts


def warn_if_failure_unreachable(config: RunConfig) -> bool:
    """
    Предупреждает, если срыв трекинга практически недостижим: отображение (NCC+1)/2
    и th_low ниже уровня случайного совпадения.

    Returns:
        True, если предупреждение выдано
    """
    if not config.detector_enabled or config.appearance.score_mapping != "affine":
        return False
    if config.thresholds.th_low >= AFFINE_CHANCE_LEVEL:
        return False
    logger.warning(f"score_mapping=affine with th_low={config.thresholds.th_low} below chance level "
                   f"{AFFINE_CHANCE_LEVEL}: tracking failure will almost never trigger the detector; "
                   f"consider data/configs/rectified.conf")
    return True


def run_sequence(config: RunConfig) -> PredictionTrack:
    """
    Читает последовательность config.sequence, отслеживает цель и (если задан config.output)
    пишет файл предсказаний и журнал рядом с ним.
    """
    if not config.sequence:
        raise ValueError("Не задан путь к последовательности (sequence)")
    warn_if_failure_unreachable(config)
    record = read_sequence(config.sequence)
    result = track_record(record, config)
    if config.output:
        write_predictions(config.output, result.track)
        write_trace(trace_path(config.output), result.traces)
    return result.track


def _track_scenario(job: Tuple[ScenarioSpec, int, RunConfig]) -> Tuple[SequenceRecord, TrackResult]:
    spec, seed, config = job
    record = generate(spec, seed)
    return record, track_record(record, config)


@dataclass
class SuiteResult:
    reports: Dict[str, EvalReport]
    attributes: pd.DataFrame
    results: Dict[str, TrackResult]


def run_suite(seed: int, out_dir, config: RunConfig, save_frames: bool = False, plots: bool = False,
              specs: Optional[Sequence[ScenarioSpec]] = None) -> SuiteResult:
    """
    Стандартный набор: генерация, трекинг, оценка и таблица по атрибутам.

    Args:
        seed: зерно генерации последовательностей
        out_dir: каталог результатов
        config: конфигурация трекера
        save_frames: сохранять кадры PGM
        plots: сохранять SVG-графики
        specs: сценарии (по умолчанию standard_specs())

    Returns:
        Отчёты по последовательностям и таблица атрибутов
    """
    out_dir = Path(out_dir)
    specs = list(specs) if specs is not None else standard_specs()
    warn_if_failure_unreachable(config)
    jobs = [(spec, seed, config) for spec in specs]
    if config.workers > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            outputs = list(pool.map(_track_scenario, jobs))
    else:
        outputs = [_track_scenario(job) for job in jobs]

    reports: Dict[str, EvalReport] = {}
    results: Dict[str, TrackResult] = {}
    for record, result in outputs:
        write_sequence(record, out_dir / "sequences" / record.name, save_frames=save_frames)
        prediction_file = out_dir / "predictions" / f"{record.name}.txt"
        write_predictions(prediction_file, result.track)
        write_trace(trace_path(prediction_file), result.traces)
        replay_trace(result.traces)
        reports[record.name] = evaluate_sequence(result.track, record.groundtruth, record.name, record.attributes)
        results[record.name] = result

    table = attribute_report(reports)
    write_suite_report(reports, table, out_dir / "report", plots=plots)
    return SuiteResult(reports, table, results)


@dataclass
class AblationResult:
    table: pd.DataFrame
    full: SuiteResult
    no_detector: SuiteResult


def run_ablation(seed: int, out_dir, config: RunConfig,
                 specs: Optional[Sequence[ScenarioSpec]] = None) -> AblationResult:
    """Сравнение полного конвейера и конвейера без каскадной детекции на одном наборе."""
    out_dir = Path(out_dir)
    full = run_suite(seed, out_dir / "full", config, specs=specs)
    ablated = run_suite(seed, out_dir / "no_detector", replace(config, detector_enabled=False), specs=specs)
    rows = {"full": full.attributes.loc["all"], "no_detector": ablated.attributes.loc["all"]}
    table = pd.DataFrame(rows).T
    table.index.name = "variant"
    write_csv(table, out_dir / "ablation.csv")
    return AblationResult(table, full, ablated)
