import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

from dotenv import load_dotenv

# Загрузка переменных окружения из .env (если локально)
# Любой ключ конфигурации можно переопределить как LTT_<KEY>
load_dotenv()

ENV_PREFIX = "LTT_"


@dataclass(frozen=True)
class AppearanceConfig:
    """Параметры модели внешнего вида (шаблоны, классификатор, регрессор рамки)."""
    patch_resolution: int = 32
    bank_capacity: int = 50
    pos_iou: float = 0.7
    neg_iou: float = 0.3
    pos_per_frame: int = 5
    neg_per_frame: int = 20
    init_pos: int = 50
    init_neg: int = 200
    pos_buffer_frames: int = 50
    neg_buffer_frames: int = 20
    ridge_lambda: float = 1.0
    regressor_samples: int = 500
    similarity_source: str = "initial"
    score_mapping: str = "affine"
    negative_gate: float = 0.95

    def __post_init__(self):
        if self.patch_resolution < 4:
            raise ValueError("patch_resolution должен быть >= 4")
        if self.bank_capacity < 1:
            raise ValueError("bank_capacity должен быть >= 1")
        if not 0.0 <= self.neg_iou < self.pos_iou <= 1.0:
            raise ValueError("требуется 0 <= neg_iou < pos_iou <= 1")
        if min(self.pos_per_frame, self.neg_per_frame, self.init_pos, self.init_neg) < 0:
            raise ValueError("количество сэмплов не может быть отрицательным")
        if self.pos_buffer_frames < 1 or self.neg_buffer_frames < 1:
            raise ValueError("ёмкость буфера сэмплов должна быть >= 1 кадра")
        if self.ridge_lambda < 0:
            raise ValueError("ridge_lambda не может быть отрицательным")
        if self.similarity_source not in ("initial", "bank"):
            raise ValueError(f"similarity_source: ожидается initial или bank, получено {self.similarity_source!r}")
        if self.score_mapping not in ("affine", "rectified"):
            raise ValueError(f"score_mapping: ожидается affine или rectified, получено {self.score_mapping!r}")


@dataclass(frozen=True)
class SamplerConfig:
    """Гауссово сэмплирование кандидатов и локальное уточнение по сходству."""
    n_candidates: int = 256
    sigma_xy: float = 0.3
    sigma_scale: float = 0.05
    refine_step_px: float = 1.0
    refine_radius_px: float = 2.0
    refine_scales: Tuple[float, ...] = (0.975, 1.0, 1.025)
    seed: int = 0

    def __post_init__(self):
        if self.n_candidates < 1:
            raise ValueError("n_candidates должен быть >= 1")
        if self.sigma_xy <= 0 or self.sigma_scale <= 0:
            raise ValueError("sigma_xy и sigma_scale должны быть > 0")
        if self.refine_step_px <= 0 or self.refine_radius_px < 0:
            raise ValueError("refine_step_px > 0 и refine_radius_px >= 0")
        if not self.refine_scales or min(self.refine_scales) <= 0:
            raise ValueError("refine_scales должны быть положительными")


@dataclass(frozen=True)
class MotionConfig:
    """Оценка глобального движения блочным сопоставлением."""
    search_radius: int = 16
    motion_reliability_floor: float = 0.2
    flow_region_scale: float = 3.0
    max_block: int = 64

    def __post_init__(self):
        if self.search_radius < 0:
            raise ValueError("search_radius не может быть отрицательным")
        if not 0.0 <= self.motion_reliability_floor <= 1.0:
            raise ValueError("motion_reliability_floor должен лежать в [0, 1]")
        if self.flow_region_scale < 1.0:
            raise ValueError("flow_region_scale должен быть >= 1")
        if self.max_block < 1:
            raise ValueError("max_block должен быть >= 1")


@dataclass(frozen=True)
class Thresholds:
    """Пороги модуля оценки: th_mid, th_low и пороги детекции."""
    th_mid: float = 0.5
    th_low: float = 0.1
    det_sim: float = 0.5
    det_cls: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.th_low < self.th_mid <= 1.0:
            raise ValueError("требуется 0 <= th_low < th_mid <= 1")


@dataclass(frozen=True)
class CascadeConfig:
    """Каскадная детекция: локальный поиск, области 5^2 и 18^2, весь кадр."""
    stage_scales: Tuple[float, ...] = (5.0, 18.0)
    local_n: int = 256
    budget_area5: int = 64
    budget_area18: int = 64
    budget_global: int = 256
    gate_top_k: int = 8
    one_stage_per_frame: bool = False
    ranking_mode: str = "composite"
    sequential_k: int = 16
    square_regions: bool = False

    def __post_init__(self):
        scales = list(self.stage_scales)
        if len(scales) != 2:
            raise ValueError("stage_scales: ожидается два масштаба (например 5,18)")
        if any(s <= 1.0 for s in scales) or any(b <= a for a, b in zip(scales, scales[1:])):
            raise ValueError("stage_scales должны строго возрастать и быть > 1")
        if min(self.local_n, self.budget_area5, self.budget_area18, self.budget_global, self.gate_top_k) < 1:
            raise ValueError("local_n, бюджеты и gate_top_k должны быть >= 1")
        if self.ranking_mode not in ("composite", "sequential"):
            raise ValueError(f"ranking_mode: ожидается composite или sequential, получено {self.ranking_mode!r}")


@dataclass(frozen=True)
class RunConfig:
    """Полная конфигурация запуска трекера."""
    appearance: AppearanceConfig = field(default_factory=AppearanceConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    motion: MotionConfig = field(default_factory=MotionConfig)
    thresholds: Thresholds = field(default_factory=Thresholds)
    cascade: CascadeConfig = field(default_factory=CascadeConfig)
    detector_enabled: bool = True
    update_score: str = "confidence"
    refit_interval: int = 0
    workers: int = 1
    sequence: str = ""
    output: str = ""

    def __post_init__(self):
        if self.update_score not in ("confidence", "classification"):
            raise ValueError(f"update_score: ожидается confidence или classification, получено {self.update_score!r}")
        if self.refit_interval < 0:
            raise ValueError("refit_interval не может быть отрицательным")
        if self.workers < 1:
            raise ValueError("workers должен быть >= 1")

    @property
    def seed(self) -> int:
        return self.sampler.seed


# Ключ плоского файла -> (секции RunConfig, описание).
# Пустой кортеж секций означает поле самого RunConfig.
KEYS: Dict[str, Tuple[Tuple[str, ...], str]] = {
    "patch_resolution": (("appearance",), "сторона патча (пиксели) для сравнения шаблонов"),
    "bank_capacity": (("appearance",), "ёмкость банка адаптивных шаблонов"),
    "pos_iou": (("appearance",), "IoU с рамкой, начиная с которого сэмпл положительный"),
    "neg_iou": (("appearance",), "IoU с рамкой, до которого сэмпл отрицательный"),
    "pos_per_frame": (("appearance",), "положительных сэмплов на кадр"),
    "neg_per_frame": (("appearance",), "отрицательных сэмплов на кадр"),
    "init_pos": (("appearance",), "положительных сэмплов на первом кадре"),
    "init_neg": (("appearance",), "отрицательных сэмплов на первом кадре"),
    "pos_buffer_frames": (("appearance",), "сколько кадров хранить положительные сэмплы"),
    "neg_buffer_frames": (("appearance",), "сколько кадров хранить отрицательные сэмплы"),
    "ridge_lambda": (("appearance",), "регуляризация гребневой регрессии рамки"),
    "regressor_samples": (("appearance",), "обучающих рамок регрессора"),
    "similarity_source": (("appearance",), "S_s против initial-шаблона или банка (bank)"),
    "score_mapping": (("appearance",), "affine: (NCC+1)/2, rectified: max(NCC, 0)"),
    "negative_gate": (("appearance",), "негативы с NCC к шаблону выше порога отбрасываются"),
    "n_candidates": (("sampler",), "кандидатов гауссова сэмплирования"),
    "sigma_xy": (("sampler",), "СКО сдвига центра в долях mean(w, h)"),
    "sigma_scale": (("sampler",), "СКО логарифма масштаба"),
    "refine_step_px": (("sampler",), "шаг локального уточнения (пиксели)"),
    "refine_radius_px": (("sampler",), "радиус локального уточнения (пиксели)"),
    "refine_scales": (("sampler",), "масштабы локального уточнения"),
    "seed": (("sampler",), "зерно генератора случайных чисел"),
    "search_radius": (("motion",), "радиус блочного поиска движения (пиксели)"),
    "motion_reliability_floor": (("motion",), "ниже этой надёжности движение считается нулевым"),
    "flow_region_scale": (("motion",), "масштаб стороны области оценки движения"),
    "max_block": (("motion",), "максимальная сторона сетки блока"),
    "th_mid": (("thresholds",), "порог успешного трекинга по S_s / S_t"),
    "th_low": (("thresholds",), "порог срыва трекинга по S_t"),
    "det_sim": (("thresholds",), "порог сходства для детекции (все стадии каскада)"),
    "det_cls": (("thresholds",), "порог классификации для детекции (все стадии каскада)"),
    "stage_scales": (("cascade",), "масштабы сторон областей поиска каскада"),
    "local_n": (("cascade",), "кандидатов локальной стадии каскада"),
    "budget_area5": (("cascade",), "бюджет предложений стадии 5^2"),
    "budget_area18": (("cascade",), "бюджет предложений стадии 18^2"),
    "budget_global": (("cascade",), "бюджет предложений глобальной стадии"),
    "gate_top_k": (("cascade",), "сколько лучших предложений проверять порогами"),
    "one_stage_per_frame": (("cascade",), "одна стадия каскада на кадр"),
    "ranking_mode": (("cascade",), "composite или sequential ранжирование"),
    "sequential_k": (("cascade",), "K для последовательного ранжирования"),
    "square_regions": (("cascade",), "квадратные области поиска равной площади"),
    "detector_enabled": ((), "включить каскадную детекцию"),
    "update_score": ((), "оценка для политики обновления: confidence или classification"),
    "refit_interval": ((), "периодическое переобучение каждые N уверенных кадров (0 = выкл.)"),
    "workers": ((), "параллельных процессов для suite"),
    "sequence": ((), "путь к каталогу последовательности"),
    "output": ((), "путь к файлу предсказаний"),
}


def default_value(key: str) -> Any:
    """Значение ключа по умолчанию (берётся из полей dataclass-ов)."""
    sections, _ = KEYS[key]
    run_fields = {f.name: f for f in fields(RunConfig)}
    if sections:
        return getattr(run_fields[sections[0]].default_factory(), key)
    return run_fields[key].default


DEFAULTS: Dict[str, Any] = {key: default_value(key) for key in KEYS}


def parse_value(key: str, raw: str) -> Any:
    """
    Разбирает строковое значение ключа по типу его значения по умолчанию.

    Args:
        key: ключ конфигурации
        raw: строковое значение

    Returns:
        Значение нужного типа
    """
    if key not in KEYS:
        raise ValueError(f"Неизвестный ключ конфигурации: {key}")
    default = DEFAULTS[key]
    text = raw.strip()
    try:
        if isinstance(default, bool):
            lowered = text.lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            return tuple(float(part) for part in text.split(",") if part.strip())
        return text
    except ValueError:
        raise ValueError(f"Некорректное значение для {key}: {raw!r}") from None


def read_key_value_file(path) -> Dict[str, str]:
    """
    Читает плоский файл `key = value` (комментарии начинаются с #).

    Args:
        path: путь к файлу

    Returns:
        Словарь сырых строковых значений
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Файл не найден: {path}")
    values: Dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as f:
        for number, line in enumerate(f, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{number}: ожидается строка вида key = value")
            key, value = line.split("=", 1)
            values[key.strip()] = value.strip()
    return values


def load_settings(path=None, overrides: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
    """
    Собирает плоский словарь настроек: умолчания < окружение < файл < overrides.

    Args:
        path: необязательный путь к файлу конфигурации
        overrides: значения из CLI (уже типизированные или строки)

    Returns:
        Словарь всех ключей конфигурации
    """
    settings = dict(DEFAULTS)
    for key in KEYS:
        env_value = os.getenv(ENV_PREFIX + key.upper())
        if env_value is not None:
            settings[key] = parse_value(key, env_value)
    if path:
        for key, raw in read_key_value_file(path).items():
            settings[key] = parse_value(key, raw)
    for key, value in (overrides or {}).items():
        if key not in KEYS:
            raise ValueError(f"Неизвестный ключ конфигурации: {key}")
        settings[key] = parse_value(key, value) if isinstance(value, str) else value
    return settings


def build_config(settings: Dict[str, Any]) -> RunConfig:
    """Строит RunConfig из плоского словаря настроек."""
    unknown = set(settings) - set(KEYS)
    if unknown:
        raise ValueError(f"Неизвестные ключи конфигурации: {', '.join(sorted(unknown))}")
    merged = dict(DEFAULTS)
    merged.update(settings)
    sections: Dict[str, Dict[str, Any]] = {"appearance": {}, "sampler": {}, "motion": {},
                                          "thresholds": {}, "cascade": {}}
    top: Dict[str, Any] = {}
    for key, value in merged.items():
        targets, _ = KEYS[key]
        if not targets:
            top[key] = value
        for section in targets:
            sections[section][key] = value
    return RunConfig(
        appearance=AppearanceConfig(**sections["appearance"]),
        sampler=SamplerConfig(**sections["sampler"]),
        motion=MotionConfig(**sections["motion"]),
        thresholds=Thresholds(**sections["thresholds"]),
        cascade=CascadeConfig(**sections["cascade"]),
        **top,
    )


def load_config(path=None, overrides: Optional[Dict[str, Any]] = None) -> RunConfig:
    """Загружает RunConfig из окружения, файла и переопределений."""
    return build_config(load_settings(path, overrides))


def config_to_settings(config: RunConfig) -> Dict[str, Any]:
    """Обратное преобразование RunConfig в плоский словарь."""
    settings: Dict[str, Any] = {}
    for key, (targets, _) in KEYS.items():
        source = getattr(config, targets[0]) if targets else config
        settings[key] = getattr(source, key)
    return settings


def format_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(format(v, "g") for v in value)
    return str(value)


def format_settings(settings: Dict[str, Any], with_descriptions: bool = True) -> str:
    """Форматирует настройки в виде файла `key = value` с описаниями."""
    lines = []
    for key in KEYS:
        if with_descriptions:
            lines.append(f"# {KEYS[key][1]}")
        lines.append(f"{key} = {format_value(settings[key])}")
    return "\n".join(lines) + "\n"


def with_overrides(config: RunConfig, **values: Any) -> RunConfig:
    """Возвращает копию конфигурации с изменёнными плоскими ключами."""
    settings = config_to_settings(config)
    settings.update(values)
    return build_config(settings)
