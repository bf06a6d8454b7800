"""Файловые форматы: каталог последовательности (PGM + sequence.meta), разметка, предсказания, сценарии."""

import logging
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
from PIL import Image

from src.config import read_key_value_file
from src.evaluation import PredictionTrack
from src.geometry import BBox
from src.simulator import ScenarioSpec, SequenceRecord, spec_from_settings, spec_to_settings

logger = logging.getLogger(__name__)

FRAME_PATTERN = "{:08d}.pgm"
META_FILE = "sequence.meta"
GROUNDTRUTH_FILE = "groundtruth.txt"
SPEC_FILE = "scenario.spec"
ABSENT = "absent"


def _format_float(value: float) -> str:
    # repr сохраняет значение float без потерь
    return repr(float(value))


def format_box(b: BBox) -> str:
    return ",".join(_format_float(v) for v in b.as_tuple())


def parse_box(text: str, where: str) -> BBox:
    parts = text.split(",")
    if len(parts) != 4:
        raise ValueError(f"{where}: ожидается x,y,w,h, получено {text!r}")
    try:
        return BBox(*(float(p) for p in parts))
    except ValueError as e:
        raise ValueError(f"{where}: некорректная рамка {text!r} ({e})") from None


def write_key_values(path: Path, values: Dict[str, str]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for key, value in values.items():
            f.write(f"{key} = {value}\n")


def write_groundtruth(path, groundtruth: Sequence[Optional[BBox]]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for b in groundtruth:
            f.write((format_box(b) if b is not None else ABSENT) + "\n")


def read_groundtruth(path) -> List[Optional[BBox]]:
    """
    Читает разметку: одна строка на кадр, `x,y,w,h` или `absent`.

    Raises:
        FileNotFoundError: файла нет
        ValueError: некорректная строка
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Файл разметки не найден: {path}")
    boxes: List[Optional[BBox]] = []
    with open(path, "r", encoding="utf-8") as f:
        for number, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            boxes.append(None if line == ABSENT else parse_box(line, f"{path}:{number}"))
    return boxes


def write_predictions(path, track: PredictionTrack) -> None:
    """Пишет предсказания: `x,y,w,h,confidence` или `absent,confidence`."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for b, conf in zip(track.boxes, track.confidences):
            head = format_box(b) if b is not None else ABSENT
            f.write(f"{head},{_format_float(conf)}\n")
    logger.info(f"Predictions saved to {path}")


def read_predictions(path) -> PredictionTrack:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Файл предсказаний не найден: {path}")
    boxes: List[Optional[BBox]] = []
    confidences: List[float] = []
    with open(path, "r", encoding="utf-8") as f:
        for number, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            where = f"{path}:{number}"
            head, _, conf = line.rpartition(",")
            try:
                confidences.append(float(conf))
            except ValueError:
                raise ValueError(f"{where}: некорректная уверенность {conf!r}") from None
            boxes.append(None if head == ABSENT else parse_box(head, where))
    return PredictionTrack(tuple(boxes), tuple(confidences))


def write_spec(path, spec: ScenarioSpec) -> None:
    write_key_values(Path(path), spec_to_settings(spec))


def read_spec(path) -> ScenarioSpec:
    return spec_from_settings(read_key_value_file(path))


def write_sequence(record: SequenceRecord, directory, save_frames: bool = True) -> Path:
    """
    Сохраняет последовательность: кадры PGM, sequence.meta, groundtruth.txt (и сценарий, если есть).

    Args:
        record: последовательность
        directory: каталог назначения
        save_frames: при False пишутся только разметка и манифест

    Returns:
        Путь к каталогу
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    dims = record.dims
    write_key_values(directory / META_FILE, {
        "name": record.name,
        "width": str(dims.width),
        "height": str(dims.height),
        "length": str(len(record)),
        "attributes": ",".join(record.attributes),
        "spec_hash": record.spec_hash,
        "frames": "true" if save_frames else "false",
    })
    write_groundtruth(directory / GROUNDTRUTH_FILE, record.groundtruth)
    if record.spec is not None:
        write_spec(directory / SPEC_FILE, record.spec)
    if save_frames:
        for i, frame in enumerate(record.frames):
            Image.fromarray(np.asarray(frame, dtype=np.uint8), mode="L").save(directory / FRAME_PATTERN.format(i))
    logger.info(f"Sequence {record.name} saved to {directory} ({len(record)} frames)")
    return directory


def read_sequence(directory) -> SequenceRecord:
    """
    Читает каталог последовательности.

    Raises:
        FileNotFoundError: нет каталога, манифеста или кадра
        ValueError: манифест не согласован с кадрами или разметкой
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"Каталог последовательности не найден: {directory}")
    meta = read_key_value_file(directory / META_FILE)
    try:
        width, height, length = int(meta["width"]), int(meta["height"]), int(meta["length"])
    except (KeyError, ValueError) as e:
        raise ValueError(f"{directory / META_FILE}: некорректный манифест ({e})") from None
    groundtruth = read_groundtruth(directory / GROUNDTRUTH_FILE)
    if len(groundtruth) != length:
        raise ValueError(f"{directory}: в разметке {len(groundtruth)} строк, ожидалось {length}")

    frames = np.empty((length, height, width), dtype=np.uint8)
    for i in range(length):
        frame_path = directory / FRAME_PATTERN.format(i)
        if not frame_path.exists():
            raise FileNotFoundError(f"Кадр не найден: {frame_path}")
        with Image.open(frame_path) as image:
            frame = np.array(image.convert("L"))
        if frame.shape != (height, width):
            raise ValueError(f"{frame_path}: размер {frame.shape[::-1]}, ожидалось {width}x{height}")
        frames[i] = frame

    spec = read_spec(directory / SPEC_FILE) if (directory / SPEC_FILE).exists() else None
    attributes = tuple(a.strip() for a in meta.get("attributes", "").split(",") if a.strip())
    return SequenceRecord(meta.get("name", directory.name), frames, groundtruth, attributes,
                          meta.get("spec_hash", ""), spec)
