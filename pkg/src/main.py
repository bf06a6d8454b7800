import argparse
import logging
import os
import sys
from pathlib import Path
from typing import Dict, List, Optional

sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
from src.config import DEFAULTS, format_settings, load_config
from src.evaluation import evaluate_sequence
from src.pipeline import run_ablation, run_sequence, run_suite
from src.reports import write_sequence_report
from src.sequence_io import read_predictions, read_sequence, read_spec, write_sequence
from src.simulator import generate

logger = logging.getLogger(__name__)


def setup_logging():
    """Настройка логирования (уровень из LTT_LOG_LEVEL)"""
    level = os.getenv("LTT_LOG_LEVEL", "INFO").upper()
    logging.basicConfig(
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        level=getattr(logging, level, logging.INFO)
    )


def print_separator():
    """Печатает разделитель"""
    print("\n" + "="*70 + "\n")


def parse_overrides(pairs: Optional[List[str]]) -> Dict[str, str]:
    """
    Разбирает переопределения вида key=value из командной строки.

    Args:
        pairs: список строк key=value

    Returns:
        Словарь сырых значений (типизация в load_config)
    """
    overrides: Dict[str, str] = {}
    for pair in pairs or []:
        if "=" not in pair:
            raise ValueError(f"Переопределение должно иметь вид key=value: {pair!r}")
        key, value = pair.split("=", 1)
        overrides[key.strip()] = value.strip()
    return overrides


def cmd_simulate(args) -> None:
    spec = read_spec(args.spec)
    print(f"🎬 Генерация сценария '{spec.name}' ({spec.length} кадров, seed={args.seed})")
    record = generate(spec, args.seed)
    directory = write_sequence(record, args.out)
    absent = sum(not p for p in record.present)
    print(f"💾 Последовательность сохранена: {directory}")
    print(f"📊 Кадров без цели: {absent}, атрибуты: {', '.join(record.attributes) or '-'}")


def cmd_track(args) -> None:
    overrides = parse_overrides(args.set)
    overrides["sequence"] = args.sequence
    overrides["output"] = args.out
    config = load_config(args.config, overrides)
    print(f"🎯 Трекинг: {config.sequence}")
    track = run_sequence(config)
    present = sum(b is not None for b in track.boxes)
    print(f"💾 Предсказания сохранены: {config.output}")
    print(f"📊 Кадров: {len(track)}, цель найдена на {present}")


def cmd_evaluate(args) -> None:
    record = read_sequence(args.gt)
    track = read_predictions(args.pred)
    report = evaluate_sequence(track, record.groundtruth, record.name, record.attributes)
    written = write_sequence_report(report, args.out, plots=args.plots)
    print_separator()
    print(f"📈 ОЦЕНКА: {record.name}\n")
    for key, value in report.summary().items():
        print(f"   {key}: {value:.4f}")
    print_separator()
    for path in written.values():
        print(f"💾 {path}")


def cmd_suite(args) -> None:
    overrides = parse_overrides(args.set)
    if args.workers is not None:
        overrides["workers"] = str(args.workers)
    config = load_config(args.config, overrides)
    out_dir = Path(args.out)
    print(f"🧪 Стандартный набор: seed={args.seed}, процессов: {config.workers}")
    if args.ablation:
        table = run_ablation(args.seed, out_dir, config).table
        print_separator()
        print("📊 АБЛЯЦИЯ (все последовательности):\n")
        print(table.to_string(float_format=lambda v: f"{v:.4f}"))
        print_separator()
        print(f"💾 Результаты сохранены: {out_dir}")
        return
    result = run_suite(args.seed, out_dir, config, save_frames=args.save_frames, plots=args.plots)
    print_separator()
    print("📊 РЕЗУЛЬТАТЫ ПО АТРИБУТАМ:\n")
    print(result.attributes.to_string(float_format=lambda v: f"{v:.4f}"))
    print_separator()
    print(f"💾 Отчёт сохранён: {out_dir / 'report'}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ltt",
        description="Долгосрочный трекер одного объекта: генерация, трекинг, оценка"
    )
    parser.add_argument("--print-config", action="store_true",
                        help="вывести все ключи конфигурации со значениями по умолчанию")
    sub = parser.add_subparsers(dest="command")

    simulate = sub.add_parser("simulate", help="сгенерировать последовательность по сценарию")
    simulate.add_argument("--spec", required=True, help="файл сценария (key = value)")
    simulate.add_argument("--seed", type=int, default=0)
    simulate.add_argument("--out", required=True, help="каталог последовательности")
    simulate.set_defaults(handler=cmd_simulate)

    track = sub.add_parser("track", help="отследить цель в последовательности")
    track.add_argument("--config", default=None, help="файл конфигурации (key = value)")
    track.add_argument("--sequence", required=True, help="каталог последовательности")
    track.add_argument("--out", required=True, help="файл предсказаний")
    track.add_argument("--set", action="append", metavar="KEY=VALUE", help="переопределить ключ конфигурации")
    track.set_defaults(handler=cmd_track)

    evaluate = sub.add_parser("evaluate", help="оценить предсказания по разметке")
    evaluate.add_argument("--pred", required=True, help="файл предсказаний")
    evaluate.add_argument("--gt", required=True, help="каталог последовательности с разметкой")
    evaluate.add_argument("--out", required=True, help="каталог отчёта")
    evaluate.add_argument("--plots", action="store_true", help="сохранить SVG-графики")
    evaluate.set_defaults(handler=cmd_evaluate)

    suite = sub.add_parser("suite", help="стандартный набор сценариев: трекинг и оценка")
    suite.add_argument("--seed", type=int, default=0)
    suite.add_argument("--out", required=True, help="каталог результатов")
    suite.add_argument("--config", default=None, help="файл конфигурации (key = value)")
    suite.add_argument("--workers", type=int, default=None, help="параллельных процессов")
    suite.add_argument("--save-frames", action="store_true", help="сохранить кадры PGM")
    suite.add_argument("--plots", action="store_true", help="сохранить SVG-графики")
    suite.add_argument("--ablation", action="store_true", help="сравнить с конвейером без детекции")
    suite.add_argument("--set", action="append", metavar="KEY=VALUE", help="переопределить ключ конфигурации")
    suite.set_defaults(handler=cmd_suite)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Точка входа командной строки. Возвращает код выхода."""
    setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)

    if args.print_config:
        print(format_settings(DEFAULTS), end="")
        return 0
    if not args.command:
        parser.print_help()
        return 1

    try:
        args.handler(args)
    except Exception as e:
        logger.debug("Command failed", exc_info=True)
        print(f"❌ Ошибка: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
