"""Отчёты оценки: CSV-таблицы (pandas) и SVG-графики кривых (matplotlib)."""

import logging
from pathlib import Path
from typing import Dict, Mapping

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import pandas as pd  # noqa: E402

from src.evaluation import EvalReport  # noqa: E402

logger = logging.getLogger(__name__)

# Фиксированная соль id элементов SVG: одинаковые данные дают одинаковый файл
plt.rcParams["svg.hashsalt"] = "long-term-tracker"
plt.rcParams["figure.figsize"] = (5.0, 4.0)
plt.rcParams["font.size"] = 9

PLOTS = {
    "success": ("Overlap threshold", "Success rate", "Success plot"),
    "precision_px": ("Location error threshold (px)", "Precision", "Precision plot"),
    "f_measure": ("Confidence threshold", "F-measure", "F-measure plot"),
}


def curves_frame(report: EvalReport) -> pd.DataFrame:
    """Все кривые отчёта в одной таблице: curve, threshold, value."""
    parts = [pd.DataFrame({"curve": name, "threshold": curve.thresholds, "value": curve.values})
             for name, curve in report.curves.items()]
    return pd.concat(parts, ignore_index=True)


def summary_frame(reports: Mapping[str, EvalReport]) -> pd.DataFrame:
    rows = {name: {**r.summary(), "attributes": ",".join(r.attributes)} for name, r in reports.items()}
    table = pd.DataFrame.from_dict(rows, orient="index")
    table.index.name = "sequence"
    return table


def write_csv(table: pd.DataFrame, path: Path, index: bool = True) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    table.to_csv(path, index=index, float_format="%.6f", lineterminator="\n")
    logger.info(f"Report saved to {path}")
    return path


def plot_curves(reports: Mapping[str, EvalReport], key: str, path: Path) -> Path:
    """
    Рисует одну кривую (success, precision_px или f_measure) для набора последовательностей.

    Args:
        reports: отчёты по имени последовательности
        key: имя кривой
        path: путь к SVG

    Returns:
        Путь к файлу
    """
    xlabel, ylabel, title = PLOTS[key]
    styles = ["-", "--", "-."]
    fig, ax = plt.subplots()
    for k, (name, report) in enumerate(reports.items()):
        curve = report.curves[key]
        label = f"{name} [{report.success_auc:.3f}]" if key == "success" else name
        ax.plot(curve.thresholds, curve.values, styles[k % len(styles)], label=label)
    ax.set(xlabel=xlabel, ylabel=ylabel, ylim=(0, 1), title=title)
    ax.grid(True)
    if len(reports) <= 12:
        ax.legend(loc="best", fontsize=7)
    fig.tight_layout()
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    logger.info(f"Plot saved to {path}")
    return path


def write_sequence_report(report: EvalReport, out_dir, plots: bool = False) -> Dict[str, Path]:
    """
    Сохраняет отчёт одной последовательности: summary.csv, curves.csv и (опционально) SVG.

    Returns:
        Словарь имя -> путь записанного файла
    """
    out_dir = Path(out_dir)
    written = {
        "summary": write_csv(summary_frame({report.name or "sequence": report}), out_dir / "summary.csv"),
        "curves": write_csv(curves_frame(report), out_dir / "curves.csv", index=False),
    }
    if plots:
        for key in PLOTS:
            written[key] = plot_curves({report.name or "sequence": report}, key, out_dir / f"{key}.svg")
    return written


def write_suite_report(reports: Mapping[str, EvalReport], attribute_table: pd.DataFrame, out_dir,
                       plots: bool = False) -> Dict[str, Path]:
    """Сохраняет сводку набора: summary.csv, attributes.csv и кривые по последовательностям."""
    out_dir = Path(out_dir)
    written = {
        "summary": write_csv(summary_frame(reports), out_dir / "summary.csv"),
        "attributes": write_csv(attribute_table, out_dir / "attributes.csv"),
    }
    for name, report in reports.items():
        write_csv(curves_frame(report), out_dir / "curves" / f"{name}.csv", index=False)
    if plots:
        for key in PLOTS:
            written[key] = plot_curves(reports, key, out_dir / f"{key}.svg")
    return written
