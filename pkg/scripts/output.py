"""学習曲線の書き出し（CSV、インデックスJSON、PNG）"""

import csv
import json
import logging
import re
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from harness import AggregatedCurves  # noqa: E402

logger = logging.getLogger(__name__)

CSV_HEADER = ["episode", "mean", "stderr", "moving_avg"]


# (単位, 1単位のバイト数, 小数桁数)。大きい単位から順に当てはめる
SIZE_UNITS = (("MB", 1024**2, 1), ("KB", 1024, 0))


def format_size(size_bytes: int) -> str:
    """出力ファイルのサイズをログ用の短い表記にする"""
    for unit, scale, digits in SIZE_UNITS:
        if size_bytes >= scale:
            return f"{size_bytes / scale:.{digits}f} {unit}"
    return f"{size_bytes} B"


def label_slug(label: str) -> str:
    """ファイル名に使えない文字を _ に置き換える"""
    slug = re.sub(r"[^0-9A-Za-z_.-]+", "_", label).strip("_")
    return slug or "label"


def _csv_paths(prefix: Path, labels: list[str]) -> list[Path]:
    paths: list[Path] = []
    used: set[str] = set()
    for index, label in enumerate(labels):
        name = f"{prefix.name}_{label_slug(label)}.csv"
        if name in used:
            name = f"{prefix.name}_{label_slug(label)}_{index}.csv"
        used.add(name)
        paths.append(prefix.with_name(name))
    return paths


def _log_saved(path: Path) -> None:
    logger.info(f"保存: {path} ({format_size(path.stat().st_size)})")


def emit_csv(curves: AggregatedCurves, prefix: str | Path) -> list[Path]:
    """
    ラベルごとに <prefix>_<label>.csv を、全体に <prefix>_index.json を書き出す

    CSV の列は episode,mean,stderr,moving_avg（episode は1始まり）。
    浮動小数点数は repr で書くので、読み戻すと元の値と完全に一致する。

    Returns:
        書き出したファイルのパス（インデックスが最後）
    """
    prefix = Path(prefix)
    paths = _csv_paths(prefix, curves.labels)
    written: list[Path] = []

    try:
        prefix.parent.mkdir(parents=True, exist_ok=True)
        for curve, path in zip(curves.curves, paths):
            with open(path, "w", encoding="utf-8", newline="") as f:
                writer = csv.writer(f, lineterminator="\n")
                writer.writerow(CSV_HEADER)
                for episode, (mean, stderr, avg) in enumerate(
                    zip(curve.mean.tolist(), curve.stderr.tolist(), curve.moving_avg.tolist()), start=1
                ):
                    writer.writerow([episode, repr(mean), repr(stderr), repr(avg)])
            _log_saved(path)
            written.append(path)

        index = {
            "runs": curves.runs,
            "episodes": curves.episodes,
            "labels": [
                {"label": curve.label, "file": path.name, "truncations": curve.truncations}
                for curve, path in zip(curves.curves, paths)
            ],
        }
        index_path = prefix.with_name(f"{prefix.name}_index.json")
        with open(index_path, "w", encoding="utf-8") as f:
            json.dump(index, f, ensure_ascii=False, separators=(",", ":"))
        _log_saved(index_path)
        written.append(index_path)
    except OSError as e:
        raise OSError(f"書き出しに失敗しました: {prefix}: {e}") from e

    return written


def read_csv(path: str | Path) -> dict[str, list[float]]:
    """emit_csv が書いたCSVを列ごとに読み戻す"""
    columns: dict[str, list[float]] = {name: [] for name in CSV_HEADER}
    with open(path, encoding="utf-8", newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames != CSV_HEADER:
            raise ValueError(f"{path}: ヘッダが不正です: {reader.fieldnames}")
        for row in reader:
            for name in CSV_HEADER:
                columns[name].append(float(row[name]))
    return columns


def plot_curves(
    curves: AggregatedCurves,
    path: str | Path,
    optimal: float | None = None,
    title: str = "",
    ylabel: str = "",
) -> Path:
    """
    学習曲線をPNGに描く

    エピソードごとの平均を薄く、移動平均を濃く描き、
    optimal があれば破線の水平線を引く。
    """
    path = Path(path)
    fig, ax = plt.subplots(figsize=(8, 5))
    try:
        for curve in curves.curves:
            episodes = range(1, len(curve.mean) + 1)
            (line,) = ax.plot(episodes, curve.moving_avg, label=curve.label, linewidth=1.5)
            ax.plot(episodes, curve.mean, color=line.get_color(), alpha=0.2, linewidth=0.5)
        if optimal is not None:
            ax.axhline(optimal, color="black", linestyle="--", linewidth=1.0, label="optimal")
        ax.set_xlabel("episode")
        ax.set_ylabel(ylabel)
        if title:
            ax.set_title(title)
        if curves.curves:
            ax.legend()
        path.parent.mkdir(parents=True, exist_ok=True)
        fig.savefig(path, dpi=120, bbox_inches="tight")
    finally:
        plt.close(fig)
    _log_saved(path)
    return path
