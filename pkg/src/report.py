"""Report emission: CSV tables, JSON summaries and the accuracy-vs-IoU chart.

Nothing here computes a metric; every number comes from the analyzer's
result objects. Output is byte-stable for a given result.
"""
from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import pandas as pd  # noqa: E402

from .analyzer import FUSED, IMAGE_ONLY, ExperimentResult, FoldResult  # noqa: E402

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
FLOAT_FORMAT = "%.6f"

# fixed SVG element ids, no timestamp
plt.rcParams["svg.hashsalt"] = "fusion-report"
plt.rcParams["svg.fonttype"] = "none"

VARIANT_LABELS = {IMAGE_ONLY: "image only", FUSED: "image + audio (fused)"}


def write_csv(frame: pd.DataFrame, path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    return path


def write_json(payload: Dict[str, Any], path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf8", newline="\n") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")
    return path


def plot_sweep(sweep: pd.DataFrame, path: PathLike, title: str = "Accuracy vs IoU threshold") -> Path:
    """Two accuracy curves over the IoU grid as a self-contained SVG."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(6, 4))
    for variant, marker in ((IMAGE_ONLY, "o"), (FUSED, "s")):
        ax.plot(sweep["iou"], sweep[variant], marker=marker, label=VARIANT_LABELS[variant])
    ax.set_xlabel("IoU threshold")
    ax.set_ylabel("accuracy")
    ax.set_ylim(0.0, 1.0)
    ax.set_title(title)
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def write_experiment_report(result: ExperimentResult, out_dir: PathLike, config: Optional[Dict[str, Any]] = None) -> List[Path]:
    out = Path(out_dir)
    evaluation = result.evaluation
    written = [
        write_csv(evaluation.per_class_table(IMAGE_ONLY), out / "per_class_image_only.csv"),
        write_csv(evaluation.per_class_table(FUSED), out / "per_class_fused.csv"),
        write_csv(evaluation.overall_table(), out / "overall.csv"),
        write_csv(evaluation.sweep_table(), out / "sweep.csv"),
        write_csv(result.train_report.to_frame(), out / "train_report.csv"),
        plot_sweep(evaluation.sweep_table(), out / "accuracy_vs_iou.svg"),
    ]
    summary = {
        "overall": evaluation.overall_table().to_dict(orient="records"),
        "train": {
            "stopping_epoch": result.train_report.stopping_epoch,
            "best_epoch": result.train_report.best_epoch,
            "train_scenes": len(result.train_scenes),
            "stop_scenes": len(result.stop_scenes),
            "eval_scenes": len(result.eval_scenes),
        },
        "config": config or {},
    }
    written.append(write_json(summary, out / "summary.json"))
    logger.info("wrote %d report files to %s", len(written), out)
    return written


def write_fold_report(result: FoldResult, out_dir: PathLike) -> List[Path]:
    out = Path(out_dir)
    return [
        write_csv(result.table(), out / "folds.csv"),
        write_json(result.ttest_dict(), out / "ttest.json"),
    ]
