"""Confusion matrices, macro precision/recall/F1, and report artifacts.

Macro averages are unweighted over classes; a class nobody predicted has
precision 0, and a class with no true samples (support 0) is excluded
from the macro averages entirely. Macro F1 is the mean of per-class F1,
not the harmonic mean of macro precision and recall.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure
from torch.utils.data import DataLoader, Dataset

from .errors import DataError
from .models import ImageClassifier
from .training import EpochMetrics, write_metrics_csv


@dataclass(frozen=True)
class ConfusionMatrix:
    """cells[t][p] = number of samples with true class t predicted as p."""

    cells: np.ndarray

    def __post_init__(self):
        c = self.cells
        if c.ndim != 2 or c.shape[0] != c.shape[1]:
            raise ValueError("confusion cells must be a square matrix")
        if (c < 0).any():
            raise ValueError("confusion cells must be non-negative")

    @property
    def num_classes(self) -> int:
        return self.cells.shape[0]

    @property
    def total(self) -> int:
        return int(self.cells.sum())

    def save_csv(self, path: Path | str, class_names: Sequence[str]) -> Path:
        if len(class_names) != self.num_classes:
            raise ValueError("class_names length must match matrix size")
        path = Path(path)
        lines = [",".join(str(n) for n in class_names)]
        lines += [",".join(str(int(v)) for v in row) for row in self.cells]
        path.write_text("\n".join(lines) + "\n")
        return path


def confusion(predictions, labels, num_classes: int) -> ConfusionMatrix:
    """Count (true, predicted) pairs into a KxK matrix."""
    preds = np.asarray(predictions, dtype=np.int64)
    truth = np.asarray(labels, dtype=np.int64)
    if preds.shape != truth.shape or preds.ndim != 1:
        raise DataError(
            f"predictions and labels must be equal-length vectors, "
            f"got {preds.shape} and {truth.shape}"
        )
    if len(preds) and (
        preds.min() < 0 or preds.max() >= num_classes
        or truth.min() < 0 or truth.max() >= num_classes
    ):
        raise DataError(f"class values outside [0, {num_classes})")
    cells = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cells, (truth, preds), 1)
    return ConfusionMatrix(cells)


@dataclass(frozen=True)
class ClassMetrics:
    class_name: str
    precision: float
    recall: float
    f1: float
    support: int


@dataclass(frozen=True)
class EvaluationReport:
    accuracy: float
    macro_precision: float
    macro_recall: float
    macro_f1: float
    num_samples: int
    per_class: tuple[ClassMetrics, ...]

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "macro_precision": self.macro_precision,
            "macro_recall": self.macro_recall,
            "macro_f1": self.macro_f1,
            "num_samples": self.num_samples,
            "per_class": [
                {
                    "class": m.class_name,
                    "precision": m.precision,
                    "recall": m.recall,
                    "f1": m.f1,
                    "support": m.support,
                }
                for m in self.per_class
            ],
        }

    def save(self, path: Path | str) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=2) + "\n")
        return path

    @classmethod
    def load(cls, path: Path | str) -> "EvaluationReport":
        doc = json.loads(Path(path).read_text())
        return cls(
            accuracy=doc["accuracy"],
            macro_precision=doc["macro_precision"],
            macro_recall=doc["macro_recall"],
            macro_f1=doc["macro_f1"],
            num_samples=doc["num_samples"],
            per_class=tuple(
                ClassMetrics(
                    class_name=m["class"],
                    precision=m["precision"],
                    recall=m["recall"],
                    f1=m["f1"],
                    support=m["support"],
                )
                for m in doc["per_class"]
            ),
        )


def metrics_from_confusion(
    matrix: ConfusionMatrix, class_names: Optional[Sequence[str]] = None
) -> EvaluationReport:
    """Per-class and macro precision/recall/F1 from a confusion matrix.

    precision(c) = cells[c][c] / column_sum(c) (0 when the column is empty),
    recall(c) = cells[c][c] / row_sum(c), f1 = 2PR/(P+R) (0 when P+R = 0).
    Support-0 classes appear in per_class but not in the macro averages.
    """
    if matrix.total == 0:
        raise DataError("cannot compute metrics from an empty confusion matrix")
    k = matrix.num_classes
    names = list(class_names) if class_names is not None else [str(i) for i in range(k)]
    if len(names) != k:
        raise ValueError("class_names length must match matrix size")

    cells = matrix.cells
    diag = np.diag(cells).astype(np.float64)
    col_sums = cells.sum(axis=0).astype(np.float64)
    row_sums = cells.sum(axis=1).astype(np.float64)

    per_class = []
    macro_p, macro_r, macro_f = [], [], []
    for c in range(k):
        precision = float(diag[c] / col_sums[c]) if col_sums[c] > 0 else 0.0
        recall = float(diag[c] / row_sums[c]) if row_sums[c] > 0 else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
        per_class.append(
            ClassMetrics(
                class_name=names[c],
                precision=precision,
                recall=recall,
                f1=f1,
                support=int(row_sums[c]),
            )
        )
        if row_sums[c] > 0:
            macro_p.append(precision)
            macro_r.append(recall)
            macro_f.append(f1)

    return EvaluationReport(
        accuracy=float(np.trace(cells)) / matrix.total,
        macro_precision=float(np.mean(macro_p)),
        macro_recall=float(np.mean(macro_r)),
        macro_f1=float(np.mean(macro_f)),
        num_samples=matrix.total,
        per_class=tuple(per_class),
    )


def evaluate_model(
    model: ImageClassifier,
    dataset: Dataset,
    batch_size: int = 64,
    class_names: Optional[Sequence[str]] = None,
) -> tuple[EvaluationReport, ConfusionMatrix]:
    """Full-pass inference in evaluation mode; no parameter updates."""
    if len(dataset) == 0:
        raise DataError("cannot evaluate an empty dataset")
    loader = DataLoader(dataset, batch_size=batch_size, shuffle=False)
    model.eval()
    preds: list[int] = []
    labels: list[int] = []
    with torch.no_grad():
        for x, y in loader:
            logits = model(x)
            preds.extend(int(v) for v in logits.argmax(dim=1))
            labels.extend(int(v) for v in y)
    k = model.spec.num_classes
    if labels and (min(labels) < 0 or max(labels) >= k):
        raise DataError(
            f"dataset labels span {min(labels)}..{max(labels)} but the model "
            f"has {k} classes"
        )
    matrix = confusion(preds, labels, k)
    return metrics_from_confusion(matrix, class_names), matrix


def _curve_figure(history, y_train, y_test, ylabel, title) -> Figure:
    epochs = [m.epoch for m in history]
    fig = Figure(figsize=(7, 5))
    FigureCanvasAgg(fig)
    ax = fig.add_subplot(111)
    ax.plot(epochs, y_train, label="train")
    ax.plot(epochs, y_test, label="test")
    if epochs[-1] > epochs[0]:
        ax.set_xlim(epochs[0], epochs[-1])
    ax.set_xlabel("epoch")
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    ax.grid(True, alpha=0.3)
    ax.legend()
    return fig


def write_curves(history: Sequence[EpochMetrics], out_dir: Path | str) -> list[Path]:
    """Loss and accuracy vs epoch, each with train and test series."""
    if not history:
        raise ValueError("history must be nonempty")
    out = Path(out_dir)
    loss_fig = _curve_figure(
        history,
        [m.train_loss for m in history],
        [m.test_loss for m in history],
        "loss",
        "Loss vs epoch",
    )
    acc_fig = _curve_figure(
        history,
        [m.train_accuracy for m in history],
        [m.test_accuracy for m in history],
        "accuracy",
        "Accuracy vs epoch",
    )
    files = []
    for fig, name in ((loss_fig, "loss_curve.png"), (acc_fig, "accuracy_curve.png")):
        fig.savefig(out / name, dpi=120)
        files.append(out / name)
    return files


def emit_artifacts(
    history: Sequence[EpochMetrics],
    report: EvaluationReport,
    out_dir: Path | str,
    matrix: Optional[ConfusionMatrix] = None,
    class_names: Optional[Sequence[str]] = None,
) -> list[Path]:
    """Write the full artifact set for a run into ``out_dir``.

    metrics.csv, report.json, confusion.csv (when a matrix is given), and
    the two train/test curve images (loss and accuracy vs epoch).
    """
    if not history:
        raise ValueError("history must be nonempty")
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write_probe"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise DataError(f"output directory not writable: {out}: {exc}") from exc

    files = [
        write_metrics_csv(history, out / "metrics.csv"),
        report.save(out / "report.json"),
    ]
    if matrix is not None:
        names = list(class_names) if class_names is not None else [
            str(i) for i in range(matrix.num_classes)
        ]
        files.append(matrix.save_csv(out / "confusion.csv", names))
    files.extend(write_curves(history, out))
    return files
