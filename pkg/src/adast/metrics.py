"""Confusion matrix, accuracy and macro-F1."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .errors import AdastError, LabelError


class EmptyEvaluationError(AdastError, ValueError):
    exit_code = 3


@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # [K, K], rows = true class, cols = predicted

    @classmethod
    def from_labels(cls, y_true, y_pred, n_classes: int) -> "ConfusionMatrix":
        y_true = np.asarray(y_true, dtype=np.int64)
        y_pred = np.asarray(y_pred, dtype=np.int64)
        for arr in (y_true, y_pred):
            if arr.size and (arr.min() < 0 or arr.max() >= n_classes):
                raise LabelError(f"labels must lie in 0..{n_classes - 1}")
        counts = np.zeros((n_classes, n_classes), dtype=np.int64)
        np.add.at(counts, (y_true, y_pred), 1)
        return cls(counts)

    @property
    def n_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def tp(self) -> np.ndarray:
        return np.diag(self.counts)

    def fp(self) -> np.ndarray:
        return self.counts.sum(axis=0) - self.tp()

    def fn(self) -> np.ndarray:
        return self.counts.sum(axis=1) - self.tp()

    def per_class(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Precision, recall and F1 per class; 0/0 is scored as 0."""
        tp, fp, fn = self.tp().astype(float), self.fp(), self.fn()
        with np.errstate(divide="ignore", invalid="ignore"):
            precision = np.where(tp + fp > 0, tp / (tp + fp), 0.0)
            recall = np.where(tp + fn > 0, tp / (tp + fn), 0.0)
            denom = precision + recall
            f1 = np.where(denom > 0, 2 * precision * recall / denom, 0.0)
        return precision, recall, f1


def _require_samples(cm: ConfusionMatrix) -> None:
    if cm.total == 0:
        raise EmptyEvaluationError("cannot score an empty evaluation (M = 0)")


def accuracy(cm: ConfusionMatrix) -> float:
    _require_samples(cm)
    return float(np.trace(cm.counts)) / cm.total


def macro_f1(cm: ConfusionMatrix) -> float:
    _require_samples(cm)
    return float(cm.per_class()[2].mean())


STAGE_NAMES = ("W", "N1", "N2", "N3", "REM")


def class_names(k: int) -> list[str]:
    return list(STAGE_NAMES) if k == len(STAGE_NAMES) else [str(i) for i in range(k)]


def report_text(cm: ConfusionMatrix, title: str = "") -> str:
    precision, recall, f1 = cm.per_class()
    lines = [title] if title else []
    lines.append(f"{'class':>6} {'prec':>7} {'recall':>7} {'f1':>7} {'support':>8}")
    support = cm.counts.sum(axis=1)
    for name, p, r, f, s in zip(class_names(cm.n_classes), precision, recall, f1, support):
        lines.append(f"{name:>6} {p:7.4f} {r:7.4f} {f:7.4f} {int(s):8d}")
    lines.append(f"ACC {accuracy(cm):.4f}  MF1 {macro_f1(cm):.4f}  (M={cm.total})")
    return "\n".join(lines)


def report_csv(cm: ConfusionMatrix) -> str:
    precision, recall, f1 = cm.per_class()
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["class", "precision", "recall", "f1", "support"])
    for name, p, r, f, s in zip(class_names(cm.n_classes), precision, recall, f1, cm.counts.sum(axis=1)):
        w.writerow([name, repr(float(p)), repr(float(r)), repr(float(f)), int(s)])
    w.writerow(["acc", repr(accuracy(cm)), "", "", cm.total])
    w.writerow(["mf1", repr(macro_f1(cm)), "", "", cm.total])
    return buf.getvalue()


def evaluate(model, ds, split: str, route: str = "target", batch_size: int = 256):
    """(acc, mf1, cm) of the averaged classifier output on ``split``.

    ``route`` picks the attention path; batch norm runs in eval mode.
    """
    from .data import UNLABELED, batches
    from .tensor import Tensor, no_grad

    idx = ds.split_indices(split)
    if np.any(ds.stages[idx] == UNLABELED):
        raise LabelError(f"split {split!r} of {ds.domain_name or 'dataset'} is unlabeled")
    forward = model.forward_target if route == "target" else model.forward_source
    was_training = model.training
    model.eval()
    y_true, y_pred = [], []
    with no_grad():
        for x, y in batches(ds, split, batch_size, 0, 0, shuffle=False):
            _, p = forward(Tensor(x))
            y_true.append(y)
            y_pred.append(np.argmax(p.data, axis=1))
    model.train(was_training)
    cm = ConfusionMatrix.from_labels(
        np.concatenate(y_true) if y_true else np.zeros(0, np.int64),
        np.concatenate(y_pred) if y_pred else np.zeros(0, np.int64),
        ds.n_classes,
    )
    return accuracy(cm), macro_f1(cm), cm
