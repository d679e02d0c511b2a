"""Classification metrics: confusion matrix, per-class P/R/F1, weighted F1."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np


def confusion_matrix(gold: Sequence[int], pred: Sequence[int], n_labels: int) -> np.ndarray:
    """Rows are gold labels, columns predictions."""
    cm = np.zeros((n_labels, n_labels), dtype=np.int64)
    np.add.at(cm, (np.asarray(gold, dtype=np.int64), np.asarray(pred, dtype=np.int64)), 1)
    return cm


def per_class_scores(cm: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Precision, recall, F1 and support per class; 0 wherever a ratio is 0/0."""
    tp = np.diag(cm).astype(np.float64)
    predicted = cm.sum(axis=0).astype(np.float64)
    support = cm.sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        precision = np.where(predicted > 0, tp / predicted, 0.0)
        recall = np.where(support > 0, tp / support, 0.0)
        denom = precision + recall
        f1 = np.where(denom > 0, 2 * precision * recall / denom, 0.0)
    return precision, recall, f1, support


def weighted_f1(gold: Sequence[int], pred: Sequence[int], n_labels: int) -> float:
    """Support-weighted mean of per-class F1."""
    cm = confusion_matrix(gold, pred, n_labels)
    _, _, f1, support = per_class_scores(cm)
    n = support.sum()
    return float((support * f1).sum() / n) if n else 0.0


@dataclass
class ClassScores:
    precision: float
    recall: float
    f1: float
    support: int


@dataclass
class EvalReport:
    weighted_f1: float
    accuracy: float
    per_class: dict[str, ClassScores]
    confusion_matrix: list[list[int]]
    f1_by_speaker_count: dict[int, float] = field(default_factory=dict)
    n_utterances: int = 0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["f1_by_speaker_count"] = {str(k): v for k, v in sorted(self.f1_by_speaker_count.items())}
        return d

    def summary(self) -> str:
        lines = [f"weighted F1 {self.weighted_f1:.4f}  accuracy {self.accuracy:.4f}  ({self.n_utterances} utterances)"]
        for name, s in self.per_class.items():
            lines.append(f"  {name:<12s} P={s.precision:.3f} R={s.recall:.3f} F1={s.f1:.3f} n={s.support}")
        for k, v in sorted(self.f1_by_speaker_count.items()):
            lines.append(f"  speakers={k:<3d} weighted F1={v:.4f}")
        return "\n".join(lines)


def build_report(
    gold: Sequence[int], pred: Sequence[int], vocab: Sequence[str], speaker_counts: Sequence[int] = ()
) -> EvalReport:
    """``speaker_counts`` gives, per utterance, the speaker count of its dialogue."""
    L = len(vocab)
    cm = confusion_matrix(gold, pred, L)
    precision, recall, f1, support = per_class_scores(cm)
    n = int(support.sum())
    per_class = {
        name: ClassScores(float(precision[k]), float(recall[k]), float(f1[k]), int(support[k]))
        for k, name in enumerate(vocab)
    }
    by_count = {}
    if len(speaker_counts):
        g, p, s = (np.asarray(a) for a in (gold, pred, speaker_counts))
        for k in np.unique(s):
            sel = s == k
            by_count[int(k)] = weighted_f1(g[sel], p[sel], L)
    return EvalReport(
        weighted_f1=float((support * f1).sum() / n) if n else 0.0,
        accuracy=float(np.trace(cm) / n) if n else 0.0,
        per_class=per_class,
        confusion_matrix=cm.tolist(),
        f1_by_speaker_count=by_count,
        n_utterances=n,
    )
