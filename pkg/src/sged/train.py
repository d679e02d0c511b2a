"""Training loop, Adam, evaluation and the ablation harness."""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .data import Dataset
from .metrics import EvalReport, build_report, weighted_f1
from .model import ModelConfig, SGEDModel
from .tensor import NonFiniteError, Parameter, Tape, make_rng

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


class VocabMismatchError(ValueError):
    def __init__(self, data_vocab: Sequence[str], model_vocab: Sequence[str]):
        self.data_vocab, self.model_vocab = tuple(data_vocab), tuple(model_vocab)
        super().__init__(
            f"label vocabulary mismatch: data has [{', '.join(data_vocab)}], "
            f"checkpoint has [{', '.join(model_vocab)}]"
        )


# ---------------------------------------------------------------------------
# optimiser


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: Sequence[Parameter], state: AdamState, lr: float) -> None:
    """One bias-corrected Adam update, in place, from each ``param.grad``."""
    for p in params:
        if p.grad is None:
            raise TrainingError(f"{p.name} has no gradient; run backward first")
        if not np.all(np.isfinite(p.grad)):
            bad = int(np.size(p.grad) - np.isfinite(p.grad).sum())
            raise NonFiniteError(f"{p.name}: {bad} non-finite gradient entries at Adam step {state.t + 1}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1, c2 = 1.0 - b1**state.t, 1.0 - b2**state.t
    for p in params:
        g = p.grad
        m = state.m.get(p.name)
        if m is None:
            m = state.m[p.name] = np.zeros_like(g)
            state.v[p.name] = np.zeros_like(g)
        v = state.v[p.name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.value.data -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


# ---------------------------------------------------------------------------
# training


@dataclass(frozen=True)
class TrainConfig:
    model: ModelConfig = ModelConfig()
    learning_rate: float = 1e-4
    batch_size: int = 16
    epochs: int = 60
    seed: int = 0
    seeds_for_average: int = 5
    normalize_loss: bool = True

    def __post_init__(self):
        if self.learning_rate < 0 or not math.isfinite(self.learning_rate):
            raise ValueError(f"learning rate must be finite and >= 0, got {self.learning_rate}")
        if self.batch_size < 1 or self.epochs < 0 or self.seeds_for_average < 1:
            raise ValueError("batch_size and seeds_for_average must be >= 1, epochs >= 0")


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    val_wf1: float


@dataclass
class TrainResult:
    model: SGEDModel
    history: list[EpochLog]
    best_epoch: int
    best_val_wf1: float

    def log_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_wf1"])
        for row in self.history:
            w.writerow([row.epoch, repr(row.train_loss), repr(row.val_wf1)])
        return buf.getvalue()


def dataset_predictions(model: SGEDModel, dataset: Dataset) -> tuple[list[int], list[int]]:
    gold, pred = [], []
    for conv in dataset.conversations:
        gold.extend(conv.labels)
        pred.extend(model.predict(conv))
    return gold, pred


def train(
    train_set: Dataset,
    val_set: Optional[Dataset],
    config: TrainConfig,
    on_epoch: Optional[Callable[[EpochLog], None]] = None,
) -> TrainResult:
    """Minibatch Adam over dialogues; keeps the parameters with the best validation weighted F1.

    Without a validation set, selection falls back to training-set weighted F1.
    """
    model = SGEDModel(config.model, train_set.feature_dim, train_set.label_vocab, seed=config.seed)
    if val_set is not None and tuple(val_set.label_vocab) != model.label_vocab:
        raise VocabMismatchError(val_set.label_vocab, model.label_vocab)
    params = list(model.params.values())
    opt = AdamState()
    shuffler = make_rng([config.seed, 1])
    convs = train_set.conversations
    select_on = val_set if val_set is not None else train_set
    best = (-1.0, 0, model.state_dict())
    history = []
    for epoch in range(1, config.epochs + 1):
        order = shuffler.permutation(len(convs))
        nll_sum, n_utts = 0.0, 0
        for step, start in enumerate(range(0, len(order), config.batch_size), start=1):
            batch = [convs[k] for k in order[start : start + config.batch_size]]
            tape = Tape()
            loss = model.batch_loss(batch, tape, normalize=config.normalize_loss)
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingError(f"non-finite loss at epoch {epoch}, step {step}")
            tape.backward(loss)
            adam_step(params, opt, config.learning_rate)
            count = sum(len(c) for c in batch)
            nll_sum += value * count if config.normalize_loss else value
            n_utts += count
        gold, pred = dataset_predictions(model, select_on)
        row = EpochLog(epoch, nll_sum / n_utts, weighted_f1(gold, pred, model.n_labels))
        history.append(row)
        if row.val_wf1 > best[0]:
            best = (row.val_wf1, epoch, model.state_dict())
        log.info("epoch %d loss %.4f val_wf1 %.4f", epoch, row.train_loss, row.val_wf1)
        if on_epoch is not None:
            on_epoch(row)
    if history:
        model.load_state_dict(best[2])
    return TrainResult(model, history, best[1], max(best[0], 0.0))


def evaluate(dataset: Dataset, model: SGEDModel) -> EvalReport:
    if tuple(dataset.label_vocab) != model.label_vocab:
        raise VocabMismatchError(dataset.label_vocab, model.label_vocab)
    gold, pred, counts = [], [], []
    for conv in dataset.conversations:
        gold.extend(conv.labels)
        pred.extend(model.predict(conv))
        counts.extend([conv.n_speakers] * len(conv))
    return build_report(gold, pred, dataset.label_vocab, counts)


# ---------------------------------------------------------------------------
# ablations

ABLATIONS: dict[str, dict] = {
    "SGED": {},
    "w/o SSE - intra-speaker": {"use_intra": False},
    "w/o SSE - inter-speaker": {"use_inter": False},
    "w/o SSE": {"use_intra": False, "use_inter": False},
    "w/o SGD": {"use_sgd": False},
    "w/o SSE + SGD": {"use_intra": False, "use_inter": False, "use_sgd": False},
}


@dataclass
class AblationRow:
    name: str
    seed_scores: list[float]
    reports: list[EvalReport] = field(repr=False, default_factory=list)

    @property
    def mean(self) -> float:
        return float(np.mean(self.seed_scores))

    @property
    def std(self) -> float:
        return float(np.std(self.seed_scores))


@dataclass
class AblationTable:
    rows: list[AblationRow]
    seeds: list[int]

    def row(self, name: str) -> AblationRow:
        for r in self.rows:
            if r.name == name:
                return r
        raise KeyError(name)

    def to_text(self) -> str:
        base = self.rows[0].mean
        width = max(len(r.name) for r in self.rows)
        lines = [f"{'variant':<{width}s}  {'wF1':>7s}  {'delta':>7s}  {'std':>6s}  seeds={self.seeds}"]
        for r in self.rows:
            delta = "" if r is self.rows[0] else f"{100 * (r.mean - base):+.2f}"
            lines.append(f"{r.name:<{width}s}  {100 * r.mean:7.2f}  {delta:>7s}  {100 * r.std:6.2f}")
        return "\n".join(lines)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["variant", "mean_wf1", "std_wf1"] + [f"seed_{s}" for s in self.seeds])
        for r in self.rows:
            w.writerow([r.name, repr(r.mean), repr(r.std)] + [repr(x) for x in r.seed_scores])
        return buf.getvalue()


def run_ablation_suite(
    train_set: Dataset,
    val_set: Optional[Dataset],
    test_set: Dataset,
    config: TrainConfig,
    seeds: Optional[Sequence[int]] = None,
    variants: Optional[Sequence[str]] = None,
) -> AblationTable:
    """Train and test every ablation variant under the same seeds.

    Variants toggle the speaker state branches and the decoder on top of
    ``config.model``; the encoder and all training settings stay fixed.
    """
    seeds = list(seeds) if seeds is not None else [config.seed + k for k in range(config.seeds_for_average)]
    names = list(variants) if variants is not None else list(ABLATIONS)
    rows = []
    for name in names:
        model_cfg = replace(config.model, **{"use_intra": True, "use_inter": True, "use_sgd": True, **ABLATIONS[name]})
        scores, reports = [], []
        for seed in seeds:
            result = train(train_set, val_set, replace(config, model=model_cfg, seed=seed))
            report = evaluate(test_set, result.model)
            scores.append(report.weighted_f1)
            reports.append(report)
            log.info("%s seed %d test wF1 %.4f", name, seed, report.weighted_f1)
        rows.append(AblationRow(name, scores, reports))
    return AblationTable(rows, seeds)
