"""End-to-end gradient check of the full model (encoder, speaker states, decoder, loss)."""

from __future__ import annotations

from dataclasses import dataclass

from .data import Conversation, Dataset, SyntheticSpec, generate_synthetic
from .encoders import ENCODER_KINDS
from .model import ModelConfig, SGEDModel
from .tensor import GradCheckReport, finite_diff_check


@dataclass(frozen=True)
class GradCheckCase:
    encoder: str
    seed: int
    report: GradCheckReport


def probe_dialogues(seed: int, feature_dim: int = 4, n_labels: int = 3, length: int = 4) -> Dataset:
    """One alternating two-speaker dialogue; turns 3 onward reach both attention branches."""
    spec = SyntheticSpec(
        n_dialogues=1,
        length_range=(length, length),
        n_speakers_range=(2, 2),
        n_labels=n_labels,
        feature_dim=feature_dim,
        seed=seed,
    )
    return generate_synthetic(spec)


def check_model(model: SGEDModel, convs: list[Conversation], step: float = 1e-5, tol: float = 1e-6) -> GradCheckReport:
    return finite_diff_check(lambda tape: model.batch_loss(convs, tape), model.params.values(), step, tol)


def run_gradcheck(
    hidden: int = 8,
    seeds: tuple[int, ...] = (0, 1, 2),
    encoders: tuple[str, ...] = ENCODER_KINDS,
    label_dim: int = 4,
    tol: float = 1e-6,
) -> list[GradCheckCase]:
    cases = []
    for name in encoders:
        for seed in seeds:
            data = probe_dialogues(seed)
            cfg = ModelConfig(encoder=name, hidden=hidden, label_dim=label_dim)
            model = SGEDModel(cfg, data.feature_dim, data.label_vocab, seed=seed)
            cases.append(GradCheckCase(name, seed, check_model(model, list(data.conversations), tol=tol)))
    return cases
