"""Full model: context encoder -> speaker state encoder -> decoder."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .data import Conversation
from .decoder import DecodeTrace, decode_dialogue, init_decoder_params
from .encoders import EncodedDialogue, EncoderKind, encode, init_encoder_params
from .layers import bind
from .sse import SpeakerStateSeq, SseAblation, init_sse_params, run_sse
from .tensor import Parameter, Tape, Tensor, add, log, make_rng, pick, scale


@dataclass(frozen=True)
class ModelConfig:
    encoder: str = "dag_lite"
    hidden: int = 300
    dag_window: int = 2
    label_dim: int = 100
    use_intra: bool = True
    use_inter: bool = True
    use_sgd: bool = True

    def __post_init__(self):
        EncoderKind(self.encoder, self.dag_window)
        if self.hidden < 1 or self.label_dim < 1:
            raise ValueError("hidden and label_dim must be positive")

    @property
    def encoder_kind(self) -> EncoderKind:
        return EncoderKind(self.encoder, self.dag_window)

    @property
    def ablation(self) -> SseAblation:
        return SseAblation(self.use_intra, self.use_inter)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Forward:
    encoded: EncodedDialogue
    states: SpeakerStateSeq
    trace: DecodeTrace


class SGEDModel:
    """Parameters plus the forward pass.

    ``params`` maps stable names (``enc.*``, ``sse.*``, ``dec.*``) to
    :class:`Parameter`; only the parameters the configured variant uses exist.
    """

    def __init__(self, config: ModelConfig, feature_dim: int, label_vocab: Sequence[str], seed: int = 0):
        self.config = config
        self.feature_dim = feature_dim
        self.label_vocab = tuple(label_vocab)
        rng = make_rng([seed, 0])
        raw = {}
        raw.update(init_encoder_params(rng, config.encoder_kind, feature_dim, config.hidden))
        raw.update(init_sse_params(rng, config.hidden, config.ablation))
        raw.update(init_decoder_params(rng, config.hidden, config.label_dim, len(self.label_vocab), config.use_sgd))
        self.params = {name: Parameter(name, Tensor(v)) for name, v in raw.items()}

    @property
    def n_labels(self) -> int:
        return len(self.label_vocab)

    def n_parameters(self) -> int:
        return sum(p.value.data.size for p in self.params.values())

    def forward(self, conv: Conversation, tape: Optional[Tape] = None) -> Forward:
        P = bind(self.params, tape)
        enc = encode(conv, self.config.encoder_kind, P)
        states = run_sse(enc.H, conv, P, self.config.ablation)
        trace = decode_dialogue(enc.H, states.states, P, self.config.use_sgd)
        return Forward(enc, states, trace)

    def predict(self, conv: Conversation) -> list[int]:
        return self.forward(conv).trace.predictions

    def batch_loss(self, convs: Iterable[Conversation], tape: Optional[Tape] = None, normalize: bool = True) -> Tensor:
        """Summed (or per-utterance mean) cross-entropy over a batch of dialogues."""
        terms, count = [], 0
        for conv in convs:
            fwd = self.forward(conv, tape)
            terms.append(cross_entropy_loss(fwd.trace.probs, conv.labels, normalize=False))
            count += len(conv)
        loss = terms[0]
        for t in terms[1:]:
            loss = add(loss, t)
        return scale(loss, 1.0 / count) if normalize else loss

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.value.data.copy() for name, p in self.params.items()}

    def load_state_dict(self, values: dict[str, np.ndarray]) -> None:
        if set(values) != set(self.params):
            missing = sorted(set(self.params) - set(values))
            extra = sorted(set(values) - set(self.params))
            raise KeyError(f"parameter mismatch: missing {missing}, unexpected {extra}")
        for name, v in values.items():
            p = self.params[name]
            if v.shape != p.value.shape:
                raise ValueError(f"{name}: shape {v.shape} != {p.value.shape}")
            p.value.data[...] = v


def cross_entropy_loss(probs: Sequence[Tensor], gold: Sequence[int], normalize: bool = True, floor: float = 1e-12) -> Tensor:
    """``-sum_t log P_t[y_t]``, divided by the number of utterances when ``normalize``."""
    if len(probs) != len(gold) or not probs:
        raise ValueError(f"{len(probs)} distributions for {len(gold)} gold labels")
    loss = None
    for p, y in zip(probs, gold):
        L = p.shape[-1]
        if not 0 <= y < L:
            raise IndexError(f"gold label {y} out of range for {L} classes")
        term = log(pick(p, 0, y), floor)
        loss = term if loss is None else add(loss, term)
    return scale(loss, -1.0 / len(gold) if normalize else -1.0)
