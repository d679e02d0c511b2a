"""
Speaker state encoder.

Walks a dialogue left to right and gives every utterance a speaker state
``v_i`` (a ``1 x h`` row):

* a speaker's first turn copies its context vector, ``v_i = h_i``;
* otherwise ``v_i = tanh(v_intra + v_inter)`` where

  - ``v_intra`` attends over the whole prefix ``h_1 .. h_i`` with a query
    built from the speaker's previous state and ``h_i``;
  - ``v_inter`` attends over the states ``v_j`` of the local window
    ``psi(u_i) <= j < i`` (all speakers) with a query built from ``h_i``.

Attention scores are ``w . (q * key) + b`` per key with one shared scorer row
``w``, unscaled. Either branch can be switched off; with both off the encoder
is bypassed and ``V = H``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .data import Conversation
from .layers import Bound
from .tensor import (
    ShapeError,
    Tensor,
    add,
    concat,
    glorot_uniform,
    linear,
    matmul,
    mul,
    rows,
    softmax,
    take_row,
    tanh,
    transpose,
)


@dataclass(frozen=True)
class SseAblation:
    use_intra: bool = True
    use_inter: bool = True

    @property
    def enabled(self) -> bool:
        return self.use_intra or self.use_inter


@dataclass
class SpeakerStateSeq:
    V: Tensor
    first_of_speaker: tuple[bool, ...]
    states: list[Tensor] = field(repr=False, default_factory=list)
    alpha_intra: list[Optional[np.ndarray]] = field(repr=False, default_factory=list)
    alpha_inter: list[Optional[np.ndarray]] = field(repr=False, default_factory=list)


def init_sse_params(rng: np.random.Generator, hidden: int, ablation: SseAblation) -> dict[str, np.ndarray]:
    h = hidden
    out = {}
    if ablation.use_intra:
        out["sse.W_q_intra"] = glorot_uniform(rng, h, 2 * h)
        out["sse.b_q_intra"] = np.zeros(h)
        out["sse.W_1"] = glorot_uniform(rng, 1, h)
        out["sse.b_1"] = np.zeros(1)
    if ablation.use_inter:
        out["sse.W_q_inter"] = glorot_uniform(rng, h, h)
        out["sse.b_q_inter"] = np.zeros(h)
        out["sse.W_2"] = glorot_uniform(rng, 1, h)
        out["sse.b_2"] = np.zeros(1)
    return out


def _attend(query: Tensor, scorer: Tensor, bias: Tensor, keys: Tensor) -> tuple[Tensor, Tensor]:
    # w . (q * k_j) for every key row at once: (q * w) @ K^T
    scores = add(matmul(mul(query, scorer), transpose(keys)), bias)
    alpha = softmax(scores)
    return matmul(alpha, keys), alpha


def intra_state(i: int, psi_i: Optional[int], states: list[Tensor], H: Tensor, P: Bound) -> tuple[Tensor, Tensor]:
    """Intra-speaker state for 1-based position ``i``; returns ``(v_intra, alpha)``."""
    if psi_i is None:
        raise ValueError(f"utterance {i} is its speaker's first turn; use v_i = h_i")
    h_i = take_row(H, i - 1)
    q = linear(concat([states[psi_i - 1], h_i], axis=1), P["sse.W_q_intra"], P["sse.b_q_intra"])
    return _attend(q, P["sse.W_1"], P["sse.b_1"], rows(H, 0, i))


def inter_state(i: int, psi_i: Optional[int], states: list[Tensor], H: Tensor, P: Bound) -> tuple[Tensor, Tensor]:
    """Inter-speaker state for 1-based position ``i``; returns ``(v_inter, alpha)``."""
    if psi_i is None:
        raise ValueError(f"utterance {i} is its speaker's first turn; use v_i = h_i")
    keys = states[psi_i - 1 : i - 1]
    if not keys:
        raise ValueError(f"empty local window at utterance {i}")
    q = linear(take_row(H, i - 1), P["sse.W_q_inter"], P["sse.b_q_inter"])
    return _attend(q, P["sse.W_2"], P["sse.b_2"], concat(keys, axis=0))


def fuse(v_intra: Optional[Tensor], v_inter: Optional[Tensor]) -> Tensor:
    """``tanh`` of the sum of whichever branches are present."""
    parts = [v for v in (v_intra, v_inter) if v is not None]
    if not parts:
        raise ValueError("fuse needs at least one branch")
    if len(parts) == 2:
        if v_intra.shape != v_inter.shape:
            raise ShapeError(f"fuse: {v_intra.shape} vs {v_inter.shape}")
        return tanh(add(v_intra, v_inter))
    return tanh(parts[0])


def run_sse(H: Tensor, conv: Conversation, P: Bound, ablation: SseAblation = SseAblation()) -> SpeakerStateSeq:
    n = H.shape[0]
    if n != len(conv):
        raise ShapeError(f"H has {n} rows but dialogue {conv.id} has {len(conv)} utterances")
    first = tuple(p is None for p in conv.psi)
    if not ablation.enabled:
        states = [take_row(H, i) for i in range(n)]
        return SpeakerStateSeq(H, first, states, [None] * n, [None] * n)
    states: list[Tensor] = []
    a_intra: list[Optional[np.ndarray]] = []
    a_inter: list[Optional[np.ndarray]] = []
    for i in range(1, n + 1):
        psi_i = conv.psi[i - 1]
        if psi_i is None:
            states.append(take_row(H, i - 1))
            a_intra.append(None)
            a_inter.append(None)
            continue
        v_intra = v_inter = None
        w_intra = w_inter = None
        if ablation.use_intra:
            v_intra, w_intra = intra_state(i, psi_i, states, H, P)
        if ablation.use_inter:
            v_inter, w_inter = inter_state(i, psi_i, states, H, P)
        states.append(fuse(v_intra, v_inter))
        a_intra.append(None if w_intra is None else w_intra.data.reshape(-1).copy())
        a_inter.append(None if w_inter is None else w_inter.data.reshape(-1).copy())
    return SpeakerStateSeq(concat(states, axis=0), first, states, a_intra, a_inter)
