"""
Speaker-guided emotion decoder.

Per utterance, in dialogue order::

    m_i = relu(v_i * (W_m h_i + b_m))                 match
    o_i = GRU([m_i || e_{i-1}], o_{i-1})              recurrent step
    z_i = relu(W_o [h_i || o_i] + b_o)
    P_i = softmax(W_z z_i + b_z)
    y_i = argmax P_i  (lowest index wins ties)
    e_i = E[y_i]

``o_0`` and ``e_0`` are zero vectors. The *predicted* label feeds the next
step during training as well as inference; gradients reach ``E`` through the
looked-up row, not through the argmax.

With the decoder switched off (``use_sgd=False``) the head predicts directly
from ``[h_i || v_i]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .layers import Bound, gru_cell, gru_init
from .tensor import (
    ShapeError,
    Tensor,
    concat,
    embedding_lookup,
    glorot_uniform,
    linear,
    mul,
    relu,
    softmax,
    take_row,
)


def init_decoder_params(
    rng: np.random.Generator, hidden: int, label_dim: int, n_labels: int, use_sgd: bool = True
) -> dict[str, np.ndarray]:
    h = hidden
    out = {}
    if use_sgd:
        out["dec.W_m"] = glorot_uniform(rng, h, h)
        out["dec.b_m"] = np.zeros(h)
        out.update(gru_init(rng, "dec.gru", h + label_dim, h))
        out["dec.E"] = glorot_uniform(rng, n_labels, label_dim)
    out["dec.W_o"] = glorot_uniform(rng, h, 2 * h)
    out["dec.b_o"] = np.zeros(h)
    out["dec.W_z"] = glorot_uniform(rng, n_labels, h)
    out["dec.b_z"] = np.zeros(n_labels)
    return out


@dataclass
class DecodeTrace:
    probs: list[Tensor] = field(default_factory=list)
    predictions: list[int] = field(default_factory=list)
    match: list[Tensor] = field(default_factory=list, repr=False)
    hidden: list[Tensor] = field(default_factory=list, repr=False)
    features: list[Tensor] = field(default_factory=list, repr=False)
    embeddings: list[Tensor] = field(default_factory=list, repr=False)

    @property
    def prob_matrix(self) -> np.ndarray:
        return np.concatenate([p.data for p in self.probs], axis=0)

    def to_json(self, vocab=None) -> list[dict]:
        out = []
        for i, (p, y) in enumerate(zip(self.probs, self.predictions), start=1):
            row = {"index": i, "probs": p.data.reshape(-1).tolist(), "pred": y}
            if vocab is not None:
                row["pred_label"] = vocab[y]
            out.append(row)
        return out


def match(v_i: Tensor, h_i: Tensor, P: Bound) -> Tensor:
    if v_i.shape != h_i.shape:
        raise ShapeError(f"match: speaker state {v_i.shape} vs utterance {h_i.shape}")
    return relu(mul(v_i, linear(h_i, P["dec.W_m"], P["dec.b_m"])))


def gru_step(m_i: Tensor, e_prev: Tensor, o_prev: Tensor, P: Bound) -> Tensor:
    if m_i.shape != o_prev.shape or e_prev.shape[0] != 1:
        raise ShapeError(f"gru_step: match {m_i.shape}, embedding {e_prev.shape}, state {o_prev.shape}")
    return gru_cell(concat([m_i, e_prev], axis=1), o_prev, P, "dec.gru")


def predict(h_i: Tensor, o_i: Tensor, P: Bound) -> tuple[Tensor, int, Tensor, Optional[Tensor]]:
    """Returns ``(P_i, y_i, z_i, e_i)``; ``e_i`` is ``None`` without an embedding table."""
    z = relu(linear(concat([h_i, o_i], axis=1), P["dec.W_o"], P["dec.b_o"]))
    probs = softmax(linear(z, P["dec.W_z"], P["dec.b_z"]))
    y = int(np.argmax(probs.data[0]))
    e = embedding_lookup(P["dec.E"], y) if "dec.E" in P else None
    return probs, y, z, e


def decode_dialogue(H: Tensor, states: list[Tensor], P: Bound, use_sgd: bool = True) -> DecodeTrace:
    n, h = H.shape
    if len(states) != n:
        raise ShapeError(f"decode: {n} utterance rows but {len(states)} speaker states")
    trace = DecodeTrace()
    if use_sgd:
        o = Tensor(np.zeros((1, h)))
        e = Tensor(np.zeros((1, P["dec.E"].shape[1])))
    for i in range(n):
        h_i = take_row(H, i)
        if use_sgd:
            m = match(states[i], h_i, P)
            o = gru_step(m, e, o, P)
            probs, y, z, e = predict(h_i, o, P)
            trace.match.append(m)
            trace.hidden.append(o)
            trace.embeddings.append(e)
        else:
            probs, y, z, _ = predict(h_i, states[i], P)
        trace.probs.append(probs)
        trace.predictions.append(y)
        trace.features.append(z)
    return trace
