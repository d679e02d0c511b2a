"""
Conversational context encoders: features of a dialogue in, ``N x h`` out.

Three interchangeable kinds, all cheap stand-ins for published encoders:

``ffn_passthrough``
    ``h_i = relu(W_f x_i + b_f)`` per utterance, no cross-utterance flow.
``birnn_attn``
    Input projection, a forward and a backward GRU over the utterances, then
    scaled dot-product self-attention over the concatenated states. Every
    ``h_i`` sees the whole dialogue (not causal).
``dag_lite``
    A single causal DAG layer. Utterance ``i`` attends over its previous
    ``min(i-1, w)`` utterances; each predecessor is projected by one of two
    relation matrices depending on whether it shares ``u_i``'s speaker. The
    aggregate is gated against the utterance's own projection.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import Conversation
from .layers import Bound, gru_cell, gru_init
from .tensor import (
    Tensor,
    add,
    concat,
    glorot_uniform,
    linear,
    matmul,
    mul,
    relu,
    scale,
    sigmoid,
    softmax,
    take_row,
    transpose,
)

ENCODER_KINDS = ("ffn_passthrough", "birnn_attn", "dag_lite")


@dataclass(frozen=True)
class EncoderKind:
    name: str = "dag_lite"
    window: int = 2

    def __post_init__(self):
        if self.name not in ENCODER_KINDS:
            raise ValueError(f"unknown encoder kind {self.name!r}; choose from {', '.join(ENCODER_KINDS)}")
        if self.window < 1:
            raise ValueError(f"dag_lite window must be >= 1, got {self.window}")


@dataclass
class EncodedDialogue:
    H: Tensor

    @property
    def n(self) -> int:
        return self.H.shape[0]


def init_encoder_params(rng: np.random.Generator, kind: EncoderKind, feature_dim: int, hidden: int) -> dict[str, np.ndarray]:
    h, d = hidden, feature_dim
    if kind.name == "ffn_passthrough":
        return {"enc.W_f": glorot_uniform(rng, h, d), "enc.b_f": np.zeros(h)}
    if kind.name == "birnn_attn":
        out = {"enc.W_in": glorot_uniform(rng, h, d), "enc.b_in": np.zeros(h)}
        out.update(gru_init(rng, "enc.fwd", h, h))
        out.update(gru_init(rng, "enc.bwd", h, h))
        out["enc.W_out"] = glorot_uniform(rng, h, 4 * h)
        out["enc.b_out"] = np.zeros(h)
        return out
    return {
        "enc.W_in": glorot_uniform(rng, h, d),
        "enc.b_in": np.zeros(h),
        "enc.R_same": glorot_uniform(rng, h, h),
        "enc.R_diff": glorot_uniform(rng, h, h),
        "enc.W_g": glorot_uniform(rng, h, 2 * h),
        "enc.b_g": np.zeros(h),
    }


def encode(conv: Conversation, kind: EncoderKind, P: Bound) -> EncodedDialogue:
    X = Tensor(conv.feature_matrix)
    w_in = P["enc.W_f"] if kind.name == "ffn_passthrough" else P["enc.W_in"]
    if X.shape[1] != w_in.shape[1]:
        raise ValueError(f"dialogue {conv.id} has feature_dim {X.shape[1]}, encoder expects {w_in.shape[1]}")
    if kind.name == "ffn_passthrough":
        return EncodedDialogue(relu(linear(X, P["enc.W_f"], P["enc.b_f"])))
    if kind.name == "birnn_attn":
        return EncodedDialogue(_birnn_attn(X, P))
    return EncodedDialogue(_dag_lite(conv, X, P, kind.window))


def _birnn_attn(X: Tensor, P: Bound) -> Tensor:
    proj = linear(X, P["enc.W_in"], P["enc.b_in"])
    n, h = proj.shape
    zero = Tensor(np.zeros((1, h)))
    fwd, state = [], zero
    for i in range(n):
        state = gru_cell(take_row(proj, i), state, P, "enc.fwd")
        fwd.append(state)
    bwd, state = [None] * n, zero
    for i in reversed(range(n)):
        state = gru_cell(take_row(proj, i), state, P, "enc.bwd")
        bwd[i] = state
    G = concat([concat(fwd, axis=0), concat(bwd, axis=0)], axis=1)
    attn = softmax(scale(matmul(G, transpose(G)), 1.0 / math.sqrt(G.shape[1])))
    ctx = matmul(attn, G)
    return relu(linear(concat([G, ctx], axis=1), P["enc.W_out"], P["enc.b_out"]))


def dag_predecessors(n: int, window: int) -> list[range]:
    """0-based predecessor positions for each utterance."""
    return [range(max(0, i - window), i) for i in range(n)]


def _dag_lite(conv: Conversation, X: Tensor, P: Bound, window: int) -> Tensor:
    proj = linear(X, P["enc.W_in"], P["enc.b_in"])
    speakers = conv.speakers
    out, same_msg, diff_msg = [], [], []
    for i, preds in enumerate(dag_predecessors(len(conv), window)):
        p_i = take_row(proj, i)
        if len(preds) == 0:
            h_i = relu(p_i)
        else:
            M = concat([same_msg[j] if speakers[j] == speakers[i] else diff_msg[j] for j in preds], axis=0)
            alpha = softmax(matmul(p_i, transpose(M)))
            agg = matmul(alpha, M)
            gate = sigmoid(linear(concat([p_i, agg], axis=1), P["enc.W_g"], P["enc.b_g"]))
            h_i = relu(add(p_i, mul(gate, agg)))
        out.append(h_i)
        same_msg.append(linear(h_i, P["enc.R_same"]))
        diff_msg.append(linear(h_i, P["enc.R_diff"]))
    return concat(out, axis=0)
