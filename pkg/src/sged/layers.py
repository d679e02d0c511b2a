"""Building blocks shared by the encoders and the decoder."""

from __future__ import annotations

from typing import Mapping, Optional

import numpy as np

from .tensor import Parameter, Tape, Tensor, add, glorot_uniform, linear, mul, sigmoid, sub, tanh

Bound = Mapping[str, Tensor]


def bind(params: Mapping[str, Parameter], tape: Optional[Tape]) -> dict[str, Tensor]:
    """Tensors to compute with: taped views when ``tape`` is given, else raw values."""
    if tape is None:
        return {name: p.value for name, p in params.items()}
    return {name: tape.watch(p) for name, p in params.items()}


def gru_init(rng: np.random.Generator, prefix: str, n_in: int, n_hidden: int) -> dict[str, np.ndarray]:
    out = {}
    for gate in ("z", "r", "h"):
        out[f"{prefix}.W_{gate}"] = glorot_uniform(rng, n_hidden, n_in)
        out[f"{prefix}.U_{gate}"] = glorot_uniform(rng, n_hidden, n_hidden)
        out[f"{prefix}.b_{gate}"] = np.zeros(n_hidden)
    return out


def gru_cell(x: Tensor, h_prev: Tensor, P: Bound, prefix: str) -> Tensor:
    """One GRU step.

    z = sigmoid(W_z x + U_z h + b_z)
    r = sigmoid(W_r x + U_r h + b_r)
    c = tanh(W_h x + U_h (r * h) + b_h)
    h' = (1 - z) * h + z * c
    """
    z = sigmoid(add(linear(x, P[f"{prefix}.W_z"], P[f"{prefix}.b_z"]), linear(h_prev, P[f"{prefix}.U_z"])))
    r = sigmoid(add(linear(x, P[f"{prefix}.W_r"], P[f"{prefix}.b_r"]), linear(h_prev, P[f"{prefix}.U_r"])))
    c = tanh(add(linear(x, P[f"{prefix}.W_h"], P[f"{prefix}.b_h"]), linear(mul(r, h_prev), P[f"{prefix}.U_h"])))
    return add(h_prev, mul(z, sub(c, h_prev)))
