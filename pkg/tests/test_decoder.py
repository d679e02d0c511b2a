import math

import numpy as np
import pytest

import reference as ref
from sged.decoder import decode_dialogue, gru_step, init_decoder_params, match, predict
from sged.layers import gru_init
from sged.tensor import Parameter, Tape, Tensor, make_rng


def rand_bound(rng, h, d_e, L, use_sgd=True, scale=1.0):
    raw = init_decoder_params(rng, h, d_e, L, use_sgd)
    raw = {k: rng.normal(scale=scale, size=v.shape) for k, v in raw.items()}
    return raw, {k: Tensor(v) for k, v in raw.items()}


# ---------------------------------------------------------------------------
# match


def test_match_zero_state():
    rng = make_rng(0)
    _, P = rand_bound(rng, 3, 2, 4)
    assert not match(Tensor(np.zeros((1, 3))), Tensor(rng.normal(size=(1, 3))), P).data.any()


def test_match_identity_case():
    P = {"dec.W_m": Tensor(np.eye(2)), "dec.b_m": Tensor(np.zeros(2))}
    v = h = Tensor([[1.0, -1.0]])
    assert match(v, h, P).data.tolist() == [[1.0, 1.0]]


def test_match_nonnegative():
    rng = make_rng(1)
    _, P = rand_bound(rng, 5, 2, 3)
    for _ in range(50):
        assert np.all(match(Tensor(rng.normal(size=(1, 5))), Tensor(rng.normal(size=(1, 5))), P).data >= 0)


def test_match_shape_mismatch():
    _, P = rand_bound(make_rng(0), 3, 2, 4)
    with pytest.raises(ValueError):
        match(Tensor(np.zeros((1, 2))), Tensor(np.zeros((1, 3))), P)


# ---------------------------------------------------------------------------
# GRU


def zero_gru(h, d_e):
    return {k: Tensor(np.zeros_like(v)) for k, v in gru_init(make_rng(0), "dec.gru", h + d_e, h).items()}


def test_gru_zero_weights_zero_state():
    out = gru_step(Tensor(np.ones((1, 3))), Tensor(np.ones((1, 2))), Tensor(np.zeros((1, 3))), zero_gru(3, 2))
    assert out.data.tolist() == [[0.0, 0.0, 0.0]]


def test_gru_zero_weights_keeps_half_state():
    c = np.array([[0.4, -2.0, 1.0]])
    out = gru_step(Tensor(np.ones((1, 3))), Tensor(np.ones((1, 2))), Tensor(c), zero_gru(3, 2))
    assert np.array_equal(out.data, 0.5 * c)


def test_gru_matches_reference():
    rng = make_rng(3)
    for _ in range(150):
        h, d_e = int(rng.integers(1, 7)), int(rng.integers(1, 5))
        raw = {k: rng.normal(size=v.shape) for k, v in gru_init(rng, "dec.gru", h + d_e, h).items()}
        P = {k: Tensor(v) for k, v in raw.items()}
        m, e, o = rng.normal(size=(1, h)), rng.normal(size=(1, d_e)), rng.normal(size=(1, h))
        got = gru_step(Tensor(m), Tensor(e), Tensor(o), P).data[0]
        want = ref.gru(m[0].tolist() + e[0].tolist(), o[0].tolist(), ref.to_lists(raw), "dec.gru")
        np.testing.assert_allclose(got, want, rtol=0, atol=1e-12)


# ---------------------------------------------------------------------------
# predict


def test_predict_uniform_when_head_zero():
    _, P = rand_bound(make_rng(0), 3, 2, 5)
    P["dec.W_z"] = Tensor(np.zeros((5, 3)))
    P["dec.b_z"] = Tensor(np.zeros(5))
    probs, y, _, e = predict(Tensor(np.ones((1, 3))), Tensor(np.ones((1, 3))), P)
    np.testing.assert_allclose(probs.data, np.full((1, 5), 0.2), rtol=0, atol=1e-15)
    assert y == 0
    assert np.array_equal(e.data, P["dec.E"].data[:1])


def test_predict_biased_head():
    L = 4
    _, P = rand_bound(make_rng(0), 3, 2, L)
    P["dec.W_z"] = Tensor(np.zeros((L, 3)))
    P["dec.b_z"] = Tensor(np.array([10.0, 0.0, 0.0, 0.0]))
    probs, y, _, _ = predict(Tensor(np.ones((1, 3))), Tensor(np.ones((1, 3))), P)
    assert y == 0
    assert probs.data[0, 0] == pytest.approx(math.exp(10) / (math.exp(10) + L - 1), rel=1e-14)


def test_predict_tie_break_lowest_index():
    _, P = rand_bound(make_rng(0), 3, 2, 3)
    P["dec.W_z"] = Tensor(np.zeros((3, 3)))
    P["dec.b_z"] = Tensor(np.array([0.0, 2.0, 2.0]))
    _, y, _, _ = predict(Tensor(np.ones((1, 3))), Tensor(np.ones((1, 3))), P)
    assert y == 1


def test_predict_distribution():
    rng = make_rng(4)
    _, P = rand_bound(rng, 4, 2, 6, scale=2.0)
    for _ in range(50):
        probs, y, _, _ = predict(Tensor(rng.normal(size=(1, 4))), Tensor(rng.normal(size=(1, 4))), P)
        assert np.all(probs.data >= 0) and abs(probs.data.sum() - 1) <= 1e-12
        assert y == int(np.argmax(probs.data))


# ---------------------------------------------------------------------------
# decode_dialogue


def _rows(M):
    return [Tensor(M[i : i + 1]) for i in range(M.shape[0])]


def test_decode_single_utterance_uses_zero_embedding():
    rng = make_rng(5)
    _, P = rand_bound(rng, 3, 2, 4)
    H, V = rng.normal(size=(1, 3)), rng.normal(size=(1, 3))
    trace = decode_dialogue(Tensor(H), _rows(V), P)
    m = match(Tensor(V), Tensor(H), P)
    o = gru_step(m, Tensor(np.zeros((1, 2))), Tensor(np.zeros((1, 3))), P)
    probs, y, _, _ = predict(Tensor(H), o, P)
    assert np.array_equal(trace.probs[0].data, probs.data) and trace.predictions == [y]


@pytest.mark.parametrize("use_sgd", [True, False])
def test_decode_matches_reference(use_sgd):
    rng = make_rng(6)
    for _ in range(120):
        n, h, d_e, L = (int(x) for x in (rng.integers(1, 10), rng.integers(1, 7), rng.integers(1, 4), rng.integers(2, 6)))
        raw, P = rand_bound(rng, h, d_e, L, use_sgd)
        H, V = rng.normal(size=(n, h)), np.tanh(rng.normal(size=(n, h)))
        trace = decode_dialogue(Tensor(H), _rows(V), P, use_sgd)
        probs, preds = ref.decode(H.tolist(), V.tolist(), ref.to_lists(raw), use_sgd)
        assert trace.predictions == preds
        np.testing.assert_allclose(trace.prob_matrix, probs, rtol=0, atol=1e-12)


def test_decode_probabilities_valid():
    rng = make_rng(7)
    _, P = rand_bound(rng, 4, 3, 5, scale=2.0)
    trace = decode_dialogue(Tensor(rng.normal(size=(8, 4))), _rows(rng.normal(size=(8, 4))), P)
    pm = trace.prob_matrix
    assert np.all(pm >= 0) and np.all(np.abs(pm.sum(axis=1) - 1) <= 1e-12)


def test_decode_causality():
    rng = make_rng(8)
    _, P = rand_bound(rng, 4, 3, 5)
    H, V = rng.normal(size=(7, 4)), rng.normal(size=(7, 4))
    base = decode_dialogue(Tensor(H), _rows(V), P)
    for j in range(1, 7):
        H2, V2 = H.copy(), V.copy()
        H2[j:] += 1.0
        V2[j:] -= 1.0
        other = decode_dialogue(Tensor(H2), _rows(V2), P)
        assert other.predictions[:j] == base.predictions[:j]
        assert np.array_equal(other.prob_matrix[:j], base.prob_matrix[:j])


def test_gradient_reaches_predicted_embedding_row():
    rng = make_rng(9)
    raw = init_decoder_params(rng, 4, 3, 5)
    params = {k: Parameter(k, Tensor(v)) for k, v in raw.items()}
    H, V = rng.normal(size=(2, 4)), np.tanh(rng.normal(size=(2, 4)))
    tape = Tape()
    P = {k: tape.watch(p) for k, p in params.items()}
    trace = decode_dialogue(Tensor(H), _rows(V), P)
    from sged.model import cross_entropy_loss

    tape.backward(cross_entropy_loss(trace.probs, [1, 2]))
    gE = params["dec.E"].grad
    y1 = trace.predictions[0]
    assert np.abs(gE[y1]).max() > 0
    assert not np.delete(gE, y1, axis=0).any()
