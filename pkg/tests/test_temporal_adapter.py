import math

import mpmath
import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from vidinflate.errors import NumericError, ShapeError
from vidinflate.temporal_adapter import AdapterConfig, adapter_forward, attention_weights, init_adapter, softmax_rows, to_tokens


def random_weights(token_dim, d, seed, zero_out=False, dtype=torch.float32):
    gen = torch.Generator().manual_seed(seed)
    w = {k: torch.randn(token_dim, d, generator=gen, dtype=dtype) * 0.5 for k in ("w_q", "w_k", "w_v")}
    w["w_o"] = torch.zeros(d, token_dim, dtype=dtype) if zero_out else torch.randn(d, token_dim, generator=gen, dtype=dtype) * 0.5
    return w


def test_softmax_rows_closed_forms():
    assert torch.allclose(softmax_rows(torch.tensor([[0.0, 0.0]])), torch.tensor([[0.5, 0.5]]))
    x, c = 0.3, 1.7
    out = softmax_rows(torch.tensor([[x, x + c]], dtype=torch.float64))
    expected = [1 / (1 + math.exp(c)), math.exp(c) / (1 + math.exp(c))]
    assert out[0].tolist() == pytest.approx(expected, abs=1e-12)


def test_softmax_large_magnitudes_against_mpmath():
    rows = torch.tensor([[1e4, -1e4, 9999.0], [-1e4, -1e4 + 2.5, -9999.0]], dtype=torch.float32)
    out = softmax_rows(rows)
    assert torch.isfinite(out).all()
    mpmath.mp.dps = 50
    for r, o in zip(rows.tolist(), out.tolist()):
        ex = [mpmath.e ** mpmath.mpf(v) for v in r]
        ref = [float(e / sum(ex)) for e in ex]
        assert o == pytest.approx(ref, abs=1e-6)
        assert sum(o) == pytest.approx(1.0, abs=1e-6)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=1, max_size=12))
def test_softmax_rows_stochastic(row):
    out = softmax_rows(torch.tensor([row], dtype=torch.float32))
    assert (out >= 0).all()
    assert abs(float(out.sum()) - 1.0) <= 1e-6


def test_single_frame_is_identity_with_zero_output():
    feats = torch.randn(2, 1, 3, 2, 2)
    w = init_adapter(AdapterConfig("16x", 12, 5), torch.Generator().manual_seed(0))
    assert torch.equal(adapter_forward(w, feats), feats)
    # F = 1: one key, weight 1, so the mixed tokens are exactly V
    attn = attention_weights(to_tokens(feats, "literal"), w)
    assert torch.equal(attn, torch.ones(2, 1, 1))


def test_identical_frames_give_uniform_attention():
    frame = torch.randn(1, 1, 2, 2, 2)
    feats = frame.repeat(1, 4, 1, 1, 1)
    w = random_weights(8, 3, seed=1)
    attn = attention_weights(to_tokens(feats, "literal"), w)
    torch.testing.assert_close(attn, torch.full((1, 4, 4), 0.25))
    out = adapter_forward(w, feats)
    for f in range(1, 4):
        torch.testing.assert_close(out[:, f], out[:, 0])


def test_matches_elementwise_oracle():
    # B=1, F=2, token_dim=3 (C=3, H=W=1), d=2
    w = random_weights(3, 2, seed=4, dtype=torch.float64)
    feats = torch.randn(1, 2, 3, 1, 1, generator=torch.Generator().manual_seed(9), dtype=torch.float64)
    out = adapter_forward(w, feats)

    I = feats.reshape(2, 3).tolist()
    W = {k: v.tolist() for k, v in w.items()}

    def proj(row, m, n_out):
        return [sum(row[i] * m[i][j] for i in range(len(row))) for j in range(n_out)]

    Q = [proj(r, W["w_q"], 2) for r in I]
    K = [proj(r, W["w_k"], 2) for r in I]
    V = [proj(r, W["w_v"], 2) for r in I]
    expected = []
    for f in range(2):
        scores = [sum(Q[f][j] * K[g][j] for j in range(2)) / math.sqrt(2) for g in range(2)]
        z = sum(math.exp(s) for s in scores)
        a = [math.exp(s) / z for s in scores]
        mixed = [sum(a[g] * V[g][j] for g in range(2)) for j in range(2)]
        delta = proj(mixed, W["w_o"], 3)
        expected.append([I[f][c] + delta[c] for c in range(3)])
    assert out.reshape(2, 3).tolist() == [pytest.approx(e, abs=1e-12) for e in expected]


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.permutations(range(4)))
def test_frame_permutation_equivariance(seed, perm):
    gen = torch.Generator().manual_seed(seed)
    feats = torch.randn(2, 4, 2, 2, 2, generator=gen, dtype=torch.float64)
    w = random_weights(8, 3, seed, dtype=torch.float64)
    perm = torch.tensor(perm)
    out = adapter_forward(w, feats)
    torch.testing.assert_close(adapter_forward(w, feats[:, perm]), out[:, perm], rtol=0, atol=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from(["literal", "spatial_shared"]))
def test_identity_at_init(seed, mode):
    gen = torch.Generator().manual_seed(seed)
    feats = torch.randn(1, 3, 4, 2, 2, generator=gen) * 10
    dim = 16 if mode == "literal" else 4
    w = init_adapter(AdapterConfig("8x", dim, 3, mode), gen)
    assert torch.equal(adapter_forward(w, feats, mode), feats)


def test_spatial_shared_attends_per_pixel():
    w = random_weights(3, 2, seed=2, dtype=torch.float64)
    feats = torch.randn(1, 3, 3, 2, 2, dtype=torch.float64)
    out = adapter_forward(w, feats, "spatial_shared")
    for y in range(2):
        for x in range(2):
            pixel = feats[:, :, :, y:y + 1, x:x + 1]
            torch.testing.assert_close(out[:, :, :, y:y + 1, x:x + 1], adapter_forward(w, pixel, "literal"))


def test_rejects_bad_input():
    w = random_weights(8, 3, seed=0)
    with pytest.raises(NumericError):
        adapter_forward(w, torch.full((1, 2, 2, 2, 2), float("nan")))
    with pytest.raises(ShapeError):
        adapter_forward(w, torch.zeros(1, 2, 3, 2, 2))


def _loss(w, feats):
    return (adapter_forward(w, feats) ** 2).sum() * 0.5 + adapter_forward(w, feats).sin().sum()


def test_gradients_match_finite_differences():
    feats64 = torch.randn(2, 3, 2, 2, 2, generator=torch.Generator().manual_seed(5), dtype=torch.float64)
    w64 = random_weights(8, 3, seed=6, dtype=torch.float64)

    w32 = {k: v.float().requires_grad_(True) for k, v in w64.items()}
    _loss(w32, feats64.float()).backward()

    h = 1e-5
    for name in w64:
        fd = torch.zeros_like(w64[name])
        for idx in np.ndindex(*fd.shape):
            plus = {k: v.clone() for k, v in w64.items()}
            minus = {k: v.clone() for k, v in w64.items()}
            plus[name][idx] += h
            minus[name][idx] -= h
            fd[idx] = (_loss(plus, feats64) - _loss(minus, feats64)) / (2 * h)
        rel = float((w32[name].grad.double() - fd).norm() / fd.norm())
        assert rel <= 1e-3, (name, rel)
