import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles as O
from uformer.attention import (
    AttentionConfig,
    FrequencyAttention,
    TimeAttention,
    complex_attention,
    context_expand,
    real_attention,
)
from uformer.numerics import ComplexTensor, DimensionError

f64 = torch.float64


def _ct(z):
    return ComplexTensor(torch.tensor(z.real), torch.tensor(z.imag))


def _np(x):
    return x.re.detach().numpy() + 1j * x.im.detach().numpy() if isinstance(x, ComplexTensor) else x.detach().numpy()


def test_single_key_returns_its_value():
    v = torch.tensor([[2.0, -3.0]])
    out = real_attention(torch.randn(4, 3), torch.randn(1, 3), v)
    assert torch.equal(out, v.expand(4, 2))


def test_equal_logits_average_values():
    v = torch.tensor([[1.0], [2.0], [6.0]])
    out = real_attention(torch.zeros(1, 2), torch.randn(3, 2), v)
    assert float(out) == pytest.approx(3.0, abs=1e-6)


def test_shape_mismatch():
    with pytest.raises(DimensionError):
        real_attention(torch.zeros(2, 3), torch.zeros(4, 2), torch.zeros(4, 1))


@pytest.mark.parametrize("seed", range(10))
def test_complex_attention_matches_oracle(seed):
    rng = np.random.default_rng(seed)
    z = lambda *s: rng.standard_normal(s) + 1j * rng.standard_normal(s)  # noqa: E731
    q, k, v = z(3, 4), z(5, 4), z(5, 2)
    assert np.max(np.abs(_np(complex_attention(_ct(q), _ct(k), _ct(v))) - O.complex_attention(q, k, v, 4))) <= 1e-12


def test_context_expand_zero_fills():
    x = torch.arange(4.0).reshape(1, 4, 1, 1)
    e = context_expand(x, [-1, 0, 1])
    assert e[0, :, 0, :, 0].tolist() == [[0, 0, 1], [0, 1, 2], [1, 2, 3], [2, 3, 0]]


def test_offsets():
    assert AttentionConfig(context=3).offsets() == [-1, 0, 1]
    assert AttentionConfig(context=3, causal=True).offsets() == [-2, -1, 0]
    with pytest.raises(ValueError):
        AttentionConfig(context=0)


def _weights(mod):
    out = {}
    for n in "qkvo":
        lin = getattr(mod, f"w_{n}")
        if mod.complex:
            w = lin.weight_re.detach().numpy() + 1j * lin.weight_im.detach().numpy()
            b = lin.bias_re.detach().numpy() + 1j * lin.bias_im.detach().numpy()
        else:
            w, b = lin.weight.detach().numpy(), lin.bias.detach().numpy()
        out[n] = (w, b)
    return out


def _input(rng, complex_, C=2, T=6, F=4):
    x = rng.standard_normal((C, T, F))
    return x + 1j * rng.standard_normal((C, T, F)) if complex_ else x


@pytest.mark.parametrize("complex_", [False, True])
@pytest.mark.parametrize("causal", [False, True])
def test_time_attention_matches_oracle(complex_, causal):
    torch.manual_seed(0)
    cfg = AttentionConfig(proj_dim=2, context=3, causal=causal)
    mod = TimeAttention(2, cfg, complex_).double()
    x = _input(np.random.default_rng(1), complex_)
    out = mod(_ct(x[None]) if complex_ else torch.tensor(x[None]))
    ref = O.time_attention(x, _weights(mod), cfg.offsets(), 2, complex=complex_)
    assert np.max(np.abs(_np(out)[0] - ref)) <= 1e-12


@pytest.mark.parametrize("complex_", [False, True])
def test_frequency_attention_matches_oracle(complex_):
    torch.manual_seed(0)
    mod = FrequencyAttention(2, AttentionConfig(proj_dim=2), complex_).double()
    x = _input(np.random.default_rng(2), complex_)
    out = mod(_ct(x[None]) if complex_ else torch.tensor(x[None]))
    ref = O.frequency_attention(x, _weights(mod), 2, complex=complex_)
    assert np.max(np.abs(_np(out)[0] - ref)) <= 1e-12


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2**16))
def test_frequency_attention_is_permutation_equivariant(seed):
    torch.manual_seed(0)
    mod = FrequencyAttention(3, AttentionConfig(proj_dim=4), False).double()
    g = torch.Generator().manual_seed(seed)
    x = torch.randn(1, 3, 2, 7, generator=g, dtype=f64)
    perm = torch.randperm(7, generator=g)
    torch.testing.assert_close(mod(x[..., perm]), mod(x)[..., perm], rtol=1e-12, atol=1e-12)


def test_causal_time_attention_ignores_future():
    torch.manual_seed(0)
    mod = TimeAttention(2, AttentionConfig(proj_dim=2, context=4, causal=True), True).double()
    x = ComplexTensor(torch.randn(1, 2, 10, 3, dtype=f64), torch.randn(1, 2, 10, 3, dtype=f64))
    y = ComplexTensor(x.re.clone(), x.im.clone())
    y.re[:, :, 6:] += 5.0
    a, b = mod(x), mod(y)
    assert torch.equal(a.re[:, :, :6], b.re[:, :, :6]) and torch.equal(a.im[:, :, :6], b.im[:, :, :6])


def test_real_inputs_give_nonzero_imaginary_output():
    """Terms with a zero key see uniform softmax weights, so the mean of v leaks into both parts."""
    q, k, v = torch.randn(2, 3, dtype=f64), torch.randn(4, 3, dtype=f64), torch.randn(4, 2, dtype=f64)
    z = lambda t: ComplexTensor(t, torch.zeros_like(t))  # noqa: E731
    out = complex_attention(z(q), z(k), z(v))
    mean = v.mean(0).expand(2, 2)
    torch.testing.assert_close(out.im, 2 * mean)
    torch.testing.assert_close(out.re, real_attention(q, k, v) - mean)
