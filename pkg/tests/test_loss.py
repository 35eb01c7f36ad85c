import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles as O
from uformer.loss import Bundle, LossWeights, hybrid_loss, l1_time, l2_complex, l2_magnitude, si_snr, si_snr_loss
from uformer.numerics import ComplexTensor

f64 = torch.float64


def test_si_snr_worked_example():
    # xi = 1, target = [1, 0], residual = [0, 1]: ratio 1 -> 0 dB
    assert si_snr_loss(torch.tensor([1.0, 1.0], dtype=f64), torch.tensor([1.0, 0.0], dtype=f64)).item() == \
        pytest.approx(0.0, abs=1e-7)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**16), scale=st.floats(0.01, 100))
def test_si_snr_is_scale_invariant(seed, scale):
    rng = np.random.default_rng(seed)
    y, r = torch.tensor(rng.standard_normal(64)), torch.tensor(rng.standard_normal(64))
    # the denominator epsilon perturbs the result by about 8.7 * eps / (scale * residual norm) dB
    assert si_snr_loss(scale * y, r).item() == pytest.approx(si_snr_loss(y, r).item(), abs=1e-5)


@pytest.mark.parametrize("seed", range(10))
def test_si_snr_matches_oracle(seed):
    rng = np.random.default_rng(seed)
    y, yh = rng.standard_normal(200), rng.standard_normal(200)
    assert si_snr_loss(torch.tensor(y), torch.tensor(yh)).item() == pytest.approx(O.si_snr_loss(y, yh), abs=1e-10)


def test_perfect_estimate_is_very_negative():
    x = torch.randn(100, dtype=f64)
    assert si_snr_loss(x, x).item() < -100


def test_si_snr_errors():
    with pytest.raises(ValueError):
        si_snr_loss(torch.ones(3), torch.zeros(3))
    with pytest.raises(ValueError):
        si_snr_loss(torch.ones(3), torch.ones(4))


def test_si_snr_metric_sign():
    x = torch.randn(2, 50, dtype=f64)
    assert si_snr(x + 0.1 * torch.randn(2, 50, dtype=f64), x).shape == (2,)
    assert bool((si_snr(x + 0.1 * torch.randn(2, 50, dtype=f64), x) > 10).all())


def test_l1_example():
    assert l1_time(torch.tensor([1.0, -1.0]), torch.zeros(2)).item() == 2.0


def test_l2_terms_normalize_by_bins():
    ones = torch.ones(1, 257)
    z = torch.zeros(1, 257)
    assert l2_magnitude(ones, z).item() == pytest.approx(1.0)
    est = ComplexTensor(torch.zeros(1, 257), torch.zeros(1, 257))
    ref = ComplexTensor(torch.zeros(1, 257), torch.zeros(1, 257))
    ref.re[0, 3] = 1.0
    assert l2_complex(est, ref).item() == pytest.approx(1 / 257)


def _bundle(rng):
    w = torch.tensor(rng.standard_normal(300))
    s = ComplexTensor(torch.tensor(rng.standard_normal((4, 9))), torch.tensor(rng.standard_normal((4, 9))))
    return Bundle(w, s, torch.tensor(np.abs(rng.standard_normal((4, 9)))))


def test_weights_select_terms():
    rng = np.random.default_rng(0)
    a, b = _bundle(rng), _bundle(rng)
    only_l1 = hybrid_loss(a, b, LossWeights(0, 1, 0, 0)).item()
    assert only_l1 == pytest.approx(l1_time(a.wave, b.wave).item())
    full = hybrid_loss(a, b).item()
    parts = (5 * si_snr_loss(a.wave, b.wave) + l1_time(a.wave, b.wave) / 30 + l2_complex(a.spec, b.spec)
             + l2_magnitude(a.mag, b.mag)).item()
    assert full == pytest.approx(parts, rel=1e-12)
    with pytest.raises(ValueError):
        LossWeights(alpha=-1)
