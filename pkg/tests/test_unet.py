import numpy as np
import pytest
import torch

import oracles as O
from uformer.checkpoint import CheckpointMismatch, load, load_into, save
from uformer.config import ABLATIONS, UformerConfig
from uformer.numerics import ComplexTensor
from uformer.train import seeded_model
from uformer.unet import EncoderDecoderAttention, Uformer, count_parameters, freq_sizes, hybrid_fusion

f64 = torch.float64


def _noisy(cfg, T=100, B=1, seed=0):
    g = torch.Generator().manual_seed(seed)
    r = lambda: torch.randn(B, T, cfg.freq_bins, generator=g)  # noqa: E731
    return ComplexTensor(r(), r())


def test_frequency_chain():
    assert freq_sizes(UformerConfig()) == [257, 128, 64, 32, 16, 8, 4]


def test_fusion_examples():
    c = ComplexTensor(torch.tensor([3.0]), torch.tensor([4.0]))
    c_hat, m_hat = hybrid_fusion(c, torch.tensor([0.0]))
    assert c_hat.re.item() == 3.5 and c_hat.im.item() == 4.5
    assert m_hat.item() == pytest.approx(1 / (1 + np.exp(-5.0)), abs=1e-7)
    zero = ComplexTensor(torch.zeros(1), torch.zeros(1))
    assert hybrid_fusion(zero, torch.zeros(1))[1].item() == 0.5


@pytest.mark.parametrize("seed", range(5))
def test_fusion_matches_oracle(seed):
    rng = np.random.default_rng(seed)
    c = rng.standard_normal((2, 3)) + 1j * rng.standard_normal((2, 3))
    m = rng.standard_normal((2, 3))
    c_hat, m_hat = hybrid_fusion(ComplexTensor(torch.tensor(c.real), torch.tensor(c.imag)), torch.tensor(m))
    oc, om = O.hybrid_fusion(c, m)
    assert np.max(np.abs(c_hat.re.numpy() + 1j * c_hat.im.numpy() - oc)) <= 1e-15
    assert np.max(np.abs(m_hat.numpy() - om)) <= 1e-15


def test_ed_attention_with_zero_mask_weights_halves_decoder():
    att = EncoderDecoderAttention(3, 2, 6, (2, 3), complex=False).double()
    with torch.no_grad():
        att.conv_a.weight.zero_()
        att.conv_a.bias.zero_()
    e, d = torch.randn(1, 3, 5, 4, dtype=f64), torch.randn(1, 2, 5, 4, dtype=f64)
    out = att(e, d)
    assert torch.equal(out[:, :2], d)
    assert torch.equal(out[:, 2:], 0.5 * d)


def test_ed_attention_zero_decoder():
    att = EncoderDecoderAttention(3, 2, 6, (2, 3), complex=True).double()
    z = torch.zeros(1, 2, 5, 4, dtype=f64)
    out = att(ComplexTensor(torch.randn(1, 3, 5, 4, dtype=f64), torch.randn(1, 3, 5, 4, dtype=f64)),
              ComplexTensor(z, z))
    assert not out.re.any() and not out.im.any()


def test_output_shapes(tiny_cfg):
    model = Uformer(tiny_cfg).eval()
    h_c, h_r = model(_noisy(tiny_cfg))
    assert h_c.re.shape == h_c.im.shape == h_r.shape == (1, 100, 33)


def test_full_size_output_shapes():
    cfg = UformerConfig()
    model = Uformer(cfg).eval()
    with torch.no_grad():
        h_c, h_r = model(_noisy(cfg, T=20))
    assert h_c.re.shape == h_r.shape == (1, 20, 257)


def test_eval_mode_is_deterministic():
    cfg = UformerConfig.tiny()
    model = Uformer(cfg).eval()
    x = _noisy(cfg, B=2)
    a, b = model(x), model(x)
    assert torch.equal(a[0].re, b[0].re) and torch.equal(a[1], b[1])


@pytest.mark.parametrize("flag", ABLATIONS)
def test_ablations_build_and_run(flag):
    cfg = UformerConfig.tiny().with_ablation(flag)
    model = Uformer(cfg).eval()
    h_c, h_r = model(_noisy(cfg, T=12))
    assert (h_c is None) == (flag == "magnitude_only")
    assert (h_r is None) == (flag == "complex_only")


def test_branch_removal_drops_exactly_one_branch():
    base = UformerConfig.tiny()
    full = {n for n, _ in Uformer(base).named_parameters()}
    c = {n for n, _ in Uformer(base.with_ablation("complex_only")).named_parameters()}
    m = {n for n, _ in Uformer(base.with_ablation("magnitude_only")).named_parameters()}
    assert c == {n for n in full if n.startswith("complex_branch.")}
    assert m == {n for n in full if n.startswith("real_branch.")}


def test_unknown_ablation():
    with pytest.raises(KeyError):
        UformerConfig.tiny().with_ablation("disable_everything")


def test_checkpoint_round_trip_is_bit_identical(tmp_path, tiny_cfg):
    model = seeded_model(tiny_cfg).eval()
    tensors = {f"model.{k}": v for k, v in model.state_dict().items()}
    save(tmp_path / "m.ckpt", tiny_cfg, tensors, {"step": 3})
    cfg2, loaded, meta = load(tmp_path / "m.ckpt")
    assert meta == {"step": 3}
    other = Uformer(cfg2).eval()
    load_into(other, loaded)
    for k, v in model.state_dict().items():
        assert torch.equal(other.state_dict()[k], v), k
    x = _noisy(tiny_cfg, T=10)
    assert torch.equal(model(x)[1], other(x)[1])


def test_checkpoint_mismatch_lists_differences(tmp_path, tiny_cfg):
    model = seeded_model(tiny_cfg)
    tensors = {f"model.{k}": v for k, v in model.state_dict().items()}
    save(tmp_path / "m.ckpt", tiny_cfg, tensors)
    _, loaded, _ = load(tmp_path / "m.ckpt")
    with pytest.raises(CheckpointMismatch) as info:
        load_into(Uformer(tiny_cfg.with_ablation("disable_fa")), loaded)
    assert any(".fa." in d for d in info.value.diffs)


def test_parameter_count_is_positive_and_additive():
    base = UformerConfig.tiny()
    full = count_parameters(Uformer(base))
    parts = count_parameters(Uformer(base.with_ablation("complex_only"))) + count_parameters(
        Uformer(base.with_ablation("magnitude_only")))
    assert full == parts
