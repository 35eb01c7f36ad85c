"""Hybrid complex/magnitude U-Net with encoder-decoder attention and conformer bottleneck."""

from __future__ import annotations

import torch
import torch.nn as nn

from .config import UformerConfig
from .conformer import ConformerStack, RecurrentStack
from .numerics import (
    BatchNorm,
    ComplexTensor,
    Conv2d,
    ConvTranspose2d,
    DimensionError,
    DropoutRNG,
    PReLU,
    accumulate64,
    safe_abs,
    ccat,
    cmap,
    conv_output_length,
)
from .stft import compress_magnitude


class NonFiniteError(RuntimeError):
    pass


@accumulate64
def hybrid_fusion(c: ComplexTensor, m: torch.Tensor) -> tuple[ComplexTensor, torch.Tensor]:
    """Cross-inject the magnitude and complex branch activations.

    Both complex components get ``sigmoid(m)`` added; the magnitude branch
    gets ``sigmoid(|c|)`` added.
    """
    gate_m = torch.sigmoid(m)
    c_hat = ComplexTensor(c.re + gate_m, c.im + gate_m)
    m_hat = m + torch.sigmoid(safe_abs(c.re, c.im))
    return c_hat, m_hat


def freq_sizes(cfg: UformerConfig) -> list[int]:
    """Frequency length at the input of each encoder layer, plus the bottleneck."""
    sizes = [cfg.freq_bins]
    kf, sf = cfg.kernel[1], cfg.stride[1]
    for _ in cfg.enc_channels:
        sizes.append(conv_output_length(sizes[-1], kf, sf, pads=sum(cfg.freq_padding)))
        if sizes[-1] < 1:
            raise DimensionError(f"frequency axis collapses with {len(cfg.enc_channels)} encoder layers")
    return sizes


def _align(d, target_f: int):
    """Crop or zero-pad the frequency axis of ``d`` by at most one bin."""
    ref = d.re if isinstance(d, ComplexTensor) else d
    diff = ref.shape[-1] - target_f
    if diff == 0:
        return d
    if abs(diff) > 1:
        raise DimensionError(f"decoder frequency {ref.shape[-1]} misaligned with encoder {target_f}")
    if diff > 0:
        return cmap(lambda t: t[..., :target_f], d)
    return cmap(lambda t: torch.nn.functional.pad(t, (0, 1)), d)


class EncoderLayer(nn.Module):
    def __init__(self, c_in: int, c_out: int, cfg: UformerConfig, complex: bool):
        super().__init__()
        kt, _ = cfg.kernel
        self.conv = Conv2d(c_in, c_out, cfg.kernel, stride=cfg.stride,
                           padding=(kt - 1, 0, *cfg.freq_padding), complex=complex)
        self.norm = BatchNorm(c_out, complex)
        self.act = PReLU(c_out, complex)

    def forward(self, x):
        return self.act(self.norm(self.conv(x)))


class DecoderLayer(nn.Module):
    def __init__(self, c_in: int, c_out: int, cfg: UformerConfig, complex: bool):
        super().__init__()
        kt, _ = cfg.kernel
        # crop the adjoint of the encoder padding; the trailing time frame is dropped to stay causal
        self.conv = ConvTranspose2d(c_in, c_out, cfg.kernel, stride=cfg.stride,
                                    crop=(0, kt - 1, cfg.freq_padding[0], 0), complex=complex)
        self.norm = BatchNorm(c_out, complex)
        self.act = PReLU(c_out, complex)

    def forward(self, x, out_size):
        return self.act(self.norm(self.conv(x, out_size)))


class EncoderDecoderAttention(nn.Module):
    """Gate decoder features with a mask computed from the matching encoder output.

    ``G = sigmoid(conv_e(E) + conv_d(D))``, ``D_hat = sigmoid(conv_a(G)) * D``;
    returns ``concat(D, D_hat)`` on the channel axis. Complex gates act
    component-wise.
    """

    def __init__(self, c_enc: int, c_dec: int, hidden: int, kernel, complex: bool):
        super().__init__()
        kt, kf = kernel
        pad = (kt - 1, 0, (kf - 1) // 2, kf - 1 - (kf - 1) // 2)
        self.conv_e = Conv2d(c_enc, hidden, kernel, padding=pad, complex=complex)
        self.conv_d = Conv2d(c_dec, hidden, kernel, padding=pad, complex=complex)
        self.conv_a = Conv2d(hidden, c_dec, kernel, padding=pad, complex=complex)

    @accumulate64
    def forward(self, e, d):
        ref = e.re if isinstance(e, ComplexTensor) else e
        d = _align(d, ref.shape[-1])
        g = cmap(torch.sigmoid, self.conv_e(e) + self.conv_d(d))
        mask = cmap(torch.sigmoid, self.conv_a(g))
        if isinstance(d, ComplexTensor):
            d_hat = ComplexTensor(mask.re * d.re, mask.im * d.im)
        else:
            d_hat = mask * d
        return ccat([d, d_hat], 1)


class Branch(nn.Module):
    """All trainable layers of one branch (complex spectrum or magnitude)."""

    def __init__(self, cfg: UformerConfig, complex: bool, rng: DropoutRNG | None):
        super().__init__()
        enc = list(cfg.enc_channels)
        rev = enc[::-1]
        n = len(enc)
        width = enc[-1]
        self.encoders = nn.ModuleList(
            EncoderLayer(1 if i == 0 else enc[i - 1], enc[i], cfg, complex) for i in range(n)
        )
        if cfg.swap_lstm:
            target = sum(p.numel() for p in
                         ConformerStack(width, cfg.conformer, cfg.attention, complex,
                                        not cfg.disable_fa, not cfg.disable_dc).parameters())
            f_b = freq_sizes(cfg)[-1]
            hidden = RecurrentStack.matched_hidden(target, width, f_b, complex)
            self.bottleneck = RecurrentStack(width, f_b, hidden, complex)
        else:
            self.bottleneck = ConformerStack(width, cfg.conformer, cfg.attention, complex,
                                             not cfg.disable_fa, not cfg.disable_dc, rng)
        self.attentions = nn.ModuleList()
        self.decoders = nn.ModuleList()
        c_dec = width
        for j in range(n):
            c_enc = enc[n - 1 - j]
            if cfg.disable_edattention:
                c_in = c_dec + c_enc
            else:
                self.attentions.append(
                    EncoderDecoderAttention(c_enc, c_dec, cfg.ed_expansion * c_enc, cfg.ed_kernel, complex)
                )
                c_in = 2 * c_dec
            self.decoders.append(DecoderLayer(c_in, rev[j], cfg, complex))
            c_dec = rev[j]
        self.head = Conv2d(c_dec, 1, complex=complex)


class Uformer(nn.Module):
    """Maps a noisy spectrogram to a complex ratio mask and ratio-mask logits.

    ``forward`` takes the noisy grid ``[B, T, F]`` as a ComplexTensor and
    returns ``(H_C, H_R)`` of the same shape; a branch removed by an ablation
    flag yields ``None`` for its output.
    """

    def __init__(self, cfg: UformerConfig, check_finite: bool = True):
        super().__init__()
        self.cfg = cfg
        self.check_finite = check_finite
        self.rng = DropoutRNG(cfg.train.seed)
        self.sizes = freq_sizes(cfg)
        self.complex_branch = Branch(cfg, True, self.rng) if cfg.use_complex else None
        self.real_branch = Branch(cfg, False, self.rng) if cfg.use_real else None

    def _check(self, name, *xs):
        if not self.check_finite:
            return
        for x in xs:
            if x is None:
                continue
            parts = (x.re, x.im) if isinstance(x, ComplexTensor) else (x,)
            if not all(torch.isfinite(p).all() for p in parts):
                raise NonFiniteError(f"non-finite activation produced by {name}")

    def _fuse(self, c, m):
        if c is None or m is None:
            return c, m
        return hybrid_fusion(c, m)

    def forward(self, noisy: ComplexTensor):
        cb, rb = self.complex_branch, self.real_branch
        n = len(self.cfg.enc_channels)
        T = noisy.re.shape[-2]
        c = ComplexTensor(noisy.re.unsqueeze(1), noisy.im.unsqueeze(1)) if cb is not None else None
        m = None
        if rb is not None:
            mag = torch.sqrt(noisy.re * noisy.re + noisy.im * noisy.im)
            m = compress_magnitude(mag, self.cfg.compression).unsqueeze(1)

        skips = []
        for i in range(n):
            c = cb.encoders[i](c) if cb is not None else None
            m = rb.encoders[i](m) if rb is not None else None
            c, m = self._fuse(c, m)
            self._check(f"encoder layer {i}", c, m)
            skips.append((c, m))

        c = cb.bottleneck(c) if cb is not None else None
        m = rb.bottleneck(m) if rb is not None else None
        self._check("bottleneck", c, m)

        for j in range(n):
            e_c, e_m = skips[n - 1 - j]
            out_size = (T, self.sizes[n - 1 - j])
            if self.cfg.disable_edattention:
                c = ccat([c, e_c], 1) if cb is not None else None
                m = torch.cat([m, e_m], 1) if rb is not None else None
            else:
                c = cb.attentions[j](e_c, c) if cb is not None else None
                m = rb.attentions[j](e_m, m) if rb is not None else None
            c = cb.decoders[j](c, out_size) if cb is not None else None
            m = rb.decoders[j](m, out_size) if rb is not None else None
            c, m = self._fuse(c, m)
            self._check(f"decoder layer {j}", c, m)

        h_c = cb.head(c) if cb is not None else None
        h_r = rb.head(m) if rb is not None else None
        self._check("output heads", h_c, h_r)
        if h_c is not None:
            h_c = ComplexTensor(h_c.re.squeeze(1), h_c.im.squeeze(1))
        if h_r is not None:
            h_r = h_r.squeeze(1)
        return h_c, h_r


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


def build_model(cfg: UformerConfig) -> Uformer:
    return Uformer(cfg)
