"""Dilated dual-path conformer: half-step FF -> TA -> FA -> gated dilated conv -> half-step FF."""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn as nn

from .attention import AttentionConfig, FrequencyAttention, TimeAttention
from .numerics import ComplexTensor, Conv2d, DimensionError, Dropout, DropoutRNG, Linear, cmap, swish


@dataclass
class ConformerConfig:
    layers: int = 8
    ff_hidden: tuple[int, int] = (64, 128)
    dc_channels: tuple[int, int] = (32, 32)
    dc_kernel: tuple[int, int] = (2, 1)
    dilation_base: int = 2
    causal: bool = False
    dropout: float = 0.1

    def __post_init__(self):
        if self.layers < 1:
            raise ValueError("conformer needs at least one layer")

    def dilations(self, i: int) -> tuple[int, int]:
        """(forward, gate) time dilations of layer ``i``; the gate runs in reverse order."""
        if not 0 <= i < self.layers:
            raise ValueError(f"layer index {i} outside 0..{self.layers - 1}")
        return self.dilation_base**i, self.dilation_base ** (self.layers - 1 - i)


def _time_pad(extent: int, causal: bool) -> tuple[int, int]:
    if causal:
        return extent, 0
    return extent // 2, extent - extent // 2


def _residual(x, y, a: float = 1.0):
    if isinstance(x, ComplexTensor):
        return ComplexTensor(x.re + a * y.re, x.im + a * y.im)
    return x + a * y


class FeedForward(nn.Module):
    """Linear -> swish -> dropout -> Linear, added back with weight 1/2."""

    def __init__(self, channels: int, hidden: int, dropout: float, complex: bool, rng: DropoutRNG | None = None):
        super().__init__()
        self.linear1 = Linear(channels, hidden, complex)
        self.linear2 = Linear(hidden, channels, complex)
        self.inner_dropout = Dropout(dropout, rng)
        self.dropout = Dropout(dropout, rng)

    def forward(self, x):
        xl = x.permute(0, 2, 3, 1)
        h = self.inner_dropout(cmap(swish, self.linear1(xl)))
        y = self.dropout(self.linear2(h)).permute(0, 3, 1, 2)
        return _residual(x, y, 0.5)


class DilatedConv(nn.Module):
    """Pointwise expand, two depthwise dilated convs (one sigmoid-gated), pointwise back, residual."""

    def __init__(self, channels: int, layer: int, cfg: ConformerConfig, complex: bool, rng: DropoutRNG | None = None):
        super().__init__()
        h1, h2 = cfg.dc_channels
        if h1 != h2:
            raise DimensionError("depthwise dilated conv needs equal in/out channels")
        kt, kf = cfg.dc_kernel
        d_fwd, d_gate = cfg.dilations(layer)
        self.conv_in = Conv2d(channels, h1, complex=complex)
        f_pad = ((kf - 1) // 2, kf - 1 - (kf - 1) // 2)
        self.dconv = Conv2d(h1, h2, (kt, kf), dilation=(d_fwd, 1), groups=h1, complex=complex,
                            padding=(*_time_pad(d_fwd * (kt - 1), cfg.causal), *f_pad))
        self.dconv_gate = Conv2d(h1, h2, (kt, kf), dilation=(d_gate, 1), groups=h1, complex=complex,
                                 padding=(*_time_pad(d_gate * (kt - 1), cfg.causal), *f_pad))
        self.conv_out = Conv2d(h2, channels, complex=complex)
        self.dropout = Dropout(cfg.dropout, rng)

    def forward(self, x):
        u = self.conv_in(x)
        a = self.dconv(u)
        g = cmap(torch.sigmoid, self.dconv_gate(u))
        if isinstance(a, ComplexTensor):
            gated = ComplexTensor(a.re * g.re, a.im * g.im)
        else:
            gated = a * g
        return _residual(x, self.dropout(self.conv_out(gated)))


class ConformerBlock(nn.Module):
    def __init__(self, channels: int, layer: int, cfg: ConformerConfig, att: AttentionConfig, complex: bool,
                 use_fa: bool = True, use_dc: bool = True, rng: DropoutRNG | None = None):
        super().__init__()
        self.ff1 = FeedForward(channels, cfg.ff_hidden[0], cfg.dropout, complex, rng)
        self.ta = TimeAttention(channels, att, complex)
        self.fa = FrequencyAttention(channels, att, complex) if use_fa else None
        self.dc = DilatedConv(channels, layer, cfg, complex, rng) if use_dc else None
        self.ff2 = FeedForward(channels, cfg.ff_hidden[1], cfg.dropout, complex, rng)
        self.ta_dropout = Dropout(cfg.dropout, rng)
        self.fa_dropout = Dropout(cfg.dropout, rng)

    def forward(self, x):
        x = self.ff1(x)
        x = _residual(x, self.ta_dropout(self.ta(x)))
        if self.fa is not None:
            x = _residual(x, self.fa_dropout(self.fa(x)))
        if self.dc is not None:
            x = self.dc(x)
        return self.ff2(x)


class ConformerStack(nn.Module):
    def __init__(self, channels: int, cfg: ConformerConfig, att: AttentionConfig, complex: bool,
                 use_fa: bool = True, use_dc: bool = True, rng: DropoutRNG | None = None):
        super().__init__()
        self.blocks = nn.ModuleList(
            ConformerBlock(channels, i, cfg, att, complex, use_fa, use_dc, rng) for i in range(cfg.layers)
        )

    def forward(self, x):
        for block in self.blocks:
            x = block(x)
        return x


class RecurrentStack(nn.Module):
    """Two-layer unidirectional LSTM over frames, the conformer-replacement ablation.

    Each frame's ``channels * freq`` features are flattened, run through the
    LSTM, and mapped back by a linear layer. The complex variant runs two real
    LSTMs on both input parts and combines them like a complex product:
    ``re = r(x.re) - i(x.im)``, ``im = i(x.re) + r(x.im)``.
    """

    def __init__(self, channels: int, freq: int, hidden: int, complex: bool, layers: int = 2):
        super().__init__()
        self.complex = complex
        width = channels * freq
        self.lstm_re = nn.LSTM(width, hidden, num_layers=layers, batch_first=True)
        self.lstm_im = nn.LSTM(width, hidden, num_layers=layers, batch_first=True) if complex else None
        self.proj = Linear(hidden, width, complex)

    def forward(self, x):
        if self.complex:
            B, C, T, Fb = x.re.shape
            flat = lambda t: t.permute(0, 2, 1, 3).reshape(B, T, C * Fb)  # noqa: E731
            xr, xi = flat(x.re), flat(x.im)
            rr, ii = self.lstm_re(xr)[0], self.lstm_im(xi)[0]
            ri, ir = self.lstm_im(xr)[0], self.lstm_re(xi)[0]
            y = self.proj(ComplexTensor(rr - ii, ri + ir))
            unflat = lambda t: t.reshape(B, T, C, Fb).permute(0, 2, 1, 3)  # noqa: E731
            return ComplexTensor(unflat(y.re), unflat(y.im))
        B, C, T, Fb = x.shape
        y = self.proj(self.lstm_re(x.permute(0, 2, 1, 3).reshape(B, T, C * Fb))[0])
        return y.reshape(B, T, C, Fb).permute(0, 2, 1, 3)

    @staticmethod
    def count(channels: int, freq: int, hidden: int, complex: bool, layers: int = 2) -> int:
        width = channels * freq
        lstm = 0
        n_in = width
        for _ in range(layers):
            lstm += 4 * hidden * (n_in + hidden) + 8 * hidden
            n_in = hidden
        proj = hidden * width + width
        return (2 if complex else 1) * (lstm + proj)

    @classmethod
    def matched_hidden(cls, target: int, channels: int, freq: int, complex: bool) -> int:
        """Smallest hidden size whose parameter count reaches ``target``."""
        h = 1
        while cls.count(channels, freq, h, complex) < target:
            h += 1
        return h
