"""Scaled dot-product attention (real and complex) and the dual-path
time/frequency attention modules used inside the conformer block.

Tensors are token-major: ``q[..., m, d]``, ``k[..., n, d]``, ``v[..., n, dv]``.
Each of the ``m`` queries gets a softmax over the ``n`` keys.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .numerics import ComplexTensor, DimensionError, Linear, accumulate64


@dataclass
class AttentionConfig:
    proj_dim: int = 16
    heads: int = 1
    context: int = 9
    causal: bool = False

    def __post_init__(self):
        if self.context < 1 or self.proj_dim < 1 or self.heads < 1:
            raise ValueError(f"invalid attention config {self}")

    def offsets(self) -> list[int]:
        """Frame offsets of the context window relative to the current frame."""
        if self.causal:
            return list(range(-(self.context - 1), 1))
        past = (self.context - 1) // 2
        return list(range(-past, self.context - past))


@accumulate64
def real_attention(q: torch.Tensor, k: torch.Tensor, v: torch.Tensor, scale_dim: int | None = None) -> torch.Tensor:
    """softmax(q kᵀ / sqrt(d)) v, softmax over keys."""
    if q.shape[-1] != k.shape[-1] or k.shape[-2] != v.shape[-2]:
        raise DimensionError(f"attention shapes q{tuple(q.shape)} k{tuple(k.shape)} v{tuple(v.shape)}")
    d = scale_dim or q.shape[-1]
    w = torch.softmax(q @ k.transpose(-1, -2) / math.sqrt(d), dim=-1)
    return w @ v


@accumulate64
def complex_attention(q: ComplexTensor, k: ComplexTensor, v: ComplexTensor, scale_dim: int | None = None) -> ComplexTensor:
    """Complex attention as a signed sum of eight real attentions.

    The softmax never sees a complex logit: every term is a real attention
    over one combination of real/imaginary components.
    """
    a = lambda q_, k_, v_: real_attention(q_, k_, v_, scale_dim)  # noqa: E731
    re = a(q.re, k.re, v.re) - a(q.re, k.im, v.im) - a(q.im, k.re, v.im) - a(q.im, k.im, v.re)
    im = a(q.re, k.re, v.im) + a(q.re, k.im, v.re) + a(q.im, k.re, v.re) - a(q.im, k.im, v.im)
    return ComplexTensor(re, im)


def _channels_last(x):
    if isinstance(x, ComplexTensor):
        return x.permute(0, 2, 3, 1)
    return x.permute(0, 2, 3, 1)


def _channels_first(x):
    if isinstance(x, ComplexTensor):
        return x.permute(0, 3, 1, 2)
    return x.permute(0, 3, 1, 2)


def context_expand(x: torch.Tensor, offsets: list[int]) -> torch.Tensor:
    """``x[B, T, F, C]`` -> ``[B, T, F, c, C]`` with zero frames outside the sequence."""
    T = x.shape[1]
    lo, hi = max(0, -min(offsets)), max(0, max(offsets))
    padded = F.pad(x, (0, 0, 0, 0, lo, hi))
    views = [padded[:, lo + o : lo + o + T] for o in offsets]
    return torch.stack(views, dim=3)


class _Projections(nn.Module):
    def __init__(self, channels: int, cfg: AttentionConfig, complex: bool):
        super().__init__()
        self.cfg = cfg
        self.complex = complex
        d = cfg.proj_dim * cfg.heads
        self.w_q = Linear(channels, d, complex)
        self.w_k = Linear(channels, d, complex)
        self.w_v = Linear(channels, d, complex)
        self.w_o = Linear(d, channels, complex)

    def _attend(self, q, k, v):
        h = self.cfg.heads
        if h > 1:
            split = lambda t: t.reshape(*t.shape[:-1], h, -1).transpose(-2, -3)  # noqa: E731
            merge = lambda t: t.transpose(-2, -3).reshape(*t.shape[:-3], t.shape[-2], -1)  # noqa: E731
            if self.complex:
                q, k, v = (ComplexTensor(split(t.re), split(t.im)) for t in (q, k, v))
            else:
                q, k, v = split(q), split(k), split(v)
        fn = complex_attention if self.complex else real_attention
        y = fn(q, k, v, self.cfg.proj_dim)
        if h > 1:
            y = ComplexTensor(merge(y.re), merge(y.im)) if self.complex else merge(y)
        return y


class TimeAttention(_Projections):
    """Each (t, f) position attends over a window of neighbouring frames.

    The current frame supplies the single query; the ``context`` frames of
    the window supply keys and values. Frames outside the sequence are zero.
    """

    def forward(self, x):
        offsets = self.cfg.offsets()
        xl = _channels_last(x)  # [B, T, F, C]
        if self.complex:
            bar = ComplexTensor(context_expand(xl.re, offsets), context_expand(xl.im, offsets))
            cur = ComplexTensor(xl.re.unsqueeze(3), xl.im.unsqueeze(3))
        else:
            bar = context_expand(xl, offsets)
            cur = xl.unsqueeze(3)
        y = self._attend(self.w_k(cur), self.w_q(bar), self.w_v(bar))  # [B, T, F, 1, d]
        y = ComplexTensor(y.re.squeeze(3), y.im.squeeze(3)) if self.complex else y.squeeze(3)
        return _channels_first(self.w_o(y))


class FrequencyAttention(_Projections):
    """Per frame, every frequency band attends over all bands."""

    def forward(self, x):
        xl = _channels_last(x)  # [B, T, F, C]
        y = self._attend(self.w_q(xl), self.w_k(xl), self.w_v(xl))
        return _channels_first(self.w_o(y))
