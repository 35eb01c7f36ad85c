"""Mask application and waveform reconstruction."""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .numerics import ComplexTensor, accumulate64, safe_abs
from .stft import STFTParams, istft, stft


@dataclass
class MaskPair:
    h_c: ComplexTensor | None
    h_r: torch.Tensor | None


@dataclass
class Enhanced:
    spectrum: ComplexTensor  # fused complex estimate
    mag_real: torch.Tensor  # ratio-mask magnitude estimate
    mag_complex: torch.Tensor
    magnitude: torch.Tensor  # fused magnitude, the modulus of ``spectrum``


def safe_atan2(y: torch.Tensor, x: torch.Tensor) -> torch.Tensor:
    """atan2 with ``atan2(0, 0) = 0`` and a finite (zero) gradient there."""
    zero = (x == 0) & (y == 0)
    x_safe = torch.where(zero, torch.ones_like(x), x)
    return torch.where(zero, torch.zeros_like(x), torch.atan2(y, x_safe))


@accumulate64
def apply_masks(noisy: ComplexTensor, masks: MaskPair) -> Enhanced:
    """Turn CRM/IRM outputs into the fused enhanced spectrum.

    The complex mask contributes a tanh-bounded magnitude gain and an
    additive phase; the ratio mask a sigmoid gain. The two magnitude
    estimates are averaged and recombined with the corrected phase. With one
    branch ablated, the surviving estimate is used alone and the phase is the
    noisy phase when the complex mask is missing.
    """
    x_mag = safe_abs(noisy.re, noisy.im)
    x_pha = safe_atan2(noisy.im, noisy.re)
    y_mag_c = y_mag_r = None
    pha = x_pha
    if masks.h_c is not None:
        h = masks.h_c
        m_mag_c = torch.tanh(safe_abs(h.re, h.im))
        pha = x_pha + safe_atan2(h.im, h.re)
        y_mag_c = x_mag * m_mag_c
    if masks.h_r is not None:
        y_mag_r = x_mag * torch.sigmoid(masks.h_r)
    if y_mag_c is None:
        y_mag_c = y_mag_r
    if y_mag_r is None:
        y_mag_r = y_mag_c
    fused = (y_mag_c + y_mag_r) / 2
    spec = ComplexTensor(fused * torch.cos(pha), fused * torch.sin(pha))
    return Enhanced(spec, y_mag_r, y_mag_c, fused)


@torch.no_grad()
def enhance(wave: torch.Tensor, model) -> torch.Tensor:
    """Enhance a waveform ``[N]`` or ``[B, N]`` with a model in eval mode; output has the input length."""
    squeeze = wave.dim() == 1
    x = wave.unsqueeze(0) if squeeze else wave
    est = run_model(x, model)[0]
    return est[0] if squeeze else est


def run_model(x: torch.Tensor, model) -> tuple[torch.Tensor, Enhanced]:
    """Differentiable STFT -> network -> masks -> iSTFT chain on ``[B, N]`` waveforms."""
    params: STFTParams = model.cfg.stft_params
    spec = stft(x, params)
    h_c, h_r = model(spec.grid)
    out = apply_masks(spec.grid, MaskPair(h_c, h_r))
    return istft(out.spectrum, x.shape[-1], params), out
