"""Hybrid time/frequency training objective.

All functions accept ``[N]`` or batched ``[B, ...]`` inputs; batched losses
are summed over time/frequency and averaged over the batch.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .numerics import ComplexTensor, accumulate64

SI_SNR_EPS = 1e-8


@dataclass
class LossWeights:
    alpha: float = 5.0
    beta: float = 1.0 / 30.0
    gamma: float = 1.0
    zeta: float = 1.0

    def __post_init__(self):
        if min(self.alpha, self.beta, self.gamma, self.zeta) < 0:
            raise ValueError("loss weights must be non-negative")


@dataclass
class Bundle:
    """Waveform, complex spectrum and ratio-mask magnitude of an estimate or reference."""

    wave: torch.Tensor
    spec: ComplexTensor
    mag: torch.Tensor


def _batched(x: torch.Tensor) -> torch.Tensor:
    return x.unsqueeze(0) if x.dim() == 1 else x


@accumulate64
def si_snr_loss(est: torch.Tensor, ref: torch.Tensor, eps: float = SI_SNR_EPS) -> torch.Tensor:
    """Negative SI-SNR in dB; ``ref`` is scaled by its projection coefficient onto ``est``."""
    if est.shape != ref.shape:
        raise ValueError(f"length mismatch {tuple(est.shape)} vs {tuple(ref.shape)}")
    est, ref = _batched(est), _batched(ref)
    energy = (ref * ref).sum(-1)
    if (energy == 0).any():
        raise ValueError("reference signal is all zeros")
    xi = (est * ref).sum(-1) / energy
    target = xi.unsqueeze(-1) * ref
    ratio = target.norm(dim=-1) / ((est - target).norm(dim=-1) + eps)
    return (-20.0 * torch.log10(ratio)).mean()


def si_snr(est: torch.Tensor, ref: torch.Tensor, eps: float = SI_SNR_EPS) -> torch.Tensor:
    """SI-SNR in dB per signal (metric form, higher is better)."""
    est, ref = _batched(est), _batched(ref)
    return torch.stack([-si_snr_loss(e, r, eps) for e, r in zip(est, ref)])


@accumulate64
def l1_time(est: torch.Tensor, ref: torch.Tensor) -> torch.Tensor:
    return (_batched(est) - _batched(ref)).abs().sum(-1).mean()


@accumulate64
def l2_complex(est: ComplexTensor, ref: ComplexTensor) -> torch.Tensor:
    n_freq = est.re.shape[-1]
    sq = (est.re - ref.re) ** 2 + (est.im - ref.im) ** 2
    return (sq.sum((-1, -2)) / n_freq).mean()


@accumulate64
def l2_magnitude(est: torch.Tensor, ref: torch.Tensor) -> torch.Tensor:
    n_freq = est.shape[-1]
    return (((est - ref) ** 2).sum((-1, -2)) / n_freq).mean()


@accumulate64
def hybrid_loss(est: Bundle, ref: Bundle, w: LossWeights = LossWeights()) -> torch.Tensor:
    return (
        w.alpha * si_snr_loss(est.wave, ref.wave)
        + w.beta * l1_time(est.wave, ref.wave)
        + w.gamma * l2_complex(est.spec, ref.spec)
        + w.zeta * l2_magnitude(est.mag, ref.mag)
    )
