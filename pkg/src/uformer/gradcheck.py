"""Finite-difference audit of the full model's backward pass."""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .config import UformerConfig
from .numerics import backward, finite_difference_grad
from .train import batch_loss, seeded_model

# groups are compared against at least this fraction of the global gradient norm
RELATIVE_FLOOR = 1e-6


@dataclass
class GroupResult:
    name: str
    numel: int
    checked: int
    rel_error: float
    passed: bool


def group_error(analytic: torch.Tensor, numeric: torch.Tensor, floor: float = 1e-8) -> float:
    """Norm-wise relative error ``|a - n| / max(|a|, |n|, floor)`` over one parameter tensor.

    ``floor`` keeps groups whose true gradient is zero (a bias feeding a batch
    norm, a shift shared by every attention key) from dividing round-off by
    round-off.
    """
    scale = max(float(analytic.norm()), float(numeric.norm()), floor)
    return float((analytic - numeric).norm()) / scale


def gradient_check(cfg: UformerConfig | None = None, tolerance: float = 1e-3, step: float = 1e-4,
                   samples: int = 416, max_per_group: int | None = None, seed: int = 0,
                   corrupt: str | None = None) -> list[GroupResult]:
    """Compare backprop gradients of the hybrid loss with central differences in float64.

    Args:
        cfg: model configuration; defaults to the tiny config with dropout off.
        samples: input length in samples (416 gives 12 frames with the tiny STFT).
        max_per_group: check at most this many evenly spaced entries per tensor.
        corrupt: test hook; name of a parameter whose adjoint is perturbed,
            which must make that group fail.
    """
    if cfg is None:
        cfg = UformerConfig.tiny()
        cfg.conformer.dropout = 0.0
    model = seeded_model(cfg).double()
    model.train()
    gen = torch.Generator().manual_seed(seed)
    x = torch.randn(1, samples, generator=gen, dtype=torch.float64)
    y = torch.randn(1, samples, generator=gen, dtype=torch.float64)
    named = dict(model.named_parameters())
    if corrupt is not None:
        if corrupt not in named:
            raise KeyError(f"unknown parameter {corrupt!r}")
        named[corrupt].register_hook(lambda g: g * 1.01 + 1e-3)

    model.zero_grad(set_to_none=True)
    grads = {k: g.clone() for k, g in backward(batch_loss(model, x, y), model).items()}
    floor = max(1e-8, RELATIVE_FLOOR * float(torch.sqrt(sum((g * g).sum() for g in grads.values()))))

    def fn():
        return batch_loss(model, x, y)

    results = []
    with torch.no_grad():
        for name, p in named.items():
            n = p.numel()
            if max_per_group is None or n <= max_per_group:
                idx = list(range(n))
            else:
                idx = torch.linspace(0, n - 1, max_per_group).round().long().unique().tolist()
            numeric = finite_difference_grad(fn, p, step, idx).view(-1)[idx]
            analytic = grads[name].view(-1)[idx]
            err = group_error(analytic, numeric, floor)
            results.append(GroupResult(name, n, len(idx), err, err <= tolerance))
    return results
