"""Desk-scale training: hybrid loss, gradient clipping, Adam, LR halving, checkpoints."""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import torch

from . import checkpoint as ckpt
from .config import UformerConfig
from .loss import Bundle, LossWeights, hybrid_loss
from .numerics import GradientError, backward
from .reconstruct import run_model
from .stft import stft
from .unet import Uformer


def seeded_model(cfg: UformerConfig) -> Uformer:
    """Build a model whose initial weights depend only on ``cfg.train.seed``."""
    torch.manual_seed(cfg.train.seed)
    return Uformer(cfg)


# --------------------------------------------------------------------------
# optimizer pieces


def global_norm(grads: Iterable[torch.Tensor]) -> float:
    total = 0.0
    for g in grads:
        total += float(torch.sum(g.detach().double() ** 2))
    return math.sqrt(total)


def clip_gradients(grads: Sequence[torch.Tensor], max_norm: float = 5.0) -> float:
    """Scale ``grads`` in place so their global l2 norm is at most ``max_norm``.

    Returns the norm before clipping.
    """
    grads = list(grads)
    norm = global_norm(grads)
    if not math.isfinite(norm):
        raise GradientError(f"gradient norm is {norm}")
    if norm > max_norm:
        scale = max_norm / norm
        for g in grads:
            g.mul_(scale)
    return norm


class OptimizerState:
    """Adam moments, step count and current learning rate for a set of named parameters."""

    def __init__(self, named_params, lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        if lr <= 0:
            raise ValueError("learning rate must be positive")
        self.named = list(named_params)
        self.opt = torch.optim.Adam([p for _, p in self.named], lr=lr, betas=tuple(betas), eps=eps)

    @property
    def lr(self) -> float:
        return self.opt.param_groups[0]["lr"]

    @lr.setter
    def lr(self, value: float):
        if value <= 0:
            raise ValueError("learning rate must be positive")
        for g in self.opt.param_groups:
            g["lr"] = value

    @property
    def step_count(self) -> int:
        states = [self.opt.state[p] for _, p in self.named if p in self.opt.state]
        return int(states[0]["step"]) if states else 0

    def tensors(self) -> dict[str, torch.Tensor]:
        out = {}
        for name, p in self.named:
            st = self.opt.state.get(p)
            if st:
                out[f"optim.{name}.exp_avg"] = st["exp_avg"]
                out[f"optim.{name}.exp_avg_sq"] = st["exp_avg_sq"]
        return out

    def load_tensors(self, tensors: dict[str, torch.Tensor], step: int):
        for name, p in self.named:
            key = f"optim.{name}.exp_avg"
            if key in tensors:
                self.opt.state[p] = {
                    "step": torch.tensor(float(step)),
                    "exp_avg": tensors[key].to(p.dtype).clone(),
                    "exp_avg_sq": tensors[f"optim.{name}.exp_avg_sq"].to(p.dtype).clone(),
                }


def adam_step(state: OptimizerState) -> None:
    """Bias-corrected Adam update of every parameter from its ``.grad``."""
    state.opt.step()


class PlateauHalving:
    """Halve the learning rate after any epoch whose dev loss does not beat the best so far."""

    def __init__(self, lr: float, best: float = math.inf):
        self.lr = lr
        self.best = best

    def update(self, dev_loss: float) -> float:
        if dev_loss < self.best:
            self.best = dev_loss
        else:
            self.lr /= 2
        return self.lr


def lr_schedule(dev_losses: Sequence[float], lr: float = 1e-3) -> float:
    sched = PlateauHalving(lr)
    for d in dev_losses:
        sched.update(d)
    return sched.lr


# --------------------------------------------------------------------------
# data and loss


@dataclass
class Pair:
    noisy: np.ndarray
    target: np.ndarray


def split_dev(items: Sequence, fraction: float, seed: int) -> tuple[list, list]:
    """Fixed seeded train/dev split; at least one training item is kept."""
    n = len(items)
    order = np.random.default_rng(seed).permutation(n)
    n_dev = min(int(round(fraction * n)), n - 1) if n > 1 else 0
    dev = [items[i] for i in sorted(order[:n_dev])]
    tr = [items[i] for i in sorted(order[n_dev:])]
    return tr, dev


def stack(items: Sequence[Pair], dtype=torch.float32) -> tuple[torch.Tensor, torch.Tensor]:
    n = min(len(p.noisy) for p in items)
    noisy = torch.tensor(np.stack([p.noisy[:n] for p in items]), dtype=dtype)
    target = torch.tensor(np.stack([p.target[:n] for p in items]), dtype=dtype)
    return noisy, target


def batch_loss(model: Uformer, noisy: torch.Tensor, target: torch.Tensor,
               weights: LossWeights | None = None) -> torch.Tensor:
    weights = weights or loss_weights(model.cfg)
    wave, out = run_model(noisy, model)
    ref_spec = stft(target, model.cfg.stft_params).grid
    ref_mag = torch.sqrt(ref_spec.re ** 2 + ref_spec.im ** 2)
    est = Bundle(wave, out.spectrum, out.mag_real)
    return hybrid_loss(est, Bundle(target, ref_spec, ref_mag), weights)


def loss_weights(cfg: UformerConfig) -> LossWeights:
    t = cfg.train
    return LossWeights(t.loss_alpha, t.loss_beta, t.loss_gamma, t.loss_zeta)


# --------------------------------------------------------------------------
# loop


@dataclass
class EpochRecord:
    epoch: int
    steps: int
    train_loss: float
    dev_loss: float | None
    lr: float
    wall_time: float
    grad_norm_mean: float
    grad_norm_max: float
    clipped_fraction: float


@dataclass
class TrainReport:
    epochs: list[EpochRecord] = field(default_factory=list)
    step_losses: list[float] = field(default_factory=list)
    total_steps: int = 0

    def log_lines(self) -> list[str]:
        lines = []
        for e in self.epochs:
            dev = "n/a" if e.dev_loss is None else f"{e.dev_loss:.6f}"
            lines.append(
                f"epoch {e.epoch} steps {e.steps} train {e.train_loss:.6f} dev {dev} lr {e.lr:.3g} "
                f"grad_norm mean {e.grad_norm_mean:.4f} max {e.grad_norm_max:.4f} "
                f"clipped {e.clipped_fraction:.2f} time {e.wall_time:.1f}s"
            )
        return lines

    def write(self, out_dir: str | Path) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "train_log.txt").write_text("\n".join(self.log_lines()) + "\n")
        summary = {"total_steps": self.total_steps, "epochs": [asdict(e) for e in self.epochs]}
        (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")


@dataclass
class TrainState:
    epoch: int = 0
    best_dev: float = math.inf


def evaluate(model: Uformer, items: Sequence[Pair]) -> float:
    was = model.training
    model.eval()
    with torch.no_grad():
        losses = [float(batch_loss(model, *stack([p]))) for p in items]
    model.train(was)
    return float(np.mean(losses))


def train_step(model: Uformer, opt: OptimizerState, noisy, target, clip_norm: float,
               weights: LossWeights | None = None) -> tuple[float, float]:
    """One forward/backward/clip/Adam step; returns (loss, pre-clip gradient norm)."""
    model.train()
    opt.opt.zero_grad(set_to_none=True)
    loss = batch_loss(model, noisy, target, weights)
    grads = backward(loss, model)
    norm = clip_gradients(grads.values(), clip_norm)
    adam_step(opt)
    return loss.item(), norm


def train_loop(model: Uformer, train_items: Sequence[Pair], dev_items: Sequence[Pair],
               cfg: UformerConfig | None = None, opt: OptimizerState | None = None,
               state: TrainState | None = None, epochs: int | None = None,
               log=None) -> tuple[TrainReport, OptimizerState, TrainState]:
    """Run ``epochs`` epochs (default ``cfg.train.epochs``) of shuffled mini-batch training.

    Args:
        model: network to train in place.
        train_items: training pairs; batches are drawn without replacement each epoch.
        dev_items: evaluated after every epoch; drives the LR halving rule.
        opt, state: pass both to resume a run.
        log: optional callable receiving one text line per epoch.
    """
    cfg = cfg or model.cfg
    tc = cfg.train
    if not train_items:
        raise ValueError("no training items")
    opt = opt or OptimizerState(model.named_parameters(), tc.lr, tc.betas, tc.eps)
    state = state or TrainState()
    sched = PlateauHalving(opt.lr, state.best_dev)
    report = TrainReport()
    weights = loss_weights(cfg)
    n_epochs = tc.epochs if epochs is None else epochs
    for _ in range(n_epochs):
        t0 = time.perf_counter()
        rng = np.random.default_rng([tc.seed, state.epoch])
        model.rng.reseed(tc.seed * 1_000_003 + state.epoch)
        order = rng.permutation(len(train_items))
        bs = max(1, tc.batch_size)
        batches = [order[i : i + bs] for i in range(0, len(order), bs)]
        if tc.steps_per_epoch:
            batches = [batches[i % len(batches)] for i in range(tc.steps_per_epoch)]
        losses, norms = [], []
        for idx in batches:
            noisy, target = stack([train_items[i] for i in idx])
            loss, norm = train_step(model, opt, noisy, target, tc.clip_norm, weights)
            losses.append(loss)
            norms.append(norm)
        report.step_losses += losses
        dev = evaluate(model, dev_items) if dev_items else None
        lr_used = opt.lr
        if dev is not None:
            opt.lr = sched.update(dev)
            state.best_dev = sched.best
        state.epoch += 1
        rec = EpochRecord(
            state.epoch, len(losses), float(np.mean(losses)), dev, lr_used, time.perf_counter() - t0,
            float(np.mean(norms)), float(np.max(norms)), float(np.mean([n > tc.clip_norm for n in norms])),
        )
        report.epochs.append(rec)
        if log:
            log(report.log_lines()[-1])
    report.total_steps = opt.step_count
    return report, opt, state


# --------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path: str | Path, model: Uformer, opt: OptimizerState | None = None,
                    state: TrainState | None = None) -> None:
    tensors = {f"model.{k}": v for k, v in model.state_dict().items()}
    meta = {}
    if opt is not None:
        tensors.update(opt.tensors())
        meta.update(step=opt.step_count, lr=opt.lr)
    if state is not None:
        meta.update(epoch=state.epoch, best_dev=None if math.isinf(state.best_dev) else state.best_dev)
    ckpt.save(path, model.cfg, tensors, meta)


def load_checkpoint(path: str | Path, cfg: UformerConfig | None = None):
    """Restore (model, optimizer state, train state) from ``path``.

    When ``cfg`` is given the checkpoint is loaded into a model built from it,
    so any architecture mismatch raises a named-tensor diff.
    """
    saved_cfg, tensors, meta = ckpt.load(path)
    model = Uformer(cfg or saved_cfg)
    ckpt.load_into(model, tensors)
    tc = model.cfg.train
    opt = OptimizerState(model.named_parameters(), meta.get("lr", tc.lr), tc.betas, tc.eps)
    opt.load_tensors(tensors, meta.get("step", 0))
    best = meta.get("best_dev")
    state = TrainState(meta.get("epoch", 0), math.inf if best is None else best)
    return model, opt, state
