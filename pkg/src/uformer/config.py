"""Model/training configuration and its flat ``key = value`` text form."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .attention import AttentionConfig
from .conformer import ConformerConfig
from .stft import STFTParams

ABLATIONS = ("disable_fa", "disable_dc", "disable_edattention", "swap_lstm", "complex_only", "magnitude_only")


@dataclass
class TrainConfig:
    lr: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    clip_norm: float = 5.0
    batch_size: int = 2
    epochs: int = 15
    steps_per_epoch: int = 0  # 0: one pass over the training items
    seed: int = 0
    dev_fraction: float = 0.25
    loss_alpha: float = 5.0
    loss_beta: float = 1.0 / 30.0
    loss_gamma: float = 1.0
    loss_zeta: float = 1.0


@dataclass
class UformerConfig:
    sample_rate: int = 16000
    fft_size: int = 512
    win_length: int = 400
    hop: int = 160
    compression: float = 0.5
    enc_channels: tuple[int, ...] = (8, 16, 32, 64, 128, 128)
    kernel: tuple[int, int] = (2, 5)
    stride: tuple[int, int] = (1, 2)
    freq_padding: tuple[int, int] = (2, 1)
    ed_kernel: tuple[int, int] = (2, 3)
    ed_expansion: int = 2
    causal: bool = False
    disable_fa: bool = False
    disable_dc: bool = False
    disable_edattention: bool = False
    swap_lstm: bool = False
    complex_only: bool = False
    magnitude_only: bool = False
    attention: AttentionConfig = field(default_factory=AttentionConfig)
    conformer: ConformerConfig = field(default_factory=ConformerConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        self.attention.causal = self.causal
        self.conformer.causal = self.causal
        if self.complex_only and self.magnitude_only:
            raise ValueError("complex_only and magnitude_only are mutually exclusive")
        if not self.enc_channels:
            raise ValueError("need at least one encoder layer")

    @property
    def freq_bins(self) -> int:
        return self.fft_size // 2 + 1

    @property
    def stft_params(self) -> STFTParams:
        return STFTParams(self.fft_size, self.win_length, self.hop, self.sample_rate)

    @property
    def use_complex(self) -> bool:
        return not self.magnitude_only

    @property
    def use_real(self) -> bool:
        return not self.complex_only

    def with_ablation(self, flag: str | None) -> "UformerConfig":
        cfg = from_flat(to_flat(self))
        if flag:
            if flag not in ABLATIONS:
                raise KeyError(f"unknown ablation {flag!r}; choose from {', '.join(ABLATIONS)}")
            setattr(cfg, flag, True)
        return cfg

    @classmethod
    def tiny(cls, **overrides) -> "UformerConfig":
        """Small model used for gradient checks and desk-scale training runs."""
        cfg = cls(
            fft_size=64, win_length=64, hop=32,
            enc_channels=(2, 4),
            attention=AttentionConfig(proj_dim=4),
            conformer=ConformerConfig(layers=2, ff_hidden=(4, 8), dc_channels=(4, 4)),
        )
        flat = to_flat(cfg)
        flat.update(overrides)
        return from_flat(flat)


# --------------------------------------------------------------------------
# flat key = value form


def to_flat(cfg, prefix: str = "") -> dict:
    out = {}
    for f in dataclasses.fields(cfg):
        v = getattr(cfg, f.name)
        key = prefix + f.name
        if dataclasses.is_dataclass(v):
            out.update(to_flat(v, key + "."))
        else:
            out[key] = list(v) if isinstance(v, tuple) else v
    return out


def valid_keys() -> list[str]:
    return sorted(to_flat(UformerConfig()))


def _coerce(raw, default):
    if isinstance(raw, str):
        text = raw.strip()
        if isinstance(default, bool):
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if isinstance(default, (list, tuple)):
            items = [t for t in text.replace("[", "").replace("]", "").replace(",", " ").split()]
            elem = type(default[0]) if default else float
            return [elem(float(t)) if elem is int else elem(t) for t in items]
        if isinstance(default, int):
            return int(float(text)) if float(text).is_integer() else int(text)
        if isinstance(default, float):
            if "/" in text:
                num, den = text.split("/")
                return float(num) / float(den)
            return float(text)
        return text
    return raw


def from_flat(flat: dict) -> UformerConfig:
    """Build a config from dotted keys; unknown keys raise with the valid-key list."""
    defaults = to_flat(UformerConfig())
    unknown = sorted(set(flat) - set(defaults))
    if unknown:
        raise KeyError(f"unknown config key(s) {unknown}; valid keys: {', '.join(sorted(defaults))}")
    values = dict(defaults)
    for k, v in flat.items():
        values[k] = _coerce(v, defaults[k])

    def build(cls, prefix):
        kwargs = {}
        for f in dataclasses.fields(cls):
            key = prefix + f.name
            if f.name == "attention":
                kwargs[f.name] = build(AttentionConfig, key + ".")
            elif f.name == "conformer":
                kwargs[f.name] = build(ConformerConfig, key + ".")
            elif f.name == "train":
                kwargs[f.name] = build(TrainConfig, key + ".")
            else:
                v = values[key]
                kwargs[f.name] = tuple(v) if isinstance(v, list) else v
        return cls(**kwargs)

    return build(UformerConfig, "")


def parse_text(text: str) -> dict:
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key = value, got {line!r}")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def load(path: str | Path | None = None, overrides: list[str] | dict | None = None) -> UformerConfig:
    flat = parse_text(Path(path).read_text()) if path else {}
    if isinstance(overrides, dict):
        flat.update(overrides)
    elif overrides:
        flat.update(parse_text("\n".join(overrides)))
    return from_flat(flat)


def dumps(cfg: UformerConfig) -> str:
    lines = []
    for k, v in to_flat(cfg).items():
        if isinstance(v, list):
            v = ", ".join(str(x) for x in v)
        lines.append(f"{k} = {v}")
    return "\n".join(lines) + "\n"


def to_json(cfg: UformerConfig) -> str:
    return json.dumps(to_flat(cfg), sort_keys=True)


def from_json(text: str) -> UformerConfig:
    return from_flat(json.loads(text))
