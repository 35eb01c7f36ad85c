"""Synthetic reverberant/noisy mixtures: image-method RIRs, early/late split, SNR mixing."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.signal import fftconvolve

SOUND_SPEED = 343.0


class RoomConfigError(ValueError):
    pass


@dataclass
class RoomSpec:
    dimensions: tuple[float, float, float]
    source_pos: tuple[float, float, float]
    mic_pos: tuple[float, float, float]
    rt60: float
    sample_rate: int = 16000
    max_order: int = -1  # -1: every image arriving within ``length``
    sound_speed: float = SOUND_SPEED
    absorption: float | None = None  # overrides the Sabine-derived value
    length: int | None = None  # samples; default covers rt60

    def __post_init__(self):
        dims = np.asarray(self.dimensions, float)
        for name in ("source_pos", "mic_pos"):
            p = np.asarray(getattr(self, name), float)
            if np.any(p <= 0) or np.any(p >= dims):
                raise RoomConfigError(f"{name} {tuple(p)} is not strictly inside room {tuple(dims)}")

    def sabine_absorption(self) -> float:
        lx, ly, lz = self.dimensions
        volume = lx * ly * lz
        surface = 2 * (lx * ly + lx * lz + ly * lz)
        return 24 * math.log(10) * volume / (self.sound_speed * surface * self.rt60)

    def wall_absorption(self) -> float:
        if self.absorption is not None:
            return self.absorption
        if self.rt60 <= 0:
            return 1.0
        a = self.sabine_absorption()
        if a > 1:
            raise RoomConfigError(f"rt60={self.rt60}s is unreachable in a {self.dimensions} room (absorption {a:.3f} > 1)")
        return a


@dataclass
class MixtureSample:
    noisy: np.ndarray
    target: np.ndarray
    snr_db: float
    rt60: float
    seed: int
    meta: dict = field(default_factory=dict)


def image_rir(spec: RoomSpec) -> np.ndarray:
    """Image-source impulse response of a shoebox room with uniform wall absorption.

    Each image contributes ``beta**reflections / (4 pi d)`` at sample
    ``round(fs d / c)``, with ``beta = sqrt(1 - absorption)``.
    """
    fs, c = spec.sample_rate, spec.sound_speed
    beta = math.sqrt(max(0.0, 1.0 - spec.wall_absorption()))
    L = np.asarray(spec.dimensions, float)
    src = np.asarray(spec.source_pos, float)
    mic = np.asarray(spec.mic_pos, float)
    direct = float(np.linalg.norm(src - mic))
    if spec.length is not None:
        n = spec.length
    else:
        n = int(math.ceil(max(spec.rt60, 0.0) * fs)) + int(math.ceil(direct / c * fs)) + 1
    h = np.zeros(n)
    if beta == 0.0 or spec.max_order == 0:
        orders = 0
    else:
        orders = spec.max_order
    r_max = n / fs * c
    # per-axis image offsets: position = (1 - 2u) src + 2 k L, reflections = |k - u| + |k|
    axes = []
    for a in range(3):
        k_lim = int(math.ceil(r_max / (2 * L[a]))) + 1
        if orders >= 0:
            k_lim = min(k_lim, orders + 1)
        k = np.arange(-k_lim, k_lim + 1)
        offs, refl = [], []
        for u in (0, 1):
            offs.append((1 - 2 * u) * src[a] + 2 * k * L[a] - mic[a])
            refl.append(np.abs(k - u) + np.abs(k))
        axes.append((np.concatenate(offs), np.concatenate(refl)))
    (dx, rx), (dy, ry), (dz, rz) = axes
    log_beta = math.log(beta) if beta > 0 else -np.inf
    for x_off, x_ref in zip(dx, rx):
        dist = np.sqrt(x_off**2 + dy[:, None] ** 2 + dz[None, :] ** 2)
        refl = x_ref + ry[:, None] + rz[None, :]
        keep = dist < r_max
        if orders >= 0:
            keep &= refl <= orders
        if not keep.any():
            continue
        d = dist[keep]
        r = refl[keep]
        if beta > 0:
            amp = np.exp(r * log_beta) / (4 * np.pi * d)
        else:
            amp = np.where(r == 0, 1.0 / (4 * np.pi * d), 0.0)
        idx = np.rint(fs * d / c).astype(np.int64)
        ok = idx < n
        np.add.at(h, idx[ok], amp[ok])
    return h


def onset_index(rir: np.ndarray, threshold: float = 0.01) -> int:
    peak = np.max(np.abs(rir)) if rir.size else 0.0
    if peak == 0:
        raise ValueError("impulse response is all zeros")
    return int(np.argmax(np.abs(rir) >= threshold * peak))


def split_early(rir: np.ndarray, sample_rate: int = 16000, window: float = 0.05,
                threshold: float = 0.01) -> tuple[np.ndarray, np.ndarray]:
    """Split a RIR into the part within ``window`` seconds of the direct path and the rest."""
    if rir.size == 0:
        raise ValueError("empty impulse response")
    end = onset_index(rir, threshold) + int(round(window * sample_rate))
    early = np.zeros_like(rir)
    early[:end] = rir[:end]
    return early, rir - early


def schroeder_t60(rir: np.ndarray, sample_rate: int = 16000, fit_db: tuple[float, float] = (-5.0, -25.0)) -> float:
    """T60 from a linear fit to the backward-integrated energy decay (T20 style by default)."""
    energy = np.cumsum(rir[::-1] ** 2)[::-1]
    edc = 10 * np.log10(energy / energy[0] + 1e-300)
    hi, lo = fit_db
    i0 = int(np.argmax(edc <= hi))
    i1 = int(np.argmax(edc <= lo))
    if i1 <= i0:
        raise ValueError("decay curve does not span the fit range")
    t = np.arange(i0, i1) / sample_rate
    slope = np.polyfit(t, edc[i0:i1], 1)[0]
    return -60.0 / slope


def energy(x: np.ndarray) -> float:
    return float(np.sum(np.asarray(x, float) ** 2))


def mix_at_snr(speech: np.ndarray, noise: np.ndarray, snr_db: float) -> tuple[np.ndarray, np.ndarray]:
    """Scale ``noise`` to the requested SNR against ``speech``; returns (mixture, scaled noise)."""
    if len(speech) != len(noise):
        raise ValueError("speech and noise lengths differ")
    es, en = energy(speech), energy(noise)
    if es == 0 or en == 0:
        raise ValueError("speech and noise must have non-zero energy")
    scaled = noise * math.sqrt(es / (en * 10 ** (snr_db / 10)))
    return speech + scaled, scaled


# --------------------------------------------------------------------------
# sources


def sinusoid_bank(n: int, rng: np.random.Generator, sample_rate: int = 16000, n_tones: int = 6) -> np.ndarray:
    """Harmonic tones with a slow syllable-like amplitude envelope."""
    t = np.arange(n) / sample_rate
    f0 = rng.uniform(110, 260)
    x = np.zeros(n)
    for k in range(1, n_tones + 1):
        if k * f0 >= sample_rate / 2:
            break
        x += rng.uniform(0.3, 1.0) / k * np.sin(2 * np.pi * k * f0 * t + rng.uniform(0, 2 * np.pi))
    env = 0.55 + 0.45 * np.sin(2 * np.pi * rng.uniform(2.5, 5.0) * t + rng.uniform(0, 2 * np.pi))
    return x * env


def colored_noise(n: int, rng: np.random.Generator, exponent: float = 1.0) -> np.ndarray:
    """Noise with a 1/f**exponent power spectrum (0 white, 1 pink)."""
    spec = np.fft.rfft(rng.standard_normal(n))
    f = np.arange(spec.size, dtype=float)
    f[0] = 1.0
    x = np.fft.irfft(spec / f ** (exponent / 2), n)
    return x / (np.std(x) + 1e-12)


def white_noise(n: int, rng: np.random.Generator) -> np.ndarray:
    return rng.standard_normal(n)


Source = Callable[[int, np.random.Generator], np.ndarray]

SPEECH_SOURCES: dict[str, Source] = {
    "sinusoid_bank": sinusoid_bank,
    "colored": lambda n, rng: colored_noise(n, rng, 1.5),
}
NOISE_SOURCES: dict[str, Source] = {
    "white": white_noise,
    "pink": lambda n, rng: colored_noise(n, rng, 1.0),
}


class Corpus:
    """Audio files listed in a JSON-lines manifest, read lazily as chunk sources."""

    def __init__(self, paths: Sequence[str | Path]):
        if not paths:
            raise ValueError("empty corpus")
        self.paths = [Path(p) for p in paths]
        self._cache: dict[Path, np.ndarray] = {}

    def _load(self, p: Path) -> np.ndarray:
        if p not in self._cache:
            from .wavio import read_wav

            self._cache[p] = read_wav(p)[0].astype(np.float64)
        return self._cache[p]

    def __call__(self, n: int, rng: np.random.Generator) -> np.ndarray:
        x = self._load(self.paths[rng.integers(len(self.paths))])
        if x.size == 0:
            raise ValueError("empty audio file in corpus")
        start = int(rng.integers(x.size))
        reps = int(math.ceil((start + n) / x.size))
        return np.tile(x, reps)[start : start + n]  # loops short files


def read_manifest(path: str | Path) -> tuple[Corpus | None, Corpus | None]:
    speech, noise = [], []
    base = Path(path).parent
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        p = Path(rec["path"])
        p = p if p.is_absolute() else base / p
        (speech if rec["kind"] == "speech" else noise).append(p)
    return (Corpus(speech) if speech else None), (Corpus(noise) if noise else None)


# --------------------------------------------------------------------------
# batch sampling


@dataclass
class SimConfig:
    sample_rate: int = 16000
    chunk_seconds: float = 4.0
    snr_range: tuple[float, float] = (-5.0, 15.0)
    rt60_range: tuple[float, float] = (0.2, 1.2)
    room_min: tuple[float, float, float] = (3.0, 3.0, 2.5)
    room_max: tuple[float, float, float] = (10.0, 8.0, 4.0)
    wall_margin: float = 0.5
    early_window: float = 0.05
    speech: str = "sinusoid_bank"
    noise: str = "white"


def random_room(rng: np.random.Generator, cfg: SimConfig, rt60: float) -> RoomSpec:
    for _ in range(100):
        dims = tuple(float(v) for v in rng.uniform(cfg.room_min, cfg.room_max))
        lo = np.full(3, cfg.wall_margin)
        src = tuple(float(v) for v in rng.uniform(lo, np.asarray(dims) - lo))
        mic = tuple(float(v) for v in rng.uniform(lo, np.asarray(dims) - lo))
        spec = RoomSpec(dims, src, mic, rt60, cfg.sample_rate)
        if spec.sabine_absorption() <= 1:
            return spec
    raise RoomConfigError(f"could not draw a room supporting rt60={rt60}")


def simulate_item(speech: np.ndarray, noise: np.ndarray, room: RoomSpec, snr_db: float,
                  early_window: float = 0.05) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return (noisy, early-reverberant target, scaled noise), all of the speech length."""
    rir = image_rir(room)
    early, _ = split_early(rir, room.sample_rate, early_window)
    n = len(speech)
    reverberant = fftconvolve(speech, rir)[:n]
    target = fftconvolve(speech, early)[:n]
    noisy, scaled = mix_at_snr(reverberant, noise, snr_db)
    return noisy, target, scaled


def sample_item(seed: int, cfg: SimConfig = SimConfig(), speech_src: Source | None = None,
                noise_src: Source | None = None) -> MixtureSample:
    rng = np.random.default_rng(seed)
    n = int(round(cfg.chunk_seconds * cfg.sample_rate))
    speech_src = speech_src or SPEECH_SOURCES[cfg.speech]
    noise_src = noise_src or NOISE_SOURCES[cfg.noise]
    speech = speech_src(n, rng)
    noise = noise_src(n, rng)
    rt60 = float(rng.uniform(*cfg.rt60_range))
    snr = float(rng.uniform(*cfg.snr_range))
    room = random_room(rng, cfg, rt60)
    noisy, target, _ = simulate_item(speech, noise, room, snr, cfg.early_window)
    meta = {"room": asdict(room), "snr_db": snr, "rt60": rt60, "seed": seed}
    return MixtureSample(noisy, target, snr, rt60, seed, meta)


def item_seeds(seed: int, count: int) -> list[int]:
    """Independent per-item seeds derived from one run seed."""
    children = np.random.SeedSequence(seed).spawn(count)
    return [int(c.generate_state(1)[0]) for c in children]


def sample_batch(count: int, seed: int, cfg: SimConfig = SimConfig(), speech_src: Source | None = None,
                 noise_src: Source | None = None) -> list[MixtureSample]:
    return [sample_item(s, cfg, speech_src, noise_src) for s in item_seeds(seed, count)]
