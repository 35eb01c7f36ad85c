"""Waveform <-> complex spectrogram with a periodic Hann window and WOLA synthesis."""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .numerics import ComplexTensor, DimensionError


class LengthError(ValueError):
    pass


class SynthesisError(RuntimeError):
    pass


@dataclass(frozen=True)
class STFTParams:
    fft_size: int = 512
    win_length: int = 400
    hop: int = 160
    sample_rate: int = 16000

    @property
    def freq_bins(self) -> int:
        return self.fft_size // 2 + 1

    def num_frames(self, n_samples: int) -> int:
        if n_samples < self.win_length:
            raise LengthError(f"signal of {n_samples} samples is shorter than the {self.win_length}-sample window")
        return 1 + (n_samples - self.win_length) // self.hop


@dataclass
class Spectrogram:
    """Complex grid ``[..., T, F]`` plus the frame parameters that produced it."""

    grid: ComplexTensor
    params: STFTParams

    @property
    def magnitude(self) -> torch.Tensor:
        return self.grid.abs()

    @property
    def phase(self) -> torch.Tensor:
        return torch.atan2(self.grid.im, self.grid.re)


def hann(win_length: int, dtype=None) -> torch.Tensor:
    return torch.hann_window(win_length, periodic=True, dtype=dtype or torch.get_default_dtype())


def stft(x: torch.Tensor, params: STFTParams = STFTParams()) -> Spectrogram:
    """Frame, window, zero-pad at the end to ``fft_size`` and take the real FFT.

    ``x`` is ``[..., N]``; no padding is added around the signal, so the frame
    count is ``1 + (N - win_length) // hop``.
    """
    params.num_frames(x.shape[-1])
    frames = x.unfold(-1, params.win_length, params.hop) * hann(params.win_length, x.dtype)
    spec = torch.fft.rfft(frames, n=params.fft_size, dim=-1)
    return Spectrogram(ComplexTensor.from_complex(spec), params)


def istft(spec: Spectrogram | ComplexTensor, out_len: int, params: STFTParams | None = None,
          edge_tol: float = 1e-10) -> torch.Tensor:
    """Weighted overlap-add inverse with squared-window normalization.

    Samples not covered by any frame come back as zero. Inside the covered
    span a window-energy denominator below ``edge_tol`` raises
    :class:`SynthesisError`, except in the first and last ``win_length``
    samples where the periodic Hann taper legitimately reaches zero.
    """
    if isinstance(spec, Spectrogram):
        params = params or spec.params
        grid = spec.grid
    else:
        grid = spec
    if params is None:
        raise ValueError("istft needs STFT parameters")
    if grid.re.shape[-1] != params.freq_bins:
        raise DimensionError(f"grid has {grid.re.shape[-1]} bins, parameters imply {params.freq_bins}")
    n_frames = grid.re.shape[-2]
    frames = torch.fft.irfft(grid.to_complex(), n=params.fft_size, dim=-1)[..., : params.win_length]
    win = hann(params.win_length, frames.dtype)
    frames = frames * win
    span = (n_frames - 1) * params.hop + params.win_length
    total = max(span, out_len)
    lead = frames.shape[:-2]
    # overlap-add through fold: [B, win, T] -> [B, 1, 1, total]
    cols = frames.reshape(-1, n_frames, params.win_length).transpose(1, 2)
    y = torch.nn.functional.fold(cols, output_size=(1, span), kernel_size=(1, params.win_length),
                                 stride=(1, params.hop)).reshape(*lead, span)
    wsq = (win * win).reshape(1, params.win_length, 1).expand(1, params.win_length, n_frames)
    norm = torch.nn.functional.fold(wsq, output_size=(1, span), kernel_size=(1, params.win_length),
                                    stride=(1, params.hop)).reshape(span)
    interior = norm[params.win_length : span - params.win_length]
    if interior.numel() and interior.min() < edge_tol:
        raise SynthesisError("window overlap leaves an interior sample without support; hop too large")
    safe = torch.where(norm > edge_tol, norm, torch.ones_like(norm))
    y = torch.where(norm > edge_tol, y / safe, torch.zeros_like(y))
    if total > span:
        y = torch.nn.functional.pad(y, (0, total - span))
    return y[..., :out_len]


def compress_magnitude(mag: torch.Tensor, exponent: float = 0.5) -> torch.Tensor:
    if (mag < 0).any():
        raise ValueError("magnitude must be non-negative")
    return mag.pow(exponent)
