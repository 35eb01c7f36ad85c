"""Dense real/complex tensor primitives on top of torch.

Complex activations are carried as a :class:`ComplexTensor` pair of real
tensors so that every layer is an explicit composition of real operations.
Reverse-mode gradients come from torch autograd; :func:`backward` wraps it
with the zero-gradient and NaN-diagnostic contract used by training, and
:func:`finite_difference_grad` is the independent oracle used to check it.
"""

from __future__ import annotations

import contextlib
import dataclasses
import functools
import math
from typing import Callable, Iterable, NamedTuple, Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class ConfigError(ValueError):
    """An operation was given an invalid static parameter."""


class GradientError(RuntimeError):
    """Backward pass produced a non-finite gradient."""


class ComplexTensor(NamedTuple):
    re: torch.Tensor
    im: torch.Tensor

    @property
    def shape(self) -> torch.Size:
        return self.re.shape

    def __add__(self, other):
        if isinstance(other, ComplexTensor):
            return ComplexTensor(self.re + other.re, self.im + other.im)
        return ComplexTensor(self.re + other, self.im + other)

    def __sub__(self, other):
        return ComplexTensor(self.re - other.re, self.im - other.im)

    def scale(self, a) -> "ComplexTensor":
        return ComplexTensor(self.re * a, self.im * a)

    def abs(self, eps: float = 0.0) -> torch.Tensor:
        return torch.sqrt(self.re * self.re + self.im * self.im + eps)

    def map(self, fn: Callable[[torch.Tensor], torch.Tensor]) -> "ComplexTensor":
        """Apply ``fn`` to both components independently (split activation)."""
        return ComplexTensor(fn(self.re), fn(self.im))

    def permute(self, *dims) -> "ComplexTensor":
        return ComplexTensor(self.re.permute(*dims), self.im.permute(*dims))

    def to_complex(self) -> torch.Tensor:
        return torch.complex(self.re, self.im)

    @classmethod
    def from_complex(cls, z: torch.Tensor) -> "ComplexTensor":
        return cls(z.real.contiguous(), z.imag.contiguous())


def safe_abs(re: torch.Tensor, im: torch.Tensor) -> torch.Tensor:
    """``sqrt(re^2 + im^2)``, exact in the forward pass, with a zero (sub)gradient at the origin."""
    sq = re * re + im * im
    nz = sq > 0
    return torch.where(nz, torch.sqrt(torch.where(nz, sq, torch.ones_like(sq))), torch.zeros_like(sq))


def is_complex(x) -> bool:
    return isinstance(x, ComplexTensor)


def cmap(fn, x):
    """Apply a real elementwise map to a real tensor or to both parts of a complex one."""
    return x.map(fn) if isinstance(x, ComplexTensor) else fn(x)


def ccat(xs: Sequence, dim: int):
    if isinstance(xs[0], ComplexTensor):
        return ComplexTensor(torch.cat([x.re for x in xs], dim), torch.cat([x.im for x in xs], dim))
    return torch.cat(list(xs), dim)


@contextlib.contextmanager
def precision(dtype: torch.dtype = torch.float64):
    """Temporarily switch the default floating dtype (64-bit mode for gradient checks)."""
    old = torch.get_default_dtype()
    torch.set_default_dtype(dtype)
    try:
        yield
    finally:
        torch.set_default_dtype(old)


def cast(obj, dtype: torch.dtype):
    """Cast floating tensors inside ``obj`` (tensors, ComplexTensors, tuples, dataclasses) to ``dtype``."""
    if isinstance(obj, torch.Tensor):
        return obj.to(dtype) if obj.is_floating_point() else obj
    if isinstance(obj, ComplexTensor):
        return ComplexTensor(obj.re.to(dtype), obj.im.to(dtype))
    if isinstance(obj, (tuple, list)):
        return type(obj)(cast(o, dtype) for o in obj)
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return dataclasses.replace(obj, **{f.name: cast(getattr(obj, f.name), dtype) for f in dataclasses.fields(obj)})
    return obj


def _first_dtype(obj):
    if isinstance(obj, torch.Tensor):
        return obj.dtype if obj.is_floating_point() else None
    if isinstance(obj, (tuple, list)):
        for o in obj:
            d = _first_dtype(o)
            if d is not None:
                return d
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return _first_dtype([getattr(obj, f.name) for f in dataclasses.fields(obj)])
    return None


def accumulate64(fn):
    """Run ``fn`` in float64 when given float32 operands and round the result once back to float32."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        dtype = _first_dtype(args)
        if dtype != torch.float32:
            return fn(*args, **kwargs)
        out = fn(*cast(args, torch.float64), **kwargs)
        return cast(out, torch.float32)

    return wrapper


# --------------------------------------------------------------------------
# products and convolutions


def complex_matmul(a: ComplexTensor, b: ComplexTensor) -> ComplexTensor:
    if a.re.shape[-1] != b.re.shape[-2]:
        raise DimensionError(f"inner axes disagree: {tuple(a.re.shape)} @ {tuple(b.re.shape)}")
    return ComplexTensor(a.re @ b.re - a.im @ b.im, a.re @ b.im + a.im @ b.re)


def _pair(v) -> tuple[int, int]:
    if isinstance(v, int):
        return (v, v)
    return (int(v[0]), int(v[1]))


def _check_geometry(stride, dilation):
    if min(stride) <= 0 or min(dilation) <= 0:
        raise ConfigError(f"stride {stride} and dilation {dilation} must be positive")


def conv_output_length(length: int, kernel: int, stride: int = 1, dilation: int = 1, pads: int = 0) -> int:
    return (length + pads - dilation * (kernel - 1) - 1) // stride + 1


def conv2d(
    x: torch.Tensor,
    w: torch.Tensor,
    bias: torch.Tensor | None = None,
    stride=(1, 1),
    dilation=(1, 1),
    padding=(0, 0, 0, 0),
    groups: int = 1,
) -> torch.Tensor:
    """Cross-correlation of ``x[B, C, T, F]`` with ``w[Co, C/groups, kT, kF]``.

    ``padding`` is ``(t_left, t_right, f_left, f_right)``; a 3-tuple
    ``(t_left, t_right, f)`` pads frequency symmetrically.
    """
    stride, dilation = _pair(stride), _pair(dilation)
    _check_geometry(stride, dilation)
    if len(padding) == 3:
        padding = (padding[0], padding[1], padding[2], padding[2])
    t_l, t_r, f_l, f_r = padding
    if x.shape[1] != w.shape[1] * groups:
        raise DimensionError(f"input has {x.shape[1]} channels, kernel expects {w.shape[1] * groups}")
    if any(padding):
        x = F.pad(x, (f_l, f_r, t_l, t_r))
    for axis, k, d in ((2, w.shape[2], dilation[0]), (3, w.shape[3], dilation[1])):
        if x.shape[axis] < d * (k - 1) + 1:
            raise DimensionError(f"kernel extent {d * (k - 1) + 1} exceeds padded axis {x.shape[axis]}")
    return F.conv2d(x, w, bias, stride=stride, dilation=dilation, groups=groups)


def conv_transpose2d(
    x: torch.Tensor,
    w: torch.Tensor,
    bias: torch.Tensor | None = None,
    stride=(1, 1),
    crop=(0, 0, 0, 0),
    out_size: tuple[int, int] | None = None,
) -> torch.Tensor:
    """Transposed convolution, ``w[C, Co, kT, kF]``.

    The full-length output is cropped by ``crop = (t_left, t_right, f_left,
    f_right)`` (the adjoint of conv2d padding) and then truncated to
    ``out_size`` when given.
    """
    stride = _pair(stride)
    _check_geometry(stride, (1, 1))
    if x.shape[1] != w.shape[0]:
        raise DimensionError(f"input has {x.shape[1]} channels, kernel expects {w.shape[0]}")
    y = F.conv_transpose2d(x, w, bias, stride=stride)
    t_l, t_r, f_l, f_r = crop
    y = y[:, :, t_l : y.shape[2] - t_r, f_l : y.shape[3] - f_r]
    if out_size is not None:
        if y.shape[2] < out_size[0] or y.shape[3] < out_size[1]:
            raise DimensionError(f"transposed output {tuple(y.shape[2:])} smaller than target {out_size}")
        y = y[:, :, : out_size[0], : out_size[1]]
    return y


def complex_conv2d(x: ComplexTensor, w: ComplexTensor, bias: ComplexTensor | None = None, **kw) -> ComplexTensor:
    re = conv2d(x.re, w.re, **kw) - conv2d(x.im, w.im, **kw)
    im = conv2d(x.re, w.im, **kw) + conv2d(x.im, w.re, **kw)
    if bias is not None:
        re = re + bias.re.view(1, -1, 1, 1)
        im = im + bias.im.view(1, -1, 1, 1)
    return ComplexTensor(re, im)


def complex_conv_transpose2d(x: ComplexTensor, w: ComplexTensor, bias: ComplexTensor | None = None, **kw) -> ComplexTensor:
    re = conv_transpose2d(x.re, w.re, **kw) - conv_transpose2d(x.im, w.im, **kw)
    im = conv_transpose2d(x.re, w.im, **kw) + conv_transpose2d(x.im, w.re, **kw)
    if bias is not None:
        re = re + bias.re.view(1, -1, 1, 1)
        im = im + bias.im.view(1, -1, 1, 1)
    return ComplexTensor(re, im)


# --------------------------------------------------------------------------
# elementwise


def swish(x: torch.Tensor) -> torch.Tensor:
    return x * torch.sigmoid(x)


def elementwise(x, kind: str, *, axis: int | None = None, p: float = 0.0, training: bool = False,
                generator: torch.Generator | None = None, slope: torch.Tensor | None = None):
    """Pointwise nonlinearity by name; complex inputs are handled component-wise.

    ``dropout`` draws one keep-mask and applies it to both components of a
    complex input so the phase of surviving entries is untouched.
    """
    if kind == "sigmoid":
        return cmap(torch.sigmoid, x)
    if kind == "tanh":
        return cmap(torch.tanh, x)
    if kind == "swish":
        return cmap(swish, x)
    if kind == "prelu":
        if slope is None:
            raise ConfigError("prelu needs a slope tensor")
        return cmap(lambda t: F.prelu(t, slope), x)
    if kind == "softmax":
        if axis is None:
            raise ConfigError("softmax needs an axis")
        return cmap(lambda t: torch.softmax(t, dim=axis), x)
    if kind == "dropout":
        if not training or p == 0.0:
            return x
        ref = x.re if isinstance(x, ComplexTensor) else x
        keep = (torch.rand(ref.shape, generator=generator, dtype=ref.dtype, device=ref.device) >= p)
        scale = keep.to(ref.dtype) / (1.0 - p)
        return cmap(lambda t: t * scale, x)
    raise ConfigError(f"unknown elementwise kind {kind!r}")


# --------------------------------------------------------------------------
# layers


class DropoutRNG:
    """One seeded generator shared by every dropout site of a model."""

    def __init__(self, seed: int = 0):
        self.generator = torch.Generator().manual_seed(seed)

    def reseed(self, seed: int):
        self.generator.manual_seed(seed)


class Dropout(nn.Module):
    def __init__(self, p: float, rng: DropoutRNG | None = None):
        super().__init__()
        self.p = p
        self.rng = rng

    def forward(self, x):
        gen = self.rng.generator if self.rng is not None else None
        return elementwise(x, "dropout", p=self.p, training=self.training, generator=gen)


def _uniform_(t: torch.Tensor, fan_in: int):
    bound = 1.0 / math.sqrt(max(fan_in, 1))
    with torch.no_grad():
        t.uniform_(-bound, bound)
    return t


class Linear(nn.Module):
    """Affine map over the last axis; real or complex."""

    def __init__(self, n_in: int, n_out: int, complex: bool = False, bias: bool = True):
        super().__init__()
        self.complex = complex
        parts = ("re", "im") if complex else ("",)
        for part in parts:
            suffix = f"_{part}" if part else ""
            self.register_parameter("weight" + suffix, nn.Parameter(_uniform_(torch.empty(n_out, n_in), n_in)))
            b = nn.Parameter(_uniform_(torch.empty(n_out), n_in)) if bias else None
            self.register_parameter("bias" + suffix, b)

    def forward(self, x):
        if not self.complex:
            return F.linear(x, self.weight, self.bias)
        re = F.linear(x.re, self.weight_re) - F.linear(x.im, self.weight_im)
        im = F.linear(x.re, self.weight_im) + F.linear(x.im, self.weight_re)
        if self.bias_re is not None:
            re, im = re + self.bias_re, im + self.bias_im
        return ComplexTensor(re, im)


class Conv2d(nn.Module):
    """2-D convolution on ``[B, C, T, F]``; real or complex.

    ``padding`` is ``(t_left, t_right, f_left, f_right)``.
    """

    def __init__(self, c_in: int, c_out: int, kernel=(1, 1), stride=(1, 1), dilation=(1, 1),
                 padding=(0, 0, 0, 0), groups: int = 1, complex: bool = False, bias: bool = True):
        super().__init__()
        kernel = _pair(kernel)
        self.complex = complex
        self.geometry = dict(stride=_pair(stride), dilation=_pair(dilation), padding=tuple(padding), groups=groups)
        _check_geometry(self.geometry["stride"], self.geometry["dilation"])
        fan_in = c_in // groups * kernel[0] * kernel[1]
        for part in (("re", "im") if complex else ("",)):
            suffix = f"_{part}" if part else ""
            w = _uniform_(torch.empty(c_out, c_in // groups, *kernel), fan_in)
            self.register_parameter("weight" + suffix, nn.Parameter(w))
            self.register_parameter("bias" + suffix, nn.Parameter(_uniform_(torch.empty(c_out), fan_in)) if bias else None)

    def forward(self, x):
        dt = x.dtype if isinstance(x, torch.Tensor) else x.re.dtype
        if not self.complex:
            return conv2d(x, self.weight.to(dt), None if self.bias is None else self.bias.to(dt), **self.geometry)
        b = ComplexTensor(self.bias_re.to(dt), self.bias_im.to(dt)) if self.bias_re is not None else None
        w = ComplexTensor(self.weight_re.to(dt), self.weight_im.to(dt))
        return complex_conv2d(x, w, b, **self.geometry)


class ConvTranspose2d(nn.Module):
    def __init__(self, c_in: int, c_out: int, kernel, stride=(1, 1), crop=(0, 0, 0, 0), complex: bool = False):
        super().__init__()
        kernel = _pair(kernel)
        self.complex = complex
        self.stride, self.crop = _pair(stride), tuple(crop)
        fan_in = c_in * kernel[0] * kernel[1]
        for part in (("re", "im") if complex else ("",)):
            suffix = f"_{part}" if part else ""
            self.register_parameter("weight" + suffix, nn.Parameter(_uniform_(torch.empty(c_in, c_out, *kernel), fan_in)))
            self.register_parameter("bias" + suffix, nn.Parameter(_uniform_(torch.empty(c_out), fan_in)))

    def forward(self, x, out_size=None):
        kw = dict(stride=self.stride, crop=self.crop, out_size=out_size)
        if not self.complex:
            return conv_transpose2d(x, self.weight, self.bias, **kw)
        return complex_conv_transpose2d(
            x, ComplexTensor(self.weight_re, self.weight_im), ComplexTensor(self.bias_re, self.bias_im), **kw
        )


class BatchNorm(nn.Module):
    """Per-channel batch normalization; complex inputs normalize re/im independently."""

    def __init__(self, channels: int, complex: bool = False):
        super().__init__()
        self.complex = complex
        if complex:
            self.bn_re = nn.BatchNorm2d(channels)
            self.bn_im = nn.BatchNorm2d(channels)
        else:
            self.bn = nn.BatchNorm2d(channels)

    def forward(self, x):
        if self.complex:
            return ComplexTensor(self.bn_re(x.re), self.bn_im(x.im))
        return self.bn(x)


class PReLU(nn.Module):
    """One learnable slope per channel (per component for complex), initialized 0.25."""

    def __init__(self, channels: int, complex: bool = False):
        super().__init__()
        self.complex = complex
        if complex:
            self.slope_re = nn.Parameter(torch.full((channels,), 0.25))
            self.slope_im = nn.Parameter(torch.full((channels,), 0.25))
        else:
            self.slope = nn.Parameter(torch.full((channels,), 0.25))

    def forward(self, x):
        if self.complex:
            return ComplexTensor(F.prelu(x.re, self.slope_re), F.prelu(x.im, self.slope_im))
        return F.prelu(x, self.slope)


# --------------------------------------------------------------------------
# gradients


def backward(loss: torch.Tensor, params: Iterable[tuple[str, torch.Tensor]] | nn.Module) -> dict[str, torch.Tensor]:
    """Populate ``.grad`` for every named parameter and return them by name.

    Parameters not reached by the loss get an exact zero gradient. A non-finite
    loss or gradient raises :class:`GradientError` naming the first offender
    (parameters are visited in registration order).
    """
    named = list(params.named_parameters() if isinstance(params, nn.Module) else params)
    if not torch.isfinite(loss).all():
        raise GradientError(f"loss is not finite ({loss.item()})")
    loss.backward()
    grads = {}
    for name, p in named:
        if p.grad is None:
            p.grad = torch.zeros_like(p)
        if not torch.isfinite(p.grad).all():
            raise GradientError(f"non-finite gradient first seen at parameter {name!r}")
        grads[name] = p.grad
    return grads


def finite_difference_grad(fn: Callable[[], torch.Tensor], param: torch.Tensor, step: float = 1e-4,
                           indices: Sequence[int] | None = None) -> torch.Tensor:
    """Central-difference estimate of ``d fn() / d param`` (flattened indices optional).

    Entries not listed in ``indices`` are left as NaN.
    """
    flat = param.data.view(-1)
    out = torch.full_like(flat, float("nan"))
    idx = range(flat.numel()) if indices is None else indices
    with torch.no_grad():
        for i in idx:
            orig = flat[i].item()
            flat[i] = orig + step
            up = fn().item()
            flat[i] = orig - step
            down = fn().item()
            flat[i] = orig
            out[i] = (up - down) / (2 * step)
    return out.view_as(param)


def relative_error(analytic: torch.Tensor, numeric: torch.Tensor, floor: float = 1e-8) -> torch.Tensor:
    return (analytic - numeric).abs() / torch.clamp(analytic.abs(), min=floor)
