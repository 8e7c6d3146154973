"""Layer primitives: 1-D convolutions, pooling, interpolation, global
layer norm, the conv+norm unit, the three-conv feed-forward stack, and
dropout.

All operate on [channels x time] tensors and are differentiable through
the tape in :mod:`avsep.tensor`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import GeometryError
from .tensor import Tensor, _accum, _unary

__all__ = [
    "Conv1dParams",
    "GlnParams",
    "QParams",
    "FfnParams",
    "conv1d",
    "conv_transpose1d",
    "avg_pool1d",
    "interp_upsample",
    "interp_resample",
    "gln",
    "q_op",
    "ffn",
    "dropout",
    "conv1d_out_len",
    "conv_transpose1d_out_len",
]

GLN_EPS = 1e-8


@dataclass
class Conv1dParams:
    weight: Tensor  # [C_out, C_in, K]
    bias: Tensor | None  # [C_out]
    stride: int = 1
    padding: int = 0

    def __post_init__(self):
        if self.weight.data.ndim != 3:
            raise GeometryError(f"conv weight must be 3-D, got {self.weight.shape}")
        if self.weight.shape[2] < 1 or self.stride < 1 or self.padding < 0:
            raise GeometryError("invalid conv geometry")

    @property
    def out_channels(self) -> int:
        return self.weight.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weight.shape[1]

    @property
    def kernel(self) -> int:
        return self.weight.shape[2]


@dataclass
class GlnParams:
    gain: Tensor  # [C]
    bias: Tensor  # [C]
    eps: float = GLN_EPS


@dataclass
class QParams:
    """A 1-D convolution followed by a global layer norm."""

    conv: Conv1dParams
    gln: GlnParams


@dataclass
class FfnParams:
    """Three chained convolutions followed by one global layer norm."""

    convs: list[Conv1dParams] = field(default_factory=list)
    gln: GlnParams | None = None


def conv1d_out_len(l_in: int, kernel: int, stride: int, padding: int) -> int:
    return (l_in + 2 * padding - kernel) // stride + 1


def conv_transpose1d_out_len(l_in: int, kernel: int, stride: int, padding: int) -> int:
    return (l_in - 1) * stride + kernel - 2 * padding


def _windows(x: np.ndarray, kernel: int, stride: int) -> np.ndarray:
    """Strided view [C, K, L_out] over a padded [C, L] array."""
    c, lp = x.shape
    l_out = (lp - kernel) // stride + 1
    s0, s1 = x.strides
    return np.lib.stride_tricks.as_strided(
        x, shape=(c, kernel, l_out), strides=(s0, s1, s1 * stride)
    )


def conv1d(x: Tensor, p: Conv1dParams) -> Tensor:
    """Cross-correlation with zero padding over the time axis."""
    if x.data.ndim != 2:
        raise GeometryError(f"conv1d expects [C, L], got {x.shape}")
    c_in, l_in = x.shape
    if c_in != p.in_channels:
        raise GeometryError(f"conv1d channel mismatch: input {c_in}, weight {p.in_channels}")
    k, stride, pad = p.kernel, p.stride, p.padding
    l_out = conv1d_out_len(l_in, k, stride, pad)
    if l_out < 1:
        raise GeometryError(f"conv1d input too short: L={l_in}, K={k}, stride={stride}, pad={pad}")

    xp = np.pad(x.data, ((0, 0), (pad, pad))) if pad else x.data
    win = _windows(xp, k, stride)  # [C_in, K, L_out]
    wmat = p.weight.data.reshape(p.out_channels, c_in * k)
    win2 = np.ascontiguousarray(win).reshape(c_in * k, l_out)
    y = wmat @ win2
    if p.bias is not None:
        y = y + p.bias.data[:, None]

    parents = [x, p.weight] + ([p.bias] if p.bias is not None else [])

    def back(g):
        _accum(p.weight, (g @ win2.T).reshape(p.weight.shape))
        if p.bias is not None:
            _accum(p.bias, g.sum(axis=1))
        tmp = (wmat.T @ g).reshape(c_in, k, l_out)
        gxp = np.zeros_like(xp)
        for kk in range(k):
            gxp[:, kk : kk + stride * l_out : stride] += tmp[:, kk, :]
        _accum(x, gxp[:, pad : pad + l_in] if pad else gxp)

    track = any(t.requires_grad or t._parents for t in parents)
    return Tensor(y, _parents=tuple(parents) if track else (),
                  _backward=back if track else None)


def conv_transpose1d(x: Tensor, p: Conv1dParams) -> Tensor:
    """Adjoint of :func:`conv1d` with the same parameters.

    ``x`` must have ``p.out_channels`` channels; the result has
    ``p.in_channels`` channels and length ``(L-1)*stride + K - 2*padding``.
    """
    if x.data.ndim != 2:
        raise GeometryError(f"conv_transpose1d expects [C, L], got {x.shape}")
    c, l_in = x.shape
    if c != p.out_channels:
        raise GeometryError(
            f"conv_transpose1d channel mismatch: input {c}, weight {p.out_channels}"
        )
    k, stride, pad = p.kernel, p.stride, p.padding
    l_out = conv_transpose1d_out_len(l_in, k, stride, pad)
    if l_out < 1:
        raise GeometryError("conv_transpose1d output would be empty")

    c_res = p.in_channels
    wmat = p.weight.data.reshape(c, c_res * k)
    tmp = (wmat.T @ x.data).reshape(c_res, k, l_in)
    full = np.zeros((c_res, (l_in - 1) * stride + k), dtype=x.dtype)
    for kk in range(k):
        full[:, kk : kk + stride * l_in : stride] += tmp[:, kk, :]
    y = full[:, pad : pad + l_out] if pad else full
    if p.bias is not None:
        # transpose-direction bias lives on the result channels (C_in of p)
        if p.bias.shape[0] != c_res:
            raise GeometryError("conv_transpose1d bias length mismatch")
        y = y + p.bias.data[:, None]

    parents = [x, p.weight] + ([p.bias] if p.bias is not None else [])

    def back(g):
        if p.bias is not None:
            _accum(p.bias, g.sum(axis=1))
        gf = np.zeros((c_res, (l_in - 1) * stride + k), dtype=g.dtype)
        gf[:, pad : pad + l_out] = g
        win = np.ascontiguousarray(_windows(gf, k, stride)).reshape(c_res * k, l_in)
        _accum(x, wmat @ win)
        _accum(p.weight, (x.data @ win.T).reshape(c, c_res, k).reshape(p.weight.shape))

    track = any(t.requires_grad or t._parents for t in parents)
    return Tensor(y, _parents=tuple(parents) if track else (),
                  _backward=back if track else None)


def avg_pool1d(x: Tensor, ratio: int) -> Tensor:
    """Non-overlapping window means along time; L must divide by ratio."""
    if ratio < 1:
        raise GeometryError("pool ratio must be >= 1")
    c, l = x.shape
    if l % ratio:
        raise GeometryError(f"length {l} not divisible by pool ratio {ratio}")
    if ratio == 1:
        y = x.data.copy()
    else:
        y = x.data.reshape(c, l // ratio, ratio).mean(axis=2)

    def back(g):
        _accum(x, np.repeat(g / ratio, ratio, axis=1) if ratio > 1 else g)

    return _unary(x, y, back)


def interp_resample(x: Tensor, target_len: int) -> Tensor:
    """Nearest-neighbor temporal resampling: out[c, t] = x[c, floor(t*L/T)]."""
    if target_len < 1:
        raise GeometryError("target length must be positive")
    c, l = x.shape
    if target_len == l:
        idx = None
        y = x.data.copy()
    else:
        idx = (np.arange(target_len) * l) // target_len
        y = x.data[:, idx]

    def back(g):
        if idx is None:
            _accum(x, g)
        else:
            gx = np.zeros((c, l), dtype=g.dtype)
            np.add.at(gx, (np.arange(c)[:, None], idx[None, :]), g)
            _accum(x, gx)

    return _unary(x, y, back)


def interp_upsample(x: Tensor, target_len: int) -> Tensor:
    if target_len < x.shape[1]:
        raise GeometryError(
            f"upsample target {target_len} shorter than input {x.shape[1]}"
        )
    return interp_resample(x, target_len)


def gln(x: Tensor, p: GlnParams) -> Tensor:
    """Global layer norm: zero mean / unit variance over all C*T entries,
    then a learnable per-channel affine."""
    c, l = x.shape
    if p.gain.shape[0] != c or p.bias.shape[0] != c:
        raise GeometryError("gln gain/bias length must equal channel count")
    n = c * l
    m = x.data.mean()
    v = x.data.var()
    inv = 1.0 / np.sqrt(v + p.eps)
    xhat = (x.data - m) * inv
    y = p.gain.data[:, None] * xhat + p.bias.data[:, None]

    parents = (x, p.gain, p.bias)

    def back(g):
        _accum(p.gain, (g * xhat).sum(axis=1))
        _accum(p.bias, g.sum(axis=1))
        u = g * p.gain.data[:, None]
        gx = inv * (u - u.mean() - xhat * (u * xhat).sum() / n)
        _accum(x, gx)

    track = any(t.requires_grad or t._parents for t in parents)
    return Tensor(y, _parents=parents if track else (), _backward=back if track else None)


def q_op(x: Tensor, p: QParams) -> Tensor:
    """Convolution followed by global layer norm; each instance owns its
    own parameters."""
    return gln(conv1d(x, p.conv), p.gln)


def ffn(x: Tensor, p: FfnParams) -> Tensor:
    """Three chained convolutions (middle one padded to preserve length)
    followed by one global layer norm."""
    h = x
    for cp in p.convs:
        h = conv1d(h, cp)
    return gln(h, p.gln)


def pad_right(x: Tensor, n: int) -> Tensor:
    """Append n zero frames along time."""
    if n < 0:
        raise GeometryError("pad length must be nonnegative")
    if n == 0:
        return x

    def back(g):
        _accum(x, g[:, : x.shape[1]])

    return _unary(x, np.pad(x.data, ((0, 0), (0, n))), back)


def crop_time(x: Tensor, length: int) -> Tensor:
    """Keep the first `length` frames along time."""
    if not 1 <= length <= x.shape[1]:
        raise GeometryError(f"cannot crop length {x.shape[1]} to {length}")
    if length == x.shape[1]:
        return x

    def back(g):
        gx = np.zeros_like(x.data)
        gx[:, :length] = g
        _accum(x, gx)

    return _unary(x, x.data[:, :length].copy(), back)


def dropout(x: Tensor, p: float, training: bool, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout; identity at inference or p=0."""
    if not 0.0 <= p < 1.0:
        raise ValueError("dropout probability must be in [0, 1)")
    if not training or p == 0.0:
        return x
    if rng is None:
        raise ValueError("training-mode dropout needs an explicit rng")
    keep = (rng.random(x.shape) >= p).astype(x.dtype)
    inv = 1.0 / (1.0 - p)
    y = x.data * keep * inv

    def back(g):
        _accum(x, g * keep * inv)

    return _unary(x, y, back)
