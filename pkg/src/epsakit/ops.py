"""Neural operators with explicit backward passes.

Each differentiable operator returns a GradPair: the forward output plus a
closure mapping an upstream gradient to (input gradient, parameter
gradients). Convolutions run as grouped matmuls over an im2col buffer;
backwards are hand-derived and validated against the central
finite-difference oracle that also lives here.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np

from .tensor import Tensor, _wrap

__all__ = [
    "Conv2dParams",
    "LinearParams",
    "BatchNormParams",
    "GradPair",
    "conv2d",
    "conv_output_size",
    "global_avg_pool",
    "linear",
    "relu",
    "sigmoid",
    "softmax_over_scales",
    "batch_norm",
    "max_pool",
    "finite_difference_gradient",
    "finite_difference_array",
    "max_relative_error",
]

ArrayOrTensor = Union[Tensor, np.ndarray]
ParamGrads = dict[str, np.ndarray]


def _rng(seed_or_rng: int | np.random.Generator) -> np.random.Generator:
    if isinstance(seed_or_rng, np.random.Generator):
        return seed_or_rng
    return np.random.Generator(np.random.PCG64(seed_or_rng))


def fanin_uniform(shape: tuple[int, ...], fan_in: int, rng: np.random.Generator) -> np.ndarray:
    """Fan-in scaled uniform init: U(-b, b) with b = 1/sqrt(fan_in)."""
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


@dataclass
class Conv2dParams:
    """Grouped 2-D convolution parameters.

    weight is (out_channels, in_channels // groups, k, k); output group g
    reads only input group g.
    """

    in_channels: int
    out_channels: int
    kernel: int
    stride: int = 1
    padding: int = 0
    groups: int = 1
    weight: Tensor | None = None
    bias: np.ndarray | None = None

    def __post_init__(self) -> None:
        if self.kernel <= 0 or self.kernel % 2 == 0:
            raise ValueError(f"kernel must be odd and positive, got {self.kernel}")
        if self.stride <= 0 or self.padding < 0:
            raise ValueError(f"bad stride/padding: {self.stride}/{self.padding}")
        if self.in_channels % self.groups or self.out_channels % self.groups:
            raise ValueError(
                f"channels ({self.in_channels}, {self.out_channels}) "
                f"not divisible by groups {self.groups}"
            )
        wshape = (self.out_channels, self.in_channels // self.groups, self.kernel, self.kernel)
        if self.weight is None:
            self.weight = _wrap(np.zeros(wshape))
        elif self.weight.shape != wshape:
            raise ValueError(f"weight shape {self.weight.shape} != expected {wshape}")
        if self.bias is not None and self.bias.shape != (self.out_channels,):
            raise ValueError(f"bias length {self.bias.shape} != {self.out_channels}")

    @classmethod
    def init(
        cls,
        in_channels: int,
        out_channels: int,
        kernel: int,
        stride: int = 1,
        padding: int = 0,
        groups: int = 1,
        bias: bool = False,
        seed: int | np.random.Generator = 0,
    ) -> "Conv2dParams":
        rng = _rng(seed)
        fan_in = (in_channels // groups) * kernel * kernel
        w = fanin_uniform((out_channels, in_channels // groups, kernel, kernel), fan_in, rng)
        b = np.zeros(out_channels) if bias else None
        return cls(in_channels, out_channels, kernel, stride, padding, groups, _wrap(w), b)

    @property
    def param_count(self) -> int:
        n = self.weight.size
        if self.bias is not None:
            n += self.bias.size
        return n


@dataclass
class LinearParams:
    """Affine map: weight (out_features, in_features), optional bias."""

    weight: np.ndarray
    bias: np.ndarray | None = None

    def __post_init__(self) -> None:
        if self.weight.ndim != 2:
            raise ValueError(f"linear weight must be 2-D, got {self.weight.shape}")
        if self.bias is not None and self.bias.shape != (self.weight.shape[0],):
            raise ValueError(f"bias shape {self.bias.shape} != ({self.weight.shape[0]},)")

    @classmethod
    def init(
        cls,
        in_features: int,
        out_features: int,
        bias: bool = True,
        seed: int | np.random.Generator = 0,
    ) -> "LinearParams":
        rng = _rng(seed)
        w = fanin_uniform((out_features, in_features), in_features, rng)
        b = np.zeros(out_features) if bias else None
        return cls(w, b)

    @property
    def in_features(self) -> int:
        return self.weight.shape[1]

    @property
    def out_features(self) -> int:
        return self.weight.shape[0]

    @property
    def param_count(self) -> int:
        return self.weight.size + (0 if self.bias is None else self.bias.size)


@dataclass
class BatchNormParams:
    """Per-channel affine normalization state.

    Training mode mutates running_mean/running_var in place, so a parameter
    set being trained must not be shared across concurrent callers.
    """

    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    eps: float = 1e-5
    momentum: float = 0.1

    def __post_init__(self) -> None:
        c = self.gamma.shape[0]
        for name in ("beta", "running_mean", "running_var"):
            if getattr(self, name).shape != (c,):
                raise ValueError(f"batch-norm field {name} has wrong length")
        if np.any(self.running_var < 0):
            raise ValueError("running_var must be non-negative")
        if self.eps <= 0 or not (0.0 < self.momentum < 1.0):
            raise ValueError(f"bad eps/momentum: {self.eps}/{self.momentum}")

    @classmethod
    def init(cls, channels: int) -> "BatchNormParams":
        return cls(
            gamma=np.ones(channels),
            beta=np.zeros(channels),
            running_mean=np.zeros(channels),
            running_var=np.ones(channels),
        )

    @property
    def param_count(self) -> int:
        # gamma + beta; running statistics are state, not parameters
        return self.gamma.size + self.beta.size


@dataclass
class GradPair:
    """Forward output plus the matching vector-Jacobian product."""

    output: ArrayOrTensor
    backward: Callable[[ArrayOrTensor], tuple[ArrayOrTensor, ParamGrads]]


def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    out = (size + 2 * padding - kernel) // stride + 1
    if out <= 0:
        raise ValueError(
            f"convolution output collapses: size={size} kernel={kernel} "
            f"stride={stride} padding={padding}"
        )
    return out


def _im2col(x: np.ndarray, k: int, stride: int, padding: int, pad_value: float = 0.0):
    """Return (cols, out_h, out_w) with cols shaped (N, C, k, k, Ho, Wo)."""
    n, c, h, w = x.shape
    ho = conv_output_size(h, k, stride, padding)
    wo = conv_output_size(w, k, stride, padding)
    if padding:
        xp = np.full((n, c, h + 2 * padding, w + 2 * padding), pad_value)
        xp[:, :, padding : padding + h, padding : padding + w] = x
    else:
        xp = x
    cols = np.empty((n, c, k, k, ho, wo))
    for i in range(k):
        for j in range(k):
            cols[:, :, i, j] = xp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride]
    return cols, ho, wo


def _col2im(dcols: np.ndarray, in_hw: tuple[int, int], k: int, stride: int, padding: int):
    """Scatter-add the im2col gradient back to input layout."""
    n, c, _, _, ho, wo = dcols.shape
    h, w = in_hw
    dxp = np.zeros((n, c, h + 2 * padding, w + 2 * padding))
    for i in range(k):
        for j in range(k):
            dxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += dcols[
                :, :, i, j
            ]
    if padding:
        return dxp[:, :, padding : padding + h, padding : padding + w]
    return dxp


def conv2d(x: Tensor, p: Conv2dParams) -> GradPair:
    """Grouped direct convolution; backward yields input/weight/bias grads."""
    if x.c != p.in_channels:
        raise ValueError(f"input has {x.c} channels, expected {p.in_channels}")
    n = x.n
    k, s, pad, g = p.kernel, p.stride, p.padding, p.groups
    cin_g = p.in_channels // g
    cout_g = p.out_channels // g

    cols, ho, wo = _im2col(x.data, k, s, pad)
    loc = ho * wo
    # (N, G, Cg*k*k, L) views for per-group matmuls
    cols_g = cols.reshape(n, g, cin_g * k * k, loc)
    w_g = p.weight.data.reshape(g, cout_g, cin_g * k * k)

    out = np.matmul(w_g[None], cols_g)  # (N, G, Og, L)
    out = out.reshape(n, p.out_channels, ho, wo)
    if p.bias is not None:
        out = out + p.bias[None, :, None, None]

    in_hw = (x.h, x.w)

    def backward(dy: Tensor):
        d = dy.data if isinstance(dy, Tensor) else np.asarray(dy, dtype=np.float64)
        if d.shape != (n, p.out_channels, ho, wo):
            raise ValueError(f"upstream gradient shape {d.shape} != {(n, p.out_channels, ho, wo)}")
        dy_g = d.reshape(n, g, cout_g, loc)
        dw = np.matmul(dy_g, cols_g.transpose(0, 1, 3, 2)).sum(axis=0)  # (G, Og, Cg*k*k)
        dw = dw.reshape(p.out_channels, cin_g, k, k)
        dcols_g = np.matmul(w_g.transpose(0, 2, 1)[None], dy_g)  # (N, G, Cg*k*k, L)
        dcols = dcols_g.reshape(n, p.in_channels, k, k, ho, wo)
        dx = _col2im(dcols, in_hw, k, s, pad)
        grads: ParamGrads = {"weight": dw}
        if p.bias is not None:
            grads["bias"] = d.sum(axis=(0, 2, 3))
        return _wrap(dx), grads

    return GradPair(_wrap(out), backward)


def global_avg_pool(x: Tensor) -> Tensor:
    """Spatial mean per channel, shape (N, C, 1, 1)."""
    return _wrap(x.data.mean(axis=(2, 3), keepdims=True))


def _global_avg_pool_vjp(in_shape: tuple[int, int, int, int], dy: np.ndarray) -> np.ndarray:
    _, _, h, w = in_shape
    return np.broadcast_to(dy / (h * w), in_shape).copy()


def linear(x: ArrayOrTensor, p: LinearParams) -> GradPair:
    """Affine map per sample.

    Accepts a (N, C, 1, 1) tensor (returns (N, out, 1, 1)) or a plain
    (N, C) array (returns (N, out)).
    """
    tensor_in = isinstance(x, Tensor)
    if tensor_in:
        if (x.h, x.w) != (1, 1):
            raise ValueError(f"linear expects (N, C, 1, 1), got {x.shape}")
        flat = x.data.reshape(x.n, x.c)
    else:
        flat = np.asarray(x, dtype=np.float64)
        if flat.ndim != 2:
            raise ValueError(f"linear expects a (N, C) array, got shape {flat.shape}")
    if flat.shape[1] != p.in_features:
        raise ValueError(f"input features {flat.shape[1]} != {p.in_features}")

    out = flat @ p.weight.T
    if p.bias is not None:
        out = out + p.bias

    def backward(dy: ArrayOrTensor):
        d = dy.data if isinstance(dy, Tensor) else np.asarray(dy, dtype=np.float64)
        d2 = d.reshape(flat.shape[0], p.out_features)
        dx = d2 @ p.weight
        grads: ParamGrads = {"weight": d2.T @ flat}
        if p.bias is not None:
            grads["bias"] = d2.sum(axis=0)
        if tensor_in:
            return _wrap(dx.reshape(flat.shape[0], p.in_features, 1, 1)), grads
        return dx, grads

    if tensor_in:
        return GradPair(_wrap(out.reshape(flat.shape[0], p.out_features, 1, 1)), backward)
    return GradPair(out, backward)


def relu(x: Tensor) -> GradPair:
    mask = x.data > 0

    def backward(dy: Tensor):
        return _wrap(dy.data * mask), {}

    return GradPair(_wrap(np.where(mask, x.data, 0.0)), backward)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    # Split by sign to avoid exp overflow either direction.
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid(x: Tensor) -> GradPair:
    y = _sigmoid(x.data)

    def backward(dy: Tensor):
        return _wrap(dy.data * y * (1.0 - y)), {}

    return GradPair(_wrap(y), backward)


def softmax_over_scales(z: np.ndarray) -> np.ndarray:
    """Softmax across axis 1 of a (N, S, C', 1, 1) stack of scale logits.

    Computed with max subtraction; per (n, c') position the S outputs are
    positive and sum to 1.
    """
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 5:
        raise ValueError(f"expected (N, S, C', 1, 1), got shape {z.shape}")
    m = z.max(axis=1, keepdims=True)
    e = np.exp(z - m)
    return e / e.sum(axis=1, keepdims=True)


def _softmax_over_scales_vjp(att: np.ndarray, datt: np.ndarray) -> np.ndarray:
    inner = (att * datt).sum(axis=1, keepdims=True)
    return att * (datt - inner)


def batch_norm(x: Tensor, p: BatchNormParams, training: bool) -> GradPair:
    """Batch normalization over (N, H, W) per channel.

    Training mode normalizes with batch statistics and updates the running
    statistics in place (torch-style: running <- (1-m)*running + m*batch,
    with the unbiased variance feeding the running update).
    """
    if x.c != p.gamma.shape[0]:
        raise ValueError(f"input has {x.c} channels, expected {p.gamma.shape[0]}")
    xd = x.data
    axes = (0, 2, 3)
    m = x.n * x.h * x.w

    if training:
        mean = xd.mean(axis=axes)
        var = xd.var(axis=axes)
        corr = m / (m - 1) if m > 1 else 1.0
        p.running_mean[:] = (1 - p.momentum) * p.running_mean + p.momentum * mean
        p.running_var[:] = (1 - p.momentum) * p.running_var + p.momentum * var * corr
    else:
        mean = p.running_mean
        var = p.running_var

    inv_std = 1.0 / np.sqrt(var + p.eps)
    xhat = (xd - mean[None, :, None, None]) * inv_std[None, :, None, None]
    out = p.gamma[None, :, None, None] * xhat + p.beta[None, :, None, None]

    def backward(dy: Tensor):
        d = dy.data
        dgamma = (d * xhat).sum(axis=axes)
        dbeta = d.sum(axis=axes)
        dxhat = d * p.gamma[None, :, None, None]
        if training:
            # Batch statistics depend on x, so the Jacobian couples samples.
            sum_dxhat = dxhat.sum(axis=axes)
            sum_dxhat_xhat = (dxhat * xhat).sum(axis=axes)
            dx = (
                dxhat
                - (sum_dxhat / m)[None, :, None, None]
                - xhat * (sum_dxhat_xhat / m)[None, :, None, None]
            ) * inv_std[None, :, None, None]
        else:
            dx = dxhat * inv_std[None, :, None, None]
        return _wrap(dx), {"gamma": dgamma, "beta": dbeta}

    return GradPair(_wrap(out), backward)


def max_pool(x: Tensor, kernel: int = 3, stride: int = 2, padding: int = 1) -> GradPair:
    """Windowed max; gradient routes to the first maximum in each window."""
    cols, ho, wo = _im2col(x.data, kernel, stride, padding, pad_value=-np.inf)
    n, c = x.n, x.c
    flat = cols.reshape(n, c, kernel * kernel, ho * wo)
    idx = flat.argmax(axis=2)
    out = np.take_along_axis(flat, idx[:, :, None, :], axis=2)[:, :, 0, :].reshape(n, c, ho, wo)
    in_hw = (x.h, x.w)

    def backward(dy: Tensor):
        d = dy.data.reshape(n, c, 1, ho * wo)
        dflat = np.zeros_like(flat)
        np.put_along_axis(dflat, idx[:, :, None, :], d, axis=2)
        dcols = dflat.reshape(n, c, kernel, kernel, ho, wo)
        return _wrap(_col2im(dcols, in_hw, kernel, stride, padding)), {}

    return GradPair(_wrap(out), backward)


def finite_difference_gradient(
    f: Callable[[Tensor], float], x: Tensor, epsilon: float = 1e-5
) -> Tensor:
    """Central-difference gradient of a scalar function, coordinate by coordinate."""
    base = x.data.copy()
    grad = np.zeros_like(base)
    it = np.nditer(base, flags=["multi_index"])
    while not it.finished:
        ix = it.multi_index
        orig = base[ix]
        base[ix] = orig + epsilon
        fp = f(Tensor(base))
        base[ix] = orig - epsilon
        fm = f(Tensor(base))
        base[ix] = orig
        grad[ix] = (fp - fm) / (2.0 * epsilon)
        it.iternext()
    return _wrap(grad)


def finite_difference_array(
    f: Callable[[np.ndarray], float], a: np.ndarray, epsilon: float = 1e-5
) -> np.ndarray:
    """Same oracle for a raw parameter array."""
    base = a.astype(np.float64).copy()
    grad = np.zeros_like(base)
    it = np.nditer(base, flags=["multi_index"])
    while not it.finished:
        ix = it.multi_index
        orig = base[ix]
        base[ix] = orig + epsilon
        fp = f(base)
        base[ix] = orig - epsilon
        fm = f(base)
        base[ix] = orig
        grad[ix] = (fp - fm) / (2.0 * epsilon)
        it.iternext()
    return grad


def max_relative_error(analytic, numeric, clamp: float = 1e-8) -> float:
    """Element-wise |a - n| / max(|n|, clamp), reduced with max."""
    a = analytic.data if isinstance(analytic, Tensor) else np.asarray(analytic)
    n = numeric.data if isinstance(numeric, Tensor) else np.asarray(numeric)
    if a.shape != n.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {n.shape}")
    denom = np.maximum(np.abs(n), clamp)
    return float(np.max(np.abs(a - n) / denom))
