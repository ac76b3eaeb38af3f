"""Pyramid squeeze attention (PSA).

Pipeline: S parallel grouped convolutions with growing kernel sizes each
squeeze the full C-channel input down to C' = C/S channels; a shared
squeeze-excitation weighter turns each branch map into per-channel logits;
a softmax across the S scales at every (sample, channel) position converts
the stacked logits into competing attention weights; each branch map is
rescaled by its weights and the branches are concatenated back to C
channels.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .ops import (
    Conv2dParams,
    GradPair,
    LinearParams,
    _global_avg_pool_vjp,
    _rng,
    _softmax_over_scales_vjp,
    conv2d,
    global_avg_pool,
    linear,
    relu,
    sigmoid,
    softmax_over_scales,
)
from .tensor import Tensor, _wrap, concat_channels

__all__ = [
    "PsaConfig",
    "SeWeightParams",
    "PsaParams",
    "kernel_to_group",
    "default_kernels",
    "default_groups",
    "se_weight",
    "spc_forward",
    "psa_forward",
    "psa_with_grad",
]


def kernel_to_group(k: int) -> int:
    """Group size rule 2^((k-1)/2) for odd k >= 3, with the k=3 override to 1."""
    if k < 3 or k % 2 == 0:
        raise ValueError(f"kernel must be odd and >= 3, got {k}")
    if k == 3:
        return 1
    return 2 ** ((k - 1) // 2)


def default_kernels(scales: int) -> tuple[int, ...]:
    """Kernel ladder 3, 5, 7, ... (2*(i+1)+1 for branch i)."""
    return tuple(2 * (i + 1) + 1 for i in range(scales))


def default_groups(kernels: Sequence[int], channels: int, scales: int) -> tuple[int, ...]:
    """Per-branch groups from the kernel rule, clamped to divide C' = C/S.

    The clamp only matters for toy-sized channel counts; the canonical
    configurations are untouched by it.
    """
    cp = channels // scales
    out = []
    for k in kernels:
        g = kernel_to_group(k)
        while cp % g or channels % g:
            g //= 2
        out.append(g)
    return tuple(out)


@dataclass(frozen=True)
class PsaConfig:
    """Hyperparameters of one PSA module."""

    channels: int
    scales: int = 4
    kernels: tuple[int, ...] = (3, 5, 7, 9)
    groups: tuple[int, ...] = (1, 4, 8, 16)
    se_reduction: int = 16
    stride: int = 1

    def __post_init__(self) -> None:
        object.__setattr__(self, "kernels", tuple(self.kernels))
        object.__setattr__(self, "groups", tuple(self.groups))
        if self.channels <= 0 or self.scales <= 0:
            raise ValueError("channels and scales must be positive")
        if len(self.kernels) != self.scales or len(self.groups) != self.scales:
            raise ValueError(
                f"need {self.scales} kernels and groups, got "
                f"{len(self.kernels)}/{len(self.groups)}"
            )
        if self.channels % self.scales:
            raise ValueError(f"channels {self.channels} not divisible by scales {self.scales}")
        cp = self.channels // self.scales
        for k, g in zip(self.kernels, self.groups):
            if k <= 0 or k % 2 == 0:
                raise ValueError(f"kernel sizes must be odd, got {k}")
            if self.channels % g or cp % g:
                raise ValueError(
                    f"group {g} must divide both input channels {self.channels} "
                    f"and branch channels {cp}"
                )
        if self.se_reduction <= 0 or self.stride <= 0:
            raise ValueError("se_reduction and stride must be positive")

    @property
    def branch_channels(self) -> int:
        return self.channels // self.scales

    @classmethod
    def default(cls, channels: int, scales: int = 4, stride: int = 1) -> "PsaConfig":
        kernels = default_kernels(scales)
        return cls(
            channels=channels,
            scales=scales,
            kernels=kernels,
            groups=default_groups(kernels, channels, scales),
            stride=stride,
        )

    def to_dict(self) -> dict:
        return {
            "scales": self.scales,
            "kernels": list(self.kernels),
            "groups": list(self.groups),
            "se_reduction": self.se_reduction,
        }

    @classmethod
    def from_dict(cls, channels: int, d: dict, stride: int = 1) -> "PsaConfig":
        return cls(
            channels=channels,
            scales=int(d["scales"]),
            kernels=tuple(int(k) for k in d["kernels"]),
            groups=tuple(int(g) for g in d["groups"]),
            se_reduction=int(d.get("se_reduction", 16)),
            stride=stride,
        )


@dataclass
class SeWeightParams:
    """Squeeze-excitation weighter: GAP -> fc0 -> ReLU -> fc1 -> sigmoid."""

    fc0: LinearParams
    fc1: LinearParams

    @classmethod
    def init(
        cls, channels: int, reduction: int = 16, seed: int | np.random.Generator = 0
    ) -> "SeWeightParams":
        rng = _rng(seed)
        hidden = max(channels // reduction, 1)
        return cls(
            fc0=LinearParams.init(channels, hidden, bias=True, seed=rng),
            fc1=LinearParams.init(hidden, channels, bias=True, seed=rng),
        )

    @property
    def param_count(self) -> int:
        return self.fc0.param_count + self.fc1.param_count


@dataclass
class PsaParams:
    """Parameters of one PSA module.

    branch_convs[i] maps the full C-channel input to C' = C/S channels with
    kernel kernels[i] and groups[i]; the single SE weighter is shared by
    all branches.
    """

    config: PsaConfig
    branch_convs: list[Conv2dParams]
    se: SeWeightParams

    @classmethod
    def init(cls, config: PsaConfig, seed: int | np.random.Generator = 0) -> "PsaParams":
        rng = _rng(seed)
        cp = config.branch_channels
        convs = [
            Conv2dParams.init(
                config.channels,
                cp,
                k,
                stride=config.stride,
                padding=(k - 1) // 2,
                groups=g,
                bias=False,
                seed=rng,
            )
            for k, g in zip(config.kernels, config.groups)
        ]
        return cls(config, convs, SeWeightParams.init(cp, config.se_reduction, rng))

    @property
    def param_count(self) -> int:
        return sum(c.param_count for c in self.branch_convs) + self.se.param_count


def _se_weight_grad(x: Tensor, p: SeWeightParams) -> GradPair:
    pooled = global_avg_pool(x)
    gp0 = linear(pooled, p.fc0)
    gpr = relu(gp0.output)
    gp1 = linear(gpr.output, p.fc1)
    gps = sigmoid(gp1.output)

    def backward(dy: Tensor):
        d, _ = gps.backward(dy)
        d, g1 = gp1.backward(d)
        d, _ = gpr.backward(d)
        d, g0 = gp0.backward(d)
        dx = _wrap(_global_avg_pool_vjp(x.shape, d.data))
        grads = {
            "fc0.weight": g0["weight"],
            "fc0.bias": g0["bias"],
            "fc1.weight": g1["weight"],
            "fc1.bias": g1["bias"],
        }
        return dx, grads

    return GradPair(gps.output, backward)


def se_weight(x: Tensor, p: SeWeightParams) -> Tensor:
    """Per-channel weights in (0, 1), shape (N, C', 1, 1)."""
    return _se_weight_grad(x, p).output


def spc_forward(x: Tensor, p: PsaParams) -> list[Tensor]:
    """The S branch feature maps; every branch reads the whole input."""
    if x.c != p.config.channels:
        raise ValueError(f"input has {x.c} channels, config expects {p.config.channels}")
    return [conv2d(x, c).output for c in p.branch_convs]


def psa_with_grad(x: Tensor, p: PsaParams) -> GradPair:
    """Full PSA forward with a backward closure over input and parameters.

    Parameter gradients are keyed "branch{i}.weight" and
    "se.fc0/fc1.weight/bias"; the shared SE weighter accumulates
    contributions from all branches.
    """
    if x.c != p.config.channels:
        raise ValueError(f"input has {x.c} channels, config expects {p.config.channels}")
    s = p.config.scales
    cp = p.config.branch_channels

    conv_gps = [conv2d(x, c) for c in p.branch_convs]
    feats = [gp.output for gp in conv_gps]
    se_gps = [_se_weight_grad(f, p.se) for f in feats]
    logits = np.stack([gp.output.data for gp in se_gps], axis=1)  # (N, S, C', 1, 1)
    att = softmax_over_scales(logits)
    weighted = [feats[i].data * att[:, i] for i in range(s)]
    out = concat_channels([_wrap(w) for w in weighted])

    def backward(dy: Tensor):
        if dy.shape != out.shape:
            raise ValueError(f"upstream gradient shape {dy.shape} != {out.shape}")
        dchunks = [dy.data[:, i * cp : (i + 1) * cp] for i in range(s)]
        # product rule through y_i = f_i * att_i
        datt = np.stack(
            [(dchunks[i] * feats[i].data).sum(axis=(2, 3), keepdims=True) for i in range(s)],
            axis=1,
        )
        dlogits = _softmax_over_scales_vjp(att, datt)

        grads: dict[str, np.ndarray] = {}
        dx_total = np.zeros(x.shape)
        for i in range(s):
            dfeat = dchunks[i] * att[:, i]
            dfeat_se, se_g = se_gps[i].backward(_wrap(dlogits[:, i]))
            for k, v in se_g.items():
                key = f"se.{k}"
                grads[key] = grads.get(key, 0) + v
            dxi, conv_g = conv_gps[i].backward(_wrap(dfeat + dfeat_se.data))
            grads[f"branch{i}.weight"] = conv_g["weight"]
            dx_total += dxi.data
        return _wrap(dx_total), grads

    return GradPair(out, backward)


def psa_forward(x: Tensor, p: PsaParams) -> Tensor:
    """PSA output; same channel count as the input."""
    return psa_with_grad(x, p).output
