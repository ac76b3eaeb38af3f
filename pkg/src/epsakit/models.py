"""Bottleneck blocks and declarative builders for the ResNet / SENet / EPSANet family.

Networks are trees of small layer objects. Every layer implements:

    apply(x, training) -> (y, vjp)   vjp(dy) -> (dx, {param_name: grad})
    params() -> {param_name: ndarray}
    complexity(in_shape) -> (out_shape, [LayerRow])

Parameter names are dotted paths, unique within a network. Parameter
updates rebind arrays (they never mutate tensors in place), so an
eval-mode forward is safe to run concurrently.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import ops
from .ops import BatchNormParams, Conv2dParams, LinearParams, _rng, conv_output_size
from .psa import PsaConfig, PsaParams, psa_with_grad
from .tensor import Tensor, _wrap

__all__ = [
    "LayerRow",
    "BlockSpec",
    "StageSpec",
    "ModelSpec",
    "Model",
    "MODEL_NAMES",
    "LARGE_KERNELS",
    "LARGE_GROUPS",
    "build_model",
    "build_block",
    "build_toy_epsanet",
    "build_epsanet50_with_groups",
    "ablation_configs",
    "forward",
    "describe",
    "spec_to_config",
    "config_to_spec",
    "build_from_config",
]


@dataclass(frozen=True)
class LayerRow:
    """One line of the per-layer complexity ledger."""

    name: str
    params: int
    flops: int
    output_shape: tuple[int, int, int, int]


def _prefix(rows: list[LayerRow], name: str) -> list[LayerRow]:
    return [LayerRow(f"{name}.{r.name}" if r.name else name, r.params, r.flops, r.output_shape) for r in rows]


def _prefix_grads(grads: dict[str, np.ndarray], name: str) -> dict[str, np.ndarray]:
    return {f"{name}.{k}": v for k, v in grads.items()}


class Conv:
    def __init__(self, in_c, out_c, kernel, stride=1, padding=0, groups=1, bias=False, rng=None):
        self.p = Conv2dParams.init(in_c, out_c, kernel, stride, padding, groups, bias, _rng(rng or 0))

    def apply(self, x: Tensor, training: bool):
        gp = ops.conv2d(x, self.p)

        def vjp(dy):
            dx, g = gp.backward(dy)
            return dx, g

        return gp.output, vjp

    def params(self):
        out = {"weight": self.p.weight.data}
        if self.p.bias is not None:
            out["bias"] = self.p.bias
        return out

    def set_param(self, name, value):
        if name == "weight":
            self.p.weight = _wrap(np.array(value, dtype=np.float64))
        elif name == "bias" and self.p.bias is not None:
            self.p.bias = np.array(value, dtype=np.float64)
        else:
            raise KeyError(name)

    def decay_names(self):
        return {"weight"}

    def complexity(self, in_shape):
        n, c, h, w = in_shape
        ho = conv_output_size(h, self.p.kernel, self.p.stride, self.p.padding)
        wo = conv_output_size(w, self.p.kernel, self.p.stride, self.p.padding)
        out_shape = (n, self.p.out_channels, ho, wo)
        macs = (
            n * self.p.out_channels * ho * wo
            * (self.p.in_channels // self.p.groups)
            * self.p.kernel * self.p.kernel
        )
        return out_shape, [LayerRow("", self.p.param_count, macs, out_shape)]


class BatchNorm:
    def __init__(self, channels):
        self.p = BatchNormParams.init(channels)

    def apply(self, x: Tensor, training: bool):
        gp = ops.batch_norm(x, self.p, training)
        return gp.output, gp.backward

    def params(self):
        return {"gamma": self.p.gamma, "beta": self.p.beta}

    def set_param(self, name, value):
        if name not in ("gamma", "beta"):
            raise KeyError(name)
        setattr(self.p, name, np.array(value, dtype=np.float64))

    def decay_names(self):
        return set()

    def state(self):
        return {"running_mean": self.p.running_mean, "running_var": self.p.running_var}

    def set_state(self, name, value):
        getattr(self.p, name)[:] = value

    def complexity(self, in_shape):
        return in_shape, [LayerRow("", self.p.param_count, 0, in_shape)]


class ReLU:
    def apply(self, x: Tensor, training: bool):
        gp = ops.relu(x)
        return gp.output, lambda dy: gp.backward(dy)

    def params(self):
        return {}

    def complexity(self, in_shape):
        return in_shape, []


class MaxPool:
    def __init__(self, kernel=3, stride=2, padding=1):
        self.kernel, self.stride, self.padding = kernel, stride, padding

    def apply(self, x: Tensor, training: bool):
        gp = ops.max_pool(x, self.kernel, self.stride, self.padding)
        return gp.output, lambda dy: gp.backward(dy)

    def params(self):
        return {}

    def complexity(self, in_shape):
        n, c, h, w = in_shape
        ho = conv_output_size(h, self.kernel, self.stride, self.padding)
        wo = conv_output_size(w, self.kernel, self.stride, self.padding)
        out_shape = (n, c, ho, wo)
        return out_shape, [LayerRow("", 0, 0, out_shape)]


class GlobalAvgPool:
    def apply(self, x: Tensor, training: bool):
        in_shape = x.shape
        y = ops.global_avg_pool(x)

        def vjp(dy):
            return _wrap(ops._global_avg_pool_vjp(in_shape, dy.data)), {}

        return y, vjp

    def params(self):
        return {}

    def complexity(self, in_shape):
        n, c, _, _ = in_shape
        out_shape = (n, c, 1, 1)
        return out_shape, [LayerRow("", 0, 0, out_shape)]


class Linear:
    def __init__(self, in_f, out_f, bias=True, rng=None):
        self.p = LinearParams.init(in_f, out_f, bias, _rng(rng or 0))

    def apply(self, x, training: bool):
        gp = ops.linear(x, self.p)
        return gp.output, gp.backward

    def params(self):
        out = {"weight": self.p.weight}
        if self.p.bias is not None:
            out["bias"] = self.p.bias
        return out

    def set_param(self, name, value):
        if name == "weight":
            self.p.weight = np.array(value, dtype=np.float64)
        elif name == "bias" and self.p.bias is not None:
            self.p.bias = np.array(value, dtype=np.float64)
        else:
            raise KeyError(name)

    def decay_names(self):
        return {"weight"}

    def complexity(self, in_shape):
        n = in_shape[0]
        out_shape = (n, self.p.out_features, 1, 1)
        return out_shape, [LayerRow("", self.p.param_count, n * self.p.in_features * self.p.out_features, out_shape)]


class SeScale:
    """Squeeze-excitation recalibration of a feature map (bias-free FCs)."""

    def __init__(self, channels, reduction=16, rng=None):
        rng = _rng(rng or 0)
        hidden = max(channels // reduction, 1)
        self.fc0 = LinearParams.init(channels, hidden, bias=False, seed=rng)
        self.fc1 = LinearParams.init(hidden, channels, bias=False, seed=rng)
        self.channels = channels

    def apply(self, x: Tensor, training: bool):
        in_shape = x.shape
        pooled = ops.global_avg_pool(x)
        gp0 = ops.linear(pooled, self.fc0)
        gpr = ops.relu(gp0.output)
        gp1 = ops.linear(gpr.output, self.fc1)
        gps = ops.sigmoid(gp1.output)
        w = gps.output
        y = _wrap(x.data * w.data)

        def vjp(dy):
            dx_direct = dy.data * w.data
            dw = (dy.data * x.data).sum(axis=(2, 3), keepdims=True)
            d, _ = gps.backward(_wrap(dw))
            d, g1 = gp1.backward(d)
            d, _ = gpr.backward(d)
            d, g0 = gp0.backward(d)
            dx_se = ops._global_avg_pool_vjp(in_shape, d.data)
            grads = {"fc0.weight": g0["weight"], "fc1.weight": g1["weight"]}
            return _wrap(dx_direct + dx_se), grads

        return y, vjp

    def params(self):
        return {"fc0.weight": self.fc0.weight, "fc1.weight": self.fc1.weight}

    def set_param(self, name, value):
        fc = {"fc0.weight": self.fc0, "fc1.weight": self.fc1}[name]
        fc.weight = np.array(value, dtype=np.float64)

    def decay_names(self):
        return {"fc0.weight", "fc1.weight"}

    def complexity(self, in_shape):
        n = in_shape[0]
        hidden = self.fc0.out_features
        macs = n * (self.channels * hidden + hidden * self.channels)
        return in_shape, [LayerRow("", self.fc0.param_count + self.fc1.param_count, macs, in_shape)]


class Psa:
    """PSA module as a layer; parameter names follow the PsaParams layout."""

    def __init__(self, config: PsaConfig, rng=None):
        self.p = PsaParams.init(config, _rng(rng or 0))

    def apply(self, x: Tensor, training: bool):
        gp = psa_with_grad(x, self.p)
        return gp.output, gp.backward

    def params(self):
        out = {}
        for i, c in enumerate(self.p.branch_convs):
            out[f"branch{i}.weight"] = c.weight.data
        out["se.fc0.weight"] = self.p.se.fc0.weight
        out["se.fc0.bias"] = self.p.se.fc0.bias
        out["se.fc1.weight"] = self.p.se.fc1.weight
        out["se.fc1.bias"] = self.p.se.fc1.bias
        return out

    def set_param(self, name, value):
        value = np.array(value, dtype=np.float64)
        if name.startswith("branch"):
            idx = int(name.split(".")[0][len("branch"):])
            self.p.branch_convs[idx].weight = _wrap(value)
        elif name == "se.fc0.weight":
            self.p.se.fc0.weight = value
        elif name == "se.fc0.bias":
            self.p.se.fc0.bias = value
        elif name == "se.fc1.weight":
            self.p.se.fc1.weight = value
        elif name == "se.fc1.bias":
            self.p.se.fc1.bias = value
        else:
            raise KeyError(name)

    def decay_names(self):
        names = {f"branch{i}.weight" for i in range(len(self.p.branch_convs))}
        names |= {"se.fc0.weight", "se.fc1.weight"}
        return names

    def complexity(self, in_shape):
        n, c, h, w = in_shape
        cfg = self.p.config
        rows = []
        out_shape = None
        for i, conv in enumerate(self.p.branch_convs):
            ho = conv_output_size(h, conv.kernel, conv.stride, conv.padding)
            wo = conv_output_size(w, conv.kernel, conv.stride, conv.padding)
            bshape = (n, cfg.branch_channels, ho, wo)
            macs = (
                n * cfg.branch_channels * ho * wo
                * (cfg.channels // conv.groups) * conv.kernel * conv.kernel
            )
            rows.append(LayerRow(f"branch{i}", conv.param_count, macs, bshape))
            out_shape = (n, cfg.channels, ho, wo)
        hidden = self.p.se.fc0.out_features
        cp = cfg.branch_channels
        se_macs = n * cfg.scales * (cp * hidden + hidden * cp)
        rows.append(LayerRow("se", self.p.se.param_count, se_macs, (n, cp, 1, 1)))
        return out_shape, rows


@dataclass(frozen=True)
class BlockSpec:
    """One bottleneck: kind in {resnet, se, epsa}; psa present iff kind == epsa."""

    kind: str
    mid_channels: int
    out_channels: int
    stride: int = 1
    psa: PsaConfig | None = None
    se_reduction: int = 16

    def __post_init__(self) -> None:
        if self.kind not in ("resnet", "se", "epsa"):
            raise ValueError(f"unknown block kind {self.kind!r}")
        if (self.psa is not None) != (self.kind == "epsa"):
            raise ValueError("psa config must be present exactly when kind == 'epsa'")
        if self.stride not in (1, 2):
            raise ValueError(f"stride must be 1 or 2, got {self.stride}")


@dataclass(frozen=True)
class StageSpec:
    blocks: int
    first_stride: int
    block: BlockSpec


@dataclass(frozen=True)
class ModelSpec:
    name: str
    stages: tuple[StageSpec, ...]
    num_classes: int = 1000
    stem_channels: int = 64


class Bottleneck:
    """Residual bottleneck; the middle op is a 3x3 conv or a PSA module."""

    def __init__(self, spec: BlockSpec, in_channels: int, stride: int, rng):
        mid, out = spec.mid_channels, spec.out_channels
        self.spec = spec
        self.conv1 = Conv(in_channels, mid, 1, rng=rng)
        self.bn1 = BatchNorm(mid)
        if spec.kind == "epsa":
            cfg = spec.psa
            if cfg.channels != mid:
                raise ValueError(f"psa channels {cfg.channels} != mid {mid}")
            if cfg.stride != stride:
                cfg = PsaConfig(mid, cfg.scales, cfg.kernels, cfg.groups, cfg.se_reduction, stride)
            self.conv2 = Psa(cfg, rng)
        else:
            self.conv2 = Conv(mid, mid, 3, stride=stride, padding=1, rng=rng)
        self.bn2 = BatchNorm(mid)
        self.conv3 = Conv(mid, out, 1, rng=rng)
        self.bn3 = BatchNorm(out)
        self.se = SeScale(out, spec.se_reduction, rng) if spec.kind == "se" else None
        if stride != 1 or in_channels != out:
            self.down_conv = Conv(in_channels, out, 1, stride=stride, rng=rng)
            self.down_bn = BatchNorm(out)
        else:
            self.down_conv = None
            self.down_bn = None

    def children(self):
        out = [("conv1", self.conv1), ("bn1", self.bn1), ("conv2", self.conv2), ("bn2", self.bn2),
               ("conv3", self.conv3), ("bn3", self.bn3)]
        if self.se is not None:
            out.append(("se", self.se))
        if self.down_conv is not None:
            out.append(("downsample.conv", self.down_conv))
            out.append(("downsample.bn", self.down_bn))
        return out

    def apply(self, x: Tensor, training: bool):
        steps = []

        def run(layer, name, h):
            y, v = layer.apply(h, training)
            steps.append((name, v))
            return y

        h = run(self.conv1, "conv1", x)
        h = run(self.bn1, "bn1", h)
        h = run(ReLU(), None, h)
        h = run(self.conv2, "conv2", h)
        h = run(self.bn2, "bn2", h)
        h = run(ReLU(), None, h)
        h = run(self.conv3, "conv3", h)
        h = run(self.bn3, "bn3", h)
        if self.se is not None:
            h = run(self.se, "se", h)

        if self.down_conv is not None:
            s, v_dc = self.down_conv.apply(x, training)
            s, v_db = self.down_bn.apply(s, training)
        else:
            s = x
            v_dc = v_db = None

        pre = _wrap(h.data + s.data)
        out_gp = ops.relu(pre)

        def vjp(dy):
            dpre, _ = out_gp.backward(dy)
            grads: dict[str, np.ndarray] = {}
            d = dpre
            for name, v in reversed(steps):
                d, g = v(d)
                if name:
                    grads.update(_prefix_grads(g, name))
            if v_db is not None:
                ds, g = v_db(dpre)
                grads.update(_prefix_grads(g, "downsample.bn"))
                ds, g = v_dc(ds)
                grads.update(_prefix_grads(g, "downsample.conv"))
                dx = _wrap(d.data + ds.data)
            else:
                dx = _wrap(d.data + dpre.data)
            return dx, grads

        return out_gp.output, vjp

    def params(self):
        out = {}
        for name, child in self.children():
            for k, v in child.params().items():
                out[f"{name}.{k}"] = v
        return out

    def set_param(self, name, value):
        for cname, child in self.children():
            if name.startswith(cname + "."):
                child.set_param(name[len(cname) + 1:], value)
                return
        raise KeyError(name)

    def decay_names(self):
        out = set()
        for name, child in self.children():
            for k in getattr(child, "decay_names", set)():
                out.add(f"{name}.{k}")
        return out

    def bn_layers(self):
        for name, child in self.children():
            if isinstance(child, BatchNorm):
                yield name, child

    def complexity(self, in_shape):
        rows = []
        shape = in_shape
        for name, layer in [("conv1", self.conv1), ("bn1", self.bn1), ("conv2", self.conv2),
                            ("bn2", self.bn2), ("conv3", self.conv3), ("bn3", self.bn3)]:
            shape, r = layer.complexity(shape)
            rows += _prefix(r, name)
        if self.se is not None:
            shape, r = self.se.complexity(shape)
            rows += _prefix(r, "se")
        if self.down_conv is not None:
            dshape, r = self.down_conv.complexity(in_shape)
            rows += _prefix(r, "downsample.conv")
            dshape, r = self.down_bn.complexity(dshape)
            rows += _prefix(r, "downsample.bn")
        return shape, rows


class Network:
    """Stem + stages + classifier head, built from a ModelSpec."""

    def __init__(self, spec: ModelSpec, seed: int = 0):
        rng = _rng(seed)
        self.spec = spec
        self.stem_conv = Conv(3, spec.stem_channels, 7, stride=2, padding=3, rng=rng)
        self.stem_bn = BatchNorm(spec.stem_channels)
        self.maxpool = MaxPool(3, 2, 1)
        self.stages: list[list[Bottleneck]] = []
        in_c = spec.stem_channels
        for st in spec.stages:
            blocks = []
            for b in range(st.blocks):
                stride = st.first_stride if b == 0 else 1
                blocks.append(Bottleneck(st.block, in_c, stride, rng))
                in_c = st.block.out_channels
            self.stages.append(blocks)
        self.gap = GlobalAvgPool()
        self.fc = Linear(in_c, spec.num_classes, bias=True, rng=rng)

    def named_children(self):
        yield "stem.conv", self.stem_conv
        yield "stem.bn", self.stem_bn
        for i, blocks in enumerate(self.stages, start=1):
            for b, block in enumerate(blocks):
                yield f"layer{i}.{b}", block
        yield "fc", self.fc

    def apply(self, x: Tensor, training: bool = False):
        """Returns (logits, vjp); logits is a (N, num_classes) array."""
        chain: list[tuple[str | None, Callable]] = []

        def run2(layer, name, h):
            y, v = layer.apply(h, training)
            chain.append((name, v))
            return y

        h = run2(self.stem_conv, "stem.conv", x)
        h = run2(self.stem_bn, "stem.bn", h)
        h = run2(ReLU(), None, h)
        h = run2(self.maxpool, None, h)
        for i, blocks in enumerate(self.stages, start=1):
            for b, block in enumerate(blocks):
                h = run2(block, f"layer{i}.{b}", h)
        h = run2(self.gap, None, h)
        gp_fc = ops.linear(h.data.reshape(h.n, h.c), self.fc.p)
        logits = gp_fc.output

        def vjp(dlogits: np.ndarray):
            grads: dict[str, np.ndarray] = {}
            d, g = gp_fc.backward(np.asarray(dlogits, dtype=np.float64))
            grads.update(_prefix_grads(g, "fc"))
            d = _wrap(d.reshape(h.shape))
            for name, v in reversed(chain):
                d, g = v(d)
                if name:
                    grads.update(_prefix_grads(g, name))
            return d, grads

        return logits, vjp

    def forward(self, x: Tensor, training: bool = False) -> np.ndarray:
        logits, _ = self.apply(x, training)
        return logits

    def params(self) -> dict[str, np.ndarray]:
        out = {}
        for name, child in self.named_children():
            for k, v in child.params().items():
                out[f"{name}.{k}"] = v
        return out

    def set_param(self, name: str, value: np.ndarray) -> None:
        for cname, child in self.named_children():
            if name.startswith(cname + "."):
                child.set_param(name[len(cname) + 1:], value)
                return
        raise KeyError(name)

    def decay_names(self) -> set[str]:
        out = set()
        for name, child in self.named_children():
            for k in getattr(child, "decay_names", set)():
                out.add(f"{name}.{k}")
        return out

    def bn_state(self) -> dict[str, np.ndarray]:
        out = {}
        out["stem.bn.running_mean"] = self.stem_bn.p.running_mean
        out["stem.bn.running_var"] = self.stem_bn.p.running_var
        for i, blocks in enumerate(self.stages, start=1):
            for b, block in enumerate(blocks):
                for bn_name, bn in block.bn_layers():
                    for k, v in bn.state().items():
                        out[f"layer{i}.{b}.{bn_name}.{k}"] = v
        return out

    def complexity(self, input_shape) -> tuple[tuple, list[LayerRow]]:
        rows = []
        shape, r = self.stem_conv.complexity(input_shape)
        rows += _prefix(r, "stem.conv")
        shape, r = self.stem_bn.complexity(shape)
        rows += _prefix(r, "stem.bn")
        shape, r = self.maxpool.complexity(shape)
        rows += _prefix(r, "maxpool")
        for i, blocks in enumerate(self.stages, start=1):
            for b, block in enumerate(blocks):
                shape, r = block.complexity(shape)
                rows += _prefix(r, f"layer{i}.{b}")
        shape, r = self.gap.complexity(shape)
        rows += _prefix(r, "gap")
        shape, r = self.fc.complexity(shape)
        rows += _prefix(r, "fc")
        return shape, rows


@dataclass
class Model:
    """Built network plus its declarative spec."""

    spec: ModelSpec
    net: Network

    @property
    def name(self) -> str:
        return self.spec.name


# EPSANet configurations. Small follows the kernel ladder (3, 5, 7, 9) with
# the per-kernel group rule (1, 4, 8, 16) at the ResNet bottleneck widths.
# Large doubles the bottleneck width and runs every branch at group size 32;
# its kernel set is the pyramid with sum(k^2) = 108, which is what lands the
# published parameter/FLOP totals exactly at those widths.
SMALL_KERNELS = (3, 5, 7, 9)
SMALL_GROUPS = (1, 4, 8, 16)
LARGE_KERNELS = (3, 5, 5, 7)
LARGE_GROUPS = (32, 32, 32, 32)

_BASE_WIDTHS = (64, 128, 256, 512)
_REPEATS = {"50": (3, 4, 6, 3), "101": (3, 4, 23, 3)}


def _family_spec(name, kind, repeats, num_classes, widths=_BASE_WIDTHS, psa_of=None):
    stages = []
    for i, (m, reps) in enumerate(zip(widths, repeats)):
        out = 4 * _BASE_WIDTHS[i]
        psa = psa_of(m) if psa_of else None
        block = BlockSpec(kind=kind, mid_channels=m, out_channels=out, psa=psa)
        stages.append(StageSpec(blocks=reps, first_stride=1 if i == 0 else 2, block=block))
    return ModelSpec(name=name, stages=tuple(stages), num_classes=num_classes)


def _spec_for(name: str, num_classes: int) -> ModelSpec:
    depth = "101" if "101" in name else "50"
    reps = _REPEATS[depth]
    if name.startswith("resnet"):
        return _family_spec(name, "resnet", reps, num_classes)
    if name.startswith("senet"):
        return _family_spec(name, "se", reps, num_classes)
    if name.startswith("epsanet") and name.endswith("small"):
        return _family_spec(
            name, "epsa", reps, num_classes,
            psa_of=lambda m: PsaConfig(m, 4, SMALL_KERNELS, SMALL_GROUPS),
        )
    if name.startswith("epsanet") and name.endswith("large"):
        widths = tuple(2 * w for w in _BASE_WIDTHS)
        return _family_spec(
            name, "epsa", reps, num_classes, widths=widths,
            psa_of=lambda m: PsaConfig(m, 4, LARGE_KERNELS, LARGE_GROUPS),
        )
    raise KeyError(name)


MODEL_NAMES = (
    "resnet50", "resnet101",
    "senet50", "senet101",
    "epsanet50_small", "epsanet50_large",
    "epsanet101_small", "epsanet101_large",
)


def build_model(name: str, num_classes: int = 1000, seed: int = 0) -> Model:
    """Build one of the canonical models by name."""
    if name not in MODEL_NAMES:
        raise KeyError(f"unknown model {name!r}; known: {', '.join(MODEL_NAMES)}")
    spec = _spec_for(name, num_classes)
    return Model(spec, Network(spec, seed))


def build_block(spec: BlockSpec, in_channels: int, stride: int | None = None, seed: int = 0):
    """Materialize a single bottleneck block."""
    return Bottleneck(spec, in_channels, spec.stride if stride is None else stride, _rng(seed))


def build_epsanet50_with_groups(groups: Sequence[int], num_classes: int = 1000, seed: int = 0) -> Model:
    """EPSANet-50 at the small widths with a custom per-branch group list."""
    groups = tuple(int(g) for g in groups)
    spec = _family_spec(
        f"epsanet50_groups_{'_'.join(map(str, groups))}", "epsa", _REPEATS["50"], num_classes,
        psa_of=lambda m: PsaConfig(m, 4, SMALL_KERNELS, groups),
    )
    return Model(spec, Network(spec, seed))


def ablation_configs() -> list[PsaConfig]:
    """The three kernel/group settings of the group-size ablation.

    All share the (3, 5, 7, 9) kernel ladder; the last entry, (1, 4, 8, 16),
    is the default small configuration. channels=64 is the first-stage
    width; builders rescale per stage.
    """
    rows = [(4, 8, 16, 16), (16, 16, 16, 16), (1, 4, 8, 16)]
    return [PsaConfig(64, 4, SMALL_KERNELS, g) for g in rows]


def build_toy_epsanet(
    num_classes: int = 4,
    widths: Sequence[int] = (32, 64),
    blocks: Sequence[int] = (1, 1),
    stem_channels: int = 32,
    seed: int = 0,
) -> Model:
    """Reduced EPSANet for desk-scale training experiments."""
    from .psa import default_groups

    stages = []
    in_c = stem_channels
    for i, (m, reps) in enumerate(zip(widths, blocks)):
        cfg = PsaConfig(m, 4, SMALL_KERNELS, default_groups(SMALL_KERNELS, m, 4))
        block = BlockSpec(kind="epsa", mid_channels=m, out_channels=4 * m, psa=cfg)
        stages.append(StageSpec(blocks=reps, first_stride=1 if i == 0 else 2, block=block))
    spec = ModelSpec(
        name="epsanet_toy", stages=tuple(stages),
        num_classes=num_classes, stem_channels=stem_channels,
    )
    return Model(spec, Network(spec, seed))


def forward(model: Model, x: Tensor) -> np.ndarray:
    """Eval-mode forward pass to logits, shape (N, num_classes)."""
    if x.h < 32 or x.w < 32:
        raise ValueError(f"input spatial size {x.h}x{x.w} is below the 32-pixel minimum")
    return model.net.forward(x, training=False)


# Model-config schema (JSON): {name, num_classes, stem_channels,
# stages: [{repeats, mid_channels, kind, out_channels, se_reduction?, psa?}]}

def spec_to_config(spec: ModelSpec) -> dict:
    stages = []
    for st in spec.stages:
        d = {
            "repeats": st.blocks,
            "mid_channels": st.block.mid_channels,
            "kind": st.block.kind,
            "out_channels": st.block.out_channels,
        }
        if st.block.kind == "se":
            d["se_reduction"] = st.block.se_reduction
        if st.block.psa is not None:
            d["psa"] = st.block.psa.to_dict()
        stages.append(d)
    return {
        "name": spec.name,
        "num_classes": spec.num_classes,
        "stem_channels": spec.stem_channels,
        "stages": stages,
    }


def config_to_spec(cfg: dict) -> ModelSpec:
    stages = []
    for i, st in enumerate(cfg["stages"]):
        mid = int(st["mid_channels"])
        kind = st["kind"]
        out = int(st.get("out_channels", 4 * mid))
        psa = PsaConfig.from_dict(mid, st["psa"]) if kind == "epsa" else None
        block = BlockSpec(
            kind=kind, mid_channels=mid, out_channels=out, psa=psa,
            se_reduction=int(st.get("se_reduction", 16)),
        )
        stages.append(StageSpec(blocks=int(st["repeats"]), first_stride=1 if i == 0 else 2, block=block))
    return ModelSpec(
        name=str(cfg.get("name", "custom")),
        stages=tuple(stages),
        num_classes=int(cfg.get("num_classes", 1000)),
        stem_channels=int(cfg.get("stem_channels", 64)),
    )


def build_from_config(cfg: dict, seed: int = 0) -> Model:
    spec = config_to_spec(cfg)
    return Model(spec, Network(spec, seed))


def _psa_label(cfg: PsaConfig) -> str:
    if len(set(cfg.groups)) == 1 and cfg.groups[0] != 1:
        return f"PSA(G={cfg.groups[0]})"
    if cfg.groups == SMALL_GROUPS:
        return "PSA"
    return f"PSA(G={','.join(map(str, cfg.groups))})"


@dataclass
class ModelDescription:
    name: str
    input_size: int
    rows: list[dict]
    config: dict

    def to_json(self) -> str:
        return json.dumps(
            {"name": self.name, "input_size": self.input_size,
             "rows": self.rows, "config": self.config},
            indent=2, sort_keys=True,
        )

    def to_text(self) -> str:
        lines = [f"{self.name} @ {self.input_size}x{self.input_size}"]
        for r in self.rows:
            out = f"{r['output_size']}x{r['output_size']}"
            lines.append(f"  {out:>9s}  {self._op_string(r)}")
        return "\n".join(lines)

    @staticmethod
    def _op_string(row: dict) -> str:
        if "operators" in row:
            return f"[{'; '.join(row['operators'])}] x{row['repeats']}"
        return row["operator"]


def describe(model: Model | ModelSpec, input_size: int = 224) -> ModelDescription:
    """Stage-by-stage structural listing with computed output sizes."""
    spec = model.spec if isinstance(model, Model) else model
    rows = []
    size = conv_output_size(input_size, 7, 2, 3)
    rows.append({"stage": "stem", "operator": f"7x7, {spec.stem_channels}, stride 2", "output_size": size})
    size = conv_output_size(size, 3, 2, 1)
    rows.append({"stage": "pool", "operator": "3x3 max pool, stride 2", "output_size": size})
    for i, st in enumerate(spec.stages, start=1):
        if st.first_stride == 2:
            size = conv_output_size(size, 3, 2, 1)
        b = st.block
        if b.kind == "epsa":
            mid_op = f"{_psa_label(b.psa)}, {b.mid_channels}"
        else:
            mid_op = f"3x3, {b.mid_channels}"
        operators = [f"1x1, {b.mid_channels}", mid_op, f"1x1, {b.out_channels}"]
        if b.kind == "se":
            operators.append(f"SE(r={b.se_reduction})")
        rows.append({
            "stage": f"stage{i}", "operators": operators,
            "repeats": st.blocks, "output_size": size,
        })
    rows.append({
        "stage": "head",
        "operator": f"{size}x{size} global average pool, {spec.num_classes}-d fc",
        "output_size": 1,
    })
    return ModelDescription(spec.name, input_size, rows, spec_to_config(spec))
