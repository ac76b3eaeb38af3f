"""Desk-scale training: SGD with momentum and L2 weight decay, label-smoothed
cross-entropy, a step learning-rate schedule, and a synthetic separable
dataset for overfitting checks.

The batch partition is shuffled once per run (not per epoch) so that a
zero learning rate provably yields a flat loss curve; at 32-sample scale
this costs nothing.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .models import Model
from .tensor import Tensor, _wrap, load_t4, save_t4

__all__ = [
    "TrainConfig",
    "ToyDataset",
    "TrainingDiverged",
    "TrainingHistory",
    "label_smoothed_ce",
    "sgd_step",
    "lr_at",
    "make_toy_dataset",
    "train",
    "evaluate",
    "save_params",
    "load_params",
]


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 1e-4
    label_smoothing: float = 0.1
    lr_decay_factor: float = 10.0
    lr_decay_every: int = 30
    batch_size: int = 8
    epochs: int = 50
    seed: int = 0

    def __post_init__(self) -> None:
        if self.lr < 0 or self.momentum < 0 or self.weight_decay < 0:
            raise ValueError("rates must be non-negative")
        if not 0.0 <= self.label_smoothing < 1.0:
            raise ValueError(f"label_smoothing {self.label_smoothing} outside [0, 1)")
        if self.lr_decay_factor <= 0 or self.lr_decay_every <= 0:
            raise ValueError("decay settings must be positive")
        if self.batch_size <= 0 or self.epochs < 0:
            raise ValueError("batch_size/epochs must be positive")


@dataclass(frozen=True)
class ToyDataset:
    images: Tensor
    labels: np.ndarray
    num_classes: int

    def __post_init__(self) -> None:
        if self.labels.shape != (self.images.n,):
            raise ValueError("one label per image required")
        if self.labels.min() < 0 or self.labels.max() >= self.num_classes:
            raise ValueError("labels outside [0, num_classes)")


class TrainingDiverged(RuntimeError):
    """Raised when the loss or an activation becomes non-finite."""


def label_smoothed_ce(logits: np.ndarray, labels: np.ndarray, alpha: float):
    """Cross-entropy against (1-a)*onehot + a/K targets.

    Returns (loss, dloss/dlogits); the gradient is averaged over the batch.
    """
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    n, k = logits.shape
    if labels.shape != (n,):
        raise ValueError(f"labels shape {labels.shape} != ({n},)")
    if labels.min() < 0 or labels.max() >= k:
        raise ValueError("label outside [0, num_classes)")
    shifted = logits - logits.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - logz
    targets = np.full((n, k), alpha / k)
    targets[np.arange(n), labels] += 1.0 - alpha
    loss = float(-(targets * log_probs).sum() / n)
    grad = (np.exp(log_probs) - targets) / n
    return loss, grad


def sgd_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: dict[str, np.ndarray] | None,
    cfg: TrainConfig,
    lr: float | None = None,
    no_decay: frozenset[str] | set[str] = frozenset(),
):
    """One momentum-SGD update: v <- m*v + g + wd*p; p <- p - lr*v.

    Pure: returns (new_params, new_state). Names in no_decay skip the L2
    term (batch-norm parameters and biases, conventionally).
    """
    lr = cfg.lr if lr is None else lr
    state = {} if state is None else state
    new_params: dict[str, np.ndarray] = {}
    new_state: dict[str, np.ndarray] = {}
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"{name}: grad shape {g.shape} != param shape {p.shape}")
        if cfg.weight_decay and name not in no_decay:
            g = g + cfg.weight_decay * p
        v = state.get(name)
        v = g if v is None else cfg.momentum * v + g
        new_state[name] = v
        new_params[name] = p - lr * v
    return new_params, new_state


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    """Step schedule: base lr divided by factor every lr_decay_every epochs."""
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    return cfg.lr / (cfg.lr_decay_factor ** (epoch // cfg.lr_decay_every))


def make_toy_dataset(seed: int, m: int, classes: int, size: int) -> ToyDataset:
    """Separable synthetic images: class-coded stripe frequency, orientation
    and channel bias, plus noise. Deterministic for a fixed seed."""
    if m < classes:
        raise ValueError("need at least one sample per class")
    rng = np.random.Generator(np.random.PCG64(seed))
    labels = np.arange(m) % classes
    yy, xx = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    images = np.empty((m, 3, size, size))
    for idx in range(m):
        c = labels[idx]
        theta = np.pi * c / classes
        freq = 2.0 + 2.0 * c
        phase = rng.uniform(0, 2 * np.pi)
        wave = np.sin(2 * np.pi * freq * (xx * np.cos(theta) + yy * np.sin(theta)) / size + phase)
        for ch in range(3):
            bias = 0.5 if (c % 3) == ch else -0.5
            images[idx, ch] = bias + wave * (0.5 + 0.5 * ((c // 3) % 2 == ch % 2))
    images += 0.25 * rng.standard_normal(images.shape)
    return ToyDataset(Tensor(images), labels, classes)


@dataclass
class TrainingHistory:
    steps: list[dict] = field(default_factory=list)
    epochs: list[dict] = field(default_factory=list)
    summary: dict = field(default_factory=dict)

    def to_csv(self) -> str:
        lines = ["epoch,step,lr,loss,accuracy"]
        for r in self.steps:
            lines.append(
                f"{r['epoch']},{r['step']},{r['lr']!r},{r['loss']!r},{r['accuracy']!r}"
            )
        return "\n".join(lines) + "\n"

    def summary_json(self) -> str:
        return json.dumps(self.summary, indent=2, sort_keys=True)


def evaluate(model: Model, dataset: ToyDataset, alpha: float = 0.0):
    """Eval-mode loss and accuracy over the whole dataset."""
    logits = model.net.forward(dataset.images, training=False)
    loss, _ = label_smoothed_ce(logits, dataset.labels, alpha)
    accuracy = float((logits.argmax(axis=1) == dataset.labels).mean())
    return loss, accuracy


def train(model: Model, dataset: ToyDataset, cfg: TrainConfig) -> TrainingHistory:
    """Minibatch SGD; deterministic for a fixed seed.

    Raises TrainingDiverged on a non-finite loss or activation.
    """
    if model.spec.num_classes != dataset.num_classes:
        raise ValueError(
            f"model head ({model.spec.num_classes}) != dataset classes ({dataset.num_classes})"
        )
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    order = rng.permutation(dataset.images.n)
    batches = [
        order[i : i + cfg.batch_size] for i in range(0, len(order), cfg.batch_size)
    ]
    no_decay = set(model.net.params()) - model.net.decay_names()

    history = TrainingHistory()
    state: dict[str, np.ndarray] | None = None
    step = 0
    # A diverging run overflows before the finiteness check trips; the
    # warnings are expected noise on that path.
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        for epoch in range(cfg.epochs):
            lr = lr_at(epoch, cfg)
            epoch_losses = []
            epoch_hits = 0
            for batch in batches:
                xb = _wrap(dataset.images.data[batch])
                yb = dataset.labels[batch]
                try:
                    logits, vjp = model.net.apply(xb, training=True)
                    loss, dlogits = label_smoothed_ce(logits, yb, cfg.label_smoothing)
                    if not np.isfinite(loss):
                        raise TrainingDiverged(f"non-finite loss at step {step}")
                    _, grads = vjp(dlogits)
                except ValueError as err:
                    if "NaN or Inf" in str(err):
                        raise TrainingDiverged(
                            f"non-finite values at step {step}: {err}"
                        ) from err
                    raise
                params = model.net.params()
                new_params, state = sgd_step(params, grads, state, cfg, lr=lr, no_decay=no_decay)
                for name, value in new_params.items():
                    model.net.set_param(name, value)
                hits = int((logits.argmax(axis=1) == yb).sum())
                epoch_hits += hits
                epoch_losses.append(loss)
                history.steps.append({
                    "epoch": epoch, "step": step, "lr": lr,
                    "loss": loss, "accuracy": hits / len(yb),
                })
                step += 1
            history.epochs.append({
                "epoch": epoch, "lr": lr,
                "mean_loss": float(np.mean(epoch_losses)),
                "train_accuracy": epoch_hits / dataset.images.n,
            })

        try:
            final_loss, final_acc = evaluate(model, dataset, cfg.label_smoothing)
        except ValueError as err:
            if "NaN or Inf" in str(err):
                raise TrainingDiverged(f"non-finite values at final evaluation: {err}") from err
            raise
    initial_loss = history.steps[0]["loss"] if history.steps else float("nan")
    mean_losses = [e["mean_loss"] for e in history.epochs]
    history.summary = {
        "steps": step,
        "epochs": cfg.epochs,
        "seed": cfg.seed,
        "initial_loss": initial_loss,
        "final_loss": final_loss,
        "final_train_accuracy": final_acc,
        "loss_reduction_pct": (
            100.0 * (1.0 - final_loss / initial_loss) if step else 0.0
        ),
        "no_learning": bool(
            len(mean_losses) >= 2 and max(mean_losses) - min(mean_losses) < 1e-12
        ) or cfg.lr == 0.0,
        "diverged": False,
    }
    return history


def _pad4(shape: tuple[int, ...]) -> tuple[int, int, int, int]:
    return tuple(list(shape) + [1] * (4 - len(shape)))


def save_params(model: Model, directory: str | Path) -> None:
    """Write every parameter (and batch-norm state) as a .t4 file plus a manifest."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = {}
    entries = dict(model.net.params())
    entries.update(model.net.bn_state())
    for name, value in entries.items():
        fname = name.replace(".", "__") + ".t4"
        save_t4(Tensor(value.reshape(_pad4(value.shape))), directory / fname)
        manifest[name] = {"file": fname, "shape": list(value.shape)}
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))


def load_params(model: Model, directory: str | Path) -> None:
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    params = model.net.params()
    bn_state = model.net.bn_state()
    for name, meta in manifest.items():
        value = load_t4(directory / meta["file"]).data.reshape(meta["shape"])
        if name in params:
            model.net.set_param(name, value)
        elif name in bn_state:
            bn_state[name][:] = value
        else:
            raise KeyError(f"checkpoint entry {name!r} not present in model")
