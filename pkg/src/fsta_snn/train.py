"""Surrogate-gradient BPTT training: losses, optimisers, epoch loops."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import numerics as nx
from .analysis import FiringStats, firing_rate
from .numerics import Tensor

OPTIMIZERS = ("sgd_momentum", "adam")
LOSSES = ("rate_ce", "tet")
SCHEDULES = ("cosine", "constant")


@dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = 32
    lr: float = 0.1
    optimizer: str = "sgd_momentum"
    momentum: float = 0.9
    betas: list[float] = field(default_factory=lambda: [0.9, 0.999])
    adam_eps: float = 1e-8
    weight_decay: float = 5e-4
    schedule: str = "cosine"
    loss: str = "rate_ce"
    seed: int = 0
    timesteps: int = 4
    grad_clip: float | None = None
    augment: bool = False
    dtype: str = "float64"
    eval_batch_size: int = 128

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError("lr (learning rate) must be positive")
        if self.batch_size < 1 or self.eval_batch_size < 1:
            raise ValueError("batch size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}")
        if self.loss not in LOSSES:
            raise ValueError(f"loss must be one of {LOSSES}")
        if self.schedule not in SCHEDULES:
            raise ValueError(f"schedule must be one of {SCHEDULES}")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")
        if len(self.betas) != 2:
            raise ValueError("betas needs two values")


@dataclass
class Dataset:
    x: np.ndarray  # [N, C, H, W]
    y: np.ndarray  # [N] int
    name: str = "dataset"
    num_classes: int | None = None

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=np.int64)
        if len(self.x) != len(self.y):
            raise ValueError("x and y lengths differ")
        if self.num_classes is None:
            self.num_classes = int(self.y.max()) + 1 if len(self.y) else 0

    def __len__(self) -> int:
        return len(self.y)


@dataclass
class Metrics:
    epoch: int = 0
    train_loss: float = float("nan")
    train_acc: float = float("nan")
    test_loss: float = float("nan")
    test_acc: float = float("nan")
    firing_rate: float = float("nan")
    lr: float = float("nan")
    seconds: float = 0.0


@dataclass
class EvalResult:
    loss: float
    accuracy: float
    firing: FiringStats


# -------------------------------------------------------------------- losses
def _check_labels(labels, classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= classes):
        raise ValueError(f"labels must lie in [0, {classes}), got range [{labels.min()}, {labels.max()}]")
    return labels


def loss_rate_ce(logits: Tensor, labels) -> Tensor:
    """Cross-entropy of softmax(mean_t logits), averaged over the batch."""
    t, n, k = logits.shape
    labels = _check_labels(labels, k)
    logp = nx.log_softmax(logits.mean(axes=0), axis=-1)
    return -(logp[np.arange(n), labels]).mean()


def loss_tet(logits: Tensor, labels) -> Tensor:
    """Per-timestep cross-entropy averaged over time and batch."""
    t, n, k = logits.shape
    labels = _check_labels(labels, k)
    logp = nx.log_softmax(logits, axis=-1)
    return -(logp[:, np.arange(n), labels]).mean()


LOSS_FNS = {"rate_ce": loss_rate_ce, "tet": loss_tet}


def predictions(logits: np.ndarray) -> np.ndarray:
    return logits.mean(axis=0).argmax(axis=-1)


# ---------------------------------------------------------------- optimisers
def optimizer_step(params: dict[str, Tensor], grads: dict[str, np.ndarray], state: dict,
                   config: TrainConfig, lr: float | None = None) -> None:
    """Update ``params`` in place.

    SGD: ``v <- mu v + g``, ``p <- p - lr (v + wd p)``. Adam: bias-corrected
    moments with L2 weight decay folded into the gradient.
    """
    lr = config.lr if lr is None else lr
    state["step"] = state.get("step", 0) + 1
    step = state["step"]
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != p.shape:
            raise nx.ShapeError(f"{name}: gradient {g.shape} vs parameter {p.shape}")
        if config.optimizer == "sgd_momentum":
            v = state.setdefault(f"v/{name}", np.zeros_like(p.data))
            v *= config.momentum
            v += g
            p.data = p.data - lr * (v + config.weight_decay * p.data)
        else:
            b1, b2 = config.betas
            g = g + config.weight_decay * p.data
            m = state.setdefault(f"m/{name}", np.zeros_like(p.data))
            s = state.setdefault(f"s/{name}", np.zeros_like(p.data))
            m *= b1
            m += (1 - b1) * g
            s *= b2
            s += (1 - b2) * g * g
            m_hat = m / (1 - b1 ** step)
            s_hat = s / (1 - b2 ** step)
            p.data = p.data - lr * m_hat / (np.sqrt(s_hat) + config.adam_eps)


def learning_rate(config: TrainConfig, epoch: int) -> float:
    if config.schedule == "constant" or config.epochs <= 1:
        return config.lr
    return 0.5 * config.lr * (1 + math.cos(math.pi * epoch / config.epochs))


def clip_gradients(grads: dict[str, np.ndarray], max_norm: float) -> float:
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if total > max_norm:
        scale = max_norm / (total + 1e-12)
        for k in grads:
            grads[k] = grads[k] * scale
    return total


def augment_batch(x: np.ndarray, rng: np.random.Generator, pad: int = 4) -> np.ndarray:
    """Random horizontal flip plus random crop from a zero-padded copy."""
    n, _, h, w = x.shape
    flip = rng.random(n) < 0.5
    x = np.where(flip[:, None, None, None], x[..., ::-1], x)
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    dy = rng.integers(0, 2 * pad + 1, n)
    dx = rng.integers(0, 2 * pad + 1, n)
    return np.stack([xp[i, :, dy[i]:dy[i] + h, dx[i]:dx[i] + w] for i in range(n)])


# -------------------------------------------------------------------- loops
def _batches(n: int, batch_size: int, order: np.ndarray):
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def train_epoch(net, dataset: Dataset, config: TrainConfig, state: dict, epoch: int = 0,
                rng: np.random.Generator | None = None) -> Metrics:
    """One pass of shuffled minibatches: forward, loss, BPTT, optimiser step."""
    if len(dataset) == 0:
        raise ValueError("cannot train on an empty dataset")
    rng = np.random.default_rng([config.seed, epoch]) if rng is None else rng
    lr = learning_rate(config, epoch)
    loss_fn = LOSS_FNS[config.loss]
    params = net.parameters()
    dtype = np.dtype(config.dtype)
    started = time.perf_counter()
    net.train()
    total_loss, correct = 0.0, 0
    for idx in _batches(len(dataset), config.batch_size, rng.permutation(len(dataset))):
        xb = dataset.x[idx]
        if config.augment:
            xb = augment_batch(xb, rng)
        logits, _ = net.forward(xb.astype(dtype), config.timesteps, training=True)
        loss = loss_fn(logits, dataset.y[idx])
        for p in params.values():
            p.grad = None
        nx.backward(loss)
        grads = {k: p.grad for k, p in params.items() if p.grad is not None}
        if config.grad_clip:
            clip_gradients(grads, config.grad_clip)
        optimizer_step(params, grads, state, config, lr)
        total_loss += loss.item() * len(idx)
        correct += int((predictions(logits.data) == dataset.y[idx]).sum())
    net.eval()
    return Metrics(epoch=epoch, train_loss=total_loss / len(dataset), train_acc=correct / len(dataset),
                   lr=lr, seconds=time.perf_counter() - started)


def evaluate(net, dataset: Dataset, timesteps: int | None = None, batch_size: int = 128,
             dtype: str = "float64", loss: str = "rate_ce") -> EvalResult:
    """Inference-mode accuracy, loss and firing statistics; no parameter or BN-stat updates."""
    loss_fn = LOSS_FNS[loss]
    firing: FiringStats | None = None
    total_loss, correct = 0.0, 0
    for idx in _batches(len(dataset), batch_size, np.arange(len(dataset))):
        logits, trace = net.forward(dataset.x[idx].astype(dtype), timesteps, trace=True, training=False)
        total_loss += loss_fn(nx.Tensor(logits.data), dataset.y[idx]).item() * len(idx)
        correct += int((predictions(logits.data) == dataset.y[idx]).sum())
        stats = firing_rate(trace)
        firing = stats if firing is None else firing.merge(stats)
    n = max(len(dataset), 1)
    return EvalResult(total_loss / n, correct / n, firing)


def fit(net, train_set: Dataset, test_set: Dataset | None, config: TrainConfig, state: dict | None = None,
        start_epoch: int = 0, log=None) -> list[Metrics]:
    state = {} if state is None else state
    history = []
    for epoch in range(start_epoch, config.epochs):
        m = train_epoch(net, train_set, config, state, epoch)
        if test_set is not None and len(test_set):
            ev = evaluate(net, test_set, config.timesteps, config.eval_batch_size, config.dtype, config.loss)
            m.test_loss, m.test_acc, m.firing_rate = ev.loss, ev.accuracy, ev.firing.network_rate
        history.append(m)
        if log is not None:
            log(m)
    return history
