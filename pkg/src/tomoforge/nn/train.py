"""Losses, optimizers and the epoch loop with scheduled optimizers and early stopping."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from ..errors import ConfigError, Divergence
from .network import Network

_EPS_PROB = 1e-7


def mse_loss(pred, target):
    diff = pred - target
    # overflow shows up as an inf loss, which train() reports as Divergence
    with np.errstate(over="ignore", invalid="ignore"):
        return float(np.mean(diff ** 2)), 2.0 * diff / diff.size


def bce_loss(prob, target):
    """Binary cross-entropy on probabilities; gradient w.r.t. the probabilities."""
    p = np.clip(prob, _EPS_PROB, 1.0 - _EPS_PROB)
    loss = -np.mean(target * np.log(p) + (1.0 - target) * np.log(1.0 - p))
    grad = (p - target) / (p * (1.0 - p)) / p.size
    return float(loss), grad


LOSSES = {"mse": mse_loss, "binary_cross_entropy": bce_loss}


class Adam:
    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self._m: dict = {}
        self._v: dict = {}

    def step(self, net: Network):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        lr_t = self.lr * np.sqrt(1.0 - b2 ** self.t) / (1.0 - b1 ** self.t)
        for layer, name in net.trainable_params():
            key = (id(layer), name)
            g = layer.grads[name]
            m = self._m.get(key)
            if m is None:
                m = self._m[key] = np.zeros_like(g)
                self._v[key] = np.zeros_like(g)
            v = self._v[key]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            layer.params[name] = layer.params[name] - lr_t * m / (np.sqrt(v) + self.eps)


class SGD:
    def __init__(self, lr=1e-2):
        self.lr = lr

    def step(self, net: Network):
        for layer, name in net.trainable_params():
            layer.params[name] = layer.params[name] - self.lr * layer.grads[name]


OPTIMIZERS = {"adam": Adam, "sgd": SGD}


@dataclass
class Phase:
    optimizer: str
    lr: float
    epochs: int


@dataclass
class TrainConfig:
    """Training recipe.

    ``schedule`` runs phases in order, each with a fresh optimizer state.
    ``early_stop`` is either ``("val_loss", threshold)``, ``("train_val_loss",
    threshold)`` (both train and val at or below), or ``("patience", rounds)``.
    """

    schedule: list = field(default_factory=lambda: [Phase("adam", 3e-3, 1), Phase("adam", 1e-3, 2),
                                                    Phase("sgd", 1e-2, 1)])
    batch_size: int = 256
    shuffle: bool = True
    early_stop: tuple | None = None
    loss: str = "mse"
    seed: int = 0

    def __post_init__(self):
        self.schedule = [p if isinstance(p, Phase) else Phase(*p) for p in self.schedule]
        self.validate()

    def validate(self):
        if not self.schedule:
            raise ConfigError("schedule: at least one phase required")
        for p in self.schedule:
            if p.optimizer not in OPTIMIZERS:
                raise ConfigError(f"schedule.optimizer: unknown {p.optimizer!r}")
            if not p.lr > 0:
                raise ConfigError(f"schedule.lr must be > 0, got {p.lr}")
            if p.epochs < 0:
                raise ConfigError("schedule.epochs must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.loss not in LOSSES:
            raise ConfigError(f"loss: unknown {self.loss!r}")
        if self.early_stop is not None and self.early_stop[0] not in ("val_loss", "train_val_loss", "patience"):
            raise ConfigError(f"early_stop: unknown metric {self.early_stop[0]!r}")

    def to_dict(self):
        d = asdict(self)
        d["schedule"] = [asdict(p) for p in self.schedule]
        return d


@dataclass
class History:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    phase: list = field(default_factory=list)
    initial_val_loss: float = float("nan")
    stopped_early: bool = False

    @property
    def epochs(self) -> int:
        return len(self.train_loss)

    def to_dict(self):
        return asdict(self)


def evaluate_loss(net: Network, X, Y, loss="mse", batch_size=8192) -> float:
    fn = LOSSES[loss]
    pred = net.predict(X, batch_size)
    return fn(pred.reshape(Y.shape), Y)[0]


def _stop(cfg: TrainConfig, hist: History, best: list) -> bool:
    if cfg.early_stop is None:
        return False
    metric, value = cfg.early_stop
    tr, va = hist.train_loss[-1], hist.val_loss[-1]
    if metric == "val_loss":
        return va <= value
    if metric == "train_val_loss":
        return tr <= value and va <= value
    # patience: stop after `value` epochs without a new best val loss
    if va < best[0]:
        best[0], best[1] = va, 0
        return False
    best[1] += 1
    return best[1] >= int(value)


def train(net: Network, X, Y, X_val, Y_val, cfg: TrainConfig | None = None, log=None) -> History:
    """Train ``net`` in place and return the per-epoch history.

    Train loss per epoch is the mean of the minibatch losses seen during that
    epoch; val loss is evaluated on the full validation set afterwards.
    Raises :class:`Divergence` as soon as a loss is not finite.
    """
    cfg = cfg or TrainConfig()
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    X_val = np.asarray(X_val, dtype=float)
    Y_val = np.asarray(Y_val, dtype=float)
    if X.shape[0] == 0 or X_val.shape[0] == 0:
        raise ConfigError("training and validation sets must be nonempty")
    if Y.ndim == 1:
        Y = Y[:, None]
        Y_val = Y_val.reshape(-1, 1)
    loss_fn = LOSSES[cfg.loss]
    rng = np.random.default_rng(cfg.seed)
    hist = History(initial_val_loss=evaluate_loss(net, X_val, Y_val, cfg.loss))
    n = X.shape[0]
    best = [np.inf, 0]
    for pi, phase in enumerate(cfg.schedule):
        opt = OPTIMIZERS[phase.optimizer](lr=phase.lr)
        for _ in range(phase.epochs):
            order = rng.permutation(n) if cfg.shuffle else np.arange(n)
            total, seen = 0.0, 0
            for start in range(0, n, cfg.batch_size):
                idx = order[start:start + cfg.batch_size]
                out = net.forward(X[idx], training=True)
                yb = Y[idx]
                loss, grad = loss_fn(out.reshape(yb.shape), yb)
                if not np.isfinite(loss):
                    raise Divergence(f"non-finite training loss in phase {pi}")
                net.backward(grad.reshape(out.shape))
                opt.step(net)
                total += loss * idx.size
                seen += idx.size
            va = evaluate_loss(net, X_val, Y_val, cfg.loss)
            if not np.isfinite(va):
                raise Divergence(f"non-finite validation loss in phase {pi}")
            hist.train_loss.append(total / seen)
            hist.val_loss.append(va)
            hist.phase.append(pi)
            if log is not None:
                log(f"epoch {hist.epochs} phase {pi} train {total / seen:.3e} val {va:.3e}")
            if _stop(cfg, hist, best):
                hist.stopped_early = True
                return hist
    return hist
