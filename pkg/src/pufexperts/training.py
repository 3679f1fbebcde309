"""Minibatch Adam training with plateau learning-rate decay and early stopping."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgument, TrainingDiverged
from .nn import Adam, bce_with_logits, cast_network, predict_proba

log = logging.getLogger(__name__)

BATCH_CAP = 20000
MONITORS = ("loss", "accuracy")
PRECISIONS = ("float32", "float64")


def batch_size_for(n_crp: int, cap: int = BATCH_CAP) -> int:
    """``min(n_crp, cap)``."""
    if n_crp < 1:
        raise InvalidArgument("need at least one training row")
    return min(n_crp, cap)


@dataclass
class TrainConfig:
    max_epochs: int = 300
    lr: float = 3e-2
    plateau_patience: int = 10
    lr_decay: float = 0.5
    early_stop_patience: int = 25
    val_fraction: float = 0.05
    batch_cap: int = BATCH_CAP
    seed: int = 0
    monitor: str = "accuracy"
    precision: str = "float32"
    warmup_epochs: int = 10

    def __post_init__(self):
        if self.monitor not in MONITORS:
            raise InvalidArgument(f"monitor must be one of {MONITORS}")
        if self.precision not in PRECISIONS:
            raise InvalidArgument(f"precision must be one of {PRECISIONS}")
        if not 0 < self.val_fraction < 0.5:
            raise InvalidArgument("val_fraction must lie in (0, 0.5)")
        if self.max_epochs < 1 or self.lr <= 0:
            raise InvalidArgument("max_epochs must be >= 1 and lr > 0")
        if self.warmup_epochs < 0:
            raise InvalidArgument("warmup_epochs must be >= 0")


@dataclass
class TrainResult:
    epochs: int
    best_epoch: int
    best_val_loss: float
    final_lr: float
    wall_time: float
    val_losses: list = field(default_factory=list)
    val_accuracies: list = field(default_factory=list)


def _validate(net, X, Y, mask=None, batch=65536):
    """(joint loss, joint accuracy) on the validation rows; both are means of per-task means."""
    sums, hits = np.zeros(Y.shape[1]), np.zeros(Y.shape[1])
    for i in range(0, len(X), batch):
        logits, _ = net.forward(X[i:i + batch])
        y = Y[i:i + batch]
        per = np.logaddexp(0.0, logits) - y * logits
        ok = ((logits > 0) == (y > 0.5)).astype(np.float64)
        if mask is not None:
            per = per * mask[i:i + batch]
            ok = ok * mask[i:i + batch]
        sums += per.sum(axis=0)
        hits += ok.sum(axis=0)
    counts = np.full(Y.shape[1], float(len(X))) if mask is None else mask.sum(axis=0)
    live = counts > 0
    return float(np.mean(sums[live] / counts[live])), float(np.mean(hits[live] / counts[live]))


def fit(net, X, Y, cfg: TrainConfig, mask=None) -> TrainResult:
    """Train ``net`` in place on features ``X`` (int8/float, N x n) and labels ``Y`` (N x T).

    A ``cfg.val_fraction`` slice is held out for the learning-rate schedule and
    early stopping; the parameters with the best validation score (loss, or
    accuracy with ``cfg.monitor == "accuracy"``) are restored before returning.
    An optional 0/1 ``mask`` (N x T) excludes rows from individual tasks' losses.
    Steps run in ``cfg.precision``; the network comes back in float64.
    """
    X = np.asarray(X)
    Y = np.asarray(Y, dtype=np.float64).reshape(len(X), -1)
    if mask is not None:
        mask = np.asarray(mask, dtype=np.float64).reshape(Y.shape)
    if len(X) < 2:
        raise InvalidArgument("need at least two training rows")
    t0 = time.perf_counter()
    rng = np.random.default_rng(cfg.seed)
    perm = rng.permutation(len(X))
    n_val = max(1, int(round(cfg.val_fraction * len(X))))
    Xv, Yv = X[perm[:n_val]], Y[perm[:n_val]]
    Xt, Yt = X[perm[n_val:]], Y[perm[n_val:]]
    Mv = Mt = None
    if mask is not None:
        Mv, Mt = mask[perm[:n_val]], mask[perm[n_val:]]
    bs = batch_size_for(len(Xt), cfg.batch_cap)

    def score(loss, acc):
        # higher is better; accuracy ties are broken by loss
        return (-loss,) if cfg.monitor == "loss" else (acc, -loss)

    dtype = np.dtype(cfg.precision)
    cast_network(net, dtype)
    opt = Adam(lr=cfg.lr)
    base_lr = cfg.lr
    best_loss, best_acc = _validate(net, Xv, Yv, Mv)
    best = score(best_loss, best_acc)
    best_params = [p.copy() for p in net.params]
    best_epoch, since_best, since_decay = 0, 0, 0
    losses, accs = [], []
    epoch = 0
    for epoch in range(1, cfg.max_epochs + 1):
        # linear ramp up to the scheduled rate; a full-rate start can kill every ReLU
        warming = epoch <= cfg.warmup_epochs
        opt.lr = base_lr * min(1.0, epoch / cfg.warmup_epochs) if warming else base_lr
        order = rng.permutation(len(Xt))
        for i in range(0, len(Xt), bs):
            idx = order[i:i + bs]
            logits, cache = net.forward(Xt[idx].astype(dtype))
            loss, dlogits = bce_with_logits(logits, Yt[idx], None if Mt is None else Mt[idx])
            if not np.isfinite(loss):
                raise TrainingDiverged(f"non-finite training loss at epoch {epoch}")
            opt.step(net.params, net.backward(cache, dlogits.astype(dtype)))
        v, a = _validate(net, Xv, Yv, Mv)
        if not np.isfinite(v):
            raise TrainingDiverged(f"non-finite validation loss at epoch {epoch}")
        losses.append(v)
        accs.append(a)
        if score(v, a) > best:
            best, best_loss, best_acc, best_epoch = score(v, a), v, a, epoch
            best_params = [p.copy() for p in net.params]
            since_best = since_decay = 0
        elif not warming:
            since_best += 1
            since_decay += 1
            if since_decay >= cfg.plateau_patience:
                base_lr *= cfg.lr_decay
                since_decay = 0
            if since_best >= cfg.early_stop_patience:
                break
    cast_network(net, np.float64)
    for p, b in zip(net.params, best_params):
        p[...] = b
    result = TrainResult(epoch, best_epoch, best_loss, base_lr, time.perf_counter() - t0, losses, accs)
    log.info("trained %d epochs (best %d, val loss %.4f, val acc %.4f) in %.1fs",
             result.epochs, result.best_epoch, best_loss, best_acc, result.wall_time)
    return result


def accuracy(net, X, Y) -> np.ndarray:
    """Per-task accuracy; a probability of exactly 0.5 predicts 0."""
    p = predict_proba(net, X)
    Y = np.asarray(Y).reshape(len(p), -1)
    return np.mean((p > 0.5) == (Y > 0.5), axis=0)
