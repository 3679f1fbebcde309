"""Structure-aware reference attacks.

Both baselines need the XOR width ``k`` of the target up front; that is the
knowledge the generic MoPE attack does without.
"""
from __future__ import annotations

import time
from dataclasses import asdict

import numpy as np

from .dataset import CrpSet
from .errors import InvalidArgument
from .mope import AttackReport, evaluate
from .nn import Dense, Sequential
from .training import TrainConfig, fit


class LrProductModel:
    """Logit = prod_l (<w_l, x> + b_l); a k-XOR arbiter model in parity features."""

    def __init__(self, n, k, seed=0):
        if k < 1:
            raise InvalidArgument("k must be >= 1")
        rng = np.random.default_rng(seed)
        self.n, self.k = n, k
        self.W = rng.normal(0.0, 1.0 / np.sqrt(n), size=(k, n))
        self.b = np.zeros(k)
        self.tasks = 1

    @property
    def params(self):
        return [self.W, self.b]

    def forward(self, X):
        X = np.asarray(X, dtype=self.W.dtype)
        A = X @ self.W.T + self.b
        return np.prod(A, axis=1, keepdims=True), (X, A)

    def backward(self, cache, dlogits):
        X, A = cache
        others = np.empty_like(A)
        for l in range(self.k):
            others[:, l] = np.prod(np.delete(A, l, axis=1), axis=1)
        dA = dlogits * others
        return [dA.T @ X, dA.sum(axis=0)]


def mursi_hidden_sizes(k: int, symmetric: bool = True) -> tuple:
    """(2^(k-1), 2^k, 2^(k-1)); ``symmetric=False`` gives (2^(k-1), 2^k, 2^k)."""
    if k < 1:
        raise InvalidArgument("k must be >= 1")
    return (2 ** (k - 1), 2 ** k, 2 ** (k - 1) if symmetric else 2 ** k)


class MursiModel(Sequential):
    """Three ReLU hidden layers sized from ``k`` and one logit per task.

    With ``tasks > 1`` the hidden stack is shared by all heads (share-bottom).
    """

    def __init__(self, n, k, tasks=1, seed=0, symmetric=True):
        rng = np.random.default_rng(seed)
        self.n, self.k, self.tasks = n, k, tasks
        self.hidden = mursi_hidden_sizes(k, symmetric)
        sizes = (n,) + self.hidden
        layers = [Dense(a, b, "relu", rng=rng) for a, b in zip(sizes, sizes[1:])]
        layers.append(Dense(sizes[-1], tasks, "identity", rng=rng))
        super().__init__(layers)


def _report(name, net, train, test, res, wall, cfg, k):
    acc = evaluate(net, test) if test is not None else None
    return AttackReport(name, len(train), acc, res.epochs, wall, cfg.seed,
                        n_test=len(test) if test is not None else 0,
                        config={**asdict(cfg), "k": k},
                        extra={"best_epoch": res.best_epoch, "val_loss": res.best_val_loss})


def _single(train):
    if len(train) == 0:
        raise InvalidArgument("empty training set")
    if train.tasks != 1:
        raise InvalidArgument(f"expected one response column, got {train.tasks}")


def train_lr_product(train: CrpSet, k: int, cfg: TrainConfig | None = None, test: CrpSet | None = None):
    cfg = cfg or TrainConfig()
    _single(train)
    t0 = time.perf_counter()
    net = LrProductModel(train.n, k, cfg.seed)
    res = fit(net, train.features(), train.responses, cfg)
    return net, _report("lr", net, train, test, res, time.perf_counter() - t0, cfg, k)


def train_mursi(train: CrpSet, k: int, cfg: TrainConfig | None = None, test: CrpSet | None = None,
                symmetric: bool = True):
    cfg = cfg or TrainConfig()
    _single(train)
    t0 = time.perf_counter()
    net = MursiModel(train.n, k, 1, cfg.seed, symmetric)
    res = fit(net, train.features(), train.responses, cfg)
    return net, _report("mursi", net, train, test, res, time.perf_counter() - t0, cfg, k)
