"""Mixture-of-PUF-Experts attack network.

Layout for ``tasks`` output heads over ``K`` shared experts::

    x ──> expert_k: dense(32, relu) -> dense(32, relu)        -> h_k(x)
      └─> gate_t: dense(K, sparse softmax)                      -> g_t(x)
    moe_t(x) = sum_k g_t(x)[k] * h_k(x)
    logit_t = head_t(tower_t(moe_t(x)))       tower: dense(16, relu), head: dense(1)

A single-task network (``tasks=1``) is the plain MoPE model; the multi-gate
variant in :mod:`pufexperts.mmope` reuses this class with several tasks.
"""
from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .dataset import CrpSet, transform_challenge
from .errors import InvalidArgument
from .nn import (activate_backward, floating, glorot_init, load_checkpoint, predict_proba,
                 save_checkpoint, sparse_softmax)
from .training import TrainConfig, accuracy, fit


@dataclass
class MopeConfig:
    num_experts: int = 4
    expert_hidden: tuple = (32, 32)
    tower_hidden: int = 16
    tau: float = 1e-4
    max_epochs: int = 300
    lr: float = 3e-2
    plateau_patience: int = 10
    lr_decay: float = 0.5
    early_stop_patience: int = 25
    val_fraction: float = 0.05
    monitor: str = "accuracy"
    precision: str = "float32"
    warmup_epochs: int = 10
    seed: int = 0

    def __post_init__(self):
        self.expert_hidden = tuple(int(h) for h in self.expert_hidden)
        if self.num_experts < 1 or self.tower_hidden < 1 or len(self.expert_hidden) != 2 \
                or min(self.expert_hidden) < 1:
            raise InvalidArgument("expert count and layer sizes must be >= 1 (two expert layers)")
        if self.tau < 0:
            raise InvalidArgument("tau must be >= 0")
        self.train_config()

    def train_config(self) -> TrainConfig:
        names = {f.name for f in fields(TrainConfig)}
        return TrainConfig(**{k: v for k, v in asdict(self).items() if k in names})


def combine_experts(g, h):
    """Gate-weighted sum of expert outputs.

    ``g`` is (K,) or (batch, K); ``h`` is (K, d) or (K, batch, d).
    """
    g, h = floating(g), floating(h)
    if g.shape[-1] != h.shape[0] or h.ndim != g.ndim + 1 or (g.ndim == 2 and g.shape[0] != h.shape[1]):
        raise InvalidArgument(f"gate shape {g.shape} does not fit expert outputs {h.shape}")
    if g.ndim == 1:
        return g @ h
    return np.einsum("bk,kbd->bd", g, h)


class MopeNetwork:
    def __init__(self, n, num_experts=4, tasks=1, expert_hidden=(32, 32), tower_hidden=16,
                 tau=1e-4, seed=0):
        if n < 1 or tasks < 1 or num_experts < 1:
            raise InvalidArgument("n, tasks and num_experts must be >= 1")
        self.n, self.K, self.tasks = n, num_experts, tasks
        self.h1, self.h2 = expert_hidden
        self.tower_hidden = tower_hidden
        self.tau = tau
        self.seed = seed
        rng = np.random.default_rng(seed)
        K, h1, h2 = self.K, self.h1, self.h2
        self.W1 = np.stack([glorot_init(n, h1, rng) for _ in range(K)])
        self.b1 = np.zeros((K, h1))
        self.W2 = np.stack([glorot_init(h1, h2, rng) for _ in range(K)])
        self.b2 = np.zeros((K, h2))
        self.heads = []
        for _ in range(tasks):
            self.heads.append([
                glorot_init(n, K, rng), np.zeros(K),
                glorot_init(h2, tower_hidden, rng), np.zeros(tower_hidden),
                glorot_init(tower_hidden, 1, rng), np.zeros(1),
            ])

    @property
    def params(self):
        return [self.W1, self.b1, self.W2, self.b2] + [p for head in self.heads for p in head]

    def param_count(self) -> int:
        return sum(p.size for p in self.params)

    def architecture(self) -> dict:
        return {"model": "mope", "n": self.n, "num_experts": self.K, "tasks": self.tasks,
                "expert_hidden": [self.h1, self.h2], "tower_hidden": self.tower_hidden,
                "tau": self.tau, "seed": self.seed,
                "activations": {"expert": "relu", "gate": "sparse_softmax", "tower": "relu",
                                "head": "sigmoid"}}

    def experts(self, X):
        """Expert outputs, shape (K, batch, h2), plus intermediates."""
        B = X.shape[0]
        W1cat = self.W1.transpose(1, 0, 2).reshape(self.n, self.K * self.h1)
        Z1 = X @ W1cat + self.b1.reshape(-1)
        A1 = np.maximum(Z1, 0.0).reshape(B, self.K, self.h1).transpose(1, 0, 2)
        Z2 = A1 @ self.W2 + self.b2[:, None, :]
        H = np.maximum(Z2, 0.0)
        return H, (Z1, A1, Z2)

    def gate(self, X, t=0):
        Wg, bg = self.heads[t][:2]
        return sparse_softmax(X @ Wg + bg, self.tau)

    def forward(self, X):
        X = np.asarray(X, dtype=self.W1.dtype)
        if X.ndim != 2 or X.shape[1] != self.n:
            raise InvalidArgument(f"expected (batch, {self.n}) features, got {X.shape}")
        H, inner = self.experts(X)
        logits = np.empty((X.shape[0], self.tasks), dtype=X.dtype)
        per_task = []
        for t, (Wg, bg, Wt, bt, Wo, bo) in enumerate(self.heads):
            Zg = X @ Wg + bg
            G = sparse_softmax(Zg, self.tau)
            M = combine_experts(G, H)
            Zt = M @ Wt + bt
            At = np.maximum(Zt, 0.0)
            logits[:, t] = (At @ Wo + bo)[:, 0]
            per_task.append((Zg, G, M, Zt, At))
        return logits, (X, H, inner, per_task)

    def backward(self, cache, dlogits):
        X, H, (Z1, A1, Z2), per_task = cache
        B = X.shape[0]
        dH = np.zeros_like(H)
        head_grads = []
        for t, (Zg, G, M, Zt, At) in enumerate(per_task):
            Wg, bg, Wt, bt, Wo, bo = self.heads[t]
            dl = dlogits[:, t:t + 1]
            dWo, dbo = At.T @ dl, dl.sum(axis=0)
            dZt = (dl @ Wo.T) * (Zt > 0)
            dWt, dbt = M.T @ dZt, dZt.sum(axis=0)
            dM = dZt @ Wt.T
            dG = np.einsum("bd,kbd->bk", dM, H)
            dH += G.T[:, :, None] * dM[None, :, :]
            dZg = activate_backward(Zg, G, dG, "sparse_softmax")
            head_grads += [X.T @ dZg, dZg.sum(axis=0), dWt, dbt, dWo, dbo]
        dZ2 = dH * (Z2 > 0)
        dW2 = A1.transpose(0, 2, 1) @ dZ2
        db2 = dZ2.sum(axis=1)
        dA1 = (dZ2 @ self.W2.transpose(0, 2, 1)).transpose(1, 0, 2).reshape(B, -1)
        dZ1 = dA1 * (Z1 > 0)
        dW1 = (X.T @ dZ1).reshape(self.n, self.K, self.h1).transpose(1, 0, 2)
        db1 = dZ1.sum(axis=0).reshape(self.K, self.h1)
        return [dW1, db1, dW2, db2] + head_grads

    def moe_outputs(self, X):
        """Per-task combined expert features ``moe_t(X)``."""
        _, (_, _, _, per_task) = self.forward(X)
        return [pt[2] for pt in per_task]

    def save(self, path):
        save_checkpoint(path, self.architecture(), self.params)

    @classmethod
    def load(cls, path):
        arch, params = load_checkpoint(path)
        if arch.get("model") != "mope":
            raise InvalidArgument(f"checkpoint holds a {arch.get('model')!r} model")
        net = cls(arch["n"], arch["num_experts"], arch["tasks"], tuple(arch["expert_hidden"]),
                  arch["tower_hidden"], arch["tau"], arch["seed"])
        for p, q in zip(net.params, params):
            p[...] = q
        return net


def build_mope(n: int, cfg: MopeConfig | None = None) -> MopeNetwork:
    cfg = cfg or MopeConfig()
    return MopeNetwork(n, cfg.num_experts, 1, cfg.expert_hidden, cfg.tower_hidden, cfg.tau, cfg.seed)


@dataclass
class AttackReport:
    attack: str
    n_train: int
    accuracy: float | None
    epochs: int
    wall_time: float
    seed: int
    n_test: int = 0
    task: int | None = None
    config: dict = field(default_factory=dict)
    gate_means: list | None = None
    extra: dict = field(default_factory=dict)

    def to_record(self) -> str:
        """Single-line JSON record."""
        return json.dumps(asdict(self), sort_keys=True, default=_jsonable)


def _jsonable(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, (np.ndarray, tuple)):
        return list(o)
    raise TypeError(f"not JSON serialisable: {type(o)}")


def predict(net, challenges):
    """(bits, probabilities) for raw challenge bits; p == 0.5 predicts 0."""
    p = predict_proba(net, transform_challenge(challenges))
    return (p > 0.5).astype(np.uint8), p


def evaluate(net, test: CrpSet) -> np.ndarray | float:
    """Fraction of correctly predicted bits per task (a float for one task)."""
    acc = accuracy(net, test.features(), test.responses)
    return float(acc[0]) if len(acc) == 1 else acc


def gate_means(net, X, batch=65536):
    sums = np.zeros((net.tasks, net.K))
    for i in range(0, len(X), batch):
        xb = np.asarray(X[i:i + batch], dtype=np.float64)
        for t in range(net.tasks):
            sums[t] += net.gate(xb, t).sum(axis=0)
    return sums / max(len(X), 1)


def train_mope(train: CrpSet, cfg: MopeConfig | None = None, test: CrpSet | None = None):
    """Fit a single-task MoPE; returns (network, AttackReport).

    ``test`` must be disjoint from ``train``; when omitted the report's
    accuracy is None.
    """
    cfg = cfg or MopeConfig()
    if len(train) == 0:
        raise InvalidArgument("empty training set")
    if train.tasks != 1:
        raise InvalidArgument(f"MoPE expects one response column, got {train.tasks}")
    t0 = time.perf_counter()
    net = build_mope(train.n, cfg)
    X = train.features()
    res = fit(net, X, train.responses, cfg.train_config())
    wall = time.perf_counter() - t0
    acc = evaluate(net, test) if test is not None else None
    report = AttackReport("mope", len(train), acc, res.epochs, wall, cfg.seed,
                          n_test=len(test) if test is not None else 0,
                          config=asdict(cfg), gate_means=gate_means(net, X)[0].tolist(),
                          extra={"best_epoch": res.best_epoch, "val_loss": res.best_val_loss})
    return net, report
