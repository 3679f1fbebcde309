"""Multi-gate Mixture-of-PUF-Experts: several PUFs modelled from shared challenges.

All tasks share one bank of experts; every task owns its gate, tower and
output head.  The expert count grows with the number of tasks:
``base + extra * (tasks - 1)``.
"""
from __future__ import annotations

import time
from dataclasses import asdict, dataclass

import numpy as np

from .baselines import MursiModel
from .dataset import CrpSet
from .errors import InvalidArgument
from .mope import AttackReport, MopeConfig, MopeNetwork, evaluate, gate_means
from .training import fit


@dataclass
class MmopeConfig(MopeConfig):
    """``num_experts`` is the base count; ``extra_experts`` are added per extra task."""

    tasks: int = 2
    extra_experts: int = 3

    def __post_init__(self):
        super().__post_init__()
        if self.tasks < 1 or self.extra_experts < 0:
            raise InvalidArgument("tasks must be >= 1 and extra_experts >= 0")

    @property
    def expert_count(self) -> int:
        return self.num_experts + self.extra_experts * (self.tasks - 1)


def build_mmope(n: int, cfg: MmopeConfig | None = None) -> MopeNetwork:
    cfg = cfg or MmopeConfig()
    return MopeNetwork(n, cfg.expert_count, cfg.tasks, cfg.expert_hidden, cfg.tower_hidden,
                       cfg.tau, cfg.seed)


def task_mask(n_rows: int, task_counts) -> np.ndarray:
    """0/1 mask giving task t only the first ``task_counts[t]`` rows."""
    counts = np.asarray(task_counts)
    if np.any(counts < 1) or np.any(counts > n_rows):
        raise InvalidArgument(f"task budgets must lie in [1, {n_rows}]")
    return (np.arange(n_rows)[:, None] < counts[None, :]).astype(np.float64)


def _task_reports(name, net, train, test, res, wall, cfg, counts, extra_cfg=None):
    accs = evaluate(net, test) if test is not None else None
    accs = np.atleast_1d(accs) if accs is not None else [None] * train.tasks
    gm = gate_means(net, train.features()) if isinstance(net, MopeNetwork) else None
    reports = []
    for t in range(train.tasks):
        reports.append(AttackReport(
            name, int(counts[t]), None if accs[t] is None else float(accs[t]), res.epochs, wall,
            cfg.seed, n_test=len(test) if test is not None else 0, task=t,
            config={**asdict(cfg), **(extra_cfg or {})},
            gate_means=None if gm is None else gm[t].tolist(),
            extra={"best_epoch": res.best_epoch, "val_loss": res.best_val_loss}))
    return reports


def combined_report(reports) -> AttackReport:
    """One record summarising per-task reports: mean accuracy over shared challenges."""
    accs = [r.accuracy for r in reports]
    mean = None if any(a is None for a in accs) else float(np.mean(accs))
    r0 = reports[0]
    return AttackReport(r0.attack, max(r.n_train for r in reports), mean, r0.epochs, r0.wall_time,
                        r0.seed, n_test=r0.n_test, task=None, config=r0.config,
                        extra={**r0.extra, "task_accuracies": accs})


def train_mmope(train: CrpSet, cfg: MmopeConfig | None = None, test: CrpSet | None = None,
                task_counts=None):
    """Jointly fit one gate/tower/head per response column of ``train``.

    Returns (network, per-task AttackReports).  The joint loss is the
    unweighted mean of per-task BCE.  ``task_counts`` optionally limits task t
    to the first ``task_counts[t]`` training rows.
    """
    if train.tasks < 2:
        raise InvalidArgument(f"multi-task training needs >= 2 response columns, got {train.tasks}")
    base = cfg or MmopeConfig()
    cfg = MmopeConfig(**{**asdict(base), "tasks": train.tasks})
    t0 = time.perf_counter()
    net = build_mmope(train.n, cfg)
    mask = None if task_counts is None else task_mask(len(train), task_counts)
    res = fit(net, train.features(), train.responses, cfg.train_config(), mask)
    wall = time.perf_counter() - t0
    counts = task_counts if task_counts is not None else [len(train)] * train.tasks
    return net, _task_reports("mmope", net, train, test, res, wall, cfg, counts,
                              {"expert_count": cfg.expert_count})


def build_share_bottom_baseline(n: int, tasks: int, k: int, seed: int = 0, symmetric: bool = True):
    """Mursi hidden stack for XOR width ``k`` shared by ``tasks`` sigmoid heads."""
    return MursiModel(n, k, tasks, seed, symmetric)


def train_share_bottom(train: CrpSet, k: int, cfg: MopeConfig | None = None, test: CrpSet | None = None):
    cfg = cfg or MopeConfig()
    if len(train) == 0:
        raise InvalidArgument("empty training set")
    t0 = time.perf_counter()
    net = build_share_bottom_baseline(train.n, train.tasks, k, cfg.seed)
    res = fit(net, train.features(), train.responses, cfg.train_config())
    wall = time.perf_counter() - t0
    return net, _task_reports("share-bottom", net, train, test, res, wall, cfg,
                              [len(train)] * train.tasks, {"k": k})
