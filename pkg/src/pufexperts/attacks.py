"""Uniform entry point over the attack implementations."""
from __future__ import annotations

from dataclasses import replace

from .baselines import train_lr_product, train_mursi
from .dataset import CrpSet, generate_crps, split_counts
from .errors import InvalidArgument
from .mope import MopeConfig, train_mope
from .puf import PufSpec, derive_seed

ATTACKS = ("mope", "lr", "mursi")


def run_attack(attack: str, train: CrpSet, test: CrpSet | None = None, k: int | None = None,
               cfg: MopeConfig | None = None):
    """Train ``attack`` on ``train``; returns (model, AttackReport).

    Only the MoPE attack may run without ``k``; the baselines need it.
    """
    cfg = cfg or MopeConfig()
    if attack == "mope":
        if k is not None:
            raise InvalidArgument("mope requires no structure knowledge")
        return train_mope(train, cfg, test)
    if attack not in ATTACKS:
        raise InvalidArgument(f"unknown attack {attack!r}")
    if k is None:
        raise InvalidArgument(f"{attack} needs the XOR width k")
    trainer = train_lr_product if attack == "lr" else train_mursi
    return trainer(train, k, cfg.train_config(), test)


def fresh_attack(spec: PufSpec, attack: str, count: int, trial_seed: int, *, n_test: int = 10_000,
                 k: int | None = None, cfg: MopeConfig | None = None):
    """One attack on a freshly drawn instance of ``spec``; returns its AttackReport.

    The instance, challenges, split and model seed all derive from ``trial_seed``.
    """
    cfg = replace(cfg or MopeConfig(), seed=derive_seed(trial_seed, 3) % 2**32)
    fresh = replace(spec, seed=derive_seed(trial_seed, 0), loop_positions=None)
    crps = generate_crps([fresh], derive_seed(trial_seed, 1), count + n_test)
    train, test = split_counts(crps, count, n_test, derive_seed(trial_seed, 2))
    return run_attack(attack, train, test, k, cfg)[1]


def attack_fresh_puf(spec: PufSpec, attack: str, count: int, trial_seed: int, *, n_test: int = 10_000,
                     k: int | None = None, cfg: MopeConfig | None = None) -> float:
    """Accuracy of one attack on a freshly drawn instance of ``spec``."""
    return fresh_attack(spec, attack, count, trial_seed, n_test=n_test, k=k, cfg=cfg).accuracy
