"""Attack-success arithmetic, CRP budget search and the cross-architecture grid."""
from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgument, SearchExhausted
from .puf import PufSpec, derive_seed

log = logging.getLogger(__name__)

VIABILITY_TABLE = {64: 0.80, 128: 0.90, 256: 0.95, 512: 0.98}
COLLISION_FLOOR = 1e-6
COIN_FLIP = 0.5


def collision_probability(p: float, bits: int) -> float:
    """Chance of guessing all ``bits`` correctly at per-bit accuracy ``p``."""
    if not 0 <= p <= 1:
        raise InvalidArgument("p must lie in [0, 1]")
    if bits < 1:
        raise InvalidArgument("bits must be >= 1")
    return p ** bits


def _floor_rule(bits):
    p = math.ceil(COLLISION_FLOOR ** (1.0 / bits) * 1000) / 1000
    while p > 0.001 and (p - 0.001) ** bits >= COLLISION_FLOOR:
        p = round(p - 0.001, 3)
    while p ** bits < COLLISION_FLOOR:
        p = round(p + 0.001, 3)
    return p


def viability_threshold(bits: int) -> float:
    """Per-bit accuracy an attack needs against an ID of ``bits`` bits.

    Listed sizes use the fixed table.  Other sizes take the smallest p (3
    decimals) with p**bits >= 1e-6, clamped between the neighbouring table
    entries so the threshold never decreases with ID length, and kept above
    the coin-flip rate for very short IDs.
    """
    if bits < 1:
        raise InvalidArgument("bits must be >= 1")
    if bits in VIABILITY_TABLE:
        return VIABILITY_TABLE[bits]
    p = _floor_rule(bits)
    below = [v for b, v in VIABILITY_TABLE.items() if b < bits]
    above = [v for b, v in VIABILITY_TABLE.items() if b > bits]
    if above:
        p = min(p, min(above))
    if below:
        p = max(p, max(below))
    return max(p, COIN_FLIP + 0.001)


@dataclass
class Trial:
    count: int
    seeds: list
    accuracies: list
    passed: bool


@dataclass
class SearchResult:
    minimal_count: int
    ledger: list = field(default_factory=list)

    def to_csv(self) -> str:
        out = io.StringIO()
        w = csv.writer(out)
        w.writerow(["count", "passed", "seeds", "accuracies"])
        for t in self.ledger:
            w.writerow([t.count, int(t.passed), " ".join(map(str, t.seeds)),
                        " ".join(f"{a:.4f}" for a in t.accuracies)])
        return out.getvalue()

    def to_markdown(self) -> str:
        rows = [[str(t.count), "pass" if t.passed else "fail",
                 " ".join(f"{a:.4f}" for a in t.accuracies)] for t in self.ledger]
        return markdown_table(["crp", "result", "acc"], rows)


def crp_search(spec: PufSpec | None, attack, start: int, target: float, m: int = 3, *,
               cap: int = 8_000_000, ratio: float = 1.5, seed: int = 0, n_test: int = 10_000,
               k: int | None = None, cfg=None) -> SearchResult:
    """Smallest training-set size at which every one of ``m`` fresh PUFs is modelled.

    ``attack`` is an attack id ("mope", "lr", "mursi") run against fresh
    instances of ``spec``, or a callable ``attack(count, trial_seed) ->
    accuracy`` (``spec`` is then ignored).  A failing level doubles the count;
    a passing level moves geometrically toward the last failure.  The search
    stops once the pass/fail bracket ratio is at most ``ratio``.
    """
    if start < 1 or m < 1:
        raise InvalidArgument("start and m must be >= 1")
    if callable(attack):
        run = attack
    else:
        from .attacks import attack_fresh_puf

        def run(count, trial_seed):
            return attack_fresh_puf(spec, attack, count, trial_seed, n_test=n_test, k=k, cfg=cfg)

    ledger, passes, fails = [], set(), set()
    count, level = start, 0
    while True:
        if count > cap:
            raise SearchExhausted(f"no passing level up to the cap of {cap} CRPs", ledger)
        seeds = [derive_seed(seed, level, j) for j in range(m)]
        accs = []
        for s in seeds:
            accs.append(float(run(count, s)))
            if accs[-1] < target:
                break
        ok = len(accs) == m and min(accs) >= target
        ledger.append(Trial(count, seeds[:len(accs)], accs, ok))
        log.info("level %d: %d CRPs -> %s %s", level, count, "pass" if ok else "fail", accs)
        level += 1
        if ok:
            passes.add(count)
        else:
            fails.add(count)
            passes = {p for p in passes if p > count}
        lo = max((f for f in fails if not passes or f < min(passes)), default=None)
        hi = min(passes, default=None)
        if hi is None:
            count = count * 2
        elif lo is None:
            if hi == 1:
                break
            count = max(1, hi // 2)
        elif hi / lo <= ratio or hi - lo <= 1:
            break
        else:
            count = int(round(math.sqrt(hi * lo)))
    return SearchResult(hi, ledger)


def markdown_table(header, rows) -> str:
    widths = [max(len(str(h)), *(len(str(r[i])) for r in rows)) if rows else len(str(h))
              for i, h in enumerate(header)]
    def line(cells):
        return "| " + " | ".join(str(c).ljust(w) for c, w in zip(cells, widths)) + " |"
    sep = "|" + "|".join("-" * (w + 2) for w in widths) + "|"
    return "\n".join([line(header), sep] + [line(r) for r in rows]) + "\n"


@dataclass
class CrossMatrix:
    targets: list
    models: list
    accuracy: np.ndarray

    @property
    def shape(self):
        return self.accuracy.shape

    def to_csv(self) -> str:
        out = io.StringIO()
        w = csv.writer(out)
        w.writerow(["target"] + self.models)
        for t, row in zip(self.targets, self.accuracy):
            w.writerow([t] + [f"{a:.4f}" for a in row])
        return out.getvalue()

    def to_markdown(self) -> str:
        rows = [[t] + [f"{100 * a:.0f}" for a in row] for t, row in zip(self.targets, self.accuracy)]
        return markdown_table(["PUFs/Model"] + self.models, rows)


def cross_matrix(models, targets, budgets, *, seed: int = 0, n_test: int = 10_000, cfg=None) -> CrossMatrix:
    """Held-out accuracy of each model (rows: targets, columns: models).

    ``models`` holds (attack id, k) pairs; k is None for "mope", which thus
    fills a single column.  ``budgets`` gives the training-set size per target.
    """
    from .attacks import attack_fresh_puf

    models, targets = list(models), list(targets)
    if len(budgets) != len(targets):
        raise InvalidArgument("one budget per target required")
    grid = np.zeros((len(targets), len(models)))
    for i, (spec, budget) in enumerate(zip(targets, budgets)):
        for j, (attack, k) in enumerate(models):
            grid[i, j] = attack_fresh_puf(spec, attack, budget, derive_seed(seed, i), n_test=n_test,
                                          k=k, cfg=cfg)
            log.info("%s / %s(%s): %.4f", spec.label(), attack, k, grid[i, j])
    labels = [a if k is None else f"{a}:{k}" for a, k in models]
    return CrossMatrix([s.label() for s in targets], labels, grid)
