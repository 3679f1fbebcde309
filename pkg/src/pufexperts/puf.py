"""Delay-based strong PUFs under the additive delay model.

A chain holds two delay differences per stage: ``sigma`` for the straight
path (challenge bit 0) and ``kappa`` for the crossed path (bit 1).  The
running delay difference evolves as::

    delta_i = delta_{i-1} + sigma_i     if c_i == 0
    delta_i = -delta_{i-1} + kappa_i    if c_i == 1

and the arbiter outputs 1 iff the final difference is strictly positive.

Compositions (XOR, feed-forward XOR, interpose) are described by a
:class:`PufSpec` and instantiated into an immutable :class:`PufInstance`.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgument

KINDS = ("apuf", "xor", "ff", "ipuf")


def derive_seed(seed: int, *keys: int) -> int:
    """Deterministic 64-bit sub-seed for ``seed`` and an integer key path."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in keys))
    return int(ss.generate_state(1, np.uint64)[0])


def _frozen(a):
    a = np.array(a, dtype=np.float64)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class ArbiterChain:
    n: int
    sigma: np.ndarray
    kappa: np.ndarray
    seed: int | None = None

    def __post_init__(self):
        sigma, kappa = _frozen(self.sigma), _frozen(self.kappa)
        if sigma.shape != (self.n,) or kappa.shape != (self.n,):
            raise InvalidArgument(f"chain parameters must have shape ({self.n},)")
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "kappa", kappa)

    def __eq__(self, other):
        if not isinstance(other, ArbiterChain):
            return NotImplemented
        return (self.n == other.n and np.array_equal(self.sigma, other.sigma)
                and np.array_equal(self.kappa, other.kappa))

    __hash__ = None


def new_chain(n: int, seed: int) -> ArbiterChain:
    if n < 1:
        raise InvalidArgument(f"stage count must be >= 1, got {n}")
    rng = np.random.default_rng(seed)
    sigma = rng.standard_normal(n)
    kappa = rng.standard_normal(n)
    return ArbiterChain(n, sigma, kappa, seed)


def _check_bits(challenge, n):
    c = np.asarray(challenge)
    if c.shape[-1] != n:
        raise InvalidArgument(f"challenge length {c.shape[-1]} does not match stage count {n}")
    return c


def eval_chain(chain: ArbiterChain, challenge) -> tuple[int, np.ndarray]:
    """Response bit and the full delay-difference trace for one challenge."""
    c = _check_bits(challenge, chain.n)
    if c.ndim != 1:
        raise InvalidArgument("eval_chain takes a single challenge")
    trace = np.empty(chain.n)
    delta = 0.0
    for i in range(chain.n):
        if c[i]:
            delta = -delta + chain.kappa[i]
        else:
            delta = delta + chain.sigma[i]
        trace[i] = delta
    return int(delta > 0), trace


def to_linear_weights(chain: ArbiterChain) -> tuple[np.ndarray, float]:
    """(w, b) with final delta == <w, x> + b, x the parity feature vector.

    Each stage contributes ``(sigma+kappa)/2 * x_{i+1} + (sigma-kappa)/2 * x_i``
    where ``x_{n+1} = 1``.
    """
    half_sum = (chain.sigma + chain.kappa) / 2
    w = (chain.sigma - chain.kappa) / 2
    w[1:] += half_sum[:-1]
    return w, float(half_sum[-1])


def parity_features(challenges) -> np.ndarray:
    """Suffix products of (1 - 2c) as float64; see :func:`dataset.transform_challenge`."""
    phi = 1.0 - 2.0 * np.asarray(challenges, dtype=np.float64)
    return np.cumprod(phi[..., ::-1], axis=-1)[..., ::-1]


def chain_delta(chain: ArbiterChain, challenges) -> np.ndarray:
    """Final delay difference for a batch of challenges (linear form)."""
    c = _check_bits(challenges, chain.n)
    w, b = to_linear_weights(chain)
    return parity_features(c) @ w + b


def _chain_delta_ff(chain, challenges, loops):
    """Stage-by-stage evaluation with feed-forward loops, batched over rows."""
    c = np.asarray(challenges)
    inserts = {ins - 1: tap - 1 for tap, ins in loops}
    taps = {tap - 1 for tap, _ in loops}
    saved = {}
    delta = np.zeros(c.shape[0])
    for i in range(chain.n):
        if i in inserts:
            bit = saved[inserts[i]] > 0
        else:
            bit = c[:, i].astype(bool)
        delta = np.where(bit, chain.kappa[i] - delta, delta + chain.sigma[i])
        if i in taps:
            saved[i] = delta
    return delta


def insert_bit(challenges, bits, position: int) -> np.ndarray:
    """Insert a column of ``bits`` before 0-based ``position``."""
    c = np.asarray(challenges, dtype=np.uint8)
    col = np.broadcast_to(np.asarray(bits, dtype=np.uint8), c.shape[:1])
    return np.concatenate([c[:, :position], col[:, None], c[:, position:]], axis=1)


@dataclass(frozen=True)
class PufSpec:
    """Declarative PUF description.

    ``kind`` is one of apuf, xor, ff, ipuf.  ``k`` is the XOR width for
    apuf/xor/ff; ``x``/``y`` the upper/lower XOR widths for ipuf.  For ff,
    ``loops`` loops per chain are drawn from the seed unless
    ``loop_positions`` (one tuple of 1-based (tap, insert) pairs per chain)
    is given explicitly.
    """

    kind: str
    n: int
    seed: int = 0
    k: int = 1
    loops: int = 0
    homogeneous: bool = True
    x: int = 0
    y: int = 0
    loop_positions: tuple | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidArgument(f"unknown PUF kind {self.kind!r}")
        if self.n < 1:
            raise InvalidArgument("stage count must be >= 1")
        if self.kind == "ipuf":
            if self.x < 1 or self.y < 1:
                raise InvalidArgument("interpose PUF needs x >= 1 and y >= 1")
        elif self.k < 1:
            raise InvalidArgument("k must be >= 1")
        if self.kind == "apuf" and self.k != 1:
            raise InvalidArgument("apuf has exactly one chain")
        if self.kind == "ff":
            if self.loops < 0 or self.loops > self.n - 1:
                raise InvalidArgument(f"cannot place {self.loops} loops in {self.n} stages")
            if self.loop_positions is not None:
                lp = tuple(tuple((int(t), int(i)) for t, i in chain) for chain in self.loop_positions)
                object.__setattr__(self, "loop_positions", lp)
                if len(lp) != self.k:
                    raise InvalidArgument("need one loop list per chain")
                for chain in lp:
                    for tap, ins in chain:
                        if not 1 <= tap < ins <= self.n:
                            raise InvalidArgument(f"bad loop ({tap}, {ins}) for n={self.n}")
                    if len({ins for _, ins in chain}) != len(chain):
                        raise InvalidArgument("insert positions within a chain must be distinct")

    @property
    def chain_count(self) -> int:
        return self.x + self.y if self.kind == "ipuf" else self.k

    def label(self) -> str:
        if self.kind == "apuf":
            return "apuf"
        if self.kind == "xor":
            return f"xor:{self.k}"
        if self.kind == "ff":
            return f"ff:{self.k}-{self.loops}:{'homo' if self.homogeneous else 'hetero'}"
        return f"ipuf:{self.x},{self.y}"


_SPEC_RE = [
    (re.compile(r"^apuf$"), lambda m: dict(kind="apuf")),
    (re.compile(r"^xor:(\d+)$"), lambda m: dict(kind="xor", k=int(m[1]))),
    (re.compile(r"^ff:(\d+)-(\d+):(homo|hetero)$"),
     lambda m: dict(kind="ff", k=int(m[1]), loops=int(m[2]), homogeneous=m[3] == "homo")),
    (re.compile(r"^ipuf:(\d+),(\d+)$"), lambda m: dict(kind="ipuf", x=int(m[1]), y=int(m[2]))),
]


def parse_spec(text: str, n: int, seed: int = 0) -> PufSpec:
    """Parse "apuf", "xor:K", "ff:K-L:homo|hetero" or "ipuf:X,Y"."""
    token = text.strip().lower()
    for pattern, build in _SPEC_RE:
        m = pattern.match(token)
        if m:
            return PufSpec(n=n, seed=seed, **build(m))
    raise InvalidArgument(f"cannot parse PUF spec {text!r}")


def _draw_loops(n, count, rng):
    used, loops = set(), []
    while len(loops) < count:
        tap, ins = sorted(int(v) + 1 for v in rng.choice(n, size=2, replace=False))
        if ins in used:
            continue
        used.add(ins)
        loops.append((tap, ins))
    return tuple(sorted(loops, key=lambda p: p[1]))


@dataclass(frozen=True)
class PufInstance:
    spec: PufSpec
    chains: tuple
    loop_positions: tuple = ()
    noise: float = 0.0
    _noise_seed: int = field(default=0, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "chains", tuple(self.chains))
        s = self.spec
        if len(self.chains) != s.chain_count:
            raise InvalidArgument(f"{s.label()} needs {s.chain_count} chains, got {len(self.chains)}")
        for i, ch in enumerate(self.chains):
            want = s.n + 1 if s.kind == "ipuf" and i >= s.x else s.n
            if ch.n != want:
                raise InvalidArgument(f"chain {i} has {ch.n} stages, expected {want}")

    @property
    def n(self) -> int:
        return self.spec.n

    def eval(self, challenges, rng=None) -> np.ndarray:
        """Responses in {0, 1} for a (N, n) batch of challenge bits."""
        c = np.asarray(challenges, dtype=np.uint8)
        single = c.ndim == 1
        c = np.atleast_2d(c)
        _check_bits(c, self.n)
        if self.noise > 0 and rng is None:
            rng = np.random.default_rng(self._noise_seed)
        s = self.spec
        if s.kind == "ipuf":
            upper = self._xor(self.chains[: s.x], c, None, rng)
            lower_c = insert_bit(c, upper, s.n // 2)
            r = self._xor(self.chains[s.x:], lower_c, None, rng)
        else:
            loops = self.loop_positions if s.kind == "ff" else None
            r = self._xor(self.chains, c, loops, rng)
        return r[0] if single else r

    def _xor(self, chains, c, loops, rng):
        out = np.zeros(c.shape[0], dtype=np.uint8)
        for i, ch in enumerate(chains):
            if loops and loops[i]:
                delta = _chain_delta_ff(ch, c, loops[i])
            else:
                delta = chain_delta(ch, c)
            if self.noise > 0:
                delta = delta + rng.normal(0.0, self.noise, size=delta.shape)
            out ^= (delta > 0).astype(np.uint8)
        return out


def instantiate(spec: PufSpec, noise: float = 0.0) -> PufInstance:
    """Draw chains (and loop positions) for ``spec`` from its seed."""
    chains = []
    for i in range(spec.chain_count):
        n = spec.n + 1 if spec.kind == "ipuf" and i >= spec.x else spec.n
        chains.append(new_chain(n, derive_seed(spec.seed, 0, i)))
    loops = ()
    if spec.kind == "ff":
        if spec.loop_positions is not None:
            loops = spec.loop_positions
        elif spec.homogeneous:
            shared = _draw_loops(spec.n, spec.loops, np.random.default_rng(derive_seed(spec.seed, 1, 0)))
            loops = (shared,) * spec.k
        else:
            loops = tuple(
                _draw_loops(spec.n, spec.loops, np.random.default_rng(derive_seed(spec.seed, 1, i)))
                for i in range(spec.k)
            )
    return PufInstance(spec, tuple(chains), loops, noise, derive_seed(spec.seed, 2))


def eval_puf(instance: PufInstance, challenge) -> int:
    c = np.asarray(challenge)
    if c.ndim != 1:
        raise InvalidArgument("eval_puf takes a single challenge; use instance.eval for batches")
    return int(instance.eval(c))
