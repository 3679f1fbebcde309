"""Challenge generation, parity features, CRP sets and their file formats.

CRPB v1 layout (little-endian)::

    offset  size  field
    0       4     magic b"CRPB"
    4       1     version (1)
    5       1     flags (0)
    6       2     reserved (0)
    8       4     n_stages
    12      4     n_tasks
    16      8     count
    24      ...   count records: ceil(n/8) challenge bytes, ceil(T/8) response bytes

Bits are packed LSB-first: bit i lives in bit (i % 8) of byte i // 8.
"""
from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .errors import FormatError, InvalidArgument
from .puf import PufSpec, instantiate

MAGIC = b"CRPB"
VERSION = 1
HEADER = struct.Struct("<4sBBHIIQ")


def transform_challenge(c) -> np.ndarray:
    """Parity feature vector(s): x_i = prod_{j >= i} (1 - 2 c_j), as int8 in {-1, +1}.

    Accepts a single challenge or a (N, n) batch.
    """
    phi = 1 - 2 * np.asarray(c, dtype=np.int8)
    return np.cumprod(phi[..., ::-1], axis=-1, dtype=np.int8)[..., ::-1]


def random_challenges(n: int, count: int, seed: int) -> np.ndarray:
    return np.random.default_rng(seed).integers(0, 2, size=(count, n), dtype=np.uint8)


@dataclass(eq=False)
class CrpSet:
    n: int
    challenges: np.ndarray
    responses: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.challenges = np.ascontiguousarray(self.challenges, dtype=np.uint8)
        r = np.asarray(self.responses, dtype=np.uint8)
        if r.ndim == 1:
            r = r[:, None]
        self.responses = np.ascontiguousarray(r)
        if self.challenges.ndim != 2 or self.challenges.shape[1] != self.n:
            raise InvalidArgument(f"challenges must have shape (N, {self.n})")
        if len(self.responses) != len(self.challenges):
            raise InvalidArgument("one response row per challenge required")
        if self.responses.shape[1] < 1:
            raise InvalidArgument("at least one response column required")
        if self.challenges.max(initial=0) > 1 or self.responses.max(initial=0) > 1:
            raise InvalidArgument("challenge and response bits must be 0 or 1")

    @property
    def tasks(self) -> int:
        return self.responses.shape[1]

    def __len__(self):
        return len(self.challenges)

    def __eq__(self, other):
        if not isinstance(other, CrpSet):
            return NotImplemented
        return (self.n == other.n and np.array_equal(self.challenges, other.challenges)
                and np.array_equal(self.responses, other.responses))

    __hash__ = None

    def features(self) -> np.ndarray:
        return transform_challenge(self.challenges)

    def take(self, idx) -> CrpSet:
        return CrpSet(self.n, self.challenges[idx], self.responses[idx], dict(self.meta))

    def column(self, t: int) -> CrpSet:
        meta = dict(self.meta)
        if "specs" in meta:
            meta["specs"] = [meta["specs"][t]]
        return CrpSet(self.n, self.challenges, self.responses[:, t], meta)


def generate_crps(specs, challenge_seed: int, count: int) -> CrpSet:
    """Query every PUF in ``specs`` with the same ``count`` random challenges."""
    specs = list(specs)
    if not specs:
        raise InvalidArgument("need at least one PUF spec")
    if count < 1:
        raise InvalidArgument("count must be >= 1")
    n = specs[0].n
    if any(s.n != n for s in specs):
        raise InvalidArgument("all PUF specs must share the stage count")
    challenges = random_challenges(n, count, challenge_seed)
    instances = [instantiate(s) for s in specs]
    responses = np.stack([inst.eval(challenges) for inst in instances], axis=1)
    meta = {
        "origin": "simulated",
        "specs": [s.label() for s in specs],
        "puf_seeds": [s.seed for s in specs],
        "loop_positions": [[list(map(list, ch)) for ch in inst.loop_positions] for inst in instances],
        "challenge_seed": challenge_seed,
        "generator": f"pufexperts {__version__}",
    }
    return CrpSet(n, challenges, responses, meta)


def _row_keys(challenges):
    packed = np.packbits(challenges, axis=1, bitorder="little")
    return np.ascontiguousarray(packed).view(np.dtype((np.void, packed.shape[1]))).ravel()


def _partition(crps: CrpSet, sizes, seed):
    """Shuffle and cut into consecutive parts, never splitting duplicate challenges."""
    keys = _row_keys(crps.challenges)
    _, group = np.unique(keys, return_inverse=True)
    rng = np.random.default_rng(seed)
    rank = rng.permutation(group.max() + 1)[group]
    order = np.argsort(rank, kind="stable")
    ranked = rank[order]
    parts, start = [], 0
    for size in sizes:
        stop = min(start + size, len(order))
        while 0 < stop < len(order) and ranked[stop] == ranked[stop - 1]:
            stop += 1
        parts.append(crps.take(order[start:stop]))
        start = stop
    return parts


def split(crps: CrpSet, train_fraction: float, seed: int) -> tuple[CrpSet, CrpSet]:
    if not 0 < train_fraction < 1:
        raise InvalidArgument(f"train_fraction must lie in (0, 1), got {train_fraction}")
    n_train = int(round(train_fraction * len(crps)))
    return tuple(_partition(crps, [n_train, len(crps)], seed))


def split_counts(crps: CrpSet, n_train: int, n_test: int, seed: int) -> tuple[CrpSet, CrpSet]:
    """Disjoint random train/test subsets of the requested sizes."""
    if n_train < 1 or n_test < 1:
        raise InvalidArgument("train and test sizes must be >= 1")
    if n_train + n_test > len(crps):
        raise InvalidArgument(
            f"requested {n_train} train + {n_test} test rows but the set has {len(crps)}")
    train, test = _partition(crps, [n_train, n_test], seed)
    return train, test


def _pack(bits):
    return np.packbits(bits, axis=1, bitorder="little")


def save_crps(crps: CrpSet, path) -> None:
    cb = _pack(crps.challenges)
    rb = _pack(crps.responses)
    records = np.concatenate([cb, rb], axis=1)
    with open(path, "wb") as f:
        f.write(HEADER.pack(MAGIC, VERSION, 0, 0, crps.n, crps.tasks, len(crps)))
        f.write(records.tobytes())


def load_crps(path) -> CrpSet:
    data = Path(path).read_bytes()
    if len(data) < HEADER.size:
        raise FormatError(f"truncated header: {len(data)} of {HEADER.size} bytes", offset=len(data))
    magic, version, flags, reserved, n, tasks, count = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}", offset=0)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", offset=4)
    if flags != 0:
        raise FormatError(f"unknown flags {flags:#x}", offset=5)
    if n < 1 or tasks < 1:
        raise FormatError("stage and task counts must be >= 1", offset=8)
    cw, rw = (n + 7) // 8, (tasks + 7) // 8
    width = cw + rw
    body = len(data) - HEADER.size
    if body < count * width:
        rec = body // width
        raise FormatError(f"truncated at record {rec} of {count}", offset=HEADER.size + rec * width)
    if body > count * width:
        raise FormatError("trailing bytes after last record", offset=HEADER.size + count * width)
    rec = np.frombuffer(data, dtype=np.uint8, offset=HEADER.size).reshape(count, width)
    challenges = np.unpackbits(rec[:, :cw], axis=1, count=n, bitorder="little")
    responses = np.unpackbits(rec[:, cw:], axis=1, count=tasks, bitorder="little")
    return CrpSet(n, challenges, responses, {"origin": "crpb", "path": str(path)})


def crpb_size(n: int, tasks: int, count: int) -> int:
    return HEADER.size + count * ((n + 7) // 8 + (tasks + 7) // 8)


def import_csv(path, n: int, tasks: int) -> CrpSet:
    """Rows of n challenge bits then ``tasks`` response bits; a header row is skipped."""
    rows = []
    with open(path, newline="") as f:
        for lineno, row in enumerate(csv.reader(f), start=1):
            tokens = [t.strip() for t in row]
            if not tokens or tokens == [""]:
                continue
            if lineno == 1 and not rows and not all(t in ("0", "1") for t in tokens):
                continue
            if len(tokens) != n + tasks:
                raise FormatError(f"expected {n + tasks} fields, found {len(tokens)}", line=lineno)
            for t in tokens:
                if t not in ("0", "1"):
                    raise FormatError(f"non-binary token {t!r}", line=lineno)
            rows.append([t == "1" for t in tokens])
    if not rows:
        raise FormatError("no data rows", line=1)
    a = np.array(rows, dtype=np.uint8)
    return CrpSet(n, a[:, :n], a[:, n:], {"origin": "external", "path": str(path)})


def export_csv(crps: CrpSet, path, header: bool = True) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        if header:
            w.writerow([f"c{i}" for i in range(crps.n)] + [f"r{t}" for t in range(crps.tasks)])
        w.writerows(np.concatenate([crps.challenges, crps.responses], axis=1).tolist())
