import os

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pufexperts.dataset import (HEADER, CrpSet, crpb_size, export_csv, generate_crps, import_csv,
                                load_crps, random_challenges, save_crps, split, split_counts,
                                transform_challenge)
from pufexperts.errors import FormatError, InvalidArgument
from pufexperts.puf import PufSpec, parse_spec

from _util import all_challenges


@pytest.mark.parametrize("bits,want", [((0, 0, 0), (1, 1, 1)), ((0, 1, 0), (-1, -1, 1)),
                                       ((1, 0, 0), (-1, 1, 1)), ((0, 0, 1), (-1, -1, -1))])
def test_transform_examples(bits, want):
    assert transform_challenge(bits).tolist() == list(want)


def test_flipping_last_bit_negates_all(rng):
    c = rng.integers(0, 2, (200, 16))
    f = c.copy()
    f[:, -1] ^= 1
    assert np.array_equal(transform_challenge(f), -transform_challenge(c))


def test_transform_is_injective():
    X = transform_challenge(all_challenges(10))
    assert len(np.unique(X, axis=0)) == 2 ** 10
    assert set(np.unique(X)) == {-1, 1}


def test_header_is_24_bytes():
    assert HEADER.size == 24


def _set(n=64, count=500, specs=("xor:2",), seed=1):
    return generate_crps([parse_spec(s, n, seed + i) for i, s in enumerate(specs)], seed, count)


def test_generate_is_deterministic_and_spec_independent(tmp_path):
    a, b = _set(), _set()
    assert a == b
    other = generate_crps([parse_spec("apuf", 64, 99)], 1, 500)
    assert np.array_equal(a.challenges, other.challenges)
    save_crps(a, tmp_path / "a")
    save_crps(b, tmp_path / "b")
    assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()


def test_same_puf_twice_gives_identical_columns():
    spec = parse_spec("xor:2", 32, 4)
    s = generate_crps([spec, spec], 0, 1000)
    assert s.tasks == 2 and np.array_equal(s.responses[:, 0], s.responses[:, 1])


def test_generate_records_meta():
    s = generate_crps([parse_spec("ff:2-1:hetero", 32, 3)], 5, 10)
    assert s.meta["specs"] == ["ff:2-1:hetero"]
    assert s.meta["challenge_seed"] == 5
    assert len(s.meta["loop_positions"][0]) == 2


def test_generate_rejects_mixed_stage_counts():
    with pytest.raises(InvalidArgument):
        generate_crps([parse_spec("apuf", 32), parse_spec("apuf", 64)], 0, 10)


def test_challenge_bits_are_uniform():
    freq = random_challenges(64, 100_000, 3).mean(axis=0)
    assert np.all(np.abs(freq - 0.5) < 0.01)


def test_split_sizes_and_disjointness():
    s = _set(count=10_000)
    a, b = split(s, 0.8, 0)
    assert (len(a), len(b)) == (8000, 2000)
    ka = {r.tobytes() for r in a.challenges}
    kb = {r.tobytes() for r in b.challenges}
    assert not ka & kb
    merged = np.concatenate([a.challenges, b.challenges])
    assert sorted(map(bytes, merged)) == sorted(map(bytes, s.challenges))


def test_split_determinism():
    s = _set(count=1000)
    a1, _ = split(s, 0.5, 3)
    a2, _ = split(s, 0.5, 3)
    a3, _ = split(s, 0.5, 4)
    assert a1 == a2 and not a1 == a3


def test_split_keeps_duplicates_together():
    c = np.array([[0, 0], [0, 1], [1, 0], [1, 1]] * 25, dtype=np.uint8)
    s = CrpSet(2, c, c[:, 0])
    a, b = split(s, 0.5, 0)
    assert not {r.tobytes() for r in a.challenges} & {r.tobytes() for r in b.challenges}
    assert len(a) + len(b) == 100


@pytest.mark.parametrize("frac", [0, 1, -0.1, 1.5])
def test_split_fraction_range(frac):
    with pytest.raises(InvalidArgument):
        split(_set(count=10), frac, 0)


def test_split_counts_overdraw():
    with pytest.raises(InvalidArgument, match="10"):
        split_counts(_set(count=10), 8, 5, 0)


@pytest.mark.parametrize("n,tasks", [(64, 1), (7, 3), (65, 9), (1, 1)])
def test_crpb_round_trip_and_size(tmp_path, n, tasks):
    rng = np.random.default_rng(n * tasks)
    s = CrpSet(n, rng.integers(0, 2, (321, n)), rng.integers(0, 2, (321, tasks)))
    p = tmp_path / "x.crpb"
    save_crps(s, p)
    assert os.path.getsize(p) == crpb_size(n, tasks, 321) == 24 + 321 * ((n + 7) // 8 + (tasks + 7) // 8)
    assert load_crps(p) == s


def test_crpb_size_example(tmp_path):
    s = _set(count=8000)
    save_crps(s, tmp_path / "s")
    assert os.path.getsize(tmp_path / "s") == 24 + 8000 * (8 + 1)


def test_crpb_bit_order(tmp_path):
    c = np.zeros((1, 10), dtype=np.uint8)
    c[0, [0, 9]] = 1
    save_crps(CrpSet(10, c, [[1]]), tmp_path / "b")
    body = (tmp_path / "b").read_bytes()[24:]
    assert body == bytes([0b00000001, 0b00000010, 0b00000001])


def _corrupt(tmp_path, edit):
    p = tmp_path / "c.crpb"
    save_crps(_set(count=20), p)
    data = bytearray(p.read_bytes())
    data = edit(data)
    p.write_bytes(bytes(data))
    return p


@pytest.mark.parametrize("edit,offset", [
    (lambda d: b"CRPX" + d[4:], 0),
    (lambda d: d[:4] + bytes([2]) + d[5:], 4),
    (lambda d: d[:5] + bytes([1]) + d[6:], 5),
    (lambda d: d[:-3], 24 + 19 * 9),
    (lambda d: d + b"\0", 24 + 20 * 9),
    (lambda d: d[:10], 10),
])
def test_crpb_corruption_reports_offset(tmp_path, edit, offset):
    with pytest.raises(FormatError) as e:
        load_crps(_corrupt(tmp_path, edit))
    assert e.value.offset == offset
    assert str(offset) in str(e.value)


def test_csv_import_and_round_trip(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("c0,c1,c2,r\n0,1,1,1\n1,0,0,0\n1,1,1,1\n")
    s = import_csv(p, 3, 1)
    assert len(s) == 3 and s.meta["origin"] == "external"
    assert s.challenges.tolist() == [[0, 1, 1], [1, 0, 0], [1, 1, 1]]
    q = tmp_path / "e.csv"
    export_csv(s, q)
    assert import_csv(q, 3, 1) == s


def test_csv_without_header(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("0,1,1\n1,0,0\n")
    assert len(import_csv(p, 2, 1)) == 2


def test_csv_short_row_names_line(tmp_path):
    p = tmp_path / "d.csv"
    rows = ["," .join(["0"] * 65)] * 3
    rows[1] = ",".join(["1"] * 64)
    p.write_text("\n".join(rows) + "\n")
    with pytest.raises(FormatError, match="line 2") as e:
        import_csv(p, 64, 1)
    assert e.value.line == 2


def test_csv_non_binary_token(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("0,1,1\n0,2,1\n")
    with pytest.raises(FormatError, match="line 2"):
        import_csv(p, 2, 1)


def test_crpset_validation():
    with pytest.raises(InvalidArgument):
        CrpSet(3, np.zeros((2, 3)), np.zeros(3))
    with pytest.raises(InvalidArgument):
        CrpSet(3, np.full((2, 3), 2), np.zeros(2))


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 20), st.integers(1, 10), st.integers(1, 50), st.integers(0, 2**32 - 1))
def test_crpb_round_trip_property(tmp_path_factory, n, tasks, count, seed):
    rng = np.random.default_rng(seed)
    s = CrpSet(n, rng.integers(0, 2, (count, n)), rng.integers(0, 2, (count, tasks)))
    p = tmp_path_factory.mktemp("rt") / "x"
    save_crps(s, p)
    assert load_crps(p) == s
