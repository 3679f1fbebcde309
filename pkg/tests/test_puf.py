import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pufexperts.errors import InvalidArgument
from pufexperts.puf import (ArbiterChain, PufSpec, chain_delta, derive_seed, eval_chain, eval_puf,
                            insert_bit, instantiate, new_chain, parse_spec, to_linear_weights)

from _util import all_challenges


def test_new_chain_is_deterministic_per_seed():
    a, b, c = new_chain(64, 7), new_chain(64, 7), new_chain(64, 8)
    assert a == b
    assert np.array_equal(a.sigma, b.sigma) and np.array_equal(a.kappa, b.kappa)
    assert not np.array_equal(a.sigma, c.sigma)


def test_new_chain_draws_standard_normal():
    ch = new_chain(1000, 3)
    assert abs(ch.sigma.mean()) < 0.15
    assert abs(ch.sigma.var() - 1) < 0.2


def test_new_chain_rejects_zero_stages():
    with pytest.raises(InvalidArgument):
        new_chain(0, 1)


def test_chain_parameters_are_read_only():
    ch = new_chain(8, 1)
    with pytest.raises(ValueError):
        ch.sigma[0] = 1.0


def test_all_straight_path_sums_sigma():
    ch = ArbiterChain(5, np.ones(5), np.full(5, -3.0))
    bit, trace = eval_chain(ch, np.zeros(5, dtype=np.uint8))
    assert bit == 1
    assert np.allclose(trace, [1, 2, 3, 4, 5])


def test_two_stage_hand_example():
    ch = ArbiterChain(2, [1.0, -0.5], [0.3, 0.2])
    bit, trace = eval_chain(ch, [0, 1])
    assert trace[0] == pytest.approx(1.0)
    assert trace[1] == pytest.approx(-0.8)
    assert bit == 0


def test_zero_delay_difference_gives_zero():
    ch = ArbiterChain(2, [1.0, -1.0], [0.0, 0.0])
    assert eval_chain(ch, [0, 0])[0] == 0


def test_eval_chain_length_mismatch():
    with pytest.raises(InvalidArgument):
        eval_chain(new_chain(4, 0), [0, 1, 0])


def test_single_stage_closed_form():
    ch = new_chain(1, 11)
    w, b = to_linear_weights(ch)
    assert w[0] == pytest.approx((ch.sigma[0] - ch.kappa[0]) / 2)
    assert b == pytest.approx((ch.sigma[0] + ch.kappa[0]) / 2)
    for c in (0, 1):
        assert eval_chain(ch, [c])[1][-1] == pytest.approx(chain_delta(ch, np.array([[c]]))[0])


@pytest.mark.parametrize("n,chains", [(4, 50), (8, 50), (10, 50)])
def test_linear_form_matches_recursion_exhaustively(n, chains):
    C = all_challenges(n)
    for s in range(chains):
        ch = new_chain(n, 1000 * n + s)
        recursive = np.array([eval_chain(ch, c)[1][-1] for c in C])
        linear = chain_delta(ch, C)
        assert np.allclose(recursive, linear, atol=1e-12)
        assert np.array_equal(recursive > 0, linear > 0)


def test_xor_of_identical_chains_is_zero(rng):
    ch = new_chain(32, 5)
    inst = instantiate(PufSpec("xor", 32, seed=1, k=2))
    same = type(inst)(inst.spec, (ch, ch))
    C = rng.integers(0, 2, (100, 32))
    assert not same.eval(C).any()


def test_single_chain_xor_matches_chain(rng):
    inst = instantiate(PufSpec("xor", 8, seed=4, k=1))
    C = all_challenges(8)
    want = [eval_chain(inst.chains[0], c)[0] for c in C]
    assert np.array_equal(inst.eval(C), want)


@pytest.mark.parametrize("k", [1, 2, 3])
def test_xor_equals_sign_of_product(k):
    inst = instantiate(PufSpec("xor", 8, seed=20 + k, k=k))
    C = all_challenges(8)
    deltas = np.stack([[eval_chain(ch, c)[1][-1] for c in C] for ch in inst.chains])
    # bit 1 means delta > 0; XOR of bits is 1 iff an odd number of chains are positive,
    # i.e. the product of negated deltas is negative
    product = np.prod(-deltas, axis=0)
    assert np.array_equal(inst.eval(C), (product < 0).astype(np.uint8))
    parity = np.bitwise_xor.reduce((deltas > 0).astype(np.uint8), axis=0)
    assert np.array_equal(inst.eval(C), parity)


def test_ff_without_loops_matches_xor():
    C = all_challenges(10)
    for k in (1, 2, 3):
        ff = instantiate(PufSpec("ff", 10, seed=9, k=k, loops=0))
        xor = instantiate(PufSpec("xor", 10, seed=9, k=k))
        assert np.array_equal(ff.eval(C), xor.eval(C))


def _ff_reference(chain, challenge, loops):
    """Plain-python stage loop with the tap bit replacing the insert bit."""
    inserts = {ins: tap for tap, ins in loops}
    delta, trace = 0.0, {}
    for i in range(1, chain.n + 1):
        bit = int(trace[inserts[i]] > 0) if i in inserts else challenge[i - 1]
        delta = -delta + chain.kappa[i - 1] if bit else delta + chain.sigma[i - 1]
        trace[i] = delta
    return int(delta > 0)


def test_ff_loops_replace_insert_bit():
    loops = (((2, 5), (3, 8)),)
    inst = instantiate(PufSpec("ff", 8, seed=3, k=1, loops=2, loop_positions=loops))
    C = all_challenges(8)
    want = [_ff_reference(inst.chains[0], c, loops[0]) for c in C]
    assert np.array_equal(inst.eval(C), want)
    # the external bit at an insert stage is ignored
    flipped = C.copy()
    flipped[:, 4] ^= 1
    assert np.array_equal(inst.eval(flipped), inst.eval(C))


def test_ff_homogeneous_shares_loops_heterogeneous_differs():
    homo = instantiate(parse_spec("ff:3-2:homo", 64, seed=5))
    assert len(set(homo.loop_positions)) == 1
    hetero = instantiate(parse_spec("ff:3-2:hetero", 64, seed=5))
    assert len(set(hetero.loop_positions)) > 1
    for chain in homo.loop_positions + hetero.loop_positions:
        assert len(chain) == 2
        for tap, ins in chain:
            assert 1 <= tap < ins <= 64


def test_bad_loop_positions_rejected():
    with pytest.raises(InvalidArgument):
        PufSpec("ff", 8, k=1, loops=1, loop_positions=(((5, 5),),))
    with pytest.raises(InvalidArgument):
        PufSpec("ff", 8, k=1, loops=1, loop_positions=(((3, 9),),))


def test_interpose_layer_shapes():
    inst = instantiate(parse_spec("ipuf:3,3", 64, seed=1))
    assert [c.n for c in inst.chains] == [64] * 3 + [65] * 3


def test_interpose_with_constant_upper_bit(rng):
    n = 16
    inst = instantiate(PufSpec("ipuf", n, seed=2, x=1, y=2))
    C = rng.integers(0, 2, (500, n)).astype(np.uint8)
    upper = (chain_delta(inst.chains[0], C) > 0).astype(np.uint8)
    lower = type(inst)(PufSpec("xor", n + 1, seed=0, k=2), inst.chains[1:])
    for const in (0, 1):
        ext = insert_bit(C, const, n // 2)
        assert ext.shape == (500, n + 1) and (ext[:, n // 2] == const).all()
        sel = upper == const
        assert np.array_equal(inst.eval(C)[sel], lower.eval(ext)[sel])


def test_insert_position_is_middle():
    C = np.zeros((1, 8), dtype=np.uint8)
    assert insert_bit(C, 1, 8 // 2)[0].tolist() == [0, 0, 0, 0, 1, 0, 0, 0, 0]


def test_apuf_response_balance():
    biases = []
    C = np.random.default_rng(0).integers(0, 2, (100_000, 64)).astype(np.uint8)
    for s in range(5):
        biases.append(instantiate(PufSpec("apuf", 64, seed=s)).eval(C).mean())
    assert all(0.40 <= b <= 0.60 for b in biases), biases


def test_eval_puf_single_challenge_and_determinism(rng):
    spec = parse_spec("xor:4", 32, seed=77)
    a, b = instantiate(spec), instantiate(spec)
    C = rng.integers(0, 2, (50, 32))
    assert np.array_equal(a.eval(C), b.eval(C))
    assert [eval_puf(a, c) for c in C] == a.eval(C).tolist()
    with pytest.raises(InvalidArgument):
        eval_puf(a, np.zeros(31, dtype=np.uint8))


def test_noise_flips_some_bits_but_is_seeded(rng):
    spec = parse_spec("apuf", 32, seed=1)
    C = rng.integers(0, 2, (5000, 32))
    clean = instantiate(spec).eval(C)
    noisy = instantiate(spec, noise=0.5)
    r1, r2 = noisy.eval(C), noisy.eval(C)
    assert np.array_equal(r1, r2)
    assert 0 < (r1 != clean).mean() < 0.2


@pytest.mark.parametrize("text,label", [("apuf", "apuf"), ("xor:3", "xor:3"), ("FF:2-1:hetero", "ff:2-1:hetero"),
                                        ("ipuf:1,5", "ipuf:1,5")])
def test_parse_spec_round_trip(text, label):
    assert parse_spec(text, 64).label() == label


@pytest.mark.parametrize("text", ["", "xor", "xor:0", "ff:2:homo", "ipuf:0,3", "lr-puf"])
def test_parse_spec_rejects(text):
    with pytest.raises(InvalidArgument):
        parse_spec(text, 64)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**63), st.lists(st.integers(0, 1000), max_size=3))
def test_derive_seed_is_stable_and_keyed(seed, keys):
    assert derive_seed(seed, *keys) == derive_seed(seed, *keys)
    assert derive_seed(seed, *keys, 0) != derive_seed(seed, *keys, 1)
