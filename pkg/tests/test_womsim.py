import hashlib
import itertools
import math
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flashcode.errors import DomainError
from flashcode.womsim import (
    BinAssigner,
    BlockState,
    SimConfig,
    StageState,
    decode_stage,
    efficiency_lower_bound_asymptotic,
    encode_stage,
    exact_stage_error,
    expected_bits_exact,
    expected_rate_lower_bound,
    infer_stage,
    live_stage_bins,
    payload_formula,
    run_block,
    simulate,
    stage_bins,
)


def reference_bin(seed, epoch_k, l, levels, B):
    """Bin index straight from the documented wire format."""
    data = struct.pack("<II", epoch_k, l) + bytes(levels)
    digest = hashlib.blake2b(data, key=seed.to_bytes(8, "little"), digest_size=8).digest()
    return int.from_bytes(digest, "little") % B


def block_at(N, K, k, dropped):
    return BlockState(bytes([k - 1] * dropped + [k] * (N - dropped)), K)


# --- stage arithmetic ------------------------------------------------------------


@pytest.mark.parametrize(
    "N,l,eps,B", [(10, 0, 0.5, 5), (10, 9, 0.5, 0), (4, 0, 0.5, 2), (2, 0, 0.25, 1)]
)
def test_stage_bins(N, l, eps, B):
    assert stage_bins(N, l, eps) == B


def test_live_stage_bins_by_hand():
    # floor(0.5 * (10 - l)) for l = 0..6; l = 7 gives 1 and ends the epoch
    assert live_stage_bins(10, 0.5) == [5, 4, 4, 3, 3, 2, 2]
    assert live_stage_bins(4, 0.5) == [2]
    assert live_stage_bins(3, 0.5) == []


def test_exact_stage_error_examples():
    assert exact_stage_error(10, 0, 0.5) == pytest.approx(0.8**10, abs=1e-15)
    assert exact_stage_error(10, 0, 0.5) == pytest.approx(0.107374, abs=1e-6)
    assert exact_stage_error(2, 0, 0.25) == 0.0
    with pytest.raises(DomainError, match="dead stage"):
        exact_stage_error(10, 9, 0.5)


@given(N=st.integers(4, 3000), eps=st.floats(0.01, 0.99))
def test_exact_error_below_exponential_bound(N, eps):
    cap = math.exp(-1.0 / (1.0 - eps))
    for l, _ in enumerate(live_stage_bins(N, eps)):
        assert exact_stage_error(N, l, eps) <= cap * (1 + 1e-12)


def test_exact_error_half_epsilon_cap():
    for N in range(4, 200):
        for l, _ in enumerate(live_stage_bins(N, 0.5)):
            assert exact_stage_error(N, l, 0.5) <= math.exp(-2) + 1e-15


# --- closed forms ---------------------------------------------------------------


def test_expected_rate_lower_bound_examples():
    one = 1 - math.exp(-2)
    assert expected_rate_lower_bound(4, 2, 0.5) == pytest.approx(one, abs=1e-15)
    assert expected_rate_lower_bound(4, 2, 0.5) == pytest.approx(0.864665, abs=1e-6)
    assert expected_rate_lower_bound(4, 3, 0.5) == pytest.approx(1.729330, abs=1e-6)


def test_expected_rate_monotone_in_n():
    vals = [expected_rate_lower_bound(N, 3, 0.5) for N in range(2, 300)]
    assert all(a <= b for a, b in zip(vals, vals[1:]))


def test_exact_expectation_dominates_bound():
    for N in (4, 10, 64, 500):
        for K in (2, 8):
            assert expected_bits_exact(N, K, 0.5) >= expected_rate_lower_bound(N, K, 0.5)


def test_payload_formula_examples():
    assert payload_formula(4, 0.5) == pytest.approx(0.0625, abs=1e-15)
    by_hand = sum(math.log2(b) for b in (5, 4, 4, 3, 3, 2, 2)) / 100
    assert payload_formula(10, 0.5) == pytest.approx(by_hand, abs=1e-15)
    assert payload_formula(10, 0.5) == pytest.approx(0.114919, abs=1e-6)


def test_payload_formula_collapses_as_epsilon_grows():
    vals = [payload_formula(64, e) for e in np.linspace(0.05, 0.99, 40)]
    assert all(a >= b for a, b in zip(vals, vals[1:]))
    assert payload_formula(64, 0.99) == 0.0


def test_efficiency_asymptotic_examples():
    assert efficiency_lower_bound_asymptotic(4, 1.0) == pytest.approx(0.432332, abs=1e-6)
    assert efficiency_lower_bound_asymptotic(2, 1.0) == 0.0
    vals = [efficiency_lower_bound_asymptotic(2**k) for k in range(2, 30)]
    assert all(a < b for a, b in zip(vals, vals[1:]))


# --- bin assignment and stages ---------------------------------------------------


def test_assigner_matches_wire_format():
    a = BinAssigner(0xDEADBEEF12345678)
    levels = bytes([2, 1, 2, 2, 1])
    stage = StageState(2, 1, 7)
    assert a.bin_of(stage, levels) == reference_bin(a.seed, 2, 1, levels, 7)


def test_assigner_deterministic_and_seed_sensitive():
    levels = bytes([3] * 12)
    stage = StageState(3, 0, 2**40)
    assert BinAssigner(5).bin_of(stage, levels) == BinAssigner(5).bin_of(stage, levels)
    assert BinAssigner(5).bin_of(stage, levels) != BinAssigner(6).bin_of(stage, levels)


def test_single_bin_always_succeeds():
    rng = np.random.default_rng(0)
    stage = StageState.at(2, 1, 0, 0.25)
    assert stage.bin_count == 1
    for seed in range(50):
        new, ok = encode_stage(BlockState.erased(2, 2), stage, 0, BinAssigner(seed), rng)
        assert ok
        assert decode_stage(new, stage, BinAssigner(seed)) == 0


def test_encode_rejects_bad_inputs():
    rng = np.random.default_rng(0)
    stage = StageState.at(10, 1, 0, 0.5)
    with pytest.raises(DomainError, match="message"):
        encode_stage(BlockState.erased(10, 2), stage, 5, BinAssigner(1), rng)
    with pytest.raises(DomainError, match="stage expects"):
        encode_stage(block_at(10, 2, 1, 3), stage, 0, BinAssigner(1), rng)


def test_decode_rejects_dead_stage():
    with pytest.raises(DomainError, match="dead stage"):
        decode_stage(block_at(10, 2, 1, 10), StageState(1, 9, 0), BinAssigner(1))


def test_encode_scans_in_cell_order():
    # the first successor (ascending cell index) in the message's bin wins
    N, K, k, l = 8, 3, 2, 2
    state = block_at(N, K, k, l)
    stage = StageState.at(N, k, l, 0.5)
    a = BinAssigner(42)
    successors = []
    for n in range(N):
        if state.levels[n] == k:
            lv = bytearray(state.levels)
            lv[n] = k - 1
            successors.append((n, bytes(lv)))
    for m in range(stage.bin_count):
        hits = [lv for n, lv in successors if reference_bin(42, k, l, lv, stage.bin_count) == m]
        new, ok = encode_stage(state, stage, m, a, np.random.default_rng(0))
        assert ok == bool(hits)
        if hits:
            assert new.levels == hits[0]


@pytest.mark.parametrize("N", [2, 3, 4])
@pytest.mark.parametrize("K", [2, 3])
def test_successor_bins_exhaustive(N, K):
    """Decoding each one-cell successor returns exactly its own bin."""
    eps = 0.25
    for seed in range(8):
        a = BinAssigner(seed)
        for k in range(1, K):
            for l in range(N):
                stage = StageState.at(N, k, l, eps)
                if stage.bin_count < 1:
                    continue
                state = block_at(N, K, k, l)
                for n in range(l, N):
                    lv = bytearray(state.levels)
                    lv[n] = k - 1
                    succ = BlockState(bytes(lv), K)
                    got = decode_stage(succ, stage, a)
                    assert got == reference_bin(seed, k, l, succ.levels, stage.bin_count)


@settings(max_examples=60, deadline=None)
@given(
    N=st.integers(4, 40),
    K=st.integers(2, 5),
    seed=st.integers(0, 2**64 - 1),
    data=st.data(),
)
def test_round_trip_and_stage_inference(N, K, seed, data):
    eps = 0.5
    bins = live_stage_bins(N, eps)
    k = data.draw(st.integers(1, K - 1))
    l = data.draw(st.integers(0, len(bins) - 1))
    state = block_at(N, K, k, l)
    stage = StageState.at(N, k, l, eps)
    m = data.draw(st.integers(0, stage.bin_count - 1))
    new, ok = encode_stage(state, stage, m, BinAssigner(seed), np.random.default_rng(seed))
    assert new.levels.count(k - 1) == l + 1
    assert infer_stage(new, eps) == stage
    if ok:
        assert decode_stage(new, stage, BinAssigner(seed)) == m


# --- whole blocks ------------------------------------------------------------------


def test_run_block_small_example():
    rep = run_block(SimConfig(N=4, K=2, epsilon=0.5, seed=1))
    assert rep.stages_run == 1
    assert rep.bits_attempted == 1.0
    assert [(s.epoch_k, s.l, s.B) for s in rep.per_stage] == [(1, 0, 2)]


@settings(max_examples=25, deadline=None)
@given(
    N=st.integers(2, 40),
    K=st.integers(2, 6),
    eps=st.floats(0.05, 0.95),
    seed=st.integers(0, 2**64 - 1),
    trial=st.integers(0, 1000),
)
def test_block_invariants(N, K, eps, seed, trial):
    cfg = SimConfig(N=N, K=K, epsilon=eps, seed=seed, alpha=1.7)
    prev = [bytes([K - 1] * N)]

    def observe(state, stage):
        before = prev[-1]
        assert all(b <= a for a, b in zip(before, state.levels))
        k = stage.epoch_k
        assert set(state.levels) <= {k, k - 1}
        prev.append(state.levels)

    rep = run_block(cfg, trial, observer=observe)
    live = live_stage_bins(N, eps)
    assert rep.stages_run == (K - 1) * len(live)
    assert rep.bits_recorded + rep.bits_lost == pytest.approx(
        (K - 1) * sum(math.log2(b) for b in live), abs=1e-9
    )
    assert rep.failures == sum(not s.success for s in rep.per_stage)
    assert rep.efficiency == pytest.approx(1.7 * rep.bits_recorded / (K * N), abs=1e-9)
    assert rep.payload == pytest.approx(rep.bits_recorded / (N * (K - 1) * N), abs=1e-12)
    assert rep.payload_attempted == pytest.approx(payload_formula(N, eps), abs=1e-12)


def test_run_block_deterministic():
    cfg = SimConfig(N=30, K=4, seed=99)
    assert run_block(cfg, 3) == run_block(cfg, 3)
    assert run_block(cfg, 3) != run_block(cfg, 4)


def test_simulate_independent_of_workers():
    cfg = SimConfig(N=16, K=3, seed=5, trials=40)
    assert simulate(cfg, workers=1) == simulate(cfg, workers=3)


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(N=1, K=2),
        dict(N=4, K=1),
        dict(N=4, K=2, epsilon=0.0),
        dict(N=4, K=2, epsilon=1.0),
        dict(N=4, K=2, seed=-1),
        dict(N=4, K=2, seed=2**64),
        dict(N=4, K=2, trials=0),
        dict(N=4, K=2, alpha=0.0),
    ],
)
def test_config_validation(kwargs):
    with pytest.raises(DomainError):
        SimConfig(**kwargs)
