"""Multi-stage random-binning rewriting scheme on an N-cell, K-level block.

Epochs run k = K-1 down to 1. In epoch k every cell sits at k or k-1, and
each stage drops exactly one cell from k to k-1. With ``l`` cells already
dropped, the stage message ranges over ``B = floor((1 - eps) * (N - l))``
values. The encoder looks for a one-cell drop whose resulting block state
hashes into the message's bin. On a miss it drops a random cell and the
stage's bits are lost. An epoch ends once ``B < 2``; the cells still at k are
then lowered to k-1 before the next epoch starts.

Bin assignment
--------------
``bin = H(serialization) mod B`` where ``H`` is keyed BLAKE2b with an 8-byte
digest read little-endian, keyed by the 64-bit assigner seed (8 bytes,
little-endian). ``serialization`` is ``epoch_k`` and ``dropped_count`` as
little-endian uint32 followed by the N cell levels, one byte each, in cell
order. ``dropped_count`` is the stage's ``l`` before the write.
"""
from __future__ import annotations

import hashlib
import math
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import DomainError

UINT64_MAX = 2**64 - 1


@dataclass(frozen=True)
class BlockState:
    levels: bytes
    K: int

    def __post_init__(self) -> None:
        levels = bytes(self.levels)
        object.__setattr__(self, "levels", levels)
        if len(levels) < 2 or not 2 <= self.K <= 256:
            raise DomainError("a block needs N >= 2 cells and 2 <= K <= 256 levels")
        if max(levels) >= self.K:
            raise DomainError(f"cell level {max(levels)} out of range for K={self.K}")

    @property
    def N(self) -> int:
        return len(self.levels)

    @classmethod
    def erased(cls, N: int, K: int) -> BlockState:
        return cls(bytes([K - 1]) * N, K)


@dataclass(frozen=True)
class StageState:
    epoch_k: int
    dropped_count: int
    bin_count: int

    @property
    def live(self) -> bool:
        return self.bin_count >= 2

    @classmethod
    def at(cls, N: int, epoch_k: int, dropped_count: int, epsilon: float) -> StageState:
        return cls(epoch_k, dropped_count, stage_bins(N, dropped_count, epsilon))


@dataclass(frozen=True)
class SimConfig:
    N: int
    K: int
    epsilon: float = 0.5
    seed: int = 0
    trials: int = 1
    alpha: float = 1.0

    def __post_init__(self) -> None:
        if self.N < 2:
            raise DomainError(f"N must be >= 2, got {self.N}")
        if not 2 <= self.K <= 256:
            raise DomainError(f"K must lie in [2, 256], got {self.K}")
        if not 0.0 < self.epsilon < 1.0:
            raise DomainError(f"epsilon must lie in (0, 1), got {self.epsilon}")
        if not 0 <= self.seed <= UINT64_MAX:
            raise DomainError("seed must be a 64-bit unsigned integer")
        if self.trials < 1:
            raise DomainError(f"trials must be >= 1, got {self.trials}")
        if not (math.isfinite(self.alpha) and self.alpha > 0):
            raise DomainError(f"alpha must be positive, got {self.alpha}")


@dataclass(frozen=True)
class StageRecord:
    epoch_k: int
    l: int
    B: int
    success: bool


@dataclass(frozen=True)
class SimReport:
    N: int
    K: int
    alpha: float
    stages_run: int
    bits_recorded: float
    bits_lost: float
    failures: int
    per_stage: tuple[StageRecord, ...] = field(repr=False)

    @property
    def stages_planned(self) -> int:
        return (self.K - 1) * self.N

    @property
    def bits_attempted(self) -> float:
        return self.bits_recorded + self.bits_lost

    @property
    def payload(self) -> float:
        return self.bits_recorded / (self.N * self.stages_planned)

    @property
    def payload_attempted(self) -> float:
        return self.bits_attempted / (self.N * self.stages_planned)

    @property
    def efficiency(self) -> float:
        return self.alpha * self.bits_recorded / (self.K * self.N)


@dataclass(frozen=True)
class BinAssigner:
    seed: int

    def __post_init__(self) -> None:
        if not 0 <= self.seed <= UINT64_MAX:
            raise DomainError("assigner seed must be a 64-bit unsigned integer")
        object.__setattr__(
            self, "_hasher", hashlib.blake2b(key=self.seed.to_bytes(8, "little"), digest_size=8)
        )

    @staticmethod
    def serialize(stage: StageState, levels: bytes) -> bytes:
        return struct.pack("<II", stage.epoch_k, stage.dropped_count) + levels

    def mix(self, data: bytes) -> int:
        h = self._hasher.copy()
        h.update(data)
        return int.from_bytes(h.digest(), "little")

    def bin_of(self, stage: StageState, levels: bytes) -> int:
        if stage.bin_count < 1:
            raise DomainError("bin assignment needs at least one bin")
        return self.mix(self.serialize(stage, levels)) % stage.bin_count


def stage_bins(N: int, l: int, epsilon: float) -> int:
    if not 0 <= l <= N:
        raise DomainError(f"dropped count must lie in [0, {N}], got {l}")
    return math.floor((1.0 - epsilon) * (N - l))


def _check_epoch(state: BlockState, stage: StageState, dropped: int) -> None:
    k = stage.epoch_k
    if not 1 <= k <= state.K - 1:
        raise DomainError(f"epoch {k} out of range for K={state.K}")
    at_k = state.levels.count(k)
    below = state.levels.count(k - 1)
    if at_k + below != state.N or below != dropped:
        raise DomainError(
            f"state has {at_k} cells at {k} and {below} at {k - 1}; "
            f"stage expects {state.N - dropped} and {dropped}"
        )


def encode_stage(
    state: BlockState,
    stage: StageState,
    message: int,
    assigner: BinAssigner,
    rng: np.random.Generator,
) -> tuple[BlockState, bool]:
    """Record ``message`` by dropping one level-k cell into the message's bin.

    Candidates are tried in ascending cell order; on a miss a uniformly
    chosen level-k cell is dropped using ``rng`` and ``False`` is returned.
    """
    B = stage.bin_count
    if not 0 <= message < B:
        raise DomainError(f"message must lie in [0, {B}), got {message}")
    _check_epoch(state, stage, stage.dropped_count)
    k = stage.epoch_k
    buf = bytearray(assigner.serialize(stage, state.levels))
    offset = len(buf) - state.N
    candidates = [n for n, v in enumerate(state.levels) if v == k]
    for n in candidates:
        buf[offset + n] = k - 1
        if assigner.mix(bytes(buf)) % B == message:
            return BlockState(bytes(buf[offset:]), state.K), True
        buf[offset + n] = k
    n = candidates[int(rng.integers(len(candidates)))]
    levels = bytearray(state.levels)
    levels[n] = k - 1
    return BlockState(bytes(levels), state.K), False


def decode_stage(state: BlockState, stage: StageState, assigner: BinAssigner) -> int:
    """Read back the message written in ``stage``; ``state`` is the block after that write."""
    if stage.bin_count < 1:
        raise DomainError("dead stage: no bins to decode")
    _check_epoch(state, stage, stage.dropped_count + 1)
    return assigner.bin_of(stage, state.levels)


def infer_stage(state: BlockState, epsilon: float) -> StageState:
    """Recover the stage of the most recent write from the cell levels alone."""
    top, bottom = max(state.levels), min(state.levels)
    if top - bottom != 1:
        raise DomainError("block is not in the middle of an epoch")
    dropped = state.levels.count(bottom) - 1
    return StageState.at(state.N, top, dropped, epsilon)


def exact_stage_error(N: int, l: int, epsilon: float) -> float:
    """Probability that none of the N - l candidate states lands in the target bin."""
    B = stage_bins(N, l, epsilon)
    if B < 1:
        raise DomainError(f"dead stage at N={N}, l={l}: no bins")
    return (1.0 - 1.0 / B) ** (N - l)


def live_stage_bins(N: int, epsilon: float) -> list[int]:
    """Bin counts of the stages run in one epoch (``B >= 2``; B only shrinks with l)."""
    out = []
    for l in range(N):
        B = stage_bins(N, l, epsilon)
        if B < 2:
            break
        out.append(B)
    return out


def expected_rate_lower_bound(N: int, K: int, epsilon: float) -> float:
    """Lower bound on expected bits recorded per erase cycle."""
    success = 1.0 - math.exp(-1.0 / (1.0 - epsilon))
    return (K - 1) * math.fsum(success * math.log2(B) for B in live_stage_bins(N, epsilon))


def expected_bits_exact(N: int, K: int, epsilon: float) -> float:
    """Exact expected bits recorded per erase cycle under uniform random binning."""
    return (K - 1) * math.fsum(
        (1.0 - exact_stage_error(N, l, epsilon)) * math.log2(B)
        for l, B in enumerate(live_stage_bins(N, epsilon))
    )


def payload_formula(N: int, epsilon: float) -> float:
    return math.fsum(math.log2(B) for B in live_stage_bins(N, epsilon)) / N**2


def efficiency_lower_bound_asymptotic(N: int, alpha: float = 1.0) -> float:
    """Large-N efficiency floor at eps = 0.5, with the logarithm taken base 2."""
    if N < 2:
        raise DomainError(f"N must be >= 2, got {N}")
    return (alpha / 2.0) * (1.0 - math.exp(-2.0)) * math.log2(N / 2.0)


def trial_streams(seed: int, trial: int) -> tuple[BinAssigner, np.random.Generator]:
    """Per-trial shared bin assigner and encoder random stream."""
    words = np.random.SeedSequence([seed, trial]).generate_state(2, dtype=np.uint64)
    return BinAssigner(int(words[0])), np.random.default_rng(int(words[1]))


def run_block(
    config: SimConfig,
    trial: int = 0,
    observer: Callable[[BlockState, StageState], None] | None = None,
) -> SimReport:
    """One erase cycle of the scheme, from an erased block to the last live stage.

    ``observer`` sees the block after every write (stage writes and the
    end-of-epoch lowering, the latter with ``bin_count == 0``).
    """
    N, K, eps = config.N, config.K, config.epsilon
    assigner, rng = trial_streams(config.seed, trial)
    state = BlockState.erased(N, K)
    bins = live_stage_bins(N, eps)
    records = []
    recorded = lost = 0.0
    failures = 0
    for k in range(K - 1, 0, -1):
        for l, B in enumerate(bins):
            stage = StageState(k, l, B)
            message = int(rng.integers(B))
            state, ok = encode_stage(state, stage, message, assigner, rng)
            if ok:
                recorded += math.log2(B)
            else:
                lost += math.log2(B)
                failures += 1
            records.append(StageRecord(k, l, B, ok))
            if observer is not None:
                observer(state, stage)
        if k > 1:
            state = BlockState(state.levels.replace(bytes([k]), bytes([k - 1])), K)
            if observer is not None:
                observer(state, StageState(k - 1, 0, 0))
    return SimReport(
        N=N,
        K=K,
        alpha=config.alpha,
        stages_run=len(records),
        bits_recorded=recorded,
        bits_lost=lost,
        failures=failures,
        per_stage=tuple(records),
    )


@dataclass(frozen=True)
class StageStats:
    epoch_k: int
    l: int
    B: int
    trials: int
    failures: int
    failure_rate: float
    exact_error: float
    sigma: float


@dataclass(frozen=True)
class SimSummary:
    config: SimConfig
    stages_run: int
    bits_attempted: float
    mean_bits_recorded: float
    std_bits_recorded: float
    mean_payload: float
    std_payload: float
    payload_attempted: float
    mean_efficiency: float
    std_efficiency: float
    failures: int
    per_stage: tuple[StageStats, ...]

    @property
    def sem_bits_recorded(self) -> float:
        return self.std_bits_recorded / math.sqrt(self.config.trials)

    @property
    def sem_payload(self) -> float:
        return self.std_payload / math.sqrt(self.config.trials)

    @property
    def sem_efficiency(self) -> float:
        return self.std_efficiency / math.sqrt(self.config.trials)


def _run_range(config: SimConfig, start: int, stop: int) -> list[SimReport]:
    return [run_block(config, t) for t in range(start, stop)]


def _std(x: np.ndarray) -> float:
    return float(x.std(ddof=1)) if x.size > 1 else 0.0


def simulate(config: SimConfig, workers: int = 1) -> SimSummary:
    """Run ``config.trials`` independent blocks and aggregate them.

    Trial ``t`` draws everything from ``SeedSequence([seed, t])``, so the
    summary is identical for any ``workers``.
    """
    if workers <= 1 or config.trials < 2:
        reports = _run_range(config, 0, config.trials)
    else:
        edges = np.linspace(0, config.trials, workers + 1).astype(int)
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = pool.map(
                _run_range, [config] * workers, edges[:-1].tolist(), edges[1:].tolist()
            )
            reports = [r for part in parts for r in part]

    bits = np.array([r.bits_recorded for r in reports])
    payload = np.array([r.payload for r in reports])
    eff = np.array([r.efficiency for r in reports])
    first = reports[0]
    n_trials = len(reports)
    stats = []
    for s, rec in enumerate(first.per_stage):
        fails = sum(1 for r in reports if not r.per_stage[s].success)
        q = exact_stage_error(config.N, rec.l, config.epsilon)
        stats.append(
            StageStats(
                epoch_k=rec.epoch_k,
                l=rec.l,
                B=rec.B,
                trials=n_trials,
                failures=fails,
                failure_rate=fails / n_trials,
                exact_error=q,
                sigma=math.sqrt(q * (1.0 - q) / n_trials),
            )
        )
    return SimSummary(
        config=config,
        stages_run=first.stages_run,
        bits_attempted=first.bits_attempted,
        mean_bits_recorded=float(bits.mean()),
        std_bits_recorded=_std(bits),
        mean_payload=float(payload.mean()),
        std_payload=_std(payload),
        payload_attempted=first.payload_attempted,
        mean_efficiency=float(eff.mean()),
        std_efficiency=_std(eff),
        failures=sum(r.failures for r in reports),
        per_stage=tuple(stats),
    )
