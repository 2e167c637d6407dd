"""Achievable per-write rates for a K-level cell block rewritten T times.

A rate vector ``l(1..T)`` is achievable iff some chain of monotone levels
``U(0) = K-1 >= U(1) >= ... >= U(T)`` has ``l(t) <= H(U(t) | U(t-1))``. A chain
is a list of lower-triangular row-stochastic matrices; entry ``(i, j)`` of the
t-th one is ``P(U(t) = j | U(t-1) = i)``.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import ChainValidationError, DomainError, OracleRefused

ROW_SUM_TOL = 1e-9
UPPER_MASS_TOL = 1e-12
FEASIBILITY_SLACK = 1e-9
ROW_GAIN_TOL = 1e-12
SWEEP_GAIN_TOL = 1e-12
MAX_SWEEPS = 200
MAX_ROW_ITERS = 5000
ARMIJO = 1e-4

ORACLE_LEVELS = (2, 3)
ORACLE_WRITES = (1, 2, 3)
ORACLE_MAX_GRID = 200
ORACLE_MAX_COMBINATIONS = 4_000_000


def entropy_bits(p: np.ndarray) -> float:
    p = np.asarray(p, dtype=float)
    nz = p[p > 0]
    return float(-(nz * np.log2(nz)).sum())


def _row_entropies(m: np.ndarray) -> np.ndarray:
    """Entropy in bits of each row along the last axis (0 log 0 = 0)."""
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(m > 0, -m * np.log2(np.where(m > 0, m, 1.0)), 0.0)
    return terms.sum(axis=-1)


@dataclass(frozen=True)
class RateTuple:
    rates: tuple[float, ...]
    sum_rate: float

    @classmethod
    def from_rates(cls, rates: Sequence[float]) -> RateTuple:
        rates = tuple(float(r) for r in rates)
        return cls(rates=rates, sum_rate=float(math.fsum(rates)))


@dataclass(frozen=True)
class WomChain:
    K: int
    T: int
    conditionals: tuple[np.ndarray, ...]

    def __post_init__(self) -> None:
        if self.K < 2 or self.T < 1:
            raise ChainValidationError(f"need K >= 2 and T >= 1, got K={self.K}, T={self.T}")
        mats = tuple(np.array(m, dtype=float) for m in self.conditionals)
        object.__setattr__(self, "conditionals", mats)
        if len(mats) != self.T:
            raise ChainValidationError(f"expected {self.T} matrices, got {len(mats)}")
        upper = np.triu(np.ones((self.K, self.K), dtype=bool), k=1)
        for t, m in enumerate(mats, start=1):
            if m.shape != (self.K, self.K):
                raise ChainValidationError(f"matrix {t} has shape {m.shape}, expected {(self.K, self.K)}")
            if np.any(m < 0) or not np.all(np.isfinite(m)):
                raise ChainValidationError(f"matrix {t} has negative or non-finite entries")
            for i in range(self.K):
                if np.any(m[i, upper[i]] > UPPER_MASS_TOL):
                    raise ChainValidationError(
                        f"matrix {t}, row {i}: mass on levels above {i} (levels may only drop)"
                    )
                if abs(m[i].sum() - 1.0) > ROW_SUM_TOL:
                    raise ChainValidationError(f"matrix {t}, row {i}: sums to {m[i].sum()!r}, not 1")

    @classmethod
    def identity(cls, K: int, T: int) -> WomChain:
        return cls(K, T, tuple(np.eye(K) for _ in range(T)))

    @classmethod
    def from_first_rows(cls, K: int, rows: Sequence[Sequence[Sequence[float]]]) -> WomChain:
        """Build a chain from explicit rows; ``rows[t][i]`` lists P(U(t+1)=j | U(t)=i) for j <= i."""
        mats = []
        for stage in rows:
            m = np.zeros((K, K))
            for i, r in enumerate(stage):
                m[i, : len(r)] = r
            mats.append(m)
        return cls(K, len(mats), tuple(mats))


def propagate_marginal(chain: WomChain, t: int) -> np.ndarray:
    """Distribution of U(t); U(0) is the erased level K-1."""
    if not 0 <= t <= chain.T:
        raise DomainError(f"t must lie in [0, {chain.T}], got {t}")
    pi = np.zeros(chain.K)
    pi[-1] = 1.0
    for m in chain.conditionals[:t]:
        pi = pi @ m
    return pi


def chain_rates(chain: WomChain) -> RateTuple:
    """Per-write entropy budgets H(U(t) | U(t-1)) in bits."""
    pi = propagate_marginal(chain, 0)
    rates = []
    for m in chain.conditionals:
        rates.append(float(pi @ _row_entropies(m)))
        pi = pi @ m
    return RateTuple.from_rates(rates)


def check_achievable(rates: Sequence[float], chain: WomChain, slack: float = FEASIBILITY_SLACK) -> bool:
    if len(rates) != chain.T:
        raise DomainError(f"got {len(rates)} rates for a chain of {chain.T} writes")
    budget = chain_rates(chain).rates
    return all(r <= b + slack for r, b in zip(rates, budget))


# --- sum-rate maximisation -------------------------------------------------


def project_simplex(y: np.ndarray) -> np.ndarray:
    """Euclidean projection onto the probability simplex (sort-based)."""
    n = y.size
    u = np.sort(y)[::-1]
    css = np.cumsum(u) - 1.0
    idx = np.arange(1, n + 1)
    rho = np.nonzero(u - css / idx > 0)[0][-1]
    theta = css[rho] / (rho + 1.0)
    return np.maximum(y - theta, 0.0)


def _row_objective(x: np.ndarray, v: np.ndarray) -> float:
    return entropy_bits(x) + float(x @ v)


def ascend_row(x0: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Maximise H(x) + x.v over the simplex by projected gradient with backtracking.

    The objective is strictly concave; iteration stops once a step gains
    less than 1e-12.
    """
    if x0.size == 1:
        return np.ones(1)
    x = project_simplex(np.asarray(x0, dtype=float))
    f = _row_objective(x, v)
    step = 1.0
    for _ in range(MAX_ROW_ITERS):
        grad = v - np.log2(np.maximum(x, 1e-300)) - 1.0 / math.log(2.0)
        while True:
            cand = project_simplex(x + step * grad)
            f_cand = _row_objective(cand, v)
            if f_cand >= f + ARMIJO * float(grad @ (cand - x)):
                break
            step *= 0.5
            if step < 1e-30:
                return x
        gain = f_cand - f
        x, f = cand, f_cand
        if gain < ROW_GAIN_TOL:
            break
        step = min(step * 2.0, 1e6)
    return x


def _random_chain(K: int, T: int, rng: np.random.Generator) -> WomChain:
    mats = []
    for _ in range(T):
        m = np.zeros((K, K))
        for i in range(K):
            m[i, : i + 1] = rng.dirichlet(np.ones(i + 1))
        mats.append(m)
    return WomChain(K, T, tuple(mats))


def _coordinate_ascent(
    chain: WomChain, callback: Callable[[WomChain], None] | None = None
) -> WomChain:
    K, T = chain.K, chain.T
    mats = [m.copy() for m in chain.conditionals]
    best = chain_rates(chain).sum_rate
    for _ in range(MAX_SWEEPS):
        # Backward sweep: value-to-go from each level at time t given later writes.
        value = np.zeros(K)
        for t in range(T - 1, -1, -1):
            m = mats[t]
            for i in range(K):
                m[i, : i + 1] = ascend_row(m[i, : i + 1], value[: i + 1])
                m[i, i + 1 :] = 0.0
                if callback is not None:
                    callback(WomChain(K, T, tuple(mats)))
            value = _row_entropies(m) + m @ value
        current = WomChain(K, T, tuple(mats))
        total = chain_rates(current).sum_rate
        gain = total - best
        best = max(best, total)
        if gain < SWEEP_GAIN_TOL:
            break
    return WomChain(K, T, tuple(mats))


def max_sum_rate(
    K: int,
    T: int,
    restarts: int = 16,
    seed: int = 0,
    callback: Callable[[WomChain], None] | None = None,
) -> tuple[RateTuple, WomChain]:
    """Multi-start coordinate ascent on the sum of per-write entropy budgets.

    Restart ``r`` draws its initial chain from ``SeedSequence([seed, r])``, so
    results do not depend on the order restarts are run in.
    """
    if K < 2 or T < 1 or restarts < 1 or seed < 0:
        raise DomainError("need K >= 2, T >= 1, restarts >= 1 and seed >= 0")
    best: tuple[RateTuple, WomChain] | None = None
    for r in range(restarts):
        rng = np.random.default_rng(np.random.SeedSequence([seed, r]))
        chain = _coordinate_ascent(_random_chain(K, T, rng), callback)
        rates = chain_rates(chain)
        if best is None or rates.sum_rate > best[0].sum_rate:
            best = (rates, chain)
    assert best is not None
    return best


# --- brute-force oracle -----------------------------------------------------


def count_monotone_sequences(K: int, T: int) -> int:
    """Number of non-increasing length-T sequences over {0..K-1}, by enumeration."""
    return sum(
        1
        for seq in itertools.product(range(K), repeat=T)
        if all(a >= b for a, b in zip(seq, seq[1:]))
    )


def sequence_ceiling_bits(K: int, T: int) -> float:
    return math.log2(count_monotone_sequences(K, T))


def _grid_rows(i: int, K: int, n: int) -> np.ndarray:
    """All rows with mass on {0..i} in multiples of 1/n."""
    rows = []
    for cut in itertools.combinations(range(n + i), i):
        bounds = (-1,) + cut + (n + i,)
        counts = [bounds[k + 1] - bounds[k] - 1 for k in range(i + 1)]
        row = np.zeros(K)
        row[: i + 1] = np.array(counts, dtype=float) / n
        rows.append(row)
    return np.array(rows)


def brute_force_sum_rate(K: int, T: int, grid_steps: int) -> RateTuple:
    """Exhaustive grid search over every free transition probability.

    All writes but the last are enumerated jointly. The last write's rows
    enter the objective independently, each weighted by a nonnegative
    marginal, so each is set to its best grid row.
    """
    if K not in ORACLE_LEVELS or T not in ORACLE_WRITES:
        raise OracleRefused(
            f"brute-force oracle accepts K in {ORACLE_LEVELS} and T in {ORACLE_WRITES}, got K={K}, T={T}"
        )
    if not 1 <= grid_steps <= ORACLE_MAX_GRID:
        raise OracleRefused(f"grid_steps must lie in [1, {ORACLE_MAX_GRID}], got {grid_steps}")

    grids = [_grid_rows(i, K, grid_steps) for i in range(K)]
    best_final = np.array([_row_entropies(g).max() for g in grids])

    if T == 1:
        return RateTuple.from_rates([best_final[K - 1]])

    first = grids[K - 1]
    pi = first  # (A, K): marginal of U(1) for each candidate
    history = _row_entropies(first)[:, None]  # (A, t)

    middle_rows = [grids[i] for i in range(K)]
    sizes = [len(g) for g in middle_rows]
    for _ in range(2, T):
        n_stage = math.prod(sizes)
        total = pi.shape[0] * n_stage
        if total > ORACLE_MAX_COMBINATIONS:
            raise OracleRefused(
                f"brute-force oracle limited to {ORACLE_MAX_COMBINATIONS} grid combinations, "
                f"instance needs {total}; lower grid_steps"
            )
        mats = np.empty((n_stage, K, K))
        ents = np.empty((n_stage, K))
        row_ents = [_row_entropies(g) for g in middle_rows]
        for b, idx in enumerate(itertools.product(*(range(s) for s in sizes))):
            for i, j in enumerate(idx):
                mats[b, i] = middle_rows[i][j]
                ents[b, i] = row_ents[i][j]
        stage_rate = pi @ ents.T  # (A, B)
        new_pi = np.einsum("ak,bkj->abj", pi, mats)
        a, b = stage_rate.shape
        history = np.concatenate(
            [np.repeat(history, b, axis=0), stage_rate.reshape(a * b, 1)], axis=1
        )
        pi = new_pi.reshape(a * b, K)

    last = pi @ best_final
    totals = history.sum(axis=1) + last
    k = int(np.argmax(totals))
    return RateTuple.from_rates(list(history[k]) + [last[k]])
