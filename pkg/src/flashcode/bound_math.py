"""Cost, rate and efficiency of the Gibbs-form level-drop distribution.

A representative cell drops ``V`` levels per write with
``P(V = j) = exp(-beta * j) / sum_s exp(-beta * s)`` for ``j = 0..K-1``.
Entropies are computed in nats internally; public ``*_bits`` helpers and
every payload argument use bits.

The efficiency ceiling produced here comes from a relaxed problem (the hard
constraint that total drops stay below ``K`` is dropped), so it is an upper
bound and never claimed tight.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError

LN2 = math.log(2.0)
# exp(-700) is still a normal double; beyond this the distribution is a point mass at 0.
BETA_POINT_MASS = 700.0
BISECT_TOL = 1e-10
BISECT_MAX_ITER = 200


@dataclass(frozen=True)
class GibbsParams:
    beta: float
    K: int

    def __post_init__(self) -> None:
        if not isinstance(self.K, (int, np.integer)) or self.K < 2:
            raise DomainError(f"K must be an integer >= 2, got {self.K!r}")
        if not math.isfinite(self.beta) or self.beta < 0:
            raise DomainError(f"beta must be finite and >= 0, got {self.beta!r}")


@dataclass(frozen=True)
class BoundPoint:
    payload: float
    beta: float
    cost: float
    efficiency_upper: float
    alpha: float
    levels: int


def _tail_sums(params: GibbsParams) -> tuple[float, float]:
    """Return (sum_{s>=1} e^{-beta s}, sum_{s>=1} s e^{-beta s}).

    The s = 0 term (always 1) is kept out so callers can use log1p.
    """
    s = np.arange(1, params.K, dtype=float)
    w = np.exp(-params.beta * s)
    return float(w.sum()), float((s * w).sum())


def gibbs_distribution(params: GibbsParams) -> np.ndarray:
    if params.beta > BETA_POINT_MASS:
        p = np.zeros(params.K)
        p[0] = 1.0
        return p
    w = np.exp(-params.beta * np.arange(params.K, dtype=float))
    return w / w.sum()


def cost(params: GibbsParams) -> float:
    """Expected level drop E[V], in levels."""
    if params.beta > BETA_POINT_MASS:
        return 0.0
    tail, moment = _tail_sums(params)
    return moment / (1.0 + tail)


def rate_nats(params: GibbsParams) -> float:
    """Entropy H(V) in nats, via rate = beta * cost + log(partition sum)."""
    if params.beta > BETA_POINT_MASS:
        return 0.0
    tail, moment = _tail_sums(params)
    return params.beta * moment / (1.0 + tail) + math.log1p(tail)


def rate_bits(params: GibbsParams) -> float:
    return rate_nats(params) / LN2


def stage_efficiency(params: GibbsParams) -> float:
    """Rate per unit cost, ``rate_nats / cost`` (nats per level).

    Evaluated as ``beta + log(Z) / cost`` with both tail sums rescaled by
    ``e^beta``, so the ratio stays finite even where cost underflows.
    """
    b = params.beta
    s = np.arange(1, params.K, dtype=float)
    scaled = np.exp(-b * (s - 1.0))
    scaled_tail = float(scaled.sum())
    scaled_moment = float((s * scaled).sum())
    tail = math.exp(-b) * scaled_tail
    log1p_ratio = math.log1p(tail) / tail if tail > 0.0 else 1.0
    return b + (1.0 + tail) * log1p_ratio * scaled_tail / scaled_moment


def stage_efficiency_bits(params: GibbsParams) -> float:
    return stage_efficiency(params) / LN2


def _check_payload(p_bits: float, K: int) -> None:
    top = math.log2(K)
    if not (math.isfinite(p_bits) and 0.0 < p_bits <= top):
        raise DomainError(f"payload must lie in (0, {top!r}], got {p_bits!r}")


def solve_beta_for_payload(p_bits: float, K: int) -> float:
    """Find beta with rate_bits(beta) == p_bits by bisection on [0, 700].

    rate is strictly decreasing in beta, so the bracket always holds. The
    1e-10 tolerance tightens proportionally below one bit so tiny payloads
    keep their relative accuracy.
    """
    GibbsParams(0.0, K)
    _check_payload(p_bits, K)
    tol = BISECT_TOL * min(1.0, p_bits)

    def gap(beta: float) -> float:
        return rate_bits(GibbsParams(beta, K)) - p_bits

    if gap(0.0) <= tol:
        return 0.0
    lo, hi = 0.0, BETA_POINT_MASS
    g_lo, g_hi = gap(lo), gap(hi)
    for _ in range(BISECT_MAX_ITER):
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        g = gap(mid)
        if abs(g) <= tol:
            return mid
        if g > 0.0:
            lo, g_lo = mid, g
        else:
            hi, g_hi = mid, g
    return lo if abs(g_lo) <= abs(g_hi) else hi


def upper_bound_efficiency(p_bits: float, K: int, alpha: float = 1.0) -> BoundPoint:
    """Best efficiency any code can reach at payload ``p_bits`` (bits/level x alpha).

    With every write sharing one beta, the ceiling is alpha * p / cost(beta).
    """
    if not (math.isfinite(alpha) and alpha > 0):
        raise DomainError(f"alpha must be positive, got {alpha!r}")
    beta = solve_beta_for_payload(p_bits, K)
    c = cost(GibbsParams(beta, K))
    return BoundPoint(
        payload=p_bits,
        beta=beta,
        cost=c,
        efficiency_upper=alpha * p_bits / c,
        alpha=alpha,
        levels=K,
    )


def derivative_check(beta: float, K: int, h: float) -> tuple[float, float]:
    """Central difference d(rate_nats)/d(cost) across [beta - h, beta + h].

    Returns ``(finite_difference, beta)``; the two should agree.
    """
    if not beta > 0 or not h > 0:
        raise DomainError("derivative_check needs beta > 0 and h > 0")
    lo = GibbsParams(max(beta - h, 0.0), K)
    hi = GibbsParams(beta + h, K)
    d_rate = rate_nats(hi) - rate_nats(lo)
    d_cost = cost(hi) - cost(lo)
    return d_rate / d_cost, beta
