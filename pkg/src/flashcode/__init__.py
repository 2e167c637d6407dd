"""Coding-efficiency bounds and a random-binning rewriting simulator for flash memory."""
from .bound_math import (
    BoundPoint,
    GibbsParams,
    cost,
    rate_bits,
    rate_nats,
    solve_beta_for_payload,
    stage_efficiency,
    upper_bound_efficiency,
)
from .capacity import RateTuple, WomChain, brute_force_sum_rate, chain_rates, max_sum_rate
from .errors import ChainValidationError, DomainError, OracleRefused
from .womsim import SimConfig, SimReport, run_block, simulate

__all__ = [
    "BoundPoint",
    "ChainValidationError",
    "DomainError",
    "GibbsParams",
    "OracleRefused",
    "RateTuple",
    "SimConfig",
    "SimReport",
    "WomChain",
    "brute_force_sum_rate",
    "chain_rates",
    "cost",
    "max_sum_rate",
    "rate_bits",
    "rate_nats",
    "run_block",
    "simulate",
    "solve_beta_for_payload",
    "stage_efficiency",
    "upper_bound_efficiency",
]
