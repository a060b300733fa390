"""Mutual information between action-conditional policies and its MAP-based bounds.

All quantities are in nats.  A conditional policy table ``table[j, i]`` holds
``pi(a^i = i | a^j = j)``: rows are indexed by the conditioning action and
each row is a distribution.  The marginal of the conditioning action is taken
as uniform, ``p(a^j) = 1/|A|``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractError

ROW_TOL = 1e-9
ORACLE_MAX_ACTIONS = 6


@dataclass(frozen=True)
class ConditionalPolicyTable:
    probs: np.ndarray

    def __post_init__(self):
        p = np.array(self.probs, dtype=np.float64)
        if p.ndim != 2 or p.shape[0] != p.shape[1]:
            raise ContractError(f"conditional table must be |A| x |A|, got {p.shape}")
        if (p < 0).any() or not np.isfinite(p).all():
            raise ContractError("conditional table has negative or non-finite entries")
        if np.abs(p.sum(axis=1) - 1.0).max() > ROW_TOL:
            raise ContractError("every row of a conditional table must sum to 1")
        object.__setattr__(self, "probs", p)

    @property
    def n_actions(self) -> int:
        return self.probs.shape[0]


@dataclass(frozen=True)
class BoundSample:
    timestep: int
    pair: tuple[int, int]
    p: float
    lower: float
    upper: float
    midpoint: float


def _as_table(table) -> ConditionalPolicyTable:
    return table if isinstance(table, ConditionalPolicyTable) else ConditionalPolicyTable(table)


def xlogx(p) -> np.ndarray:
    """p * log(p) with 0 log 0 = 0."""
    p = np.asarray(p, dtype=np.float64)
    out = np.zeros_like(p)
    pos = p > 0
    out[pos] = p[pos] * np.log(p[pos])
    return out


def exact_avg_mi(table) -> float:
    """I = sum_j (1/|A|) sum_i pi(i|j) log(|A| pi(i|j))."""
    t = _as_table(table)
    n = t.n_actions
    p = t.probs
    terms = xlogx(p) + p * math.log(n)
    return max(float(terms.sum() / n), 0.0)


def row_conditional_mi(table, j: int) -> float:
    """log|A| minus the entropy of the row conditioned on action ``j``."""
    t = _as_table(table)
    if not 0 <= j < t.n_actions:
        raise IndexError(f"conditioning action {j} outside [0, {t.n_actions})")
    entropy = -float(xlogx(t.probs[j]).sum())
    return math.log(t.n_actions) - entropy


def _check_p(p: float):
    if not (0.0 < p <= 1.0) or math.isnan(p):
        raise ContractError(f"MAP probability must lie in (0, 1], got {p}")


def mi_lower_bound(p: float) -> float:
    """p log p at the MAP probability (non-positive)."""
    _check_p(p)
    return p * math.log(p)


def mi_upper_bound(p: float, n_actions: int) -> float:
    """2 log|A| + 2 log p; requires p >= 1/|A| (true of any MAP probability)."""
    _check_p(p)
    if n_actions < 1:
        raise ContractError("action-space size must be positive")
    if p < 1.0 / n_actions - 1e-12:
        raise ContractError(f"p = {p} is below 1/|A| = {1.0 / n_actions}; not a MAP probability")
    return 2.0 * math.log(n_actions) + 2.0 * math.log(p)


def mi_midpoint(p: float, n_actions: int) -> float:
    return 0.5 * (mi_lower_bound(p) + mi_upper_bound(p, n_actions))


def bound_sample(timestep: int, pair: tuple[int, int], p: float, n_actions: int) -> BoundSample:
    lo = mi_lower_bound(p)
    hi = mi_upper_bound(p, n_actions)
    return BoundSample(timestep, pair, p, lo, hi, 0.5 * (lo + hi))


def bound_arrays(p: np.ndarray, n_actions: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorised lower, upper and midpoint for an array of MAP probabilities."""
    p = np.asarray(p, dtype=np.float64)
    if p.size and ((p <= 0).any() or (p > 1).any() or (p < 1.0 / n_actions - 1e-12).any()):
        raise ContractError("MAP probabilities must lie in [1/|A|, 1]")
    lo = p * np.log(p)
    hi = 2.0 * math.log(n_actions) + 2.0 * np.log(p)
    return lo, hi, 0.5 * (lo + hi)


def bayes_chain_oracle(pi_i, pi_j, prior) -> np.ndarray:
    """Level-k conditional of agent i given agent j by exhaustive marginalisation.

    ``pi_i[x, y, a]`` is agent i's level-k policy given level-(k-1) actions
    (x, y); ``pi_j`` likewise; ``prior[x, y]`` is the joint over level-(k-1)
    actions.  The joint over level-k actions is

        p(a_i, a_j) = sum_{x, y} pi_i[x, y, a_i] pi_j[x, y, a_j] prior[x, y]

    and dividing by the uniform marginal p(a_j) = 1/|A| gives the returned
    table ``out[a_j, a_i] = |A| p(a_i, a_j)``.  Rows equal proper conditionals
    only when the realised marginal of a_j is in fact uniform.
    """
    pi_i = np.asarray(pi_i, dtype=np.float64)
    pi_j = np.asarray(pi_j, dtype=np.float64)
    prior = np.asarray(prior, dtype=np.float64)
    n = prior.shape[0]
    if n > ORACLE_MAX_ACTIONS:
        raise ContractError(f"brute-force oracle refuses |A| = {n} > {ORACLE_MAX_ACTIONS}")
    if pi_i.shape != (n, n, n) or pi_j.shape != (n, n, n) or prior.shape != (n, n):
        raise ContractError("oracle tables must be (|A|, |A|, |A|) with a (|A|, |A|) prior")
    for t in (pi_i, pi_j):
        if (t < 0).any() or np.abs(t.sum(axis=-1) - 1.0).max() > ROW_TOL:
            raise ContractError("level-k policy tables must be distributions over the last axis")
    if (prior < 0).any() or abs(prior.sum() - 1.0) > ROW_TOL:
        raise ContractError("prior must be a joint distribution")
    joint = np.zeros((n, n))
    for x in range(n):
        for y in range(n):
            w = prior[x, y]
            if w == 0.0:
                continue
            joint += w * np.outer(pi_i[x, y], pi_j[x, y])
    return n * joint.T


def normalize_rows(table: np.ndarray) -> np.ndarray:
    table = np.asarray(table, dtype=np.float64)
    sums = table.sum(axis=1, keepdims=True)
    return np.divide(table, sums, out=np.zeros_like(table), where=sums > 0)
