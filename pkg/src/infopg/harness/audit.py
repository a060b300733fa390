"""Finite-difference gradient audit and the mutual-information property audit."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from ..diffkit import tensor as T
from ..diffkit.tensor import Tape
from ..envs.base import CommGraph
from ..mi import (
    bayes_chain_oracle,
    exact_avg_mi,
    mi_lower_bound,
    mi_upper_bound,
    row_conditional_mi,
)
from ..policy import k_level_forward, log_prob, make_bundle

FD_STEP = 1e-5
REL_FLOOR = 1e-6
SLACK = 1e-12


@dataclass
class GradCheckReport:
    trials: int
    coordinates: int
    max_rel_error: float
    worst: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.max_rel_error < 1e-4


def rel_error(analytic: float, numeric: float, floor: float = REL_FLOOR) -> float:
    return abs(analytic - numeric) / max(abs(analytic) + abs(numeric), floor)


def random_network(rng: np.random.Generator):
    """Random team: 2-3 agents, widths <= 8, K <= 2, random cell and graph."""
    n = int(rng.integers(2, 4))
    obs_dim = int(rng.integers(1, 9))
    n_act = int(rng.integers(2, 5))
    d = int(rng.integers(1, 9))
    hidden = int(rng.integers(1, 9))
    K = int(rng.integers(0, 3))
    cell = "gru" if rng.random() < 0.5 else "vrnn"
    bundles = [make_bundle(obs_dim, n_act, d, rng, hidden=hidden, cell=cell) for _ in range(n)]
    if cell == "vrnn":
        # move off the identity initialisation so every path carries signal
        for b in bundles:
            for p in b.com:
                p.value = p.value + 0.3 * rng.standard_normal(p.value.shape)
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    edges = frozenset(p for p in pairs if rng.random() < 0.7) or frozenset({(0, 1)})
    graph = CommGraph(n, edges)
    obs = [rng.standard_normal(obs_dim) for _ in range(n)]
    actions = [int(rng.integers(n_act)) for _ in range(n)]
    return bundles, graph, obs, actions, K


def _team_logprob(bundles, graph, obs, actions, K) -> T.Tensor:
    out = k_level_forward(bundles, obs, graph, K)
    total = None
    for (trace, dist), a in zip(out, actions):
        lp = log_prob(dist, a)
        total = lp if total is None else T.add(total, lp)
    return total


def grad_check(trials: int = 100, seed: int = 0, max_coords: int = 60) -> GradCheckReport:
    """Reverse-mode gradients of the summed k-level log-probability vs central differences."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    info: dict = {}
    coords = 0
    for trial in range(trials):
        bundles, graph, obs, actions, K = random_network(rng)
        params = [(i, k, p) for i, b in enumerate(bundles) for k, p in b.actor_params().items()]
        tape = Tape()
        with tape:
            root = _team_logprob(bundles, graph, obs, actions, K)
        grads = tape.backward(root)
        tape.release()
        entries = [(i, k, p, idx) for i, k, p in params for idx in np.ndindex(p.value.shape)]
        if len(entries) > max_coords:
            pick = rng.choice(len(entries), size=max_coords, replace=False)
            entries = [entries[j] for j in sorted(pick)]
        for i, k, p, idx in entries:
            old = p.value[idx]
            p.value[idx] = old + FD_STEP
            up = float(_team_logprob(bundles, graph, obs, actions, K).value)
            p.value[idx] = old - FD_STEP
            down = float(_team_logprob(bundles, graph, obs, actions, K).value)
            p.value[idx] = old
            numeric = (up - down) / (2 * FD_STEP)
            g = grads.get(p)
            analytic = 0.0 if g is None else float(g[idx])  # untouched at K=0
            err = rel_error(analytic, numeric)
            coords += 1
            if err > worst:
                worst = err
                info = {"trial": trial, "agent": i, "param": k, "index": idx, "analytic": analytic, "numeric": numeric, "K": K}
    return GradCheckReport(trials, coords, worst, info)


@dataclass
class MIAuditReport:
    trials: int
    sandwich_failures: int
    avg_failures: int
    oracle_max_error: float
    oracle_trials: int
    samples: list = field(default_factory=list, repr=False)

    @property
    def passed(self) -> bool:
        return self.sandwich_failures == 0 and self.avg_failures == 0 and self.oracle_max_error <= 1e-12


def random_row(rng: np.random.Generator, n: int) -> np.ndarray:
    """Random distribution with occasional zeros and near-deterministic rows."""
    kind = rng.integers(4)
    if kind == 0:
        row = rng.dirichlet(np.ones(n))
    elif kind == 1:
        row = rng.dirichlet(np.full(n, 0.2))
    elif kind == 2:
        row = rng.dirichlet(np.full(n, 20.0))
    else:
        row = rng.dirichlet(np.ones(n))
        row[rng.integers(n)] = 0.0
        row = row / row.sum()
    return row


def random_table(rng: np.random.Generator, n: int) -> np.ndarray:
    return np.stack([random_row(rng, n) for _ in range(n)])


def reconstruct_conditional(pi_i, pi_j, prior) -> np.ndarray:
    """Level-k conditional assembled entry by entry from the marginalisation sum."""
    n = prior.shape[0]
    out = np.zeros((n, n))
    for aj in range(n):
        for ai in range(n):
            s = 0.0
            for x in range(n):
                for y in range(n):
                    s += pi_i[x, y, ai] * pi_j[x, y, aj] * prior[x, y]
            out[aj, ai] = n * s
    return out


def mi_audit(trials: int = 1000, seed: int = 0, oracle_trials: int = 100) -> MIAuditReport:
    rng = np.random.default_rng(seed)
    sandwich_fail = avg_fail = 0
    samples = []
    for t in range(trials):
        n = int(rng.integers(2, 7))
        table = random_table(rng, n)
        j = int(rng.integers(n))
        row = table[j]
        p = float(row.max())
        lo = mi_lower_bound(p)
        hi = mi_upper_bound(p, n)
        mid = row_conditional_mi(table, j)
        if not (lo <= mid + SLACK and mid <= hi + SLACK):
            sandwich_fail += 1
        avg = exact_avg_mi(table)
        if avg < -SLACK or avg < lo - SLACK:
            avg_fail += 1
        samples.append((t, n, j, p, lo, mid, hi, avg))
    worst = 0.0
    for _ in range(oracle_trials):
        n = int(rng.integers(2, 5))
        pi_i = rng.dirichlet(np.ones(n), size=(n, n))
        pi_j = rng.dirichlet(np.ones(n), size=(n, n))
        prior = np.full((n, n), 1.0 / (n * n))
        got = bayes_chain_oracle(pi_i, pi_j, prior)
        want = reconstruct_conditional(pi_i, pi_j, prior)
        worst = max(worst, float(np.abs(got - want).max()))
    return MIAuditReport(trials, sandwich_fail, avg_fail, worst, oracle_trials, samples)


def write_bound_samples(report: MIAuditReport, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["trial", "n_actions", "row", "map_prob", "lower", "row_mi", "upper", "exact_avg_mi"])
        for s in report.samples:
            w.writerow([s[0], s[1], s[2]] + [repr(float(x)) for x in s[3:]])

