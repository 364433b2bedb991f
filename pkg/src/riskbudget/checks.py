"""Exact identity checks on scenario trees.

Each check returns a :class:`CheckResult` holding the worst scaled error
over every node (absolute below magnitude one, relative above). Used by the
``verify`` command and the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .oracle import solve_tree_risk_budgeting
from .portfolio import (
    RiskBudget,
    _specs,
    induce_self_financing_tree,
    rc_decomposition,
    risk_contributions_tree,
    risk_to_go_tree,
    scale_strategy,
    weight_process_tree,
)
from .risk import DistortionSpec
from .tree import ScenarioTree, build_tree

EXACT_TOL = 1e-10
GATEAUX_TOL = 1e-6
ORACLE_TOL = 1e-6
RESTART_TOL = 1e-5


@dataclass(frozen=True)
class CheckResult:
    name: str
    error: float
    tol: float

    @property
    def passed(self) -> bool:
        return bool(self.error <= self.tol)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name}: max error {self.error:.3e} (tol {self.tol:g})"


def scaled_error(actual, expected) -> float:
    actual = np.asarray(actual, dtype=float)
    expected = np.asarray(expected, dtype=float)
    if actual.size == 0:
        return 0.0
    return float(np.max(np.abs(actual - expected) / np.maximum(1.0, np.abs(expected))))


def _worst(pairs) -> float:
    return max((scaled_error(a, e) for a, e in pairs), default=0.0)


def random_case(seed: int):
    """A random tree (depth <= 3, <= 5 assets), adapted strategy and per-time specs."""
    rng = np.random.default_rng(seed)
    depth = int(rng.integers(1, 4))
    n = int(rng.integers(1, 6))
    branching = tuple(int(k) for k in rng.integers(2, 5, size=depth))
    tree = build_tree(depth, branching, n_assets=n, seed=int(rng.integers(2**31)), mu=rng.uniform(-0.02, 0.0, n),
                      sigma=rng.uniform(0.05, 0.3, n), prob_model=str(rng.choice(["uniform", "dirichlet"])), center=True)
    theta = [rng.uniform(0.5, 2.0, size=(tree.layer_size(t), n)) for t in range(depth)]
    specs = [DistortionSpec(float(rng.uniform(0.05, 0.95)), float(rng.choice([0.5, 0.75, 0.9]))) for _ in range(depth)]
    return tree, theta, specs


def cumulative_weights(tree: ScenarioTree, theta) -> list:
    """prod_{s<t} w_s on every node of layer t (ones at t = 0)."""
    out = [np.ones(1)]
    for t, w in enumerate(weight_process_tree(tree, theta)):
        out.append(tree.parent_values(t, out[-1]) * w)
    return out


def _expand_factor(tree: ScenarioTree, factor, t: int) -> list:
    """A layer-t node factor applied to layers t..T (ones before t)."""
    return [np.ones(tree.layer_size(s)) if s < t else tree.expand(t, factor, s) for s in range(tree.depth)]


def gateaux_derivative(tree: ScenarioTree, theta, spec, t: int, i: int, eps: float = 1e-4) -> np.ndarray:
    """One-sided derivative of R_t along theta_{t,i} e_i, Richardson-extrapolated."""
    base = risk_to_go_tree(tree, theta, spec).risk[t]

    def quotient(h):
        bumped = [th.copy() for th in theta]
        bumped[t][:, i] *= 1.0 + h
        return (risk_to_go_tree(tree, bumped, spec).risk[t] - base) / h

    return 2.0 * quotient(eps / 2.0) - quotient(eps)


def property_suite(tree: ScenarioTree, theta, spec, rng: np.random.Generator, with_oracle: bool = True) -> list:
    """Full allocation, induced-strategy scaling, homogeneity, budget transfer,
    decomposition summation, cash invariance at the last time and Gateaux derivatives."""
    horizon, n = tree.depth, tree.n_assets
    specs = _specs(spec, horizon)
    ev = risk_to_go_tree(tree, theta, specs)
    rc = risk_contributions_tree(tree, theta, specs, evaluated=ev)
    out = [CheckResult("full allocation", _worst((rc[t].sum(axis=1), ev.risk[t]) for t in range(horizon)), EXACT_TOL)]

    held = induce_self_financing_tree(tree, theta)
    factor = cumulative_weights(tree, theta)
    ev_sf = risk_to_go_tree(tree, held, specs)
    rc_sf = risk_contributions_tree(tree, held, specs, evaluated=ev_sf)
    out.append(CheckResult("induced strategy risk-to-go scaling",
                           _worst((ev_sf.risk[t], factor[t] * ev.risk[t]) for t in range(horizon)), EXACT_TOL))
    out.append(CheckResult("induced strategy contribution scaling",
                           _worst((rc_sf[t], factor[t][:, None] * rc[t]) for t in range(horizon)), EXACT_TOL))
    sf_err = 0.0
    for t in range(horizon - 1):
        # (held_{t+1} - held_t) . X_{t+1} = 0 on every node
        diff = np.sum((held[t + 1] - tree.parent_values(t, held[t])) * tree.prices[t + 1], axis=1)
        sf_err = max(sf_err, scaled_error(diff, np.zeros_like(diff)))
    out.append(CheckResult("induced strategy is self-financing", sf_err, EXACT_TOL))

    one_time, onward, rc_onward = [], [], []
    for t in range(horizon):
        a = rng.uniform(0.5, 3.0, size=tree.layer_size(t))
        only_t = [np.ones(tree.layer_size(s)) for s in range(horizon)]
        only_t[t] = a
        ev_a = risk_to_go_tree(tree, scale_strategy(theta, only_t), specs)
        one_time.append((ev_a.risk[t], a * ev.risk[t]))
        one_time.extend((ev_a.risk[s], ev.risk[s]) for s in range(t + 1, horizon))
        scaled = scale_strategy(theta, _expand_factor(tree, a, t))
        ev_b = risk_to_go_tree(tree, scaled, specs)
        onward.append((ev_b.risk[t], a * ev.risk[t]))
        rc_onward.append((risk_contributions_tree(tree, scaled, specs, evaluated=ev_b)[t], a[:, None] * rc[t]))
    out.append(CheckResult("homogeneity of one decision", _worst(one_time), EXACT_TOL))
    out.append(CheckResult("homogeneity from a decision onward", _worst(onward), EXACT_TOL))
    out.append(CheckResult("contribution homogeneity from a decision onward", _worst(rc_onward), EXACT_TOL))

    out.append(CheckResult("decomposition sums to contributions",
                           _worst((rc_decomposition(tree, theta, specs, t).sum(axis=0), rc[t]) for t in range(horizon)),
                           EXACT_TOL))

    # a zero-return cash position at the last decision leaves last-time risky contributions unchanged
    cash_tree = ScenarioTree(tuple(np.hstack([x, np.ones((x.shape[0], 1))]) for x in tree.prices), tree.probs)
    cash_theta = [np.hstack([th, rng.uniform(0.5, 2.0, size=(th.shape[0], 1))]) for th in theta]
    rc_cash = risk_contributions_tree(cash_tree, cash_theta, specs)[horizon - 1]
    out.append(CheckResult("cash position leaves last-time contributions unchanged",
                           _worst([(rc_cash[:, :n], rc[horizon - 1]), (rc_cash[:, n], np.zeros(rc_cash.shape[0]))]),
                           EXACT_TOL))

    fd = []
    for t in range(horizon):
        for i in range(n):
            fd.append((rc[t][:, i], gateaux_derivative(tree, theta, specs, t, i)))
    out.append(CheckResult("contributions equal one-sided Gateaux derivatives", _worst(fd), GATEAUX_TOL))

    if with_oracle:
        b = rng.dirichlet(np.ones(n) * 2.0, size=horizon)
        b[:, -1] = 1.0 - b[:, :-1].sum(axis=1)
        sol = solve_tree_risk_budgeting(tree, RiskBudget(b), specs)
        held_opt = induce_self_financing_tree(tree, sol.theta)
        ev_opt = risk_to_go_tree(tree, held_opt, specs, gammas=sol.gamma)
        rc_opt = risk_contributions_tree(tree, held_opt, specs, evaluated=ev_opt)
        out.append(CheckResult("budget carries over to the induced strategy",
                               _worst((rc_opt[t], b[t] * ev_opt.risk[t][:, None]) for t in range(horizon)), EXACT_TOL))
    return out


def oracle_suite(tree: ScenarioTree, budget: RiskBudget, spec, restarts: int = 10) -> list:
    """Unit risk-to-go, budgeted contributions, weight validity and restart agreement."""
    horizon = tree.depth
    specs = _specs(spec, horizon)
    sol = solve_tree_risk_budgeting(tree, budget, specs)
    ev = risk_to_go_tree(tree, sol.theta, specs)
    ev_cert = risk_to_go_tree(tree, sol.theta, specs, gammas=sol.gamma)
    rc = risk_contributions_tree(tree, sol.theta, specs, evaluated=ev_cert)
    out = [
        CheckResult("oracle risk-to-go equals one", _worst((ev.risk[t], np.ones_like(ev.risk[t])) for t in range(horizon)),
                    ORACLE_TOL),
        CheckResult("oracle contributions equal budgets",
                    _worst((rc[t], np.broadcast_to(budget.b[t], rc[t].shape)) for t in range(horizon)), ORACLE_TOL),
    ]
    # the certified weights must be a comonotone distortion weight realization of g
    bad = 0.0
    for t in range(horizon):
        q, gm, g = tree.probs[t], sol.gamma[t], ev.loss[t]
        top = specs[t].max_weight
        bad = max(bad, float(np.max(np.maximum(-gm, 0.0))), float(np.max(np.maximum(gm - top, 0.0))))
        bad = max(bad, scaled_error(np.sum(q * gm, axis=1), np.ones(q.shape[0])))
        bad = max(bad, scaled_error(np.sum(q * gm * g, axis=1), ev.risk[t]))
        order = np.argsort(g, axis=1, kind="stable")
        g_sorted = np.take_along_axis(g, order, axis=1)
        gm_sorted = np.take_along_axis(gm, order, axis=1)
        strict = np.diff(g_sorted, axis=1) > 1e-9 * np.maximum(1.0, np.abs(g_sorted[:, 1:]))
        drop = np.diff(gm_sorted, axis=1)
        bad = max(bad, float(np.max(np.where(strict, np.maximum(-drop, 0.0), 0.0), initial=0.0)))
    out.append(CheckResult("certified weights form a valid comonotone realization", bad, ORACLE_TOL))
    spread = 0.0
    for seed in range(restarts):
        other = solve_tree_risk_budgeting(tree, budget, specs, seed=seed + 1)
        spread = max(spread, _worst(zip(other.theta, sol.theta)))
    out.append(CheckResult(f"{restarts} random restarts agree", spread, RESTART_TOL))
    return out
