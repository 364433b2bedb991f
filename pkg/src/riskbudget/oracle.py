"""Independent solvers for the risk-budgeting problem.

At a node, with later decisions fixed, the risk-to-go is linear in the
current holdings: g = theta . A with per-branch, per-asset coefficients A.
The node problem is then

    minimize  rho(theta . A) - sum_i b_i log theta_i,

a convex but only piecewise smooth objective. Writing rho as a maximum
over the admissible weights {gamma = (1 - p) + p * xi : 0 <= xi <= 1/(1-alpha),
E[xi] = 1} and swapping min and max leaves the smooth concave problem

    maximize  sum_i b_i log c_i(gamma),   c_i(gamma) = E[gamma * A_i],

whose solution gives theta_i = b_i / c_i(gamma*). The maximizing gamma is a
valid comonotone weighting for the optimal loss, so the Euler contributions
computed with it equal the budget exactly, also when the optimum sits on a
tie between branches. It is solved by a primal log-barrier Newton method
with Armijo backtracking.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy import optimize, stats

from .portfolio import RiskBudget, _portfolio_value, _specs, risk_to_go_tree
from .risk import DistortionSpec, atom_weights_batch
from .tree import ScenarioTree, negative_increments

ARMIJO = 1e-4


class OracleError(RuntimeError):
    pass


@dataclass
class NodeSolution:
    theta: np.ndarray
    gamma: np.ndarray  # realized distortion weights per branch
    newton_steps: int
    gap: float  # barrier duality-gap bound at exit


def _phase_one(A, probs, spec):
    """Feasible xi with c(xi) > 0, via a linear program; None if none exists."""
    k, n = A.shape
    cap = 1.0 / (1.0 - spec.alpha)
    scale = np.maximum(np.abs(A).max(axis=0), 1e-300)
    As = A / scale
    # variables (xi_1..xi_k, s); maximize s subject to c_i(xi)/scale_i >= s
    c_obj = np.zeros(k + 1)
    c_obj[-1] = -1.0
    lin = spec.p * (probs[:, None] * As)  # (k, n)
    base = (1.0 - spec.p) * (probs @ As)
    A_ub = np.hstack([-lin.T, np.ones((n, 1))])
    b_ub = base
    A_eq = np.append(probs, 0.0)[None, :]
    bounds = [(0.0, cap)] * k + [(None, 1.0)]
    res = optimize.linprog(c_obj, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=[1.0], bounds=bounds, method="highs")
    if res.status != 0 or res.x[-1] <= 1e-13:
        return None
    return res.x[:k]


def _interior_start(xi_lp, A, probs, spec, rng):
    """Strictly interior start close to the phase-one point, randomized when asked."""
    k = xi_lp.size
    cap = 1.0 / (1.0 - spec.alpha)
    if rng is None:
        centre = np.ones(k)
    else:
        # random interior point with E[xi] = 1
        centre = rng.uniform(0.05, 0.95, k) * cap
        centre *= 1.0 / (probs @ centre)
        if centre.max() >= cap:
            centre = 0.5 * centre + 0.5
    def c_of(xi):
        return probs @ (((1.0 - spec.p) + spec.p * xi)[:, None] * A)
    lam = 0.5
    for _ in range(200):
        xi = (1.0 - lam) * xi_lp + lam * centre
        if np.all(c_of(xi) > 0.0) and np.all(xi > 0.0) and np.all(xi < cap):
            return xi
        lam *= 0.5
    raise OracleError("could not find an interior starting point")


def _solve_kkt(dvec, M, bdiag, probs, rhs):
    """Solve (D + M B M^T) d - probs * nu = rhs, probs . d = 0 via Woodbury."""
    dinv = 1.0 / dvec
    core = np.diag(1.0 / bdiag) + M.T @ (dinv[:, None] * M)
    def s_inv(x):
        y = dinv * x
        return y - dinv * (M @ np.linalg.solve(core, M.T @ y))
    a = s_inv(rhs)
    e = s_inv(probs)
    nu = -(probs @ a) / (probs @ e)
    return a + nu * e


def _barrier(xi, A, probs, b, spec, mu_min, max_newton):
    """Log-barrier path following from an interior point down to ``mu_min``."""
    cap = 1.0 / (1.0 - spec.alpha)
    M = spec.p * (probs[:, None] * A)  # d c / d xi
    c0 = (1.0 - spec.p) * (probs @ A)

    def objective(x, mu):
        c = c0 + x @ M
        if np.any(c <= 0.0) or np.any(x <= 0.0) or np.any(x >= cap):
            return -np.inf
        return b @ np.log(c) + mu * np.sum(np.log(x) + np.log(cap - x))

    def magnitude(x, mu):
        # size of the summed terms, which sets the roundoff floor of objective differences
        c = c0 + x @ M
        return b @ np.abs(np.log(c)) + mu * np.sum(np.abs(np.log(x)) + np.abs(np.log(cap - x)))

    mu, steps = 1.0, 0
    while mu >= mu_min:
        for _ in range(max_newton):
            c = c0 + xi @ M
            grad = M @ (b / c) + mu * (1.0 / xi - 1.0 / (cap - xi))
            dvec = mu * (1.0 / xi**2 + 1.0 / (cap - xi) ** 2)
            d = _solve_kkt(dvec, M, b / c**2, probs, grad)
            decrement = grad @ d
            if decrement <= 1e-14 * max(1.0, magnitude(xi, mu)):
                break
            f0 = objective(xi, mu)
            step = 1.0
            while objective(xi + step * d, mu) < f0 + ARMIJO * step * decrement:
                step *= 0.5
                if step < 1e-20:
                    break
            if step < 1e-20:
                break
            xi = xi + step * d
            steps += 1
        else:
            raise OracleError(f"barrier centring did not converge within {max_newton} Newton steps")
        mu *= 0.1
    return xi, steps


def _active_set(xi, A, probs, b, spec, max_iter=200):
    """Exact optimum from a near-optimal barrier point.

    Atoms near a bound are fixed there; the remaining atoms solve the
    equality-constrained Newton system exactly, which forces their losses
    under the implied holdings to coincide. Bound atoms whose loss falls on
    the wrong side of that common value are released and the solve repeats.
    """
    cap = 1.0 / (1.0 - spec.alpha)
    M = spec.p * (probs[:, None] * A)
    c0 = (1.0 - spec.p) * (probs @ A)
    upper = xi > cap * (1.0 - 1e-3)
    lower = xi < cap * 1e-3
    free = ~(upper | lower)
    steps = 0
    for _ in range(max_iter):
        x = np.where(upper, cap, np.where(lower, 0.0, xi))
        idx = np.nonzero(free)[0]
        budget_left = 1.0 - probs[~free] @ x[~free]
        if idx.size == 0:
            # no atom straddles: the fixed pattern must already satisfy the mass constraint
            if abs(budget_left) > 1e-12:
                free[np.argmin(np.abs(xi - 0.5 * cap))] = True
                upper &= ~free
                lower &= ~free
                continue
        else:
            # shift the free atoms onto the mass constraint
            x[idx] = np.clip(x[idx] + (budget_left - probs[idx] @ x[idx]) / probs[idx].sum(), 0.0, cap)
            last = np.inf
            for _ in range(100):
                c = c0 + x @ M
                if np.any(c <= 0.0):
                    raise OracleError("unit risk became nonpositive during the exact solve")
                g_free = M[idx] @ (b / c)
                H = -(M[idx] * (b / c**2)) @ M[idx].T
                m = idx.size
                kkt = np.zeros((m + 1, m + 1))
                kkt[:m, :m] = H
                kkt[:m, m] = kkt[m, :m] = probs[idx]
                rhs = np.append(-g_free, 0.0)
                sol = np.linalg.lstsq(kkt, rhs, rcond=None)[0]
                d = sol[:m]
                # stay inside the box; an atom hitting a bound becomes fixed
                with np.errstate(divide="ignore", invalid="ignore"):
                    lim = np.where(d > 0, (cap - x[idx]) / d, np.where(d < 0, -x[idx] / d, np.inf))
                step = min(1.0, float(lim.min()))
                x[idx] += step * d
                steps += 1
                if step < 1.0:
                    hit = idx[np.argmin(lim)]
                    if x[hit] > 0.5 * cap:
                        x[hit], upper[hit] = cap, True
                    else:
                        x[hit], lower[hit] = 0.0, True
                    free[hit] = False
                    break
                size = float(np.max(np.abs(d)))
                # stop at zero or once the step stalls at roundoff level
                if size <= 1e-15 * cap or (size <= 1e-11 * cap and size > 0.5 * last):
                    break
                last = size
            else:
                raise OracleError("exact refinement did not converge")
            if step < 1.0:
                xi = x
                continue
        xi = x
        c = c0 + xi @ M
        g = A @ (b / c)
        level = g[free].mean() if free.any() else None
        scale = max(np.abs(g).max(), 1e-300)
        if level is None:
            lo_top = g[lower].max() if lower.any() else -np.inf
            up_bot = g[upper].min() if upper.any() else np.inf
            if lo_top <= up_bot + 1e-12 * scale:
                return xi, steps
            bad = np.argmax(np.where(lower, g, -np.inf)) if lo_top > up_bot else np.argmin(np.where(upper, g, np.inf))
        else:
            viol_up = upper & (g < level - 1e-12 * scale)
            viol_lo = lower & (g > level + 1e-12 * scale)
            if not (viol_up.any() or viol_lo.any()):
                return xi, steps
            bad = np.argmax(np.where(viol_up | viol_lo, np.abs(g - level), -np.inf))
        free[bad], upper[bad], lower[bad] = True, False, False
    raise OracleError("active-set refinement did not settle")


def solve_node(A, probs, budget, spec: DistortionSpec, rng=None, max_newton: int = 500) -> NodeSolution:
    """Minimize rho(theta . A) - budget . log(theta) over theta > 0 at one node.

    ``A`` is (K, n): loss per unit holding on each of K branches with
    probabilities ``probs``. ``rng`` randomizes the starting point (used for
    restart checks); the optimum does not depend on it.
    """
    A = np.asarray(A, dtype=float)
    probs = np.asarray(probs, dtype=float)
    b = np.asarray(budget, dtype=float)
    k, n = A.shape
    if spec.is_mean:
        c = probs @ A
        if np.any(c <= 0.0):
            raise OracleError("expected unit loss is not positive; the problem is unbounded")
        return NodeSolution(b / c, np.ones(k), 0, 0.0)

    xi_lp = _phase_one(A, probs, spec)
    if xi_lp is None:
        raise OracleError("no admissible weighting makes every unit risk positive; the problem is unbounded")
    xi = _interior_start(xi_lp, A, probs, spec, rng)
    xi, steps = _barrier(xi, A, probs, b, spec, mu_min=1e-9, max_newton=max_newton)
    xi, more = _active_set(xi, A, probs, b, spec)
    gam = (1.0 - spec.p) + spec.p * xi
    c = probs @ (gam[:, None] * A)
    if np.any(c <= 0.0):
        raise OracleError("unit risk is not positive at the solution")
    theta = b / c
    g = A @ theta
    gap = float(distortion_exact_row(spec, g, probs) - probs @ (gam * g))
    return NodeSolution(theta, gam, steps + more, gap)


def distortion_exact_row(spec, values, probs):
    w = atom_weights_batch(spec, values[None, :], probs[None, :])[0]
    return probs @ (w * values)


def node_coefficients(tree: ScenarioTree, t: int, theta_next, risk_next):
    """Per-branch unit-loss coefficients A (N_t, K_t, n) at layer t."""
    inc = negative_increments(tree)[t]
    if theta_next is None:
        return inc
    kids = tree.children(t, tree.prices[t + 1])
    den = tree.children(t, _portfolio_value(theta_next, tree.prices[t + 1]))
    return inc + kids * (tree.children(t, risk_next) / den)[..., None]


@dataclass
class TreeSolution:
    theta: list  # per-layer (N_t, n)
    gamma: list  # per-layer (N_t, K_t) certified comonotone weights
    risk: list
    newton_steps: int

    def contributions(self, tree: ScenarioTree, spec) -> list:
        from .portfolio import risk_contributions_tree

        return risk_contributions_tree(tree, self.theta, spec, gammas=self.gamma)


def solve_tree_risk_budgeting(tree: ScenarioTree, budget: RiskBudget, spec, floor: float = 0.0, seed=None) -> TreeSolution:
    """Backward-recursive solution of the risk-budgeting problem on a tree.

    ``seed`` randomizes every node's starting point (restart checks).
    """
    horizon = tree.depth
    if budget.horizon != horizon or budget.b.shape[1] != tree.n_assets:
        raise ValueError(f"budget shape {budget.b.shape} does not match tree ({horizon}, {tree.n_assets})")
    specs = _specs(spec, horizon)
    rng = None if seed is None else np.random.default_rng(seed)
    theta = [None] * horizon
    gam = [None] * horizon
    risk = [None] * (horizon + 1)
    risk[horizon] = np.zeros(tree.layer_size(horizon))
    steps = 0
    for t in reversed(range(horizon)):
        A = node_coefficients(tree, t, theta[t + 1] if t + 1 < horizon else None, risk[t + 1])
        layer_theta = np.empty((tree.layer_size(t), tree.n_assets))
        layer_gam = np.empty(tree.probs[t].shape)
        for j in range(tree.layer_size(t)):
            try:
                sol = solve_node(A[j], tree.probs[t][j], budget.b[t], specs[t], rng=rng)
            except OracleError as err:
                raise OracleError(f"node {tree.node_id(t, j)} (t={t}, path={tree.node_path(t, j)}): {err}") from None
            layer_theta[j], layer_gam[j] = sol.theta, sol.gamma
            steps += sol.newton_steps
        if np.any(~(layer_theta > floor)):
            raise OracleError(f"solution at t={t} falls below the admissibility floor {floor}")
        theta[t], gam[t] = layer_theta, layer_gam
        g = np.einsum("jkn,jn->jk", A, layer_theta)
        risk[t] = np.sum(tree.probs[t] * layer_gam * g, axis=1)
    # recompute the risk-to-go with the default convention as a consistency record
    ev = risk_to_go_tree(tree, theta, specs)
    return TreeSolution(theta, gam, ev.risk, steps)


def tie_nodes(tree: ScenarioTree, solution: TreeSolution, spec, atol: float = 1e-9) -> list:
    """Nodes where the atom-average weights differ from the certified ones.

    At these nodes the optimum lies on a tie between branches, and the
    Euler contributions depend on how the tie is split.
    """
    ev = risk_to_go_tree(tree, solution.theta, spec)
    out = []
    for t in range(tree.depth):
        diff = np.abs(ev.gamma[t] - solution.gamma[t]).max(axis=1)
        out.extend((t, int(j)) for j in np.nonzero(diff > atol)[0])
    return out


@dataclass
class StaticSolution:
    theta: np.ndarray
    contributions: np.ndarray  # Euler contributions with atom-average weights
    risk: float
    gamma: np.ndarray


def solve_static_saa(losses, budget, spec: DistortionSpec, seed=None) -> StaticSolution:
    """Single-period risk budgeting on a sample of unit losses (equiprobable atoms)."""
    losses = np.asarray(losses, dtype=float)
    if losses.ndim != 2 or losses.shape[0] < 2:
        raise ValueError("losses must be an (n_samples, n_assets) array with at least two rows")
    b = np.asarray(budget, dtype=float).ravel()
    if b.size != losses.shape[1] or np.any(b <= 0.0) or abs(b.sum() - 1.0) > 1e-12:
        raise ValueError("budget must be positive, one entry per asset, summing to 1")
    if np.any(np.ptp(losses, axis=0) == 0.0):
        raise OracleError("an asset has a degenerate (constant) loss sample")
    probs = np.full(losses.shape[0], 1.0 / losses.shape[0])
    rng = None if seed is None else np.random.default_rng(seed)
    sol = solve_node(losses, probs, b, spec, rng=rng)
    g = losses @ sol.theta
    gam = atom_weights_batch(spec, g[None, :], probs[None, :])[0]
    rc = sol.theta * (probs @ (gam[:, None] * losses))
    return StaticSolution(sol.theta, rc, float(probs @ (gam * g)), gam)


def gaussian_es_contributions(mu, sigma, theta, alpha: float, p: float) -> np.ndarray:
    """Euler contributions of p * ES_alpha + (1 - p) * E for Gaussian losses.

    Losses are Normal(mu, sigma); the portfolio loss theta . L is Normal
    with sd s = sqrt(theta' sigma theta), and
    ES = mu . theta + s * pdf(ppf(alpha)) / (1 - alpha). Differentiating in
    theta_i and multiplying by theta_i gives the contributions.
    """
    mu = np.asarray(mu, dtype=float)
    sigma = np.atleast_2d(np.asarray(sigma, dtype=float))
    theta = np.asarray(theta, dtype=float)
    try:
        np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError:
        raise ValueError("covariance must be positive definite") from None
    sd = np.sqrt(theta @ sigma @ theta)
    tail = stats.norm.pdf(stats.norm.ppf(alpha)) / (1.0 - alpha)
    marginal = p * (mu + sigma @ theta / sd * tail) + (1.0 - p) * mu
    return theta * marginal


def write_strategy_csv(path, theta) -> None:
    """Scenario-tensor strategy as ``path,t,asset,theta`` rows."""
    theta = np.asarray(theta, dtype=float)
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["path", "t", "asset", "theta"])
        for s in range(theta.shape[0]):
            for t in range(theta.shape[1]):
                for i in range(theta.shape[2]):
                    out.writerow([s, t, i, repr(float(theta[s, t, i]))])
