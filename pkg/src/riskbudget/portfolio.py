"""Strategies, the weight process, risk-to-go and risk contributions.

Two representations of a strategy are used:

* scenario tensors ``theta[s, t, i]`` with prices ``prices[s, t, i]`` carrying
  one more time point (Monte Carlo paths or enumerated tree scenarios);
* per-layer lists ``theta[t]`` of shape (N_t, n) on a :class:`ScenarioTree`,
  which are adapted by construction.

Losses follow the sign convention ``dX_t = -(X_{t+1} - X_t)``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .risk import DistortionSpec, atom_weights_batch, distortion_batch
from .tree import ScenarioTree, negative_increments


@dataclass(frozen=True)
class RiskBudget:
    """Target risk shares ``b[t, i]``; every time row sums to one."""

    b: np.ndarray

    def __post_init__(self):
        b = np.atleast_2d(np.asarray(self.b, dtype=float))
        if np.any(~(b > 0.0)):
            raise ValueError("budget entries must be positive")
        off = np.abs(b.sum(axis=1) - 1.0)
        if off.max() > 1e-12:
            raise ValueError(f"budget row {int(off.argmax())} sums to {float(b[off.argmax()].sum())!r}, not 1")
        object.__setattr__(self, "b", b)

    @classmethod
    def constant(cls, row, horizon: int) -> "RiskBudget":
        """Same row for each of ``horizon`` decision times (row is renormalized)."""
        row = np.asarray(row, dtype=float)
        row = row / row.sum()
        return cls(np.tile(row, (horizon, 1)))

    @property
    def horizon(self) -> int:
        return self.b.shape[0]


@dataclass(frozen=True)
class StrategyTensor:
    """Share holdings ``theta[scenario, time, asset]`` above a floor."""

    theta: np.ndarray
    floor: float = 0.0

    def __post_init__(self):
        theta = np.asarray(self.theta, dtype=float)
        if theta.ndim != 3:
            raise ValueError("theta must be a (scenario, time, asset) array")
        if np.any(~(theta > self.floor)):
            raise ValueError(f"strategy must exceed the admissibility floor {self.floor}")
        object.__setattr__(self, "theta", theta)


def _specs(spec, horizon: int) -> list:
    if isinstance(spec, DistortionSpec):
        return [spec] * horizon
    spec = list(spec)
    if len(spec) != horizon:
        raise ValueError(f"need {horizon} distortion specs, got {len(spec)}")
    return spec


# -- scenario-tensor operations ------------------------------------------------


def weight_process(theta, prices) -> np.ndarray:
    """w_t = theta_t . X_{t+1} / theta_{t+1} . X_{t+1} for t < T, shape (S, T)."""
    theta = np.asarray(theta, dtype=float)
    prices = np.asarray(prices, dtype=float)
    if prices.shape[1] != theta.shape[1] + 1 or prices.shape[::2] != theta.shape[::2]:
        raise ValueError(f"prices {prices.shape} incompatible with strategy {theta.shape}")
    nxt = prices[:, 1:-1]
    num = np.sum(theta[:, :-1] * nxt, axis=-1)
    den = np.sum(theta[:, 1:] * nxt, axis=-1)
    assert np.all(den > 0.0), "nonpositive portfolio value in weight process"
    return num / den


def induce_self_financing(theta, prices) -> np.ndarray:
    """Induced self-financing strategy (prod_{s<t} w_s) * theta_t."""
    theta = np.asarray(theta, dtype=float)
    w = weight_process(theta, prices)
    factor = np.ones(theta.shape[:2])
    factor[:, 1:] = np.cumprod(w, axis=1)
    return theta * factor[..., None]


def relative_wealth(vartheta, prices) -> np.ndarray:
    """Wealth of a self-financing strategy divided by its initial wealth.

    Entry t is vartheta_{t-1} . X_t / vartheta_0 . X_0 (1 at t = 0), for
    t = 0..T+1.
    """
    vartheta = np.asarray(vartheta, dtype=float)
    prices = np.asarray(prices, dtype=float)
    w0 = np.sum(vartheta[:, 0] * prices[:, 0], axis=-1)
    out = np.ones(prices.shape[:2])
    out[:, 1:] = np.sum(vartheta * prices[:, 1:], axis=-1) / w0[:, None]
    return out


def strategy_states(theta, prices) -> np.ndarray:
    """Network inputs (t, relative wealth, X_t) for t = 0..T, shape (S, T+1, n+2)."""
    theta = np.asarray(theta, dtype=float)
    prices = np.asarray(prices, dtype=float)
    n_paths, horizon, _ = theta.shape
    wealth = relative_wealth(induce_self_financing(theta, prices), prices)
    times = np.broadcast_to(np.arange(horizon, dtype=float), (n_paths, horizon))
    return np.concatenate([times[..., None], wealth[:, :horizon, None], prices[:, :horizon]], axis=-1)


def scale_strategy(theta, a):
    """Multiply a strategy by positive factors.

    ``a`` is a scalar, or one entry per decision time, each a scalar or an
    adapted array (per node on trees, per scenario for tensors). Works on
    both per-layer lists and scenario tensors.
    """
    per_time = not np.isscalar(a)
    if per_time and len(a) == 0:
        raise ValueError("empty scaling factor")
    if isinstance(theta, (list, tuple)):
        factors = list(a) if per_time else [a] * len(theta)
        out = []
        for th, f in zip(theta, factors, strict=True):
            f = np.asarray(f, dtype=float)
            if np.any(~(f > 0.0)):
                raise ValueError("scaling factors must be positive")
            out.append(np.asarray(th) * (f[:, None] if f.ndim == 1 else f))
        return out
    theta = np.asarray(theta, dtype=float)
    factors = list(a) if per_time else [a] * theta.shape[1]
    out = theta.copy()
    for t, f in enumerate(factors):
        f = np.asarray(f, dtype=float)
        if np.any(~(f > 0.0)):
            raise ValueError("scaling factors must be positive")
        out[:, t] *= f[:, None] if f.ndim == 1 else f
    return out


# -- exact tree evaluation -------------------------------------------------------


@dataclass
class TreeRisk:
    """Backward-induction results on a tree.

    ``risk[t]`` is R_t on layer t (``risk[T+1]`` is zero on the leaves);
    ``loss[t]``, ``weights[t]`` and ``gamma[t]`` are (N_t, K_t) arrays of
    g_t, w_t (ones at t = T) and the realized distortion weights.
    """

    risk: list
    loss: list
    weights: list
    gamma: list
    increments: list = field(repr=False)

    def loss_immediate(self, t, theta):
        """theta_t . dX_t per branch, without the risk-to-go carry."""
        return np.einsum("jkn,jn->jk", self.increments[t], np.asarray(theta[t], dtype=float))


def _portfolio_value(theta_layer, prices_layer):
    return np.sum(np.asarray(theta_layer) * prices_layer, axis=-1)


def weight_process_tree(tree: ScenarioTree, theta) -> list:
    """w_t on layer t+1 nodes, for t = 0..T-1."""
    out = []
    for t in range(len(theta) - 1):
        x = tree.prices[t + 1]
        num = _portfolio_value(tree.parent_values(t, theta[t]), x)
        den = _portfolio_value(theta[t + 1], x)
        assert np.all(den > 0.0), "nonpositive portfolio value in weight process"
        out.append(num / den)
    return out


def induce_self_financing_tree(tree: ScenarioTree, theta) -> list:
    out = [np.asarray(theta[0], dtype=float).copy()]
    factor = np.ones(1)
    for t, w in enumerate(weight_process_tree(tree, theta)):
        factor = tree.parent_values(t, factor) * w
        out.append(np.asarray(theta[t + 1]) * factor[:, None])
    return out


def _check_layers(tree: ScenarioTree, theta):
    if len(theta) != tree.depth:
        raise ValueError(f"strategy has {len(theta)} layers, tree has {tree.depth} decision times")
    for t, th in enumerate(theta):
        if np.shape(th) != (tree.layer_size(t), tree.n_assets):
            raise ValueError(f"strategy layer {t} has shape {np.shape(th)}")


def risk_to_go_tree(tree: ScenarioTree, theta, spec, gammas=None) -> TreeRisk:
    """Backward induction R_t = rho_t(theta_t . dX_t + w_t R_{t+1}) on a tree.

    ``gammas`` optionally replaces the atom-average weights on some layers
    (a list with None entries where the default is used); this lets a caller
    pin a particular comonotone realization at tied atoms.
    """
    _check_layers(tree, theta)
    horizon = tree.depth
    specs = _specs(spec, horizon)
    incs = negative_increments(tree)
    risk = [None] * (horizon + 1)
    risk[horizon] = np.zeros(tree.layer_size(horizon))
    loss, weights, gam = [None] * horizon, [None] * horizon, [None] * horizon
    for t in reversed(range(horizon)):
        th = np.asarray(theta[t], dtype=float)
        g = np.einsum("jkn,jn->jk", incs[t], th)
        if t < horizon - 1:
            kids = tree.children(t, tree.prices[t + 1])
            den = tree.children(t, _portfolio_value(theta[t + 1], tree.prices[t + 1]))
            w = np.einsum("jkn,jn->jk", kids, th) / den
            g = g + w * tree.children(t, risk[t + 1])
        else:
            w = np.ones_like(g)
        if gammas is not None and gammas[t] is not None:
            gm = np.asarray(gammas[t], dtype=float)
        else:
            gm = atom_weights_batch(specs[t], g, tree.probs[t])
        risk[t] = np.sum(tree.probs[t] * gm * g, axis=1)
        loss[t], weights[t], gam[t] = g, w, gm
    return TreeRisk(risk, loss, weights, gam, incs)


def risk_contributions_tree(tree: ScenarioTree, theta, spec, gammas=None, evaluated: TreeRisk | None = None) -> list:
    """Risk contributions RC_t of shape (N_t, n) for every layer t."""
    ev = evaluated if evaluated is not None else risk_to_go_tree(tree, theta, spec, gammas)
    horizon = tree.depth
    out = []
    for t in range(horizon):
        th = np.asarray(theta[t], dtype=float)
        inner = ev.increments[t].copy()
        if t < horizon - 1:
            kids = tree.children(t, tree.prices[t + 1])
            den = tree.children(t, _portfolio_value(theta[t + 1], tree.prices[t + 1]))
            inner += kids / den[..., None] * tree.children(t, ev.risk[t + 1])[..., None]
        weight = (tree.probs[t] * ev.gamma[t])[..., None]
        out.append(th * np.sum(weight * inner, axis=1))
    return out


def rc_decomposition(tree: ScenarioTree, theta, spec, t: int, i: int | None = None, gammas=None) -> np.ndarray:
    """Cascade of future-impact terms whose sum is RC_{t,i}.

    Returns shape (T - t + 1, N_t) for a single asset, or (T - t + 1, N_t, n)
    when ``i`` is None. Term 0 is the immediate loss; term k >= 1 carries the
    decision at t through the k-th later period via the weight process.
    """
    ev = risk_to_go_tree(tree, theta, spec, gammas)
    horizon = tree.depth
    th = np.asarray(theta[t], dtype=float)
    q0 = (tree.probs[t] * ev.gamma[t])[..., None]
    terms = [th * np.sum(q0 * ev.increments[t], axis=1)]
    if t < horizon - 1:
        kids = tree.children(t, tree.prices[t + 1])
        den = tree.children(t, _portfolio_value(theta[t + 1], tree.prices[t + 1]))
        lead = th[:, None, :] * kids / den[..., None]  # (N_t, K_t, n)
        for k in range(1, horizon - t):
            s = t + k
            # E[Gamma_s * theta_s . dX_s | layer s], then fold back through w and Gamma
            val = np.sum(tree.probs[s] * ev.gamma[s] * ev.loss_immediate(s, theta), axis=1)
            for r in reversed(range(t + 1, s)):
                val = np.sum(tree.probs[r] * ev.gamma[r] * ev.weights[r] * tree.children(r, val), axis=1)
            terms.append(np.sum(q0 * lead * tree.children(t, val)[..., None], axis=1))
    out = np.stack(terms)
    return out if i is None else out[..., i]


def write_rc_csv(path, tree: ScenarioTree, rc, risk) -> None:
    """Dump RC and R per node as ``node,t,asset,rc,risk_to_go``."""
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["node", "t", "asset", "rc", "risk_to_go"])
        for t, layer in enumerate(rc):
            for j in range(layer.shape[0]):
                for i in range(layer.shape[1]):
                    out.writerow([tree.node_id(t, j), t, i, repr(float(layer[j, i])), repr(float(risk[t][j]))])


# -- Monte Carlo -----------------------------------------------------------------


def risk_to_go_mc(prices, theta, spec, critic: Callable | None = None) -> np.ndarray:
    """Per-path, per-time risk-to-go along simulated paths.

    With a single decision time the risk is the empirical distortion risk of
    theta_0 . dX_0 over the sample (same value on every path). Otherwise a
    critic callable mapping states (S, T+1, n+2) to (S, T+1) risk-to-go
    values is required.
    """
    theta = np.asarray(theta, dtype=float)
    prices = np.asarray(prices, dtype=float)
    horizon = theta.shape[1]
    if critic is None:
        if horizon != 1:
            raise ValueError("a critic is required when there is more than one decision time")
        specs = _specs(spec, 1)
        loss = -np.sum(theta[:, 0] * (prices[:, 1] - prices[:, 0]), axis=-1)
        n = loss.size
        rho = distortion_batch(specs[0], loss[None, :], np.full((1, n), 1.0 / n))[0]
        return np.full((n, 1), rho)
    values = np.asarray(critic(strategy_states(theta, prices)), dtype=float)
    if values.shape != theta.shape[:2]:
        raise ValueError(f"critic returned shape {values.shape}, expected {theta.shape[:2]}")
    return values


def tree_strategy_from_tensor(tree: ScenarioTree, theta, atol: float = 1e-12) -> list:
    """Per-layer strategy from a scenario tensor over the tree's leaf paths."""
    return tree.from_scenarios(theta, atol=atol)


def normalize_layers(theta: Sequence, tree: ScenarioTree) -> list:
    """Induced self-financing strategy with initial wealth one, on a tree."""
    vt = induce_self_financing_tree(tree, theta)
    w0 = float(_portfolio_value(vt[0], tree.prices[0])[0])
    return [v / w0 for v in vt]
