"""Mean/expected-shortfall distortion weights and one-step risk measures.

The family covered here is rho = p * ES_alpha + (1 - p) * E, written as a
distortion integral with the piecewise constant weight

    gamma(u) = p / (1 - alpha) * 1{u >= alpha} + (1 - p).

Everything works on discrete laws: exact for scenario-tree nodes and
equiprobable atoms for Monte Carlo samples.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Relative gap below which two atom values are treated as the same atom.
TIE_RTOL = 1e-12


@dataclass(frozen=True)
class DistortionSpec:
    """Parameters of the mean/ES mixture ``p * ES_alpha + (1 - p) * E``."""

    p: float
    alpha: float

    def __post_init__(self):
        if not (0.0 <= self.p <= 1.0):
            raise ValueError(f"mixing weight p must lie in [0, 1], got {self.p}")
        if not (0.0 <= self.alpha < 1.0):
            raise ValueError(f"ES level alpha must lie in [0, 1), got {self.alpha}")

    @property
    def max_weight(self) -> float:
        """Largest value taken by the weight function."""
        return self.p / (1.0 - self.alpha) + (1.0 - self.p)

    @property
    def is_mean(self) -> bool:
        """True when the weight is identically one."""
        return self.p == 0.0 or self.alpha == 0.0

    def square_integral(self) -> float:
        """Integral of the squared weight over [0, 1]."""
        p, a = self.p, self.alpha
        return (1 - p) ** 2 + 2 * p * (1 - p) + p**2 / (1 - a)

    def cumulative(self, u):
        """Closed-form integral of the weight over [0, u]."""
        u = np.asarray(u, dtype=float)
        return (1.0 - self.p) * u + self.p / (1.0 - self.alpha) * np.maximum(u - self.alpha, 0.0)


def gamma(spec: DistortionSpec, u):
    """Evaluate the weight function at ``u`` (scalar or array)."""
    u_arr = np.asarray(u, dtype=float)
    if np.any(~np.isfinite(u_arr)) or np.any((u_arr < 0.0) | (u_arr > 1.0)):
        raise ValueError("gamma is defined on [0, 1] only")
    w = spec.p / (1.0 - spec.alpha) * (u_arr >= spec.alpha) + (1.0 - spec.p)
    return float(w) if np.ndim(u) == 0 else w


@dataclass(frozen=True)
class DiscreteDistribution:
    """Finitely many atoms with positive probabilities summing to one."""

    values: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).ravel()
        q = np.asarray(self.probs, dtype=float).ravel()
        if v.shape != q.shape or v.size == 0:
            raise ValueError("values and probs must be non-empty and of equal length")
        if np.any(~np.isfinite(v)):
            raise ValueError("atom values must be finite")
        if np.any(q <= 0.0):
            raise ValueError("atom probabilities must be positive")
        if abs(q.sum() - 1.0) > 1e-12:
            raise ValueError(f"atom probabilities sum to {q.sum()!r}, not 1")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "probs", q)

    @classmethod
    def equiprobable(cls, values) -> "DiscreteDistribution":
        v = np.asarray(values, dtype=float).ravel()
        return cls(v, np.full(v.size, 1.0 / v.size))


def atom_weights_batch(spec: DistortionSpec, values, probs):
    """Average weight per atom for many discrete laws at once.

    ``values`` and ``probs`` have shape (m, k): row j is one law with k atoms.
    Returns an (m, k) array in the original atom order such that
    ``sum(probs * values * weights, axis=1)`` is the distortion risk of each
    row. Tied atoms share one averaged weight.
    """
    values = np.asarray(values, dtype=float)
    probs = np.asarray(probs, dtype=float)
    if values.ndim != 2 or values.shape != probs.shape:
        raise ValueError("values and probs must be matching 2-d arrays")
    m, k = values.shape
    if spec.is_mean:
        return np.ones_like(values)

    order = np.argsort(values, axis=1, kind="stable")
    v = np.take_along_axis(values, order, axis=1)
    q = np.take_along_axis(probs, order, axis=1)

    upper = np.cumsum(q, axis=1)
    upper[:, -1] = 1.0
    lower = np.empty_like(upper)
    lower[:, 0] = 0.0
    lower[:, 1:] = upper[:, :-1]
    mass = spec.cumulative(upper) - spec.cumulative(lower)

    scale = np.max(np.abs(v), axis=1, keepdims=True)
    new_group = np.ones((m, k), dtype=bool)
    new_group[:, 1:] = (v[:, 1:] - v[:, :-1]) > TIE_RTOL * scale
    group = np.cumsum(new_group, axis=1) - 1
    group += (np.arange(m) * k)[:, None]
    gid = group.ravel()
    group_mass = np.bincount(gid, weights=mass.ravel(), minlength=m * k)
    group_prob = np.bincount(gid, weights=q.ravel(), minlength=m * k)
    sorted_weights = (group_mass[gid] / group_prob[gid]).reshape(m, k)

    weights = np.empty_like(sorted_weights)
    np.put_along_axis(weights, order, sorted_weights, axis=1)
    return weights


def atom_weights(spec: DistortionSpec, dist: DiscreteDistribution) -> np.ndarray:
    """Per-atom average weight, aligned with ``dist.values``."""
    return atom_weights_batch(spec, dist.values[None, :], dist.probs[None, :])[0]


def distortion_batch(spec: DistortionSpec, values, probs) -> np.ndarray:
    """Distortion risk of each row of an (m, k) batch of discrete laws."""
    values = np.asarray(values, dtype=float)
    probs = np.asarray(probs, dtype=float)
    w = atom_weights_batch(spec, values, probs)
    return np.sum(probs * values * w, axis=1)


def distortion_exact(spec: DistortionSpec, dist: DiscreteDistribution) -> float:
    """Distortion risk measure of a discrete law (quantile-weighted sum)."""
    return float(distortion_batch(spec, dist.values[None, :], dist.probs[None, :])[0])


def empirical_var_es(sample, alpha: float) -> tuple[float, float]:
    """Empirical VaR (left-continuous quantile) and ES of a loss sample."""
    x = np.sort(np.asarray(sample, dtype=float).ravel())
    n = x.size
    if not (0.0 <= alpha < 1.0):
        raise ValueError(f"alpha must lie in [0, 1), got {alpha}")
    if n == 0 or n * (1.0 - alpha) < 1.0 - 1e-9:
        raise ValueError(f"need at least 1/(1 - alpha) = {1.0 / (1.0 - alpha):g} samples, got {n}")
    k = max(int(np.ceil(n * alpha - 1e-9)), 1)
    var = float(x[k - 1])
    es = distortion_exact(DistortionSpec(1.0, alpha), DiscreteDistribution.equiprobable(x))
    return var, es
