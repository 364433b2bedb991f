"""Strictly consistent scores for the (VaR, ES, risk) triple and for cdfs.

The triple score is built from the revelation construction with
phi(z) = z**2 and Phi(z) = -log(z + D): the first two arguments are
elicited as the upper-tail VaR and ES at level alpha and the third as
p * ES + (1 - p) * mean. The cdf score is the grid-discretized CRPS.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ScoreConfig:
    D: float = 1.0
    z_lo: float = -1.0
    z_hi: float = 1.0
    L: int = 64
    penalty_weight: float = 1.0

    def __post_init__(self):
        if not self.D > 0.0:
            raise ValueError(f"log offset D must be positive, got {self.D}")
        if not self.z_lo < self.z_hi:
            raise ValueError(f"need z_lo < z_hi, got {self.z_lo}, {self.z_hi}")
        if self.L < 2:
            raise ValueError(f"grid needs at least 2 points, got {self.L}")
        if self.penalty_weight < 0.0:
            raise ValueError("penalty weight must be nonnegative")

    @property
    def dz(self) -> float:
        return (self.z_hi - self.z_lo) / (self.L - 1)

    @property
    def grid(self) -> np.ndarray:
        return self.z_lo + self.dz * np.arange(self.L)


def score_rho(z1, z2, z3, y, alpha: float, p: float, D: float, full: bool = True):
    """Score of candidate (VaR, ES, risk) values against realized losses.

    With ``full=False`` the terms depending on ``y`` alone are dropped; the
    minimizers are unchanged.
    """
    if not (0.0 < p < 1.0):
        raise ValueError(f"the triple score needs 0 < p < 1, got {p}")
    if not (0.0 <= alpha < 1.0):
        raise ValueError(f"alpha must lie in [0, 1), got {alpha}")
    z1, z2, z3, y = (np.asarray(a, dtype=float) for a in (z1, z2, z3, y))
    es_shift = z2 + D
    if np.any(~(es_shift > 0.0)):
        bad = np.min(es_shift)
        raise ValueError(f"ES candidate + D = {bad!r} is not positive; increase D for this loss scale")
    if full and np.any(~(y + D > 0.0)):
        bad = np.min(y + D)
        raise ValueError(f"loss + D = {bad!r} is not positive; increase D for this loss scale")
    below = (y <= z1).astype(float)
    tail = ((below - alpha) * z1 + (1.0 - below) * y) / (es_shift * (1.0 - alpha))
    out = np.log(es_shift) - z2 / es_shift + tail + ((z3 - p * z2) / (1.0 - p) - y) ** 2
    if full:
        out = out - np.log(y + D)
    return out


def score_cdf(F, y, cfg: ScoreConfig):
    """Discretized CRPS: sum_l (F(z_l) - 1{z_l >= y})^2 dz.

    ``F`` has the grid on its last axis; ``y`` broadcasts against the rest.
    """
    F = np.asarray(F, dtype=float)
    if F.shape[-1] != cfg.L:
        raise ValueError(f"F has {F.shape[-1]} grid values, config says {cfg.L}")
    if np.any(~((F >= 0.0) & (F <= 1.0))):
        raise ValueError("candidate cdf values must lie in [0, 1]")
    y = np.asarray(y, dtype=float)[..., None]
    step = (cfg.grid >= y).astype(float)
    return np.sum((F - step) ** 2, axis=-1) * cfg.dz


def monotonicity_penalty(F, cfg: ScoreConfig):
    """Squared negative slopes of F along the grid, times the penalty weight."""
    F = np.asarray(F, dtype=float)
    if F.shape[-1] < 2:
        raise ValueError("need at least two grid values")
    slope = np.diff(F, axis=-1) / cfg.dz
    return np.sum(np.minimum(slope, 0.0) ** 2, axis=-1) * cfg.dz * cfg.penalty_weight


def default_score_config(losses, L: int = 64, widen: float = 0.2, penalty_weight: float = 1.0,
                         D_factor: float = 10.0) -> ScoreConfig:
    """Grid and log offset derived from a batch of losses.

    D is ``D_factor`` times the 99th percentile of |loss|; the grid spans the
    batch range widened by ``widen`` of its width on each side.
    """
    losses = np.asarray(losses, dtype=float).ravel()
    D = D_factor * float(np.quantile(np.abs(losses), 0.99))
    lo, hi = float(losses.min()), float(losses.max())
    span = hi - lo
    if span <= 0.0:
        span = max(abs(hi), 1.0)
    if D <= 0.0:
        D = 1.0
    return ScoreConfig(D=D, z_lo=lo - widen * span, z_hi=hi + widen * span, L=L, penalty_weight=penalty_weight)
