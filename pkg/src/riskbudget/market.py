"""Heston-type multi-asset market with copula-coupled shocks.

Log-prices follow an Euler step with the positive part of the variance and
variances follow a Milstein step. Price shocks are tied together by a
student-t copula; each price shock is coupled to its own variance shock
through the Gaussian correlation in ``corr``.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np
from scipy import special

# Paths are simulated in blocks of this size, each with its own seed stream.
BLOCK_SIZE = 4096


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class MarketParams:
    mu: np.ndarray
    kappa: np.ndarray
    theta_bar: np.ndarray
    eta: np.ndarray
    corr: np.ndarray
    t_dof: float = 4.0
    dt: float = 1.0 / 48.0
    substeps_per_decision: int = 4
    horizon_decisions: int = 12
    v0: np.ndarray | None = None
    x0: np.ndarray | None = None
    _chol: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        mu = np.atleast_1d(np.asarray(self.mu, dtype=float))
        n = mu.size
        vec = {}
        for name in ("kappa", "theta_bar", "eta"):
            vec[name] = np.broadcast_to(np.asarray(getattr(self, name), dtype=float), (n,)).copy()
        v0 = vec["theta_bar"].copy() if self.v0 is None else np.broadcast_to(np.asarray(self.v0, dtype=float), (n,)).copy()
        x0 = np.ones(n) if self.x0 is None else np.broadcast_to(np.asarray(self.x0, dtype=float), (n,)).copy()
        corr = np.asarray(self.corr, dtype=float)
        if corr.shape != (2 * n, 2 * n):
            raise ValueError(f"corr must be {2 * n}x{2 * n} over (price, variance) shocks, got {corr.shape}")
        if not np.allclose(corr, corr.T, atol=1e-12, rtol=0.0):
            raise ValueError("corr must be symmetric")
        if not np.allclose(np.diag(corr), 1.0, atol=1e-12, rtol=0.0):
            raise ValueError("corr must have a unit diagonal")
        eig = np.linalg.eigvalsh(corr)
        if eig.min() < -1e-10:
            raise ValueError(f"corr is not positive semidefinite (smallest eigenvalue {eig.min():.3g})")
        for name in ("kappa", "theta_bar"):
            if np.any(~(vec[name] > 0.0)):
                raise ValueError(f"{name} must be positive")
        # eta = 0 is allowed and freezes the variance at its mean-reversion path
        if np.any(~(vec["eta"] >= 0.0)):
            raise ValueError("eta must be nonnegative")
        if not self.dt > 0.0:
            raise ValueError("dt must be positive")
        if not self.t_dof >= 3.0:
            raise ValueError("t_dof must be at least 3")
        if np.any(~(v0 > 0.0)) or np.any(~(x0 > 0.0)):
            raise ValueError("v0 and x0 must be positive")
        if self.substeps_per_decision < 1 or self.horizon_decisions < 1:
            raise ValueError("substeps and horizon must be at least 1")
        for name, val in (("mu", mu), ("v0", v0), ("x0", x0), ("corr", corr), *vec.items()):
            object.__setattr__(self, name, val)
        # eigen-based factor so that merely semidefinite matrices work too
        w, q = np.linalg.eigh(corr)
        object.__setattr__(self, "_chol", q * np.sqrt(np.clip(w, 0.0, None)))

    @property
    def n_assets(self) -> int:
        return self.mu.size

    @property
    def n_steps(self) -> int:
        return self.substeps_per_decision * self.horizon_decisions

    def replace(self, **changes) -> "MarketParams":
        kw = {k: getattr(self, k) for k in ("mu", "kappa", "theta_bar", "eta", "corr", "t_dof", "dt",
                                           "substeps_per_decision", "horizon_decisions", "v0", "x0")}
        kw.update(changes)
        return MarketParams(**kw)

    def to_json(self) -> dict:
        return {
            "mu": self.mu.tolist(), "kappa": self.kappa.tolist(), "theta_bar": self.theta_bar.tolist(),
            "eta": self.eta.tolist(), "corr": self.corr.tolist(), "t_dof": self.t_dof, "dt": self.dt,
            "substeps_per_decision": self.substeps_per_decision, "horizon_decisions": self.horizon_decisions,
            "v0": self.v0.tolist(), "x0": self.x0.tolist(),
        }

    @classmethod
    def from_json(cls, doc: dict) -> "MarketParams":
        doc = dict(doc)
        if "corr" not in doc:
            doc["corr"] = block_correlation(len(doc["mu"]), doc.pop("price_corr", 0.0), doc.pop("leverage_corr", 0.0))
        else:
            doc.pop("price_corr", None)
            doc.pop("leverage_corr", None)
        return cls(**doc)


def block_correlation(n: int, price_corr: float, leverage_corr: float) -> np.ndarray:
    """Equicorrelated price shocks, each tied to its own variance shock only."""
    corr = np.eye(2 * n)
    corr[:n, :n] = price_corr + (1.0 - price_corr) * np.eye(n)
    idx = np.arange(n)
    corr[idx, n + idx] = corr[n + idx, idx] = leverage_corr
    return corr


def reference_params(**overrides) -> MarketParams:
    """Five-asset configuration used for the total-return table."""
    params = dict(
        mu=[0.05, 0.075, 0.10, 0.125, 0.15],
        kappa=[4.0, 4.5, 5.0, 5.5, 6.0],
        theta_bar=[0.01, 0.0225, 0.04, 0.0625, 0.09],
        eta=[0.5, 0.875, 1.25, 1.625, 2.0],
        corr=block_correlation(5, 0.3, -0.5),
        t_dof=4.0,
        dt=1.0 / 48.0,
        substeps_per_decision=4,
        horizon_decisions=12,
    )
    params.update(overrides)
    return MarketParams(**params)


# Published total-return statistics for the five-asset configuration.
REFERENCE_MEAN = np.array([0.05, 0.08, 0.11, 0.13, 0.16])
REFERENCE_STD = np.array([0.10, 0.16, 0.22, 0.29, 0.35])
REFERENCE_CORR = np.array([
    [1.00, 0.17, 0.16, 0.16, 0.16],
    [0.17, 1.00, 0.15, 0.15, 0.15],
    [0.16, 0.15, 1.00, 0.14, 0.15],
    [0.16, 0.15, 0.14, 1.00, 0.15],
    [0.16, 0.15, 0.15, 0.15, 1.00],
])
REFERENCE_TOL = {"mean": 0.01, "std": 0.02, "corr": 0.03}


def compare_to_reference(stats: dict) -> dict:
    """Largest absolute deviation from the published table, per statistic."""
    off = np.triu_indices(5, 1)
    return {
        "mean": float(np.max(np.abs(stats["mean"] - REFERENCE_MEAN))),
        "std": float(np.max(np.abs(stats["std"] - REFERENCE_STD))),
        "corr": float(np.max(np.abs(stats["corr"][off] - REFERENCE_CORR[off]))),
    }


@dataclass(frozen=True)
class PricePaths:
    prices: np.ndarray  # (paths, horizon_decisions + 1, assets)
    seed: int

    @property
    def n_paths(self) -> int:
        return self.prices.shape[0]


def _shocks(params: MarketParams, rng: np.random.Generator, n: int):
    """Price and variance Brownian increments for one time step."""
    k = params.n_assets
    g = rng.standard_normal((n, 2 * k)) @ params._chol.T
    chi = np.sqrt(rng.chisquare(params.t_dof, size=(n, 1)) / params.t_dof)
    u = special.stdtr(params.t_dof, g[:, :k] / chi)
    # keep the uniform strictly inside (0, 1) so the normal quantile is finite
    u = np.clip(u, 1e-300, 1.0 - np.finfo(float).epsneg)
    sq = np.sqrt(params.dt)
    return special.ndtri(u) * sq, g[:, k:] * sq


def _simulate_block(params: MarketParams, rng: np.random.Generator, n: int) -> np.ndarray:
    k, dt = params.n_assets, params.dt
    decay = np.exp(-params.kappa * dt)
    log_x = np.tile(np.log(params.x0), (n, 1))
    v = np.tile(params.v0, (n, 1))
    out = np.empty((n, params.horizon_decisions + 1, k))
    out[:, 0] = params.x0
    for step in range(params.n_steps):
        dw_x, dw_v = _shocks(params, rng, n)
        vp = np.maximum(v, 0.0)
        root = np.sqrt(vp)
        log_x += (params.mu - 0.5 * vp) * dt + root * dw_x
        v = params.theta_bar + (vp - params.theta_bar) * decay + params.eta * root * dw_v \
            + 0.25 * params.eta**2 * (dw_v**2 - dt)
        if (step + 1) % params.substeps_per_decision == 0:
            out[:, (step + 1) // params.substeps_per_decision] = np.exp(log_x)
    return out


def block_rng(seed: int, block: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), int(block)])))


def _check_prices(prices: np.ndarray) -> None:
    bad = ~np.all(np.isfinite(prices) & (prices > 0.0), axis=(1, 2))
    if bad.any():
        raise SimulationError(f"non-finite or nonpositive price on path {int(np.argmax(bad))}")


def simulate(params: MarketParams, n_paths: int, rng: np.random.Generator) -> np.ndarray:
    """Decision-time prices for ``n_paths`` paths drawn from a caller-owned generator.

    Used for the small, frequent batches of training; :func:`sample_paths`
    is the reproducible bulk sampler.
    """
    if n_paths < 1:
        raise ValueError("n_paths must be at least 1")
    with np.errstate(over="ignore", invalid="ignore"):
        prices = _simulate_block(params, rng, n_paths)
    _check_prices(prices)
    return prices


def sample_paths(params: MarketParams, n_paths: int, seed: int = 0) -> PricePaths:
    """Simulate decision-time prices for ``n_paths`` independent paths."""
    if n_paths < 1:
        raise ValueError("n_paths must be at least 1")
    n_blocks = -(-n_paths // BLOCK_SIZE)
    blocks = []
    for b in range(n_blocks):
        size = min(BLOCK_SIZE, n_paths - b * BLOCK_SIZE)
        with np.errstate(over="ignore", invalid="ignore"):
            blocks.append(_simulate_block(params, block_rng(seed, b), BLOCK_SIZE)[:size])
    prices = np.concatenate(blocks, axis=0)
    _check_prices(prices)
    return PricePaths(prices, int(seed))


def terminal_stats(paths: PricePaths | np.ndarray) -> dict:
    """Moments of the total return X_final / X_0 - 1 per asset."""
    prices = paths.prices if isinstance(paths, PricePaths) else np.asarray(paths, dtype=float)
    if prices.shape[0] < 2:
        raise ValueError("need at least two paths")
    ret = prices[:, -1] / prices[:, 0] - 1.0
    mean = ret.mean(axis=0)
    std = ret.std(axis=0, ddof=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        sharpe = np.where(std > 0.0, mean / np.where(std > 0.0, std, 1.0), np.nan)
        centered = ret - mean
        cov = centered.T @ centered / (ret.shape[0] - 1)
        corr = cov / np.outer(std, std)
    corr[~np.isfinite(corr)] = np.nan
    return {"mean": mean, "std": std, "sharpe": sharpe, "corr": corr}


def write_paths_csv(path, paths: PricePaths) -> None:
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["path", "t", "asset", "price"])
        n_paths, n_times, n_assets = paths.prices.shape
        for p in range(n_paths):
            for t in range(n_times):
                for i in range(n_assets):
                    out.writerow([p, t, i, repr(float(paths.prices[p, t, i]))])


def write_paths_columnar(path, paths: PricePaths) -> None:
    """Column-per-field binary dump (numpy .npz) with the same columns as the CSV."""
    n_paths, n_times, n_assets = paths.prices.shape
    p, t, i = np.meshgrid(np.arange(n_paths), np.arange(n_times), np.arange(n_assets), indexing="ij")
    with open(path, "wb") as fh:
        np.savez(fh, path=p.ravel(), t=t.ravel(), asset=i.ravel(), price=paths.prices.ravel(),
                 meta=np.frombuffer(json.dumps({"seed": paths.seed, "shape": list(paths.prices.shape)}).encode(), dtype=np.uint8))


def read_paths_columnar(path) -> PricePaths:
    with np.load(path) as data:
        meta = json.loads(bytes(data["meta"]).decode())
        prices = data["price"].reshape(meta["shape"])
    return PricePaths(prices, meta["seed"])
