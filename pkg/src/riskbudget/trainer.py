"""Actor-critic training of time-consistent risk budgeting strategies.

One outer iteration runs ``m_r`` risk-critic updates (each on a fresh batch
and followed by a soft update of the target critic), ``m_f`` cdf-critic
updates (each on a fresh batch) and one actor update on a fresh batch.

Batches carry, per path and decision time t, the loss

    g_t = theta_t . dX_t + w_t * R_{t+1},   dX_t = -(X_{t+1} - X_t),

with R_{t+1} from the target critic (zero after the last decision). The
actor step minimizes the surrogate sum_t sum_i mean(theta_{t,i} * bracket),
where the bracket

    (dX_{t,i} + X_{t+1,i} / (theta_{t+1} . X_{t+1}) * R_{t+1}) * gamma(U_t) - b_{t,i} / theta_{t,i}

is a constant and U_t = F_t(g_t) comes from the cdf critic.
"""

from __future__ import annotations

import csv
import math
import os
import time
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import market as mkt
from .nnet import autodiff as ad
from .nnet import checkpoint
from .nnet.networks import (
    ActorStepper,
    NetParams,
    actor_forward,
    cdf_critic_forward,
    risk_critic_forward,
)
from .nnet.optim import AdamW, StepScheduler, soft_update
from .portfolio import RiskBudget, _specs, induce_self_financing
from .risk import distortion_batch
from .scoring import default_score_config
from .tree import ScenarioTree

DIAGNOSTIC_COLUMNS = ("iter", "t", "asset", "rc", "rc_std", "risk_to_go", "risk_to_go_std", "score_rho", "score_cdf", "lr")


class TrainingError(RuntimeError):
    """Numerical failure during training, tagged with the outer iteration."""

    def __init__(self, message: str, iteration: int | None = None):
        prefix = f"iteration {iteration}: " if iteration is not None else ""
        super().__init__(prefix + message)
        self.iteration = iteration


class DivergenceError(TrainingError):
    pass


# -- path sources ---------------------------------------------------------------------


class HestonSource:
    """Fresh paths from the stochastic-volatility market."""

    def __init__(self, params: mkt.MarketParams):
        self.params = params
        self.horizon = params.horizon_decisions
        self.n_assets = params.n_assets

    def draw(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return mkt.simulate(self.params, n, rng)

    def describe(self) -> dict:
        return {"kind": "heston", **self.params.to_json()}


class TreeSource:
    """Leaf scenarios of a scenario tree, drawn with their path probabilities."""

    def __init__(self, tree: ScenarioTree):
        self.tree = tree
        self.horizon = tree.depth
        self.n_assets = tree.n_assets
        self._paths = tree.scenario_prices()
        self._probs = tree.path_probs()

    def draw(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return self._paths[rng.choice(self._probs.size, size=n, p=self._probs)]

    def describe(self) -> dict:
        return {"kind": "tree", "depth": self.tree.depth, "branching": list(self.tree.branching)}


class SampleSource:
    """Minibatches resampled with replacement from a fixed set of paths."""

    def __init__(self, prices):
        self.prices = np.asarray(prices, dtype=float)
        if self.prices.ndim != 3 or self.prices.shape[1] < 2:
            raise ValueError("prices must be (paths, decisions + 1, assets)")
        self.horizon = self.prices.shape[1] - 1
        self.n_assets = self.prices.shape[2]

    def draw(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return self.prices[rng.integers(0, self.prices.shape[0], size=n)]

    def describe(self) -> dict:
        return {"kind": "sample", "paths": int(self.prices.shape[0])}


# -- configuration ---------------------------------------------------------------------


@dataclass(frozen=True)
class ScoreSettings:
    D: float | None = None  # None: D_factor x the 99th percentile of |loss| on the first batch
    D_factor: float = 1.0  # larger offsets flatten the ES part of the score and slow the critic
    L: int = 64
    widen: float = 0.2
    penalty_weight: float = 1.0
    z_samples: int | None = 4  # grid pairs per loss in the cdf score; None scores the full grid


@dataclass(frozen=True)
class NetworkSettings:
    gru_layers: int = 5
    gru_hidden: int | None = None  # None: one hidden unit per asset
    ffn_layers: int = 5
    ffn_width: int = 32
    eps: float = 1e-6
    head_gain: float = 0.1
    output_scale: tuple | None = None  # None: sized from the first batch


@dataclass
class TrainConfig:
    market: object
    budget: RiskBudget
    spec: object
    lr_actor: float = 1e-3
    lr_critic: float = 1e-3
    lr_cdf: float = 1e-3
    tau: float = 1e-3
    m_r: int = 20
    m_f: int = 5
    batch: int = 500
    iters: int = 3000
    sched_factor: float = 0.99
    sched_every: int = 20
    weight_decay: float = 0.01
    seed: int = 0
    score: ScoreSettings = field(default_factory=ScoreSettings)
    network: NetworkSettings = field(default_factory=NetworkSettings)
    sweep: str = "joint"
    theta_max: float = 1e8
    checkpoint_every: int = 0
    output_dir: str | None = None
    progress: bool = False

    def __post_init__(self):
        if not (0.0 < self.tau < 1.0):
            raise ValueError(f"tau must lie in (0, 1), got {self.tau}")
        if self.m_r < 1 or self.m_f < 1:
            raise ValueError("m_r and m_f must be at least 1")
        for name in ("lr_actor", "lr_critic", "lr_cdf"):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"{name} must be positive")
        if self.batch < 2:
            raise ValueError("batch must hold at least 2 paths")
        if self.iters < 0:
            raise ValueError("iters must be nonnegative")
        if self.sweep not in ("joint", "backward"):
            raise ValueError(f"sweep must be 'joint' or 'backward', got {self.sweep!r}")
        if not isinstance(self.budget, RiskBudget):
            self.budget = RiskBudget(self.budget)
        horizon = self.market.horizon
        if self.budget.horizon != horizon:
            raise ValueError(f"budget has {self.budget.horizon} rows, market has {horizon} decision times")
        if self.budget.b.shape[1] != self.market.n_assets:
            raise ValueError(f"budget has {self.budget.b.shape[1]} assets, market has {self.market.n_assets}")
        self.specs = _specs(self.spec, horizon)
        if horizon > 1:
            for t, s in enumerate(self.specs):
                if not 0.0 < s.p < 1.0:
                    raise ValueError(f"time {t}: the risk critic score needs 0 < p < 1, got {s.p}")

    @property
    def horizon(self) -> int:
        return self.market.horizon

    def describe(self) -> dict:
        out = {k: getattr(self, k) for k in ("lr_actor", "lr_critic", "lr_cdf", "tau", "m_r", "m_f", "batch", "iters",
                                             "sched_factor", "sched_every", "weight_decay", "seed", "sweep", "theta_max")}
        out["score"] = asdict(self.score)
        out["network"] = asdict(self.network)
        out["budget"] = self.budget.b.tolist()
        out["spec"] = [{"p": s.p, "alpha": s.alpha} for s in self.specs]
        out["market"] = self.market.describe()
        return out


# -- batches ----------------------------------------------------------------------------


@dataclass
class Batch:
    prices: np.ndarray  # (B, T+2, n)
    theta: np.ndarray  # (B, T+1, n)
    states: np.ndarray  # (B, T+1, n+2)
    risk_next: np.ndarray  # (B, T+1): target-critic R_{t+1}, zero at the last time
    coef: np.ndarray  # (B, T+1, n): dX_t + X_{t+1} / (theta_{t+1} . X_{t+1}) * R_{t+1}
    loss: np.ndarray  # (B, T+1): g_t = theta_t . coef_t


def rollout(actor: NetParams, prices: np.ndarray):
    """Run the actor causally along price paths.

    The state at time t is (t, relative wealth, X_t) where the wealth is that
    of the induced self-financing strategy relative to its initial value.
    Returns (theta, states).
    """
    B, steps, n = prices.shape
    horizon = steps - 1
    stepper = ActorStepper(actor, B)
    theta = np.empty((B, horizon, n))
    states = np.empty((B, horizon, n + 2))
    held = w0 = None
    for t in range(horizon):
        x = prices[:, t]
        states[:, t, 0] = t
        states[:, t, 1] = 1.0 if t == 0 else np.sum(held * x, axis=-1) / w0
        states[:, t, 2:] = x
        th = stepper(states[:, t])
        theta[:, t] = th
        if t == 0:
            held, w0 = th, np.sum(th * x, axis=-1)
        else:
            held = th * (np.sum(held * x, axis=-1) / np.sum(th * x, axis=-1))[:, None]
    return theta, states


def loss_terms(prices: np.ndarray, theta: np.ndarray, risk_next: np.ndarray):
    """Per-path coefficients and losses g_t given R_{t+1} (zero at the last time)."""
    coef = -(prices[:, 1:] - prices[:, :-1])
    if theta.shape[1] > 1:
        value_next = np.sum(theta[:, 1:] * prices[:, 1:-1], axis=-1)
        coef[:, :-1] += prices[:, 1:-1] / value_next[..., None] * risk_next[:, :-1, None]
    return coef, np.sum(theta * coef, axis=-1)


def simulate_batch(cfg: TrainConfig, actor: NetParams, critic_target: NetParams, rng: np.random.Generator) -> Batch:
    """Fresh paths, the actor's strategy along them and target-critic risk-to-go."""
    prices = cfg.market.draw(rng, cfg.batch)
    theta, states = rollout(actor, prices)
    risk_next = np.zeros(theta.shape[:2])
    if cfg.horizon > 1:
        risk = risk_critic_forward(critic_target, states)[2].data
        risk_next[:, :-1] = risk[:, 1:]
    coef, loss = loss_terms(prices, theta, risk_next)
    return Batch(prices, theta, states, risk_next, coef, loss)


# -- scores as differentiable expressions -----------------------------------------------


def score_rho_tensor(var, es, rho, y: np.ndarray, alpha, p, D: float):
    """Triple score without the y-only term; returns (score, clamped mask).

    ES candidates with es + D below a small floor are clamped; the clamped
    entries still receive gradient through the quadratic term.
    """
    floor = 1e-6 * D
    clamped = es.data + D <= floor
    shift = ad.clip_min(es + D, floor)
    below = (y <= var.data).astype(float)
    tail = var * (below - alpha) + (1.0 - below) * y
    quad = (rho - es * p) * (1.0 / (1.0 - p)) - y
    out = ad.log(shift) + D / shift - 1.0 + tail / (shift * (1.0 - alpha)) + ad.square(quad)
    return out, clamped


def _negative_part(x):
    return -ad.clip_min(-x, 0.0)


def cdf_score_tensor(net: NetParams, states, y: np.ndarray, grid: np.ndarray, penalty_weight: float,
                     z_samples: int | None, rng: np.random.Generator | None, params=None):
    """Grid CRPS plus monotonicity penalty per (path, time).

    With ``z_samples`` set, each loss is scored on that many random grid
    points (and their right neighbours for the slope), reweighted so the
    estimate is unbiased for the full-grid sum.
    """
    L = grid.size
    dz = grid[1] - grid[0]
    if z_samples is None or 2 * z_samples >= L:
        z = np.broadcast_to(grid, y.shape + (L,))
        F = cdf_critic_forward(net, states, z, params=params)
        step = (grid >= y[..., None]).astype(float)
        crps = ad.tsum(ad.square(F - step), axis=-1) * dz
        slope = (F[..., 1:] - F[..., :-1]) * (1.0 / dz)
        pen = ad.tsum(ad.square(_negative_part(slope)), axis=-1) * (dz * penalty_weight)
        return crps + pen
    m = z_samples
    idx = rng.integers(0, L, size=y.shape + (m,))
    right = np.minimum(idx + 1, L - 1)
    z = np.concatenate([grid[idx], grid[right]], axis=-1)
    F = cdf_critic_forward(net, states, z, params=params)
    left_f, right_f = F[..., :m], F[..., m:]
    step = (grid[idx] >= y[..., None]).astype(float)
    weight = L / m
    crps = ad.tsum(ad.square(left_f - step), axis=-1) * (dz * weight)
    slope = (right_f - left_f) * ((idx < L - 1) / dz)
    pen = ad.tsum(ad.square(_negative_part(slope)), axis=-1) * (dz * penalty_weight * weight)
    return crps + pen


# -- training state -----------------------------------------------------------------------


@dataclass
class DiagnosticsRow:
    iter: int
    t: int
    asset: int
    rc: float
    rc_std: float
    risk_to_go: float
    risk_to_go_std: float
    score_rho: float
    score_cdf: float
    lr: float


@dataclass
class TrainResult:
    actor: NetParams
    critic: NetParams
    critic_target: NetParams
    cdf: NetParams
    diagnostics: list
    score_D: float
    clamped_fraction: float
    seconds: float


class Trainer:
    """Holds networks, optimizers and telemetry for one training run."""

    def __init__(self, cfg: TrainConfig):
        self.cfg = cfg
        self.specs = cfg.specs
        self.alpha = np.array([s.alpha for s in self.specs])
        self.p = np.array([s.p for s in self.specs])
        self.needs_cdf = not all(s.is_mean for s in self.specs)
        init_seq, market_seq, score_seq = np.random.SeedSequence(cfg.seed).spawn(3)
        self.rng = np.random.default_rng(market_seq)
        self.rng_score = np.random.default_rng(score_seq)
        self._build(np.random.default_rng(init_seq))
        self.opt_actor = AdamW(self.actor.n_params, lr=cfg.lr_actor, weight_decay=cfg.weight_decay)
        self.opt_critic = AdamW(self.critic.n_params, lr=cfg.lr_critic, weight_decay=cfg.weight_decay)
        self.opt_cdf = AdamW(self.cdf.n_params, lr=cfg.lr_cdf, weight_decay=cfg.weight_decay)
        self.scheduler = StepScheduler([self.opt_actor, self.opt_critic, self.opt_cdf], cfg.sched_factor, cfg.sched_every)
        self.iteration = 0
        self.clamped = 0
        self.scored = 0
        self.diagnostics: list = []
        self.last_score_rho = np.full(cfg.horizon, np.nan)
        self.last_score_cdf = np.full(cfg.horizon, np.nan)

    # -- construction ---------------------------------------------------------------

    def _build(self, rng: np.random.Generator):
        cfg, net = self.cfg, self.cfg.network
        n, horizon = cfg.market.n_assets, cfg.horizon
        prices = cfg.market.draw(rng, cfg.batch)
        if net.output_scale is None:
            scale = self._auto_output_scale(prices)
        else:
            scale = np.broadcast_to(np.asarray(net.output_scale, dtype=float), (n,)).copy()
        common = dict(gru_layers=net.gru_layers, gru_hidden=net.gru_hidden or n,
                      ffn_layers=net.ffn_layers, ffn_width=net.ffn_width, eps=net.eps)
        self.actor = NetParams(n + 2, n, "softplus-positive", output_scale=scale, **common).init(rng, net.head_gain)
        _, states = rollout(self.actor, prices)
        shift = states.reshape(-1, n + 2).mean(axis=0)
        spread = states.reshape(-1, n + 2).std(axis=0)
        spread = np.where(spread > 1e-8, spread, 1.0)
        shift[0], spread[0] = 0.5 * (horizon - 1), max(0.5 * (horizon - 1), 1.0)
        self.actor.input_shift, self.actor.input_scale = shift, spread
        norm = dict(input_shift=shift, input_scale=spread)
        self.critic = NetParams(n + 2, 3, "risk-triple", **common, **norm).init(rng)
        self.critic_target = self.critic.copy()
        self.cdf = NetParams(n + 2, 1, "sigmoid-unit", z_dim=1, **common, **norm).init(rng)
        if cfg.score.D is None:
            first = simulate_batch(cfg, self.actor, self.critic_target, rng)
            self.D = default_score_config(first.loss, D_factor=cfg.score.D_factor).D
        else:
            self.D = float(cfg.score.D)
        if not self.D > 0.0:
            raise ValueError("score offset D must be positive")

    def _auto_output_scale(self, prices: np.ndarray) -> np.ndarray:
        """Per-asset softplus scale so the initial holdings carry risk of order b_i.

        The one-step risk of one share of each asset is estimated from the
        batch; risk-to-go roughly halves the holdings per step back from the
        last decision, so the geometric middle of that range is used.
        """
        cfg = self.cfg
        dx = -(prices[:, 1:] - prices[:, :-1])
        n = dx.shape[-1]
        flat = dx.reshape(-1, n).T
        probs = np.full(flat.shape, 1.0 / flat.shape[1])
        risk = distortion_batch(self.specs[0], flat, probs)
        fallback = flat.std(axis=1)
        risk = np.where(risk > 0.0, risk, np.where(fallback > 0.0, fallback, 1.0))
        return cfg.budget.b[0] / risk / math.log(2.0) * 2.0 ** (-0.5 * (cfg.horizon - 1))

    # -- updates ---------------------------------------------------------------------

    def simulate(self) -> Batch:
        return simulate_batch(self.cfg, self.actor, self.critic_target, self.rng)

    def critic_update(self, batch: Batch) -> np.ndarray:
        """One optimizer step on the mean triple score, then a soft update."""
        with ad.Tape() as tape:
            leaves = self.critic.leaves()
            var, es, rho = risk_critic_forward(self.critic, batch.states, params=leaves)
            score, clamped = score_rho_tensor(var, es, rho, batch.loss, self.alpha, self.p, self.D)
            per_time = ad.tmean(score, axis=0)
            total = ad.tsum(per_time)
        self._require_finite(total, "risk critic score")
        tape.backward(total)
        self.opt_critic.step(self.critic.values, self.critic.gradient(leaves))
        soft_update(self.critic_target.values, self.critic.values, self.cfg.tau)
        self.clamped += int(clamped.sum())
        self.scored += clamped.size
        if clamped.mean() > 0.01:
            warnings.warn(f"iteration {self.iteration}: {clamped.mean():.1%} of ES candidates clamped to the log domain",
                          RuntimeWarning, stacklevel=2)
        self.last_score_rho = per_time.data.copy()
        return self.last_score_rho

    def cdf_update(self, batch: Batch) -> np.ndarray:
        s = self.cfg.score
        grid = default_score_config(batch.loss, L=s.L, widen=s.widen).grid
        with ad.Tape() as tape:
            leaves = self.cdf.leaves()
            score = cdf_score_tensor(self.cdf, batch.states, batch.loss, grid, s.penalty_weight,
                                     s.z_samples, self.rng_score, params=leaves)
            per_time = ad.tmean(score, axis=0)
            total = ad.tsum(per_time)
        self._require_finite(total, "cdf score")
        tape.backward(total)
        self.opt_cdf.step(self.cdf.values, self.cdf.gradient(leaves))
        self.last_score_cdf = per_time.data.copy()
        return self.last_score_cdf

    def distortion_weights(self, batch: Batch) -> np.ndarray:
        """gamma_t(U_t) with U_t = F_t(g_t) from the main cdf critic, clamped to its range."""
        if not self.needs_cdf:
            return np.ones(batch.loss.shape)
        u = cdf_critic_forward(self.cdf, batch.states, batch.loss[..., None]).data[..., 0]
        gam = self.p / (1.0 - self.alpha) * (u >= self.alpha) + (1.0 - self.p)
        return np.clip(gam, 0.0, self.p / (1.0 - self.alpha) + (1.0 - self.p))

    def active_times(self) -> np.ndarray:
        """Mask of decision times whose term enters the actor surrogate."""
        horizon = self.cfg.horizon
        mask = np.ones(horizon)
        if self.cfg.sweep == "backward" and self.cfg.iters > 0:
            stage = min(self.iteration * horizon // self.cfg.iters, horizon - 1)
            mask[:] = 0.0
            mask[horizon - 1 - stage] = 1.0
        return mask

    def actor_update(self, batch: Batch) -> np.ndarray:
        """One policy-gradient step; returns gamma_t(U_t) used for the bracket."""
        gam = self.distortion_weights(batch)
        bracket = batch.coef * gam[..., None] - self.cfg.budget.b[None] / batch.theta
        bracket *= self.active_times()[None, :, None]
        with ad.Tape() as tape:
            leaves = self.actor.leaves()
            theta = actor_forward(self.actor, batch.states, params=leaves)
            total = ad.tsum(theta * bracket) * (1.0 / batch.theta.shape[0])
        self._require_finite(total, "actor surrogate")
        tape.backward(total)
        self.opt_actor.step(self.actor.values, self.actor.gradient(leaves))
        return gam

    def _require_finite(self, value: ad.Tensor, what: str):
        if not np.all(np.isfinite(value.data)):
            raise TrainingError(f"non-finite {what}", self.iteration)

    # -- diagnostics --------------------------------------------------------------------

    def diagnose(self, batch: Batch, gam: np.ndarray) -> list:
        """Risk contributions (path averages of the contribution integrand) and risk-to-go."""
        B = batch.theta.shape[0]
        rc_paths = batch.theta * batch.coef * gam[..., None]
        rc = rc_paths.mean(axis=0)
        rc_se = rc_paths.std(axis=0, ddof=1) / math.sqrt(B)
        if self.cfg.horizon > 1:
            risk = risk_critic_forward(self.critic, batch.states)[2].data
            r_mean, r_std = risk.mean(axis=0), risk.std(axis=0, ddof=1)
        else:
            probs = np.full((1, B), 1.0 / B)
            r_mean = distortion_batch(self.specs[0], batch.loss[:, 0][None], probs)
            r_std = np.zeros(1)
        lr = self.opt_actor.lr
        rows = []
        for t in range(self.cfg.horizon):
            for i in range(batch.theta.shape[2]):
                rows.append(DiagnosticsRow(self.iteration, t, i, float(rc[t, i]), float(rc_se[t, i]),
                                           float(r_mean[t]), float(r_std[t]), float(self.last_score_rho[t]),
                                           float(self.last_score_cdf[t]), lr))
        return rows

    # -- main loop -------------------------------------------------------------------------

    def nets(self) -> dict:
        return {"actor": self.actor, "critic": self.critic, "critic_target": self.critic_target, "cdf": self.cdf}

    def save_checkpoint(self, path) -> None:
        checkpoint.save(path, self.nets(), iteration=self.iteration, seed=self.cfg.seed,
                        score_D=self.D, config=self.cfg.describe())

    def step(self) -> list:
        """One outer iteration; returns its diagnostics rows."""
        cfg = self.cfg
        if cfg.horizon > 1:
            for _ in range(cfg.m_r):
                self.critic_update(self.simulate())
        if self.needs_cdf:
            for _ in range(cfg.m_f):
                self.cdf_update(self.simulate())
        batch = self.simulate()
        if np.max(batch.theta) > cfg.theta_max:
            raise DivergenceError(f"holdings exceed {cfg.theta_max:g}", self.iteration)
        gam = self.actor_update(batch)
        if not np.all(np.isfinite(self.actor.values)):
            raise TrainingError("non-finite actor parameters", self.iteration)
        rows = self.diagnose(batch, gam)
        self.scheduler.tick()
        return rows

    def train(self, on_iteration=None) -> TrainResult:
        cfg = self.cfg
        out_dir = Path(cfg.output_dir) if cfg.output_dir else None
        start = time.perf_counter()
        while self.iteration < cfg.iters:
            try:
                rows = self.step()
            except TrainingError:
                self._emergency_checkpoint(out_dir)
                raise
            except (FloatingPointError, mkt.SimulationError, AssertionError) as exc:
                self._emergency_checkpoint(out_dir)
                raise TrainingError(str(exc), self.iteration) from exc
            self.diagnostics.extend(rows)
            if cfg.progress:
                print(progress_line(rows, cfg.budget, time.perf_counter() - start), flush=True)
            if on_iteration is not None:
                on_iteration(self, rows)
            self.iteration += 1
            if out_dir is not None and cfg.checkpoint_every and self.iteration % cfg.checkpoint_every == 0:
                self.save_checkpoint(out_dir / "checkpoint.bin")
        return TrainResult(self.actor, self.critic, self.critic_target, self.cdf, self.diagnostics, self.D,
                           self.clamped / max(self.scored, 1), time.perf_counter() - start)

    def _emergency_checkpoint(self, out_dir):
        if out_dir is not None:
            out_dir.mkdir(parents=True, exist_ok=True)
            self.save_checkpoint(out_dir / "checkpoint_failed.bin")


def progress_line(rows: list, budget: RiskBudget, seconds: float) -> str:
    it = rows[0].iter
    risk = {}
    worst = 0.0
    for r in rows:
        risk[r.t] = r.risk_to_go
        worst = max(worst, abs(r.rc - budget.b[r.t, r.asset]))
    rtg = " ".join(f"{risk[t]:.3f}" for t in sorted(risk))
    return f"iter {it + 1} risk_to_go [{rtg}] max|rc-b| {worst:.4f} lr {rows[0].lr:.3g} {seconds:.0f}s"


def train(cfg: TrainConfig, on_iteration=None) -> TrainResult:
    """Run the full actor-critic loop for ``cfg.iters`` outer iterations."""
    return Trainer(cfg).train(on_iteration)


# -- outputs ---------------------------------------------------------------------------


def write_diagnostics_csv(path, rows) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".partial")
    with open(tmp, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(DIAGNOSTIC_COLUMNS)
        for r in rows:
            out.writerow([r.iter, r.t, r.asset, repr(r.rc), repr(r.rc_std), repr(r.risk_to_go), repr(r.risk_to_go_std),
                          repr(r.score_rho), repr(r.score_cdf), repr(r.lr)])
    os.replace(tmp, path)


def read_diagnostics_csv(path) -> list:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(DIAGNOSTIC_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"diagnostics file lacks columns {sorted(missing)}")
        return [DiagnosticsRow(int(r["iter"]), int(r["t"]), int(r["asset"]), *(float(r[c]) for c in DIAGNOSTIC_COLUMNS[3:]))
                for r in reader]


def normalize_strategy(theta, prices) -> np.ndarray:
    """Induced self-financing strategy scaled to initial wealth one on every path."""
    theta = np.asarray(theta, dtype=float)
    if np.any(~(theta > 0.0)):
        raise ValueError("normalization needs strictly positive holdings")
    held = induce_self_financing(theta, prices)
    w0 = np.sum(held[:, 0] * np.asarray(prices)[:, 0], axis=-1)
    return held / w0[:, None, None]


def strategy_on_tree(actor: NetParams, tree: ScenarioTree, atol: float = 1e-10) -> list:
    """Per-layer holdings of a trained actor on every node of a tree."""
    theta, _ = rollout(actor, tree.scenario_prices())
    return tree.from_scenarios(theta, atol=atol)


def moving_average(values, window: int) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    if window < 1 or values.size < window:
        raise ValueError(f"need at least {window} values for the moving average")
    csum = np.cumsum(np.concatenate([[0.0], values]))
    return (csum[window:] - csum[:-window]) / window
