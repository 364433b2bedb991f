import numpy as np
import pytest
from oracles import central_difference

from riskbudget import market
from riskbudget.nnet import autodiff as ad
from riskbudget.nnet import checkpoint
from riskbudget.portfolio import RiskBudget, induce_self_financing, relative_wealth, strategy_states
from riskbudget.risk import DistortionSpec
from riskbudget.scoring import ScoreConfig, monotonicity_penalty, score_cdf, score_rho
from riskbudget.trainer import (
    DivergenceError,
    HestonSource,
    NetworkSettings,
    SampleSource,
    TrainConfig,
    Trainer,
    TrainingError,
    TreeSource,
    cdf_score_tensor,
    loss_terms,
    moving_average,
    normalize_strategy,
    read_diagnostics_csv,
    rollout,
    score_rho_tensor,
    strategy_on_tree,
    write_diagnostics_csv,
)
from riskbudget.tree import build_tree

SMALL = NetworkSettings(gru_layers=2, ffn_layers=2, ffn_width=8)
SPEC = DistortionSpec(0.5, 0.75)


def small_market(horizon=2):
    p = market.reference_params()
    return HestonSource(market.MarketParams(mu=p.mu[:2], kappa=p.kappa[:2], theta_bar=p.theta_bar[:2], eta=p.eta[:2],
                                            corr=market.block_correlation(2, 0.3, -0.5), horizon_decisions=horizon))


def small_config(**kw):
    base = dict(market=small_market(), budget=RiskBudget.constant([1, 2], 2), spec=SPEC, batch=40, m_r=2, m_f=1,
                iters=3, network=SMALL)
    base.update(kw)
    return TrainConfig(**base)


def test_config_validation():
    with pytest.raises(ValueError, match="tau"):
        small_config(tau=1.0)
    with pytest.raises(ValueError, match="rows"):
        small_config(budget=RiskBudget.constant([1, 1], 3))
    with pytest.raises(ValueError, match="assets"):
        small_config(budget=RiskBudget.constant([1, 1, 1], 2))
    with pytest.raises(ValueError, match="0 < p < 1"):
        small_config(spec=DistortionSpec(1.0, 0.75))
    with pytest.raises(ValueError, match="sweep"):
        small_config(sweep="forward")
    assert small_config().describe()["market"]["kind"] == "heston"


def test_rollout_states_follow_self_financing_wealth():
    trainer = Trainer(small_config(market=small_market(4), budget=RiskBudget.constant([1, 1], 4)))
    prices = trainer.cfg.market.draw(np.random.default_rng(0), 30)
    theta, states = rollout(trainer.actor, prices)
    np.testing.assert_allclose(states, strategy_states(theta, prices), rtol=1e-13, atol=0)
    held = induce_self_financing(theta, prices)
    np.testing.assert_allclose(states[:, :, 1], relative_wealth(held, prices)[:, :4], rtol=1e-13)
    # the wealth moves only with prices: held_{t} . X_{t+1} equals held_{t+1} . X_{t+1}
    np.testing.assert_allclose(np.sum(held[:, :-1] * prices[:, 1:-1], axis=-1),
                               np.sum(held[:, 1:] * prices[:, 1:-1], axis=-1), rtol=1e-13)


def test_loss_terms_by_hand():
    rng = np.random.default_rng(1)
    prices = rng.uniform(0.8, 1.2, size=(5, 4, 2))
    theta = rng.uniform(0.5, 2.0, size=(5, 3, 2))
    risk_next = np.column_stack([rng.uniform(0.5, 1.5, size=(5, 2)), np.zeros(5)])
    coef, g = loss_terms(prices, theta, risk_next)
    for s in range(5):
        for t in range(3):
            dx = prices[s, t] - prices[s, t + 1]
            expect = theta[s, t] @ dx
            if t < 2:
                w = theta[s, t] @ prices[s, t + 1] / (theta[s, t + 1] @ prices[s, t + 1])
                expect += w * risk_next[s, t]
            assert g[s, t] == pytest.approx(expect, rel=1e-13)
    np.testing.assert_allclose(np.sum(theta * coef, axis=-1), g, rtol=1e-14)


def test_last_decision_batch_has_no_continuation():
    cfg = small_config(market=small_market(1), budget=RiskBudget.constant([1, 1], 1))
    batch = Trainer(cfg).simulate()
    assert np.all(batch.risk_next == 0.0)
    np.testing.assert_array_equal(batch.coef, -(batch.prices[:, 1:] - batch.prices[:, :-1]))


def test_score_rho_tensor_matches_scoring():
    rng = np.random.default_rng(2)
    y = rng.normal(size=(50, 3))
    var, es, rho = rng.normal(size=(3, 50, 3))
    es = var + np.abs(es)
    alpha, p, D = np.array([0.75, 0.9, 0.5]), np.array([0.5, 0.9, 0.2]), 6.0
    out, clamped = score_rho_tensor(ad.Tensor(var), ad.Tensor(es), ad.Tensor(rho), y, alpha, p, D)
    assert not clamped.any()
    for t in range(3):
        np.testing.assert_allclose(out.data[:, t], score_rho(var[:, t], es[:, t], rho[:, t], y[:, t], alpha[t], p[t], D,
                                                             full=False), rtol=1e-12)
    # gradients with respect to the ES and risk candidates
    leaves = [ad.Tensor(a, requires_grad=True) for a in (var, es, rho)]
    with ad.Tape() as tape:
        total = ad.tsum(score_rho_tensor(*leaves, y, alpha, p, D)[0])
    tape.backward(total)
    for k in (1, 2):
        arrays = [var, es.copy(), rho.copy()]
        flat = arrays[k].reshape(-1)

        def f():
            return float(score_rho_tensor(*(ad.Tensor(a) for a in arrays), y, alpha, p, D)[0].data.sum())

        idx = np.arange(0, flat.size, 7)
        fd = central_difference(f, flat, idx, 1e-4)
        np.testing.assert_allclose(leaves[k].grad.reshape(-1)[idx], fd, rtol=1e-6, atol=1e-7)


def test_score_rho_tensor_clamps_below_floor():
    y = np.zeros((2, 1))
    es = ad.Tensor(np.array([[-5.0], [0.0]]), requires_grad=True)
    with ad.Tape() as tape:
        out, clamped = score_rho_tensor(ad.Tensor(np.zeros((2, 1))), es, ad.Tensor(np.ones((2, 1))), y, 0.5, 0.5, 1.0)
        total = ad.tsum(out)
    tape.backward(total)
    assert clamped[:, 0].tolist() == [True, False]
    assert np.all(np.isfinite(out.data))
    # only the quadratic term moves a clamped candidate: d/d es of ((rho - p es)/(1-p) - y)^2
    assert es.grad[0, 0] == pytest.approx(2 * (1 - 0.5 * -5.0) / 0.5 * -0.5 / 0.5)


def test_cdf_score_tensor_full_grid_and_unbiased_subsample():
    trainer = Trainer(small_config())
    batch = trainer.simulate()
    cfg = ScoreConfig(z_lo=batch.loss.min() - 0.1, z_hi=batch.loss.max() + 0.1, L=16, penalty_weight=2.0)
    grid = cfg.grid
    full = cdf_score_tensor(trainer.cdf, batch.states, batch.loss, grid, 2.0, None, None).data
    from riskbudget.nnet import cdf_critic_forward
    F = cdf_critic_forward(trainer.cdf, batch.states, np.broadcast_to(grid, batch.loss.shape + (16,))).data
    direct = score_cdf(F, batch.loss, cfg) + monotonicity_penalty(F, cfg)
    np.testing.assert_allclose(full, direct, rtol=1e-12)
    rng = np.random.default_rng(0)
    draws = np.array([cdf_score_tensor(trainer.cdf, batch.states, batch.loss, grid, 2.0, 3, rng).data.mean()
                      for _ in range(400)])
    se = draws.std(ddof=1) / np.sqrt(draws.size)
    assert abs(draws.mean() - full.mean()) < 4 * se


def test_runs_are_bit_identical():
    a = Trainer(small_config())
    b = Trainer(small_config())
    np.testing.assert_array_equal(a.simulate().prices, b.simulate().prices)
    ra, rb = a.train(), b.train()
    np.testing.assert_array_equal(ra.actor.values, rb.actor.values)
    np.testing.assert_array_equal(ra.cdf.values, rb.cdf.values)
    assert ra.diagnostics == rb.diagnostics
    other = Trainer(small_config(seed=1))
    assert not np.array_equal(other.actor.values, a.actor.values)


def test_critic_step_soft_updates_target():
    trainer = Trainer(small_config(tau=0.25))
    before = trainer.critic_target.values.copy()
    trainer.critic_update(trainer.simulate())
    np.testing.assert_allclose(trainer.critic_target.values, 0.75 * before + 0.25 * trainer.critic.values, rtol=1e-14)


def test_mean_risk_static_optimum():
    # with p = 0 the risk is the mean loss, so theta* = b / E[dX]
    rng = np.random.default_rng(3)
    start = np.ones((4000, 1, 1))
    end = start * np.exp(rng.normal(-0.05, 0.1, size=(4000, 1, 1)))
    prices = np.concatenate([start, end], axis=1)
    cfg = TrainConfig(SampleSource(prices), RiskBudget([[1.0]]), DistortionSpec(0.0, 0.5), batch=500, iters=600,
                      lr_actor=1e-2, network=SMALL)
    result = Trainer(cfg).train()
    theta, _ = rollout(result.actor, prices[:1])
    target = 1.0 / np.mean(prices[:, 0] - prices[:, 1])
    assert theta[0, 0, 0] == pytest.approx(target, rel=0.02)


def test_divergence_writes_failure_checkpoint(tmp_path):
    cfg = small_config(theta_max=1e-9, output_dir=str(tmp_path))
    with pytest.raises(DivergenceError, match="iteration 0"):
        Trainer(cfg).train()
    nets, meta = checkpoint.load(tmp_path / "checkpoint_failed.bin")
    assert set(nets) == {"actor", "critic", "critic_target", "cdf"} and meta["iteration"] == 0
    assert issubclass(DivergenceError, TrainingError)


def test_normalize_strategy():
    rng = np.random.default_rng(4)
    prices = rng.uniform(0.8, 1.2, size=(6, 4, 2))
    theta = rng.uniform(0.5, 2.0, size=(6, 3, 2))
    out = normalize_strategy(theta, prices)
    np.testing.assert_allclose(np.sum(out[:, 0] * prices[:, 0], axis=-1), 1.0, rtol=1e-14)
    held = induce_self_financing(theta, prices)
    ratio = out / held
    np.testing.assert_allclose(ratio, ratio[:, :1, :1] * np.ones_like(ratio), rtol=1e-13)
    with pytest.raises(ValueError):
        normalize_strategy(-theta, prices)


def test_strategy_on_tree_is_adapted():
    tree = build_tree(2, (2, 3), n_assets=2, seed=1, center=True)
    cfg = small_config(market=TreeSource(tree), budget=RiskBudget.constant([1, 1], 2))
    trainer = Trainer(cfg)
    layers = strategy_on_tree(trainer.actor, tree)
    assert [layer.shape for layer in layers] == [(1, 2), (2, 2)]
    theta, _ = rollout(trainer.actor, tree.scenario_prices())
    np.testing.assert_array_equal(theta[:, 0], np.broadcast_to(layers[0], theta[:, 0].shape))


def test_backward_sweep_moves_one_time_per_stage():
    trainer = Trainer(small_config(sweep="backward", iters=4))
    masks = []
    for k in range(4):
        trainer.iteration = k
        masks.append(trainer.active_times().tolist())
    assert masks == [[0, 1], [0, 1], [1, 0], [1, 0]]


def test_diagnostics_round_trip(tmp_path):
    rows = Trainer(small_config(iters=2)).train().diagnostics
    assert len(rows) == 2 * 2 * 2
    write_diagnostics_csv(tmp_path / "d.csv", rows)
    assert read_diagnostics_csv(tmp_path / "d.csv") == rows
    np.testing.assert_allclose(moving_average([1, 2, 3, 4], 2), [1.5, 2.5, 3.5])
    with pytest.raises(ValueError):
        moving_average([1.0], 2)
