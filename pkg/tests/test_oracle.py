import numpy as np
import pytest

from riskbudget.checks import oracle_suite
from riskbudget.oracle import (
    OracleError,
    gaussian_es_contributions,
    solve_static_saa,
    solve_tree_risk_budgeting,
    tie_nodes,
    write_strategy_csv,
)
from riskbudget.portfolio import RiskBudget, risk_to_go_tree
from riskbudget.risk import DistortionSpec, atom_weights_batch
from riskbudget.tree import build_tree, tree_from_tables

SPEC = DistortionSpec(0.5, 0.75)


def mc_contributions(losses, theta, spec):
    """Empirical Euler contributions on equiprobable draws."""
    g = losses @ theta
    probs = np.full((1, g.size), 1.0 / g.size)
    gam = atom_weights_batch(spec, g[None, :], probs)[0]
    return theta * (gam @ losses) / g.size


def test_exchangeable_tree_gives_equal_holdings():
    up = np.array([[1.1, 0.9], [0.9, 1.1], [1.02, 0.85], [0.85, 1.02]])
    tree = tree_from_tables([np.array([[1.0, 1.0]]), up], [np.full((1, 4), 0.25)])
    sol = solve_tree_risk_budgeting(tree, RiskBudget.constant([1, 1], 1), SPEC)
    assert sol.theta[0][0, 0] == pytest.approx(sol.theta[0][0, 1], rel=1e-10)
    assert sol.risk[0][0] == pytest.approx(1.0, abs=1e-10)


@pytest.mark.parametrize("row", [[1, 1, 1], [1, 2, 3]])
def test_tree_oracle_identities(row):
    tree = build_tree(2, (4, 3), n_assets=3, seed=5, mu=[-0.01, -0.005, 0.0], sigma=[0.1, 0.2, 0.3], center=True)
    for check in oracle_suite(tree, RiskBudget.constant(row, 2), SPEC, restarts=3):
        assert check.passed, check.line()


def test_budget_shape_mismatch():
    tree = build_tree(1, (3,), n_assets=2, seed=0, center=True)
    with pytest.raises(ValueError, match="budget shape"):
        solve_tree_risk_budgeting(tree, RiskBudget.constant([1, 1, 1], 1), SPEC)


def test_unbounded_node_is_reported():
    # asset 1 gains on every branch, so buying more of it always lowers the risk
    up = np.array([[1.1, 1.05], [0.9, 1.02], [1.0, 1.2]])
    tree = tree_from_tables([np.array([[1.0, 1.0]]), up], [np.full((1, 3), 1 / 3)])
    with pytest.raises(OracleError, match="node"):
        solve_tree_risk_budgeting(tree, RiskBudget.constant([1, 1], 1), SPEC)


def test_tie_nodes_lists_only_differing_nodes():
    tree = build_tree(2, (3, 3), n_assets=3, seed=2, mu=[-0.02, -0.01, -0.01], center=True)
    sol = solve_tree_risk_budgeting(tree, RiskBudget.constant([1, 1, 1], 2), SPEC)
    ev = risk_to_go_tree(tree, sol.theta, SPEC)
    for t, j in tie_nodes(tree, sol, SPEC):
        assert np.abs(ev.gamma[t][j] - sol.gamma[t][j]).max() > 1e-9


def test_static_full_allocation_and_budget():
    rng = np.random.default_rng(0)
    losses = rng.normal(-0.02, [0.1, 0.2, 0.3], size=(4000, 3))
    b = np.array([0.2, 0.3, 0.5])
    sol = solve_static_saa(losses, b, SPEC)
    assert sol.contributions.sum() == pytest.approx(sol.risk, abs=1e-12)
    assert sol.risk == pytest.approx(1.0, abs=1e-6)
    np.testing.assert_allclose(mc_contributions(losses, sol.theta, SPEC), sol.contributions, atol=1e-12)


def test_static_symmetric_sample():
    rng = np.random.default_rng(1)
    half = rng.standard_t(5, size=(1500, 2)) * 0.1 - 0.01
    losses = np.vstack([half, half[:, ::-1]])
    sol = solve_static_saa(losses, [0.5, 0.5], SPEC)
    assert sol.theta[0] == pytest.approx(sol.theta[1], rel=1e-8)
    # without the mirrored half the two holdings differ only by sampling noise
    loose = solve_static_saa(half, [0.5, 0.5], SPEC)
    assert loose.theta[0] == pytest.approx(loose.theta[1], rel=0.1)


def test_static_rejections():
    with pytest.raises(ValueError, match="summing to 1"):
        solve_static_saa(np.ones((5, 2)), [0.4, 0.4], SPEC)
    with pytest.raises(OracleError, match="constant"):
        solve_static_saa(np.column_stack([np.ones(5), np.arange(5.0)]), [0.5, 0.5], SPEC)


def test_gaussian_contributions_sum_and_exchangeability():
    mu = np.array([-0.01, 0.02, 0.0])
    sigma = np.array([[0.04, 0.01, 0.0], [0.01, 0.09, 0.02], [0.0, 0.02, 0.16]])
    theta = np.array([1.0, 2.0, 0.5])
    rc = gaussian_es_contributions(mu, sigma, theta, 0.8, 0.3)
    sd = np.sqrt(theta @ sigma @ theta)
    es = mu @ theta + sd * 0.27996190 / 0.2  # standard normal pdf at its 0.8 quantile
    assert rc.sum() == pytest.approx(0.3 * es + 0.7 * (mu @ theta), rel=1e-7)
    rc_eq = gaussian_es_contributions(np.zeros(4), np.eye(4), np.ones(4), 0.9, 0.5)
    np.testing.assert_allclose(rc_eq, rc_eq[0], rtol=1e-15)
    with pytest.raises(ValueError, match="positive definite"):
        gaussian_es_contributions(np.zeros(2), np.ones((2, 2)), np.ones(2), 0.9, 0.5)


def test_gaussian_contributions_against_ten_million_draws():
    rng = np.random.default_rng(7)
    mu = np.array([0.01, -0.02, 0.03])
    a = rng.normal(size=(3, 3)) * 0.2
    sigma = a @ a.T + 0.01 * np.eye(3)
    theta = np.array([0.7, 1.3, 1.0])
    spec = DistortionSpec(0.6, 0.9)
    chol = np.linalg.cholesky(sigma)
    draws = np.random.default_rng(12345)
    batches = np.array([mc_contributions(mu + draws.standard_normal((1_000_000, 3)) @ chol.T, theta, spec)
                        for _ in range(10)])
    se = batches.std(axis=0, ddof=1) / np.sqrt(10)
    exact = gaussian_es_contributions(mu, sigma, theta, 0.9, 0.6)
    assert np.all(np.abs(batches.mean(axis=0) - exact) < 3 * se)


def test_single_asset_gaussian_matches_scalar_risk():
    rc = gaussian_es_contributions([0.1], [[0.25]], [2.0], 0.75, 0.5)
    sample = 2.0 * (0.1 + 0.5 * np.random.default_rng(3).standard_normal(2_000_000))
    probs = np.full((1, sample.size), 1.0 / sample.size)
    gam = atom_weights_batch(SPEC, sample[None, :], probs)[0]
    contrib = gam * sample
    assert abs(contrib.mean() - rc[0]) < 3 * contrib.std() / np.sqrt(sample.size)


def test_saa_lands_on_gaussian_budget():
    rng = np.random.default_rng(11)
    mu = np.array([-0.01, -0.02, -0.03])
    sigma = np.array([[0.01, 0.004, 0.0], [0.004, 0.04, 0.01], [0.0, 0.01, 0.09]])
    chol = np.linalg.cholesky(sigma)
    b = np.array([0.5, 0.3, 0.2])
    ratios = []
    for _ in range(20):
        sol = solve_static_saa(mu + rng.standard_normal((2000, 3)) @ chol.T, b, SPEC)
        rc = gaussian_es_contributions(mu, sigma, sol.theta, 0.75, 0.5)
        ratios.append(rc / rc.sum())
    ratios = np.array(ratios)
    se = ratios.std(axis=0, ddof=1) / np.sqrt(len(ratios))
    assert np.all(np.abs(ratios.mean(axis=0) - b) < 3 * se)


def test_strategy_csv(tmp_path):
    theta = np.arange(12.0).reshape(2, 3, 2)
    write_strategy_csv(tmp_path / "s.csv", theta)
    rows = np.genfromtxt(tmp_path / "s.csv", delimiter=",", names=True)
    np.testing.assert_array_equal(rows["theta"], theta.ravel())
