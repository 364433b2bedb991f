import numpy as np
import pytest

from riskbudget.checks import property_suite, random_case
from riskbudget.portfolio import (
    RiskBudget,
    StrategyTensor,
    induce_self_financing,
    induce_self_financing_tree,
    rc_decomposition,
    risk_contributions_tree,
    risk_to_go_mc,
    risk_to_go_tree,
    scale_strategy,
    strategy_states,
    weight_process,
    write_rc_csv,
)
from riskbudget.risk import DiscreteDistribution, DistortionSpec, distortion_exact
from riskbudget.tree import build_tree, tree_from_tables


def random_paths(rng, S=6, T1=4, n=3):
    prices = np.exp(np.cumsum(rng.normal(0, 0.1, size=(S, T1 + 1, n)), axis=1))
    theta = rng.uniform(0.5, 2.0, size=(S, T1, n))
    return theta, prices


def test_budget_and_strategy_validation():
    assert RiskBudget.constant([1, 2, 3], 4).b[2, 1] == pytest.approx(1 / 3)
    with pytest.raises(ValueError):
        RiskBudget([[0.5, 0.6]])
    with pytest.raises(ValueError):
        StrategyTensor(np.full((2, 2, 2), 0.1), floor=0.2)


def test_weight_process_examples():
    rng = np.random.default_rng(0)
    theta, prices = random_paths(rng)
    held = induce_self_financing(theta, prices)
    np.testing.assert_allclose(weight_process(held, prices), 1.0, rtol=1e-12)
    flat = np.ones((2, 3, 1))
    doubling = np.array([1.0, 2.0])[None, :, None] * np.ones((2, 2, 1))
    np.testing.assert_allclose(weight_process(doubling, flat), 0.5)
    a = rng.uniform(0.5, 2, size=(6, 1, 1))
    np.testing.assert_allclose(weight_process(theta * a, prices), weight_process(theta, prices), rtol=1e-14)


def test_induced_strategy_properties():
    rng = np.random.default_rng(1)
    theta, prices = random_paths(rng)
    held = induce_self_financing(theta, prices)
    change = np.sum((held[:, 1:] - held[:, :-1]) * prices[:, 1:-1], axis=-1)
    scale = np.sum(held[:, 1:] * prices[:, 1:-1], axis=-1)
    assert np.max(np.abs(change) / scale) < 1e-10
    one = theta[:, :, :1]
    held_one = induce_self_financing(one, prices[:, :, :1])
    np.testing.assert_allclose(held_one, np.repeat(held_one[:, :1], one.shape[1], axis=1), rtol=1e-12)
    np.testing.assert_allclose(induce_self_financing(held, prices), held, rtol=1e-12)


def test_states_carry_relative_wealth():
    rng = np.random.default_rng(2)
    theta, prices = random_paths(rng)
    states = strategy_states(theta, prices)
    held = induce_self_financing(theta, prices)
    w0 = np.sum(held[:, 0] * prices[:, 0], axis=-1)
    for t in range(1, theta.shape[1]):
        np.testing.assert_allclose(states[:, t, 1], np.sum(held[:, t - 1] * prices[:, t], axis=-1) / w0)
    assert np.all(states[:, 0, 1] == 1.0)


def test_mean_risk_on_martingale_tree_is_zero():
    tree = build_tree(3, 3, n_assets=2, seed=3, mu=0.0, center=True)
    theta = [np.random.default_rng(0).uniform(0.5, 2, size=(tree.layer_size(t), 2)) for t in range(3)]
    ev = risk_to_go_tree(tree, theta, DistortionSpec(0.0, 0.5))
    for r in ev.risk:
        assert np.max(np.abs(r)) < 1e-13


def test_depth_one_matches_distortion_exact():
    tree = build_tree(1, 5, n_assets=2, seed=4, prob_model="dirichlet")
    theta = [np.array([[1.5, 0.7]])]
    spec = DistortionSpec(0.4, 0.75)
    loss = -(tree.prices[1] - tree.prices[0]) @ theta[0][0]
    expected = distortion_exact(spec, DiscreteDistribution(loss, tree.probs[0][0]))
    assert risk_to_go_tree(tree, theta, spec).risk[0][0] == pytest.approx(expected, abs=1e-14)


def test_hand_nested_two_period_tree():
    # one asset, (2, 2) branching, equal probabilities, p = 1, alpha = 0.5: rho is the max branch loss
    x = [np.array([[10.0]]), np.array([[9.0], [12.0]]), np.array([[8.0], [9.5], [11.0], [13.0]])]
    tree = tree_from_tables(x, [np.full((1, 2), 0.5), np.full((2, 2), 0.5)])
    theta = [np.array([[1.0]]), np.array([[2.0], [1.0]])]
    spec = DistortionSpec(1.0, 0.5)
    # by hand: R_1 = max over children of theta_1 * (X_1 - X_2)
    r1 = [max(2.0 * (9 - 8), 2.0 * (9 - 9.5)), max(1.0 * (12 - 11), 1.0 * (12 - 13))]
    # g_0 = theta_0 (X_0 - X_1) + theta_0 X_1 / (theta_1 X_1) R_1
    g0 = [1.0 * (10 - 9) + 9 / (2 * 9) * r1[0], 1.0 * (10 - 12) + 12 / 12 * r1[1]]
    ev = risk_to_go_tree(tree, theta, spec)
    np.testing.assert_allclose(ev.risk[1], r1, rtol=0, atol=1e-14)
    assert ev.risk[0][0] == pytest.approx(max(g0), abs=1e-14)


def test_symmetric_assets_have_equal_contributions():
    # exchangeable pair: each branch appears with the two assets swapped
    x1 = [np.array([[1.0, 1.0]]), np.array([[1.1, 0.9], [0.9, 1.1]])]
    tree = tree_from_tables(x1, [np.full((1, 2), 0.5)])
    rc = risk_contributions_tree(tree, [np.array([[1.0, 1.0]])], DistortionSpec(0.5, 0.5))
    assert rc[0][0, 0] == pytest.approx(rc[0][0, 1], abs=1e-15)


def test_scaling_examples():
    tree, theta, specs = random_case(5)
    assert all(np.array_equal(a, b) for a, b in zip(scale_strategy(theta, 1.0), theta))
    with pytest.raises(ValueError):
        scale_strategy(theta, -1.0)
    t = tree.depth - 1
    ev = risk_to_go_tree(tree, theta, specs)
    factors = [1.0] * tree.depth
    factors[t] = 2.0
    ev2 = risk_to_go_tree(tree, scale_strategy(theta, factors), specs)
    np.testing.assert_allclose(ev2.risk[t], 2 * ev.risk[t], rtol=1e-12)


def test_decomposition_examples():
    tree, theta, specs = random_case(7)
    T = tree.depth - 1
    rc = risk_contributions_tree(tree, theta, specs)
    last = rc_decomposition(tree, theta, specs, T)
    assert last.shape[0] == 1
    np.testing.assert_allclose(last[0], rc[T], rtol=1e-12, atol=1e-14)


def test_mean_decomposition_matches_path_enumeration():
    tree = build_tree(3, (2, 3, 2), n_assets=2, seed=8, prob_model="dirichlet")
    rng = np.random.default_rng(8)
    theta = [rng.uniform(0.5, 2, size=(tree.layer_size(t), 2)) for t in range(3)]
    spec = DistortionSpec(0.0, 0.5)
    terms = rc_decomposition(tree, theta, spec, 0, i=1)
    # enumerate leaf paths: term k = E[theta_{0,1} X_{1,1} / V_1 * prod_{1<=r<k} w_r * theta_k . dX_k]
    paths = tree.scenario_prices()
    probs = tree.path_probs()
    th = tree.to_scenarios(theta)
    w = weight_process(th, paths)
    dx = -(paths[:, 1:] - paths[:, :-1])
    lead = th[:, 0, 1] * paths[:, 1, 1] / np.sum(th[:, 1] * paths[:, 1], axis=-1)
    expected = [np.sum(probs * th[:, 0, 1] * dx[:, 0, 1])]
    for k in range(1, 3):
        carry = np.prod(w[:, 1:k], axis=1)
        expected.append(np.sum(probs * lead * carry * np.sum(th[:, k] * dx[:, k], axis=-1)))
    np.testing.assert_allclose(terms[:, 0], expected, rtol=1e-12, atol=1e-14)


@pytest.mark.parametrize("seed", range(3))
def test_property_suite_on_random_trees(seed):
    tree, theta, specs = random_case(seed)
    for result in property_suite(tree, theta, specs, np.random.default_rng(seed)):
        assert result.passed, result.line()


def test_risk_to_go_mc_cases():
    rng = np.random.default_rng(9)
    theta, prices = random_paths(rng, S=40, T1=1, n=2)
    spec = DistortionSpec(0.5, 0.75)
    loss = -np.sum(theta[:, 0] * (prices[:, 1] - prices[:, 0]), axis=-1)
    mc = risk_to_go_mc(prices, theta, spec)
    assert mc[0, 0] == pytest.approx(distortion_exact(spec, DiscreteDistribution.equiprobable(loss)))
    theta2, prices2 = random_paths(rng, S=5, T1=3, n=2)
    with pytest.raises(ValueError, match="critic"):
        risk_to_go_mc(prices2, theta2, spec)
    out = risk_to_go_mc(prices2, theta2, spec, critic=lambda states: np.full(states.shape[:2], 0.25))
    assert np.all(out == 0.25)


def test_risk_to_go_mc_on_tree_paths_matches_exact():
    tree = build_tree(1, 4, n_assets=2, seed=10, prob_model="dirichlet")
    spec = DistortionSpec(0.5, 0.5)
    theta = [np.array([[1.0, 2.0]])]
    exact = risk_to_go_tree(tree, theta, spec).risk[0][0]
    rng = np.random.default_rng(0)
    idx = rng.choice(4, size=40_000, p=tree.probs[0][0])
    paths = tree.scenario_prices()[idx]
    est = risk_to_go_mc(paths, np.broadcast_to(theta[0], (idx.size, 1, 2)), spec)[0, 0]
    loss = -(tree.prices[1] - tree.prices[0]) @ theta[0][0]
    gam = DistortionSpec(0.5, 0.5).max_weight
    se = gam * np.sqrt(np.sum(tree.probs[0][0] * loss**2) / idx.size)
    assert abs(est - exact) < 3 * se


def test_rc_csv(tmp_path):
    tree, theta, specs = random_case(2)
    ev = risk_to_go_tree(tree, theta, specs)
    rc = risk_contributions_tree(tree, theta, specs, evaluated=ev)
    path = tmp_path / "rc.csv"
    write_rc_csv(path, tree, rc, ev.risk)
    lines = path.read_text().splitlines()
    assert lines[0] == "node,t,asset,rc,risk_to_go"
    assert len(lines) == 1 + sum(r.size for r in rc)


def test_prop_one_on_scenario_tensors_matches_tree():
    tree, theta, specs = random_case(4)
    held_tree = induce_self_financing_tree(tree, theta)
    held_tensor = induce_self_financing(tree.to_scenarios(theta), tree.scenario_prices())
    for a, b in zip(held_tree, tree.from_scenarios(held_tensor, atol=1e-12)):
        np.testing.assert_allclose(a, b, rtol=1e-13)
