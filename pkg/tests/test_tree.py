import json

import numpy as np
import pytest

from riskbudget.tree import ScenarioTree, TreeError, build_tree, negative_increments, tree_from_tables


def small_tree():
    prices = [np.array([[1.0, 1.0]]), np.array([[1.1, 0.9], [0.95, 1.05], [1.0, 1.2], [0.8, 1.0]])]
    probs = [np.array([[0.25, 0.25, 0.25, 0.25]])]
    return tree_from_tables(prices, probs)


def test_explicit_depth_one_tree():
    tree = small_tree()
    assert tree.depth == 1 and tree.n_nodes == 5 and tree.n_paths == 4


def test_node_count():
    assert build_tree(2, (3, 3), seed=0).n_nodes == 13


def test_deterministic_construction():
    a = build_tree(3, 4, n_assets=3, seed=11, prob_model="dirichlet")
    b = build_tree(3, 4, n_assets=3, seed=11, prob_model="dirichlet")
    for x, y in zip(a.prices + a.probs, b.prices + b.probs):
        assert np.array_equal(x, y)


def test_rejects_bad_inputs_with_node_path():
    prices = [np.array([[1.0]]), np.array([[1.0], [-1.0]])]
    with pytest.raises(TreeError, match=r"node \(1,\)"):
        ScenarioTree(tuple(prices), (np.array([[0.5, 0.5]]),))
    with pytest.raises(TreeError, match="sum"):
        ScenarioTree((np.array([[1.0]]), np.array([[1.0], [2.0]])), (np.array([[0.5, 0.6]]),))
    with pytest.raises(TreeError, match="2 branches"):
        ScenarioTree((np.array([[1.0]]), np.array([[1.0]])), (np.array([[1.0]]),))
    with pytest.raises(TreeError):
        build_tree(2, (1000, 1001))


def test_negative_increments():
    tree = small_tree()
    inc = negative_increments(tree)[0]
    assert inc[0, 0, 0] == pytest.approx(-0.1)
    flat = tree_from_tables([np.ones((1, 2)), np.ones((3, 2))], [np.full((1, 3), 1 / 3)])
    assert np.all(negative_increments(flat)[0] == 0.0)
    rnd = build_tree(3, (2, 3, 2), n_assets=2, seed=5)
    for t, d in enumerate(negative_increments(rnd)):
        rebuilt = rnd.prices[t][:, None, :] - d
        np.testing.assert_allclose(rebuilt.reshape(-1, 2), rnd.prices[t + 1], rtol=0, atol=1e-15)


def test_tower_property():
    tree = build_tree(3, (3, 2, 4), n_assets=2, seed=2, prob_model="dirichlet")
    leaf = tree.prices[-1][:, 0] ** 2
    val = leaf
    for t in reversed(range(tree.depth)):
        val = tree.expect(t, val)
    assert val[0] == pytest.approx(np.sum(tree.path_probs() * leaf), abs=1e-12)


def test_paths_and_adaptedness():
    tree = build_tree(2, (2, 3), seed=1)
    assert tree.node_from_path(tree.node_path(2, 4)) == (2, 4)
    layers = [np.arange(tree.layer_size(t), dtype=float) for t in range(3)]
    scen = tree.to_scenarios(layers)
    back = tree.from_scenarios(scen)
    for a, b in zip(layers, back):
        assert np.array_equal(a, b)
    scen[0, 1] += 1.0
    with pytest.raises(TreeError, match="not constant"):
        tree.from_scenarios(scen)


def test_json_round_trip(tmp_path):
    tree = build_tree(2, (2, 3), n_assets=2, seed=4, prob_model="dirichlet")
    path = tmp_path / "tree.json"
    tree.save(path)
    doc = json.loads(path.read_text())
    assert set(doc["levels"][1]["nodes"][0]) == {"prices", "prob", "children"}
    back = ScenarioTree.load(path)
    for x, y in zip(tree.prices + tree.probs, back.prices + back.probs):
        np.testing.assert_array_equal(x, y)
