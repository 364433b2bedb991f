"""Finite scenario trees with explicit branch probabilities.

A tree with ``depth`` branching levels has time layers 0..depth. Nodes on
layer t are numbered 0..N_t-1 and node j on layer t has children
``j * K_t + k`` for k in range(K_t). Branching is uniform within a layer,
which keeps every conditional expectation a reshape and a weighted sum.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAX_PATHS = 10**6


class TreeError(ValueError):
    pass


@dataclass(frozen=True)
class ScenarioTree:
    prices: tuple  # layer t -> (N_t, n) array
    probs: tuple  # layer t < depth -> (N_t, K_t) array

    def __post_init__(self):
        prices = tuple(np.asarray(x, dtype=float) for x in self.prices)
        probs = tuple(np.asarray(q, dtype=float) for q in self.probs)
        object.__setattr__(self, "prices", prices)
        object.__setattr__(self, "probs", probs)
        if len(prices) != len(probs) + 1 or not probs:
            raise TreeError("need one price layer more than probability layers, depth >= 1")
        n_assets = prices[0].shape[1]
        if prices[0].shape[0] != 1:
            raise TreeError("layer 0 must hold exactly one root node")
        if int(np.prod([q.shape[1] for q in probs])) > MAX_PATHS:
            raise TreeError(f"tree has more than {MAX_PATHS} paths")
        for t, q in enumerate(probs):
            n_nodes, k = q.shape
            if n_nodes != prices[t].shape[0]:
                raise TreeError(f"layer {t}: {prices[t].shape[0]} nodes but {n_nodes} probability rows")
            if k < 2:
                raise TreeError(f"layer {t}: every non-terminal node needs at least 2 branches")
            if prices[t + 1].shape != (n_nodes * k, n_assets):
                raise TreeError(f"layer {t + 1}: expected price shape {(n_nodes * k, n_assets)}")
            bad = np.argwhere(~(q > 0.0))
            if bad.size:
                j, b = bad[0]
                raise TreeError(f"nonpositive probability at node {self.node_path(t, j)} branch {b}")
            off = np.abs(q.sum(axis=1) - 1.0)
            if off.max() > 1e-12:
                j = int(off.argmax())
                raise TreeError(f"probabilities at node {self.node_path(t, j)} sum to {q[j].sum()!r}")
        for t, x in enumerate(prices):
            bad = np.argwhere(~(x > 0.0))
            if bad.size:
                j, i = bad[0]
                raise TreeError(f"nonpositive price for asset {i} at node {self.node_path(t, j)}")

    # -- shape helpers --------------------------------------------------------

    @property
    def depth(self) -> int:
        return len(self.probs)

    @property
    def n_assets(self) -> int:
        return self.prices[0].shape[1]

    @property
    def branching(self) -> tuple:
        return tuple(q.shape[1] for q in self.probs)

    def layer_size(self, t: int) -> int:
        return self.prices[t].shape[0]

    @property
    def n_nodes(self) -> int:
        return sum(x.shape[0] for x in self.prices)

    @property
    def n_paths(self) -> int:
        return self.prices[-1].shape[0]

    def node_id(self, t: int, j: int) -> int:
        """Global node number of node ``j`` on layer ``t`` (root is 0)."""
        return sum(self.layer_size(s) for s in range(t)) + int(j)

    def node_path(self, t: int, j: int) -> tuple:
        """Branch choices leading from the root to node ``j`` on layer ``t``."""
        path = []
        for s in reversed(range(t)):
            k = self.probs[s].shape[1]
            path.append(int(j % k))
            j //= k
        return tuple(reversed(path))

    def node_from_path(self, path) -> tuple:
        j = 0
        for s, b in enumerate(path):
            j = j * self.probs[s].shape[1] + int(b)
        return len(path), j

    # -- conditional expectations ----------------------------------------------

    def children(self, t: int, values):
        """View a layer-(t+1) array as (N_t, K_t, ...)."""
        values = np.asarray(values)
        return values.reshape((self.layer_size(t), self.probs[t].shape[1]) + values.shape[1:])

    def expect(self, t: int, values):
        """E[values | layer t] for an array defined on layer t+1."""
        kids = self.children(t, values)
        q = self.probs[t].reshape(self.probs[t].shape + (1,) * (kids.ndim - 2))
        return np.sum(q * kids, axis=1)

    def expand(self, t: int, values, to: int):
        """Repeat a layer-t node function down to layer ``to`` >= t."""
        values = np.asarray(values)
        reps = int(np.prod(self.branching[t:to])) if to > t else 1
        return np.repeat(values, reps, axis=0)

    def parent_values(self, t: int, values):
        """Copy a layer-t array onto each of its children on layer t+1."""
        return np.repeat(np.asarray(values), self.probs[t].shape[1], axis=0)

    def path_probs(self) -> np.ndarray:
        """Probability of every leaf scenario."""
        prob = np.ones(1)
        for q in self.probs:
            prob = (prob[:, None] * q).ravel()
        return prob

    def layer_probs(self, t: int) -> np.ndarray:
        """Unconditional probability of every node on layer t."""
        prob = np.ones(1)
        for q in self.probs[:t]:
            prob = (prob[:, None] * q).ravel()
        return prob

    def scenario_prices(self) -> np.ndarray:
        """Prices along every leaf scenario: (paths, depth + 1, n)."""
        return np.stack([self.expand(t, x, self.depth) for t, x in enumerate(self.prices)], axis=1)

    def to_scenarios(self, layers) -> np.ndarray:
        """Stack per-layer node arrays into a (paths, len(layers), ...) tensor."""
        return np.stack([self.expand(t, np.asarray(v), self.depth) for t, v in enumerate(layers)], axis=1)

    def from_scenarios(self, tensor, atol: float = 0.0) -> list:
        """Inverse of :meth:`to_scenarios`; rejects non-adapted input."""
        tensor = np.asarray(tensor)
        layers = []
        for t in range(tensor.shape[1]):
            reps = int(np.prod(self.branching[t:]))
            block = tensor[:, t].reshape((self.layer_size(t), reps) + tensor.shape[2:])
            if np.max(np.abs(block - block[:, :1]), initial=0.0) > atol:
                raise TreeError(f"values at time {t} are not constant on node sub-trees")
            layers.append(block[:, 0].copy())
        return layers

    # -- serialization ----------------------------------------------------------

    def to_json(self) -> dict:
        levels = []
        for t, x in enumerate(self.prices):
            nodes = []
            for j in range(x.shape[0]):
                node = {"prices": x[j].tolist(), "prob": float(self._node_prob(t, j))}
                if t < self.depth:
                    k = self.probs[t].shape[1]
                    node["children"] = list(range(j * k, (j + 1) * k))
                else:
                    node["children"] = []
                nodes.append(node)
            levels.append({"nodes": nodes})
        return {"levels": levels}

    def _node_prob(self, t, j):
        # probability of reaching this node from its parent; 1 at the root
        if t == 0:
            return 1.0
        k = self.probs[t - 1].shape[1]
        return self.probs[t - 1][j // k, j % k]

    @classmethod
    def from_json(cls, doc: dict) -> "ScenarioTree":
        levels = doc["levels"]
        prices = [np.array([node["prices"] for node in lv["nodes"]], dtype=float) for lv in levels]
        probs = []
        for t, lv in enumerate(levels[:-1]):
            nxt = levels[t + 1]["nodes"]
            counts = {len(node["children"]) for node in lv["nodes"]}
            if len(counts) != 1:
                raise TreeError(f"layer {t}: branching must be uniform within a layer")
            k = counts.pop()
            rows = []
            for j, node in enumerate(lv["nodes"]):
                if node["children"] != list(range(j * k, (j + 1) * k)):
                    raise TreeError(f"layer {t} node {j}: children must be listed in canonical order")
                rows.append([nxt[c]["prob"] for c in node["children"]])
            probs.append(np.array(rows, dtype=float))
        return cls(tuple(prices), tuple(probs))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json()))

    @classmethod
    def load(cls, path) -> "ScenarioTree":
        return cls.from_json(json.loads(Path(path).read_text()))


def tree_from_tables(prices, probs) -> ScenarioTree:
    """Tree from explicit per-layer price and branch-probability tables."""
    return ScenarioTree(tuple(prices), tuple(probs))


def build_tree(
    depth: int,
    branching,
    n_assets: int = 2,
    seed: int = 0,
    mu=0.0,
    sigma=0.1,
    corr=None,
    x0=1.0,
    prob_model: str = "uniform",
    center: bool = False,
) -> ScenarioTree:
    """Random tree with i.i.d. multiplicative lognormal branch returns.

    ``prob_model`` is ``"uniform"`` for equal branch probabilities or
    ``"dirichlet"`` for random unequal ones (exercises unequal atom masses).
    """
    if np.isscalar(branching):
        branching = (int(branching),) * depth
    branching = tuple(int(k) for k in branching)
    if len(branching) != depth:
        raise TreeError(f"branching has {len(branching)} entries for depth {depth}")
    if int(np.prod(branching)) > MAX_PATHS:
        raise TreeError(f"tree has more than {MAX_PATHS} paths")
    rng = np.random.default_rng(seed)
    mu = np.broadcast_to(np.asarray(mu, dtype=float), (n_assets,))
    sigma = np.broadcast_to(np.asarray(sigma, dtype=float), (n_assets,))
    chol = np.linalg.cholesky(np.eye(n_assets) if corr is None else np.asarray(corr, dtype=float))

    prices = [np.broadcast_to(np.asarray(x0, dtype=float), (n_assets,)).reshape(1, n_assets).copy()]
    probs = []
    for k in branching:
        parent = prices[-1]
        n_nodes = parent.shape[0]
        if prob_model == "uniform":
            q = np.full((n_nodes, k), 1.0 / k)
        elif prob_model == "dirichlet":
            q = rng.dirichlet(np.full(k, 2.0), size=n_nodes)
            q[:, -1] = 1.0 - q[:, :-1].sum(axis=1)
        else:
            raise TreeError(f"unknown prob_model {prob_model!r}")
        z = rng.standard_normal((n_nodes * k, n_assets)) @ chol.T
        growth = np.exp(mu - 0.5 * sigma**2 + sigma * z).reshape(n_nodes, k, n_assets)
        if center:
            growth *= np.exp(mu) / np.einsum("jk,jkn->jn", q, growth)[:, None, :]
        prices.append(np.repeat(parent, k, axis=0) * growth.reshape(n_nodes * k, n_assets))
        probs.append(q)
    return ScenarioTree(tuple(prices), tuple(probs))


def negative_increments(tree: ScenarioTree) -> list:
    """Per-branch loss increments -(X_{t+1} - X_t), shaped (N_t, K_t, n) per layer."""
    out = []
    for t in range(tree.depth):
        parent = tree.prices[t][:, None, :]
        kids = tree.children(t, tree.prices[t + 1])
        out.append(-(kids - parent))
    return out
