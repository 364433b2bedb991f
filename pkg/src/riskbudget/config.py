"""JSON run configuration: schema validation and object builders.

A config is one JSON document with the sections ``market`` or ``tree``,
``risk``, ``budget``, ``network``, ``training``, ``scoring`` and ``output``
(plus ``gaussian`` for the closed-form oracle). Validation errors carry the
JSON pointer of the offending value.
"""

from __future__ import annotations

import json
from pathlib import Path

import jsonschema
import numpy as np

from . import market as mkt
from .portfolio import RiskBudget
from .risk import DistortionSpec
from .trainer import HestonSource, NetworkSettings, SampleSource, ScoreSettings, TrainConfig, TreeSource
from .tree import ScenarioTree, build_tree

_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_COUNT = {"type": "integer", "minimum": 1}
_VEC = {"type": "array", "items": _NUM, "minItems": 1}
_MATRIX = {"type": "array", "items": _VEC, "minItems": 1}
_SPEC = {
    "type": "object",
    "properties": {"p": {"type": "number", "minimum": 0, "maximum": 1},
                   "alpha": {"type": "number", "minimum": 0, "exclusiveMaximum": 1}},
    "required": ["p", "alpha"],
    "additionalProperties": False,
}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "properties": {
        "market": {
            "type": "object",
            "properties": {
                "preset": {"enum": ["reference"]},
                "assets": {"type": "array", "items": {"type": "integer", "minimum": 0, "maximum": 4}, "minItems": 1,
                           "uniqueItems": True},
                "mu": _VEC, "kappa": _VEC, "theta_bar": _VEC, "eta": _VEC, "v0": _VEC, "x0": _VEC,
                "corr": _MATRIX,
                "price_corr": {"type": "number", "minimum": -1, "maximum": 1},
                "leverage_corr": {"type": "number", "minimum": -1, "maximum": 1},
                "t_dof": {"type": "number", "minimum": 3},
                "dt": _POS,
                "substeps_per_decision": _COUNT,
                "horizon_decisions": _COUNT,
                "fixed_sample": _COUNT,
                "sample_seed": {"type": "integer", "minimum": 0},
            },
            "additionalProperties": False,
        },
        "tree": {
            "type": "object",
            "properties": {
                "file": {"type": "string"},
                "depth": _COUNT,
                "branching": {"oneOf": [_COUNT, {"type": "array", "items": _COUNT, "minItems": 1}]},
                "n_assets": _COUNT,
                "seed": {"type": "integer", "minimum": 0},
                "mu": {"oneOf": [_NUM, _VEC]},
                "sigma": {"oneOf": [_POS, _VEC]},
                "prob_model": {"enum": ["uniform", "dirichlet"]},
                "center": {"type": "boolean"},
            },
            "additionalProperties": False,
        },
        "risk": {"oneOf": [
            _SPEC,
            {"type": "object", "properties": {"per_time": {"type": "array", "items": _SPEC, "minItems": 1}},
             "required": ["per_time"], "additionalProperties": False},
        ]},
        "budget": {"oneOf": [
            {"type": "object", "properties": {"row": {"type": "array", "items": _POS, "minItems": 1}},
             "required": ["row"], "additionalProperties": False},
            {"type": "object", "properties": {"table": {"type": "array", "items": {"type": "array", "items": _POS},
                                                        "minItems": 1}},
             "required": ["table"], "additionalProperties": False},
        ]},
        "network": {
            "type": "object",
            "properties": {
                "gru_layers": _COUNT, "gru_hidden": _COUNT, "ffn_layers": _COUNT, "ffn_width": _COUNT,
                "eps": _POS, "head_gain": _POS, "output_scale": {"oneOf": [_POS, {"type": "array", "items": _POS}]},
            },
            "additionalProperties": False,
        },
        "training": {
            "type": "object",
            "properties": {
                "lr_actor": _POS, "lr_critic": _POS, "lr_cdf": _POS,
                "tau": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "m_r": _COUNT, "m_f": _COUNT, "batch": {"type": "integer", "minimum": 2},
                "iters": {"type": "integer", "minimum": 0},
                "sched_factor": _POS, "sched_every": {"type": "integer", "minimum": 0},
                "weight_decay": {"type": "number", "minimum": 0},
                "seed": {"type": "integer", "minimum": 0},
                "sweep": {"enum": ["joint", "backward"]},
                "theta_max": _POS,
            },
            "additionalProperties": False,
        },
        "scoring": {
            "type": "object",
            "properties": {
                "D": _POS, "D_factor": _POS, "L": {"type": "integer", "minimum": 2}, "widen": {"type": "number", "minimum": 0},
                "penalty_weight": {"type": "number", "minimum": 0},
                "z_samples": {"oneOf": [_COUNT, {"type": "null"}]},
            },
            "additionalProperties": False,
        },
        "output": {
            "type": "object",
            "properties": {"dir": {"type": "string"}, "checkpoint_every": {"type": "integer", "minimum": 0},
                           "progress": {"type": "boolean"}},
            "additionalProperties": False,
        },
        "gaussian": {
            "type": "object",
            "properties": {"mu": _VEC, "sigma": _MATRIX, "theta": {"type": "array", "items": _POS, "minItems": 1}},
            "required": ["mu", "sigma", "theta"],
            "additionalProperties": False,
        },
    },
    "not": {"required": ["market", "tree"]},
    "additionalProperties": False,
}


class ConfigError(ValueError):
    """Invalid configuration; ``pointer`` locates the offending value."""

    def __init__(self, message: str, pointer: str = ""):
        super().__init__(f"{pointer or '/'}: {message}")
        self.pointer = pointer


def _pointer(path) -> str:
    return "".join(f"/{p}" for p in path)


def validate(doc: dict) -> dict:
    errors = sorted(jsonschema.Draft202012Validator(SCHEMA).iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        first = errors[0]
        message = first.message
        if first.validator == "not" and not first.absolute_path:
            message = "give either a market or a tree section, not both"
        raise ConfigError(message, _pointer(first.absolute_path))
    return doc


def load(path) -> dict:
    try:
        doc = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except json.JSONDecodeError as err:
        raise ConfigError(f"not valid JSON ({err.msg} at line {err.lineno})") from None
    if not isinstance(doc, dict):
        raise ConfigError("the config must be a JSON object")
    doc = validate(doc)
    doc["_base"] = str(Path(path).resolve().parent)
    return doc


def _wrap(pointer: str, fn, *args, **kw):
    """Run a builder, re-raising value errors at the section's pointer."""
    try:
        return fn(*args, **kw)
    except (ValueError, KeyError) as err:
        if isinstance(err, ConfigError):
            raise
        raise ConfigError(str(err), pointer) from None


def market_params(doc: dict) -> mkt.MarketParams:
    sec = dict(doc.get("market") or {})
    if not sec and "tree" not in doc:
        sec = {"preset": "reference"}
    for key in ("fixed_sample", "sample_seed"):
        sec.pop(key, None)
    preset = sec.pop("preset", None)
    assets = sec.pop("assets", None)

    def build():
        if preset is None:
            missing = [k for k in ("mu", "kappa", "theta_bar", "eta") if k not in sec]
            if missing:
                raise ValueError(f"missing {', '.join(missing)} (or set preset)")
            return mkt.MarketParams.from_json(sec)
        base = mkt.reference_params()
        fields = {k: getattr(base, k) for k in ("mu", "kappa", "theta_bar", "eta", "v0", "x0", "corr")}
        if assets is not None:
            idx = np.asarray(assets)
            both = np.concatenate([idx, idx + base.n_assets])
            fields = {k: v[idx] for k, v in fields.items() if k != "corr"} | {"corr": base.corr[np.ix_(both, both)]}
        if "price_corr" in sec or "leverage_corr" in sec:
            n = len(fields["mu"])
            fields["corr"] = mkt.block_correlation(n, sec.pop("price_corr", 0.3), sec.pop("leverage_corr", -0.5))
        fields.update(sec)
        return base.replace(**fields)

    return _wrap("/market", build)


def is_reference_market(doc: dict) -> bool:
    """True when the market is the unmodified five-asset preset."""
    sec = doc.get("market") or {}
    return sec.get("preset") == "reference" and set(sec) <= {"preset", "fixed_sample", "sample_seed"}


def tree(doc: dict) -> ScenarioTree:
    sec = dict(doc["tree"])
    if "file" in sec:
        path = Path(sec["file"])
        if not path.is_absolute():
            path = Path(doc.get("_base", ".")) / path
        return _wrap("/tree/file", ScenarioTree.load, path)
    if "depth" not in sec or "branching" not in sec:
        raise ConfigError("a generated tree needs depth and branching", "/tree")
    return _wrap("/tree", build_tree, **sec)


def source(doc: dict):
    """Path source for training: tree leaves, a fixed market sample or fresh market paths."""
    if "tree" in doc:
        return TreeSource(tree(doc))
    params = market_params(doc)
    sec = doc.get("market") or {}
    if "fixed_sample" in sec:
        paths = mkt.sample_paths(params, sec["fixed_sample"], seed=sec.get("sample_seed", 0))
        return SampleSource(paths.prices)
    return HestonSource(params)


def horizon_and_assets(doc: dict) -> tuple[int, int]:
    if "tree" in doc:
        t = tree(doc)
        return t.depth, t.n_assets
    params = market_params(doc)
    return params.horizon_decisions, params.n_assets


def risk_spec(doc: dict, horizon: int):
    sec = doc.get("risk", {"p": 0.5, "alpha": 0.75})
    if "per_time" in sec:
        if len(sec["per_time"]) != horizon:
            raise ConfigError(f"{len(sec['per_time'])} entries for {horizon} decision times", "/risk/per_time")
        return [DistortionSpec(s["p"], s["alpha"]) for s in sec["per_time"]]
    return DistortionSpec(sec["p"], sec["alpha"])


def budget(doc: dict, horizon: int, n_assets: int) -> RiskBudget:
    # rows are rescaled to sum to one, so {"row": [1, 2]} means shares 1/3 and 2/3
    sec = doc.get("budget", {"row": [1.0] * n_assets})
    if "row" in sec:
        if len(sec["row"]) != n_assets:
            raise ConfigError(f"{len(sec['row'])} entries for {n_assets} assets", "/budget/row")
        return RiskBudget.constant(sec["row"], horizon)
    table = sec["table"]
    if len(table) != horizon or any(len(r) != n_assets for r in table):
        raise ConfigError(f"table must be {horizon} x {n_assets}", "/budget/table")
    table = np.array(table, dtype=float)
    return _wrap("/budget/table", RiskBudget, table / table.sum(axis=1, keepdims=True))


def train_config(doc: dict, overrides: dict | None = None) -> TrainConfig:
    src = source(doc)
    spec = risk_spec(doc, src.horizon)
    b = budget(doc, src.horizon, src.n_assets)
    net = dict(doc.get("network", {}))
    if isinstance(net.get("output_scale"), list):
        net["output_scale"] = tuple(net["output_scale"])
    training = dict(doc.get("training", {}))
    training.update(overrides or {})
    out = doc.get("output", {})
    return _wrap("/training", TrainConfig, src, b, spec, score=ScoreSettings(**doc.get("scoring", {})),
                 network=NetworkSettings(**net), checkpoint_every=out.get("checkpoint_every", 0),
                 progress=out.get("progress", True), **training)


def echo(doc: dict) -> dict:
    """The config as given, without loader bookkeeping."""
    return {k: v for k, v in doc.items() if not k.startswith("_")}
