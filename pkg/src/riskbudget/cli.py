"""Command-line runner: simulate, train, verify, oracle and report.

Every command that writes artifacts builds them in a sibling ``.partial``
directory and renames it into place when complete, next to a
``manifest.json`` (config echo, seed, code version, wall time). An existing
run directory is never overwritten unless ``--force`` is given.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 failed checks (``verify``, ``report --check``).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import shutil
import sys
import time
from contextlib import contextmanager
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__, checks, config, market, oracle, report
from .market import SimulationError
from .portfolio import RiskBudget, write_rc_csv
from .risk import DistortionSpec
from .trainer import Trainer, TrainingError, read_diagnostics_csv, write_diagnostics_csv
from .tree import ScenarioTree, TreeError

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_CHECK = 0, 2, 3, 4
THREADS_ENV = "RISKBUDGET_THREADS"


# modules whose code determines a training run's numbers
TRAINING_SOURCES = ("config.py", "market.py", "portfolio.py", "risk.py", "scoring.py", "trainer.py", "tree.py", "nnet")


def source_digest(only=None) -> str:
    """SHA-256 over package sources (all of them, or the names in ``only``)."""
    h = hashlib.sha256()
    root = Path(__file__).parent
    for path in sorted(root.rglob("*.py")):
        if only is not None and path.relative_to(root).parts[0] not in only:
            continue
        h.update(path.relative_to(root).as_posix().encode())
        h.update(path.read_bytes())
    return h.hexdigest()


_DIGESTS: dict = {}


def _write_manifest(directory: Path, command: str, doc: dict | None, seed, seconds: float, **extra) -> None:
    manifest = {
        "command": command,
        "config": config.echo(doc) if doc else None,
        "seed": seed,
        "version": __version__,
        **_DIGESTS,
        "wall_seconds": seconds,
        "finished": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        **extra,
    }
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))


@contextmanager
def run_directory(target: Path, force: bool):
    """Yield a scratch directory that replaces ``target`` only on success."""
    target = Path(target)
    if target.exists() and not force:
        raise config.ConfigError(f"run directory {target} already exists (use --force to replace it)", "/output/dir")
    scratch = target.with_name(target.name + ".partial")
    if scratch.exists():
        shutil.rmtree(scratch)
    scratch.mkdir(parents=True)
    yield scratch
    if target.exists():
        old = target.with_name(target.name + ".old")
        if old.exists():
            shutil.rmtree(old)
        os.replace(target, old)
        os.replace(scratch, target)
        shutil.rmtree(old)
    else:
        os.replace(scratch, target)


def _out_dir(args, doc, default: str) -> Path:
    if getattr(args, "out", None):
        return Path(args.out)
    if doc and doc.get("output", {}).get("dir"):
        out = Path(doc["output"]["dir"])
        return out if out.is_absolute() else Path(doc["_base"]) / out
    return Path(default)


# -- simulate ---------------------------------------------------------------------------


def cmd_simulate(args) -> int:
    doc = config.load(args.config)
    params = config.market_params(doc)
    start = time.perf_counter()
    paths = market.sample_paths(params, args.paths, seed=args.seed)
    stats = market.terminal_stats(paths)
    n = params.n_assets
    target = _out_dir(args, doc, "runs/simulate")
    with run_directory(target, args.force) as out:
        with open(out / "stats.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["asset", "mean", "std", "sharpe"] + [f"corr_{j}" for j in range(n)])
            for i in range(n):
                w.writerow([i] + [repr(float(stats[k][i])) for k in ("mean", "std", "sharpe")]
                           + [repr(float(c)) for c in stats["corr"][i]])
        extra = {}
        if config.is_reference_market(doc):
            dev = market.compare_to_reference(stats)
            with open(out / "reference_check.csv", "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["statistic", "max_abs_deviation", "tolerance", "passed"])
                for key, tol in market.REFERENCE_TOL.items():
                    w.writerow([key, repr(float(dev[key])), tol, int(dev[key] <= tol)])
                    print(f"{'PASS' if dev[key] <= tol else 'FAIL'} total-return {key}: "
                          f"max deviation {dev[key]:.4f} (tol {tol})")
            extra["reference_deviation"] = dev
        if args.save_paths:
            market.write_paths_columnar(out / "paths.npz", paths)
        _write_manifest(out, "simulate", doc, args.seed, time.perf_counter() - start, paths=args.paths, **extra)
    print(f"wrote {target}")
    return EXIT_OK


# -- train ------------------------------------------------------------------------------


def cmd_train(args) -> int:
    doc = config.load(args.config)
    overrides = {k: v for k, v in (("iters", args.iters), ("seed", args.seed)) if v is not None}
    cfg = config.train_config(doc, overrides)
    target = _out_dir(args, doc, "runs/train")
    with run_directory(target, args.force) as out:
        cfg.output_dir = str(out)
        start = time.perf_counter()
        trainer = Trainer(cfg)
        try:
            result = trainer.train()
        except TrainingError:
            _write_manifest(out, "train", doc, cfg.seed, time.perf_counter() - start, status="failed")
            raise
        write_diagnostics_csv(out / "diagnostics.csv", result.diagnostics)
        trainer.save_checkpoint(out / "checkpoint.bin")
        _write_manifest(out, "train", doc, cfg.seed, time.perf_counter() - start, status="complete",
                        resolved=cfg.describe(), score_D=result.score_D, clamped_fraction=result.clamped_fraction)
    print(f"wrote {target}")
    return EXIT_OK


# -- verify -----------------------------------------------------------------------------


def _verify_trees(args, doc):
    if args.tree:
        path = Path(args.tree)
        raw = json.loads(path.read_text())
        if "levels" in raw:
            return [config._wrap("/levels", ScenarioTree.from_json, raw)]
        sub = config.validate({"tree": raw})
        sub["_base"] = str(path.resolve().parent)
        return [config.tree(sub)]
    if doc and "tree" in doc:
        return [config.tree(doc)]
    return [checks.random_case(args.seed + k)[0] for k in range(args.trees)]


def cmd_verify(args) -> int:
    doc = config.load(args.config) if args.config else None
    trees = _verify_trees(args, doc)
    results = []
    for k, tree in enumerate(trees):
        rng = np.random.default_rng(args.seed + k)
        spec = config.risk_spec(doc, tree.depth) if doc else DistortionSpec(0.5, 0.75)
        theta = [rng.uniform(0.5, 2.0, size=(tree.layer_size(t), tree.n_assets)) for t in range(tree.depth)]
        results += checks.property_suite(tree, theta, spec, rng)
        budget = config.budget(doc, tree.depth, tree.n_assets) if doc else RiskBudget.constant(
            np.ones(tree.n_assets), tree.depth)
        results += checks.oracle_suite(tree, budget, spec, restarts=args.restarts)
    worst = {}
    for r in results:
        if r.name not in worst or r.error > worst[r.name].error:
            worst[r.name] = r
    for r in worst.values():
        print(r.line())
    failed = [r for r in worst.values() if not r.passed]
    print(f"{len(worst) - len(failed)}/{len(worst)} checks passed on {len(trees)} tree(s)")
    return EXIT_CHECK if failed else EXIT_OK


# -- oracle -----------------------------------------------------------------------------


def cmd_oracle(args) -> int:
    doc = config.load(args.config)
    target = _out_dir(args, doc, f"runs/oracle_{args.kind}")
    start = time.perf_counter()
    if args.kind == "gaussian":
        if "gaussian" not in doc:
            raise config.ConfigError("the gaussian oracle needs a gaussian section", "/gaussian")
        g = doc["gaussian"]
        spec = config.risk_spec(doc, 1)
        rc = config._wrap("/gaussian", oracle.gaussian_es_contributions, g["mu"], g["sigma"], g["theta"], spec.alpha,
                          spec.p)
        with run_directory(target, args.force) as out:
            with open(out / "contributions.csv", "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["asset", "theta", "rc", "share"])
                for i, c in enumerate(rc):
                    w.writerow([i, repr(float(g["theta"][i])), repr(float(c)), repr(float(c / rc.sum()))])
            _write_manifest(out, "oracle gaussian", doc, None, time.perf_counter() - start)
    elif args.kind == "tree":
        if "tree" not in doc:
            raise config.ConfigError("the tree oracle needs a tree section", "/tree")
        tree = config.tree(doc)
        spec = config.risk_spec(doc, tree.depth)
        budget = config.budget(doc, tree.depth, tree.n_assets)
        sol = oracle.solve_tree_risk_budgeting(tree, budget, spec)
        with run_directory(target, args.force) as out:
            oracle.write_strategy_csv(out / "strategy.csv", tree.to_scenarios(sol.theta))
            write_rc_csv(out / "contributions.csv", tree, sol.contributions(tree, spec), sol.risk)
            _write_manifest(out, "oracle tree", doc, None, time.perf_counter() - start,
                            tie_nodes=len(oracle.tie_nodes(tree, sol, spec)))
    else:
        params = config.market_params(doc)
        spec = config.risk_spec(doc, params.horizon_decisions)
        spec0 = spec[0] if isinstance(spec, list) else spec
        budget = config.budget(doc, params.horizon_decisions, params.n_assets)
        prices = market.sample_paths(params, args.paths, seed=args.seed).prices
        losses = -(prices[:, 1] - prices[:, 0])
        sol = oracle.solve_static_saa(losses, budget.b[0], spec0)
        with run_directory(target, args.force) as out:
            with open(out / "allocation.csv", "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["asset", "theta", "rc", "budget"])
                for i in range(params.n_assets):
                    w.writerow([i, repr(float(sol.theta[i])), repr(float(sol.contributions[i])),
                                repr(float(budget.b[0, i]))])
            _write_manifest(out, "oracle saa", doc, args.seed, time.perf_counter() - start, paths=args.paths,
                            risk=sol.risk)
    print(f"wrote {target}")
    return EXIT_OK


# -- report -----------------------------------------------------------------------------


def cmd_report(args) -> int:
    run = Path(args.run)
    manifest = json.loads((run / "manifest.json").read_text())
    rows = read_diagnostics_csv(run / "diagnostics.csv")
    budget = np.array(manifest["resolved"]["budget"])
    summaries = report.tail_summaries(rows, budget, window=args.window, tail=args.tail)
    report.write_summary_csv(run / "summary.csv", summaries)
    report.write_charts(run, rows, budget, window=args.window)
    for s in summaries:
        what = f"risk-to-go t={s.t}" if s.asset is None else f"RC t={s.t} asset={s.asset}"
        print(f"{'PASS' if s.passed else 'FAIL'} {what}: moving average in [{s.ma_min:.4f}, {s.ma_max:.4f}], "
              f"target {s.target:.4f}, tol {s.tol}")
    if args.check and not all(s.passed for s in summaries):
        return EXIT_CHECK
    return EXIT_OK


# -- entry point ------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="riskbudget", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate market paths and report total-return statistics")
    p.add_argument("--config", required=True)
    p.add_argument("--paths", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.add_argument("--save-paths", action="store_true", help="also write the paths as a columnar .npz file")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", help="run actor-critic training")
    p.add_argument("--config", required=True)
    p.add_argument("--iters", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("verify", help="exact identity checks on scenario trees")
    p.add_argument("--tree", help="tree JSON file (explicit levels or generator parameters)")
    p.add_argument("--config")
    p.add_argument("--trees", type=int, default=20, help="random trees to check when no tree is given")
    p.add_argument("--restarts", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("oracle", help="solve risk budgeting with an independent solver")
    p.add_argument("kind", choices=["tree", "saa", "gaussian"])
    p.add_argument("--config", required=True)
    p.add_argument("--paths", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("report", help="summarize and chart a training run")
    p.add_argument("--run", required=True)
    p.add_argument("--window", type=int, default=100)
    p.add_argument("--tail", type=float, default=0.1, help="final fraction of iterations to check")
    p.add_argument("--check", action="store_true", help="exit 4 when a tolerance is missed")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    # hashed before any work so the manifest names the code that actually ran
    _DIGESTS.update(source_sha256=source_digest(), training_sha256=source_digest(TRAINING_SOURCES))
    try:
        return args.func(args)
    except (config.ConfigError, TreeError, FileNotFoundError, json.JSONDecodeError) as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (TrainingError, SimulationError, oracle.OracleError, FloatingPointError) as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERIC
