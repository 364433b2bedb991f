"""Summaries and charts from a training diagnostics file."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .charts import line_chart
from .trainer import moving_average


@dataclass(frozen=True)
class TailSummary:
    """Moving-average range over the final part of training for one quantity."""

    quantity: str  # "rc" or "risk_to_go"
    t: int
    asset: int | None
    target: float
    ma_min: float
    ma_max: float
    ma_last: float
    tol: float

    @property
    def worst(self) -> float:
        return max(abs(self.ma_min - self.target), abs(self.ma_max - self.target))

    @property
    def passed(self) -> bool:
        return bool(self.worst <= self.tol)


def series(rows) -> dict:
    """Per-iteration arrays: rc[(t, asset)], risk_to_go[t], iterations."""
    iters = sorted({r.iter for r in rows})
    pos = {it: k for k, it in enumerate(iters)}
    times = sorted({r.t for r in rows})
    assets = sorted({r.asset for r in rows})
    rc = {(t, i): np.full(len(iters), np.nan) for t in times for i in assets}
    risk = {t: np.full(len(iters), np.nan) for t in times}
    for r in rows:
        rc[(r.t, r.asset)][pos[r.iter]] = r.rc
        risk[r.t][pos[r.iter]] = r.risk_to_go
    return {"iters": np.array(iters), "rc": rc, "risk_to_go": risk, "times": times, "assets": assets}


def tail_summaries(rows, budget: np.ndarray, window: int = 100, tail: float = 0.1, rc_tol: float = 0.02,
                   risk_tol: float = 0.05) -> list:
    """Moving averages (``window`` iterations) checked over the final ``tail`` fraction of iterations.

    Risk contributions are compared with the budget and risk-to-go with one.
    """
    s = series(rows)
    n_iter = s["iters"].size
    if n_iter < window:
        raise ValueError(f"{n_iter} iterations is fewer than the moving-average window {window}")
    # moving average entry k covers iterations k .. k + window - 1; keep those ending in the tail
    first_end = n_iter - max(1, int(round(tail * n_iter)))
    keep = slice(max(first_end - window + 1, 0), None)
    out = []
    for t in s["times"]:
        ma = moving_average(s["risk_to_go"][t], window)[keep]
        out.append(TailSummary("risk_to_go", t, None, 1.0, float(ma.min()), float(ma.max()), float(ma[-1]), risk_tol))
        for i in s["assets"]:
            ma = moving_average(s["rc"][(t, i)], window)[keep]
            out.append(TailSummary("rc", t, i, float(budget[t, i]), float(ma.min()), float(ma.max()), float(ma[-1]),
                                   rc_tol))
    return out


def write_summary_csv(path, summaries) -> None:
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["quantity", "t", "asset", "target", "ma_min", "ma_max", "ma_last", "worst_deviation", "tol",
                      "passed"])
        for s in summaries:
            out.writerow([s.quantity, s.t, "" if s.asset is None else s.asset, repr(s.target), repr(s.ma_min),
                          repr(s.ma_max), repr(s.ma_last), repr(s.worst), s.tol, int(s.passed)])


def write_charts(directory, rows, budget: np.ndarray, window: int = 100) -> list:
    """One chart per decision time: contributions, their sum and risk-to-go, all as moving averages."""
    s = series(rows)
    window = min(window, s["iters"].size)
    x = s["iters"][window - 1:].tolist()
    paths = []
    for t in s["times"]:
        lines, refs = [], []
        total = np.zeros(s["iters"].size)
        for i in s["assets"]:
            label = f"RC asset {i}"
            lines.append({"label": label, "x": x, "y": moving_average(s["rc"][(t, i)], window).tolist()})
            refs.append({"label": label, "y": float(budget[t, i])})
            total += s["rc"][(t, i)]
        lines.append({"label": "sum of RC", "x": x, "y": moving_average(total, window).tolist()})
        lines.append({"label": "risk-to-go", "x": x, "y": moving_average(s["risk_to_go"][t], window).tolist(),
                      "dashed": True})
        refs.append({"label": "risk-to-go", "y": 1.0})
        svg = line_chart(lines, f"t = {t}, moving average over {window} iterations", ylabel="value", hlines=refs)
        path = Path(directory) / f"convergence_t{t}.svg"
        path.write_text(svg)
        paths.append(path)
    return paths
