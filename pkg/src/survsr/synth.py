"""Synthetic proportional-hazards data with a known risk score."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import CONTINUOUS, ColumnSpec, Schema, SurvivalDataset

SCORES = ("linear", "quadratic", "log-interaction")


@dataclass(frozen=True)
class SynthSpec:
    score: str = "quadratic"
    n: int = 1500
    d: int = 10
    censoring: float = 0.3
    baseline_hazard: float = 0.1
    theta: tuple = field(default=(1.0, -0.75, 0.5))

    def __post_init__(self):
        if self.score not in SCORES:
            raise ValueError(f"score must be one of {SCORES}")
        if not 0 <= self.censoring < 0.9:
            raise ValueError("censoring rate must lie in [0, 0.9)")
        needed = {"linear": len(self.theta), "quadratic": 2, "log-interaction": 3}[self.score]
        if self.d < needed:
            raise ValueError(f"score {self.score!r} needs d >= {needed}")


def true_score(spec: SynthSpec, X: np.ndarray) -> np.ndarray:
    if spec.score == "linear":
        return X[:, : len(spec.theta)] @ np.asarray(spec.theta, dtype=float)
    if spec.score == "quadratic":
        return X[:, 0] ** 2 - X[:, 1]
    return np.log(np.abs(X[:, 0] * X[:, 1]) + 1e-9) + X[:, 2]


def _censoring_scale(event_times, unit_draws, target):
    """Rate of exponential censoring whose censored fraction is closest to ``target``."""
    lo, hi = -30.0, 30.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        frac = np.mean(unit_draws / np.exp(mid) < event_times)
        if frac < target:
            lo = mid
        else:
            hi = mid
    return np.exp(hi)


def generate(spec: SynthSpec, seed: int) -> tuple[SurvivalDataset, np.ndarray]:
    """Draw features ~ N(0, 1), exponential event times with hazard ``h0*exp(score)``
    and independent exponential censoring calibrated to the requested rate."""
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((spec.n, spec.d))
    score = true_score(spec, X)
    event_time = rng.exponential(size=spec.n) / (spec.baseline_hazard * np.exp(score))
    unit = rng.exponential(size=spec.n)
    if spec.censoring > 0:
        cens_time = unit / _censoring_scale(event_time, unit, spec.censoring)
    else:
        cens_time = np.full(spec.n, np.inf)
    events = event_time <= cens_time
    times = np.minimum(event_time, cens_time)
    names = tuple(f"x{j}" for j in range(spec.d))
    ds = SurvivalDataset(X, times, events, names, (CONTINUOUS,) * spec.d)
    return ds, score


def write_dataset(ds: SurvivalDataset, score: np.ndarray, path: str | Path) -> dict:
    """Write ``path`` (CSV), ``<stem>_score.csv`` and ``<stem>.schema.ini``; returns the paths."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(list(ds.column_names) + ["time", "event"])
        for x, t, e in zip(ds.features, ds.times, ds.events):
            w.writerow([repr(float(v)) for v in x] + [repr(float(t)), int(e)])
    score_path = path.with_name(path.stem + "_score.csv")
    with open(score_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["score"])
        w.writerows([[repr(float(s))] for s in score])
    schema_path = path.with_name(path.stem + ".schema.ini")
    Schema("time", "event", {c: ColumnSpec(CONTINUOUS) for c in ds.column_names}).write(schema_path)
    return {"data": path, "score": score_path, "schema": schema_path}
