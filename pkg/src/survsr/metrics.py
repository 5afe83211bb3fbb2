"""Pareto fronts over (concordance, dimensionality) and their quality metrics."""

from __future__ import annotations

import math
import statistics
from dataclasses import dataclass, field
from typing import Any, Iterable, Sequence

import numpy as np


@dataclass
class FrontPoint:
    dims: int
    ci: float
    model: Any = None
    n_expr: int | None = None

    @property
    def neg_ci(self) -> float:
        return 1.0 - self.ci


def dominates(a: FrontPoint, b: FrontPoint) -> bool:
    return (a.neg_ci <= b.neg_ci and a.dims <= b.dims) and (a.neg_ci < b.neg_ci or a.dims < b.dims)


def filter_nondominated(points: Iterable[FrontPoint]) -> list[FrontPoint]:
    """Keep nondominated points (first of any exact objective tie), sorted by dims."""
    pts = list(points)
    kept, seen = [], set()
    for i, p in enumerate(pts):
        key = (p.neg_ci, p.dims)
        if key in seen:
            continue
        if any(dominates(q, p) for j, q in enumerate(pts) if j != i):
            continue
        seen.add(key)
        kept.append(p)
    return sorted(kept, key=lambda p: (p.dims, p.neg_ci))


@dataclass
class ParetoFront:
    """Nondominated (dims, CI) points; ``raw`` keeps every candidate before filtering."""

    points: list
    split: str = "test"
    method: str = ""
    raw: list = field(default_factory=list)

    @classmethod
    def from_candidates(cls, candidates: Sequence[FrontPoint], split="test", method=""):
        candidates = sorted(candidates, key=lambda p: (p.dims, p.neg_ci))
        return cls(filter_nondominated(candidates), split, method, list(candidates))

    def __len__(self):
        return len(self.points)

    def __iter__(self):
        return iter(self.points)


@dataclass(frozen=True)
class HVConfig:
    n_features: int
    ref_negci: float = 1.0
    ref_dims_norm: float = 1.0
    scale: float = 100.0


def hypervolume_points(points, ref=(1.0, 1.0)) -> float:
    """Exact area dominated by 2-D minimization points, bounded by ``ref``."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    pts = pts[(pts[:, 0] < ref[0]) & (pts[:, 1] < ref[1])]
    if pts.size == 0:
        return 0.0
    pts = pts[np.lexsort((pts[:, 1], pts[:, 0]))]
    # staircase of points that improve the second objective, in increasing first objective
    stairs, best_y = [], ref[1]
    for x, y in pts:
        if y < best_y:
            stairs.append((x, y))
            best_y = y
    area = 0.0
    for k, (x, y) in enumerate(stairs):
        x_next = stairs[k + 1][0] if k + 1 < len(stairs) else ref[0]
        area += (x_next - x) * (ref[1] - y)
    return float(area)


def normalized_objectives(points: Iterable[FrontPoint], n_features: int) -> np.ndarray:
    denom = max(n_features, 1)
    return np.array([[1.0 - min(max(p.ci, 0.0), 1.0), p.dims / denom] for p in points], dtype=float).reshape(-1, 2)


def hypervolume2d(front, config: HVConfig) -> float:
    """HV of (1 - CI, dims / n_features) against the reference point, times ``config.scale``."""
    pts = front.points if isinstance(front, ParetoFront) else list(front)
    if not pts:
        return 0.0
    objs = normalized_objectives(pts, config.n_features)
    return config.scale * hypervolume_points(objs, (config.ref_negci, config.ref_dims_norm))


def filter_up_to_k(front: ParetoFront, k: float) -> ParetoFront:
    keep = lambda pts: [p for p in pts if p.dims <= k]
    return ParetoFront(keep(front.points), front.split, front.method, keep(front.raw))


def select_exactly_k(front: ParetoFront, k: int, use_raw: bool = True) -> FrontPoint | None:
    """Point with exactly ``k`` dims (best CI), or None -- rendered ``(-)`` in tables."""
    pool = front.raw if (use_raw and front.raw) else front.points
    hits = [p for p in pool if p.dims == k]
    return max(hits, key=lambda p: p.ci) if hits else None


def select_max(front: ParetoFront) -> FrontPoint:
    if not front.points:
        raise ValueError("empty front")
    return max(front.points, key=lambda p: (p.dims, p.ci))


@dataclass(frozen=True)
class Summary:
    median: float
    q1: float
    q3: float
    n: int

    @property
    def iqr(self) -> float:
        return self.q3 - self.q1


def aggregate_repetitions(values: Sequence[float]) -> Summary:
    """Lower median with order-statistic quartiles, so q1 <= median <= q3 always holds."""
    vals = [float(v) for v in values if v is not None and not math.isnan(v)]
    if not vals:
        raise ValueError("at least one repetition is required")
    q1 = np.percentile(vals, 25, method="lower")
    q3 = np.percentile(vals, 75, method="higher")
    return Summary(statistics.median_low(vals), float(q1), float(q3), len(vals))


def pearson(x: Sequence[float], y: Sequence[float]) -> float:
    """Pearson correlation; NaN when either side is constant or too short."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 2 or np.ptp(x) == 0 or np.ptp(y) == 0:
        return float("nan")
    return float(np.corrcoef(x, y)[0, 1])
