"""Glass-box baseline fronts: elastic-net Cox over a penalty path (CX) and
depth-swept log-rank survival trees (ST)."""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import coxcore
from .coxcore import StepFunction, nelson_aalen
from .data import SurvivalDataset
from .metrics import FrontPoint, ParetoFront

# ---------------------------------------------------------------------------
# CX


@dataclass(frozen=True, eq=False)
class LinearCoxModel:
    theta: np.ndarray
    lam: float
    column_names: tuple = ()

    @property
    def dims(self) -> int:
        return int(np.count_nonzero(self.theta))

    def risk_score(self, X) -> np.ndarray:
        return np.asarray(X, dtype=float) @ self.theta

    def to_json(self) -> dict:
        return {"kind": "cx", "lambda": self.lam, "theta": self.theta.tolist(),
                "columns": list(self.column_names)}


def _ci(train: SurvivalDataset, eval_ds: SurvivalDataset, eta) -> float:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", coxcore.NoComparablePairs)
        return coxcore.concordance_ipcw(train.times, train.events, eval_ds.times, eval_ds.events, eta)


def cx_candidates(train: SurvivalDataset, l1_ratio=0.5, n_lambdas=1000) -> list[LinearCoxModel]:
    """One model per support size: the fit at the (lower) median penalty of its group."""
    path = coxcore.lambda_path(train.features, train.times, train.events, l1_ratio, n_lambdas)
    groups: dict[int, list] = {}
    for lam, fit in path:
        groups.setdefault(fit.nonzero, []).append((lam, fit))
    models = []
    for dims in sorted(groups):
        members = sorted(groups[dims], key=lambda lf: lf[0])
        lam, fit = members[(len(members) - 1) // 2]
        models.append(LinearCoxModel(fit.theta, lam, train.column_names))
    return models


def cx_pareto_front(train: SurvivalDataset, eval_ds: SurvivalDataset, l1_ratio=0.5, n_lambdas=1000,
                    split="test") -> ParetoFront:
    pts = [FrontPoint(m.dims, _ci(train, eval_ds, m.risk_score(eval_ds.features)), m)
           for m in cx_candidates(train, l1_ratio, n_lambdas)]
    return ParetoFront.from_candidates(pts, split, "cx")


# ---------------------------------------------------------------------------
# survival tree

ST_GRID = {
    "min_samples_split": (2, 5, 8),
    "min_samples_leaf": (1, 4),
    "max_features": (0.5, 1.0),
    "splitter": ("best", "random"),
}


@dataclass(frozen=True)
class STConfig:
    max_depth: int = 25
    min_samples_split: int = 2
    min_samples_leaf: int = 1
    max_features: float = 1.0
    splitter: str = "best"

    def __post_init__(self):
        if not 1 <= self.max_depth <= 25:
            raise ValueError("max_depth must lie in 1..25")
        for name, allowed in ST_GRID.items():
            if getattr(self, name) not in allowed:
                raise ValueError(f"{name} must be one of {allowed}")


def st_grid(max_depth: int = 25) -> list[STConfig]:
    keys = list(ST_GRID)
    return [STConfig(max_depth, **dict(zip(keys, combo))) for combo in itertools.product(*ST_GRID.values())]


@dataclass(eq=False)
class STNode:
    """Tree node. Every node keeps the Nelson-Aalen estimate of its rows so a
    tree can be cut at any depth; a node is a leaf when ``feature`` is None."""

    chf: StepFunction
    n_samples: int
    depth: int
    feature: int | None = None
    threshold: float = 0.0
    left: "STNode | None" = None
    right: "STNode | None" = None

    @property
    def is_leaf(self) -> bool:
        return self.feature is None

    def iter_nodes(self):
        yield self
        if not self.is_leaf:
            yield from self.left.iter_nodes()
            yield from self.right.iter_nodes()

    def split_features(self, max_depth: int | None = None) -> set:
        return {n.feature for n in self.iter_nodes()
                if not n.is_leaf and (max_depth is None or n.depth < max_depth)}

    def leaf_for(self, x, max_depth: int | None = None) -> "STNode":
        node = self
        while not node.is_leaf and (max_depth is None or node.depth < max_depth):
            node = node.left if x[node.feature] <= node.threshold else node.right
        return node

    def truncated(self, max_depth: int) -> "STNode":
        if self.is_leaf or self.depth >= max_depth:
            return STNode(self.chf, self.n_samples, self.depth)
        return STNode(self.chf, self.n_samples, self.depth, self.feature, self.threshold,
                      self.left.truncated(max_depth), self.right.truncated(max_depth))

    def to_json(self) -> dict:
        if self.is_leaf:
            return {"n_samples": self.n_samples, "chf_times": self.chf.breakpoints.tolist(),
                    "chf_values": self.chf.values.tolist()}
        return {"feature": self.feature, "threshold": self.threshold, "n_samples": self.n_samples,
                "left": self.left.to_json(), "right": self.right.to_json()}


def logrank_scores(x, times, events, positions):
    """|O - E| / sqrt(V) of the two-sample log-rank test for left = rows[:s], s in ``positions``.

    Rows must already be sorted by ``x``.
    """
    ev_times = np.unique(times[events])
    positions = np.asarray(positions)
    if ev_times.size == 0 or positions.size == 0:
        return np.zeros(positions.size)
    # at-risk indicator and event indicator per (row, event time)
    k_risk = np.searchsorted(ev_times, times, side="right")  # row at risk for the first k_risk times
    at_risk = np.arange(ev_times.size)[None, :] < k_risk[:, None]
    died = np.zeros_like(at_risk)
    ev_rows = np.flatnonzero(events)
    died[ev_rows, np.searchsorted(ev_times, times[ev_rows])] = True
    n_left = np.cumsum(at_risk, axis=0)[positions - 1].astype(float)
    d_left = np.cumsum(died, axis=0)[positions - 1].astype(float)
    n_tot = at_risk.sum(axis=0).astype(float)
    d_tot = died.sum(axis=0).astype(float)
    expected = n_left * d_tot / n_tot
    frac = n_left / n_tot
    with np.errstate(invalid="ignore", divide="ignore"):
        tie = np.where(n_tot > 1, (n_tot - d_tot) / (n_tot - 1), 0.0)
    var = (frac * (1 - frac) * tie * d_tot).sum(axis=1)
    diff = (d_left - expected).sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(var > 0, np.abs(diff) / np.sqrt(np.where(var > 0, var, 1.0)), 0.0)
    return out


def _best_split(X, times, events, cfg: STConfig, rng):
    n, d = X.shape
    k = max(1, int(cfg.max_features * d))
    feats = np.sort(rng.choice(d, size=k, replace=False)) if k < d else np.arange(d)
    best = (0.0, None, None)
    msl = cfg.min_samples_leaf
    for j in feats:
        col = X[:, j]
        if cfg.splitter == "best":
            order = np.argsort(col, kind="stable")
            xs = col[order]
            pos = np.flatnonzero(xs[1:] > xs[:-1]) + 1  # left = first pos rows
            pos = pos[(pos >= msl) & (n - pos >= msl)]
            if pos.size == 0:
                continue
            scores = logrank_scores(xs, times[order], events[order], pos)
            i = int(np.argmax(scores))
            if scores[i] > best[0]:
                best = (float(scores[i]), int(j), 0.5 * (xs[pos[i] - 1] + xs[pos[i]]))
        else:
            lo, hi = col.min(), col.max()
            if not hi > lo:
                continue
            thr = float(rng.uniform(lo, hi))
            left = col <= thr
            n_left = int(left.sum())
            if n_left < msl or n - n_left < msl:
                continue
            order = np.argsort(~left, kind="stable")
            score = logrank_scores(col[order], times[order], events[order], [n_left])[0]
            if score > best[0]:
                best = (float(score), int(j), thr)
    return best


def fit_survival_tree(train: SurvivalDataset, config: STConfig, rng: np.random.Generator) -> STNode:
    """Greedy log-rank tree, grown level by level.

    Growing breadth-first means the random stream is consumed one level at a
    time, so ``fit(depth=D).truncated(k)`` equals ``fit(depth=k)`` for the
    same seed.
    """
    X, times, events = train.features, train.times, train.events
    root = STNode(nelson_aalen(times, events), train.n, 0)
    level = [(root, np.arange(train.n))]
    for depth in range(config.max_depth):
        nxt = []
        for node, rows in level:
            if rows.size < config.min_samples_split or not events[rows].any():
                continue
            score, j, thr = _best_split(X[rows], times[rows], events[rows], config, rng)
            if j is None or not score > 0:
                continue
            go_left = X[rows, j] <= thr
            lrows, rrows = rows[go_left], rows[~go_left]
            node.feature, node.threshold = j, float(thr)
            node.left = STNode(nelson_aalen(times[lrows], events[lrows]), lrows.size, depth + 1)
            node.right = STNode(nelson_aalen(times[rrows], events[rrows]), rrows.size, depth + 1)
            nxt += [(node.left, lrows), (node.right, rrows)]
        level = nxt
        if not level:
            break
    return root


@dataclass(eq=False)
class SurvivalTreeModel:
    root: STNode
    max_depth: int
    horizon: float  # largest training event time
    config: STConfig | None = None
    column_names: tuple = ()

    @property
    def dims(self) -> int:
        return len(self.root.split_features(self.max_depth))

    def leaves(self, X):
        return [self.root.leaf_for(x, self.max_depth) for x in np.asarray(X, dtype=float)]

    def risk_score(self, X) -> np.ndarray:
        """Leaf cumulative hazard at the last training event time."""
        X = np.asarray(X, dtype=float)
        out = np.empty(X.shape[0])
        stack = [(self.root, np.arange(X.shape[0]))]
        while stack:
            node, rows = stack.pop()
            if node.is_leaf or node.depth >= self.max_depth:
                out[rows] = node.chf(self.horizon)
                continue
            go_left = X[rows, node.feature] <= node.threshold
            stack += [(node.left, rows[go_left]), (node.right, rows[~go_left])]
        return out

    def survival_functions(self, X) -> list[StepFunction]:
        return [leaf.chf.map(lambda h: np.exp(-np.asarray(h)), left=1.0) for leaf in self.leaves(X)]

    def to_json(self) -> dict:
        return {"kind": "st", "max_depth": self.max_depth, "horizon": self.horizon,
                "config": None if self.config is None else self.config.__dict__,
                "columns": list(self.column_names), "tree": self.root.truncated(self.max_depth).to_json()}


def _horizon(ds: SurvivalDataset) -> float:
    return float(ds.times[ds.events].max()) if ds.events.any() else float(ds.times.max())


def stratified_folds(events, n_folds, rng) -> list[np.ndarray]:
    """Shuffled fold assignment, stratified by the event indicator."""
    fold_of = np.empty(events.size, dtype=int)
    offset = 0
    for cls in (True, False):
        idx = rng.permutation(np.flatnonzero(events == cls))
        fold_of[idx] = (np.arange(idx.size) + offset) % n_folds
        offset += idx.size
    return [np.flatnonzero(fold_of == f) for f in range(n_folds)]


def _config_seed(seed: int, config_index: int, fold: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(config_index, fold)))


@dataclass
class STSearch:
    depths: list
    winners: dict = field(default_factory=dict)  # depth -> (config index, mean CV CI)
    models: dict = field(default_factory=dict)  # depth -> SurvivalTreeModel


def st_search(train: SurvivalDataset, depths=range(1, 26), folds=5, seed=0) -> STSearch:
    """Per depth, pick the grid point with the best mean validation CI, then refit on all of train."""
    depths = sorted(depths)
    if train.n < folds:
        raise ValueError("need at least as many rows as folds")
    max_depth = depths[-1]
    grid = st_grid(max_depth)
    split_rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(10_000,)))
    fold_rows = stratified_folds(train.events, folds, split_rng)
    cv = np.zeros((len(grid), len(depths)))
    for c, cfg in enumerate(grid):
        for f, val_rows in enumerate(fold_rows):
            fit_rows = np.setdiff1d(np.arange(train.n), val_rows)
            fit_ds, val_ds = train.subset(fit_rows), train.subset(val_rows)
            root = fit_survival_tree(fit_ds, cfg, _config_seed(seed, c, f))
            horizon = _horizon(fit_ds)
            for k, depth in enumerate(depths):
                model = SurvivalTreeModel(root, depth, horizon)
                cv[c, k] += _ci(fit_ds, val_ds, model.risk_score(val_ds.features)) / folds
    out = STSearch(depths)
    refits: dict[int, STNode] = {}
    for k, depth in enumerate(depths):
        c = int(np.argmax(cv[:, k]))
        if c not in refits:
            refits[c] = fit_survival_tree(train, grid[c], _config_seed(seed, c, folds))
        out.winners[depth] = (c, float(cv[c, k]))
        out.models[depth] = SurvivalTreeModel(refits[c], depth, _horizon(train), STConfig(depth, **{
            k2: getattr(grid[c], k2) for k2 in ST_GRID}), train.column_names)
    return out


def st_candidates(search: STSearch) -> list[SurvivalTreeModel]:
    """Winners in increasing depth; the shallowest model is kept for each dims value."""
    seen, models = set(), []
    for depth in search.depths:
        model = search.models[depth]
        if model.dims not in seen:
            seen.add(model.dims)
            models.append(model)
    return models


def st_pareto_front(train: SurvivalDataset, eval_ds: SurvivalDataset, depths=range(1, 26), folds=5,
                    seed=0, split="test") -> ParetoFront:
    search = st_search(train, depths, folds, seed)
    pts = [FrontPoint(m.dims, _ci(train, eval_ds, m.risk_score(eval_ds.features)), m)
           for m in st_candidates(search)]
    return ParetoFront.from_candidates(pts, split, "st")
