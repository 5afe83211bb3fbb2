"""Cox models whose covariates are evolved expressions: eta = sum_j theta_j f_j(x)."""

from __future__ import annotations

import hashlib
import json
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import coxcore
from .data import SurvivalDataset
from .exprtree import ExprTree, eval_unchecked, evaluate, format_constant, parse_infix, to_infix

THETA_LAMBDA = 1e-6
THETA_L1_RATIO = 0.5
# relative spread below which a constructed feature is treated as constant
ZERO_VARIANCE_RTOL = 1e-10


class NotFitted(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class MultiExprModel:
    trees: tuple
    theta: np.ndarray | None = None
    fitted: bool = False
    converged: bool = True
    train_signature: str | None = None
    features: frozenset = field(init=False, repr=False)

    def __post_init__(self):
        trees = tuple(self.trees)
        if not trees:
            raise ValueError("a model holds at least one expression")
        object.__setattr__(self, "trees", trees)
        object.__setattr__(self, "features", frozenset().union(*(t.feature_set for t in trees)))
        if self.fitted:
            theta = np.asarray(self.theta, dtype=float)
            if theta.shape != (len(trees),) or not np.all(np.isfinite(theta)):
                raise ValueError("theta must be finite with one entry per expression")
            object.__setattr__(self, "theta", theta)

    @property
    def m(self) -> int:
        return len(self.trees)

    @property
    def dims(self) -> int:
        return len(self.features)

    @property
    def key(self) -> tuple:
        return tuple(t.nodes for t in self.trees)

    def with_trees(self, trees) -> "MultiExprModel":
        """Structural edit: returns an unfitted model."""
        return MultiExprModel(tuple(trees))

    def to_json(self, column_names=None) -> dict:
        return {
            "trees": [to_infix(t) for t in self.trees],
            "theta": None if self.theta is None else self.theta.tolist(),
            "meta": {
                "dims": self.dims,
                "features": sorted(self.features) if column_names is None
                else [column_names[j] for j in sorted(self.features)],
                "fitted": self.fitted,
                "converged": self.converged,
                "train_signature": self.train_signature,
            },
        }

    @classmethod
    def from_json(cls, obj: dict) -> "MultiExprModel":
        trees = tuple(parse_infix(s) for s in obj["trees"])
        meta = obj.get("meta", {})
        theta = obj.get("theta")
        return cls(trees, None if theta is None else np.asarray(theta, dtype=float), theta is not None,
                   meta.get("converged", True), meta.get("train_signature"))


@dataclass(frozen=True)
class ObjectiveVector:
    neg_ci: float
    dims: int

    def as_tuple(self):
        return (self.neg_ci, self.dims)


def construct_features(model: MultiExprModel, X, cache: dict | None = None):
    """Evaluate every expression; returns (n x m matrix, zero-variance mask)."""
    X = np.asarray(X, dtype=float)
    cols = []
    for tree in model.trees:
        col = None if cache is None else cache.get(tree.nodes)
        if col is None:
            with np.errstate(all="ignore"):
                col = eval_unchecked(tree, X) if cache is not None else evaluate(tree, X)
            if cache is not None:
                cache[tree.nodes] = col
        cols.append(col)
    F = np.column_stack(cols)
    return F, zero_variance(F)


def zero_variance(F) -> np.ndarray:
    spread = F.max(axis=0) - F.min(axis=0)
    scale = np.maximum(np.abs(F).max(axis=0), 1.0)
    return ~(spread > ZERO_VARIANCE_RTOL * scale)


def fit_theta_matrix(F, zero_var, times, events, lam=THETA_LAMBDA, l1_ratio=THETA_L1_RATIO,
                     risk_sets: coxcore.RiskSets | None = None):
    """Fit theta on standardized constructed features; returns (raw-scale theta, converged)."""
    m = F.shape[1]
    theta = np.zeros(m)
    keep = np.flatnonzero(~zero_var)
    if keep.size == 0:
        return theta, True
    G = F[:, keep]
    mu = G.mean(axis=0)
    sd = G.std(axis=0)
    ok = sd > 0
    keep, G, mu, sd = keep[ok], G[:, ok], mu[ok], sd[ok]
    if keep.size == 0:
        return theta, True
    S = (G - mu) / sd
    obj = coxcore.CoxObjective(S, times, events, lam, l1_ratio, risk_sets)
    fit = coxcore._fit(obj, None, 1e-7, 100, warn=False)
    theta[keep] = fit.theta / sd
    if not np.all(np.isfinite(theta)):
        return np.zeros(m), False
    return theta, fit.converged


def fit_theta(model: MultiExprModel, train: SurvivalDataset, lam: float = THETA_LAMBDA,
              l1_ratio: float = THETA_L1_RATIO) -> MultiExprModel:
    if not train.events.any():
        raise ValueError("training data needs at least one event")
    F, zero_var = construct_features(model, train.features)
    theta, converged = fit_theta_matrix(F, zero_var, train.times, train.events, lam, l1_ratio)
    if not converged:
        warnings.warn("theta fit did not converge", coxcore.NotConverged, stacklevel=2)
    return MultiExprModel(model.trees, theta, True, converged, train.signature())


def risk_score(model: MultiExprModel, X) -> np.ndarray:
    if not model.fitted:
        raise NotFitted("fit theta before scoring")
    F, _ = construct_features(model, X)
    return F @ model.theta


def objectives(model: MultiExprModel, eval_ds: SurvivalDataset, train_ds: SurvivalDataset) -> ObjectiveVector:
    ci = coxcore.concordance_ipcw(train_ds.times, train_ds.events, eval_ds.times, eval_ds.events,
                                  risk_score(model, eval_ds.features))
    return ObjectiveVector(1.0 - min(max(ci, 0.0), 1.0), model.dims)


def signature_of_scores(eta) -> bytes:
    rounded = np.round(np.asarray(eta, dtype=float), 12) + 0.0  # folds -0.0 into 0.0
    return hashlib.sha256(rounded.tobytes()).digest()


def prediction_signature(model: MultiExprModel, train_X) -> bytes:
    """Digest of training-set risk scores rounded to 12 decimals."""
    return signature_of_scores(risk_score(model, train_X))


def formula(model: MultiExprModel, column_names: Sequence[str] | None = None) -> str:
    """Readable ``theta_1*f_1 + ...`` (6 significant digits, zero terms dropped)."""
    if not model.fitted:
        return " + ".join(to_infix(t, column_names, exact=False) for t in model.trees)
    parts = []
    for th, tree in zip(model.theta, model.trees):
        if th == 0:
            continue
        parts.append(f"{format_constant(float(th), exact=False)}*{to_infix(tree, column_names, exact=False)}")
    return " + ".join(parts) if parts else "0"


def report_row(k: int, model: MultiExprModel, train_ci: float, test_ci: float, column_names=None) -> dict:
    return {"k": k, "train_ci": train_ci, "test_ci": test_ci, "formula": formula(model, column_names)}


def dumps(model: MultiExprModel, column_names=None) -> str:
    return json.dumps(model.to_json(column_names), indent=2)
