"""Survival statistics: product-limit estimators, Cox partial likelihood,
elastic-net coordinate descent, Breslow baseline hazard, IPCW concordance."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from numba import njit


class NotConverged(UserWarning):
    """Coordinate descent stopped at ``max_iter``; the best iterate is kept."""


class NoComparablePairs(UserWarning):
    """No comparable pair exists; the concordance index falls back to 0.5."""


# ---------------------------------------------------------------------------
# step functions and nonparametric estimators


@dataclass(frozen=True, eq=False)
class StepFunction:
    """Right-continuous step function: ``left_value`` before the first breakpoint."""

    breakpoints: np.ndarray
    values: np.ndarray
    left_value: float = 1.0

    def __post_init__(self):
        x = np.asarray(self.breakpoints, dtype=float)
        y = np.asarray(self.values, dtype=float)
        if x.shape != y.shape:
            raise ValueError("breakpoints and values must have equal length")
        if x.size > 1 and np.any(np.diff(x) <= 0):
            raise ValueError("breakpoints must be strictly increasing")
        object.__setattr__(self, "breakpoints", x)
        object.__setattr__(self, "values", y)

    def _lookup(self, t, side):
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.breakpoints, t, side=side) - 1
        padded = np.concatenate(([self.left_value], self.values))
        out = padded[idx + 1]
        return out if out.ndim else float(out)

    def __call__(self, t):
        return self._lookup(t, "right")

    def left_limit(self, t):
        """Value just before ``t``."""
        return self._lookup(t, "left")

    def map(self, fn, left=None) -> "StepFunction":
        return StepFunction(self.breakpoints, fn(self.values), fn(self.left_value) if left is None else left)

    def to_rows(self):
        return list(zip(self.breakpoints.tolist(), self.values.tolist()))


def _event_table(times, events):
    times = np.asarray(times, dtype=float)
    events = np.asarray(events, dtype=bool)
    uniq, inv = np.unique(times, return_inverse=True)
    n_event = np.bincount(inv, weights=events, minlength=uniq.size)
    n_total = np.bincount(inv, minlength=uniq.size).astype(float)
    at_risk = n_total[::-1].cumsum()[::-1]
    return uniq, n_event, n_total - n_event, at_risk


def kaplan_meier(times, events, censoring_distribution: bool = False) -> StepFunction:
    """Product-limit estimate of the survival (or censoring) distribution.

    With ``censoring_distribution`` the roles of events and censorings are
    swapped; at tied times events are taken to occur before censorings, so
    subjects with an event at ``t`` are not at risk of being censored at ``t``.
    """
    uniq, n_event, n_cens, at_risk = _event_table(times, events)
    if censoring_distribution:
        at_risk = at_risk - n_event
        n_event = n_cens
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(at_risk > 0, n_event / at_risk, 0.0)
    return StepFunction(uniq, np.cumprod(1.0 - ratio), 1.0)


def nelson_aalen(times, events) -> StepFunction:
    uniq, n_event, _, at_risk = _event_table(times, events)
    return StepFunction(uniq, np.cumsum(n_event / at_risk), 0.0)


# ---------------------------------------------------------------------------
# Cox partial likelihood


class RiskSets:
    """Time-sorted view of survival data, reused across many likelihood calls.

    Ties use the Breslow convention: the risk set of a subject failing at
    ``t`` is every subject with time ``>= t``.
    """

    def __init__(self, times, events):
        times = np.asarray(times, dtype=float)
        events = np.asarray(events, dtype=bool)
        self.n = times.size
        self.order = np.argsort(times, kind="stable")
        t = times[self.order]
        self.events = events[self.order]
        self.n_events = int(self.events.sum())
        starts = np.searchsorted(t, t, side="left")
        # one entry per distinct event time: first sorted index and number of events
        ev_starts = starts[self.events]
        self.group_start, self.group_size = np.unique(ev_starts, return_counts=True)
        self.group_size = self.group_size.astype(float)

    def sorted_design(self, Z):
        Z = np.asarray(Z, dtype=float)
        if Z.ndim == 1:
            Z = Z[:, None]
        return Z[self.order]


def _suffix_logsumexp(eta):
    return np.logaddexp.accumulate(eta[::-1])[::-1]


class CoxObjective:
    """Penalized negative log partial likelihood on a fixed design.

    ``value`` is ``-(1/n_events) log L_p(theta) + lam*(a*|theta|_1 + (1-a)/2*|theta|_2^2)``.
    """

    def __init__(self, Z, times, events, lam=0.0, l1_ratio=0.5, risk_sets: RiskSets | None = None):
        self.rs = risk_sets if risk_sets is not None else RiskSets(times, events)
        if self.rs.n_events == 0:
            raise ValueError("the partial likelihood needs at least one event")
        self.Z = self.rs.sorted_design(Z)
        if not np.all(np.isfinite(self.Z)):
            raise ValueError("design matrix must be finite")
        self.p = self.Z.shape[1]
        self.lam = float(lam)
        self.l1_ratio = float(l1_ratio)
        self.z_event_sum = self.Z[self.rs.events].sum(axis=0)

    def _eta(self, theta):
        return self.Z @ theta if self.p else np.zeros(self.rs.n)

    def nll(self, theta) -> float:
        eta = self._eta(np.asarray(theta, dtype=float))
        lse = _suffix_logsumexp(eta)
        rs = self.rs
        return float(-(eta[rs.events].sum() - (rs.group_size * lse[rs.group_start]).sum()) / rs.n_events)

    def penalty(self, theta) -> float:
        theta = np.asarray(theta, dtype=float)
        a = self.l1_ratio
        return self.lam * (a * np.abs(theta).sum() + 0.5 * (1 - a) * theta @ theta)

    def value(self, theta) -> float:
        return self.nll(theta) + self.penalty(theta)

    def _weights(self, eta):
        """exp(eta_k) * sum_{groups g with start <= k} d_g / S0_g, in log space."""
        rs = self.rs
        lse = _suffix_logsumexp(eta)
        mark = np.full(rs.n, -np.inf)
        mark[rs.group_start] = np.log(rs.group_size) - lse[rs.group_start]
        log_c = np.logaddexp.accumulate(mark)
        return lse, np.exp(eta + log_c)

    def gradient(self, theta):
        eta = self._eta(np.asarray(theta, dtype=float))
        _, wc = self._weights(eta)
        return -(self.z_event_sum - self.Z.T @ wc) / self.rs.n_events

    def nll_and_gradient(self, theta):
        theta = np.asarray(theta, dtype=float)
        eta = self._eta(theta)
        lse, wc = self._weights(eta)
        rs = self.rs
        val = -(eta[rs.events].sum() - (rs.group_size * lse[rs.group_start]).sum()) / rs.n_events
        return float(val), -(self.z_event_sum - self.Z.T @ wc) / rs.n_events

    def gradient_hessian(self, theta):
        """Gradient and exact Hessian of the unpenalized part."""
        theta = np.asarray(theta, dtype=float)
        eta = self._eta(theta)
        rs = self.rs
        lse, wc = self._weights(eta)
        grad = -(self.z_event_sum - self.Z.T @ wc) / rs.n_events

        # risk-set means m_g = S1_g / S0_g at each distinct event time
        shift = eta.max()
        w = np.exp(eta - shift)
        s1 = np.cumsum((w[:, None] * self.Z)[::-1], axis=0)[::-1][rs.group_start]
        s0 = np.exp(lse[rs.group_start] - shift)
        bad = ~(s0 > 1e-280)
        means = np.empty_like(s1)
        means[~bad] = s1[~bad] / s0[~bad, None]
        for g in np.flatnonzero(bad):
            start = rs.group_start[g]
            local = np.exp(eta[start:] - eta[start:].max())
            means[g] = local @ self.Z[start:] / local.sum()

        hess = (self.Z.T * wc) @ self.Z - (means.T * rs.group_size) @ means
        return grad, hess / rs.n_events


def neg_log_partial_likelihood(theta, Z, times, events) -> float:
    """``-(1/n_events) log L_p(theta)`` with Breslow ties."""
    return CoxObjective(Z, times, events).nll(theta)


def neg_log_partial_likelihood_with_gradient(theta, Z, times, events):
    return CoxObjective(Z, times, events).nll_and_gradient(theta)


# ---------------------------------------------------------------------------
# elastic-net coordinate descent


@dataclass(frozen=True)
class CoxFit:
    theta: np.ndarray
    lam: float
    l1_ratio: float
    converged: bool
    n_iter: int
    objective: float

    @property
    def nonzero(self) -> int:
        return int(np.count_nonzero(self.theta))


@njit(cache=True)
def _quadratic_cd(theta, grad, hess, l1, l2, tol, max_sweeps):
    """Minimize the penalized second-order model around ``theta`` by cyclic CD."""
    p = theta.size
    beta = theta.copy()
    r = np.zeros(p)  # hess @ (beta - theta)
    for _ in range(max_sweeps):
        biggest = 0.0
        for k in range(p):
            a = hess[k, k]
            denom = a + l2
            if denom <= 0.0:
                continue
            u = a * beta[k] - (grad[k] + r[k])
            if u > l1:
                new = (u - l1) / denom
            elif u < -l1:
                new = (u + l1) / denom
            else:
                new = 0.0
            delta = new - beta[k]
            if delta != 0.0:
                for q in range(p):
                    r[q] += hess[q, k] * delta
                beta[k] = new
                if abs(delta) > biggest:
                    biggest = abs(delta)
        if biggest < tol:
            break
    return beta


def lambda_max(Z, times, events, l1_ratio: float = 0.5) -> float:
    """Smallest penalty at which the all-zero vector is optimal."""
    obj = CoxObjective(Z, times, events)
    return _lambda_max(obj, l1_ratio)


def _lambda_max(obj: CoxObjective, l1_ratio: float) -> float:
    if obj.p == 0:
        return 0.0
    gmax = float(np.abs(obj.gradient(np.zeros(obj.p))).max())
    alpha = max(l1_ratio, 1e-3)
    lam = gmax / alpha
    while lam * alpha < gmax:
        lam = np.nextafter(lam, np.inf)
    return float(lam)


def _fit(obj: CoxObjective, theta0, tol, max_iter, warn=True) -> CoxFit:
    p = obj.p
    l1 = obj.lam * obj.l1_ratio
    l2 = obj.lam * (1.0 - obj.l1_ratio)
    theta = np.zeros(p) if theta0 is None else np.array(theta0, dtype=float)
    current = obj.value(theta)
    if p == 0:
        return CoxFit(theta, obj.lam, obj.l1_ratio, True, 0, current)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        grad, hess = obj.gradient_hessian(theta)
        target = _quadratic_cd(theta, grad, np.ascontiguousarray(hess), l1, l2, tol * 1e-3, 1000)
        step = target - theta
        t = 1.0
        accepted = False
        while t > 1e-12:
            cand = theta + t * step
            val = obj.value(cand)
            if val <= current:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            # no decrease available at working precision
            converged = True
            break
        change = float(np.abs(cand - theta).max())
        theta, current = cand, val
        if change < tol:
            converged = True
            break
    if not converged and warn:
        warnings.warn(f"coordinate descent stopped after {max_iter} iterations", NotConverged, stacklevel=3)
    return CoxFit(theta, obj.lam, obj.l1_ratio, converged, it, float(current))


def fit_coxnet(Z, times, events, lam: float, l1_ratio: float = 0.5, tol: float = 1e-7,
               max_iter: int = 100, theta0=None) -> CoxFit:
    """Elastic-net penalized Cox regression.

    Each outer iteration builds the exact second-order model of the partial
    likelihood, minimizes it (plus penalty) by cyclic coordinate descent with
    soft-thresholding, and backtracks so the penalized objective never
    increases. Stops when the largest coefficient change drops below ``tol``.
    """
    if lam < 0:
        raise ValueError("lam must be >= 0")
    if not 0 <= l1_ratio <= 1:
        raise ValueError("l1_ratio must lie in [0, 1]")
    obj = CoxObjective(Z, times, events, lam, l1_ratio)
    return _fit(obj, theta0, tol, max_iter)


def lambda_path(Z, times, events, l1_ratio: float = 0.5, n_lambdas: int = 1000,
                min_ratio: float = 1e-3, tol: float = 1e-7, max_iter: int = 100):
    """Warm-started fits on a log-spaced grid from ``lambda_max`` down to ``lambda_max*min_ratio``."""
    obj = CoxObjective(Z, times, events, 0.0, l1_ratio)
    lmax = _lambda_max(obj, l1_ratio)
    lams = lmax * np.logspace(0.0, np.log10(min_ratio), n_lambdas) if lmax > 0 else np.zeros(n_lambdas)
    if lmax > 0:
        lams[0] = lmax
    path = []
    theta = np.zeros(obj.p)
    n_failed = 0
    for lam in lams:
        obj.lam = float(lam)
        fit = _fit(obj, theta, tol, max_iter, warn=False)
        n_failed += not fit.converged
        theta = fit.theta
        path.append((float(lam), fit))
    if n_failed:
        warnings.warn(f"{n_failed} of {n_lambdas} path fits did not converge", NotConverged, stacklevel=2)
    return path


# ---------------------------------------------------------------------------
# baseline hazard and prediction


def breslow_baseline(eta, times, events) -> StepFunction:
    """Cumulative baseline hazard ``H0(t) = sum_{t_i <= t, event} d_i / sum_{R(t_i)} exp(eta_j)``."""
    eta = np.asarray(eta, dtype=float)
    rs = RiskSets(times, events)
    t_sorted = np.asarray(times, dtype=float)[rs.order]
    if rs.n_events == 0:
        return StepFunction(np.unique(t_sorted), np.zeros(np.unique(t_sorted).size), 0.0)
    lse = _suffix_logsumexp(eta[rs.order])
    increments = rs.group_size * np.exp(-lse[rs.group_start])
    return StepFunction(t_sorted[rs.group_start], np.cumsum(increments), 0.0)


def predict_survival(eta_i: float, H0: StepFunction) -> StepFunction:
    """``S(t | x) = exp(-H0(t) * exp(eta))``."""
    scale = np.exp(eta_i)
    return H0.map(lambda h: np.exp(-np.asarray(h) * scale), left=float(np.exp(-H0.left_value * scale)))


# ---------------------------------------------------------------------------
# IPCW concordance


@njit(cache=True)
def _concordance_kernel(order, times, ranks, weights, is_case, n_ranks):
    # order: subjects by decreasing time
    tree = np.zeros(n_ranks + 1, dtype=np.int64)
    num = 0.0
    den = 0.0
    inserted = 0
    n = order.size
    g = 0
    while g < n:
        h = g
        t = times[order[g]]
        while h < n and times[order[h]] == t:
            h += 1
        for q in range(g, h):
            i = order[q]
            if not is_case[i] or inserted == 0:
                continue
            r = ranks[i]
            below = 0
            k = r
            while k > 0:
                below += tree[k]
                k -= k & (-k)
            upto = 0
            k = r + 1
            while k > 0:
                upto += tree[k]
                k -= k & (-k)
            num += weights[i] * (below + 0.5 * (upto - below))
            den += weights[i] * inserted
        for q in range(g, h):
            k = ranks[order[q]] + 1
            while k <= n_ranks:
                tree[k] += 1
                k += k & (-k)
            inserted += 1
        g = h
    return num, den


class IPCWConcordance:
    """Uno-style concordance with inverse-probability-of-censoring weights.

    Censoring survival ``G`` is the Kaplan-Meier estimate on the training
    data, evaluated just before each event time. Pairs ``(i, j)`` count when
    ``i`` had an event, ``t_i < t_j`` and ``t_i < tau``; ``i`` is weighted by
    ``G(t_i-)^-2``. Tied risk scores count one half.
    """

    def __init__(self, train_times, train_events, test_times, test_events, tau=None):
        train_times = np.asarray(train_times, dtype=float)
        train_events = np.asarray(train_events, dtype=bool)
        self.times = np.ascontiguousarray(test_times, dtype=float)
        events = np.asarray(test_events, dtype=bool)
        if tau is None:
            tau = train_times[train_events].max() if train_events.any() else np.inf
        self.tau = float(tau)
        self.censoring = kaplan_meier(train_times, train_events, censoring_distribution=True)
        g = np.asarray(self.censoring.left_limit(self.times), dtype=float)
        self.is_case = events & (self.times < self.tau) & (g > 0)
        with np.errstate(divide="ignore"):
            self.weights = np.where(self.is_case, 1.0 / np.where(g > 0, g, 1.0) ** 2, 0.0)
        self.order = np.argsort(-self.times, kind="stable")

    def __call__(self, eta) -> float:
        eta = np.asarray(eta, dtype=float)
        if eta.shape != self.times.shape:
            raise ValueError("one risk score per test subject is required")
        _, ranks = np.unique(eta, return_inverse=True)
        num, den = _concordance_kernel(self.order, self.times, ranks.astype(np.int64), self.weights,
                                       self.is_case, int(ranks.max()) + 1 if ranks.size else 1)
        if den == 0:
            warnings.warn("no comparable pairs; concordance set to 0.5", NoComparablePairs, stacklevel=2)
            return 0.5
        return float(num / den)


def concordance_ipcw(train_times, train_events, test_times, test_events, test_eta, tau=None) -> float:
    """IPCW concordance index in [0, 1]; 0.5 (with a warning) if no pair is comparable."""
    return IPCWConcordance(train_times, train_events, test_times, test_events, tau)(test_eta)
