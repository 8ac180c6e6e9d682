"""Multiplicity-adjusted tests and simultaneous confidence intervals.

Standardized statistics are oriented so that larger values mean stronger
evidence against each one-sided hypothesis.  All tail probabilities come
from one Monte Carlo draw matrix of the joint normal law (antithetic
pairs, fixed seed).  Reusing the same draws for every subset and for the
quantile search makes the closed test internally consistent: the computed
p-values satisfy p_unadjusted <= p_closed <= p_single_step exactly, and
two runs with the same seed are bit-identical.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

from .errors import InvalidCorrelation, TooManyParameters
from .estimators import EstimateVector
from .covariance import CovarianceMatrix

__all__ = [
    "TestStatistics",
    "InferenceReport",
    "build_test_statistics",
    "mvn_max_tail",
    "single_step",
    "closed_test",
    "simultaneous_ci",
    "run_inference",
]

DEFAULT_DRAWS = 1_000_000
MAX_CLOSED_TEST = 15
_EIG_TOL = 1e-8


@dataclass(frozen=True)
class TestStatistics:
    """Oriented standardized statistics and their correlation matrix."""

    T: np.ndarray
    R: np.ndarray
    two_sided: np.ndarray  # per-spec flag: compare |T| against max |Z|
    se: np.ndarray         # standard errors on the analysis scale
    orientation: np.ndarray  # signs applied to (theta - null)/se

    @property
    def m(self) -> int:
        return self.T.size


def _repair_correlation(R: np.ndarray) -> np.ndarray:
    """Clip tiny negative eigenvalues and renormalize the diagonal."""
    R = 0.5 * (R + R.T)
    w, v = np.linalg.eigh(R)
    if w[0] < -_EIG_TOL * max(1.0, w[-1]):
        raise InvalidCorrelation(
            f"correlation matrix indefinite (min eigenvalue {w[0]:.3e})"
        )
    if w[0] >= 0.0:
        return R
    w = np.clip(w, 0.0, None)
    fixed = (v * w) @ v.T
    d = np.sqrt(np.diag(fixed))
    fixed = fixed / np.outer(d, d)
    np.fill_diagonal(fixed, 1.0)
    return 0.5 * (fixed + fixed.T)


def build_test_statistics(ev: EstimateVector, cov: CovarianceMatrix) -> TestStatistics:
    """Standardize the estimates and orient them by each alternative."""
    se = np.sqrt(np.diag(cov.sigma))
    R = cov.sigma / np.outer(se, se)
    signs = np.array(
        [-1.0 if s.alternative == "less" else 1.0 for s in ev.specs]
    )
    two_sided = np.array([s.alternative == "two_sided" for s in ev.specs])
    null = np.array([s.null_value for s in ev.specs])
    T = signs * (ev.theta_hat - null) / se
    R_oriented = _repair_correlation(R * np.outer(signs, signs))
    return TestStatistics(
        T=T, R=R_oriented, two_sided=two_sided, se=se, orientation=signs
    )


def _factor(R: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(R)
    except np.linalg.LinAlgError:
        pass
    try:
        return np.linalg.cholesky(R + 1e-10 * np.eye(R.shape[0]))
    except np.linalg.LinAlgError:
        w, v = np.linalg.eigh(R)
        return v * np.sqrt(np.clip(w, 0.0, None))


class MvnDraws:
    """Antithetic draw matrix from N(0, R), shared by every tail estimate."""

    def __init__(self, R: np.ndarray, draws: int, seed):
        if seed is None:
            raise ValueError("seed is required for MVN tail estimation")
        R = _repair_correlation(np.atleast_2d(np.asarray(R, dtype=float)))
        half = max(1, (int(draws) + 1) // 2)
        rng = np.random.default_rng(seed)
        W = rng.standard_normal((half, R.shape[0]))
        A = _factor(R)
        Z = W @ A.T
        self.Z = np.concatenate([Z, -Z], axis=0)
        self.n = self.Z.shape[0]

    def coords(self, two_sided) -> np.ndarray:
        """Per-draw coordinate values: |Z| for two-sided components."""
        if two_sided is None or not np.any(two_sided):
            return self.Z
        C = self.Z.copy()
        C[:, two_sided] = np.abs(C[:, two_sided])
        return C


def mvn_max_tail(R, c: float, draws: int = DEFAULT_DRAWS, seed=None):
    """Monte Carlo estimates of P{max(Z) >= c} and P{max(|Z|) >= c} for
    Z ~ N(0, R), with standard error at most 0.5/sqrt(draws)."""
    d = MvnDraws(R, draws, seed)
    one_sided = float(np.mean(d.Z.max(axis=1) >= c))
    two_sided = float(np.mean(np.abs(d.Z).max(axis=1) >= c))
    return one_sided, two_sided


def _subset_pvalues(stats: np.ndarray, C: np.ndarray):
    """p-values of every nonempty subset's max-type test, keyed by bitmask."""
    m = stats.size
    p = {}
    for mask in range(1, 1 << m):
        idx = [k for k in range(m) if mask >> k & 1]
        s = stats[idx].max()
        if len(idx) == 1:
            p[mask] = float(np.mean(C[:, idx[0]] >= s))
        else:
            p[mask] = float(np.mean(C[:, idx].max(axis=1) >= s))
    return p


def single_step(ts: TestStatistics, draws: int = DEFAULT_DRAWS, seed=None):
    """Global max-type p-value and single-step adjusted per-parameter
    p-values P{max(Z) >= T_k}."""
    d = MvnDraws(ts.R, draws, seed)
    C = d.coords(ts.two_sided)
    stats = np.where(ts.two_sided, np.abs(ts.T), ts.T)
    max_c = C.max(axis=1)
    p_global = float(np.mean(max_c >= stats.max()))
    p_single = np.array([float(np.mean(max_c >= s)) for s in stats])
    return p_global, p_single


def closed_test(ts: TestStatistics, draws: int = DEFAULT_DRAWS, seed=None):
    """Closed-test adjusted p-values: for each parameter the largest
    p-value among the max-type tests of all subsets containing it."""
    m = ts.m
    if m > MAX_CLOSED_TEST:
        raise TooManyParameters(
            f"closed testing supports at most {MAX_CLOSED_TEST} parameters "
            f"({m} requested); use the single-step adjustment instead"
        )
    d = MvnDraws(ts.R, draws, seed)
    C = d.coords(ts.two_sided)
    stats = np.where(ts.two_sided, np.abs(ts.T), ts.T)
    p_sub = _subset_pvalues(stats, C)
    p_closed = np.empty(m)
    for k in range(m):
        p_closed[k] = max(p for mask, p in p_sub.items() if mask >> k & 1)
    return p_closed


def _tail_quantile(maxv_sorted: np.ndarray, alpha: float, lo: float, hi: float):
    """Smallest q in [lo, hi] with empirical tail P{max >= q} <= alpha,
    found by bisection on the (monotone) empirical tail function."""
    n = maxv_sorted.size

    def tail(q):
        return (n - np.searchsorted(maxv_sorted, q, side="left")) / n

    if tail(lo) <= alpha:
        return lo
    if tail(hi) > alpha:
        return hi
    for _ in range(200):
        if hi - lo <= 1e-12:
            break
        mid = 0.5 * (lo + hi)
        if tail(mid) <= alpha:
            hi = mid
        else:
            lo = mid
    return hi


@dataclass(frozen=True)
class InferenceReport:
    """Tests, adjusted p-values and simultaneous confidence bounds."""

    specs: tuple
    theta_hat: np.ndarray
    se: np.ndarray
    statistics: np.ndarray
    correlation: np.ndarray
    p_unadjusted: np.ndarray
    p_single_step: np.ndarray
    p_closed: np.ndarray | None
    p_global: float
    ci_lower: np.ndarray
    ci_upper: np.ndarray
    ci_lower_report: np.ndarray
    ci_upper_report: np.ndarray
    q_alpha: float
    alpha: float
    sided: int
    mvn_draws: int
    seed: object

    @property
    def p_adjusted(self) -> np.ndarray:
        return self.p_closed if self.p_closed is not None else self.p_single_step


def simultaneous_ci(ts: TestStatistics, ev: EstimateVector, alpha: float,
                    sided: int = 2, draws: int = DEFAULT_DRAWS, seed=None):
    """Simultaneous confidence bounds from the single-step quantile.

    The critical value solves P{max(Z) >= q} = alpha (one-sided) or
    P{max(|Z|) >= q} = alpha (two-sided) on the shared draw matrix; the
    search is restricted to the exact probability bracket
    [z_alpha, z_alpha/m], so with m = 1 the bounds reduce to the
    univariate normal interval.
    """
    d = MvnDraws(ts.R, draws, seed)
    q = _ci_quantile_from_draws(d, ts, alpha, sided)
    lower, upper = _bounds_from_quantile(ts, ev, q, sided)
    return lower, upper, q


def _ci_quantile_from_draws(d: MvnDraws, ts: TestStatistics, alpha: float,
                            sided: int) -> float:
    if not 0.0 < alpha <= 0.5:
        raise ValueError("alpha must lie in (0, 0.5]")
    m = ts.m
    if sided == 2:
        maxv = np.sort(np.abs(d.Z).max(axis=1))
        lo = float(-ndtri(alpha / 2.0))
        hi = float(-ndtri(alpha / (2.0 * m)))
    elif sided == 1:
        C = d.coords(ts.two_sided)
        maxv = np.sort(C.max(axis=1))
        lo = float(-ndtri(alpha))
        hi = float(-ndtri(alpha / m))
    else:
        raise ValueError("sided must be 1 or 2")
    return float(_tail_quantile(maxv, alpha, lo, hi))


def _bounds_from_quantile(ts: TestStatistics, ev: EstimateVector, q: float,
                          sided: int):
    theta = ev.theta_hat
    lower = np.full(ts.m, -np.inf)
    upper = np.full(ts.m, np.inf)
    if sided == 2:
        lower = theta - q * ts.se
        upper = theta + q * ts.se
    else:
        for k, spec in enumerate(ev.specs):
            if spec.alternative == "greater":
                lower[k] = theta[k] - q * ts.se[k]
            elif spec.alternative == "less":
                upper[k] = theta[k] + q * ts.se[k]
            else:
                raise ValueError(
                    "one-sided intervals need one-sided alternatives"
                )
    return lower, upper


def _report_scale_bounds(ev: EstimateVector, lower, upper):
    lo = lower.copy()
    hi = upper.copy()
    for k, spec in enumerate(ev.specs):
        if spec.kind.log_scale:
            lo[k] = math.exp(lower[k]) if np.isfinite(lower[k]) else 0.0
            hi[k] = math.exp(upper[k]) if np.isfinite(upper[k]) else np.inf
    return lo, hi


def run_inference(ev: EstimateVector, cov: CovarianceMatrix, alpha: float = 0.05,
                  sided: int = 2, draws: int = DEFAULT_DRAWS, seed=None,
                  with_closed_test: bool = True) -> InferenceReport:
    """Full inference pass over one estimate vector.

    ``alpha`` is the familywise level of the confidence intervals (and of
    any rejection decisions the caller derives from the p-values);
    ``sided`` selects the interval type, while each test's sidedness
    follows its spec's alternative.
    """
    ts = build_test_statistics(ev, cov)
    d = MvnDraws(ts.R, draws, seed)
    C = d.coords(ts.two_sided)
    stats = np.where(ts.two_sided, np.abs(ts.T), ts.T)

    p_unadj = np.array(
        [float(np.mean(C[:, k] >= stats[k])) for k in range(ts.m)]
    )
    max_c = C.max(axis=1)
    p_single = np.array([float(np.mean(max_c >= s)) for s in stats])
    p_global = float(np.mean(max_c >= stats.max()))

    p_closed_vals = None
    if with_closed_test:
        if ts.m > MAX_CLOSED_TEST:
            raise TooManyParameters(
                f"closed testing supports at most {MAX_CLOSED_TEST} parameters "
                f"({ts.m} requested); use the single-step adjustment instead"
            )
        p_sub = _subset_pvalues(stats, C)
        p_closed_vals = np.array(
            [
                max(p for mask, p in p_sub.items() if mask >> k & 1)
                for k in range(ts.m)
            ]
        )

    q = _ci_quantile_from_draws(d, ts, alpha, sided)
    lower, upper = _bounds_from_quantile(ts, ev, q, sided)
    lo_rep, hi_rep = _report_scale_bounds(ev, lower, upper)

    return InferenceReport(
        specs=ev.specs,
        theta_hat=ev.theta_hat.copy(),
        se=ts.se,
        statistics=ts.T,
        correlation=ts.R,
        p_unadjusted=p_unadj,
        p_single_step=p_single,
        p_closed=p_closed_vals,
        p_global=p_global,
        ci_lower=lower,
        ci_upper=upper,
        ci_lower_report=lo_rep,
        ci_upper_report=hi_rep,
        q_alpha=float(q),
        alpha=alpha,
        sided=sided,
        mvn_draws=d.n,
        seed=seed,
    )
