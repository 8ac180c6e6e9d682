"""Parameter estimates for two-sample survival comparisons.

Each estimator returns the treatment-minus-control estimate together with
the per-group influence ingredients (the scale constant ``a``, the weight
process ``H`` evaluated at the group's event times, and the time horizon)
that the covariance assembly consumes.  All estimates live on the analysis
scale; ratio-type parameters are log transformed and only exponentiated
for reporting.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateTransform,
    HorizonBeyondData,
    NonconvergentFit,
)
from .survdata import (
    HazardCurve,
    SurvivalSample,
    local_hazard,
    quantile_estimate,
)

__all__ = [
    "Kind",
    "ParameterSpec",
    "InfluenceIngredients",
    "EstimateVector",
    "estimate_survival_diff",
    "estimate_survival_log_ratio",
    "estimate_cloglog_diff",
    "estimate_quantile_diff",
    "estimate_avg_hazard_ratio",
    "estimate_rmst_diff",
    "estimate_logrank_score",
    "estimate_cox_log_hr",
    "estimate_vector",
]


class Kind(str, enum.Enum):
    """Supported parameter kinds.

    The ``arg`` of a ParameterSpec is a milestone time for the survival
    kinds, a probability for the quantile kinds and a cutoff time for the
    remaining kinds.
    """

    SURVIVAL_DIFF = "S"
    SURVIVAL_LOG_RATIO = "logS"
    CLOGLOG_DIFF = "cloglogS"
    QUANTILE_DIFF = "Q"
    QUANTILE_LOG_RATIO = "logQ"
    AVG_HAZARD_RATIO_LOG = "avgHR"
    RMST_DIFF = "RMST"
    LOGRANK_SCORE = "score"
    COX_LOG_HR = "HR"

    @property
    def log_scale(self) -> bool:
        return self in (
            Kind.SURVIVAL_LOG_RATIO,
            Kind.CLOGLOG_DIFF,
            Kind.QUANTILE_LOG_RATIO,
            Kind.AVG_HAZARD_RATIO_LOG,
            Kind.COX_LOG_HR,
        )

    @property
    def is_quantile(self) -> bool:
        return self in (Kind.QUANTILE_DIFF, Kind.QUANTILE_LOG_RATIO)


_ALTERNATIVES = ("greater", "less", "two_sided")


@dataclass(frozen=True)
class ParameterSpec:
    """Declarative description of one target parameter.

    ``null_value`` is expressed on the analysis scale, so 0 corresponds to
    a ratio of 1 for log-scale kinds.
    """

    kind: Kind
    arg: float
    alternative: str = "two_sided"
    null_value: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        if not self.arg > 0:
            raise ValueError(f"{self.kind.value}: arg must be positive")
        if self.kind.is_quantile and not self.arg < 1:
            raise ValueError(f"{self.kind.value}: quantile level must be in (0, 1)")
        if self.alternative not in _ALTERNATIVES:
            raise ValueError(f"alternative must be one of {_ALTERNATIVES}")
        if not math.isfinite(self.null_value):
            raise ValueError("null_value must be finite")

    def label(self) -> str:
        return f"{self.kind.value}({self.arg:g})"


@dataclass(frozen=True)
class InfluenceIngredients:
    """Per-group ingredients of the martingale representation.

    ``H_at_events`` is aligned with the group's distinct event times;
    entries past ``horizon`` are never used by the covariance assembly.
    """

    a: float
    H_at_events: np.ndarray
    horizon: float


@dataclass(frozen=True)
class EstimateVector:
    """Joint estimates with their per-group components and ingredients."""

    specs: tuple
    theta_hat: np.ndarray
    per_group: np.ndarray  # shape (m, 2): columns are group 0, group 1
    ingredients: tuple      # m pairs (group0, group1) of InfluenceIngredients

    @property
    def m(self) -> int:
        return len(self.specs)

    def report_scale(self) -> np.ndarray:
        out = self.theta_hat.copy()
        for k, spec in enumerate(self.specs):
            if spec.kind.log_scale:
                out[k] = math.exp(out[k])
        return out


def _check_horizon(hc: HazardCurve, t: float, group: int):
    if t > hc.max_time:
        raise HorizonBeyondData(
            f"time {t:g} exceeds observed follow-up {hc.max_time:g} in group {group}"
        )


def _ones_ingredients(hc: HazardCurve, a: float, horizon: float) -> InfluenceIngredients:
    return InfluenceIngredients(
        a=a, H_at_events=np.ones_like(hc.times), horizon=horizon
    )


def estimate_survival_diff(hc0, hc1, t):
    """S1(t) - S0(t) with ingredients a_i = -S_i(t), H = 1."""
    out_pg = []
    ings = []
    for g, hc in enumerate((hc0, hc1)):
        _check_horizon(hc, t, g)
        s = float(hc.survival_at(t))
        out_pg.append(s)
        ings.append(_ones_ingredients(hc, a=-s, horizon=t))
    return tuple(out_pg), tuple(ings)


def estimate_survival_log_ratio(hc0, hc1, t):
    """log S1(t) - log S0(t); the report scale is the survival ratio."""
    out_pg = []
    ings = []
    for g, hc in enumerate((hc0, hc1)):
        _check_horizon(hc, t, g)
        s = float(hc.survival_at(t))
        if s <= 0.0:
            raise DegenerateTransform(f"survival zero at t={t:g} in group {g}")
        out_pg.append(math.log(s))
        ings.append(_ones_ingredients(hc, a=-1.0, horizon=t))
    return tuple(out_pg), tuple(ings)


def estimate_cloglog_diff(hc0, hc1, t):
    """log(-log S1(t)) - log(-log S0(t)); report scale is the
    cumulative-hazard ratio."""
    out_pg = []
    ings = []
    for g, hc in enumerate((hc0, hc1)):
        _check_horizon(hc, t, g)
        lam = float(hc.cum_hazard_at(t))
        if lam <= 0.0:
            raise DegenerateTransform(f"no events by t={t:g} in group {g}")
        out_pg.append(math.log(lam))
        ings.append(_ones_ingredients(hc, a=1.0 / lam, horizon=t))
    return tuple(out_pg), tuple(ings)


def estimate_quantile_diff(samples, gamma, log_scale=False, bandwidth=2.0):
    """Difference (or log ratio) of the gamma-quantiles of the two groups.

    The influence scale is -1/hazard at the quantile (delta-method factor
    1/q extra on the log scale), with the hazard taken from the windowed
    local-hazard estimate.  Horizons are group-specific.
    """
    out_pg = []
    ings = []
    for s in samples:
        q = quantile_estimate(s.curve, gamma)
        lam = local_hazard(s.risk_table, s.times, q, bandwidth=bandwidth)
        if log_scale:
            out_pg.append(math.log(q))
            a = -1.0 / (q * lam)
        else:
            out_pg.append(q)
            a = -1.0 / lam
        ings.append(
            InfluenceIngredients(
                a=a, H_at_events=np.ones_like(s.curve.times), horizon=q
            )
        )
    return tuple(out_pg), tuple(ings)


def estimate_avg_hazard_ratio(samples, cutoff):
    """Log of the weighted average hazard ratio up to ``cutoff``.

    The weight is the product of both groups' left-continuous survival
    curves, so the group integrals are sums of W(s) dN(s)/Y(s) over each
    group's event times.
    """
    s0, s1 = samples
    out_pg = []
    ings = []
    for own, other in ((s0, s1), (s1, s0)):
        times = own.curve.times
        mask = times <= cutoff
        w = own.curve.survival_left * other.curve.survival_left_at(times)
        integral = float(np.sum(w[mask] * own.curve.jumps[mask]))
        if integral <= 0.0:
            raise DegenerateTransform(
                f"no weighted hazard mass up to {cutoff:g} in one group"
            )
        out_pg.append(math.log(integral))
        H = np.where(mask, w, 0.0)
        ings.append(InfluenceIngredients(a=1.0 / integral, H_at_events=H, horizon=cutoff))
    return tuple(out_pg), tuple(ings)


def _rmst_grid(hc: HazardCurve, cutoff: float):
    """Event-time grid on [0, cutoff]: values S(t_j) and widths to the next
    grid point, with t_0 = 0 and the last width ending at the cutoff."""
    mask = hc.times <= cutoff
    t = hc.times[mask]
    s = hc.survival[mask]
    grid_t = np.concatenate([[0.0], t])
    grid_s = np.concatenate([[1.0], s])
    widths = np.diff(np.concatenate([grid_t, [cutoff]]))
    return grid_t, grid_s, widths, mask


def rmst(hc: HazardCurve, cutoff: float) -> float:
    """Area under the survival step function on [0, cutoff]."""
    _, grid_s, widths, _ = _rmst_grid(hc, cutoff)
    return float(np.sum(grid_s * widths))


def estimate_rmst_diff(hc0, hc1, cutoff):
    """Difference in restricted mean survival time up to ``cutoff``.

    H(s) at an event time s is the remaining area under the group's
    survival curve from s to the cutoff.
    """
    out_pg = []
    ings = []
    for g, hc in enumerate((hc0, hc1)):
        _check_horizon(hc, cutoff, g)
        _, grid_s, widths, mask = _rmst_grid(hc, cutoff)
        out_pg.append(float(np.sum(grid_s * widths)))
        # reverse cumulative area, excluding the leading [0, t_1) strip
        areas = np.cumsum((grid_s * widths)[::-1])[::-1]
        H = np.zeros_like(hc.times)
        H[mask] = areas[1:]
        ings.append(InfluenceIngredients(a=1.0, H_at_events=H, horizon=cutoff))
    return tuple(out_pg), tuple(ings)


def _pooled_grid(s0: SurvivalSample, s1: SurvivalSample):
    """Pooled distinct event times with per-group dN and at-risk counts."""
    pooled = np.union1d(s0.curve.times, s1.curve.times)
    dN = []
    Y = []
    for s in (s0, s1):
        d = np.zeros(pooled.size, dtype=np.int64)
        pos = np.searchsorted(pooled, s.curve.times)
        d[pos] = s.risk_table.dN
        dN.append(d)
        Y.append(s.n - np.searchsorted(s.times, pooled, side="left"))
    return pooled, dN[0], dN[1], Y[0], Y[1]


def _at(pooled, values, times):
    """Pick pooled-grid values at the given (sub)grid of times."""
    return values[np.searchsorted(pooled, times)]


def estimate_logrank_score(samples, cutoff):
    """Score statistic U(0) of the two-group partial likelihood up to
    ``cutoff`` (the observed-minus-expected logrank sum).

    The per-group components sum H(s) dN_i(s)/Y_i(s) over each group's own
    event times with the pooled weight H = Y0*Y1/(Y0+Y1); their difference
    equals the observed-minus-expected form identically.
    """
    s0, s1 = samples
    pooled, dN0, dN1, Y0, Y1 = _pooled_grid(s0, s1)
    mask = pooled <= cutoff
    if not np.any((dN0 + dN1)[mask] > 0):
        raise DegenerateTransform(f"no pooled events up to {cutoff:g}")
    with np.errstate(divide="ignore", invalid="ignore"):
        H_pool = np.where(Y0 + Y1 > 0, Y0 * Y1 / (Y0 + Y1), 0.0)
    out_pg = []
    ings = []
    for s in (s0, s1):
        own_mask = s.curve.times <= cutoff
        h = _at(pooled, H_pool, s.curve.times)
        out_pg.append(float(np.sum((h * s.curve.jumps)[own_mask])))
        ings.append(
            InfluenceIngredients(
                a=1.0, H_at_events=np.where(own_mask, h, 0.0), horizon=cutoff
            )
        )
    return tuple(out_pg), tuple(ings)


def logrank_observed_minus_expected(samples, cutoff):
    """U(0) in observed-minus-expected form; used as an independent check
    of the group-decomposed estimate."""
    s0, s1 = samples
    pooled, dN0, dN1, Y0, Y1 = _pooled_grid(s0, s1)
    mask = pooled <= cutoff
    dN = dN0 + dN1
    with np.errstate(divide="ignore", invalid="ignore"):
        expected = np.where(dN > 0, dN * Y1 / (Y0 + Y1), 0.0)
    return float(np.sum((dN1 - expected)[mask]))


def _cox_score_terms(pooled, dN0, dN1, Y0, Y1, cutoff):
    mask = (pooled <= cutoff) & ((dN0 + dN1) > 0)
    return (
        dN0[mask].astype(float),
        dN1[mask].astype(float),
        Y0[mask].astype(float),
        Y1[mask].astype(float),
    )


def _cox_score(beta, dN0, dN1, Y0, Y1):
    eb = math.exp(beta)
    mu = Y1 * eb / (Y0 + Y1 * eb)
    return float(np.sum(dN1 - (dN0 + dN1) * mu))


def _cox_information(beta, dN0, dN1, Y0, Y1):
    eb = math.exp(beta)
    denom = Y0 + Y1 * eb
    return float(np.sum((dN0 + dN1) * Y0 * Y1 * eb / denom**2))


_COX_BRACKET = 20.0
_COX_MAX_ITER = 50
_COX_TOL = 1e-8


def estimate_cox_log_hr(samples, cutoff):
    """Two-group Cox log hazard ratio up to ``cutoff`` by a damped Newton
    solve of the partial-likelihood score.

    Raises NonconvergentFit when the score does not change sign on
    [-20, 20] (monotone likelihood) or the iteration budget is exhausted.
    """
    s0, s1 = samples
    pooled, dN0p, dN1p, Y0p, Y1p = _pooled_grid(s0, s1)
    dN0, dN1, Y0, Y1 = _cox_score_terms(pooled, dN0p, dN1p, Y0p, Y1p, cutoff)
    if dN0.size + dN1.size == 0 or not np.any(dN0 + dN1 > 0):
        raise DegenerateTransform(f"no pooled events up to {cutoff:g}")

    # the score is decreasing in beta; a root needs a sign change
    if _cox_score(-_COX_BRACKET, dN0, dN1, Y0, Y1) < 0 or _cox_score(
        _COX_BRACKET, dN0, dN1, Y0, Y1
    ) > 0:
        raise NonconvergentFit("monotone partial likelihood, no finite root")

    beta = 0.0
    u = _cox_score(beta, dN0, dN1, Y0, Y1)
    for _ in range(_COX_MAX_ITER):
        if abs(u) < _COX_TOL:
            break
        info = _cox_information(beta, dN0, dN1, Y0, Y1)
        step = u / info
        # damp: halve until the score magnitude decreases
        for _ in range(60):
            cand = beta + step
            u_cand = _cox_score(cand, dN0, dN1, Y0, Y1)
            if abs(u_cand) < abs(u):
                break
            step *= 0.5
        beta, u = cand, u_cand
    if abs(u) >= _COX_TOL:
        raise NonconvergentFit("Newton iteration cap exceeded")

    info = _cox_information(beta, dN0, dN1, Y0, Y1)
    eb = math.exp(beta)
    a = 1.0 / info
    with np.errstate(divide="ignore", invalid="ignore"):
        denom = Y0p + Y1p * eb
        H0_pool = np.where(denom > 0, Y0p * Y1p / denom, 0.0)
        H1_pool = H0_pool * eb
    out_pg = (0.0, beta)
    ings = []
    for s, H_pool in ((s0, H0_pool), (s1, H1_pool)):
        own_mask = s.curve.times <= cutoff
        h = _at(pooled, H_pool, s.curve.times)
        ings.append(
            InfluenceIngredients(
                a=a, H_at_events=np.where(own_mask, h, 0.0), horizon=cutoff
            )
        )
    return out_pg, tuple(ings)


def estimate_vector(sample0, sample1, specs, bandwidth=2.0) -> EstimateVector:
    """Estimate every spec on a two-group dataset."""
    specs = tuple(specs)
    samples = (sample0, sample1)
    hc0, hc1 = sample0.curve, sample1.curve
    per_group = np.empty((len(specs), 2))
    ingredients = []
    for k, spec in enumerate(specs):
        kind = spec.kind
        if kind is Kind.SURVIVAL_DIFF:
            pg, ing = estimate_survival_diff(hc0, hc1, spec.arg)
        elif kind is Kind.SURVIVAL_LOG_RATIO:
            pg, ing = estimate_survival_log_ratio(hc0, hc1, spec.arg)
        elif kind is Kind.CLOGLOG_DIFF:
            pg, ing = estimate_cloglog_diff(hc0, hc1, spec.arg)
        elif kind is Kind.QUANTILE_DIFF:
            pg, ing = estimate_quantile_diff(samples, spec.arg, False, bandwidth)
        elif kind is Kind.QUANTILE_LOG_RATIO:
            pg, ing = estimate_quantile_diff(samples, spec.arg, True, bandwidth)
        elif kind is Kind.AVG_HAZARD_RATIO_LOG:
            pg, ing = estimate_avg_hazard_ratio(samples, spec.arg)
        elif kind is Kind.RMST_DIFF:
            pg, ing = estimate_rmst_diff(hc0, hc1, spec.arg)
        elif kind is Kind.LOGRANK_SCORE:
            pg, ing = estimate_logrank_score(samples, spec.arg)
        elif kind is Kind.COX_LOG_HR:
            pg, ing = estimate_cox_log_hr(samples, spec.arg)
        else:  # pragma: no cover
            raise ValueError(f"unknown kind {kind}")
        per_group[k] = pg
        ingredients.append(ing)
    theta = per_group[:, 1] - per_group[:, 0]
    return EstimateVector(
        specs=specs,
        theta_hat=theta,
        per_group=per_group,
        ingredients=tuple(ingredients),
    )
