"""Joint covariance of the estimate vector.

Two routes: the asymptotic counting-process formula (per-group sums of
``a_k a_k' H_k(s) H_k'(s) dN(s)/Y(s)^2`` up to the smaller horizon, with an
optional tie correction replacing ``dN/Y^2`` by ``sum_j 1/(Y-j)^2``), and a
perturbation resampling alternative that adds a mean-zero Gaussian process
with the same increment variances to each cumulative-hazard curve and
recomputes the whole estimate vector per resample.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import polygamma

from .errors import DegenerateVariance, PerturbationFailure
from .estimators import EstimateVector, Kind, estimate_cox_log_hr
from .survdata import SurvivalSample

__all__ = [
    "CovarianceMatrix",
    "asymptotic_covariance",
    "perturbation_covariance",
]


@dataclass(frozen=True)
class CovarianceMatrix:
    """Symmetric PSD covariance with provenance."""

    sigma: np.ndarray
    method: str  # "asymptotic" | "perturbation"
    ties_adjusted: bool
    per_group: tuple | None = None  # (sigma0, sigma1) for the asymptotic route

    @property
    def m(self) -> int:
        return self.sigma.shape[0]


def martingale_jump_weights(rt, adjust_ties: bool) -> np.ndarray:
    """Variance weight of the cumulative-hazard jump at each event time.

    Without tie adjustment this is dN/Y^2; with it, the exact sum
    1/Y^2 + 1/(Y-1)^2 + ... over the dN tied events, evaluated through the
    trigamma function.
    """
    Y = rt.Y.astype(float)
    dN = rt.dN.astype(float)
    if not adjust_ties:
        return dN / Y**2
    # sum_{j=0}^{dN-1} 1/(Y-j)^2 = psi'(Y-dN+1) - psi'(Y+1)
    return polygamma(1, Y - dN + 1.0) - polygamma(1, Y + 1.0)


def _group_sigma(ev: EstimateVector, sample: SurvivalSample, group: int,
                 adjust_ties: bool) -> np.ndarray:
    rt = sample.risk_table
    w = martingale_jump_weights(rt, adjust_ties)
    m = ev.m
    G = np.zeros((m, rt.distinct_times.size))
    for k in range(m):
        ing = ev.ingredients[k][group]
        mask = rt.distinct_times <= ing.horizon
        G[k] = ing.a * ing.H_at_events * mask
    sigma = (G * w) @ G.T
    return 0.5 * (sigma + sigma.T)


def asymptotic_covariance(ev: EstimateVector, samples, adjust_ties: bool = True
                          ) -> CovarianceMatrix:
    """Assemble the joint covariance from the influence ingredients.

    Each group's contribution is PSD by construction; their sum is the
    covariance of the estimate vector.  Raises DegenerateVariance naming
    the spec whose diagonal entry vanishes.
    """
    s0, s1 = samples
    sigma0 = _group_sigma(ev, s0, 0, adjust_ties)
    sigma1 = _group_sigma(ev, s1, 1, adjust_ties)
    sigma = sigma0 + sigma1
    diag = np.diag(sigma)
    if np.any(diag <= 0.0):
        k = int(np.argmax(diag <= 0.0))
        raise DegenerateVariance(
            f"zero variance for {ev.specs[k].label()}; cannot standardize"
        )
    return CovarianceMatrix(
        sigma=sigma,
        method="asymptotic",
        ties_adjusted=adjust_ties,
        per_group=(sigma0, sigma1),
    )


class _PerturbedCurves:
    """Fixed per-group grids plus machinery to evaluate a block of
    perturbed cumulative-hazard curves on them."""

    def __init__(self, sample: SurvivalSample, adjust_ties: bool):
        rt = sample.risk_table
        self.times = sample.curve.times
        self.jumps = sample.curve.jumps
        self.cum = sample.curve.cum_hazard
        # one normal per distinct event time: the sum of the per-subject
        # contributions at a tied time is again normal with the summed
        # variance, so a single draw with that spread is equivalent
        self.jump_sd = np.sqrt(martingale_jump_weights(rt, adjust_ties))
        self.max_time = sample.curve.max_time

    def sample_cum(self, rng, n: int) -> np.ndarray:
        """(n, n_times) perturbed cumulative hazards on the event grid."""
        z = rng.standard_normal((n, self.times.size))
        return self.cum + np.cumsum(z * self.jump_sd, axis=1)

    def value_at(self, cum_block: np.ndarray, t: float) -> np.ndarray:
        idx = np.searchsorted(self.times, t, side="right")
        if idx == 0:
            return np.zeros(cum_block.shape[0])
        return cum_block[:, idx - 1]

    def left_cum_at(self, cum_block: np.ndarray, times: np.ndarray) -> np.ndarray:
        """Left-continuous lookup at arbitrary times (block columns)."""
        idx = np.searchsorted(self.times, times, side="left")
        padded = np.concatenate(
            [np.zeros((cum_block.shape[0], 1)), cum_block], axis=1
        )
        return padded[:, idx]


def _block_theta(spec, curves, cums, grids, pooled_cache):
    """Per-resample estimates of one spec over a block.

    Returns (values, valid mask); invalid resamples are rejected upstream.
    """
    kind = spec.kind
    c0, c1 = curves
    b0, b1 = cums
    n = b0.shape[0]
    valid = np.ones(n, dtype=bool)

    if kind in (Kind.SURVIVAL_DIFF, Kind.SURVIVAL_LOG_RATIO, Kind.CLOGLOG_DIFF):
        l0 = c0.value_at(b0, spec.arg)
        l1 = c1.value_at(b1, spec.arg)
        if kind is Kind.SURVIVAL_DIFF:
            return np.exp(-l1) - np.exp(-l0), valid
        if kind is Kind.SURVIVAL_LOG_RATIO:
            return l0 - l1, valid
        valid = (l0 > 0) & (l1 > 0)
        out = np.full(n, np.nan)
        out[valid] = np.log(l1[valid]) - np.log(l0[valid])
        return out, valid

    if kind.is_quantile:
        level = -math.log(1.0 - spec.arg)  # S <= 1-gamma  <=>  cumhaz >= level
        qs = []
        for c, b in ((c0, b0), (c1, b1)):
            hit = b >= level
            any_hit = hit.any(axis=1)
            valid &= any_hit
            idx = np.argmax(hit, axis=1)
            qs.append(np.where(any_hit, c.times[idx], np.nan))
        q0, q1 = qs
        if kind is Kind.QUANTILE_DIFF:
            return q1 - q0, valid
        out = np.full(n, np.nan)
        out[valid] = np.log(q1[valid]) - np.log(q0[valid])
        return out, valid

    if kind is Kind.RMST_DIFF:
        vals = []
        for c, b in ((c0, b0), (c1, b1)):
            g = grids[c][("rmst", spec.arg)]
            surv = np.exp(-b[:, g["mask"]])
            area = g["first_width"] + surv @ g["widths"]
            vals.append(area)
        return vals[1] - vals[0], valid

    if kind is Kind.AVG_HAZARD_RATIO_LOG:
        integrals = []
        for (c_own, b_own), (c_oth, b_oth) in (((c0, b0), (c1, b1)),
                                               ((c1, b1), (c0, b0))):
            g = grids[c_own][("avghr", spec.arg)]
            mask = g["event_mask"]
            own_left = np.exp(-np.concatenate(
                [np.zeros((n, 1)), b_own[:, :-1]], axis=1)[:, mask])
            oth_left = np.exp(-c_oth.left_cum_at(b_oth, c_own.times[mask]))
            jumps = np.diff(
                np.concatenate([np.zeros((n, 1)), b_own], axis=1), axis=1
            )[:, mask]
            integrals.append(np.sum(own_left * oth_left * jumps, axis=1))
        i0, i1 = integrals
        valid = (i0 > 0) & (i1 > 0)
        out = np.full(n, np.nan)
        out[valid] = np.log(i1[valid]) - np.log(i0[valid])
        return out, valid

    if kind in (Kind.LOGRANK_SCORE, Kind.COX_LOG_HR):
        pc = pooled_cache
        d0 = np.diff(np.concatenate([np.zeros((n, 1)), b0], axis=1), axis=1)
        d1 = np.diff(np.concatenate([np.zeros((n, 1)), b1], axis=1), axis=1)
        # group jumps mapped onto the pooled grid
        D0 = np.zeros((n, pc["pooled"].size))
        D1 = np.zeros((n, pc["pooled"].size))
        D0[:, pc["pos0"]] = d0
        D1[:, pc["pos1"]] = d1
        mask = pc["pooled"] <= spec.arg
        Y0 = pc["Y0"]
        Y1 = pc["Y1"]
        if kind is Kind.LOGRANK_SCORE:
            with np.errstate(divide="ignore", invalid="ignore"):
                H = np.where(Y0 + Y1 > 0, Y0 * Y1 / (Y0 + Y1), 0.0)
            return np.sum((H * mask) * (D1 - D0), axis=1), valid

        # vectorized damped Newton across the block
        A0 = (D0 * mask)
        A1 = (D1 * mask)

        def score(beta):
            eb = np.exp(beta)[:, None]
            denom = Y0 + Y1 * eb
            with np.errstate(divide="ignore", invalid="ignore"):
                h = np.where(denom > 0, Y0 * Y1 / denom, 0.0)
            return np.sum(h * A1 - h * eb * A0, axis=1)

        beta = np.zeros(n)
        lo_ok = score(np.full(n, -20.0)) > 0
        hi_ok = score(np.full(n, 20.0)) < 0
        valid = lo_ok & hi_ok
        u = score(beta)
        for _ in range(50):
            if np.all(np.abs(u[valid]) < 1e-8):
                break
            eb = np.exp(beta)[:, None]
            denom = Y0 + Y1 * eb
            with np.errstate(divide="ignore", invalid="ignore"):
                info = np.sum(
                    np.where(denom > 0, (A0 + A1) * Y0 * Y1 * eb / denom**2, 0.0),
                    axis=1,
                )
            step = np.where(info > 0, u / np.maximum(info, 1e-300), 0.0)
            for _ in range(60):
                cand = beta + step
                u_cand = score(cand)
                worse = (np.abs(u_cand) >= np.abs(u)) & (np.abs(u) >= 1e-8) & valid
                if not worse.any():
                    break
                step = np.where(worse, step * 0.5, step)
            move = valid & (np.abs(u) >= 1e-8)
            beta = np.where(move, beta + step, beta)
            u = score(beta)
        valid &= np.abs(u) < 1e-8
        out = np.where(valid, beta, np.nan)
        return out, valid

    raise ValueError(f"unknown kind {kind}")  # pragma: no cover


def perturbation_covariance(samples, specs, n_resamples: int = 25_000,
                            seed=None, adjust_ties: bool = True,
                            block_size: int = 4096) -> CovarianceMatrix:
    """Covariance of the estimate vector by perturbation resampling.

    Each resample adds independent mean-zero normal jumps (variance equal
    to the martingale jump weights) to both cumulative-hazard curves and
    recomputes every parameter from the perturbed curves; degenerate
    resamples are rejected and redrawn, with a cap of ten times the
    requested count before PerturbationFailure.  Deterministic for a fixed
    seed; the perturbed curves are used as-is without monotonization.
    """
    if n_resamples < 2:
        raise ValueError("n_resamples must be at least 2")
    if seed is None:
        raise ValueError("seed is required for perturbation resampling")
    specs = tuple(specs)
    s0, s1 = samples
    c0 = _PerturbedCurves(s0, adjust_ties)
    c1 = _PerturbedCurves(s1, adjust_ties)

    # static grids reused by every block
    grids = {c0: {}, c1: {}}
    for c in (c0, c1):
        for spec in specs:
            if spec.kind is Kind.RMST_DIFF and ("rmst", spec.arg) not in grids[c]:
                mask = c.times <= spec.arg
                grid_t = np.concatenate([[0.0], c.times[mask]])
                widths = np.diff(np.concatenate([grid_t, [spec.arg]]))
                grids[c][("rmst", spec.arg)] = {
                    "mask": mask,
                    "first_width": widths[0],
                    "widths": widths[1:],
                }
            if (spec.kind is Kind.AVG_HAZARD_RATIO_LOG
                    and ("avghr", spec.arg) not in grids[c]):
                grids[c][("avghr", spec.arg)] = {"event_mask": c.times <= spec.arg}

    pooled_cache = None
    if any(s.kind in (Kind.LOGRANK_SCORE, Kind.COX_LOG_HR) for s in specs):
        from .estimators import _pooled_grid

        pooled, dN0, dN1, Y0, Y1 = _pooled_grid(s0, s1)
        pooled_cache = {
            "pooled": pooled,
            "pos0": np.searchsorted(pooled, c0.times),
            "pos1": np.searchsorted(pooled, c1.times),
            "Y0": Y0.astype(float),
            "Y1": Y1.astype(float),
        }

    root = np.random.SeedSequence(seed)
    accepted = []
    n_accepted = 0
    n_drawn = 0
    cap = 10 * n_resamples
    while n_accepted < n_resamples:
        if n_drawn >= cap:
            raise PerturbationFailure(
                f"more than {cap} perturbation draws rejected as degenerate"
            )
        n_block = min(block_size, cap - n_drawn)
        # one child stream per block, in spawn order: deterministic for a
        # fixed seed independent of how blocks are scheduled
        rng = np.random.default_rng(root.spawn(1)[0])
        b0 = c0.sample_cum(rng, n_block)
        b1 = c1.sample_cum(rng, n_block)
        n_drawn += n_block
        thetas = np.empty((n_block, len(specs)))
        valid = np.ones(n_block, dtype=bool)
        for j, spec in enumerate(specs):
            vals, ok = _block_theta(spec, (c0, c1), (b0, b1), grids, pooled_cache)
            thetas[:, j] = vals
            valid &= ok
        if valid.any():
            accepted.append(thetas[valid])
            n_accepted += int(valid.sum())

    theta_star = np.concatenate(accepted, axis=0)[:n_resamples]
    sigma = np.cov(theta_star, rowvar=False, ddof=1)
    sigma = np.atleast_2d(sigma)
    sigma = 0.5 * (sigma + sigma.T)
    return CovarianceMatrix(
        sigma=sigma, method="perturbation", ties_adjusted=adjust_ties
    )
