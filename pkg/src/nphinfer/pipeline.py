"""Dataset-level orchestration: records -> estimates -> covariance -> report."""
from __future__ import annotations

import numpy as np

from .covariance import asymptotic_covariance, perturbation_covariance
from .errors import InvalidRecord
from .estimators import estimate_vector
from .inference import run_inference
from .survdata import SurvivalSample

__all__ = ["split_groups", "analyze_two_samples", "analyze_records"]


def split_groups(records):
    """Partition validated records into the two group samples."""
    groups = {r.group for r in records}
    if not groups <= {0, 1}:
        raise InvalidRecord(f"group labels must be 0 or 1, got {sorted(groups)}")
    s0 = SurvivalSample.from_records(records, 0)
    s1 = SurvivalSample.from_records(records, 1)
    return s0, s1


def analyze_two_samples(s0, s1, specs, alpha=0.05, sided=2,
                        cov_method="asymptotic", adjust_ties=True,
                        n_resamples=25_000, mvn_draws=1_000_000, seed=None,
                        with_closed_test=False, bandwidth=2.0):
    """Full analysis of one two-group dataset."""
    ev = estimate_vector(s0, s1, specs, bandwidth=bandwidth)
    if cov_method == "asymptotic":
        cov = asymptotic_covariance(ev, (s0, s1), adjust_ties=adjust_ties)
    elif cov_method == "perturbation":
        cov = perturbation_covariance(
            (s0, s1), specs, n_resamples=n_resamples, seed=seed,
            adjust_ties=adjust_ties,
        )
    else:
        raise ValueError("cov_method must be 'asymptotic' or 'perturbation'")
    report = run_inference(
        ev, cov, alpha=alpha, sided=sided, draws=mvn_draws, seed=seed,
        with_closed_test=with_closed_test,
    )
    return ev, cov, report


def analyze_records(records, specs, **kwargs):
    s0, s1 = split_groups(records)
    return analyze_two_samples(s0, s1, specs, **kwargs)
