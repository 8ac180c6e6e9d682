"""Two-sample right-censored survival data and counting-process quantities.

Everything downstream consumes the per-group risk table (distinct event
times, events ``dN``, number at risk ``Y``) and the Nelson-Aalen curve
built from it.  All containers are immutable after construction and all
operations are pure functions, so they are safe to share across workers.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateHazard, EmptyGroup, InvalidRecord, QuantileUndefined

__all__ = [
    "SubjectRecord",
    "RiskTable",
    "HazardCurve",
    "SurvivalSample",
    "build_risk_table",
    "nelson_aalen",
    "quantile_estimate",
    "local_hazard",
]


@dataclass(frozen=True)
class SubjectRecord:
    """One subject: observed time (years), event indicator, group in {0, 1}."""

    time: float
    event: bool
    group: int


def _frozen(a):
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class RiskTable:
    """Aggregated event/censoring layout of one group.

    ``distinct_times`` holds the strictly increasing observed event times,
    ``dN`` the events at each (ties collapsed), ``Y`` the number at risk at
    each (a subject censored exactly at an event time still counts as at
    risk there).  ``n_censored_between`` has one bucket per inter-event
    interval ``[t_j, t_{j+1})``, with a leading ``[0, t_1)`` bucket and a
    trailing open bucket after the last event time.
    """

    distinct_times: np.ndarray
    dN: np.ndarray
    n_censored_between: np.ndarray
    Y: np.ndarray
    n_total: int
    max_observed_time: float

    @property
    def n_events(self) -> int:
        return int(self.dN.sum())

    def cum_events_at(self, t):
        """N(t): number of events in [0, t], as a step lookup."""
        cum = np.concatenate([[0], np.cumsum(self.dN)])
        idx = np.searchsorted(self.distinct_times, t, side="right")
        return cum[idx]


@dataclass(frozen=True)
class HazardCurve:
    """Nelson-Aalen curve of one group.

    ``cum_hazard[j]`` is the cumulative hazard just after the jump at
    ``times[j]``; ``survival = exp(-cum_hazard)`` and ``survival_left`` is
    the left-continuous version (value just before the jump).
    """

    times: np.ndarray
    jumps: np.ndarray
    cum_hazard: np.ndarray
    survival: np.ndarray
    survival_left: np.ndarray
    max_time: float

    def cum_hazard_at(self, t):
        idx = np.searchsorted(self.times, t, side="right")
        cum = np.concatenate([[0.0], self.cum_hazard])
        return cum[idx]

    def survival_at(self, t):
        return np.exp(-self.cum_hazard_at(t))

    def survival_left_at(self, t):
        """S(t-): jumps strictly before t only; equals 1 at t = 0."""
        idx = np.searchsorted(self.times, t, side="left")
        cum = np.concatenate([[0.0], self.cum_hazard])
        return np.exp(-cum[idx])


def _risk_table_from_arrays(times, events) -> RiskTable:
    times = np.asarray(times, dtype=float)
    events = np.asarray(events, dtype=bool)
    if times.size == 0:
        raise EmptyGroup("group contains no records")
    if not np.all(np.isfinite(times)) or np.any(times < 0):
        raise InvalidRecord("times must be finite and non-negative")
    order = np.argsort(times, kind="stable")
    times = times[order]
    events = events[order]

    ev_times = times[events]
    distinct, dN = np.unique(ev_times, return_counts=True)
    # at risk at t: observed time >= t
    Y = times.size - np.searchsorted(times, distinct, side="left")

    cens_times = times[~events]
    buckets = np.searchsorted(distinct, cens_times, side="right")
    n_cens = np.bincount(buckets, minlength=distinct.size + 1)

    return RiskTable(
        distinct_times=_frozen(distinct),
        dN=_frozen(dN.astype(np.int64)),
        n_censored_between=_frozen(n_cens.astype(np.int64)),
        Y=_frozen(Y.astype(np.int64)),
        n_total=int(times.size),
        max_observed_time=float(times[-1]),
    )


def build_risk_table(records, group) -> RiskTable:
    """Aggregate the records of one group into a RiskTable.

    Ties in event times are collapsed into a single distinct time with
    ``dN > 1``.  Raises EmptyGroup if the group has no records and
    InvalidRecord for negative or non-finite times.
    """
    times = [r.time for r in records if r.group == group]
    events = [r.event for r in records if r.group == group]
    if not times:
        raise EmptyGroup(f"no records in group {group}")
    return _risk_table_from_arrays(np.array(times), np.array(events))


def nelson_aalen(rt: RiskTable) -> HazardCurve:
    """Nelson-Aalen cumulative hazard and the survival curve exp(-cumhaz)."""
    with np.errstate(divide="ignore"):
        jumps = rt.dN / rt.Y
    cum = np.cumsum(jumps)
    surv = np.exp(-cum)
    surv_left = np.exp(-(cum - jumps))
    return HazardCurve(
        times=rt.distinct_times,
        jumps=_frozen(jumps),
        cum_hazard=_frozen(cum),
        survival=_frozen(surv),
        survival_left=_frozen(surv_left),
        max_time=rt.max_observed_time,
    )


def quantile_estimate(hc: HazardCurve, gamma: float) -> float:
    """Smallest observed event time t with S(t) <= 1 - gamma.

    Raises QuantileUndefined when the curve never reaches the level within
    the observed follow-up; callers must reject the requesting parameter,
    not silently drop it.
    """
    if not 0.0 < gamma < 1.0:
        raise ValueError("gamma must lie in (0, 1)")
    level = 1.0 - gamma
    hit = hc.survival <= level
    if not hit.any():
        raise QuantileUndefined(
            f"survival never drops to {level:.4g} within follow-up"
        )
    return float(hc.times[int(np.argmax(hit))])


@dataclass(frozen=True)
class SurvivalSample:
    """One group's data with its derived risk table and hazard curve."""

    times: np.ndarray
    events: np.ndarray
    risk_table: RiskTable
    curve: HazardCurve

    @classmethod
    def from_arrays(cls, times, events) -> "SurvivalSample":
        rt = _risk_table_from_arrays(times, events)
        order = np.argsort(np.asarray(times, dtype=float), kind="stable")
        t = np.asarray(times, dtype=float)[order]
        e = np.asarray(events, dtype=bool)[order]
        return cls(
            times=_frozen(t),
            events=_frozen(e),
            risk_table=rt,
            curve=nelson_aalen(rt),
        )

    @classmethod
    def from_records(cls, records, group) -> "SurvivalSample":
        times = np.array([r.time for r in records if r.group == group], dtype=float)
        events = np.array([r.event for r in records if r.group == group], dtype=bool)
        if times.size == 0:
            raise EmptyGroup(f"no records in group {group}")
        return cls.from_arrays(times, events)

    @property
    def n(self) -> int:
        return int(self.times.size)


def local_hazard(rt: RiskTable, times, t_q: float, bandwidth: float = 2.0) -> float:
    """Constant-hazard estimate in an event-count window around ``t_q``.

    The window reaches from the latest event time at which the cumulative
    event count is at least ``bandwidth * sqrt(total events)`` below the
    count at ``t_q`` (or 0) up to the earliest event time at which it is
    that much above (or the last event time).  The estimate is the number
    of events inside the window divided by the exact person-time spent in
    it, summed over the subjects' observed times.
    """
    if bandwidth <= 0:
        raise ValueError("bandwidth must be positive")
    times = np.asarray(times, dtype=float)
    e_total = rt.n_events
    if e_total == 0:
        raise DegenerateHazard("no events in group")
    k = bandwidth * math.sqrt(e_total)
    cum = np.cumsum(rt.dN)
    n_q = rt.cum_events_at(t_q)

    below = rt.distinct_times[cum <= n_q - k]
    t_low = float(below[-1]) if below.size else 0.0
    above = rt.distinct_times[cum >= n_q + k]
    t_up = float(above[0]) if above.size else float(rt.distinct_times[-1])

    n_events_window = int(rt.cum_events_at(t_up) - rt.cum_events_at(t_low))
    person_time = float(np.clip(np.minimum(times, t_up) - t_low, 0.0, None).sum())
    if n_events_window <= 0 or person_time <= 0.0:
        raise DegenerateHazard(
            f"no events in local-hazard window ({t_low:.4g}, {t_up:.4g}]"
        )
    return n_events_window / person_time
