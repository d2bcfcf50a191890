"""KPIs per driver class: income, idle time, traveller waiting time, inequality."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.stats import rankdata

from .choice import Decision
from .errors import ConfigurationError

CLASSES = ("behavioural", "random", "all")
METRICS = ("income_eur", "idle_s", "waiting_s")


@dataclass(frozen=True)
class Stat:
    """Location and spread of one partition; fields are ``None`` when ``n == 0``."""

    n: int
    mean: Optional[float] = None
    median: Optional[float] = None
    std: Optional[float] = None

    @classmethod
    def of(cls, values: Sequence[float]) -> "Stat":
        if len(values) == 0:
            return cls(0)
        arr = np.asarray(values, dtype=float)
        return cls(len(arr), math.fsum(arr) / len(arr), float(np.median(arr)), float(arr.std()))

    @property
    def present(self) -> bool:
        return self.n > 0


@dataclass(frozen=True)
class ClassKpis:
    n_drivers: int
    income_eur: Stat
    idle_s: Stat
    waiting_s: Stat
    gini_income: Optional[float]
    n_completed: int
    n_offers: int
    n_accepts: int

    @property
    def acceptance_rate(self) -> Optional[float]:
        return self.n_accepts / self.n_offers if self.n_offers else None


@dataclass(frozen=True)
class DriverRow:
    driver_id: int
    policy: str
    income_eur: float
    idle_s: float


@dataclass(frozen=True)
class KpiSummary:
    share: Optional[float]
    replication: Optional[int]
    classes: dict
    n_requests: int
    n_completed: int
    n_abandoned: int
    driver_rows: tuple = field(default=(), repr=False)

    def get(self, cls: str) -> Optional[ClassKpis]:
        return self.classes.get(cls)

    @property
    def abandonment_rate(self) -> Optional[float]:
        return self.n_abandoned / self.n_requests if self.n_requests else None


def gini(values: Iterable[float]) -> float:
    """Gini coefficient, sum_ij |x_i - x_j| / (2 n^2 mean).

    Evaluated in O(n log n) from the sorted values; all-zero input gives 0.
    """
    x = np.sort(np.asarray(list(values), dtype=float))
    if x.size == 0:
        raise ValueError("gini of an empty list")
    if np.any(x < 0) or not np.all(np.isfinite(x)):
        raise ValueError("gini needs finite nonnegative values")
    n = x.size
    total = x.sum()
    if total == 0:
        return 0.0
    # sum_ij |x_i - x_j| = 2 * sum_i (2i - n - 1) x_(i), i = 1..n over sorted x
    i = np.arange(1, n + 1)
    return float(2.0 * np.sum((2 * i - n - 1) * x) / (2.0 * n * total))


def summarize(output, share: Optional[float] = None, replication: Optional[int] = None) -> KpiSummary:
    """Class-partitioned KPIs of one run.

    Travellers are attributed to the class of the driver who served them;
    abandoned requests are excluded from waiting times and counted apart.
    """
    policy_of = {d.driver_id: d.policy_class for d in output.drivers}
    waits: dict[str, list] = {c: [] for c in CLASSES}
    for trip in output.trips:
        if trip.completion_time_s is None:
            continue
        w = trip.pickup_time_s - trip.request_time_s
        waits[policy_of[trip.driver_id]].append(w)
        waits["all"].append(w)
    offers = {c: [0, 0] for c in CLASSES}
    for o in output.offers:
        for c in (policy_of[o.driver_id], "all"):
            offers[c][0] += 1
            offers[c][1] += o.decision is Decision.ACCEPT

    classes = {}
    for cls in CLASSES:
        members = [d for d in output.drivers if cls == "all" or d.policy_class == cls]
        if not members:
            continue
        incomes = [d.cumulative_income_eur for d in members]
        classes[cls] = ClassKpis(
            n_drivers=len(members),
            income_eur=Stat.of(incomes),
            idle_s=Stat.of([d.cumulative_idle_s for d in members]),
            waiting_s=Stat.of(waits[cls]),
            gini_income=gini(incomes),
            n_completed=len(waits[cls]),
            n_offers=offers[cls][0],
            n_accepts=offers[cls][1],
        )
    n_completed = len(waits["all"])
    return KpiSummary(
        share=share, replication=replication, classes=classes,
        n_requests=len(output.trips), n_completed=n_completed,
        n_abandoned=sum(1 for t in output.trips if t.status.name == "ABANDONED"),
        driver_rows=tuple(DriverRow(d.driver_id, d.policy_class, d.cumulative_income_eur,
                                    d.cumulative_idle_s) for d in output.drivers),
    )


def spearman(x: Sequence[float], y: Sequence[float]) -> float:
    """Rank correlation with average ranks for ties; 0 when either side is constant."""
    if len(x) != len(y) or len(x) < 2:
        raise ValueError("spearman needs two equally long series of length >= 2")
    rx, ry = rankdata(x), rankdata(y)
    rx, ry = rx - rx.mean(), ry - ry.mean()
    denom = math.sqrt(float(np.sum(rx * rx) * np.sum(ry * ry)))
    if denom == 0:
        return 0.0
    return float(np.sum(rx * ry) / denom)


def coefficient_of_variation(values: Sequence[float]) -> float:
    arr = np.asarray(values, dtype=float)
    sd, mean = float(arr.std()), float(arr.mean())
    if sd == 0:
        return 0.0
    return sd / abs(mean) if mean != 0 else math.inf


@dataclass(frozen=True)
class Trend:
    metric: str
    cls: str
    shares: tuple
    means: tuple
    spearman_rho: Optional[float]
    cv_of_means: Optional[float]


def _metric_value(kpis: ClassKpis, metric: str) -> Optional[float]:
    if metric == "acceptance_rate":
        return kpis.acceptance_rate
    return getattr(kpis, metric).mean


def share_means(summaries: Sequence[KpiSummary], metric: str, cls: str) -> list[tuple[float, float, int]]:
    """``(share, mean over replications, n replications)`` skipping absent partitions."""
    by_share: dict[float, list] = {}
    for s in summaries:
        by_share.setdefault(s.share, [])
        kpis = s.get(cls)
        value = _metric_value(kpis, metric) if kpis is not None else None
        if value is not None:
            by_share[s.share].append(value)
    return [(share, math.fsum(v) / len(v), len(v)) for share, v in sorted(by_share.items()) if v]


def trend_stats(summaries: Sequence[KpiSummary],
                metrics: Sequence[str] = METRICS, classes: Sequence[str] = CLASSES) -> list[Trend]:
    """Per-share replication means, Spearman rho of share vs. mean, and CV of the means."""
    reps: dict[float, int] = {}
    for s in summaries:
        reps[s.share] = reps.get(s.share, 0) + 1
    if len(reps) < 3:
        raise ConfigurationError(f"trend statistics need >= 3 distinct shares, got {len(reps)}")
    if min(reps.values()) < 2:
        raise ConfigurationError("trend statistics need >= 2 replications per share")
    out = []
    for metric in metrics:
        for cls in classes:
            rows = share_means(summaries, metric, cls)
            shares = tuple(r[0] for r in rows)
            means = tuple(r[1] for r in rows)
            rho = spearman(shares, means) if len(rows) >= 2 else None
            cv = coefficient_of_variation(means) if rows else None
            out.append(Trend(metric, cls, shares, means, rho, cv))
    return out
