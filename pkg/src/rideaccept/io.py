"""CSV serialisation of run outputs, summaries and trends.

Every file starts with one ``#`` comment row carrying the config digest and
seed, followed by a header. Floats are written with ``repr`` so they
round-trip exactly; missing values are empty fields.
"""

from __future__ import annotations

import csv
import io
from pathlib import Path
from typing import Iterable, Optional, Sequence

TRIPS_HEADER = ["request_id", "traveller_id", "driver_id", "request_time_s", "pickup_time_s",
                "completion_time_s", "distance_m", "status"]
DRIVERS_HEADER = ["driver_id", "policy", "income_eur", "idle_s", "enroute_s", "inservice_s",
                  "n_trips", "n_offers", "n_accepts"]
OFFERS_HEADER = ["offer_id", "request_id", "driver_id", "pickup_min", "waiting_min", "time1loc",
                 "rlrd", "utility", "probability", "decision"]
SUMMARY_HEADER = ["share", "replication", "class", "metric", "n", "mean", "median", "std", "gini"]
TREND_HEADER = ["metric", "class", "spearman_rho", "cv_of_means"]
SHARE_MEANS_HEADER = ["metric", "class", "share", "n_replications", "mean"]
DISTRIBUTION_HEADER = ["share", "replication", "driver_id", "policy", "income_eur", "idle_s"]
SENSITIVITY_HEADER = ["attribute", "value", "probability"]
RANKING_HEADER = ["attribute", "delta_probability", "rank"]
CALIBRATION_HEADER = ["seed", "n_offers", "n_accepts", "rate"]


def fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, float):
        return repr(value)
    if hasattr(value, "value") and not isinstance(value, (int, str)):
        return str(value.value)
    return str(value)


def render(header: Sequence[str], rows: Iterable[Sequence], meta: Optional[dict] = None) -> str:
    buf = io.StringIO()
    if meta:
        buf.write("# " + ",".join(f"{k}={fmt(v)}" for k, v in meta.items()) + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([fmt(v) for v in row])
    return buf.getvalue()


def write_csv(path: Path, header, rows, meta=None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(render(header, rows, meta))
    return path


def read_csv(path: Path) -> list[dict[str, str]]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(line for line in fh if not line.startswith("#")))


def trip_rows(output):
    for t in output.trips:
        yield (t.request_id, t.traveller_id, t.driver_id, t.request_time_s, t.pickup_time_s,
               t.completion_time_s, t.trip_distance_m, t.status.name.lower())


def driver_rows(output):
    for d in output.drivers:
        yield (d.driver_id, d.policy_class, d.cumulative_income_eur, d.cumulative_idle_s,
               d.cumulative_enroute_s, d.cumulative_inservice_s, d.n_trips, d.n_offers, d.n_accepts)


def offer_rows(output):
    for o in output.offers:
        yield (o.offer_id, o.request_id, o.driver_id, o.pickup_min, o.waiting_min, o.time1loc,
               o.rlrd, o.utility, o.probability, o.decision.value)


def write_output(output, out_dir: Path) -> list[Path]:
    out_dir = Path(out_dir)
    meta = output.metadata
    return [
        write_csv(out_dir / "trips.csv", TRIPS_HEADER, trip_rows(output), meta),
        write_csv(out_dir / "drivers.csv", DRIVERS_HEADER, driver_rows(output), meta),
        write_csv(out_dir / "offers.csv", OFFERS_HEADER, offer_rows(output), meta),
    ]


def summary_rows(summaries):
    from .metrics import CLASSES, METRICS

    for s in summaries:
        for cls in CLASSES:
            kpis = s.get(cls)
            if kpis is None:
                continue
            for metric in METRICS:
                stat = getattr(kpis, metric)
                gini = kpis.gini_income if metric == "income_eur" else None
                yield (s.share, s.replication, cls, metric, stat.n, stat.mean, stat.median, stat.std, gini)
            yield (s.share, s.replication, cls, "acceptance_rate", kpis.n_offers,
                   kpis.acceptance_rate, None, None, None)
        yield (s.share, s.replication, "all", "abandonment_rate", s.n_requests,
               s.abandonment_rate, None, None, None)


def trend_rows(trends):
    for t in trends:
        yield (t.metric, t.cls, t.spearman_rho, t.cv_of_means)


def share_mean_rows(trends):
    for t in trends:
        for share, mean in zip(t.shares, t.means):
            yield (t.metric, t.cls, share, None, mean)
