"""Command-line entry point: ``rideaccept {run,calibrate,sweep,sensitivity,validate-graph}``."""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

from . import io
from .choice import calibration_counts, pooled_rate, sensitivity_ranking, sensitivity_sweep
from .config import RunConfig, parse_config
from .engine import run
from .errors import ConfigurationError, RideAcceptError
from .metrics import trend_stats
from .scenario import calibration_seeds, run_sweep

log = logging.getLogger("rideaccept")

FIG3_SHARE = 0.5


def _meta(config: RunConfig, seed=None, **extra) -> dict:
    meta = {"config_digest": config.digest(), "seed": config.master_seed if seed is None else seed}
    meta.update(extra)
    return meta


def _check(path: Path, header: Sequence[str], n_rows: int) -> None:
    rows = io.read_csv(path)
    with open(path) as fh:
        lines = [line for line in fh if not line.startswith("#")]
    if lines[0].rstrip("\n").split(",") != list(header) or len(rows) != n_rows:
        raise RideAcceptError(f"output validation failed for {path}")


def _write(path: Path, header, rows, meta) -> Path:
    rows = list(rows)
    io.write_csv(path, header, rows, meta)
    _check(path, header, len(rows))
    return path


def _calibration_key(config: RunConfig) -> str:
    keep = config.with_values(behavioural_share=1.0, shares=[1.0], replications=1)
    return keep.digest()


def cmd_calibrate(config: RunConfig, out_dir: Path, graph=None) -> float:
    """Pooled acceptance rate of an all-behavioural fleet; writes ``calibration.csv``."""
    graph = graph if graph is not None else config.graph()
    scenario = replace(config.scenario(), behavioural_share=1.0)
    seeds = calibration_seeds(config.master_seed, config.calibration_runs)
    counts = calibration_counts(scenario, graph, seeds)
    p = pooled_rate(counts)
    rows = [(s, n, a, a / n if n else None) for s, n, a in counts]
    rows.append(("pooled", sum(c[1] for c in counts), sum(c[2] for c in counts), p))
    _write(out_dir / "calibration.csv", io.CALIBRATION_HEADER, rows,
           _meta(config, calibration_key=_calibration_key(config)))
    log.info("calibrated random-class acceptance probability: %.6f", p)
    return p


def _stored_calibration(config: RunConfig, out_dir: Path) -> Optional[float]:
    path = out_dir / "calibration.csv"
    if not path.exists():
        return None
    with open(path) as fh:
        first = fh.readline()
    if f"calibration_key={_calibration_key(config)}" not in first:
        return None
    for row in io.read_csv(path):
        if row["seed"] == "pooled":
            return float(row["rate"])
    return None


def calibrated_probability(config: RunConfig, out_dir: Path, graph=None) -> float:
    """Configured value, else a matching ``calibration.csv``, else a fresh calibration."""
    if config.calibrated_p is not None:
        return config.calibrated_p
    stored = _stored_calibration(config, out_dir)
    if stored is not None:
        return stored
    return cmd_calibrate(config, out_dir, graph)


def cmd_run(config: RunConfig, out_dir: Path, seed: Optional[int] = None) -> list[Path]:
    graph = config.graph()
    scenario = config.scenario()
    seed = config.master_seed if seed is None else seed
    p = None
    if scenario.n_behavioural < scenario.n_drivers:
        p = calibrated_probability(config, out_dir, graph)
    output = run(scenario, graph, seed, calibrated_p=p)
    meta = _meta(config, seed, calibrated_p=p, horizon_s=output.horizon_s, end_time_s=output.end_time_s)
    return [
        _write(out_dir / "trips.csv", io.TRIPS_HEADER, io.trip_rows(output), meta),
        _write(out_dir / "drivers.csv", io.DRIVERS_HEADER, io.driver_rows(output), meta),
        _write(out_dir / "offers.csv", io.OFFERS_HEADER, io.offer_rows(output), meta),
    ]


def cmd_sweep(config: RunConfig, out_dir: Path, jobs: Optional[int] = None) -> list[Path]:
    """Behavioural-share sweep: summary, trends, per-share means, 50/50 driver distributions."""
    graph = config.graph()
    p = calibrated_probability(config, out_dir, graph)
    summaries = run_sweep(config.plan(), config.scenario(), graph, p, jobs=jobs or config.jobs)
    meta = _meta(config, calibrated_p=p)
    written = [_write(out_dir / "summary.csv", io.SUMMARY_HEADER, io.summary_rows(summaries), meta)]
    try:
        trends = trend_stats(summaries, metrics=("income_eur", "idle_s", "waiting_s", "acceptance_rate"))
    except ConfigurationError as exc:
        log.warning("skipping trend report: %s", exc)
        trends = None
    if trends is not None:
        written.append(_write(out_dir / "trend.csv", io.TREND_HEADER, io.trend_rows(trends), meta))
        rows = [(m, c, s, sum(1 for x in summaries if x.share == s and x.get(c) is not None), v)
                for m, c, s, _, v in io.share_mean_rows(trends)]
        written.append(_write(out_dir / "share_means.csv", io.SHARE_MEANS_HEADER, rows, meta))
    fig3 = [s for s in summaries if s.share is not None and abs(s.share - FIG3_SHARE) < 1e-9]
    if fig3:
        rows = [(s.share, s.replication, d.driver_id, d.policy, d.income_eur, d.idle_s)
                for s in fig3 for d in s.driver_rows]
        written.append(_write(out_dir / "distribution_50.csv", io.DISTRIBUTION_HEADER, rows, meta))
    if config.plots:
        from .plots import sweep_plots
        written.extend(sweep_plots(summaries, trends, fig3, out_dir))
    return written


def cmd_sensitivity(config: RunConfig, out_dir: Path) -> list[Path]:
    model = config.choice_model()
    grids = config.sensitivity_grids()
    meta = _meta(config)
    written = []
    for attribute, grid in grids.items():
        curve = sensitivity_sweep(model, attribute, grid)
        written.append(_write(out_dir / f"sensitivity_{attribute}.csv", io.SENSITIVITY_HEADER,
                              [(attribute, v, p) for v, p in curve], meta))
    ranking = sensitivity_ranking(model, grids)
    written.append(_write(out_dir / "sensitivity_ranking.csv", io.RANKING_HEADER,
                          [(a, dp, i + 1) for i, (a, dp) in enumerate(ranking)], meta))
    if config.plots:
        from .plots import sensitivity_plot
        written.append(sensitivity_plot(model, grids, out_dir))
    return written


def cmd_validate_graph(config: RunConfig) -> str:
    graph = config.graph()
    central = sum(1 for e in graph.edges if abs(e.speed_mps - config.central_speed_kmh / 3.6) < 1e-12)
    return (f"nodes={graph.n_nodes} edges={graph.n_edges} central_edges={central} "
            f"outer_edges={graph.n_edges - central} strongly_connected=yes")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rideaccept", description=__doc__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="TOML run configuration")
    common.add_argument("--out", type=Path, help="output directory (overrides out_dir)")
    common.add_argument("--seed", type=int, help="seed (overrides master_seed)")
    common.add_argument("--jobs", type=int, help="parallel sweep cells (overrides jobs)")
    common.add_argument("--plots", action="store_true", help="also write SVG charts")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in [("run", "single simulation run"),
                        ("calibrate", "calibrate the random-class acceptance probability"),
                        ("sweep", "behavioural-share sweep"),
                        ("sensitivity", "acceptance probability vs. each attribute"),
                        ("validate-graph", "load and check the road graph")]:
        sub.add_parser(name, parents=[common], help=help_)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = parse_config(args.config)
        overrides = {}
        if args.seed is not None and args.command != "run":
            overrides["master_seed"] = args.seed
        if args.jobs is not None:
            overrides["jobs"] = args.jobs
        if args.plots:
            overrides["plots"] = True
        if overrides:
            config = config.with_values(**overrides)
        out_dir = args.out if args.out is not None else Path(config.out_dir)
        if args.command == "run":
            paths = cmd_run(config, out_dir, args.seed)
        elif args.command == "calibrate":
            p = cmd_calibrate(config, out_dir)
            print(f"calibrated_p = {p!r}")
            paths = [out_dir / "calibration.csv"]
        elif args.command == "sweep":
            paths = cmd_sweep(config, out_dir)
        elif args.command == "sensitivity":
            paths = cmd_sensitivity(config, out_dir)
        else:
            print(cmd_validate_graph(config))
            paths = []
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except (RideAcceptError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    for path in paths:
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
