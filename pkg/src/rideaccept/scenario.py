"""Demand and supply generation, class mixes and the behavioural-share sweep."""

from __future__ import annotations

import hashlib
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .choice import Behavioural, ChoiceModel, Random
from .errors import ConfigurationError, GenerationError, RideAcceptError
from .netgraph import RoadGraph, shortest_route

log = logging.getLogger(__name__)

DEFAULT_SHARES = tuple(round(0.1 * i, 1) for i in range(11))
DEFAULT_REPLICATIONS = 10
DEFAULT_CALIBRATION_RUNS = 10


@dataclass(frozen=True)
class ScenarioConfig:
    horizon_s: float = 18_000.0
    n_drivers: int = 20
    n_travellers: int = 500
    behavioural_share: float = 0.5
    fare_per_km_eur: float = 2.0
    central_centre: Optional[tuple[float, float]] = None  # None: bounding-box centre of the graph
    central_radius_m: float = 1_500.0
    central_speed_kmh: float = 18.0
    outer_speed_kmh: float = 36.0
    rating_low: float = 3.0
    rating_high: float = 5.0
    max_offer_rounds: int = 5
    max_wait_s: Optional[float] = None
    min_trip_m: float = 500.0
    arrival_process: str = "uniform"
    master_seed: int = 0
    choice_model: ChoiceModel = field(default_factory=ChoiceModel)

    def __post_init__(self):
        def bad(key, why):
            raise ConfigurationError(f"{key}: {why}")

        if not (math.isfinite(self.horizon_s) and self.horizon_s > 0):
            bad("horizon_s", "must be positive")
        if int(self.n_drivers) != self.n_drivers or self.n_drivers < 1:
            bad("n_drivers", "must be a positive integer")
        if int(self.n_travellers) != self.n_travellers or self.n_travellers < 0:
            bad("n_travellers", "must be a nonnegative integer")
        if not 0.0 <= self.behavioural_share <= 1.0:
            bad("behavioural_share", "must lie in [0, 1]")
        if not self.fare_per_km_eur >= 0:
            bad("fare_per_km_eur", "must be nonnegative")
        if not self.central_radius_m > 0:
            bad("central_radius_m", "must be positive")
        if not (self.central_speed_kmh > 0 and self.outer_speed_kmh > 0):
            bad("central_speed_kmh", "speeds must be positive")
        if not 0.0 <= self.rating_low <= self.rating_high <= 5.0:
            bad("rating_low", "need 0 <= rating_low <= rating_high <= 5")
        if int(self.max_offer_rounds) != self.max_offer_rounds or self.max_offer_rounds < 1:
            bad("max_offer_rounds", "must be a positive integer")
        if self.max_wait_s is not None and not self.max_wait_s > 0:
            bad("max_wait_s", "must be positive when set")
        if not self.min_trip_m >= 0:
            bad("min_trip_m", "must be nonnegative")
        if self.arrival_process not in ("uniform", "poisson"):
            bad("arrival_process", "must be 'uniform' or 'poisson'")
        if int(self.master_seed) != self.master_seed or self.master_seed < 0:
            bad("master_seed", "must be a nonnegative integer")

    @property
    def n_behavioural(self) -> int:
        # half-up rounding; the epsilon absorbs 0.1-step float noise
        return int(math.floor(self.behavioural_share * self.n_drivers + 0.5 + 1e-9))

    def zone(self, graph: RoadGraph) -> tuple[tuple[float, float], float]:
        centre = self.central_centre if self.central_centre is not None else graph.bbox_centre()
        return (float(centre[0]), float(centre[1])), self.central_radius_m

    def digest(self) -> str:
        payload = json.dumps(asdict(self), sort_keys=True, default=str)
        return hashlib.sha256(payload.encode()).hexdigest()[:16]


def derive_seed(master_seed: int, *key) -> int:
    """Stable 63-bit seed from the master seed and a key tuple.

    SHA-256 over ``"master|k1|k2|..."``; identical on every platform and
    Python version, unlike ``hash()``.
    """
    text = "|".join(str(part) for part in (master_seed, *key))
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "big") >> 1


def calibration_seeds(master_seed: int, n: int = DEFAULT_CALIBRATION_RUNS) -> list[int]:
    return [derive_seed(master_seed, "calibration", i) for i in range(n)]


def _arrival_times(config: ScenarioConfig, rng: np.random.Generator) -> np.ndarray:
    n = config.n_travellers
    if config.arrival_process == "uniform":
        return np.sort(rng.uniform(0.0, config.horizon_s, size=n))
    times = []
    t = 0.0
    mean_gap = config.horizon_s / max(n, 1)
    while n > 0:
        t += rng.exponential(mean_gap)
        if t >= config.horizon_s:
            break
        times.append(t)
    return np.array(times)


def generate_demand(config: ScenarioConfig, graph: RoadGraph, rng: np.random.Generator,
                    max_attempts: int = 1000):
    """Trip requests with uniform arrival times and uniformly drawn OD nodes.

    Origin and destination differ and their time-shortest route is at least
    ``config.min_trip_m`` long. Request ids follow arrival order.
    """
    from .engine import TripRequest

    times = _arrival_times(config, rng)
    if len(times) == 0:
        return []
    ids = graph.node_ids
    if len(ids) < 2:
        raise GenerationError("graph needs at least two nodes to generate trips")
    requests = []
    for i, t in enumerate(times):
        for _ in range(max_attempts):
            o, d = rng.integers(len(ids), size=2)
            if o == d:
                continue
            route = shortest_route(graph, ids[o], ids[d])
            if route.distance_m >= config.min_trip_m:
                break
        else:
            raise GenerationError(
                f"no OD pair with route >= {config.min_trip_m} m after {max_attempts} draws"
            )
        rating = float(rng.uniform(config.rating_low, config.rating_high))
        requests.append(TripRequest(
            request_id=i, traveller_id=i, origin_node=ids[o], dest_node=ids[d],
            request_time_s=float(t), traveller_rating=rating,
            trip_distance_m=route.distance_m, trip_time_s=route.time_s,
        ))
    return requests


def generate_supply(config: ScenarioConfig, graph: RoadGraph, rng: np.random.Generator,
                    calibrated_p: Optional[float]):
    """Drivers at uniformly random nodes; the first ``n_behavioural`` follow the logit model."""
    from .engine import DriverAgent

    n_beh = config.n_behavioural
    if n_beh < config.n_drivers and calibrated_p is None:
        raise ConfigurationError("random-class drivers need a calibrated acceptance probability")
    starts = rng.integers(graph.n_nodes, size=config.n_drivers)
    drivers = []
    for k, idx in enumerate(starts):
        policy = Behavioural(config.choice_model) if k < n_beh else Random(float(calibrated_p))
        drivers.append(DriverAgent(
            driver_id=k, policy=policy, current_node=graph.node_ids[int(idx)],
            shift_start_s=0.0, shift_length_s=config.horizon_s,
        ))
    return drivers


def long_trip_threshold(requests) -> float:
    """Nearest-rank 80th percentile of trip distances; trips strictly above are long."""
    if len(requests) == 0:
        raise ValueError("long-trip threshold needs at least one request")
    distances = sorted(r.trip_distance_m for r in requests)
    rank = math.ceil(0.8 * len(distances))
    return distances[max(rank, 1) - 1]


@dataclass(frozen=True)
class Cell:
    share_index: int
    share: float
    replication: int
    seed: int
    demand_seed: int


@dataclass(frozen=True)
class ExperimentPlan:
    shares: tuple[float, ...] = DEFAULT_SHARES
    replications: int = DEFAULT_REPLICATIONS
    master_seed: int = 0

    def __post_init__(self):
        if len(self.shares) == 0:
            raise ConfigurationError("shares: at least one share required")
        if any(not 0.0 <= s <= 1.0 for s in self.shares):
            raise ConfigurationError("shares: values must lie in [0, 1]")
        if int(self.replications) != self.replications or self.replications < 1:
            raise ConfigurationError("replications: must be a positive integer")

    def cells(self) -> list[Cell]:
        """All cells ordered by (share index, replication).

        Demand and starting positions depend on the replication only, so
        every share within a replication sees the same travellers.
        """
        return [
            Cell(i, share, r,
                 seed=derive_seed(self.master_seed, "cell", i, r),
                 demand_seed=derive_seed(self.master_seed, "demand", r))
            for i, share in enumerate(self.shares)
            for r in range(self.replications)
        ]


_WORKER_GRAPH: Optional[RoadGraph] = None


def _init_worker(graph: RoadGraph) -> None:
    global _WORKER_GRAPH
    _WORKER_GRAPH = graph


def _run_cell(args):
    from .engine import run
    from .metrics import summarize

    cell, base, calibrated_p, graph = args
    graph = graph if graph is not None else _WORKER_GRAPH
    config = _cell_config(base, cell.share)
    try:
        out = run(config, graph, cell.seed, demand_seed=cell.demand_seed,
                  calibrated_p=None if config.n_behavioural == config.n_drivers else calibrated_p)
    except RideAcceptError as exc:
        raise RuntimeError(
            f"cell share={cell.share} replication={cell.replication} failed: {exc}"
        ) from exc
    return summarize(out, share=cell.share, replication=cell.replication)


def _cell_config(base: ScenarioConfig, share: float) -> ScenarioConfig:
    return replace(base, behavioural_share=share)


def run_sweep(plan: ExperimentPlan, base: ScenarioConfig, graph: RoadGraph,
              calibrated_p: float, jobs: int = 1):
    """Run every (share, replication) cell; results ordered by cell regardless of ``jobs``."""
    if calibrated_p is None or not 0.0 <= calibrated_p <= 1.0:
        raise ConfigurationError("run_sweep needs a calibrated acceptance probability in [0, 1]")
    cells = plan.cells()
    log.info("running %d sweep cells with %d job(s)", len(cells), jobs)
    if jobs <= 1:
        return [_run_cell((c, base, calibrated_p, graph)) for c in cells]
    with ProcessPoolExecutor(max_workers=jobs, initializer=_init_worker, initargs=(graph,)) as pool:
        return list(pool.map(_run_cell, [(c, base, calibrated_p, None) for c in cells]))
