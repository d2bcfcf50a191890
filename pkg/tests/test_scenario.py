import math
from dataclasses import replace
from types import SimpleNamespace

import numpy as np
import pytest

from rideaccept import io
from rideaccept.choice import Behavioural, Random
from rideaccept.errors import ConfigurationError, GenerationError
from rideaccept.netgraph import generate_grid, shortest_route
from rideaccept.scenario import (
    DEFAULT_SHARES,
    ExperimentPlan,
    ScenarioConfig,
    calibration_seeds,
    derive_seed,
    generate_demand,
    generate_supply,
    long_trip_threshold,
    run_sweep,
)

from conftest import line_graph


def test_empty_demand(small_grid):
    config = ScenarioConfig(n_travellers=0)
    assert generate_demand(config, small_grid, np.random.default_rng(0)) == []


def test_demand_properties(small_grid, small_scenario):
    reqs = generate_demand(small_scenario, small_grid, np.random.default_rng(1))
    assert len(reqs) == small_scenario.n_travellers
    times = [r.request_time_s for r in reqs]
    assert times == sorted(times)
    assert all(0 <= t < small_scenario.horizon_s for t in times)
    assert [r.request_id for r in reqs] == list(range(len(reqs)))
    for r in reqs:
        assert r.origin_node != r.dest_node
        route = shortest_route(small_grid, r.origin_node, r.dest_node)
        assert r.trip_distance_m == route.distance_m >= small_scenario.min_trip_m
        assert r.trip_time_s == route.time_s
        assert small_scenario.rating_low <= r.traveller_rating <= small_scenario.rating_high


def test_demand_deterministic(small_grid, small_scenario):
    a = generate_demand(small_scenario, small_grid, np.random.default_rng(9))
    b = generate_demand(small_scenario, small_grid, np.random.default_rng(9))
    assert a == b


def test_poisson_arrivals_stay_in_horizon(small_grid, small_scenario):
    config = replace(small_scenario, arrival_process="poisson")
    reqs = generate_demand(config, small_grid, np.random.default_rng(2))
    # count is random with mean n_travellers
    assert abs(len(reqs) - config.n_travellers) < 5 * math.sqrt(config.n_travellers)
    assert all(r.request_time_s < config.horizon_s for r in reqs)


def test_unsatisfiable_minimum_distance():
    g = line_graph([100, 100])
    config = ScenarioConfig(n_travellers=1, min_trip_m=5000, central_radius_m=10)
    with pytest.raises(GenerationError):
        generate_demand(config, g, np.random.default_rng(0), max_attempts=50)


@pytest.mark.parametrize("share,n_beh", [(0.5, 10), (1.0, 20), (0.05, 1), (0.0, 0), (0.3, 6)])
def test_supply_class_counts(small_grid, share, n_beh):
    config = ScenarioConfig(n_drivers=20, behavioural_share=share)
    drivers = generate_supply(config, small_grid, np.random.default_rng(0), 0.8)
    assert sum(isinstance(d.policy, Behavioural) for d in drivers) == n_beh
    assert all(d.policy.accept_prob == 0.8 for d in drivers if isinstance(d.policy, Random))
    assert all(d.shift_start_s == 0 and d.shift_length_s == config.horizon_s for d in drivers)


@pytest.mark.parametrize("n", range(1, 41))
def test_rounding_rule_every_share(n):
    for share in DEFAULT_SHARES:
        config = ScenarioConfig(n_drivers=n, behavioural_share=share)
        assert config.n_behavioural == math.floor(share * n + 0.5 + 1e-9)


def test_supply_needs_probability_for_random_class(small_grid):
    with pytest.raises(ConfigurationError):
        generate_supply(ScenarioConfig(behavioural_share=0.5), small_grid, np.random.default_rng(0), None)
    drivers = generate_supply(ScenarioConfig(behavioural_share=1.0), small_grid, np.random.default_rng(0), None)
    assert all(isinstance(d.policy, Behavioural) for d in drivers)


def reqs_with(distances):
    return [SimpleNamespace(trip_distance_m=d) for d in distances]


def test_long_trip_threshold_examples():
    km = [1000.0 * k for k in range(1, 11)]
    t = long_trip_threshold(reqs_with(km[::-1]))
    assert t == 8000.0
    assert [d for d in km if d > t] == [9000.0, 10000.0]
    assert long_trip_threshold(reqs_with([700.0] * 5)) == 700.0
    assert long_trip_threshold(reqs_with([1234.0])) == 1234.0
    with pytest.raises(ValueError):
        long_trip_threshold([])


@pytest.mark.parametrize("kwargs", [dict(n_drivers=0), dict(n_drivers=-5), dict(behavioural_share=1.5),
                                    dict(horizon_s=0), dict(fare_per_km_eur=-1), dict(rating_low=6),
                                    dict(arrival_process="burst"), dict(max_offer_rounds=0)])
def test_config_validation(kwargs):
    with pytest.raises(ConfigurationError):
        ScenarioConfig(**kwargs)


def test_default_plan():
    cells = ExperimentPlan().cells()
    assert len(cells) == 110
    assert len({c.seed for c in cells}) == 110
    assert [c.share for c in cells[::10]] == list(DEFAULT_SHARES)
    # paired: demand seeds depend on the replication only
    for c in cells:
        assert c.demand_seed == cells[c.replication].demand_seed
    assert len({c.demand_seed for c in cells}) == 10


def test_seed_derivation():
    assert derive_seed(0, "cell", 1, 2) == derive_seed(0, "cell", 1, 2)
    keys = {derive_seed(m, "cell", i, r) for m in range(3) for i in range(11) for r in range(10)}
    assert len(keys) == 330
    assert all(0 <= k < 2 ** 63 for k in keys)
    assert len(set(calibration_seeds(0))) == 10
    assert set(calibration_seeds(0)).isdisjoint(c.seed for c in ExperimentPlan().cells())


def test_plan_validation():
    with pytest.raises(ConfigurationError):
        ExperimentPlan(shares=())
    with pytest.raises(ConfigurationError):
        ExperimentPlan(shares=(0.0, 1.2))
    with pytest.raises(ConfigurationError):
        ExperimentPlan(replications=0)


def test_paired_demand_across_shares(small_grid, small_scenario):
    from rideaccept.engine import run
    plan = ExperimentPlan(shares=(0.0, 1.0), replications=2)
    cells = plan.cells()
    a = run(replace(small_scenario, behavioural_share=0.0), small_grid, cells[1].seed,
            demand_seed=cells[1].demand_seed, calibrated_p=0.7)
    b = run(replace(small_scenario, behavioural_share=1.0), small_grid, cells[3].seed,
            demand_seed=cells[3].demand_seed)
    key = lambda t: (t.request_id, t.origin_node, t.dest_node, t.request_time_s, t.traveller_rating)
    assert [key(t) for t in a.trips] == [key(t) for t in b.trips]


def test_minimal_sweep(small_grid, small_scenario):
    out = run_sweep(ExperimentPlan(shares=(0.3,), replications=1), small_scenario, small_grid, 0.7)
    assert len(out) == 1 and out[0].share == 0.3 and out[0].replication == 0


def test_sweep_deterministic_and_ordered(small_grid, small_scenario):
    plan = ExperimentPlan(shares=(0.0, 0.5, 1.0), replications=2, master_seed=4)
    a = run_sweep(plan, small_scenario, small_grid, 0.7)
    b = run_sweep(plan, small_scenario, small_grid, 0.7, jobs=2)
    assert [(s.share, s.replication) for s in a] == [(c.share, c.replication) for c in plan.cells()]
    assert io.render(io.SUMMARY_HEADER, io.summary_rows(a)) == io.render(io.SUMMARY_HEADER, io.summary_rows(b))


def test_sweep_requires_probability(small_grid, small_scenario):
    with pytest.raises(ConfigurationError):
        run_sweep(ExperimentPlan(), small_scenario, small_grid, None)
