"""Driver ride-acceptance decisions.

Behavioural drivers accept an offer with the binary-logit probability of a
linear utility over five attributes; rejection has utility zero. Random
drivers accept with a fixed probability that is calibrated so both classes
accept the same share of offers on average.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, fields, replace
from typing import TYPE_CHECKING, Sequence, Union

import numpy as np

from .errors import CalibrationError, ComputationError, ConfigurationError, StateError

if TYPE_CHECKING:
    from .engine import DriverAgent, TripRequest
    from .netgraph import RoadGraph
    from .scenario import ScenarioConfig

RATING_MAX = 5.0


@dataclass(frozen=True)
class ChoiceModel:
    """Taste parameters of the acceptance alternative (times per minute)."""

    beta_asc: float = 1.5
    beta_pickup: float = -0.0491
    beta_waiting: float = -0.0173
    beta_time1loc: float = -0.265
    beta_rlrd: float = 0.0909

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if not math.isfinite(value):
                raise ConfigurationError(f"{f.name} must be finite, got {value}")

    @property
    def coefficients(self) -> np.ndarray:
        """Attribute betas in :data:`ATTRIBUTES` order (intercept excluded)."""
        return np.array([self.beta_pickup, self.beta_waiting, self.beta_time1loc, self.beta_rlrd])

    def predict_proba(self, X) -> np.ndarray:
        """Vectorised acceptance probability.

        ``X`` has one row per offer and columns ``pickup_min, waiting_min,
        time1_loc, rlrd``; returns an ``(n, 2)`` array of
        ``[P(reject), P(accept)]`` in the usual classifier layout.
        """
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != len(ATTRIBUTES):
            raise ValueError(f"expected shape (n, {len(ATTRIBUTES)}), got {X.shape}")
        if not np.all(np.isfinite(X)):
            raise ComputationError("non-finite attribute value")
        v = self.beta_asc + X @ self.coefficients
        p = np.empty_like(v)
        pos = v >= 0
        p[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
        ev = np.exp(v[~pos])
        p[~pos] = ev / (1.0 + ev)
        return np.column_stack([1.0 - p, p])


@dataclass(frozen=True)
class DecisionContext:
    """Attribute values describing one offer from the driver's point of view."""

    pickup_time_min: float = 0.0
    waiting_time_min: float = 0.0
    time1_loc: int = 0
    rlrd: float = 0.0

    def __post_init__(self):
        for f in fields(self):
            if not math.isfinite(getattr(self, f.name)):
                raise ComputationError(f"{f.name} is not finite")
        if self.pickup_time_min < 0 or self.waiting_time_min < 0:
            raise ValueError("time attributes must be nonnegative")
        if self.time1_loc not in (0, 1):
            raise ValueError("time1_loc must be 0 or 1")
        if not 0.0 <= self.rlrd <= RATING_MAX:
            raise ValueError(f"rlrd must lie in [0, {RATING_MAX}]")


# attribute id -> (DecisionContext field, legal range)
ATTRIBUTES = {
    "pickup": ("pickup_time_min", (0.0, math.inf)),
    "waiting": ("waiting_time_min", (0.0, math.inf)),
    "time1_loc": ("time1_loc", (0, 1)),
    "rlrd": ("rlrd", (0.0, RATING_MAX)),
}


class Decision(enum.Enum):
    ACCEPT = "accept"
    REJECT = "reject"


@dataclass(frozen=True)
class Behavioural:
    model: ChoiceModel = ChoiceModel()

    kind = "behavioural"

    def evaluate(self, ctx: DecisionContext) -> tuple[float, float]:
        v = systematic_utility(self.model, ctx)
        return v, acceptance_probability(v)


@dataclass(frozen=True)
class Random:
    accept_prob: float

    kind = "random"

    def __post_init__(self):
        if not 0.0 <= self.accept_prob <= 1.0:
            raise ConfigurationError(f"accept_prob must lie in [0, 1], got {self.accept_prob}")

    def evaluate(self, ctx: DecisionContext) -> tuple[None, float]:
        return None, self.accept_prob


AcceptancePolicy = Union[Behavioural, Random]


def systematic_utility(model: ChoiceModel, ctx: DecisionContext) -> float:
    terms = (
        model.beta_asc * 1.0,
        model.beta_pickup * ctx.pickup_time_min,
        model.beta_waiting * ctx.waiting_time_min,
        model.beta_time1loc * ctx.time1_loc,
        model.beta_rlrd * ctx.rlrd,
    )
    v = sum(terms)
    if not math.isfinite(v):
        raise ComputationError(f"utility is not finite: {terms}")
    return v


def acceptance_probability(v: float) -> float:
    """Logistic of ``v``; never overflows for finite input."""
    if not math.isfinite(v):
        raise ComputationError(f"utility must be finite, got {v}")
    if v >= 0:
        return 1.0 / (1.0 + math.exp(-v))
    ev = math.exp(v)
    return ev / (1.0 + ev)


def rejection_probability(v: float) -> float:
    return 1.0 - acceptance_probability(v)


def decide(policy: AcceptancePolicy, ctx: DecisionContext, rng: np.random.Generator) -> Decision:
    """Draw one uniform from ``rng`` and accept iff it falls below P(accept)."""
    _, p = policy.evaluate(ctx)
    return Decision.ACCEPT if rng.random() < p else Decision.REJECT


def build_context(
    driver: "DriverAgent",
    request: "TripRequest",
    now: float,
    graph: "RoadGraph",
    long_trip_threshold_m: float,
    *,
    zone: tuple[tuple[float, float], float],
) -> DecisionContext:
    """Attributes of offering ``request`` to ``driver`` at time ``now``.

    ``zone`` is ``(centre, radius_m)`` of the congested central area. All
    simulated rides are non-shared, so the request-type flag is always 1.
    """
    from .engine import DriverState
    from .netgraph import in_zone

    if driver.state is not DriverState.IDLE:
        raise StateError(f"driver {driver.driver_id} is {driver.state.name}, not idle")
    pickup_s = graph.travel_time(driver.current_node, request.origin_node)
    waiting_s = now - driver.last_dropoff_time_s
    if waiting_s < 0:
        raise StateError(f"driver {driver.driver_id} last drop-off lies in the future")
    early_shift = (now - driver.shift_start_s) < driver.shift_length_s / 3.0
    central = in_zone(graph, driver.current_node, zone[0], zone[1])
    long_trip = request.trip_distance_m > long_trip_threshold_m
    nonshared = 1
    rlrd = nonshared * int(long_trip) * request.traveller_rating * driver.prev_request_declined
    return DecisionContext(
        pickup_time_min=pickup_s / 60.0,
        waiting_time_min=waiting_s / 60.0,
        time1_loc=int(early_shift and central),
        rlrd=float(rlrd),
    )


def _attribute_field(attribute: str) -> tuple[str, tuple[float, float]]:
    try:
        return ATTRIBUTES[attribute]
    except KeyError:
        raise ConfigurationError(
            f"unknown attribute {attribute!r}; expected one of {sorted(ATTRIBUTES)}"
        ) from None


def sensitivity_sweep(
    model: ChoiceModel,
    attribute: str,
    grid: Sequence[float],
    reference: DecisionContext = DecisionContext(),
) -> list[tuple[float, float]]:
    """P(accept) with ``attribute`` set to each grid value, others held at ``reference``."""
    name, (lo, hi) = _attribute_field(attribute)
    if len(grid) == 0:
        raise ConfigurationError(f"empty grid for attribute {attribute!r}")
    out = []
    for value in grid:
        if not lo <= value <= hi or (attribute == "time1_loc" and value not in (0, 1)):
            raise ConfigurationError(f"{attribute} value {value} outside legal range")
        ctx = replace(reference, **{name: int(value) if attribute == "time1_loc" else float(value)})
        out.append((value, acceptance_probability(systematic_utility(model, ctx))))
    return out


def probability_range(curve: Sequence[tuple[float, float]]) -> float:
    probs = [p for _, p in curve]
    return max(probs) - min(probs)


def sensitivity_ranking(
    model: ChoiceModel,
    grids: dict[str, Sequence[float]],
    reference: DecisionContext = DecisionContext(),
) -> list[tuple[str, float]]:
    """Attributes ordered by the spread of P(accept) over their grids, largest first."""
    spreads = [(a, probability_range(sensitivity_sweep(model, a, g, reference))) for a, g in grids.items()]
    return sorted(spreads, key=lambda item: (-item[1], item[0]))


def calibration_counts(scenario: "ScenarioConfig", graph: "RoadGraph",
                       seeds: Sequence[int]) -> list[tuple[int, int, int]]:
    """``(seed, n_offers, n_accepts)`` for a fully behavioural run per seed."""
    from .engine import run

    if scenario.behavioural_share != 1.0:
        raise ConfigurationError("calibration requires a fully behavioural scenario")
    rows = []
    for seed in seeds:
        out = run(scenario, graph, seed)
        accepts = sum(1 for o in out.offers if o.decision is Decision.ACCEPT)
        rows.append((seed, len(out.offers), accepts))
    return rows


def pooled_rate(counts: Sequence[tuple[int, int, int]]) -> float:
    offers = sum(c[1] for c in counts)
    if offers == 0:
        raise CalibrationError("calibration runs generated no offers")
    return sum(c[2] for c in counts) / offers


def calibrate_random_probability(scenario: "ScenarioConfig", graph: "RoadGraph",
                                 seeds: Sequence[int]) -> float:
    """Pooled acceptance rate (accepted / offered) of behavioural drivers.

    Used as the fixed acceptance probability of the random class so that both
    classes accept the same share of offers on average.
    """
    if len(seeds) == 0:
        raise ConfigurationError("calibration needs at least one seed")
    return pooled_rate(calibration_counts(scenario, graph, seeds))
