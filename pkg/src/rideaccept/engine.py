"""Discrete-event core: agents, first-dispatch matching and the offer protocol.

Each request is offered to the closest idle driver by predicted pick-up
time. A declining driver is never offered the same request again; the
request moves on to the next-closest idle driver, waits in a FIFO queue
when nobody is eligible, and is abandoned after ``max_offer_rounds``
declines, once every driver has declined it, or when the horizon closes.
"""

from __future__ import annotations

import bisect
import enum
import heapq
import math
from dataclasses import dataclass, field
from typing import Any, Optional

import numpy as np

from .choice import AcceptancePolicy, Decision, build_context, decide
from .errors import InternalConsistencyError
from .netgraph import RoadGraph
from .scenario import ScenarioConfig, generate_demand, generate_supply, long_trip_threshold


class DriverState(enum.Enum):
    IDLE = "idle"
    EN_ROUTE_PICKUP = "enroute"
    IN_SERVICE = "inservice"


class RequestStatus(enum.IntEnum):
    PENDING = 0
    OFFERED = 1
    ASSIGNED = 2
    PICKED_UP = 3
    COMPLETED = 4
    ABANDONED = 5


class EventKind(enum.IntEnum):
    REQUEST_ARRIVAL = 0
    OFFER_RESPONSE = 1
    PICKUP_ARRIVAL = 2
    DROPOFF_ARRIVAL = 3
    ABANDON_CHECK = 4


_ALLOWED_STATUS = {
    RequestStatus.PENDING: {RequestStatus.OFFERED, RequestStatus.ABANDONED},
    RequestStatus.OFFERED: {RequestStatus.OFFERED, RequestStatus.ASSIGNED, RequestStatus.ABANDONED},
    RequestStatus.ASSIGNED: {RequestStatus.PICKED_UP},
    RequestStatus.PICKED_UP: {RequestStatus.COMPLETED},
    RequestStatus.COMPLETED: set(),
    RequestStatus.ABANDONED: set(),
}


@dataclass
class DriverAgent:
    driver_id: int
    policy: AcceptancePolicy
    current_node: int
    shift_start_s: float = 0.0
    shift_length_s: float = 18_000.0
    state: DriverState = DriverState.IDLE
    last_dropoff_time_s: Optional[float] = None
    prev_request_declined: int = 0
    cumulative_income_eur: float = 0.0
    cumulative_idle_s: float = 0.0
    cumulative_enroute_s: float = 0.0
    cumulative_inservice_s: float = 0.0
    n_offers: int = 0
    n_accepts: int = 0
    trip_log: list = field(default_factory=list)
    state_since_s: float = 0.0
    end_time_s: Optional[float] = None

    def __post_init__(self):
        if self.last_dropoff_time_s is None:
            self.last_dropoff_time_s = self.shift_start_s
        self.state_since_s = self.shift_start_s

    @property
    def policy_class(self) -> str:
        return self.policy.kind

    @property
    def n_trips(self) -> int:
        return len(self.trip_log)


@dataclass
class TripRequest:
    request_id: int
    traveller_id: int
    origin_node: int
    dest_node: int
    request_time_s: float
    traveller_rating: float
    trip_distance_m: float
    trip_time_s: float
    status: RequestStatus = RequestStatus.PENDING
    decline_set: set = field(default_factory=set)
    driver_id: Optional[int] = None
    pickup_time_s: Optional[float] = None
    completion_time_s: Optional[float] = None
    abandon_reason: Optional[str] = None

    @property
    def waiting_time_s(self) -> Optional[float]:
        if self.pickup_time_s is None:
            return None
        return self.pickup_time_s - self.request_time_s

    def advance(self, status: RequestStatus) -> None:
        if status not in _ALLOWED_STATUS[self.status]:
            raise InternalConsistencyError(
                f"request {self.request_id}: illegal transition {self.status.name} -> {status.name}"
            )
        self.status = status


@dataclass(order=True)
class Event:
    time_s: float
    sequence_no: int
    kind: EventKind = field(compare=False)
    payload: Any = field(compare=False, default=None)


@dataclass(frozen=True)
class OfferRecord:
    offer_id: int
    request_id: int
    driver_id: int
    time_s: float
    policy: str
    pickup_min: float
    waiting_min: float
    time1loc: int
    rlrd: float
    utility: Optional[float]
    probability: float
    decision: Decision
    pickup_s: float


@dataclass
class SimOutput:
    trips: list
    drivers: list
    offers: list
    seed: int
    demand_seed: int
    config_digest: str
    horizon_s: float
    fare_per_km_eur: float
    end_time_s: float

    @property
    def metadata(self) -> dict:
        return {
            "seed": self.seed,
            "demand_seed": self.demand_seed,
            "config_digest": self.config_digest,
            "horizon_s": self.horizon_s,
            "end_time_s": self.end_time_s,
            "overtime": self.end_time_s > self.horizon_s,
        }


class Simulation:
    """Mutable state of one run. Use :func:`run` unless stepping manually."""

    def __init__(self, config: ScenarioConfig, graph: RoadGraph, drivers, requests,
                 seed: int, *, long_trip_threshold_m: Optional[float] = None):
        self.config = config
        self.graph = graph
        self.seed = seed
        self.zone = config.zone(graph)
        self.drivers = {d.driver_id: d for d in drivers}
        self.requests = {r.request_id: r for r in requests}
        if long_trip_threshold_m is None:
            long_trip_threshold_m = long_trip_threshold(requests) if requests else math.inf
        self.long_trip_threshold_m = long_trip_threshold_m
        # one decision stream per driver, independent of the other agents
        self.streams = {d.driver_id: np.random.default_rng([seed, 2, d.driver_id]) for d in drivers}
        self.now = 0.0
        self.closed = False
        self._seq = 0
        self._events: list[Event] = []
        self.available: dict[int, DriverAgent] = {d.driver_id: d for d in drivers}
        self.queue: list[int] = []
        self.outstanding: dict[int, OfferRecord] = {}
        self.request_offer: dict[int, int] = {}
        self.patience_expired: set[int] = set()
        self.offers: list[OfferRecord] = []
        self.processed_times: list[float] = []

    # scheduling ----------------------------------------------------------

    def schedule(self, time_s: float, kind: EventKind, payload=None) -> Event:
        if time_s < self.now:
            raise InternalConsistencyError(f"event {kind.name} scheduled at {time_s} < now {self.now}")
        event = Event(time_s, self._seq, kind, payload)
        self._seq += 1
        heapq.heappush(self._events, event)
        return event

    def step(self) -> Optional[Event]:
        if not self._events:
            return None
        event = heapq.heappop(self._events)
        if event.time_s < self.now:
            raise InternalConsistencyError("event queue returned an event from the past")
        self.now = event.time_s
        self.processed_times.append(event.time_s)
        handler = {
            EventKind.REQUEST_ARRIVAL: self._on_arrival,
            EventKind.OFFER_RESPONSE: self._on_response,
            EventKind.PICKUP_ARRIVAL: self.complete_pickup,
            EventKind.DROPOFF_ARRIVAL: self.complete_dropoff,
            EventKind.ABANDON_CHECK: self._on_abandon_check,
        }[event.kind]
        handler(event)
        return event

    def start(self) -> None:
        for r in sorted(self.requests.values(), key=lambda r: (r.request_time_s, r.request_id)):
            self.schedule(r.request_time_s, EventKind.REQUEST_ARRIVAL, r.request_id)
            if self.config.max_wait_s is not None:
                self.schedule(r.request_time_s + self.config.max_wait_s, EventKind.ABANDON_CHECK, r.request_id)
        self.schedule(self.config.horizon_s, EventKind.ABANDON_CHECK, None)

    def run_to_end(self) -> None:
        while self.step() is not None:
            pass

    # state helpers -------------------------------------------------------

    def _set_state(self, driver: DriverAgent, state: DriverState) -> None:
        elapsed = self.now - driver.state_since_s
        if driver.state is DriverState.IDLE:
            driver.cumulative_idle_s += elapsed
        elif driver.state is DriverState.EN_ROUTE_PICKUP:
            driver.cumulative_enroute_s += elapsed
        else:
            driver.cumulative_inservice_s += elapsed
        driver.state = state
        driver.state_since_s = self.now

    def _abandon(self, req: TripRequest, reason: str) -> None:
        req.advance(RequestStatus.ABANDONED)
        req.abandon_reason = reason
        self._dequeue(req.request_id)

    def _enqueue(self, request_id: int) -> None:
        i = bisect.bisect_left(self.queue, request_id)
        if i == len(self.queue) or self.queue[i] != request_id:
            self.queue.insert(i, request_id)

    def _dequeue(self, request_id: int) -> None:
        i = bisect.bisect_left(self.queue, request_id)
        if i < len(self.queue) and self.queue[i] == request_id:
            del self.queue[i]

    def _eligible(self, req: TripRequest) -> list[DriverAgent]:
        return [d for d in self.available.values() if d.driver_id not in req.decline_set]

    # protocol ------------------------------------------------------------

    def _on_arrival(self, event: Event) -> None:
        self.dispatch(self.requests[event.payload])

    def dispatch(self, req: TripRequest) -> Optional[OfferRecord]:
        """Offer ``req`` to the eligible idle driver with the shortest pick-up time.

        Ties go to the lowest driver id. Without an eligible driver the
        request waits in the FIFO queue and ``None`` is returned.
        """
        if req.status not in (RequestStatus.PENDING, RequestStatus.OFFERED):
            raise InternalConsistencyError(f"dispatch of request {req.request_id} in {req.status.name}")
        if req.request_id in self.request_offer:
            raise InternalConsistencyError(f"request {req.request_id} already has an outstanding offer")
        if self.closed:
            self._abandon(req, "horizon")
            return None
        candidates = self._eligible(req)
        if not candidates:
            self._enqueue(req.request_id)
            return None
        to_origin = self.graph.times_to_index(self.graph.index_of(req.origin_node))
        index_of = self.graph.index_of
        best = min(candidates, key=lambda d: (to_origin[index_of(d.current_node)], d.driver_id))
        self._dequeue(req.request_id)
        return self._offer(best, req)

    def _offer(self, driver: DriverAgent, req: TripRequest) -> OfferRecord:
        ctx = build_context(driver, req, self.now, self.graph, self.long_trip_threshold_m, zone=self.zone)
        utility, probability = driver.policy.evaluate(ctx)
        decision = decide(driver.policy, ctx, self.streams[driver.driver_id])
        record = OfferRecord(
            offer_id=len(self.offers), request_id=req.request_id, driver_id=driver.driver_id,
            time_s=self.now, policy=driver.policy_class,
            pickup_min=ctx.pickup_time_min, waiting_min=ctx.waiting_time_min,
            time1loc=ctx.time1_loc, rlrd=ctx.rlrd, utility=utility, probability=probability,
            decision=decision, pickup_s=self.graph.travel_time(driver.current_node, req.origin_node),
        )
        self.offers.append(record)
        driver.n_offers += 1
        del self.available[driver.driver_id]
        self.outstanding[record.offer_id] = record
        self.request_offer[req.request_id] = record.offer_id
        req.advance(RequestStatus.OFFERED)
        self.schedule(self.now, EventKind.OFFER_RESPONSE, record.offer_id)
        return record

    def _on_response(self, event: Event) -> None:
        record = self.outstanding.get(event.payload)
        if record is None:
            raise InternalConsistencyError(f"response for non-outstanding offer {event.payload}")
        self.handle_response(record, record.decision)

    def handle_response(self, offer: OfferRecord, decision: Decision) -> None:
        if self.outstanding.get(offer.offer_id) is not offer:
            raise InternalConsistencyError(f"offer {offer.offer_id} is not outstanding")
        driver = self.drivers[offer.driver_id]
        req = self.requests[offer.request_id]
        if driver.state is not DriverState.IDLE:
            raise InternalConsistencyError(f"driver {driver.driver_id} answered an offer while busy")
        del self.outstanding[offer.offer_id]
        del self.request_offer[req.request_id]

        if decision is Decision.ACCEPT:
            driver.prev_request_declined = 0
            driver.n_accepts += 1
            self._set_state(driver, DriverState.EN_ROUTE_PICKUP)
            req.advance(RequestStatus.ASSIGNED)
            req.driver_id = driver.driver_id
            self.schedule(self.now + offer.pickup_s, EventKind.PICKUP_ARRIVAL,
                          (driver.driver_id, req.request_id))
            return

        driver.prev_request_declined = 1
        self.available[driver.driver_id] = driver
        req.decline_set.add(driver.driver_id)
        if len(req.decline_set) >= self.config.max_offer_rounds:
            self._abandon(req, "declined")
        elif len(req.decline_set) >= len(self.drivers):
            self._abandon(req, "exhausted")
        elif req.request_id in self.patience_expired:
            self._abandon(req, "patience")
        else:
            self.dispatch(req)
        self.examine_queue()

    def examine_queue(self) -> None:
        """Offer queued requests, oldest first, while idle drivers remain."""
        if self.closed:
            return
        for request_id in list(self.queue):
            if not self.available:
                break
            req = self.requests[request_id]
            if request_id in self.request_offer or req.status > RequestStatus.OFFERED:
                continue
            if self._eligible(req):
                self.dispatch(req)

    def complete_pickup(self, event: Event) -> None:
        driver_id, request_id = event.payload
        driver, req = self.drivers[driver_id], self.requests[request_id]
        if driver.state is not DriverState.EN_ROUTE_PICKUP or req.status is not RequestStatus.ASSIGNED:
            raise InternalConsistencyError(
                f"pickup with driver {driver.state.name} and request {req.status.name}"
            )
        if req.origin_node == req.dest_node:
            raise InternalConsistencyError(f"request {request_id} has zero-length trip")
        driver.current_node = req.origin_node
        self._set_state(driver, DriverState.IN_SERVICE)
        req.advance(RequestStatus.PICKED_UP)
        req.pickup_time_s = self.now
        self.schedule(self.now + req.trip_time_s, EventKind.DROPOFF_ARRIVAL, (driver_id, request_id))

    def complete_dropoff(self, event: Event) -> None:
        driver_id, request_id = event.payload
        driver, req = self.drivers[driver_id], self.requests[request_id]
        if driver.state is not DriverState.IN_SERVICE or req.status is not RequestStatus.PICKED_UP:
            raise InternalConsistencyError(
                f"drop-off with driver {driver.state.name} and request {req.status.name}"
            )
        driver.current_node = req.dest_node
        self._set_state(driver, DriverState.IDLE)
        driver.last_dropoff_time_s = self.now
        driver.cumulative_income_eur += self.config.fare_per_km_eur * req.trip_distance_m / 1000.0
        driver.trip_log.append(request_id)
        req.advance(RequestStatus.COMPLETED)
        req.completion_time_s = self.now
        self.available[driver_id] = driver
        self.examine_queue()

    def _on_abandon_check(self, event: Event) -> None:
        if event.payload is None:
            self.closed = True
            for request_id in list(self.queue):
                self._abandon(self.requests[request_id], "horizon")
            return
        req = self.requests[event.payload]
        if req.status > RequestStatus.OFFERED:
            return
        if req.request_id in self.request_offer:
            self.patience_expired.add(req.request_id)
        else:
            self._abandon(req, "patience")

    def finish(self) -> None:
        """Close every driver timeline at the horizon or their last drop-off."""
        if self._events or self.outstanding:
            raise InternalConsistencyError("finish() called with pending events")
        horizon = self.config.horizon_s
        for d in self.drivers.values():
            if d.state is not DriverState.IDLE:
                raise InternalConsistencyError(f"driver {d.driver_id} still busy at end of run")
            end = max(d.shift_start_s + horizon, d.state_since_s)
            self.now = max(self.now, end)
            elapsed = end - d.state_since_s
            d.cumulative_idle_s += elapsed
            d.state_since_s = end
            d.end_time_s = end
        for r in self.requests.values():
            if r.status not in (RequestStatus.COMPLETED, RequestStatus.ABANDONED):
                raise InternalConsistencyError(f"request {r.request_id} ended in {r.status.name}")


def run(scenario: ScenarioConfig, graph: RoadGraph, seed: int, *,
        demand_seed: Optional[int] = None, calibrated_p: Optional[float] = None,
        requests=None, drivers=None) -> SimOutput:
    """Simulate one scenario over its horizon; trips still in progress finish in overtime.

    Demand and driver start positions are drawn from ``demand_seed``
    (defaults to ``seed``); driver decisions from per-driver streams of
    ``seed``. ``requests``/``drivers`` may be supplied directly instead.
    """
    demand_seed = seed if demand_seed is None else demand_seed
    if requests is None:
        requests = generate_demand(scenario, graph, np.random.default_rng([demand_seed, 0]))
    if drivers is None:
        drivers = generate_supply(scenario, graph, np.random.default_rng([demand_seed, 1]), calibrated_p)
    sim = Simulation(scenario, graph, drivers, requests, seed)
    sim.start()
    sim.run_to_end()
    sim.finish()
    end = max([scenario.horizon_s] + [d.end_time_s for d in sim.drivers.values()])
    return SimOutput(
        trips=sorted(sim.requests.values(), key=lambda r: r.request_id),
        drivers=sorted(sim.drivers.values(), key=lambda d: d.driver_id),
        offers=sim.offers,
        seed=seed, demand_seed=demand_seed, config_digest=scenario.digest(),
        horizon_s=scenario.horizon_s, fare_per_km_eur=scenario.fare_per_km_eur,
        end_time_s=end,
    )
