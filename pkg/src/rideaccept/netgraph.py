"""Road network, two-speed congestion zoning and time-shortest routing.

Coordinates are planar metres. Loaded networks must already be projected;
no geodesic conversion is performed anywhere.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components, dijkstra

from .errors import ConfigurationError, GraphValidationError, SchemaError

KMH_TO_MPS = 1000.0 / 3600.0
DEFAULT_OUTER_SPEED_KMH = 36.0
DEFAULT_CENTRAL_SPEED_KMH = 18.0
DEFAULT_CACHE_MAX_NODES = 2000

NODES_HEADER = ["node_id", "x_m", "y_m"]
EDGES_HEADER = ["edge_id", "from_node", "to_node", "length_m"]


def kmh_to_mps(speed_kmh: float) -> float:
    return speed_kmh * KMH_TO_MPS


@dataclass(frozen=True)
class Edge:
    edge_id: int
    source: int
    target: int
    length_m: float
    speed_mps: float

    @property
    def time_s(self) -> float:
        return self.length_m / self.speed_mps


@dataclass(frozen=True)
class Route:
    node_sequence: tuple[int, ...]
    distance_m: float
    time_s: float


class RoadGraph:
    """Directed road graph with per-edge lengths and speeds.

    The graph is validated on construction (dangling endpoints, nonpositive
    lengths or speeds, strong connectivity) and never mutated afterwards;
    :meth:`with_speeds` returns a new graph. Travel-time tables are computed
    lazily and cached, so a graph can be shared read-only between runs.
    """

    def __init__(
        self,
        nodes: Iterable[tuple[int, float, float]],
        edges: Iterable[Edge],
        *,
        cache_max_nodes: int = DEFAULT_CACHE_MAX_NODES,
    ):
        node_rows = sorted((int(n), float(x), float(y)) for n, x, y in nodes)
        if not node_rows:
            raise SchemaError("graph has no nodes")
        ids = [row[0] for row in node_rows]
        if len(set(ids)) != len(ids):
            raise SchemaError("duplicate node_id in node list")
        self.node_ids: tuple[int, ...] = tuple(ids)
        self._index = {n: i for i, n in enumerate(ids)}
        self.xy = np.array([[row[1], row[2]] for row in node_rows], dtype=float)
        self.xy.setflags(write=False)

        edge_list = tuple(sorted(edges, key=lambda e: e.edge_id))
        seen = set()
        for e in edge_list:
            if e.edge_id in seen:
                raise SchemaError(f"duplicate edge_id {e.edge_id}")
            seen.add(e.edge_id)
            for end in (e.source, e.target):
                if end not in self._index:
                    raise SchemaError(f"edge {e.edge_id} references unknown node {end}")
            if not (math.isfinite(e.length_m) and e.length_m > 0):
                raise SchemaError(f"edge {e.edge_id} has nonpositive length {e.length_m}")
            if not (math.isfinite(e.speed_mps) and e.speed_mps > 0):
                raise SchemaError(f"edge {e.edge_id} has nonpositive speed {e.speed_mps}")
        self.edges: tuple[Edge, ...] = edge_list

        n = len(ids)
        out: list[list[Edge]] = [[] for _ in range(n)]
        for e in edge_list:
            out[self._index[e.source]].append(e)
        self._out = tuple(tuple(sorted(es, key=lambda e: (e.target, e.time_s, e.edge_id))) for es in out)

        # parallel edges: keep the fastest one for the time table
        best: dict[tuple[int, int], float] = {}
        for e in edge_list:
            key = (self._index[e.source], self._index[e.target])
            t = e.time_s
            if key not in best or t < best[key]:
                best[key] = t
        if best:
            rows, cols = zip(*best.keys())
            data = list(best.values())
        else:
            rows, cols, data = (), (), []
        self._weights = csr_matrix((data, (rows, cols)), shape=(n, n))

        if n > 1:
            n_comp, _ = connected_components(self._weights, directed=True, connection="strong")
            if n_comp != 1:
                raise GraphValidationError(f"graph is not strongly connected ({n_comp} components)")

        self.cache_max_nodes = cache_max_nodes
        self._all_pairs: np.ndarray | None = None
        self._rows: dict[int, np.ndarray] = {}
        self._cols: dict[int, np.ndarray] = {}

    def __len__(self) -> int:
        return len(self.node_ids)

    def __getstate__(self):
        state = self.__dict__.copy()
        state["_all_pairs"] = None
        state["_rows"] = {}
        state["_cols"] = {}
        return state

    @property
    def n_nodes(self) -> int:
        return len(self.node_ids)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def index_of(self, node_id: int) -> int:
        try:
            return self._index[node_id]
        except KeyError:
            raise KeyError(f"unknown node id {node_id!r}") from None

    def has_node(self, node_id: int) -> bool:
        return node_id in self._index

    def coords(self, node_id: int) -> tuple[float, float]:
        x, y = self.xy[self.index_of(node_id)]
        return float(x), float(y)

    def bbox_centre(self) -> tuple[float, float]:
        lo = self.xy.min(axis=0)
        hi = self.xy.max(axis=0)
        return float((lo[0] + hi[0]) / 2), float((lo[1] + hi[1]) / 2)

    def out_edges(self, node_id: int) -> tuple[Edge, ...]:
        return self._out[self.index_of(node_id)]

    def with_speeds(self, speeds: Sequence[float]) -> "RoadGraph":
        """New graph with ``speeds[k]`` assigned to ``self.edges[k]``."""
        if len(speeds) != len(self.edges):
            raise ConfigurationError("one speed per edge required")
        edges = [replace(e, speed_mps=float(s)) for e, s in zip(self.edges, speeds)]
        nodes = [(n, x, y) for n, (x, y) in zip(self.node_ids, self.xy.tolist())]
        return RoadGraph(nodes, edges, cache_max_nodes=self.cache_max_nodes)

    # travel-time tables -------------------------------------------------

    def _precomputed(self) -> bool:
        return self.n_nodes <= self.cache_max_nodes

    def _matrix(self) -> np.ndarray:
        if self._all_pairs is None:
            m = dijkstra(self._weights, directed=True)
            m.setflags(write=False)
            self._all_pairs = m
        return self._all_pairs

    def times_from_index(self, i: int) -> np.ndarray:
        """Shortest travel times (s) from node index ``i`` to every node index."""
        if self._precomputed():
            return self._matrix()[i]
        row = self._rows.get(i)
        if row is None:
            row = dijkstra(self._weights, directed=True, indices=i)
            row.setflags(write=False)
            self._rows[i] = row
        return row

    def times_to_index(self, j: int) -> np.ndarray:
        """Shortest travel times (s) from every node index to node index ``j``."""
        if self._precomputed():
            return self._matrix()[:, j]
        col = self._cols.get(j)
        if col is None:
            col = dijkstra(self._weights.T.tocsr(), directed=True, indices=j)
            col.setflags(write=False)
            self._cols[j] = col
        return col

    def travel_time(self, origin: int, dest: int) -> float:
        return float(self.times_from_index(self.index_of(origin))[self.index_of(dest)])


def generate_grid(rows: int, cols: int, edge_len_m: float,
                  speed_kmh: float = DEFAULT_OUTER_SPEED_KMH) -> RoadGraph:
    """Bidirectional rows x cols lattice; node ``r*cols + c`` sits at (c*len, r*len)."""
    if int(rows) != rows or int(cols) != cols or rows < 2 or cols < 2:
        raise ConfigurationError(f"grid needs rows >= 2 and cols >= 2, got {rows}x{cols}")
    if not (edge_len_m > 0 and math.isfinite(edge_len_m)):
        raise ConfigurationError(f"edge_len_m must be positive, got {edge_len_m}")
    rows, cols = int(rows), int(cols)
    speed = kmh_to_mps(speed_kmh)
    nodes = [(r * cols + c, c * edge_len_m, r * edge_len_m) for r in range(rows) for c in range(cols)]
    edges = []
    for r in range(rows):
        for c in range(cols):
            u = r * cols + c
            for dr, dc in ((0, 1), (1, 0)):
                rr, cc = r + dr, c + dc
                if rr < rows and cc < cols:
                    v = rr * cols + cc
                    edges.append(Edge(len(edges), u, v, float(edge_len_m), speed))
                    edges.append(Edge(len(edges), v, u, float(edge_len_m), speed))
    return RoadGraph(nodes, edges)


def _read_csv(path: Path, header: list[str]) -> list[dict[str, str]]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(row for row in fh if not row.startswith("#"))
        if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != header:
            raise SchemaError(f"{path}: expected header {','.join(header)}, got {reader.fieldnames}")
        return [{k.strip(): (v or "").strip() for k, v in row.items()} for row in reader]


def load_graph(nodes_file: str | Path, edges_file: str | Path,
               speed_kmh: float = DEFAULT_OUTER_SPEED_KMH) -> RoadGraph:
    """Read a node/edge CSV pair. Speeds are not part of the files; every
    edge starts at ``speed_kmh`` until :func:`classify_speeds` is applied."""
    speed = kmh_to_mps(speed_kmh)
    nodes = []
    for lineno, row in enumerate(_read_csv(Path(nodes_file), NODES_HEADER), start=2):
        try:
            nodes.append((int(row["node_id"]), float(row["x_m"]), float(row["y_m"])))
        except ValueError as exc:
            raise SchemaError(f"{nodes_file}:{lineno}: {exc}") from None
    edges = []
    for lineno, row in enumerate(_read_csv(Path(edges_file), EDGES_HEADER), start=2):
        try:
            edge = Edge(int(row["edge_id"]), int(row["from_node"]), int(row["to_node"]),
                        float(row["length_m"]), speed)
        except ValueError as exc:
            raise SchemaError(f"{edges_file}:{lineno}: {exc}") from None
        if not edge.length_m > 0:
            raise SchemaError(f"{edges_file}:{lineno}: length_m must be positive")
        edges.append(edge)
    return RoadGraph(nodes, edges)


def classify_speeds(graph: RoadGraph, centre: tuple[float, float], radius_m: float,
                    central_speed_kmh: float = DEFAULT_CENTRAL_SPEED_KMH,
                    outer_speed_kmh: float = DEFAULT_OUTER_SPEED_KMH) -> RoadGraph:
    """Central speed for edges whose midpoint is within ``radius_m`` of ``centre``."""
    if not radius_m > 0:
        raise ConfigurationError("radius_m must be positive")
    if not (central_speed_kmh > 0 and outer_speed_kmh > 0):
        raise ConfigurationError("speeds must be positive")
    central, outer = kmh_to_mps(central_speed_kmh), kmh_to_mps(outer_speed_kmh)
    cx, cy = centre
    speeds = []
    for e in graph.edges:
        (x1, y1), (x2, y2) = graph.coords(e.source), graph.coords(e.target)
        mx, my = (x1 + x2) / 2, (y1 + y2) / 2
        speeds.append(central if math.hypot(mx - cx, my - cy) <= radius_m else outer)
    return graph.with_speeds(speeds)


def in_zone(graph: RoadGraph, node_id: int, centre: tuple[float, float], radius_m: float) -> bool:
    x, y = graph.coords(node_id)
    return math.hypot(x - centre[0], y - centre[1]) <= radius_m


def shortest_route(graph: RoadGraph, origin: int, dest: int) -> Route:
    """Time-shortest route; among equal-time routes the lexicographically
    smallest node sequence wins.

    ``time_s`` is the value from the shortest-time table (sum of edge times
    in travel order); the node sequence is rebuilt greedily along edges that
    are tight with respect to the remaining time to ``dest``.
    """
    o, d = graph.index_of(origin), graph.index_of(dest)
    if o == d:
        return Route((origin,), 0.0, 0.0)
    to_dest = graph.times_to_index(d)
    path = [origin]
    lengths = []
    cur = origin
    for _ in range(graph.n_nodes):
        remaining = to_dest[graph.index_of(cur)]
        tol = 1e-9 * max(1.0, remaining)
        chosen = None
        # out edges are sorted by (target id, time, edge id)
        for e in graph.out_edges(cur):
            if abs(e.time_s + to_dest[graph.index_of(e.target)] - remaining) <= tol:
                chosen = e
                break
        if chosen is None:
            raise GraphValidationError(f"no tight edge out of node {cur} towards {dest}")
        path.append(chosen.target)
        lengths.append(chosen.length_m)
        cur = chosen.target
        if cur == dest:
            break
    else:
        raise GraphValidationError(f"route reconstruction from {origin} to {dest} did not terminate")
    time_s = float(graph.times_from_index(o)[d])
    return Route(tuple(path), math.fsum(lengths), time_s)
