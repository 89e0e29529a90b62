"""Directed two-lane road network with half-edge segment resolution.

Every edge carries exactly two same-direction lanes: the left lane is always
general purpose, the right lane is either general purpose or a dedicated bus
lane (DL) that CAVs may share under control. Each lane is split into an
upstream half (m=1) and a downstream half (m=2); segments are the spatial unit
of prediction and control.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum, IntEnum
from typing import NamedTuple, Optional, Sequence

#: default jam spacing used when a scenario does not give a storage limit
JAM_SPACING_M = 7.5


class NetworkError(ValueError):
    """Raised for structurally invalid networks or queries."""


class Lane(IntEnum):
    LEFT = 0
    RIGHT = 1

    @property
    def other(self) -> "Lane":
        return Lane.RIGHT if self is Lane.LEFT else Lane.LEFT

    @property
    def tag(self) -> str:
        return "L" if self is Lane.LEFT else "R"


class VehicleClass(str, Enum):
    HDV = "hdv"
    CAV = "cav"
    BUS = "bus"


class SegmentRef(NamedTuple):
    """Address of one lane segment: (edge id, lane, half index m in {1, 2})."""

    edge: int
    lane: Lane
    m: int


@dataclass(frozen=True)
class Edge:
    id: int
    frm: int
    to: int
    length: float              # meters
    free_flow_speed: float     # m/s
    dl: bool                   # right lane reserved for buses (joint CAV use)
    capacity: float            # veh/s, per lane per segment
    jam_count: int             # storage limit, vehicles per lane per segment
    gate: Optional[tuple[float, float, float]] = None  # (cycle, green, offset) seconds

    def __post_init__(self):
        if self.length <= 0:
            raise NetworkError(f"edge {self.id}: length must be > 0")
        if self.free_flow_speed <= 0:
            raise NetworkError(f"edge {self.id}: free_flow_speed must be > 0")
        if self.capacity <= 0:
            raise NetworkError(f"edge {self.id}: capacity must be > 0")
        if self.jam_count < 1:
            raise NetworkError(f"edge {self.id}: jam_count must be >= 1")
        if self.gate is not None:
            cycle, green, _ = self.gate
            if cycle <= 0 or green < 0 or green > cycle:
                raise NetworkError(f"edge {self.id}: gate needs 0 <= green <= cycle")

    @property
    def seg_length(self) -> float:
        return self.length / 2.0

    @property
    def t0(self) -> float:
        """Free-flow traversal time of one segment (half edge)."""
        return self.seg_length / self.free_flow_speed

    def gate_open(self, t: float) -> bool:
        """Whether the downstream end of this edge admits transfers at time t."""
        if self.gate is None:
            return True
        cycle, green, offset = self.gate
        return (t + offset) % cycle < green


@dataclass(frozen=True)
class BusStop:
    id: int
    edge: int
    offset: float              # meters from edge start, in (0, length]


def default_jam_count(seg_length: float) -> int:
    return max(1, math.ceil(seg_length / JAM_SPACING_M))


class NetworkModel:
    """Immutable road graph shared read-only by engine, predictor and router."""

    def __init__(
        self,
        nodes: Sequence[int],
        edges: Sequence[Edge],
        connections: dict[tuple[int, int], frozenset[Lane]],
        bus_stops: Sequence[BusStop] = (),
    ):
        self.nodes: tuple[int, ...] = tuple(sorted(set(nodes)))
        self.edges: dict[int, Edge] = {e.id: e for e in sorted(edges, key=lambda e: e.id)}
        if len(self.edges) != len(edges):
            raise NetworkError("duplicate edge ids")
        node_set = set(self.nodes)
        for e in self.edges.values():
            if e.frm not in node_set or e.to not in node_set:
                raise NetworkError(f"edge {e.id}: endpoint not in node set")
        self.connections = dict(connections)
        for (src, dst), lanes in self.connections.items():
            if src not in self.edges or dst not in self.edges:
                raise NetworkError(f"connection ({src} -> {dst}): unknown edge")
            if self.edges[src].to != self.edges[dst].frm:
                raise NetworkError(
                    f"connection ({src} -> {dst}): edge {dst} does not start at the "
                    f"node where edge {src} ends"
                )
            if not lanes:
                raise NetworkError(f"connection ({src} -> {dst}): empty lane set")
        self.bus_stops: dict[int, BusStop] = {s.id: s for s in sorted(bus_stops, key=lambda s: s.id)}
        for s in self.bus_stops.values():
            edge = self.edges.get(s.edge)
            if edge is None:
                raise NetworkError(f"bus stop {s.id}: unknown edge {s.edge}")
            if not edge.dl:
                raise NetworkError(
                    f"bus stop {s.id}: hosting edge {s.edge} right lane is not a dedicated lane"
                )
            if not (0 < s.offset <= edge.length):
                raise NetworkError(f"bus stop {s.id}: offset outside (0, length]")
        # node -> outgoing / incoming edge ids, sorted for determinism
        self._out: dict[int, tuple[int, ...]] = {n: () for n in self.nodes}
        self._in: dict[int, tuple[int, ...]] = {n: () for n in self.nodes}
        for e in self.edges.values():
            self._out[e.frm] = self._out[e.frm] + (e.id,)
            self._in[e.to] = self._in[e.to] + (e.id,)
        # successor edges per edge, any lane
        self._next: dict[int, tuple[int, ...]] = {}
        for (src, dst) in sorted(self.connections):
            self._next.setdefault(src, ())
            self._next[src] = self._next[src] + (dst,)

    # -- structural equality (used by load idempotency checks) ----------------

    def __eq__(self, other):
        if not isinstance(other, NetworkModel):
            return NotImplemented
        return (
            self.nodes == other.nodes
            and self.edges == other.edges
            and self.connections == other.connections
            and self.bus_stops == other.bus_stops
        )

    def __hash__(self):
        return hash((self.nodes, tuple(self.edges)))

    # -- queries ---------------------------------------------------------------

    def edge(self, edge_id: int) -> Edge:
        try:
            return self.edges[edge_id]
        except KeyError:
            raise NetworkError(f"unknown edge {edge_id}") from None

    def out_edges(self, node: int) -> tuple[int, ...]:
        return self._out.get(node, ())

    def in_edges(self, node: int) -> tuple[int, ...]:
        return self._in.get(node, ())

    def next_edges(self, edge_id: int) -> tuple[int, ...]:
        return self._next.get(edge_id, ())

    def connects(self, from_edge: int, lane: Lane, to_edge: int) -> bool:
        lanes = self.connections.get((from_edge, to_edge))
        return lanes is not None and lane in lanes

    def lanes_connecting(self, from_edge: int, to_edge: int) -> tuple[Lane, ...]:
        lanes = self.connections.get((from_edge, to_edge), frozenset())
        return tuple(sorted(lanes))

    def segment_of(self, edge_id: int, lane: Lane, offset: float) -> SegmentRef:
        """Map an in-edge offset to its segment; the midpoint belongs to m=2."""
        edge = self.edge(edge_id)
        if not (0 <= offset <= edge.length):
            raise NetworkError(
                f"offset {offset} outside [0, {edge.length}] on edge {edge_id}"
            )
        m = 1 if offset < edge.seg_length else 2
        return SegmentRef(edge_id, lane, m)

    def segments(self, edge_id: int) -> tuple[SegmentRef, ...]:
        return (
            SegmentRef(edge_id, Lane.LEFT, 1),
            SegmentRef(edge_id, Lane.LEFT, 2),
            SegmentRef(edge_id, Lane.RIGHT, 1),
            SegmentRef(edge_id, Lane.RIGHT, 2),
        )

    def all_segments(self) -> list[SegmentRef]:
        out = []
        for eid in self.edges:
            out.extend(self.segments(eid))
        return out

    def t0(self, seg: SegmentRef) -> float:
        return self.edge(seg.edge).t0

    def capacity(self, seg: SegmentRef) -> float:
        return self.edge(seg.edge).capacity

    def jam_count(self, seg: SegmentRef) -> int:
        return self.edge(seg.edge).jam_count

    def is_dl_segment(self, seg: SegmentRef) -> bool:
        return seg.lane is Lane.RIGHT and self.edge(seg.edge).dl

    def permitted_lanes(self, vclass: VehicleClass, edge_id: int) -> tuple[Lane, ...]:
        """Lanes a vehicle class may occupy on an edge.

        Buses run only on the dedicated right lane; HDVs use general-purpose
        lanes only; CAVs may use both lanes including a joint dedicated lane.
        """
        edge = self.edge(edge_id)
        if vclass is VehicleClass.BUS:
            if not edge.dl:
                raise NetworkError(f"edge {edge_id}: bus requires a dedicated right lane")
            return (Lane.RIGHT,)
        if vclass is VehicleClass.CAV:
            return (Lane.LEFT, Lane.RIGHT)
        # HDV
        if edge.dl:
            return (Lane.LEFT,)
        return (Lane.LEFT, Lane.RIGHT)

    def class_connects(self, vclass: VehicleClass, from_edge: int, to_edge: int) -> bool:
        """Whether some lane permitted to the class links the two edges."""
        lanes = self.connections.get((from_edge, to_edge))
        if not lanes:
            return False
        try:
            permitted = self.permitted_lanes(vclass, from_edge)
        except NetworkError:
            return False  # e.g. a bus on an edge without a dedicated lane
        return any(l in lanes for l in permitted)

    def bus_route_lane_path(self, route_edges: Sequence[int]) -> list[SegmentRef]:
        """Right-lane segment sequence for a bus route given as edge ids.

        Raises if any edge lacks a dedicated right lane or if consecutive edges
        are not linked through the right lane.
        """
        if not route_edges:
            raise NetworkError("empty bus route")
        path: list[SegmentRef] = []
        for i, eid in enumerate(route_edges):
            edge = self.edge(eid)
            if not edge.dl:
                raise NetworkError(
                    f"bus route edge {eid} ({edge.frm} -> {edge.to}): right lane is not "
                    "a dedicated lane"
                )
            if i > 0:
                prev = route_edges[i - 1]
                if self.edge(prev).to != edge.frm:
                    raise NetworkError(
                        f"bus route edges {prev} -> {eid} are not adjacent"
                    )
                if not self.connects(prev, Lane.RIGHT, eid):
                    raise NetworkError(
                        f"bus route edges {prev} -> {eid} lack a right-lane connection"
                    )
            path.append(SegmentRef(eid, Lane.RIGHT, 1))
            path.append(SegmentRef(eid, Lane.RIGHT, 2))
        return path


def synthesize_connections(edges: Sequence[Edge]) -> dict[tuple[int, int], frozenset[Lane]]:
    """All-lane connections for every adjacent edge pair (terse toy scenarios)."""
    by_node_out: dict[int, list[int]] = {}
    for e in edges:
        by_node_out.setdefault(e.frm, []).append(e.id)
    conns: dict[tuple[int, int], frozenset[Lane]] = {}
    both = frozenset((Lane.LEFT, Lane.RIGHT))
    for e in edges:
        for nxt in sorted(by_node_out.get(e.to, ())):
            conns[(e.id, nxt)] = both
    return conns
