"""Lane-change and rerouting control for CAVs around protected bus operations.

Three strategies share one interface:

* ``drp``: reactive rerouting on instantaneous costs plus myopic lane hops
  toward whichever adjacent lane is currently faster; no bus awareness.
* ``prp``: predictive rerouting triggered by bus-interference warnings, with
  the hard bus-protection constraints active, but still myopic lane hops.
* ``proposed``: hard bus protection, utility-scored single-winner lane
  changes per segment, and warning-plus-congestion-gated targeted rerouting.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from . import routing
from .engine import World
from .network import Lane, SegmentRef, VehicleClass
from .prediction import PredictionSnapshot

STRATEGIES = ("drp", "prp", "proposed")


class ControlError(ValueError):
    pass


@dataclass(frozen=True)
class ControlParams:
    """Weights and tolerances for the coordination layer."""

    w1: float = 0.3                 # predicted time benefit
    w2: float = 0.3                 # downstream turn feasibility
    w3: float = 0.4                 # lane-change frequency penalty
    bus_tolerance: float = 0.2      # warning when bus time exceeds (1+tol)*t0
    reroute_tolerance: float = 0.3  # escalation gate on the adjacent GPL
    change_horizon: float = 120.0   # rolling window for the frequency penalty
    hysteresis: float = 0.05        # reactive reroute damping (drp only)
    count_forced_changes: bool = True  # forced exits feed the frequency penalty

    def __post_init__(self):
        if min(self.w1, self.w2, self.w3) < 0:
            raise ControlError("weights must be >= 0")
        if self.bus_tolerance <= 0 or self.reroute_tolerance <= 0:
            raise ControlError("tolerances must be > 0")
        if self.change_horizon <= 0:
            raise ControlError("change horizon must be > 0")
        if self.hysteresis < 0:
            raise ControlError("hysteresis must be >= 0")


@dataclass(frozen=True)
class LaneAction:
    vehicle: int
    segment: SegmentRef          # segment occupied when the decision was made
    direction: int               # +1 toward the right lane, -1 toward the left
    forced: bool
    utility: Optional[float] = None
    terms: Optional[tuple[float, float, float]] = None


@dataclass(frozen=True)
class RouteAssignment:
    vehicle: int
    route: tuple[int, ...]


@dataclass
class ControlDecision:
    t: float
    actions: list[LaneAction] = field(default_factory=list)
    reroutes: list[RouteAssignment] = field(default_factory=list)
    warned: frozenset[SegmentRef] = frozenset()
    banned: frozenset[tuple[int, SegmentRef]] = frozenset()
    winners: dict[SegmentRef, tuple[int, float]] = field(default_factory=dict)
    escalation_exhausted: int = 0


# -- protection -------------------------------------------------------------------


def bus_warning(bus_time: float, t0: float, tolerance: float) -> bool:
    """Interference warning: predicted bus time strictly above (1+tol)*t0."""
    return bus_time > (1.0 + tolerance) * t0


def warned_segments(snapshot: PredictionSnapshot, params: ControlParams) -> frozenset[SegmentRef]:
    out = [
        seg
        for seg, bt in snapshot.bus_time.items()
        if bus_warning(bt, snapshot.model.t0(seg), params.bus_tolerance)
    ]
    return frozenset(out)


@dataclass(frozen=True)
class ProtectionActions:
    warned: frozenset[SegmentRef]
    forced: tuple[tuple[int, SegmentRef], ...]       # overlapping DL occupants
    banned: frozenset[tuple[int, SegmentRef]]        # overlapping non-occupants


def protection_actions(snapshot: PredictionSnapshot, params: ControlParams) -> ProtectionActions:
    """Hard constraints on every warned segment.

    Every overlapping CAV already on the segment must leave toward the GPL;
    every other overlapping CAV may not move onto it this step.
    """
    warned = warned_segments(snapshot, params)
    forced: list[tuple[int, SegmentRef]] = []
    banned: set[tuple[int, SegmentRef]] = set()
    for seg in sorted(warned):
        for vid in sorted(snapshot.overlap):
            if seg not in snapshot.overlap[vid]:
                continue
            view = snapshot.vehicles[vid]
            if view.segment == seg:
                forced.append((vid, seg))
            else:
                banned.add((vid, seg))
    return ProtectionActions(warned, tuple(forced), frozenset(banned))


# -- utility terms ----------------------------------------------------------------


def u1_time_benefit(snapshot: PredictionSnapshot, seg: SegmentRef, target: SegmentRef) -> float:
    """Predicted time saved by the move, normalized by the free-flow time."""
    return (snapshot.predicted(seg) - snapshot.predicted(target)) / snapshot.model.t0(seg)


def u2_turn_feasibility(snapshot: PredictionSnapshot, vid: int, target_lane: Lane) -> int:
    """1 when the move keeps the next turn reachable.

    Reachable directly (the target lane connects to the next route edge) or
    deferred (the vehicle would still be on the upstream half, leaving one
    change-back opportunity before the turn).
    """
    view = snapshot.vehicles[vid]
    seg = view.segment
    if seg.m == 1:
        return 1
    if view.route_index + 1 >= len(view.route):
        return 1
    nxt = view.route[view.route_index + 1]
    return 1 if snapshot.model.connects(seg.edge, target_lane, nxt) else 0


def u3_change_rate_penalty(log: tuple[float, ...], t: float, horizon: float, dt: float) -> float:
    """Negative share of recent control steps spent changing lanes."""
    n = sum(1 for x in log if t - horizon < x <= t)
    return -n / (horizon / dt)


def weighted_score(params: ControlParams, t1: float, t2: float, t3: float) -> float:
    return params.w1 * t1 + params.w2 * t2 + params.w3 * t3


def utility(
    snapshot: PredictionSnapshot,
    params: ControlParams,
    vid: int,
    seg: SegmentRef,
    target: SegmentRef,
) -> tuple[float, tuple[float, float, float]]:
    view = snapshot.vehicles[vid]
    t1 = u1_time_benefit(snapshot, seg, target)
    t2 = float(u2_turn_feasibility(snapshot, vid, target.lane))
    t3 = u3_change_rate_penalty(
        view.lane_change_log, snapshot.t, params.change_horizon, snapshot.dt
    )
    return weighted_score(params, t1, t2, t3), (t1, t2, t3)


# -- candidate selection ------------------------------------------------------------


@dataclass(frozen=True)
class Candidate:
    vehicle: int
    segment: SegmentRef
    target: SegmentRef
    direction: int


def build_candidates(
    snapshot: PredictionSnapshot,
    seg: SegmentRef,
    banned: frozenset[tuple[int, SegmentRef]],
    excluded: frozenset[int] = frozenset(),
) -> list[Candidate]:
    """CAVs on a segment whose cross-lane move is admissible this step.

    Scored switching exists to manage joint dedicated-lane usage, so the
    evaluated move is always DL->GPL or GPL->DL; edges without a dedicated
    lane have no candidates (the baselines' myopic hops are not limited this
    way).
    """
    if not snapshot.model.edge(seg.edge).dl:
        return []
    target = SegmentRef(seg.edge, seg.lane.other, seg.m)
    out = []
    for vid in sorted(snapshot.vehicles):
        view = snapshot.vehicles[vid]
        if view.vclass is not VehicleClass.CAV or view.segment != seg:
            continue
        if vid in excluded or (vid, target) in banned:
            continue
        direction = 1 if target.lane is Lane.RIGHT else -1
        out.append(Candidate(vid, seg, target, direction))
    return out


def pick_winner(scored: list[tuple[int, float]]) -> Optional[tuple[int, float]]:
    """Argmax with ties resolved to the lowest vehicle id."""
    best: Optional[tuple[int, float]] = None
    for vid, u in scored:
        if best is None or u > best[1] or (u == best[1] and vid < best[0]):
            best = (vid, u)
    return best


def select_lane_changes(snapshot: PredictionSnapshot, params: ControlParams) -> ControlDecision:
    """Hard protection plus one positively scored winner per segment."""
    prot = protection_actions(snapshot, params)
    decision = ControlDecision(
        t=snapshot.t, warned=prot.warned, banned=prot.banned
    )
    forced_ids = frozenset(vid for vid, _ in prot.forced)
    for vid, seg in prot.forced:
        decision.actions.append(LaneAction(vid, seg, -1, forced=True))
    occupied: dict[SegmentRef, bool] = {}
    for view in snapshot.vehicles.values():
        if view.vclass is VehicleClass.CAV:
            occupied[view.segment] = True
    for seg in sorted(occupied):
        candidates = build_candidates(snapshot, seg, prot.banned, excluded=forced_ids)
        if not candidates:
            continue
        scored = []
        details = {}
        for cand in candidates:
            u, terms = utility(snapshot, params, cand.vehicle, seg, cand.target)
            scored.append((cand.vehicle, u))
            details[cand.vehicle] = (u, terms, cand.direction)
        winner = pick_winner(scored)
        if winner is None:
            continue
        vid, u = winner
        decision.winners[seg] = (vid, u)
        if u > 0:
            _, terms, direction = details[vid]
            decision.actions.append(
                LaneAction(vid, seg, direction, forced=False, utility=u, terms=terms)
            )
    return decision


# -- rerouting ------------------------------------------------------------------


def predicted_cost_view(snapshot: PredictionSnapshot) -> dict[int, float]:
    """Edge costs from the same short-horizon prediction used for monitoring."""
    model = snapshot.model
    costs: dict[int, float] = {}
    for eid in model.edges:
        total = 0.0
        for m in (1, 2):
            lanes = model.permitted_lanes(VehicleClass.CAV, eid)
            total += min(snapshot.predicted(SegmentRef(eid, l, m)) for l in lanes)
        costs[eid] = total
    return costs


def instantaneous_cost_view(world: World) -> dict[int, float]:
    """Edge costs from current segment speeds (reactive view)."""
    model = world.model
    costs: dict[int, float] = {}
    for eid, edge in model.edges.items():
        total = 0.0
        for m in (1, 2):
            lanes = model.permitted_lanes(VehicleClass.CAV, eid)
            speed = max(world.segment_speed(SegmentRef(eid, l, m)) for l in lanes)
            total += edge.seg_length / speed
        costs[eid] = total
    return costs


def rerouting_escalation(
    world: World,
    snapshot: PredictionSnapshot,
    params: ControlParams,
    warned: frozenset[SegmentRef],
    costs: dict[int, float],
    require_gpl_gate: bool = True,
) -> tuple[list[RouteAssignment], int]:
    """Greedily reroute conflicting CAVs until tolerances clear.

    Members are taken farthest-first (largest predicted entry time), so the
    vehicles with the most routing flexibility move first; after each removal
    the bus time (and the adjacent GPL time, when gated) is recomputed from
    the reduced counts. Vehicles without an alternative route are skipped.
    """
    model = snapshot.model
    bpr = snapshot.bpr
    two_h = 2.0 * snapshot.protection.horizon
    assignments: list[RouteAssignment] = []
    taken: set[int] = set()
    exhausted = 0
    for seg in sorted(warned):
        adjacent = SegmentRef(seg.edge, Lane.LEFT, seg.m)
        t0_seg = model.t0(seg)
        t0_adj = model.t0(adjacent)
        gpl_time = snapshot.predicted(adjacent)
        if require_gpl_gate and not gpl_time > (1.0 + params.reroute_tolerance) * t0_adj:
            continue
        bus_time = snapshot.bus_time.get(seg)
        if bus_time is None:
            continue
        conflict_n = round(snapshot.conflict.get(seg, 0.0) * two_h)
        gpl_flow = snapshot.inflow.get(adjacent, 0.0)

        def cleared() -> bool:
            if bus_warning(bus_time, t0_seg, params.bus_tolerance):
                return False
            if require_gpl_gate and gpl_time > (1.0 + params.reroute_tolerance) * t0_adj:
                return False
            return True

        if cleared():
            continue
        members = []
        for vid in sorted(snapshot.overlap):
            if seg not in snapshot.overlap[vid] or vid in taken:
                continue
            view = snapshot.vehicles[vid]
            own = view.segment
            tau = 0.0 if (own.edge, own.m) == (seg.edge, seg.m) else snapshot.tau[vid].get(seg, 0.0)
            members.append((vid, tau))
        members.sort(key=lambda item: (-item[1], item[0]))
        for vid, _ in members:
            if cleared():
                break
            view = snapshot.vehicles[vid]
            if view.route[view.route_index] == seg.edge:
                continue  # cannot avoid the edge it is already on
            veh = world.vehicles.get(vid)
            if veh is None:
                continue
            new_route = routing.reroute(
                model,
                veh.route,
                veh.route_index,
                veh.destination,
                VehicleClass.CAV,
                costs,
                forbidden=frozenset({seg.edge}),
            )
            if new_route is None or new_route == veh.route:
                continue
            assignments.append(RouteAssignment(vid, tuple(new_route)))
            taken.add(vid)
            conflict_n = max(0, conflict_n - 1)
            bus_time = _bpr(model, seg, conflict_n / two_h, bpr)
            tau_adj = snapshot.tau[vid].get(adjacent)
            if tau_adj is not None and 0 <= tau_adj < snapshot.dt:
                gpl_flow = max(0.0, gpl_flow - 1.0 / snapshot.dt)
                gpl_time = _bpr(model, adjacent, gpl_flow, bpr)
        if not cleared():
            exhausted += 1
    return assignments, exhausted


def _bpr(model, seg, flow, params):
    from .prediction import bpr_time

    return bpr_time(model.t0(seg), flow, model.capacity(seg), params)


# -- myopic behaviour (baseline strategies) -------------------------------------------


def myopic_lane_actions(
    world: World,
    snapshot: PredictionSnapshot,
    banned: frozenset[tuple[int, SegmentRef]],
    excluded: frozenset[int],
) -> list[LaneAction]:
    """Hop to the adjacent permitted lane when it is currently strictly faster."""
    actions = []
    for vid in sorted(snapshot.vehicles):
        view = snapshot.vehicles[vid]
        if view.vclass is not VehicleClass.CAV or vid in excluded:
            continue
        seg = view.segment
        target = SegmentRef(seg.edge, seg.lane.other, seg.m)
        if (vid, target) in banned:
            continue
        if world.segment_speed(target) > world.segment_speed(seg):
            direction = 1 if target.lane is Lane.RIGHT else -1
            actions.append(LaneAction(vid, seg, direction, forced=False))
    return actions


def reactive_reroutes(
    world: World, snapshot: PredictionSnapshot, params: ControlParams, costs: dict[int, float]
) -> list[RouteAssignment]:
    """Per-CAV shortest-path recomputation with switch hysteresis."""
    out = []
    for vid in sorted(snapshot.vehicles):
        view = snapshot.vehicles[vid]
        if view.vclass is not VehicleClass.CAV:
            continue
        veh = world.vehicles.get(vid)
        if veh is None or veh.route_index + 1 >= len(veh.route):
            continue
        current_cost = routing.path_cost(veh.route[veh.route_index + 1 :], costs)
        candidate = routing.reroute(
            world.model, veh.route, veh.route_index, veh.destination,
            VehicleClass.CAV, costs,
        )
        if candidate is None or candidate == veh.route:
            continue
        new_cost = routing.path_cost(candidate[veh.route_index + 1 :], costs)
        if new_cost < (1.0 - params.hysteresis) * current_cost:
            out.append(RouteAssignment(vid, tuple(candidate)))
    return out


# -- strategy dispatch ------------------------------------------------------------


def strategy_step(
    strategy: str,
    world: World,
    snapshot: PredictionSnapshot,
    params: ControlParams,
) -> ControlDecision:
    """One control step of the chosen strategy."""
    if strategy == "proposed":
        decision = select_lane_changes(snapshot, params)
        costs = predicted_cost_view(snapshot)
        reroutes, exhausted = rerouting_escalation(
            world, snapshot, params, decision.warned, costs, require_gpl_gate=True
        )
        decision.reroutes = reroutes
        decision.escalation_exhausted = exhausted
        return decision
    if strategy == "prp":
        prot = protection_actions(snapshot, params)
        decision = ControlDecision(t=snapshot.t, warned=prot.warned, banned=prot.banned)
        forced_ids = frozenset(vid for vid, _ in prot.forced)
        for vid, seg in prot.forced:
            decision.actions.append(LaneAction(vid, seg, -1, forced=True))
        decision.actions.extend(
            myopic_lane_actions(world, snapshot, prot.banned, excluded=forced_ids)
        )
        costs = predicted_cost_view(snapshot)
        reroutes, exhausted = rerouting_escalation(
            world, snapshot, params, prot.warned, costs, require_gpl_gate=False
        )
        decision.reroutes = reroutes
        decision.escalation_exhausted = exhausted
        return decision
    if strategy == "drp":
        decision = ControlDecision(t=snapshot.t)
        decision.actions.extend(
            myopic_lane_actions(world, snapshot, frozenset(), excluded=frozenset())
        )
        costs = instantaneous_cost_view(world)
        decision.reroutes = reactive_reroutes(world, snapshot, params, costs)
        return decision
    raise ControlError(f"unknown strategy {strategy!r}")
