"""Trip records, bus punctuality, KPI time series and CSV reports."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

from .engine import World
from .network import VehicleClass

#: a bus arrival counts as on time when its delay is at most this many seconds
ON_TIME_TOLERANCE = 30.0


@dataclass(frozen=True)
class TripRecord:
    vehicle: int
    vclass: VehicleClass
    depart_time: float
    arrival_time: float
    lane_change_count: int
    reroute_count: int

    @property
    def travel_time(self) -> float:
        return self.arrival_time - self.depart_time


@dataclass(frozen=True)
class BusStopArrival:
    vehicle: int
    line: int
    trip: int
    stop: int
    scheduled: float
    actual: float

    @property
    def delay(self) -> float:
        return self.actual - self.scheduled

    @property
    def on_time(self) -> bool:
        return self.delay <= ON_TIME_TOLERANCE


@dataclass
class KpiSample:
    t: float
    cumulative_bus_travel_time: float
    avg_cav_travel_time: Optional[float]
    avg_hdv_travel_time: Optional[float]
    cumulative_cav_lane_changes: int


@dataclass
class RunMetrics:
    trips: list[TripRecord] = field(default_factory=list)
    bus_arrivals: list[BusStopArrival] = field(default_factory=list)
    series: list[KpiSample] = field(default_factory=list)
    # (t, vehicle, edge, m, lane_from, lane_to, reason)
    lane_change_events: list[tuple] = field(default_factory=list)


def collect_trips(world: World) -> list[TripRecord]:
    changes_by_vehicle: dict[int, int] = {}
    for event in world.lane_changes:
        changes_by_vehicle[event[1]] = changes_by_vehicle.get(event[1], 0) + 1
    out = []
    for veh in world.retired:
        out.append(
            TripRecord(
                vehicle=veh.id,
                vclass=veh.vclass,
                depart_time=veh.depart_time,
                arrival_time=veh.arrival_time,
                lane_change_count=changes_by_vehicle.get(veh.id, 0),
                reroute_count=veh.reroute_count,
            )
        )
    return out


def collect_bus_arrivals(world: World) -> list[BusStopArrival]:
    return [
        BusStopArrival(vehicle=v, line=line, trip=trip, stop=stop, scheduled=sched, actual=actual)
        for (v, line, trip, stop, sched, actual) in world.stop_arrivals
    ]


def on_time_rate(arrivals: Iterable[BusStopArrival]) -> Optional[float]:
    """Share of arrivals within tolerance, percent; None without samples."""
    arrivals = list(arrivals)
    if not arrivals:
        return None
    hits = sum(1 for a in arrivals if a.on_time)
    return 100.0 * hits / len(arrivals)


def per_stop_on_time(arrivals: Iterable[BusStopArrival]) -> dict[int, float]:
    by_stop: dict[int, list[BusStopArrival]] = {}
    for a in arrivals:
        by_stop.setdefault(a.stop, []).append(a)
    return {stop: on_time_rate(group) for stop, group in sorted(by_stop.items())}


def avg_completed_travel_time(
    trips: Iterable[TripRecord], vclass: VehicleClass, up_to: float
) -> Optional[float]:
    """Mean travel time of trips completed by `up_to`; None without samples."""
    done = [t.travel_time for t in trips if t.vclass is vclass and t.arrival_time <= up_to]
    if not done:
        return None
    return sum(done) / len(done)


def cumulative_lane_changes(events: Iterable[tuple], up_to: float) -> int:
    return sum(1 for e in events if e[0] <= up_to)


def sample_kpis(world: World, t: float) -> KpiSample:
    bus_total = sum(
        v.arrival_time - v.depart_time
        for v in world.retired
        if v.vclass is VehicleClass.BUS
    )

    def class_avg(vclass: VehicleClass) -> Optional[float]:
        done = [
            v.arrival_time - v.depart_time
            for v in world.retired
            if v.vclass is vclass
        ]
        return sum(done) / len(done) if done else None

    return KpiSample(
        t=t,
        cumulative_bus_travel_time=bus_total,
        avg_cav_travel_time=class_avg(VehicleClass.CAV),
        avg_hdv_travel_time=class_avg(VehicleClass.HDV),
        cumulative_cav_lane_changes=len(world.lane_changes),
    )


# -- CSV output -------------------------------------------------------------------


def _sec(x: Optional[float]) -> str:
    return "" if x is None else f"{x:.6f}"


def write_csv(path: Path, header: list[str], rows: Iterable[Iterable]):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def write_reports(metrics: RunMetrics, summary: dict, out_dir: str | Path) -> list[Path]:
    """Write the five standard report files; byte-stable for identical runs."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    path = out / "trips.csv"
    write_csv(
        path,
        ["vehicle", "class", "depart_time", "arrival_time", "travel_time",
         "lane_change_count", "reroute_count"],
        (
            [t.vehicle, t.vclass.value, _sec(t.depart_time), _sec(t.arrival_time),
             _sec(t.travel_time), t.lane_change_count, t.reroute_count]
            for t in sorted(metrics.trips, key=lambda r: (r.arrival_time, r.vehicle))
        ),
    )
    written.append(path)

    path = out / "bus_arrivals.csv"
    write_csv(
        path,
        ["vehicle", "line", "trip", "stop", "scheduled_arrival", "actual_arrival",
         "delay", "on_time"],
        (
            [a.vehicle, a.line, a.trip, a.stop, _sec(a.scheduled), _sec(a.actual),
             _sec(a.delay), int(a.on_time)]
            for a in sorted(metrics.bus_arrivals, key=lambda r: (r.actual, r.vehicle, r.stop))
        ),
    )
    written.append(path)

    path = out / "timeseries.csv"
    write_csv(
        path,
        ["t", "cumulative_bus_travel_time", "avg_cav_travel_time",
         "avg_hdv_travel_time", "cumulative_cav_lane_changes"],
        (
            [_sec(s.t), _sec(s.cumulative_bus_travel_time), _sec(s.avg_cav_travel_time),
             _sec(s.avg_hdv_travel_time), s.cumulative_cav_lane_changes]
            for s in metrics.series
        ),
    )
    written.append(path)

    path = out / "lane_changes.csv"
    write_csv(
        path,
        ["t", "vehicle", "edge", "m", "lane_from", "lane_to", "reason"],
        (
            [_sec(e[0]), e[1], e[2], e[3], e[4], e[5], e[6]]
            for e in metrics.lane_change_events
        ),
    )
    written.append(path)

    path = out / "summary.csv"
    write_csv(path, list(summary.keys()), [[_format_summary_value(v) for v in summary.values()]])
    written.append(path)
    return written


def _format_summary_value(v):
    if isinstance(v, bool):
        return int(v)
    if isinstance(v, float):
        return f"{v:.6f}"
    if v is None:
        return ""
    return v


def write_combined_summary(rows: list[dict], out_dir: str | Path) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "summary.csv"
    if not rows:
        write_csv(path, [], [])
        return path
    header = list(rows[0].keys())
    write_csv(
        path, header,
        ([_format_summary_value(row.get(k)) for k in header] for row in rows),
    )
    return path
