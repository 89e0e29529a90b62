import json

import pytest

from jointlane.scenario import ScenarioError, apply_overrides, from_dict, load_scenario


def minimal_scenario(**over):
    data = {
        "meta": {"name": "toy", "horizon": 100.0},
        "nodes": [1, 2],
        "edges": [
            {"id": 0, "from": 1, "to": 2, "length": 100.0,
             "free_flow_speed": 10.0, "dl": False, "capacity": 0.2}
        ],
        "demand": [],
    }
    data.update(over)
    return data


def test_minimal_scenario_loads():
    scn = from_dict(minimal_scenario())
    assert len(scn.model.segments(0)) == 4
    assert scn.clock.dt_control == 15.0
    assert scn.control.w3 == 0.4


def test_connections_synthesized_with_warning():
    scn = from_dict(minimal_scenario())
    assert any("synthesized" in w for w in scn.warnings)
    explicit = minimal_scenario(connections=[
        {"from_edge": 0, "from_lane": "left", "to_edge": 0}
    ])
    explicit["edges"].append(
        {"id": 1, "from": 2, "to": 1, "length": 50.0,
         "free_flow_speed": 5.0, "dl": False, "capacity": 0.2}
    )
    explicit["connections"] = [{"from_edge": 0, "from_lane": "left", "to_edge": 1}]
    scn = from_dict(explicit)
    assert scn.warnings == ()


def test_parse_error_reports_position(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text('{"nodes": [1, 2,\n  "edges": }', encoding="utf-8")
    with pytest.raises(ScenarioError, match=r"line \d+, column \d+"):
        load_scenario(path)


def test_missing_field_names_the_field():
    data = minimal_scenario()
    del data["edges"][0]["length"]
    with pytest.raises(ScenarioError, match="edges\\[0\\].*length"):
        from_dict(data)


def test_unknown_field_rejected():
    data = minimal_scenario()
    data["edges"][0]["lenght"] = 5
    with pytest.raises(ScenarioError, match="lenght"):
        from_dict(data)


def test_capacity_unit_conversion():
    data = minimal_scenario()
    data["edges"][0]["capacity"] = {"value": 720.0, "unit": "veh/h"}
    scn = from_dict(data)
    assert scn.model.edge(0).capacity == pytest.approx(0.2)
    data["edges"][0]["capacity"] = {"value": 0.2, "unit": "furlongs"}
    with pytest.raises(ScenarioError, match="unit"):
        from_dict(data)


def test_bus_stop_requires_dedicated_lane():
    data = minimal_scenario(bus_stops=[{"id": 0, "edge": 0, "offset": 50.0}])
    with pytest.raises(ScenarioError, match="dedicated lane"):
        from_dict(data)


def test_bus_line_rejects_general_purpose_edge():
    data = {
        "meta": {"horizon": 100.0},
        "nodes": [1, 2, 3],
        "edges": [
            {"id": 0, "from": 1, "to": 2, "length": 100.0,
             "free_flow_speed": 10.0, "dl": True, "capacity": 0.2},
            {"id": 1, "from": 2, "to": 3, "length": 100.0,
             "free_flow_speed": 10.0, "dl": False, "capacity": 0.2},
        ],
        "bus_lines": [{"id": 0, "route": [1, 2, 3], "departures": [0.0]}],
        "demand": [],
    }
    with pytest.raises(ScenarioError, match="not a dedicated lane"):
        from_dict(data)


def test_demand_unroutable_od_rejected():
    data = minimal_scenario()
    data["nodes"] = [1, 2, 3]
    data["demand"] = [{"origin": 2, "destination": 3, "class": "cav", "rate": 0.1}]
    with pytest.raises(ScenarioError, match="no cav route"):
        from_dict(data)


def test_demand_needs_rate_xor_times():
    data = minimal_scenario()
    data["demand"] = [{"origin": 1, "destination": 2, "class": "cav"}]
    with pytest.raises(ScenarioError, match="rate or times"):
        from_dict(data)
    data["demand"] = [{"origin": 1, "destination": 2, "class": "cav",
                       "rate": 0.1, "times": [1.0]}]
    with pytest.raises(ScenarioError, match="rate or times"):
        from_dict(data)


def test_demand_class_validation():
    data = minimal_scenario()
    data["demand"] = [{"origin": 1, "destination": 2, "class": "bus", "rate": 0.1}]
    with pytest.raises(ScenarioError, match="cav or hdv"):
        from_dict(data)


def test_protection_horizon_must_cover_monitor_step():
    data = minimal_scenario(control={"dT_b": 5.0})
    with pytest.raises(ScenarioError, match="dT_b"):
        from_dict(data)


def test_loading_is_idempotent(desk_small_path):
    a = load_scenario(desk_small_path)
    b = load_scenario(desk_small_path)
    assert a == b
    assert a.model == b.model


def test_apply_overrides_returns_updated_copy(desk_small):
    scn = apply_overrides(desk_small, {"w3": 0.6, "lambda": 0.1})
    assert scn.control.w3 == 0.6
    assert scn.control.bus_tolerance == 0.1
    assert desk_small.control.w3 == 0.4  # original untouched
    assert scn.model is desk_small.model
    with pytest.raises(ScenarioError, match="override"):
        apply_overrides(desk_small, {"w9": 1.0})


def test_bundled_fixture_matches_builder(desk_small_path):
    from jointlane import fixtures

    committed = json.loads(desk_small_path.read_text(encoding="utf-8"))
    assert committed == fixtures.build("small")


def test_bundled_large_scenario_loads():
    from jointlane.scenario import load_scenario, resolve_scenario

    scn = load_scenario(resolve_scenario("desk_large"))
    assert scn.meta["horizon"] == 3600.0
    assert len(scn.bus_lines[0].departures) == 10
