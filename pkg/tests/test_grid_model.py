"""Case ingestion, admittance assembly, and the power-flow oracle."""

import json

import numpy as np
import pytest

from gridgsp import grid_model as gm
from gridgsp.cases import case_path


def test_case2_structure(case2):
    assert case2.n_nodes == 2
    assert [str(n) for n in case2.nodes] == ["1.a", "2.a"]
    assert len(case2.lines) == 1
    assert case2.slack_bus.id == "1"


def test_case4_structure(case4):
    assert case4.n_nodes == 12
    assert len(case4.buses) == 4
    phase_sets = {tuple(ln.phases) for ln in case4.lines}
    assert ("a", "b", "c") in phase_sets
    assert ("b", "c") in phase_sets and ("a",) in phase_sets
    assert len(case4.inverters) == 2


def test_duplicate_bus_id_rejected():
    buses = [
        gm.Bus("1", ("a",), "slack"),
        gm.Bus("1", ("a",), "load"),
    ]
    with pytest.raises(gm.CaseValidationError, match="duplicate bus"):
        gm.GridCase(buses, [], [], 1.0, 1.0)


def test_two_slacks_rejected():
    buses = [gm.Bus("1", ("a",), "slack"), gm.Bus("2", ("a",), "slack")]
    lines = [gm.LineBranch("1", "2", ("a",), np.array([[-1j]]), np.array([[0j]]))]
    with pytest.raises(gm.CaseValidationError, match="slack"):
        gm.GridCase(buses, lines, [], 1.0, 1.0)


def test_line_phase_not_at_endpoint_rejected():
    buses = [gm.Bus("1", ("a",), "slack"), gm.Bus("2", ("a",), "load")]
    lines = [
        gm.LineBranch("1", "2", ("a", "b"), -1j * np.eye(2), 0j * np.eye(2))
    ]
    with pytest.raises(gm.CaseValidationError, match="phases"):
        gm.GridCase(buses, lines, [], 1.0, 1.0)


def test_disconnected_graph_rejected():
    buses = [
        gm.Bus("1", ("a",), "slack"),
        gm.Bus("2", ("a",), "load"),
        gm.Bus("3", ("a",), "load"),
    ]
    lines = [gm.LineBranch("1", "2", ("a",), np.array([[-1j]]), np.array([[0j]]))]
    with pytest.raises(gm.CaseValidationError, match="disconnected"):
        gm.GridCase(buses, lines, [], 1.0, 1.0)


def test_parse_error_reports_field(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text(json.dumps({"buses": [], "lines": []}))
    with pytest.raises(gm.CaseParseError, match="base_kv"):
        gm.load_case(p)
    p.write_text("{not json")
    with pytest.raises(gm.CaseParseError, match="JSON"):
        gm.load_case(p)


def test_case_roundtrip(case4, tmp_path):
    doc = gm.case_to_dict(case4)
    p = tmp_path / "rt.json"
    p.write_text(json.dumps(doc))
    again = gm.load_case(p)
    ya = gm.assemble_admittance(again)
    yb = gm.assemble_admittance(case4)
    assert np.max(np.abs(ya - yb)) == 0.0


def test_admittance_2bus_exact(y2):
    expected = np.array([[-10j, 10j], [10j, -10j]])
    assert np.max(np.abs(y2 - expected)) == 0.0


def test_admittance_shunt_adds_half_per_end():
    buses = [gm.Bus("1", ("a",), "slack"), gm.Bus("2", ("a",), "load")]
    lines = [
        gm.LineBranch(
            "1", "2", ("a",), np.array([[-10j]]), np.array([[0.2j]])
        )
    ]
    case = gm.GridCase(buses, lines, [], 1.0, 1.0)
    y = gm.assemble_admittance(case)
    assert y[0, 0] == pytest.approx(-10j + 0.1j)
    assert y[1, 1] == pytest.approx(-10j + 0.1j)
    assert y[0, 1] == pytest.approx(10j)


def test_admittance_symmetry_exact(y4):
    assert np.max(np.abs(y4 - y4.T)) == 0.0


def test_admittance_matches_hand_assembly(case4, y4):
    """Independent assembly from the raw line blocks, bus block by block."""
    n = case4.n_nodes
    ref = np.zeros((n, n), complex)
    for ln in case4.lines:
        fi = [case4.node_index(ln.from_bus, p) for p in ln.phases]
        ti = [case4.node_index(ln.to_bus, p) for p in ln.phases]
        for r, i in enumerate(fi):
            for c, j in enumerate(fi):
                ref[i, j] += ln.y_series[r, c] + 0.5 * ln.y_shunt[r, c]
            for c, j in enumerate(ti):
                ref[i, j] -= ln.y_series[r, c]
        for r, i in enumerate(ti):
            for c, j in enumerate(ti):
                ref[i, j] += ln.y_series[r, c] + 0.5 * ln.y_shunt[r, c]
            for c, j in enumerate(fi):
                ref[i, j] -= ln.y_series[r, c]
    assert np.max(np.abs(y4 - ref)) < 1e-14


def test_zero_shunt_rowsum_is_zero(case_mixed):
    """With no shunts, any per-phase-constant voltage draws no current."""
    lines = [
        gm.LineBranch(ln.from_bus, ln.to_bus, ln.phases, ln.y_series, 0 * ln.y_shunt)
        for ln in case_mixed.lines
    ]
    case = gm.GridCase(case_mixed.buses, lines, [], 1.0, 1.0)
    y = gm.assemble_admittance(case)
    rot = case.nominal_voltage()
    assert np.max(np.abs(y @ rot)) < 1e-12
    assert np.max(np.abs(y @ np.ones(case.n_nodes))) < 1e-12


def test_no_load_flat_solution(case2):
    op = gm.solve_power_flow(case2, np.zeros(2, complex))
    assert np.max(np.abs(op.v - case2.nominal_voltage())) < 1e-12
    assert np.max(np.abs(op.s)) < 1e-12


def test_2bus_residual(case2):
    s = np.array([0.0, -0.1 + 0.0j])
    op = gm.solve_power_flow(case2, s)
    assert abs(op.s[1] - (-0.1)) <= 1e-8
    # hand solution of v*(conj(y(v - 1))) = s at the load end
    assert abs(op.v[1]) < 1.0


def test_solver_extreme_injections_fail(case2):
    s = np.array([0.0, -100.0 + 0.0j])
    with pytest.raises(gm.PowerFlowError):
        gm.solve_power_flow(case2, s)


def test_solver_residual_all_cases(case4):
    rng = np.random.default_rng(3)
    for _ in range(5):
        s = np.zeros(12, complex)
        s[3:] = -(rng.random(9) * 0.03 + 0.005) * (1 + 0.3j)
        op = gm.solve_power_flow(case4, s)
        assert np.max(np.abs(op.s[3:] - s[3:])) <= 1e-8
        assert np.max(np.abs(op.i - gm.assemble_admittance(case4) @ op.v)) < 1e-10


def test_injection_roundtrip(case4, y4):
    s = np.zeros(12, complex)
    s[3:] = -0.02 - 0.008j
    op = gm.solve_power_flow(case4, s)
    s_back = gm.compute_injections(op, y4)
    assert np.max(np.abs(s_back[3:] - s[3:])) <= 1e-8


def test_compute_injections_flat_zero_shunt(case2, y2):
    v = case2.nominal_voltage()
    assert np.max(np.abs(gm.compute_injections(v, y2))) == 0.0


def test_compute_injections_hand_2x2(y2):
    # v chosen by hand: i = Y v, s = v * conj(i)
    v = np.array([1.0 + 0.0j, 0.95 - 0.02j])
    i = np.array(
        [-10j * v[0] + 10j * v[1], 10j * v[0] - 10j * v[1]]
    )
    expected = v * np.conj(i)
    got = gm.compute_injections(v, y2)
    assert np.max(np.abs(got - expected)) < 1e-15


def test_compute_injections_dim_mismatch(y2):
    with pytest.raises(ValueError, match="mismatch"):
        gm.compute_injections(np.ones(3, complex), y2)


def test_mixed_phase_case_solves(case_mixed):
    s = np.zeros(case_mixed.n_nodes, complex)
    s[3:] = -0.01 - 0.004j
    op = gm.solve_power_flow(case_mixed, s)
    assert np.max(np.abs(op.s[3:] - s[3:])) <= 1e-8


def test_singular_island():
    # phase b of bus 3 couples to nothing if the lateral only carries phase a
    buses = [
        gm.Bus("1", ("a",), "slack"),
        gm.Bus("2", ("a", "b"), "load"),
    ]
    lines = [
        gm.LineBranch("1", "2", ("a",), np.array([[-5j]]), np.array([[0j]])),
    ]
    case = gm.GridCase(buses, lines, [], 1.0, 1.0)
    with pytest.raises(gm.SingularNetworkError):
        gm.solve_power_flow(case, np.zeros(3, complex))


def test_inverter_validation():
    buses = [gm.Bus("1", ("a",), "slack"), gm.Bus("2", ("a",), "load")]
    lines = [gm.LineBranch("1", "2", ("a",), np.array([[-1j]]), np.array([[0j]]))]
    inv = [gm.InverterSpec(gm.NodeIndex("2", "a"), s_rating=0.1, p_actual=0.2)]
    with pytest.raises(gm.CaseValidationError, match="p_actual"):
        gm.GridCase(buses, lines, inv, 1.0, 1.0)
    inv = [gm.InverterSpec(gm.NodeIndex("9", "a"), s_rating=0.1)]
    with pytest.raises(gm.CaseValidationError, match="unknown node"):
        gm.GridCase(buses, lines, inv, 1.0, 1.0)


def test_bundled_paths_exist():
    for name in ("case2", "case4"):
        gm.load_case(case_path(name))
