import dataclasses

import numpy as np
import pytest
from hypothesis import given, strategies as st

from droopkit.core import (
    Converter,
    DroopAssignment,
    GridScenario,
    NetworkGraph,
    ScenarioError,
    SystemBase,
    deviation_hz,
    from_per_unit,
    kron_reduction,
    to_per_unit,
    validate_scenario,
)

BASE = SystemBase(1850.0, 50.0)


# ---------------------------------------------------------------------------
# per-unit conversion
# ---------------------------------------------------------------------------


def test_per_unit_reference_values():
    assert to_per_unit(1740.0, BASE) == pytest.approx(0.9405405405405406, abs=1e-15)
    assert to_per_unit(0.0, BASE) == 0.0
    assert to_per_unit(1850.0, BASE) == 1.0


@given(st.floats(-1e4, 1e4), st.floats(1.0, 1e4))
def test_per_unit_round_trip(mw, s_base):
    base = SystemBase(s_base)
    back = from_per_unit(to_per_unit(mw, base), base)
    assert back == pytest.approx(mw, rel=1e-12, abs=1e-12)


def test_deviation_hz():
    assert deviation_hz(1.8810810810810812e-3, BASE) == pytest.approx(0.09405405405, rel=1e-9)


# ---------------------------------------------------------------------------
# type invariants
# ---------------------------------------------------------------------------


def test_system_base_rejects_nonpositive():
    with pytest.raises(ScenarioError):
        SystemBase(0.0)
    with pytest.raises(ScenarioError):
        SystemBase(100.0, f_nom_hz=-1.0)


def test_converter_bounds():
    with pytest.raises(ScenarioError):
        Converter("a", 100.0, 0.5, p_max=1.5)
    with pytest.raises(ScenarioError):
        Converter("a", 100.0, 0.5, x_min=0.0)
    conv = Converter("a", 100.0, -0.4)
    assert conv.headroom == pytest.approx(0.55)


def test_network_graph_construction_errors():
    with pytest.raises(ScenarioError):
        NetworkGraph(nodes=("a",), edges=(("a", "a", 1.0),))
    with pytest.raises(ScenarioError):
        NetworkGraph(nodes=("a", "b"), edges=(("a", "c", 1.0),))
    with pytest.raises(ScenarioError):
        NetworkGraph(nodes=("a", "b"), edges=(("a", "b", -1.0),))


def test_assignment_derived_fields():
    a = DroopAssignment(np.array([10.0, 590.0]))
    assert a.alpha == pytest.approx(600.0)
    assert np.allclose(a.k_f * a.x, 1.0)
    eq = DroopAssignment.equal(600.0, 6)
    assert np.all(eq.x == 100.0)
    with pytest.raises(ScenarioError):
        DroopAssignment(np.array([1.0, -2.0]))


def test_core_types_immutable(island):
    with pytest.raises(dataclasses.FrozenInstanceError):
        island.base.s_base_mva = 1.0
    with pytest.raises(ValueError):
        island.p_ref[0] = 2.0


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------


def test_validate_clean_island(island):
    report = validate_scenario(island)
    assert report.ok and not report.warnings


def test_validate_duplicate_id(island):
    dup = dataclasses.replace(
        island, converters=island.converters[:-1] + (island.converters[0],)
    )
    report = validate_scenario(dup)
    assert any("duplicate id 'UK'" in e for e in report.errors)


def test_validate_setpoint_beyond_limit(island):
    bad = dataclasses.replace(island.converters[1], p_ref=0.96)
    scen = dataclasses.replace(
        island, converters=island.converters[:1] + (bad,) + island.converters[2:]
    )
    report = validate_scenario(scen)
    assert any("set-point exceeds limit" in e for e in report.errors)


def test_validate_disconnected_network():
    base = SystemBase(100.0)
    conv = (Converter("a", 100.0, 0.0), Converter("b", 100.0, 0.0))
    net = NetworkGraph(nodes=("a", "b"), edges=())
    report = validate_scenario(GridScenario(base, conv, (), net))
    assert any("disconnected" in e for e in report.errors)


def test_validate_imbalance_is_warning_not_error(island):
    skew = dataclasses.replace(island, wind_injections=(("WF1", 1.0),))
    report = validate_scenario(skew)
    assert report.ok
    assert any("imbalance" in w for w in report.warnings)


# ---------------------------------------------------------------------------
# Laplacian and reduction
# ---------------------------------------------------------------------------


@given(st.integers(2, 8), st.integers(0, 10_000))
def test_laplacian_spectrum_of_random_connected_graph(n, seed):
    rng = np.random.default_rng(seed)
    nodes = tuple(f"n{i}" for i in range(n))
    edges = [(f"n{i}", f"n{i + 1}", float(rng.uniform(0.5, 5.0))) for i in range(n - 1)]
    for _ in range(int(rng.integers(0, n))):
        i, j = rng.integers(0, n, size=2)
        if i != j:
            edges.append((f"n{i}", f"n{j}", float(rng.uniform(0.5, 5.0))))
    net = NetworkGraph(nodes=nodes, edges=tuple(edges))
    lap = net.laplacian()
    assert np.allclose(lap, lap.T)
    assert np.allclose(lap.sum(axis=1), 0.0, atol=1e-12)
    evals = np.linalg.eigvalsh(lap)
    assert abs(evals[0]) < 1e-9
    assert evals[1] > 0


def test_kron_reduction_preserves_laplacian_structure(island):
    net = island.network
    lap = net.laplacian()
    keep = [net.index(c.id) for c in island.converters]
    red, inj = kron_reduction(lap, keep)
    assert np.allclose(red, red.T)
    assert np.allclose(red.sum(axis=1), 0.0, atol=1e-9)
    evals = np.linalg.eigvalsh(red)
    assert abs(evals[0]) < 1e-9 and evals[1] > 0
    # equivalent injections of eliminated nodes are conserved
    assert np.allclose(inj.sum(axis=0), 1.0, atol=1e-9)


def test_star_builder_grounds_island_bus(island):
    assert island.network.grounded_node == "island"
    assert island.network.is_connected()
    assert len(island.network.edges) == len(island.network.nodes) - 1
