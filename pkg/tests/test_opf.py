import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ccdlmp.conic import ConicProgram, solve
from ccdlmp.grid import DER, UncertaintySpec
from ccdlmp.opf import (ModelError, ScenarioKind, build_model, build_polygon, expected_cost,
                        generation_cc, solve_scenario)

from conftest import ALL_FIXTURES, SCENARIOS, ROOT, chain, small_network

C = math.cos(math.pi / 12)


# --------------------------------------------------------------------------
# Polygon
# --------------------------------------------------------------------------

def test_polygon_coefficients():
    poly = build_polygon()
    assert len(poly) == 12
    phi = (2 * np.arange(1, 13) - 1) * math.pi / 12
    assert np.allclose(poly.a1, np.cos(phi))
    assert np.allclose(poly.a2, np.sin(phi))
    assert np.allclose(poly.a3, -C)


def test_polygon_vertex_binds_two_adjacent_segments():
    S = 2.0
    slack = build_polygon().slack(S, 0.0, S)
    assert slack[0] == pytest.approx(0.0, abs=1e-14)
    assert slack[11] == pytest.approx(0.0, abs=1e-14)
    assert np.all(slack[1:11] < 0)


def test_polygon_inradius_point_binds_one_segment():
    S = 2.0
    fP, fQ = S * C * math.cos(math.pi / 12), S * C * math.sin(math.pi / 12)
    slack = build_polygon().slack(fP, fQ, S)
    assert slack[0] == pytest.approx(0.0, abs=1e-14)
    assert np.all(np.delete(slack, 0) < 0)


def test_polygon_axis_point_at_inradius_is_interior():
    S = 2.0
    slack = build_polygon().slack(S * C, 0.0, S)
    assert slack[0] == pytest.approx(-S * (1 - C) * C, abs=1e-14)
    assert slack.max() < 0


@settings(max_examples=200, deadline=None)
@given(st.floats(0.0, 2 * math.pi), st.floats(0.0, 1.2), st.floats(0.1, 5.0))
def test_polygon_lies_between_inscribed_and_circumscribed_discs(theta, radius, S):
    fP, fQ = S * radius * math.cos(theta), S * radius * math.sin(theta)
    inside = build_polygon().slack(fP, fQ, S).max() <= 1e-12
    if radius <= C - 1e-12:
        assert inside
    if radius > 1.0 + 1e-12:
        assert not inside


# --------------------------------------------------------------------------
# Cost and generation limits
# --------------------------------------------------------------------------

def test_expected_cost_example():
    der = DER.from_ab(1, a=1.0, b=0.1)
    assert der.c2 == pytest.approx(5.0) and der.c1 == pytest.approx(10.0)
    assert expected_cost(der, 0.2, 1.0, 0.2) == pytest.approx(7.4, abs=1e-12)


def test_expected_cost_without_participation_is_plain_cost():
    der = DER.from_standard(3, c2=7.0, c1=2.0, c0=0.5)
    for g in (-0.3, 0.0, 0.25):
        assert expected_cost(der, g, 0.0, 0.4) == pytest.approx(der.cost(g))


def test_expected_cost_matches_sampling():
    der = DER.from_ab(1, a=1.0, b=0.1)
    rng = np.random.default_rng(5)
    g, alpha, s = 0.2, 1.0, 0.2
    sampled = der.cost(g + alpha * s * rng.standard_normal(1_000_000)).mean()
    assert sampled == pytest.approx(expected_cost(der, g, alpha, s), rel=5e-3)


def test_expected_cost_rejects_bad_inputs():
    bad = DER(node=1, a=1.0, b=0.0, c0=0.0)
    with pytest.raises(ModelError):
        expected_cost(bad, 0.1, 0.0, 0.1)
    with pytest.raises(ModelError):
        expected_cost(DER.from_ab(1, 1.0, 0.1), 0.1, 0.0, -1.0)


def _max_output(der, z, s, alpha):
    prog = ConicProgram()
    prog.add_variable(("gP", der.node))
    prog.add_variable(("alpha", der.node), lb=alpha, ub=alpha)
    generation_cc(prog, der, z, s)
    prog.add_objective({("gP", der.node): -1.0})
    sol = solve(prog)
    assert sol.optimal
    return sol.value(("gP", der.node)), prog


def test_generation_margin_example():
    der = DER.from_standard(4, c2=1.0, c1=1.0, gP_min=-1.0, gP_max=0.3)
    g, prog = _max_output(der, 1.6449, 0.2, 0.5)
    assert g == pytest.approx(0.3 - 0.16449, abs=1e-8)
    assert prog.constraint(("delta_plus", 4)).coeffs[("alpha", 4)] == pytest.approx(1.6449 * 0.2)


def test_generation_limits_collapse_without_uncertainty():
    der = DER.from_standard(4, c2=1.0, c1=1.0, gP_min=0.0, gP_max=0.3)
    g, prog = _max_output(der, 1.6449, 0.0, 0.5)
    assert g == pytest.approx(0.3, abs=1e-8)
    assert ("alpha", 4) not in prog.constraint(("delta_plus", 4)).coeffs


@pytest.mark.parametrize("name", ALL_FIXTURES)
def test_system_reserve_equals_z_s(solves, name):
    res = solves.solve(name, "gen-cc")
    net, unc = solves.network(name)
    reserve = sum(unc.z_g * unc.s * res.alpha[i] for i in (0, *net.der_nodes))
    assert reserve == pytest.approx(unc.z_g * unc.s, rel=1e-9)


# --------------------------------------------------------------------------
# Model structure
# --------------------------------------------------------------------------

def test_model_errors():
    net = small_network()
    unc = UncertaintySpec.from_std([0.01, 0.01, 0.01])
    with pytest.raises(ModelError, match="loss factors"):
        build_model(net, unc, "lvolt-cc")
    with pytest.raises(ModelError, match="uncertainty"):
        build_model(net, None, "gen-cc")
    with pytest.raises(ModelError, match="voltage_form"):
        build_model(net, unc, "volt-cc", voltage_form="other")
    with pytest.raises(ModelError, match="dimension"):
        build_model(net, UncertaintySpec.from_std([0.01, 0.01]), "gen-cc")
    with pytest.raises(ValueError):
        ScenarioKind.parse("nonsense")


def test_participation_only_at_der_nodes():
    net = small_network()
    prog = build_model(net, UncertaintySpec.from_std([0.01, 0.01, 0.01]), "volt-cc", flow_cc=True)
    alphas = {v[1] for v in prog.variables if isinstance(v, tuple) and v[0] == "alpha"}
    assert alphas == {0, *net.der_nodes}
    labels = prog.labels
    for i in net.nodes[1:]:
        assert {("nu", i), ("zeta", i), ("mu_plus", i), ("nu_f", i), ("zeta_f", i)} <= labels
        assert all(("eta", i, c) in labels for c in range(1, 13))
    assert ("gamma",) in labels


@pytest.mark.parametrize("name", ALL_FIXTURES)
@pytest.mark.parametrize("scenario", SCENARIOS)
def test_participation_sums_to_one(solves, name, scenario):
    res = solves.solve(name, scenario)
    if scenario == "det":
        assert res.gamma == 0.0 or ("gamma",) not in res.program.labels
        return
    assert res.alpha.sum() == pytest.approx(1.0, abs=1e-9)


@pytest.mark.parametrize("name", ALL_FIXTURES)
@pytest.mark.parametrize("scenario", SCENARIOS)
@pytest.mark.parametrize("flow_cc", [False, True])
def test_voltage_recursion_and_balance(solves, name, scenario, flow_cc):
    res = solves.solve(name, scenario, flow_cc)
    net = res.network
    assert res.optimal
    u = res.u.copy()
    u[0] = net.u0
    for i in net.nodes[1:]:
        p = net.parent[i]
        drop = 2 * (net.r[i] * res.fP[i] + net.x[i] * res.fQ[i])
        assert u[i] == pytest.approx(u[p] - drop, abs=1e-9)
    if scenario == "lvolt-cc":
        return
    g = np.zeros(net.n + 1)
    for d in net.ders:
        g[d.node] = res.gP[d.node]
    for i in net.nodes[1:]:
        inflow = res.fP[i] + g[i] - sum(res.fP[j] for j in net.children(i))
        assert inflow == pytest.approx(net.dP[i], abs=1e-9)


def test_zero_covariance_reproduces_deterministic_dispatch():
    net = small_network()
    det = solve_scenario(net, None, "det")
    for scenario in ("gen-cc", "volt-cc"):
        res = solve_scenario(net, UncertaintySpec.zero(net.n), scenario)
        assert res.solution.objective == pytest.approx(det.solution.objective, abs=1e-8)
        assert np.allclose(res.gP, det.gP, atol=1e-7)
        assert np.allclose(res.lambda_P, det.lambda_P, atol=1e-6)


@pytest.mark.parametrize("name", ALL_FIXTURES)
def test_polygon_is_at_least_as_restrictive_as_disc(solves, name):
    disc = solves.solve(name, "det")
    poly = solves.solve(name, "det", flow_cc=True)
    assert poly.solution.objective >= disc.solution.objective - 1e-9


# --------------------------------------------------------------------------
# Voltage cones
# --------------------------------------------------------------------------

def _path_resistance(net):
    """Independent shared-path resistance: sum of r over edges common to both root paths."""
    def path(i):
        out = set()
        while i != 0:
            out.add(i)
            i = net.parent[i]
        return out

    n = net.n
    return np.array([[sum(net.r[k] for k in path(i) & path(j)) for j in range(1, n + 1)]
                     for i in range(1, n + 1)])


def test_voltage_cone_without_participation_is_row_norm():
    net = chain(r=(0.1, 0.2, 0.05), dP=(0.0, 0.05, 0.05, 0.02), ders=[ROOT])
    sigma = 0.03
    unc = UncertaintySpec.from_std([sigma] * net.n)
    prog = build_model(net, unc, "volt-cc")
    prog.add_objective({("tv", i): 1e3 for i in net.nodes[1:]})
    sol = solve(prog)
    R = _path_resistance(net)
    for i in net.nodes[1:]:
        assert sol.value(("rhov", i)) == pytest.approx(0.0, abs=1e-9)
        assert sol.value(("tv", i)) == pytest.approx(sigma * np.linalg.norm(R[i - 1]), rel=1e-7)


def test_voltage_cones_vanish_without_uncertainty():
    net = small_network()
    prog = build_model(net, UncertaintySpec.zero(net.n), "volt-cc")
    prog.add_objective({("tv", i): 1.0 for i in net.nodes[1:]})
    sol = solve(prog)
    assert all(abs(sol.value(("tv", i))) <= 1e-8 for i in net.nodes[1:])


def test_binding_voltage_cone_matches_sampled_std(solves):
    res = solves.solve("feeder15", "volt-cc")
    net, unc = solves.network("feeder15")
    R = _path_resistance(net)
    rng = np.random.default_rng(17)
    omega = rng.standard_normal((1_000_000, net.n)) @ unc.sqrt()
    dev = omega - omega.sum(axis=1)[:, None] * res.alpha[1:][None, :]
    u = -2.0 * dev @ R.T
    binding = [i for i in net.nodes[1:] if res.binding(("zeta", i), tol=1e-9)
               and res.dual_vec("mu_plus")[i] + res.dual_vec("mu_minus")[i] > 1e-6]
    assert binding
    for i in binding:
        assert u[:, i - 1].std() == pytest.approx(2.0 * res.tv[i], rel=5e-3)
