from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest

from ccdlmp.conic import (BACKENDS, ConicProgram, DiagnosticsError, ProgramError, duality_gap,
                          kkt_residuals, solve)
from ccdlmp.conic.cbf import dumps
from ccdlmp.cases import load_fixture
from ccdlmp.opf import build_model, solve_scenario
from ccdlmp.pricing import decompose_gamma

from conftest import ALL_FIXTURES, SCENARIOS

BACKEND_NAMES = sorted(BACKENDS)


def lp():
    p = ConicProgram("lp")
    p.add_variable("x", lb=3.0, lb_label="x>=3")
    p.add_objective({"x": 1.0})
    return p


def qp():
    p = ConicProgram("qp")
    p.add_variable("x", lb=1.0, lb_label="x>=1")
    p.add_quadratic("x^2", [({"x": 1.0}, 0.0)])
    return p


@pytest.mark.parametrize("backend", BACKEND_NAMES)
def test_lp_bound_dual(backend):
    prog = lp()
    sol = solve(prog, backend)
    assert sol.optimal
    assert sol.value("x") == pytest.approx(3.0, abs=1e-8)
    assert sol.dual("x>=3") == pytest.approx(1.0, abs=1e-8)
    assert duality_gap(prog, sol) <= 1e-12


@pytest.mark.parametrize("backend", BACKEND_NAMES)
@pytest.mark.parametrize("lift", [False, True])
def test_quadratic_bound_dual(backend, lift):
    sol = solve(qp(), backend, lift=lift)
    assert sol.optimal
    assert sol.value("x") == pytest.approx(1.0, abs=1e-6)
    assert sol.objective == pytest.approx(1.0, abs=1e-6)
    assert sol.dual("x>=1") == pytest.approx(2.0, abs=1e-5)


def test_lifted_form_uses_rotated_cone():
    sf = qp().compile(lift=True)
    assert sf.P.nnz == 0
    assert sf.soc_dims == (3,)
    assert qp().compile().P.nnz == 1


def test_equality_dual_is_objective_sensitivity():
    # min x^2 + y^2 s.t. x + y = b: p* = b^2/2, dp*/db = b
    p = ConicProgram()
    p.add_variable("x")
    p.add_variable("y")
    p.add_quadratic("q", [({"x": 1.0}, 0.0), ({"y": 1.0}, 0.0)])
    p.add_eq("sum", {"x": 1.0, "y": 1.0}, 2.0)
    sol = solve(p)
    assert sol.dual("sum") == pytest.approx(2.0, abs=1e-7)


def test_infeasible_program_has_no_duals():
    p = ConicProgram()
    p.add_variable("x", lb=1.0)
    p.add_le("x<=0", {"x": 1.0}, 0.0)
    p.add_objective({"x": 1.0})
    sol = solve(p)
    assert sol.status == "infeasible"
    assert not sol.duals
    with pytest.raises(DiagnosticsError):
        duality_gap(p, sol)
    with pytest.raises(DiagnosticsError):
        kkt_residuals(p, sol)


def test_construction_errors():
    p = ConicProgram()
    p.add_variable("x")
    with pytest.raises(ProgramError, match="undeclared"):
        p.add_le("c", {"y": 1.0}, 0.0)
    p.add_le("c", {"x": 1.0}, 0.0)
    with pytest.raises(ProgramError, match="duplicate"):
        p.add_le("c", {"x": 1.0}, 1.0)
    with pytest.raises(ProgramError, match="label"):
        p.add_eq(None, {"x": 1.0}, 0.0)
    with pytest.raises(ProgramError, match="twice"):
        p.add_variable("x")


def test_program_frozen_after_compile():
    p = lp()
    p.compile()
    with pytest.raises(ProgramError, match="frozen"):
        p.add_variable("y")


def test_kkt_flags_perturbed_primal(solves):
    res = solves.solve("feeder15", "gen-cc")
    clean = kkt_residuals(res.program, res.solution)
    assert clean.ok(1e-6)
    key = ("gP", 6)
    bumped = kkt_residuals(res.program, res.solution, {key: res.solution.primal[key] + 0.1})
    assert bumped.stationarity["gP"] > 1e-3


@pytest.mark.parametrize("name", ALL_FIXTURES)
@pytest.mark.parametrize("scenario", SCENARIOS)
def test_fixture_solves_satisfy_kkt(solves, name, scenario):
    res = solves.solve(name, scenario)
    rep = kkt_residuals(res.program, res.solution)
    assert rep.max_stationarity <= 1e-6
    assert rep.complementarity <= 1e-6
    assert rep.primal_infeasibility <= 1e-8
    assert duality_gap(res.program, res.solution) <= 1e-8


def test_root_participation_stationarity(solves):
    gam = decompose_gamma(solves.solve("feeder15", "gen-cc"))
    assert abs(gam.root_residual) <= 1e-6


def test_every_label_has_a_dual(solves):
    res = solves.solve("four_node", "volt-cc", flow_cc=True)
    assert res.program.labels == set(res.solution.duals)


@pytest.mark.parametrize("name", ALL_FIXTURES)
@pytest.mark.parametrize("scenario", ["det", "gen-cc", "volt-cc"])
def test_balance_dual_matches_finite_difference(solves, name, scenario):
    net, unc = solves.network(name)
    base = solves.solve(name, scenario)
    h = 1e-4
    f0 = base.solution.objective
    for i in range(1, net.n + 1, max(1, net.n // 4)):
        f = {}
        for sign in (1.0, -1.0):
            dP = net.dP.copy()
            dP[i] += sign * h
            f[sign] = solve_scenario(net.with_demand(dP=dP), unc, scenario).solution.objective
        lam = base.lambda_P[i]
        scale = max(1.0, abs(lam))
        assert (f[1.0] - f[-1.0]) / (2 * h) == pytest.approx(lam, abs=1e-6 * scale)
        # one-sided change is lam*h plus the measured second-order term
        second = 0.5 * (f[1.0] + f[-1.0] - 2 * f0)
        assert abs(f[1.0] - f0 - lam * h - second) <= 1e-9 * scale


def _scale_close(a, b, rel):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return np.max(np.abs(a - b)) <= rel * max(1.0, np.max(np.abs(a)))


@pytest.mark.parametrize("name", ALL_FIXTURES)
@pytest.mark.parametrize("scenario", ["det", "gen-cc", "volt-cc"])
def test_backends_agree(solves, name, scenario):
    net, unc = solves.network(name)
    ref = solves.solve(name, scenario)
    alt = solve_scenario(net, unc, scenario, backend="cvxopt")
    assert alt.optimal
    assert alt.solution.objective == pytest.approx(ref.solution.objective, abs=1e-6 * max(1, abs(ref.solution.objective)))
    # cvxopt converges to about 1e-7 relative; compare duals against the price scale
    assert _scale_close(ref.lambda_P, alt.lambda_P, 1e-4)
    assert _scale_close(ref.lambda_Q, alt.lambda_Q, 1e-4)
    assert abs(ref.gamma - alt.gamma) <= 1e-4 * max(1.0, abs(ref.gamma), np.max(np.abs(ref.lambda_P)))


def test_backend_from_environment(monkeypatch):
    monkeypatch.setenv("CCDLMP_BACKEND", "cvxopt")
    assert solve(lp()).stats["backend"] == "cvxopt"
    monkeypatch.setenv("CCDLMP_BACKEND", "nonesuch")
    with pytest.raises(ValueError, match="nonesuch"):
        solve(lp())


def test_concurrent_solves_match_serial(solves):
    net, unc = solves.network("feeder15")
    progs = [build_model(net, unc, sc) for sc in ("det", "gen-cc", "volt-cc")]
    serial = [solve(build_model(net, unc, sc)).objective for sc in ("det", "gen-cc", "volt-cc")]
    with ThreadPoolExecutor(3) as pool:
        parallel = [s.objective for s in pool.map(solve, progs)]
    assert parallel == pytest.approx(serial, rel=1e-12)


def test_cbf_dump_lists_cones_and_labels():
    text = dumps(qp())
    assert "\nQ 3\n" in text and "\nL+ 1\n" in text
    assert "'x>=1'" in text and "'x^2'" in text
    assert "np." not in text
    # every numeric line parses
    for section in ("OBJACOORD", "ACOORD", "BCOORD"):
        body = text.split(f"\n{section}\n")[1].split("\n\n")[0].splitlines()
        assert int(body[0]) == len(body) - 1
        for line in body[1:]:
            [float(v) for v in line.split()]


def test_polish_lowers_kkt_violation_and_keeps_objective():
    net, unc = load_fixture("feeder15")
    prog = build_model(net, unc, "volt-cc")
    raw = solve(prog, polish=False)
    polished = solve(prog)
    assert polished.stats["polished"]
    assert polished.stats["kkt_after"] < polished.stats["kkt_before"]
    assert polished.objective == pytest.approx(raw.objective, rel=1e-8)
    assert "polished" not in raw.stats


def test_polish_makes_cone_duals_consistent_with_multipliers():
    net, unc = load_fixture("feeder15")
    res = solve_scenario(net, unc, "volt-cc")
    assert decompose_gamma(res).nu_residual <= 1e-9


def test_polish_rejects_non_improving_point():
    from ccdlmp.conic.polish import polish

    sf = lp().compile()
    x, z = np.array([3.0]), np.array([1.0])
    x2, z2, info = polish(sf, x, z)
    assert not info["polished"]
    assert x2 is x and z2 is z
