import math

import numpy as np
import pytest

from ccdlmp.grid import DER, UncertaintySpec, gaussian_quantile, load_network
from ccdlmp.opf import solve_scenario
from ccdlmp.oracles import (_erf_series, distflow_sweep, eqv_cc_objective, lattice_best_response,
                            loss_sensitivity_fd, quantile_bisect)

from conftest import small_network, two_node_doc


def test_sweep_satisfies_branch_flow_equations(solves):
    net, _ = solves.network("feeder15")
    sw = distflow_sweep(net, net.dP, net.dQ)
    for i in net.nodes[1:]:
        p = net.parent[i]
        z2 = net.r[i] ** 2 + net.x[i] ** 2
        assert sw.u[i] == pytest.approx(sw.u[p] - 2 * (net.r[i] * sw.fP[i] + net.x[i] * sw.fQ[i]) - z2 * sw.l[i],
                                        abs=1e-13)
        assert sw.l[i] * sw.u[i] == pytest.approx(sw.fP[i] ** 2 + sw.fQ[i] ** 2, abs=1e-13)
        kids = net.children(i)
        send = sum(sw.fP[k] + net.r[k] * sw.l[k] for k in kids)
        assert sw.fP[i] == pytest.approx(net.dP[i] + send, abs=1e-13)


def test_sweep_matches_single_edge_quadratic():
    net, _ = load_network(two_node_doc(r=0.1, x=0.05, dP=0.4))
    p, q = 0.4, 0.0
    r, x = 0.1, 0.05
    # l u = p^2 + q^2 with u = u0 - 2(r p + x q) - (r^2 + x^2) l; the physical root is the smaller one
    a, b, c = r * r + x * x, net.u0 - 2 * (r * p + x * q), p * p + q * q
    l = (b - math.sqrt(b * b - 4 * a * c)) / (2 * a)
    sw = distflow_sweep(net, net.dP, net.dQ)
    assert sw.l[1] == pytest.approx(l, rel=1e-12)


def test_fd_sensitivity_matches_single_edge_derivative():
    net, _ = load_network(two_node_doc(r=0.1, x=0.05, dP=0.4))
    LP, _ = loss_sensitivity_fd(net, net.dP, net.dQ)
    sw = distflow_sweep(net, net.dP, net.dQ)
    f, l, u = sw.fP[1], sw.l[1], sw.u[1]
    r, x = 0.1, 0.05
    assert LP[1, 1] == pytest.approx((2 * f + 2 * r * l) / (u - (r * r + x * x) * l), rel=1e-6)


@pytest.mark.parametrize("x", [0.0, 0.3, 1.0, 2.5, 4.0])
def test_erf_series_matches_math_erf(x):
    assert float(_erf_series(x)) == pytest.approx(math.erf(x), abs=1e-15)


@pytest.mark.parametrize("eps", [0.001, 0.01, 0.05, 0.2])
def test_quantile_bisect_tail_probability(eps):
    z = quantile_bisect(eps)
    assert 0.5 * math.erfc(z / math.sqrt(2)) == pytest.approx(eps, rel=1e-12)
    assert z == pytest.approx(gaussian_quantile(eps), abs=1e-9)
    with pytest.raises(ValueError):
        quantile_bisect(0.5)


def test_lattice_finds_interior_optimum():
    der = DER.from_ab(5, a=1.0, b=0.1, gP_min=0.0, gP_max=1.0)
    z = gaussian_quantile(0.05)
    lat = lattice_best_response(11.99, 0.01, der, 0.2, z)
    assert lat.g == pytest.approx(0.199, abs=1e-6)
    assert lat.alpha == pytest.approx(0.01 * 0.1 / 0.04, abs=1e-5)


def test_lattice_respects_output_limits():
    der = DER.from_ab(5, a=1.0, b=0.1, gP_min=0.0, gP_max=0.4)
    z, s = gaussian_quantile(0.05), 0.05
    lat = lattice_best_response(20.0, 0.01, der, s, z)
    assert lat.g + z * s * lat.alpha <= der.gP_max + 1e-15
    assert lat.g - z * s * lat.alpha >= der.gP_min - 1e-15


def test_cvxpy_model_without_uncertainty_matches_deterministic_polygon_dispatch():
    net = small_network()
    unc = UncertaintySpec.zero(net.n)
    ours = solve_scenario(net, unc, "volt-cc", flow_cc=True)
    # the cone arguments are identically zero, which interior-point CVXOPT cannot handle
    obj, status = eqv_cc_objective(net, unc, solver="SCS", solver_options={"eps": 1e-10, "max_iters": 200_000})
    assert status == "optimal"
    assert obj == pytest.approx(ours.solution.objective, abs=1e-6)


def test_cvxpy_model_matches_fixture(solves):
    res = solves.solve("four_node", "volt-cc", True)
    net, unc = solves.network("four_node")
    obj, status = eqv_cc_objective(net, unc, solver="SCS", solver_options={"eps": 1e-10, "max_iters": 200_000})
    assert status == "optimal"
    assert obj == pytest.approx(res.solution.objective, abs=1e-6)
