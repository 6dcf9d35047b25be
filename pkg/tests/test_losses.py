import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ccdlmp.grid import RadialNetwork, UncertaintySpec, build_matrices, load_network, path_matrix
from ccdlmp.losses import (LinearizationPoint, LossFactorError, compute_loss_factors, current_sensitivities,
                           fnd_linearized, fnd_sensitivities, loss_aware_balances,
                           solve_linearization_point)
from ccdlmp.opf import solve_scenario
from ccdlmp.oracles import distflow_sweep, loss_sensitivity_fd

from conftest import ALL_FIXTURES, ROOT, chain, small_network, two_node_doc


def _point(fP, fQ, u, l=None):
    z = np.zeros(len(u))
    return LinearizationPoint(z, z.copy(), np.asarray(fP, float), np.asarray(fQ, float),
                              np.asarray(u, float), z.copy() if l is None else np.asarray(l, float))


# --------------------------------------------------------------------------
# Current sensitivities
# --------------------------------------------------------------------------

def test_sensitivity_example_both_modes():
    pt = _point([0, 0.2], [0, 0.1], [1.0, 1.0])
    A = np.array([[1.0]])
    LP, LQ = current_sensitivities(pt, A, "paper")
    assert LP[1, 1] == pytest.approx(0.6) and LQ[1, 1] == pytest.approx(0.6)
    LP, LQ = current_sensitivities(pt, A, "corrected")
    assert LP[1, 1] == pytest.approx(0.4) and LQ[1, 1] == pytest.approx(0.2)


@pytest.mark.parametrize("mode", ["paper", "corrected"])
def test_zero_flow_point_gives_zero_sensitivities(mode):
    net = small_network()
    LP, LQ = current_sensitivities(LinearizationPoint.zero(net), path_matrix(net), mode)
    assert not LP.any() and not LQ.any()


def test_sensitivity_errors():
    A = np.array([[1.0]])
    with pytest.raises(LossFactorError, match="positive"):
        current_sensitivities(_point([0, 0.2], [0, 0.1], [1.0, 0.0]), A)
    with pytest.raises(ValueError, match="mode"):
        current_sensitivities(_point([0, 0.2], [0, 0.1], [1.0, 1.0]), A, "other")


# --------------------------------------------------------------------------
# FND matrices
# --------------------------------------------------------------------------

def test_leaf_rows_are_zero(solves):
    net, _ = solves.network("feeder15")
    lf = solves.loss_factors("feeder15")
    leaves = [i for i in net.nodes if not net.children(i)]
    assert leaves
    for name in ("lam_pp", "lam_pq", "lam_qp", "lam_qq"):
        M = getattr(lf, name)
        assert not M[leaves].any()
        assert lf.fnd_P[leaves].sum() == 0.0


def test_single_child_sum_on_chain():
    net = chain(r=(0.1, 0.2), dP=(0.0, 0.0, 0.1))
    n = net.n
    LP = np.zeros((n + 1, n + 1))
    LQ = np.zeros((n + 1, n + 1))
    LP[2, 1:] = [0.3, 0.7]
    LQ[2, 1:] = [0.1, 0.5]
    lf = fnd_sensitivities(LP, LQ, net)
    assert np.array_equal(lf.lam_pp[1, 1:], LP[2, 1:] * net.r[2])
    assert np.array_equal(lf.lam_qq[1, 1:], LQ[2, 1:] * net.x[2])
    assert not lf.lam_pp[2].any()


@st.composite
def trees_and_sensitivities(draw):
    n = draw(st.integers(1, 8))
    parent = [draw(st.integers(0, i)) for i in range(n)]
    r = draw(st.lists(st.floats(0.01, 0.2), min_size=n, max_size=n))
    x = draw(st.lists(st.floats(0.01, 0.2), min_size=n, max_size=n))
    vals = st.floats(-2.0, 2.0)
    LP = np.array(draw(st.lists(vals, min_size=n * n, max_size=n * n))).reshape(n, n)
    LQ = np.array(draw(st.lists(vals, min_size=n * n, max_size=n * n))).reshape(n, n)
    net = RadialNetwork.build(parent, r, x, [1.0] * n, [0.0] * (n + 1), ders=[ROOT])
    pad = lambda M: np.pad(M, ((1, 0), (1, 0)))
    return net, pad(LP), pad(LQ)


@settings(max_examples=60, deadline=None)
@given(trees_and_sensitivities())
def test_fnd_matrices_are_children_sums(case):
    net, LP, LQ = case
    lf = fnd_sensitivities(LP, LQ, net)
    for i in net.nodes:
        kids = net.children(i)
        for j in net.nodes:
            assert lf.lam_pp[i, j] == pytest.approx(sum(LP[k, j] * net.r[k] for k in kids), abs=1e-12)
            assert lf.lam_pq[i, j] == pytest.approx(sum(LQ[k, j] * net.r[k] for k in kids), abs=1e-12)
            assert lf.lam_qp[i, j] == pytest.approx(sum(LP[k, j] * net.x[k] for k in kids), abs=1e-12)
            assert lf.lam_qq[i, j] == pytest.approx(sum(LQ[k, j] * net.x[k] for k in kids), abs=1e-12)


def test_fnd_rejects_wrong_shape():
    net = small_network()
    with pytest.raises(ValueError, match="sensitivity matrices"):
        fnd_sensitivities(np.zeros((2, 2)), np.zeros((2, 2)), net)


def test_passive_branch_injection_reduces_losses(solves):
    lf = solves.loss_factors("feeder15")
    # change of total FND per unit of net demand at node j
    total = lf.lam_pp[:, 1:].sum(axis=0)
    assert np.all(total[:11] < 0)          # injections at nodes 1-11 raise losses
    assert np.all(total[11:] > 0)          # injections on the passive branch 12-14 lower them


# --------------------------------------------------------------------------
# Linearization point
# --------------------------------------------------------------------------

def test_zero_demand_network_has_zero_point():
    net = chain(r=(0.1, 0.2), dP=(0.0, 0.0, 0.0))
    pt = solve_linearization_point(net, None)
    for v in (pt.fP, pt.fQ, pt.l, pt.gP):
        assert np.allclose(v, 0.0, atol=1e-7)
    assert np.allclose(pt.u, net.u0, atol=1e-7)


def test_two_node_point_matches_sweep():
    net, unc = load_network(two_node_doc(r=0.1, x=0.1, dP=0.4))
    pt = solve_linearization_point(net, unc)
    pnet = net.dP - pt.gP
    qnet = net.dQ - pt.gQ
    sweep = distflow_sweep(net, pnet, qnet)
    assert pt.l[1] > 1e-3
    assert pt.l[1] == pytest.approx(sweep.l[1], abs=1e-8)
    assert pt.u[1] == pytest.approx(sweep.u[1], abs=1e-8)


@pytest.mark.parametrize("name", ALL_FIXTURES)
def test_fixture_points_are_tight(solves, name):
    lf = solves.loss_factors(name)
    assert lf.point.tightness.max() <= 1e-6


def test_fixture_point_matches_sweep(solves):
    net, _ = solves.network("feeder15")
    pt = solves.loss_factors("feeder15").point
    g = pt.gP.copy()
    sweep = distflow_sweep(net, net.dP - g, net.dQ - pt.gQ)
    assert np.allclose(sweep.l[1:], pt.l[1:], atol=1e-6)
    assert np.allclose(sweep.u[1:], pt.u[1:], atol=1e-6)


# --------------------------------------------------------------------------
# Loss-aware balances and models
# --------------------------------------------------------------------------

def test_amendments_reduce_to_fnd_at_anchor(solves):
    net, _ = solves.network("feeder15")
    lf = solves.loss_factors("feeder15")
    amend = loss_aware_balances(lf, net)
    gbar = {"gP": lf.point.gP, "gQ": lf.point.gQ}
    for kind, fnd in (("P", lf.fnd_P), ("Q", lf.fnd_Q)):
        for i in net.nodes:
            lin, const = amend[kind][i]
            at_anchor = sum(v * gbar[key[0]][key[1]] for key, v in lin.items())
            assert const - at_anchor == pytest.approx(fnd[i], abs=1e-14)


def test_zero_loss_factors_reproduce_voltage_model():
    net = small_network()
    unc = UncertaintySpec.from_std([0.01, 0.01, 0.01])
    lf = compute_loss_factors(net, unc, point=LinearizationPoint.zero(net))
    M, ML = build_matrices(net), build_matrices(net, lf)
    assert np.array_equal(M.A, ML.A_L) and np.array_equal(M.R, ML.R_L)
    assert loss_aware_balances(lf, net)["P"][1] == ({}, 0.0)
    volt = solve_scenario(net, unc, "volt-cc")
    lvolt = solve_scenario(net, unc, "lvolt-cc", loss_factors=lf)
    assert lvolt.solution.objective == pytest.approx(volt.solution.objective, abs=1e-9)
    assert np.allclose(lvolt.lambda_P, volt.lambda_P, atol=1e-6)


def test_lossy_dispatch_covers_linearized_losses(solves):
    net, _ = solves.network("feeder15")
    lf = solves.loss_factors("feeder15")
    res = solves.solve("feeder15", "lvolt-cc")
    fnd_P, _ = fnd_linearized(lf, net, res.gP, res.gQ)
    surplus = res.gP.sum() - net.dP.sum()
    assert surplus == pytest.approx(fnd_P.sum(), abs=1e-8)
    losses = float(lf.point.l @ net.r)
    assert surplus == pytest.approx(losses, rel=0.5)
    assert res.gP[0] > solves.solve("feeder15", "volt-cc").gP[0]


def test_corrected_sensitivity_misses_only_voltage_feedback():
    """On one edge l u = f^2 + q^2 with u = u0 - 2(r f + x q) - (r^2 + x^2) l, so
    dl/df = (2f + 2 r l) / (u - (r^2 + x^2) l); the corrected mode keeps 2f/u."""
    net, unc = load_network(two_node_doc(r=0.1, x=0.05, dP=0.4))
    lf = compute_loss_factors(net, unc, mode="corrected")
    pt = lf.point
    pnet, qnet = net.dP - pt.gP, net.dQ - pt.gQ
    fd_P, _ = loss_sensitivity_fd(net, pnet, qnet)
    r, x = net.r[1], net.x[1]
    f, l, u = pt.fP[1], pt.l[1], pt.u[1]
    exact = (2 * f + 2 * r * l) / (u - (r * r + x * x) * l)
    assert fd_P[1, 1] == pytest.approx(exact, rel=1e-6)
    assert lf.L_P[1, 1] == pytest.approx(2 * f / u, rel=1e-9)
    assert abs(lf.L_P[1, 1] - fd_P[1, 1]) == pytest.approx(abs(2 * f / u - exact), rel=1e-4)
