"""Independent reference computations used by the acceptance suite.

Each oracle is written from first principles and shares no code with the
routine it checks: a lattice search for the producer problem, a nonlinear
DistFlow sweep for loss sensitivities, a separately modeled cvxpy program
for the flow-and-voltage chance-constrained OPF, and an erf series for the
Gaussian quantile.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from decimal import Decimal, localcontext

import numpy as np

from .grid import DER, RadialNetwork, UncertaintySpec


# --------------------------------------------------------------------------
# Producer problem by lattice search
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class LatticeOptimum:
    g: float
    alpha: float
    profit: float
    cell: tuple[float, float]        # final lattice spacing in (g + z s alpha, g - z s alpha)


def _profit(der: DER, pi_g, pi_alpha, g, alpha, s):
    return pi_g * g + pi_alpha * alpha - der.c2 * g * g - der.c1 * g - der.c2 * s * s * alpha * alpha


def _superlevel(qa: float, qb: float, level: float) -> tuple[float, float]:
    """Interval where ``qb x - qa x^2 >= level`` (``qa > 0``)."""
    root = math.sqrt(max(qb * qb - 4.0 * qa * level, 0.0))
    return (qb - root) / (2 * qa), (qb + root) / (2 * qa)


def lattice_best_response(pi_g: float, pi_alpha: float, der: DER, s: float, z: float,
                          points: int = 401, rounds: int = 8) -> LatticeOptimum:
    """Maximize producer profit over ``g +- z s alpha`` inside the output limits by lattice search.

    The search runs in ``u = g + y`` and ``v = g - y`` with ``y = z s alpha``,
    where the feasible set is the box ``u <= gP_max, v >= gP_min`` and the
    limits lie on lattice lines. The first lattice covers a box that provably
    contains the optimum: in ``(g, y)`` the profit separates, so any point
    better than the feasible point ``(mid-range, 0)`` lies in the product of
    the two superlevel intervals. Later rounds zoom on the best lattice point.
    """
    gmin, gmax = der.gP_min, der.gP_max
    zs = z * s
    c2, c1 = der.c2, der.c1
    qy, by = c2 / (z * z), pi_alpha / zs          # y part: by y - qy y^2

    def value(g, y):
        return (pi_g - c1) * g - c2 * g * g + by * y - qy * y * y

    reference = value(0.5 * (gmin + gmax), 0.0)
    g_peak = (pi_g - c1) ** 2 / (4 * c2)
    y_peak = by * by / (4 * qy)
    y_lo, y_hi = _superlevel(qy, by, reference - g_peak)
    g_lo, g_hi = _superlevel(c2, pi_g - c1, reference - y_peak)
    u_lo, u_hi = g_lo + y_lo, min(g_hi + y_hi, gmax)
    v_lo, v_hi = max(g_lo - y_hi, gmin), g_hi - y_lo
    best = None
    for _ in range(rounds):
        U, V = np.meshgrid(np.linspace(u_lo, u_hi, points), np.linspace(v_lo, v_hi, points), indexing="ij")
        val = value(0.5 * (U + V), 0.5 * (U - V))
        k = np.unravel_index(int(np.argmax(val)), val.shape)
        du = (u_hi - u_lo) / (points - 1)
        dv = (v_hi - v_lo) / (points - 1)
        u, v = float(U[k]), float(V[k])
        g, y = 0.5 * (u + v), 0.5 * (u - v)
        best = LatticeOptimum(g, y / zs, float(_profit(der, pi_g, pi_alpha, g, y / zs, s)), (du, dv))
        w = 8
        u_lo, u_hi = u - w * du, min(u + w * du, gmax)
        v_lo, v_hi = max(v - w * dv, gmin), v + w * dv
    return best


# --------------------------------------------------------------------------
# Nonlinear DistFlow sweep
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SweepResult:
    fP: np.ndarray      # receiving-end flows, index 0 unused
    fQ: np.ndarray
    l: np.ndarray       # squared currents
    u: np.ndarray       # squared voltages, u[0] = u0
    iterations: int


def distflow_sweep(network: RadialNetwork, pnet: np.ndarray, qnet: np.ndarray,
                   tol: float = 1e-15, max_iter: int = 500) -> SweepResult:
    """Backward/forward sweep of the branch-flow equations for fixed net demand.

    ``pnet, qnet`` are nodal net demands (demand minus generation); the root
    entries are ignored because the substation balances the feeder.
    """
    n = network.n
    parent = network.parent
    order = list(range(1, n + 1))
    # parents before children
    depth = [0] * (n + 1)
    for i in order:
        k, d = i, 0
        while k != 0:
            k = parent[k]
            d += 1
        depth[i] = d
    order.sort(key=lambda i: depth[i])
    r, x = network.r, network.x
    u = np.full(n + 1, network.u0, dtype=float)
    l = np.zeros(n + 1)
    fP = np.zeros(n + 1)
    fQ = np.zeros(n + 1)
    for it in range(1, max_iter + 1):
        # backward: receiving-end flow = own demand + children's sending-end flows
        fP[:] = 0.0
        fQ[:] = 0.0
        for i in reversed(order):
            fP[i] += pnet[i]
            fQ[i] += qnet[i]
            p = parent[i]
            if p != 0:
                fP[p] += fP[i] + r[i] * l[i]
                fQ[p] += fQ[i] + x[i] * l[i]
        l_new = np.zeros(n + 1)
        for i in order:
            p = parent[i]
            u[i] = u[p] - 2 * (r[i] * fP[i] + x[i] * fQ[i]) - (r[i] ** 2 + x[i] ** 2) * l[i]
            l_new[i] = (fP[i] ** 2 + fQ[i] ** 2) / u[i]
        change = float(np.max(np.abs(l_new - l), initial=0.0))
        l = l_new
        if change <= tol:
            break
    return SweepResult(fP.copy(), fQ.copy(), l.copy(), u.copy(), it)


def loss_sensitivity_fd(network: RadialNetwork, pnet: np.ndarray, qnet: np.ndarray,
                        h: float = 1e-6) -> tuple[np.ndarray, np.ndarray]:
    """Central differences ``d l_i / d pnet_k`` and ``d l_i / d qnet_k`` from sweep re-solves."""
    n = network.n
    LP = np.zeros((n + 1, n + 1))
    LQ = np.zeros((n + 1, n + 1))
    for k in range(1, n + 1):
        for M, base, other, is_p in ((LP, pnet, qnet, True), (LQ, qnet, pnet, False)):
            up = np.array(base, dtype=float)
            dn = np.array(base, dtype=float)
            up[k] += h
            dn[k] -= h
            if is_p:
                a, b = distflow_sweep(network, up, other), distflow_sweep(network, dn, other)
            else:
                a, b = distflow_sweep(network, other, up), distflow_sweep(network, other, dn)
            M[1:, k] = (a.l[1:] - b.l[1:]) / (2 * h)
    return LP, LQ


# --------------------------------------------------------------------------
# Chance-constrained OPF modeled directly in cvxpy
# --------------------------------------------------------------------------

def eqv_cc_objective(network: RadialNetwork, uncertainty: UncertaintySpec, segments: int = 12,
                     solver: str = "CVXOPT", solver_options: dict | None = None) -> tuple[float, str]:
    """Optimal expected cost of the model with voltage and flow chance constraints.

    Written directly in terms of ``rho = R alpha`` and ``rho^f = A alpha``
    (no coupling rows) and solved through cvxpy. Returns ``(objective, status)``.
    """
    import cvxpy as cp

    n = network.n
    parent = network.parent
    A = np.zeros((n, n))
    for j in range(1, n + 1):
        k = j
        while k != 0:
            A[k - 1, j - 1] = 1.0
            k = parent[k]
    r, x = network.r[1:], network.x[1:]
    R = A.T @ np.diag(r) @ A
    w, V = np.linalg.eigh(uncertainty.sigma)
    S_half = V @ np.diag(np.sqrt(np.clip(w, 0, None))) @ V.T
    s = math.sqrt(float(uncertainty.sigma.sum()))
    ones = np.ones(n)
    zg, zv, zf = (quantile_bisect(e) for e in (uncertainty.eps_g, uncertainty.eps_v, uncertainty.eps_f))

    ders = network.ders
    m = len(ders)
    gP, gQ, al = cp.Variable(m), cp.Variable(m), cp.Variable(m)
    fP, fQ, u = cp.Variable(n), cp.Variable(n), cp.Variable(n)
    tv, tf = cp.Variable(n), cp.Variable(n)
    # nodal injection matrix: node i row, DER column
    Gm = np.zeros((n + 1, m))
    for k, d in enumerate(ders):
        Gm[d.node, k] = 1.0
    # children incidence: C[i, j-1] = 1 iff parent(j) == i
    C = np.zeros((n + 1, n))
    for j in range(1, n + 1):
        C[parent[j], j - 1] = 1.0
    own = np.vstack([np.zeros((1, n)), np.eye(n)])
    cons = [
        own @ fP - C @ fP + Gm @ gP == network.dP,
        own @ fQ - C @ fQ + Gm @ gQ == network.dQ,
        cp.sum(al) == 1,
    ]
    # voltage drop along each edge
    up = np.zeros((n, n))
    for j in range(1, n + 1):
        if parent[j] != 0:
            up[j - 1, parent[j] - 1] = 1.0
    u_par = up @ u + np.array([network.u0 if parent[j] == 0 else 0.0 for j in range(1, n + 1)])
    cons.append(u == u_par - 2 * cp.multiply(r, fP) - 2 * cp.multiply(x, fQ))
    nonroot = [k for k, d in enumerate(ders) if d.node != 0]
    for k in nonroot:
        d = ders[k]
        cons += [gP[k] + zg * s * al[k] <= d.gP_max, gP[k] - zg * s * al[k] >= d.gP_min,
                 gQ[k] <= d.gQ_max, gQ[k] >= d.gQ_min]
    # participation of each non-root node (zero where there is no DER)
    a_node = (Gm @ al)[1:]
    rho_v = R @ a_node
    rho_f = A @ a_node
    for i in range(n):
        cons.append(cp.norm(S_half @ (R[i] - rho_v[i] * ones)) <= tv[i])
        cons.append(cp.norm(S_half @ (A[i] - rho_f[i] * ones)) <= tf[i])
    cons += [u + 2 * zv * tv <= network.u_max[1:], u - 2 * zv * tv >= network.u_min[1:]]
    phi = (2 * np.arange(1, segments + 1) - 1) * math.pi / segments
    for c in range(segments):
        a1, a2 = math.cos(phi[c]), math.sin(phi[c])
        cons.append(a1 * fP + a2 * fQ + abs(a1) * zf * tf <= math.cos(math.pi / segments) * network.s_max[1:])
    c2 = np.array([d.c2 for d in ders])
    c1 = np.array([d.c1 for d in ders])
    c0 = np.array([d.c0 for d in ders])
    obj = cp.sum(cp.multiply(c2, cp.square(gP)) + cp.multiply(c1, gP) + c0
                 + s * s * cp.multiply(c2, cp.square(al)))
    prob = cp.Problem(cp.Minimize(obj), cons)
    if solver_options is None:
        # cvxopt reports failure when asked for more than about 1e-8
        solver_options = {"abstol": 1e-8, "reltol": 1e-8, "feastol": 1e-8} if solver == "CVXOPT" else {}
    prob.solve(solver=solver, **solver_options)
    return float(prob.value), str(prob.status)


# --------------------------------------------------------------------------
# Gaussian quantile by erf series and bisection
# --------------------------------------------------------------------------

_PI = Decimal("3.14159265358979323846264338327950288419716939937510582097494459")


def _erf_series(x, terms: int = 400, digits: int = 60) -> Decimal:
    """Maclaurin series of erf in ``digits``-digit decimal arithmetic.

    The alternating terms grow to about ``exp(x^2)`` before they shrink, so
    the working precision is set well above double precision.
    """
    with localcontext() as ctx:
        ctx.prec = digits
        x = Decimal(x)
        total = Decimal(0)
        term = x
        x2 = x * x
        tiny = Decimal(10) ** -(digits - 5)
        for k in range(terms):
            total += term / (2 * k + 1)
            term *= -x2 / (k + 1)
            if abs(term) < tiny:
                break
        return +(2 * total / _PI.sqrt())


def quantile_bisect(epsilon: float, tol: float = 1e-14) -> float:
    """``z`` with ``P[N(0,1) > z] = epsilon`` by bisection on the erf series."""
    if not 0.0 < epsilon < 0.5:
        raise ValueError("epsilon must lie in (0, 0.5)")
    lo, hi = 0.0, 9.0
    target = 1 - 2 * Decimal(epsilon)          # erf(z / sqrt 2)
    root2 = Decimal(2).sqrt()
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if _erf_series(Decimal(mid) / root2) < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)
