"""Linearization point of the branch-flow model and the derived loss factors.

Edge losses ``l_j r_j`` (and ``l_j x_j``) are charged to the upstream node of
edge ``j`` as fictitious nodal demand (FND). Around a branch-flow optimum the
squared currents are linearized in the nodal injections; the node-level
matrices ``lam_pp, lam_pq, lam_qp, lam_qq`` give the change of active/reactive
FND at node ``i`` per unit of active/reactive net demand at node ``j``.

All matrices are stored node-indexed with shape ``(n+1, n+1)``; column 0 is
zero (the substation is the slack) and, for the edge-level ``L`` matrices,
so is row 0 (there is no edge 0).
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .conic import solve
from .grid import RadialNetwork, UncertaintySpec, path_matrix

TIGHT_WARN = 1e-6
TIGHT_FAIL = 1e-4


class LossFactorError(RuntimeError):
    pass


class RelaxationWarning(UserWarning):
    pass


@dataclass(frozen=True)
class LinearizationPoint:
    gP: np.ndarray       # length n+1, zero where no DER
    gQ: np.ndarray
    fP: np.ndarray       # length n+1, index 0 unused
    fQ: np.ndarray
    u: np.ndarray        # length n+1, u[0] = u0
    l: np.ndarray        # length n+1, index 0 unused
    objective: float = float("nan")
    tightness: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def n(self) -> int:
        return len(self.u) - 1

    @classmethod
    def zero(cls, network: RadialNetwork) -> "LinearizationPoint":
        z = np.zeros(network.n + 1)
        u = np.full(network.n + 1, network.u0)
        return cls(z, z.copy(), z.copy(), z.copy(), u, z.copy(), 0.0, np.zeros(network.n + 1))


@dataclass(frozen=True)
class LossFactorSet:
    L_P: np.ndarray
    L_Q: np.ndarray
    lam_pp: np.ndarray
    lam_pq: np.ndarray
    lam_qp: np.ndarray
    lam_qq: np.ndarray
    fnd_P: np.ndarray    # sum_{j in C_i} l_j r_j at the linearization point
    fnd_Q: np.ndarray
    point: LinearizationPoint
    mode: str = "paper"

    @property
    def n(self) -> int:
        return self.lam_pp.shape[0] - 1

    def block(self, name: str) -> np.ndarray:
        """``n x n`` non-root block of one of the matrices."""
        return np.asarray(getattr(self, name))[1:, 1:]

    def tables(self) -> dict[str, list[list]]:
        """Labeled tables (header row of node ids) for export."""
        out = {}
        n = self.n
        for name in ("L_P", "L_Q", "lam_pp", "lam_pq", "lam_qp", "lam_qq"):
            M = getattr(self, name)
            first = 1 if name.startswith("L_") else 0
            rows = [["i\\j"] + list(range(1, n + 1))]
            for i in range(first, n + 1):
                rows.append([i] + [float(v) for v in M[i, 1:]])
            out[name] = rows
        return out


def solve_linearization_point(network: RadialNetwork, uncertainty: UncertaintySpec | None,
                              backend: str | None = None) -> LinearizationPoint:
    """Solve the relaxed branch-flow model and verify the current cone is tight."""
    from .opf import build_branch_flow_model

    prog = build_branch_flow_model(network, uncertainty)
    sol = solve(prog, backend)
    if not sol.optimal:
        raise LossFactorError(f"branch-flow model not solved: {sol.status} ({sol.stats.get('raw_status')})")
    n = network.n
    vec = lambda key: np.array([sol.primal.get((key, i), 0.0) for i in range(n + 1)])
    gP, gQ, fP, fQ, l = vec("gP"), vec("gQ"), vec("fP"), vec("fQ"), vec("l")
    u = vec("u")
    u[0] = network.u0
    gap = np.zeros(n + 1)
    gap[1:] = np.abs(l[1:] - (fP[1:] ** 2 + fQ[1:] ** 2) / u[1:])
    bad = [i for i in range(1, n + 1) if gap[i] > TIGHT_WARN]
    if any(gap[i] > TIGHT_FAIL for i in bad):
        raise LossFactorError(f"current relaxation not tight on edges {bad} (max gap {gap.max():.3e})")
    if bad:
        warnings.warn(f"current relaxation gap above {TIGHT_WARN} on edges {bad}", RelaxationWarning)
    return LinearizationPoint(gP, gQ, fP, fQ, u, l, sol.objective, gap)


def current_sensitivities(point: LinearizationPoint, A: np.ndarray, mode: str = "paper"):
    """Sensitivities ``L[i, k] = d l_i / d d_k`` of squared currents to net demand.

    ``mode="paper"`` uses ``(2 fP A + 2 fQ A)/u`` for both active and reactive
    demand; ``mode="corrected"`` differentiates ``(fP^2 + fQ^2)/u`` separately,
    ``L^P = 2 fP A/u`` and ``L^Q = 2 fQ A/u``. ``A`` is the ``n x n`` path matrix.
    """
    n = point.n
    if mode not in ("paper", "corrected"):
        raise ValueError(f"mode must be 'paper' or 'corrected', got {mode!r}")
    u = point.u[1:]
    if np.any(u <= 0):
        raise LossFactorError("linearization voltage must be positive")
    fP = point.fP[1:, None]
    fQ = point.fQ[1:, None]
    L_P = np.zeros((n + 1, n + 1))
    L_Q = np.zeros((n + 1, n + 1))
    if mode == "paper":
        L_P[1:, 1:] = L_Q[1:, 1:] = (2 * fP * A + 2 * fQ * A) / u[:, None]
    else:
        L_P[1:, 1:] = 2 * fP * A / u[:, None]
        L_Q[1:, 1:] = 2 * fQ * A / u[:, None]
    return L_P, L_Q


def fnd_sensitivities(L_P: np.ndarray, L_Q: np.ndarray, network: RadialNetwork,
                      point: LinearizationPoint | None = None, mode: str = "paper") -> LossFactorSet:
    """Children sums ``lam[i, j] = sum_{k in C_i} L[k, j] * (r_k or x_k)``."""
    n = network.n
    if L_P.shape != (n + 1, n + 1) or L_Q.shape != (n + 1, n + 1):
        raise ValueError(f"sensitivity matrices must be {(n + 1, n + 1)}")
    # C[i, k] = 1 iff k is a child of i
    C = np.zeros((n + 1, n + 1))
    for k in range(1, n + 1):
        C[network.parent[k], k] = 1.0
    r, x = network.r, network.x
    lam_pp = C @ (r[:, None] * L_P)
    lam_pq = C @ (r[:, None] * L_Q)
    lam_qp = C @ (x[:, None] * L_P)
    lam_qq = C @ (x[:, None] * L_Q)
    if point is None:
        point = LinearizationPoint.zero(network)
    fnd_P = C @ (point.l * r)
    fnd_Q = C @ (point.l * x)
    mats = (L_P, L_Q, lam_pp, lam_pq, lam_qp, lam_qq, fnd_P, fnd_Q)
    for M in mats:
        M.setflags(write=False)
    return LossFactorSet(*mats, point=point, mode=mode)


def compute_loss_factors(network: RadialNetwork, uncertainty: UncertaintySpec | None,
                         mode: str = "paper", backend: str | None = None,
                         point: LinearizationPoint | None = None) -> LossFactorSet:
    """Linearize once and assemble the loss factor set."""
    if point is None:
        point = solve_linearization_point(network, uncertainty, backend)
    L_P, L_Q = current_sensitivities(point, path_matrix(network), mode)
    return fnd_sensitivities(L_P, L_Q, network, point, mode)


def loss_aware_balances(lf: LossFactorSet, network: RadialNetwork) -> dict:
    """Balance amendments ``{"P"|"Q": {i: (linear terms, rhs offset)}}``.

    The balance at node ``i`` gains ``+ sum_j lam[i, j] (g_j - gbar_j)`` over
    non-root DERs ``j`` on the left and the FND ``sum_{k in C_i} l_k r_k``
    on the right; the ``gbar`` part is folded into the right-hand side.
    """
    if lf.n != network.n:
        raise ValueError("loss factors do not match the network")
    gbarP, gbarQ = lf.point.gP, lf.point.gQ
    out = {"P": {}, "Q": {}}
    ders = network.der_nodes
    for kind, mp, mq, fnd in (("P", lf.lam_pp, lf.lam_pq, lf.fnd_P), ("Q", lf.lam_qp, lf.lam_qq, lf.fnd_Q)):
        for i in network.nodes:
            lin = {}
            const = float(fnd[i])
            for j in ders:
                if mp[i, j] != 0.0:
                    lin[("gP", j)] = float(mp[i, j])
                    const += mp[i, j] * gbarP[j]
                if mq[i, j] != 0.0:
                    lin[("gQ", j)] = float(mq[i, j])
                    const += mq[i, j] * gbarQ[j]
            out[kind][i] = (lin, const)
    return out


def fnd_linearized(lf: LossFactorSet, network: RadialNetwork, gP: np.ndarray, gQ: np.ndarray):
    """Linearized active and reactive FND per node at outputs ``gP, gQ``."""
    dP = np.zeros(network.n + 1)
    dQ = np.zeros(network.n + 1)
    for j in network.der_nodes:
        dP[j] = gP[j] - lf.point.gP[j]
        dQ[j] = gQ[j] - lf.point.gQ[j]
    # the balance adds +lam (g - gbar), i.e. FND = fnd - lam (g - gbar)
    return lf.fnd_P - lf.lam_pp @ dP - lf.lam_pq @ dQ, lf.fnd_Q - lf.lam_qp @ dP - lf.lam_qq @ dQ
