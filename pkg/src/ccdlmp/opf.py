"""Scenario models of the chance-constrained LinDistFlow OPF as labeled conic programs.

Constraint labels (dual names):

``("lambda_P", i)``, ``("lambda_Q", i)``  nodal active/reactive balance, all nodes
``("beta", i)``                            voltage drop along edge ``i``
``("theta_plus"|"theta_minus", i)``        reactive output limits of DER ``i``
``("delta_plus"|"delta_minus", i)``        active output limits with reserve margin
``("gamma",)``                             participation factors sum to one
``("mu_plus"|"mu_minus", i)``              voltage limits (with margin in voltage CC)
``("eta", i)``                             quadratic apparent-power limit (cone)
``("eta", i, c)``                          polygon segment ``c`` of the flow chance constraint
``("zeta", i)``, ``("nu", i)``             voltage standard-deviation cone and its coupling
``("zeta_f", i)``, ``("nu_f", i)``         flow standard-deviation cone and its coupling

Node ``0`` is the substation; edge ``i`` feeds node ``i``.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .conic import ConicProgram, Solution, solve
from .grid import DER, RadialNetwork, TopologyMatrices, UncertaintySpec, build_matrices


class ScenarioKind(enum.Enum):
    DET = "det"
    GEN_CC = "gen-cc"
    VOLT_CC = "volt-cc"
    LVOLT_CC = "lvolt-cc"

    @classmethod
    def parse(cls, text: "str | ScenarioKind") -> "ScenarioKind":
        if isinstance(text, cls):
            return text
        key = str(text).strip().lower().replace("_", "-")
        for k in cls:
            if k.value == key:
                return k
        raise ValueError(f"unknown scenario {text!r}; choose from {[k.value for k in cls]}")

    @property
    def stochastic(self) -> bool:
        return self is not ScenarioKind.DET

    @property
    def voltage_cc(self) -> bool:
        return self in (ScenarioKind.VOLT_CC, ScenarioKind.LVOLT_CC)


class ModelError(ValueError):
    pass


# --------------------------------------------------------------------------
# Polygon
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class PolygonApprox:
    """Half-planes ``a1 fP + a2 fQ + a3 S <= 0`` of the inscribed regular dodecagon."""

    a1: np.ndarray
    a2: np.ndarray
    a3: np.ndarray

    def __len__(self) -> int:
        return len(self.a1)

    def slack(self, fP: float, fQ: float, S: float) -> np.ndarray:
        """Left-hand sides; all ``<= 0`` inside the polygon."""
        return self.a1 * fP + self.a2 * fQ + self.a3 * S


def build_polygon(segments: int = 12) -> PolygonApprox:
    phi = (2 * np.arange(1, segments + 1) - 1) * math.pi / segments
    a1 = np.cos(phi)
    a2 = np.sin(phi)
    a3 = np.full(segments, -math.cos(math.pi / segments))
    for a in (a1, a2, a3):
        a.setflags(write=False)
    return PolygonApprox(a1, a2, a3)


# --------------------------------------------------------------------------
# Constraint families
# --------------------------------------------------------------------------

def expected_cost(der: DER, g: float, alpha: float, s: float) -> float:
    """Expected cost of ``der`` producing ``g + alpha * Omega`` with ``Std[Omega] = s``."""
    if not der.b > 0:
        raise ModelError(f"DER at node {der.node}: b must be > 0")
    if s < 0:
        raise ModelError("s must be >= 0")
    return der.c2 * g * g + der.c1 * g + der.c0 + alpha * alpha * s * s / (2.0 * der.b)


def expected_cost_terms(prog: ConicProgram, der: DER, s: float) -> None:
    """Add ``(g + a)^2/(2b) + alpha^2 s^2/(2b)`` (plus the ``c0`` offset) to ``prog``."""
    if not der.b > 0:
        raise ModelError(f"DER at node {der.node}: b must be > 0")
    i = der.node
    prog.add_quadratic(("cost", i), [({("gP", i): 1.0}, der.a)], 1.0 / (2.0 * der.b))
    prog.add_objective({}, der.c0 - der.a * der.a / (2.0 * der.b))
    if s > 0 and prog.has_variable(("alpha", i)):
        prog.add_quadratic(("cost_alpha", i), [({("alpha", i): 1.0}, 0.0)], s * s / (2.0 * der.b))


def generation_cc(prog: ConicProgram, der: DER, z: float, s: float, with_alpha: bool = True) -> None:
    """``g +- z s alpha`` within ``[gP_min, gP_max]`` (labels delta_plus / delta_minus)."""
    i = der.node
    up = {("gP", i): 1.0}
    dn = {("gP", i): -1.0}
    if with_alpha and z * s != 0.0:
        up[("alpha", i)] = z * s
        dn[("alpha", i)] = z * s
    prog.add_le(("delta_plus", i), up, der.gP_max)
    prog.add_le(("delta_minus", i), dn, -der.gP_min)


def _std_rows(row: np.ndarray, sqrt_sigma: np.ndarray, var, sign: float) -> list:
    """Rows of ``(row + sign * var * e^T) Sigma^{1/2}`` for a cone over ``var``."""
    a = row @ sqrt_sigma
    b = sqrt_sigma.sum(axis=0)
    keep = np.flatnonzero((np.abs(a) > 0) | (np.abs(b) > 0))
    if keep.size == 0:
        return [({var: 0.0}, 0.0)]
    return [({var: sign * b[k]}, a[k]) for k in keep]


def voltage_cc(prog: ConicProgram, network: RadialNetwork, R: np.ndarray, R_inv: np.ndarray,
               unc: UncertaintySpec, alpha_nodes, form: str = "physical", scale: float = 1.0) -> None:
    """Voltage standard-deviation cones, couplings and margin-tightened voltage box.

    ``form="physical"`` uses ``(R_i* - rho_i e^T) Sigma^{1/2}``, consistent with the
    recourse ``g + alpha * Omega``; ``form="plus"`` uses the ``+`` variant.
    """
    n = network.n
    S_half = unc.sqrt()
    z = unc.z_v
    sign = -1.0 if form == "physical" else 1.0
    for i in range(1, n + 1):
        prog.add_variable(("tv", i))
        prog.add_variable(("rhov", i))
    for i in range(1, n + 1):
        prog.add_soc(("zeta", i), _std_rows(R[i - 1], S_half, ("rhov", i), sign), ({("tv", i): 1.0}, 0.0))
        row = {("rhov", j): scale * R_inv[i - 1, j - 1] for j in range(1, n + 1)}
        if i in alpha_nodes:
            row[("alpha", i)] = -scale
        prog.add_eq(("nu", i), row, 0.0)
        prog.add_le(("mu_plus", i), {("u", i): 1.0, ("tv", i): 2.0 * z}, network.u_max[i])
        prog.add_le(("mu_minus", i), {("u", i): -1.0, ("tv", i): 2.0 * z}, -network.u_min[i])


def flow_cc(prog: ConicProgram, network: RadialNetwork, A: np.ndarray, A_inv: np.ndarray,
            unc: UncertaintySpec | None, polygon: PolygonApprox, alpha_nodes, scale: float = 1.0) -> None:
    """Flow standard-deviation cones, couplings and polygon half-planes per edge.

    With ``unc=None`` only the deterministic polygon is emitted.
    """
    n = network.n
    if unc is not None:
        S_half = unc.sqrt()
        z = unc.z_f
        for i in range(1, n + 1):
            prog.add_variable(("tf", i))
            prog.add_variable(("rhof", i))
        for i in range(1, n + 1):
            prog.add_soc(("zeta_f", i), _std_rows(A[i - 1], S_half, ("rhof", i), -1.0),
                         ({("tf", i): 1.0}, 0.0))
            row = {("rhof", j): scale * A_inv[i - 1, j - 1] for j in range(1, n + 1)}
            if i in alpha_nodes:
                row[("alpha", i)] = -scale
            prog.add_eq(("nu_f", i), row, 0.0)
    for i in range(1, n + 1):
        S = network.s_max[i]
        for c in range(len(polygon)):
            row = {("fP", i): polygon.a1[c], ("fQ", i): polygon.a2[c]}
            if unc is not None:
                row[("tf", i)] = abs(polygon.a1[c]) * z
            prog.add_le(("eta", i, c + 1), row, -polygon.a3[c] * S)


def _flow_soc(prog: ConicProgram, network: RadialNetwork) -> None:
    for i in range(1, network.n + 1):
        prog.add_soc(("eta", i), [({("fP", i): 1.0}, 0.0), ({("fQ", i): 1.0}, 0.0)],
                     ({}, network.s_max[i]))


# --------------------------------------------------------------------------
# Models
# --------------------------------------------------------------------------

def _declare_generation(prog: ConicProgram, network: RadialNetwork, with_alpha: bool) -> list[int]:
    gen = [d.node for d in network.ders]
    for d in network.ders:
        prog.add_variable(("gP", d.node))
        prog.add_variable(("gQ", d.node))
        if with_alpha:
            prog.add_variable(("alpha", d.node))
    for i in range(1, network.n + 1):
        prog.add_variable(("fP", i))
        prog.add_variable(("fQ", i))
        prog.add_variable(("u", i))
    return gen


def _balances(prog: ConicProgram, network: RadialNetwork, losses=None) -> None:
    """Nodal balances ``f_i + g_i - sum_children f_j (+ linearized losses) = d_i``."""
    for i in network.nodes:
        for kind, f, g, d in (("P", "fP", "gP", network.dP), ("Q", "fQ", "gQ", network.dQ)):
            row = {}
            if i != 0:
                row[(f, i)] = 1.0
            for j in network.children(i):
                row[(f, j)] = row.get((f, j), 0.0) - 1.0
            if prog.has_variable((g, i)):
                row[(g, i)] = 1.0
            rhs = d[i]
            if losses is not None:
                lin, const = losses[kind][i]
                for key, v in lin.items():
                    row[key] = row.get(key, 0.0) + v
                rhs += const
            prog.add_eq((f"lambda_{kind}", i), row, rhs)


def _voltage_drop(prog: ConicProgram, network: RadialNetwork) -> None:
    for i in range(1, network.n + 1):
        p = network.parent[i]
        row = {("u", i): 1.0, ("fP", i): 2.0 * network.r[i], ("fQ", i): 2.0 * network.x[i]}
        rhs = 0.0
        if p == 0:
            rhs = network.u0
        else:
            row[("u", p)] = -1.0
        prog.add_eq(("beta", i), row, rhs)


def _reactive_limits(prog: ConicProgram, network: RadialNetwork) -> None:
    for d in network.ders:
        if d.node == 0:
            continue
        prog.add_le(("theta_plus", d.node), {("gQ", d.node): 1.0}, d.gQ_max)
        prog.add_le(("theta_minus", d.node), {("gQ", d.node): -1.0}, -d.gQ_min)


def _voltage_box(prog: ConicProgram, network: RadialNetwork) -> None:
    for i in range(1, network.n + 1):
        prog.add_le(("mu_plus", i), {("u", i): 1.0}, network.u_max[i])
        prog.add_le(("mu_minus", i), {("u", i): -1.0}, -network.u_min[i])


def coupling_scale(unc: UncertaintySpec | None) -> float:
    """Coupling rows are multiplied by ``s`` so their duals carry the ``b/s`` distortion scaling."""
    if unc is None or unc.s == 0.0:
        return 1.0
    return unc.s


def build_model(network: RadialNetwork, uncertainty: UncertaintySpec | None,
                scenario: "ScenarioKind | str", loss_factors=None, flow_cc: bool = False,
                voltage_form: str = "physical", matrices: TopologyMatrices | None = None) -> ConicProgram:
    """Labeled conic program for one scenario (see module docstring for labels)."""
    scenario = ScenarioKind.parse(scenario)
    if voltage_form not in ("physical", "plus"):
        raise ModelError(f"voltage_form must be 'physical' or 'plus', got {voltage_form!r}")
    if scenario is ScenarioKind.LVOLT_CC and loss_factors is None:
        raise ModelError("LVOLT-CC requires loss factors")
    if scenario.stochastic and uncertainty is None:
        raise ModelError(f"{scenario.value} requires an uncertainty specification")
    if uncertainty is not None and uncertainty.n != network.n:
        raise ModelError(f"covariance dimension {uncertainty.n} does not match network size {network.n}")
    unc = uncertainty if scenario.stochastic else None
    lf = loss_factors if scenario is ScenarioKind.LVOLT_CC else None
    if matrices is None and (scenario.voltage_cc or flow_cc):
        matrices = build_matrices(network, lf)
    elif matrices is not None and lf is not None and not matrices.loss_aware:
        matrices = build_matrices(network, lf)

    prog = ConicProgram(f"{network.name}:{scenario.value}")
    s = unc.s if unc is not None else 0.0
    scale = coupling_scale(unc)
    prog.meta.update(scenario=scenario.value, s=s, coupling_scale=scale, flow_cc=flow_cc,
                     voltage_form=voltage_form)
    gen = _declare_generation(prog, network, with_alpha=unc is not None)
    alpha_nodes = set(gen) - {0} if unc is not None else set()

    _balances(prog, network, None if lf is None else loss_aware_terms(lf, network))
    _voltage_drop(prog, network)
    _reactive_limits(prog, network)
    for d in network.ders:
        if d.node != 0:
            generation_cc(prog, d, unc.z_g if unc is not None else 0.0, s, with_alpha=unc is not None)
    if unc is not None:
        prog.add_eq(("gamma",), {("alpha", i): 1.0 for i in gen}, 1.0)

    if scenario.voltage_cc:
        R = matrices.R_L if lf is not None else matrices.R
        R_inv = matrices.R_L_inv if lf is not None else matrices.R_inv
        voltage_cc(prog, network, R, R_inv, unc, alpha_nodes, voltage_form, scale)
    else:
        _voltage_box(prog, network)

    if flow_cc:
        if lf is not None:
            A = matrices.A_L
            A_inv = np.linalg.inv(A)
        else:
            A, A_inv = matrices.A, matrices.A_inv
        flow_cc_constraints(prog, network, A, A_inv, unc, build_polygon(), alpha_nodes, scale)
    else:
        _flow_soc(prog, network)

    for d in network.ders:
        expected_cost_terms(prog, d, s)
    return prog


# ``build_model`` takes a boolean argument of the same name
flow_cc_constraints = flow_cc


def loss_aware_terms(lf, network: RadialNetwork) -> dict:
    """Per-node ``(linear terms, constant)`` added to the balances by the loss factors."""
    from .losses import loss_aware_balances

    return loss_aware_balances(lf, network)


def build_branch_flow_model(network: RadialNetwork, uncertainty: UncertaintySpec | None) -> ConicProgram:
    """Relaxed branch-flow model with losses, reserve margins and participation factors.

    ``fP_i, fQ_i`` are receiving-end flows of edge ``i`` and ``l_i`` its squared
    current; the sending-end flow is ``f_i + l_i (r_i, x_i)``.
    """
    unc = uncertainty
    s = unc.s if unc is not None else 0.0
    prog = ConicProgram(f"{network.name}:branch-flow")
    prog.meta.update(scenario="branch-flow", s=s)
    with_alpha = unc is not None
    gen = _declare_generation(prog, network, with_alpha)
    n = network.n
    for i in range(1, n + 1):
        prog.add_variable(("l", i), lb=0.0, lb_label=("l_nonneg", i))
    for i in network.nodes:
        for kind, f, g, d, z in (("P", "fP", "gP", network.dP, network.r),
                                 ("Q", "fQ", "gQ", network.dQ, network.x)):
            row = {}
            if i != 0:
                row[(f, i)] = 1.0
            for j in network.children(i):
                row[(f, j)] = -1.0
                row[("l", j)] = -z[j]
            if prog.has_variable((g, i)):
                row[(g, i)] = 1.0
            prog.add_eq((f"lambda_{kind}", i), row, d[i])
    for i in range(1, n + 1):
        p = network.parent[i]
        r, x = network.r[i], network.x[i]
        row = {("u", i): 1.0, ("fP", i): 2.0 * r, ("fQ", i): 2.0 * x, ("l", i): r * r + x * x}
        rhs = network.u0
        if p != 0:
            row[("u", p)] = -1.0
            rhs = 0.0
        prog.add_eq(("beta", i), row, rhs)
        # fP^2 + fQ^2 <= l u   <=>   ||(2 fP, 2 fQ, l - u)|| <= l + u
        prog.add_soc(("current", i),
                     [({("fP", i): 2.0}, 0.0), ({("fQ", i): 2.0}, 0.0), ({("l", i): 1.0, ("u", i): -1.0}, 0.0)],
                     ({("l", i): 1.0, ("u", i): 1.0}, 0.0))
        S = network.s_max[i]
        prog.add_soc(("eta", i), [({("fP", i): 1.0}, 0.0), ({("fQ", i): 1.0}, 0.0)], ({}, S))
        prog.add_soc(("eta_send", i), [({("fP", i): 1.0, ("l", i): r}, 0.0), ({("fQ", i): 1.0, ("l", i): x}, 0.0)],
                     ({}, S))
    _voltage_box(prog, network)
    _reactive_limits(prog, network)
    for d in network.ders:
        if d.node != 0:
            generation_cc(prog, d, unc.z_g if unc is not None else 0.0, s, with_alpha)
    if with_alpha:
        prog.add_eq(("gamma",), {("alpha", i): 1.0 for i in gen}, 1.0)
    for d in network.ders:
        expected_cost_terms(prog, d, s)
    return prog


# --------------------------------------------------------------------------
# Results
# --------------------------------------------------------------------------

@dataclass
class OpfResult:
    """A solved scenario with convenient accessors in node order."""

    network: RadialNetwork
    uncertainty: UncertaintySpec | None
    scenario: ScenarioKind
    program: ConicProgram
    solution: Solution
    matrices: TopologyMatrices | None = None
    loss_factors: object = None
    flow_cc: bool = False
    voltage_form: str = "physical"
    extra: dict = field(default_factory=dict)

    @property
    def optimal(self) -> bool:
        return self.solution.optimal

    @property
    def s(self) -> float:
        return self.program.meta["s"]

    @property
    def coupling_scale(self) -> float:
        return self.program.meta.get("coupling_scale", 1.0)

    def _node_vec(self, key: str, fill: float = 0.0, root: float | None = None) -> np.ndarray:
        out = np.full(self.network.n + 1, fill)
        for i in self.network.nodes:
            out[i] = self.solution.primal.get((key, i), fill)
        if root is not None:
            out[0] = root
        return out

    @property
    def gP(self) -> np.ndarray:
        return self._node_vec("gP")

    @property
    def gQ(self) -> np.ndarray:
        return self._node_vec("gQ")

    @property
    def alpha(self) -> np.ndarray:
        return self._node_vec("alpha")

    @property
    def fP(self) -> np.ndarray:
        return self._node_vec("fP")

    @property
    def fQ(self) -> np.ndarray:
        return self._node_vec("fQ")

    @property
    def u(self) -> np.ndarray:
        return self._node_vec("u", root=self.network.u0)

    @property
    def tv(self) -> np.ndarray:
        return self._node_vec("tv")

    @property
    def tf(self) -> np.ndarray:
        return self._node_vec("tf")

    def dual_vec(self, name: str) -> np.ndarray:
        out = np.zeros(self.network.n + 1)
        for i in self.network.nodes:
            v = self.solution.duals.get((name, i))
            if v is not None:
                out[i] = v
        return out

    @property
    def lambda_P(self) -> np.ndarray:
        return self.dual_vec("lambda_P")

    @property
    def lambda_Q(self) -> np.ndarray:
        return self.dual_vec("lambda_Q")

    @property
    def gamma(self) -> float:
        return float(self.solution.duals.get(("gamma",), 0.0))

    @property
    def eta(self) -> np.ndarray:
        """Multiplier of the squared apparent-power limit, ``(cone dual)/(2 S)``."""
        out = np.zeros(self.network.n + 1)
        for i in range(1, self.network.n + 1):
            z = self.solution.duals.get(("eta", i))
            if isinstance(z, np.ndarray):
                out[i] = z[0] / (2.0 * self.network.s_max[i])
        return out

    def nu(self, flow: bool = False) -> np.ndarray:
        return self.dual_vec("nu_f" if flow else "nu")

    def binding(self, label, tol: float = 1e-6) -> bool:
        """Whether a labeled constraint holds with (near) equality."""
        c = self.program.constraint(label)
        x = np.array([self.solution.primal[v] for v in self.program.variables])
        if hasattr(c, "t"):
            vals = np.array([self.program._eval(r, m, x) for r, m in c.rows])
            return abs(self.program._eval(*c.t, x) - np.linalg.norm(vals)) <= tol
        return abs(self.program._eval(c.coeffs, -c.rhs, x)) <= tol


def solve_scenario(network: RadialNetwork, uncertainty: UncertaintySpec | None,
                   scenario: "ScenarioKind | str", loss_factors=None, flow_cc: bool = False,
                   voltage_form: str = "physical", backend: str | None = None) -> OpfResult:
    scenario = ScenarioKind.parse(scenario)
    lf = loss_factors if scenario is ScenarioKind.LVOLT_CC else None
    matrices = build_matrices(network, lf)
    prog = build_model(network, uncertainty, scenario, lf, flow_cc, voltage_form, matrices)
    sol = solve(prog, backend)
    return OpfResult(network, uncertainty if scenario.stochastic else None, scenario, prog, sol,
                     matrices, lf, flow_cc, voltage_form)
