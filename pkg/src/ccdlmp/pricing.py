"""Itemized DLMPs, the balancing price, producer best responses and equilibrium checks.

Everything here is post-processing of a solved :class:`~ccdlmp.opf.OpfResult`;
no model is re-solved.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .grid import DER, RadialNetwork, UncertaintySpec, topology_sets
from .opf import OpfResult, ScenarioKind, build_polygon

IDENTITY_TOL = 1e-5
NU_TOL = 1e-4


class PricingError(ValueError):
    pass


def _require(result: OpfResult, labels) -> None:
    if not result.optimal:
        raise PricingError(f"solution status is {result.solution.status!r}, not optimal")
    missing = [lab for lab in labels if lab not in result.solution.duals]
    if missing:
        raise PricingError(f"missing duals: {missing[:5]}")


# --------------------------------------------------------------------------
# DLMP decomposition
# --------------------------------------------------------------------------

@dataclass
class DLMPReport:
    """Per-node prices and their two itemizations (arrays of length ``n+1``).

    Recursive form: ``lam_P = ancestor + reactive + congestion`` with
    ``reactive = (r/x)(lam_Q - lam_Q[A])`` and ``congestion = kP - (r/x) kQ``,
    where ``kP, kQ`` are the flow-limit contributions to the flow stationarity
    (``2 eta fP, 2 eta fQ`` for the quadratic limit).
    Voltage form: ``lam_P = ancestor + voltage + flow`` with
    ``voltage = -2 r sum_{D_i}(mu+ - mu-)`` and ``flow = kP``.
    """

    lam_P: np.ndarray
    lam_Q: np.ndarray
    ancestor_P: np.ndarray
    ancestor_Q: np.ndarray
    reactive: np.ndarray
    congestion: np.ndarray
    congestion_plus: np.ndarray        # 2 eta (fP + (r/x) fQ), for comparison only
    voltage: np.ndarray
    flow: np.ndarray
    mu_net: np.ndarray                 # mu+ - mu- per node
    eta: np.ndarray
    root_P: float
    root_Q: float

    @property
    def n(self) -> int:
        return len(self.lam_P) - 1

    @property
    def recursive_sum(self) -> np.ndarray:
        out = self.ancestor_P + self.reactive + self.congestion
        out[0] = self.root_P
        return out

    @property
    def voltage_sum(self) -> np.ndarray:
        out = self.ancestor_P + self.voltage + self.flow
        out[0] = self.root_P
        return out

    @property
    def recursive_residual(self) -> float:
        return float(np.max(np.abs(self.recursive_sum - self.lam_P)))

    @property
    def voltage_residual(self) -> float:
        return float(np.max(np.abs(self.voltage_sum - self.lam_P)))

    def ok(self, tol: float = IDENTITY_TOL) -> bool:
        return self.recursive_residual <= tol and self.voltage_residual <= tol

    def rows(self) -> list[dict]:
        keys = ("lam_P", "lam_Q", "ancestor_P", "reactive", "congestion", "congestion_plus",
                "voltage", "flow", "mu_net", "eta")
        return [{"node": i, **{k: float(getattr(self, k)[i]) for k in keys}} for i in range(self.n + 1)]


def _flow_contributions(result: OpfResult) -> tuple[np.ndarray, np.ndarray]:
    """``kP_i, kQ_i``: minus the gradient of the flow-limit terms w.r.t. ``fP_i, fQ_i``."""
    net = result.network
    n = net.n
    kP = np.zeros(n + 1)
    kQ = np.zeros(n + 1)
    duals = result.solution.duals
    if result.flow_cc:
        poly = build_polygon()
        for i in range(1, n + 1):
            eta = np.array([duals[("eta", i, c + 1)] for c in range(len(poly))])
            # half-planes a1 fP + a2 fQ <= ...: stationarity term +eta a
            kP[i] = float(eta @ poly.a1)
            kQ[i] = float(eta @ poly.a2)
    else:
        for i in range(1, n + 1):
            z = duals[("eta", i)]
            # cone rows are (fP, fQ): stationarity term -z1
            kP[i] = -float(z[1])
            kQ[i] = -float(z[2])
    return kP, kQ


def decompose_dlmp(result: OpfResult, root_prices: tuple[float, float] | None = None) -> DLMPReport:
    """Itemize nodal prices into ancestor, reactive, voltage and congestion terms.

    ``root_prices`` optionally replaces the substation prices (e.g. by
    transmission LMPs); the itemization is then shifted by the difference.
    """
    net = result.network
    n = net.n
    labels = [("lambda_P", i) for i in net.nodes] + [("lambda_Q", i) for i in net.nodes]
    labels += [("mu_plus", i) for i in range(1, n + 1)] + [("mu_minus", i) for i in range(1, n + 1)]
    _require(result, labels)
    lam_P = result.lambda_P.copy()
    lam_Q = result.lambda_Q.copy()
    if root_prices is not None:
        lam_P += root_prices[0] - lam_P[0]
        lam_Q += root_prices[1] - lam_Q[0]
    mu = result.dual_vec("mu_plus") - result.dual_vec("mu_minus")
    kP, kQ = _flow_contributions(result)
    eta = np.zeros(n + 1) if result.flow_cc else result.eta

    anc_P = np.zeros(n + 1)
    anc_Q = np.zeros(n + 1)
    reactive = np.zeros(n + 1)
    congestion = np.zeros(n + 1)
    cong_plus = np.zeros(n + 1)
    voltage = np.zeros(n + 1)
    fP, fQ = result.fP, result.fQ
    for i in range(1, n + 1):
        p, _, down = topology_sets(net, i)
        ratio = net.r[i] / net.x[i]
        anc_P[i] = lam_P[p]
        anc_Q[i] = lam_Q[p]
        reactive[i] = ratio * (lam_Q[i] - lam_Q[p])
        congestion[i] = kP[i] - ratio * kQ[i]
        cong_plus[i] = 2.0 * eta[i] * (fP[i] + ratio * fQ[i])
        voltage[i] = -2.0 * net.r[i] * sum(mu[j] for j in down)
    return DLMPReport(lam_P, lam_Q, anc_P, anc_Q, reactive, congestion, cong_plus, voltage,
                      kP.copy(), mu, eta, float(lam_P[0]), float(lam_Q[0]))


# --------------------------------------------------------------------------
# Balancing price
# --------------------------------------------------------------------------

@dataclass
class GammaReport:
    """``gamma = (s/sum b)(s + z sum (d+ + d-) b + sum b nu + sum b nu_f)``."""

    scenario: str
    gamma: float
    s: float
    sum_b: float
    term_s: float
    term_delta: float
    term_nu: float
    term_nu_f: float
    nu: np.ndarray                   # solver duals of the voltage coupling
    nu_formula: np.ndarray           # recomputed from mu, t, alpha
    nu_plus: np.ndarray              # closed form with the plus-sign cone, diagnostic only
    nu_f: np.ndarray
    nu_f_formula: np.ndarray
    root_residual: float             # alpha_0 s^2 / b_0 - gamma
    degenerate: list = field(default_factory=list)

    @property
    def reconstructed(self) -> float:
        return self.term_s + self.term_delta + self.term_nu + self.term_nu_f

    @property
    def residual(self) -> float:
        return abs(self.reconstructed - self.gamma)

    @property
    def nu_residual(self) -> float:
        return float(np.max(np.abs(self.nu - self.nu_formula), initial=0.0))

    @property
    def nu_f_residual(self) -> float:
        """Relative to the largest flow coupling dual (these reach the thousands)."""
        scale = max(1.0, float(np.max(np.abs(self.nu_f), initial=0.0)))
        return float(np.max(np.abs(self.nu_f - self.nu_f_formula), initial=0.0)) / scale

    def ok(self, tol: float = IDENTITY_TOL, nu_tol: float = NU_TOL) -> bool:
        return (self.residual <= tol and self.nu_residual <= nu_tol and self.nu_f_residual <= nu_tol
                and not self.degenerate)

    def as_dict(self) -> dict:
        return {
            "scenario": self.scenario, "gamma": self.gamma, "s": self.s, "sum_b": self.sum_b,
            "term_s": self.term_s, "term_delta": self.term_delta, "term_nu": self.term_nu,
            "term_nu_f": self.term_nu_f, "reconstructed": self.reconstructed,
            "residual": self.residual, "nu_residual": self.nu_residual,
            "nu_f_residual": self.nu_f_residual,
            "root_residual": self.root_residual, "degenerate": self.degenerate,
        }

    def rows(self) -> list[dict]:
        return [{"node": i, "nu": float(self.nu[i]), "nu_formula": float(self.nu_formula[i]),
                 "nu_plus": float(self.nu_plus[i]), "nu_f": float(self.nu_f[i]),
                 "nu_f_formula": float(self.nu_f_formula[i])} for i in range(len(self.nu))]


def _nu_formula(M: np.ndarray, zeta: np.ndarray, t: np.ndarray, rho: np.ndarray, spread: np.ndarray,
                s: float, scale: float, sign: float, family: str, degenerate: list,
                tol: float = 1e-9) -> np.ndarray:
    """Coupling duals from the stationarity of ``rho``.

    ``nu_i = (1/scale) sum_j M_ji w_j`` with
    ``w_j = (zeta_j/t_j)(s^2 rho_j + sign * M_j* Sigma e)`` (``sign=-1`` for the
    physical cone ``(M_j* - rho_j e^T)``). ``spread = M Sigma e``.
    """
    n = len(t)
    w = np.zeros(n)
    for j in range(n):
        if zeta[j] == 0.0:
            continue
        if t[j] <= tol:
            if abs(zeta[j]) > tol:
                degenerate.append((family, j + 1))
            continue
        w[j] = zeta[j] / t[j] * (s * s * rho[j] + sign * spread[j])
    return M.T @ w / scale


def decompose_gamma(result: OpfResult) -> GammaReport | None:
    """Decompose the balancing price; ``None`` for the deterministic model."""
    if not result.scenario.stochastic:
        return None
    net = result.network
    unc = result.uncertainty
    n = net.n
    _require(result, [("gamma",)])
    s = unc.s
    gamma = result.gamma
    b = {d.node: d.b for d in net.ders}
    sum_b = sum(b.values())
    alpha = result.alpha
    dp, dm = result.dual_vec("delta_plus"), result.dual_vec("delta_minus")
    nu = np.zeros(n + 1)
    nu_f = np.zeros(n + 1)
    nu_formula = np.zeros(n + 1)
    nu_f_formula = np.zeros(n + 1)
    nu_plus = np.zeros(n + 1)
    degenerate: list = []
    scale = result.coupling_scale
    a_vec = alpha[1:].copy()                      # non-root participation, zero where no DER
    Se = unc.sigma @ np.ones(n)

    if result.scenario.voltage_cc:
        _require(result, [("nu", i) for i in range(1, n + 1)])
        nu = result.nu()
        lossy = result.scenario is ScenarioKind.LVOLT_CC
        R = result.matrices.R_L if lossy else result.matrices.R
        zeta = 2.0 * unc.z_v * (result.dual_vec("mu_plus")[1:] + result.dual_vec("mu_minus")[1:])
        t = result.tv[1:]
        sign = -1.0 if result.voltage_form == "physical" else 1.0
        nu_formula[1:] = _nu_formula(R, zeta, t, R @ a_vec, R @ Se, s, scale, sign, "voltage", degenerate)
        # plus-sign closed form: (mu+ + mu-) R_j* (Sigma e + s^2 alpha) / Stdv[u_j], Stdv = 2 t
        with np.errstate(divide="ignore", invalid="ignore"):
            wp = np.where(t > 1e-9, zeta * (R @ Se + s * s * (R @ a_vec)) / (2.0 * t), 0.0)
        nu_plus[1:] = R.T @ wp
    if result.flow_cc:
        _require(result, [("nu_f", i) for i in range(1, n + 1)])
        nu_f = result.nu(flow=True)
        lossy = result.scenario is ScenarioKind.LVOLT_CC
        A = result.matrices.A_L if lossy else result.matrices.A
        poly = build_polygon()
        duals = result.solution.duals
        zeta_f = np.array([unc.z_f * sum(abs(poly.a1[c]) * duals[("eta", i, c + 1)] for c in range(len(poly)))
                           for i in range(1, n + 1)])
        nu_f_formula[1:] = _nu_formula(A, zeta_f, result.tf[1:], A @ a_vec, A @ Se, s, scale, -1.0,
                                       "flow", degenerate)

    z = unc.z_g
    ders = [d.node for d in net.ders if d.node != 0]
    pre = s / sum_b
    term_delta = pre * z * sum((dp[i] + dm[i]) * b[i] for i in ders)
    # coupling duals carry a factor 1/scale relative to the unscaled rows
    k = scale / s if s > 0 else 0.0
    term_nu = pre * k * sum(b[i] * nu[i] for i in ders)
    term_nu_f = pre * k * sum(b[i] * nu_f[i] for i in ders)
    root_res = alpha[0] * s * s / b[0] - gamma
    return GammaReport(result.scenario.value, gamma, s, sum_b, pre * s, term_delta, term_nu, term_nu_f,
                       nu, nu_formula, nu_plus, nu_f, nu_f_formula, float(root_res), degenerate)


# --------------------------------------------------------------------------
# Producer best response
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ProducerResponse:
    """Profit-maximizing ``(g, alpha)`` of one DER at prices ``(pi_g, pi_alpha)``.

    ``case``: 1 interior, 2 upper limit binding, 3 lower limit binding, 4 both.
    ``conditions`` holds the exact price-region tests in evaluation order;
    ``necessary_conditions`` the simpler region tests, which for case 4 ignore
    the dependence on ``pi_g`` and are therefore only necessary.
    """

    g: float
    alpha: float
    case: int
    delta_plus: float
    delta_minus: float
    profit: float
    conditions: dict
    necessary_conditions: dict

    def slacks(self, der: DER, z: float, s: float) -> tuple[float, float]:
        return (der.gP_max - self.g - z * s * self.alpha, self.g - z * s * self.alpha - der.gP_min)


def profit(der: DER, pi_g: float, pi_alpha: float, g: float, alpha: float, s: float) -> float:
    return pi_g * g + pi_alpha * alpha - (g + der.a) ** 2 / (2 * der.b) - alpha * alpha * s * s / (2 * der.b)


def best_response(pi_g: float, pi_alpha: float, der: DER, uncertainty: UncertaintySpec | float,
                  tol: float = 0.0) -> ProducerResponse:
    """Closed-form solution of the producer problem.

    Cases are tested in the order 4, 2, 3, 1; on a region boundary two closed
    forms coincide and only the reported case id depends on the order.
    """
    s = uncertainty if isinstance(uncertainty, (int, float)) else uncertainty.s
    z = uncertainty.z_g if isinstance(uncertainty, UncertaintySpec) else None
    if z is None:
        raise PricingError("best_response needs an UncertaintySpec for the quantile z")
    return best_response_z(pi_g, pi_alpha, der, float(s), z, tol)


def best_response_z(pi_g: float, pi_alpha: float, der: DER, s: float, z: float,
                    tol: float = 0.0) -> ProducerResponse:
    a, b = der.a, der.b
    gmin, gmax = der.gP_min, der.gP_max
    if not (b > 0 and s > 0 and z > 0):
        raise PricingError("best response requires b > 0, s > 0 and z > 0")
    zs = z * s
    hi = (gmax + a) / b - z * pi_alpha / s
    lo = (gmin + a) / b + z * pi_alpha / s
    necessary = {
        "4": bool(math.isfinite(gmax - gmin) and pi_alpha >= s * (gmax - gmin) / (2 * z * b)),
        "2": bool(pi_g >= hi),
        "3": bool(pi_g <= lo),
        "1": bool(lo <= pi_g <= hi),
    }
    cond: dict = {}
    q = 1.0 + z * z

    # case 4: both limits binding, multipliers from the two stationarity rows
    if math.isfinite(gmax) and math.isfinite(gmin):
        g4 = 0.5 * (gmax + gmin)
        a4 = (gmax - gmin) / (2 * zs)
        diff = pi_g - (g4 + a) / b                       # d+ - d-
        tot = (pi_alpha - a4 * s * s / b) / zs           # d+ + d-
        d4p, d4m = 0.5 * (tot + diff), 0.5 * (tot - diff)
        cond["4"] = bool(d4p >= -tol and d4m >= -tol)
        if cond["4"]:
            return _response(der, pi_g, pi_alpha, g4, a4, 4, d4p, d4m, s, cond, necessary)
    else:
        cond["4"] = False

    # case 2: upper limit binding, lower slack
    if math.isfinite(gmax):
        a2 = (zs * (gmax + a - b * pi_g) + pi_alpha * b) / (s * s * q)
        g2 = gmax - zs * a2
        d2 = pi_g - (g2 + a) / b
        cond["2"] = bool(d2 >= -tol and g2 - zs * a2 >= gmin - tol)
        if cond["2"]:
            return _response(der, pi_g, pi_alpha, g2, a2, 2, d2, 0.0, s, cond, necessary)
    else:
        cond["2"] = False

    # case 3: lower limit binding, upper slack
    if math.isfinite(gmin):
        a3 = (pi_alpha * b - zs * (gmin + a - b * pi_g)) / (s * s * q)
        g3 = gmin + zs * a3
        d3 = (g3 + a) / b - pi_g
        cond["3"] = bool(d3 >= -tol and g3 + zs * a3 <= gmax + tol)
        if cond["3"]:
            return _response(der, pi_g, pi_alpha, g3, a3, 3, 0.0, d3, s, cond, necessary)
    else:
        cond["3"] = False

    g1 = pi_g * b - a
    a1 = pi_alpha * b / (s * s)
    cond["1"] = bool(g1 + zs * a1 <= gmax + tol and g1 - zs * a1 >= gmin - tol)
    if not cond["1"]:
        raise PricingError("no price region matches; prices inconsistent with the capacity")
    return _response(der, pi_g, pi_alpha, g1, a1, 1, 0.0, 0.0, s, cond, necessary)


def _response(der, pi_g, pi_alpha, g, alpha, case, dp, dm, s, cond, necessary) -> ProducerResponse:
    return ProducerResponse(float(g), float(alpha), case, float(max(dp, 0.0)), float(max(dm, 0.0)),
                            profit(der, pi_g, pi_alpha, g, alpha, s), dict(cond), dict(necessary))


def deterministic_response(pi_g: float, der: DER) -> tuple[float, int]:
    """Best response without uncertainty: ``clip(pi_g b - a)``; case 1/2/3."""
    g = pi_g * der.b - der.a
    if g >= der.gP_max:
        return float(der.gP_max), 2
    if g <= der.gP_min:
        return float(der.gP_min), 3
    return float(g), 1


# --------------------------------------------------------------------------
# Equilibrium
# --------------------------------------------------------------------------

@dataclass
class EquilibriumReport:
    """DSO dispatch against producer decisions at the broadcast prices.

    ``g_der, alpha_der`` are true best responses. ``alpha_stat`` solves the
    producer's participation stationarity with the DSO's output-limit
    multipliers held fixed; its deviation from the dispatch is the
    voltage-induced distortion ``(b/s) nu`` identically at exact duals.
    """

    scenario: str
    nodes: list
    g_dso: np.ndarray
    g_der: np.ndarray
    alpha_dso: np.ndarray
    alpha_der: np.ndarray
    alpha_stat: np.ndarray
    cases: list
    dso_cases: list
    predicted: np.ndarray            # (b/s) * nu
    distorted: bool

    @property
    def g_dev(self) -> np.ndarray:
        return self.g_der - self.g_dso

    @property
    def alpha_dev(self) -> np.ndarray:
        return self.alpha_der - self.alpha_dso

    @property
    def alpha_stat_dev(self) -> np.ndarray:
        return self.alpha_stat - self.alpha_dso

    @property
    def max_g_dev(self) -> float:
        return float(np.max(np.abs(self.g_dev), initial=0.0))

    @property
    def max_alpha_dev(self) -> float:
        return float(np.max(np.abs(self.alpha_dev), initial=0.0))

    @property
    def distortion_residual(self) -> float:
        return float(np.max(np.abs(self.alpha_stat_dev - self.predicted), initial=0.0))

    @property
    def pattern_match(self) -> list[bool]:
        return [a == b for a, b in zip(self.cases, self.dso_cases)]

    @property
    def true_distortion_residual(self) -> float:
        """Distortion identity on true best responses, over DERs interior in both solutions.

        With a binding limit the producer re-optimizes its own limit multiplier,
        so only the fixed-multiplier form carries the identity there.
        """
        keep = np.array([a == b == 1 for a, b in zip(self.cases, self.dso_cases)], dtype=bool)
        return float(np.max(np.abs(self.alpha_dev - self.predicted)[keep], initial=0.0))

    def ok(self, tol: float = IDENTITY_TOL, nu_tol: float = NU_TOL) -> bool:
        if self.distorted:
            return self.distortion_residual <= nu_tol and self.true_distortion_residual <= nu_tol
        return self.max_g_dev <= tol and self.max_alpha_dev <= tol

    def rows(self) -> list[dict]:
        return [{"node": i, "case": c, "dso_case": dc, "g_dso": float(self.g_dso[k]),
                 "g_der": float(self.g_der[k]), "alpha_dso": float(self.alpha_dso[k]),
                 "alpha_der": float(self.alpha_der[k]), "alpha_stat": float(self.alpha_stat[k]),
                 "predicted": float(self.predicted[k])}
                for k, (i, c, dc) in enumerate(zip(self.nodes, self.cases, self.dso_cases))]

    def as_dict(self) -> dict:
        return {"scenario": self.scenario, "max_g_dev": self.max_g_dev, "max_alpha_dev": self.max_alpha_dev,
                "distorted": self.distorted, "distortion_residual": self.distortion_residual,
                "true_distortion_residual": self.true_distortion_residual}


def _case_id(upper: bool, lower: bool) -> int:
    return 4 if upper and lower else 2 if upper else 3 if lower else 1


def equilibrium_check(result: OpfResult, active_tol: float = 1e-6) -> EquilibriumReport:
    """Broadcast ``(lambda_P, gamma)`` and compare producer decisions with the dispatch.

    The substation resource has no output limits. Under LVOLT-CC the energy
    price includes the loss-factor credit ``xi``. Under voltage (or flow)
    chance constraints the participation deviation is compared against
    ``(b/s) nu``.
    """
    net = result.network
    _require(result, [("lambda_P", i) for i in net.nodes])
    lam = result.lambda_P
    scen = result.scenario
    if scen is ScenarioKind.LVOLT_CC and result.loss_factors is not None:
        # with loss-aware balances a unit of output also offsets fictitious demand
        lf = result.loss_factors
        lam = lam + lf.lam_pp.T @ result.lambda_P + lf.lam_qp.T @ result.lambda_Q
    nodes = [d.node for d in net.ders]
    m = len(nodes)
    g_dso = np.array([result.gP[i] for i in nodes])
    g_der = np.zeros(m)
    a_dso = np.zeros(m)
    a_der = np.zeros(m)
    a_stat = np.zeros(m)
    pred = np.zeros(m)
    cases, dso_cases = [], []
    s = result.s
    dp, dm = result.dual_vec("delta_plus"), result.dual_vec("delta_minus")
    distorted = scen.voltage_cc
    if distorted:
        _require(result, [("nu", i) for i in range(1, net.n + 1)])
    nu = result.nu() if distorted else np.zeros(net.n + 1)
    if result.flow_cc and scen.stochastic:
        nu = nu + result.nu(flow=True)
        distorted = True
    k = result.coupling_scale / s if s > 0 else 0.0
    for q, d in enumerate(nodes):
        der = net.der_at(d)
        dso_cases.append(_case_id(dp[d] > active_tol, dm[d] > active_tol))
        if scen.stochastic and s > 0:
            z = result.uncertainty.z_g
            a_dso[q] = result.alpha[d]
            r = best_response_z(lam[d], result.gamma, der, s, z)
            g_der[q], a_der[q] = r.g, r.alpha
            cases.append(r.case)
            a_stat[q] = der.b * (result.gamma - z * s * (dp[d] + dm[d])) / (s * s)
            pred[q] = der.b / s * k * nu[d] if d != 0 else 0.0
        else:
            g_der[q], c = deterministic_response(lam[d], der)
            if scen.stochastic:
                a_dso[q] = a_der[q] = a_stat[q] = result.alpha[d]
            cases.append(c)
    return EquilibriumReport(scen.value, nodes, g_dso, g_der, a_dso, a_der, a_stat, cases, dso_cases,
                             pred, distorted)


def production_from_prices(network: RadialNetwork, lambda_P: np.ndarray, lambda_Q: np.ndarray,
                           delta_plus: np.ndarray, delta_minus: np.ndarray, loss_factors=None) -> np.ndarray:
    """``g_i = b_i (lambda_i - d+_i + d-_i + xi_i) - a_i`` per node (zero where no DER).

    ``xi_i = sum_j lam_pp[j, i] lambda_P_j + sum_j lam_qp[j, i] lambda_Q_j``;
    without loss factors ``xi = 0``.
    """
    n = network.n
    xi = np.zeros(n + 1)
    if loss_factors is not None:
        xi = loss_factors.lam_pp.T @ lambda_P + loss_factors.lam_qp.T @ lambda_Q
    out = np.zeros(n + 1)
    for d in network.ders:
        i = d.node
        out[i] = d.b * (lambda_P[i] - delta_plus[i] + delta_minus[i] + xi[i]) - d.a
    return out


def production_from_result(result: OpfResult) -> np.ndarray:
    if result.scenario is ScenarioKind.LVOLT_CC and result.loss_factors is None:
        raise PricingError("LVOLT-CC reconstruction needs the loss factors")
    return production_from_prices(result.network, result.lambda_P, result.lambda_Q,
                                  result.dual_vec("delta_plus"), result.dual_vec("delta_minus"),
                                  result.loss_factors)
