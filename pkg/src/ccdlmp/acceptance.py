"""Acceptance criteria evaluated on the bundled fixtures and random feeders.

Every criterion returns a :class:`CriterionResult` with one printable line.
Solves are cached in a :class:`Suite` so criteria share them.
"""
from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np

from .cases import FIXTURES, load_fixture, random_networks
from .conic import duality_gap, kkt_residuals
from .grid import DER, RadialNetwork, UncertaintySpec, fixture_path, gaussian_quantile, path_matrix
from .losses import compute_loss_factors, current_sensitivities, solve_linearization_point
from .montecarlo import monte_carlo_validate
from .opf import OpfResult, solve_scenario
from .pricing import (IDENTITY_TOL, NU_TOL, best_response_z, decompose_dlmp, decompose_gamma,
                      equilibrium_check)

SCENARIOS = ("det", "gen-cc", "volt-cc", "lvolt-cc")
KKT_TOL = 1e-6
GAP_TOL = 1e-8
EQUILIBRIUM_TOL = 1e-5
MC_SAMPLES = 100_000
MC_SEED = 2024
MOMENT_TOL = 5e-3
FD_TOL = 0.05
FD_FLOOR = 1e-3
OBJECTIVE_TOL = 1e-6
UNIFORM_TOL = 1e-6
COLLAPSE_TOL = 1e-6
GAMMA_ZERO_TOL = 1e-8
RUNTIME_LIMIT = 10.0

# Reference values for the 15-node case study: (scenario, quantity, node or None, value)
REFERENCE = (
    ("det", "lambda_P", 6, 10.411),
    ("gen-cc", "lambda_P", 6, 11.99),
    ("gen-cc", "gamma", None, 0.273),
    ("volt-cc", "gamma", None, 31.511),
    ("volt-cc", "lambda_P", 7, 3.884),
    ("lvolt-cc", "gamma", None, 30.254),
    ("lvolt-cc", "lambda_P", 8, 4.169),
    ("lvolt-cc", "lambda_P", 9, 4.169),
    ("lvolt-cc", "lambda_P", 10, 4.169),
    ("lvolt-cc", "lambda_P", 11, 4.169),
)


@dataclass
class CriterionResult:
    number: str
    title: str
    status: str                  # PASS, FAIL or REPLACED
    detail: str
    metrics: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.status != "FAIL"

    def line(self) -> str:
        return f"[{self.status}] criterion {self.number}: {self.title} | {self.detail}"


def _status(ok: bool) -> str:
    return "PASS" if ok else "FAIL"


@dataclass
class Solve:
    source: str
    scenario: str
    flow_cc: bool
    result: OpfResult
    seconds: float


class Suite:
    """Fixtures, random feeders and a cache of scenario solves."""

    def __init__(self, random_count: int = 25, seed: int = 7, backend: str | None = None):
        self.backend = backend
        self.random_count = random_count
        self.seed = seed
        self.networks: dict[str, tuple[RadialNetwork, UncertaintySpec]] = {
            name: load_fixture(name) for name in FIXTURES}
        self.fixture_meta = {name: json.loads(fixture_path(name + ".json").read_text()).get("meta", {})
                             for name in FIXTURES}
        self._random: list[str] | None = None
        self._lf: dict = {}
        self._solves: dict = {}

    @property
    def random_names(self) -> list[str]:
        if self._random is None:
            self._random = []
            for k, (net, unc) in enumerate(random_networks(self.random_count, self.seed, backend=self.backend)):
                name = f"random{k}"
                self.networks[name] = (net, unc)
                self._random.append(name)
        return self._random

    def loss_factors(self, name: str, mode: str = "paper"):
        key = (name, mode)
        if key not in self._lf:
            net, unc = self.networks[name]
            self._lf[key] = compute_loss_factors(net, unc, mode=mode, backend=self.backend)
        return self._lf[key]

    def solve(self, name: str, scenario: str, flow_cc: bool = False) -> Solve:
        key = (name, scenario, flow_cc)
        if key not in self._solves:
            net, unc = self.networks[name]
            t0 = time.perf_counter()
            lf = self.loss_factors(name) if scenario == "lvolt-cc" else None
            res = solve_scenario(net, unc, scenario, loss_factors=lf, flow_cc=flow_cc, backend=self.backend)
            self._solves[key] = Solve(name, scenario, flow_cc, res, time.perf_counter() - t0)
        return self._solves[key]

    def solves(self, scenarios=SCENARIOS, fixtures: bool = True, random: bool = True):
        """Fixture solves with and without flow chance constraints; random feeders without."""
        if fixtures:
            for name in FIXTURES:
                for sc in scenarios:
                    for fcc in (False, True):
                        yield self.solve(name, sc, fcc)
        if random:
            for name in self.random_names:
                for sc in scenarios:
                    yield self.solve(name, sc, False)


def _tag(s: Solve) -> str:
    return f"{s.source}/{s.scenario}{'+flow' if s.flow_cc else ''}"


# --------------------------------------------------------------------------
# Criteria
# --------------------------------------------------------------------------

def criterion_1(suite: Suite) -> CriterionResult:
    """Reproduction of the case-study tables; replaced when the fixture is not validated."""
    name = "feeder15"
    rows = []
    times = {}
    ok = True
    for sc in SCENARIOS:
        s = suite.solve(name, sc)
        times[sc] = s.seconds
        ok &= s.result.optimal and s.seconds < RUNTIME_LIMIT
    for sc, qty, node, ref in REFERENCE:
        res = suite.solve(name, sc).result
        val = res.gamma if qty == "gamma" else float(res.lambda_P[node])
        hit = abs(val - ref) <= max(0.02, 0.01 * abs(ref))
        ok &= hit
        label = qty if node is None else f"{qty}[{node}]"
        rows.append({"scenario": sc, "quantity": label, "reference": ref, "value": val, "match": hit})
    validated = bool(suite.fixture_meta[name].get("validated", False))
    matches = sum(r["match"] for r in rows)
    timing = ", ".join(f"{k} {v:.2f}s" for k, v in times.items())
    if not validated:
        return CriterionResult("1", "table reproduction", "REPLACED",
                               f"fixture not validated against the reference feeder; replaced by 2-8 "
                               f"({matches}/{len(rows)} reference values within tolerance; {timing})",
                               {"rows": rows, "times": times})
    return CriterionResult("1", "table reproduction", _status(ok),
                           f"{matches}/{len(rows)} reference values within tolerance; {timing}",
                           {"rows": rows, "times": times})


def criterion_2(suite: Suite) -> CriterionResult:
    worst_dlmp, worst_gamma = 0.0, 0.0
    where_d = where_g = ""
    count = 0
    failures = []
    for s in suite.solves():
        if not s.result.optimal:
            continue
        count += 1
        d = decompose_dlmp(s.result)
        r = max(d.recursive_residual, d.voltage_residual)
        if r > worst_dlmp:
            worst_dlmp, where_d = r, _tag(s)
        g = decompose_gamma(s.result)
        if g is not None:
            rg = max(g.residual, abs(g.root_residual))
            if rg > worst_gamma:
                worst_gamma, where_g = rg, _tag(s)
        if r > IDENTITY_TOL or (g is not None and max(g.residual, abs(g.root_residual)) > IDENTITY_TOL):
            failures.append(_tag(s))
    ok = not failures and count > 0
    return CriterionResult("2", "decomposition identities", _status(ok),
                           f"{count} solves; worst price residual {worst_dlmp:.2e} ({where_d}); "
                           f"worst gamma residual {worst_gamma:.2e} ({where_g}); tol {IDENTITY_TOL:g}",
                           {"failures": failures, "worst_dlmp": worst_dlmp, "worst_gamma": worst_gamma})


def criterion_3(suite: Suite) -> CriterionResult:
    worst_st = worst_cp = worst_gap = 0.0
    failures = []
    count = 0
    for s in suite.solves():
        if not s.result.optimal:
            continue
        count += 1
        k = kkt_residuals(s.result.program, s.result.solution)
        gap = duality_gap(s.result.program, s.result.solution)
        worst_st = max(worst_st, k.max_stationarity)
        worst_cp = max(worst_cp, k.complementarity)
        worst_gap = max(worst_gap, gap)
        if k.max_stationarity > KKT_TOL or k.complementarity > KKT_TOL or gap > GAP_TOL:
            failures.append(_tag(s))
    ok = not failures and count > 0
    return CriterionResult("3", "KKT and duality", _status(ok),
                           f"{count} solves; stationarity {worst_st:.2e}, complementarity {worst_cp:.2e} "
                           f"(tol {KKT_TOL:g}); relative gap {worst_gap:.2e} (tol {GAP_TOL:g})",
                           {"failures": failures})


def criterion_4(suite: Suite) -> CriterionResult:
    worst_g = worst_a = 0.0
    failures = []
    count = 0
    for s in suite.solves(scenarios=("gen-cc",)):
        if not s.result.optimal or s.flow_cc:
            continue
        count += 1
        e = equilibrium_check(s.result)
        worst_g = max(worst_g, e.max_g_dev)
        worst_a = max(worst_a, e.max_alpha_dev)
        if max(e.max_g_dev, e.max_alpha_dev) > EQUILIBRIUM_TOL:
            failures.append(_tag(s))
    ok = not failures and count > 0
    return CriterionResult("4", "competitive equilibrium (GEN-CC)", _status(ok),
                           f"{count} solves; max |g dev| {worst_g:.2e}, max |alpha dev| {worst_a:.2e} "
                           f"(tol {EQUILIBRIUM_TOL:g})", {"failures": failures})


def _voltage_binding(res: OpfResult, tol: float = 1e-6) -> bool:
    mu = res.dual_vec("mu_plus") + res.dual_vec("mu_minus")
    return bool(np.any(mu > tol))


def criterion_5(suite: Suite) -> CriterionResult:
    worst_dist = worst_nu = 0.0
    failures = []
    count = 0
    for s in suite.solves(scenarios=("volt-cc", "lvolt-cc")):
        if not s.result.optimal or not _voltage_binding(s.result):
            continue
        count += 1
        e = equilibrium_check(s.result)
        g = decompose_gamma(s.result)
        dist = max(e.distortion_residual, e.true_distortion_residual)
        nu = max(g.nu_residual, g.nu_f_residual)
        worst_dist = max(worst_dist, dist)
        worst_nu = max(worst_nu, nu)
        if dist > NU_TOL or nu > NU_TOL or g.degenerate:
            failures.append(_tag(s))
    ok = not failures and count > 0
    return CriterionResult("5", "participation distortion", _status(ok),
                           f"{count} solves with binding voltage limits; max |dalpha - (b/s) nu| "
                           f"{worst_dist:.2e}; dual vs formula nu {worst_nu:.2e} (tol {NU_TOL:g})",
                           {"failures": failures})


def criterion_6(suite: Suite, samples: int = MC_SAMPLES, seed: int = MC_SEED) -> CriterionResult:
    failures = []
    worst_rate = {}
    worst_cost = worst_std = 0.0
    count = 0
    for name in FIXTURES:
        for sc in ("gen-cc", "volt-cc"):
            s = suite.solve(name, sc, True)
            if not s.result.optimal:
                failures.append(_tag(s) + " not optimal")
                continue
            count += 1
            mc = monte_carlo_validate(s.result, samples, seed)
            for fam, st in mc.families.items():
                excess = st.gating_rate - st.threshold
                if fam not in worst_rate or excess > worst_rate[fam][0]:
                    worst_rate[fam] = (excess, st.gating_rate, st.threshold)
            worst_cost = max(worst_cost, mc.cost_rel_error)
            worst_std = max(worst_std, mc.u_std_rel_error)
            if not mc.passed(MOMENT_TOL, all_families=True):
                failures.append(_tag(s))
    ok = not failures and count > 0
    rates = "; ".join(f"{k} {v[1]:.4f} <= {v[2]:.4f}" for k, v in worst_rate.items())
    return CriterionResult("6", "chance-constraint validity", _status(ok),
                           f"{count} runs x {samples} draws (seed {seed}); worst rates: {rates}; "
                           f"cost {worst_cost:.2e}, u std {worst_std:.2e} (tol {MOMENT_TOL:g})",
                           {"failures": failures})


def random_producer(rng: np.random.Generator) -> tuple[DER, float, float, float, float]:
    """A random producer with prices spread over all four cases."""
    c2 = float(rng.uniform(1.0, 50.0))
    c1 = float(rng.uniform(0.0, 30.0))
    gmin = float(rng.uniform(0.0, 0.3))
    gmax = gmin + float(rng.uniform(0.05, 0.6))
    der = DER.from_standard(1, c2=c2, c1=c1, gP_min=gmin, gP_max=gmax, gQ_min=-1.0, gQ_max=1.0)
    s = float(rng.uniform(0.01, 0.2))
    z = gaussian_quantile(float(rng.uniform(0.01, 0.2)))
    # energy price around the marginal cost of the capacity range
    pi_g = float(rng.uniform(c1 + 2 * c2 * (gmin - 0.2), c1 + 2 * c2 * (gmax + 0.2)))
    # reserve price up to twice the price that saturates the range
    pi_a = float(rng.uniform(0.0, 2.0 * c2 * s * (gmax - gmin) / z))
    return der, s, z, pi_g, pi_a


def check_best_responses(count: int = 200, seed: int = 11) -> dict:
    from .oracles import lattice_best_response

    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    worst = 0.0
    worst_profit = 0.0
    cases = {1: 0, 2: 0, 3: 0, 4: 0}
    failures = []
    for k in range(count):
        der, s, z, pi_g, pi_a = random_producer(rng)
        br = best_response_z(pi_g, pi_a, der, s, z)
        cases[br.case] += 1
        lat = lattice_best_response(pi_g, pi_a, der, s, z)
        zs = z * s
        feasible = (br.g + zs * br.alpha <= der.gP_max + 1e-12 and br.g - zs * br.alpha >= der.gP_min - 1e-12)
        # closed-form profit must dominate every lattice point, and the points must coincide
        p_cf = br.profit - der.c0 + der.a * der.a / (2 * der.b)
        dp = lat.profit - p_cf
        # distance in output units: energy and reserve held on each side
        dist = max(abs(br.g - lat.g), zs * abs(br.alpha - lat.alpha))
        worst = max(worst, dist)
        worst_profit = max(worst_profit, dp)
        if not feasible or dp > 1e-9 * max(1.0, abs(p_cf)) or dist > 1e-6:
            failures.append(k)
    return {"count": count, "worst_distance": worst, "worst_profit_gain": worst_profit,
            "cases": cases, "failures": failures}


def check_loss_sensitivities(suite: Suite, names=FIXTURES) -> dict:
    from .oracles import loss_sensitivity_fd

    out = {}
    for name in names:
        net, unc = suite.networks[name]
        pt = solve_linearization_point(net, unc, suite.backend)
        LP, LQ = current_sensitivities(pt, path_matrix(net), "corrected")
        FP, FQ = loss_sensitivity_fd(net, net.dP - pt.gP, net.dQ - pt.gQ)
        row = {}
        for label, L, F in (("P", LP, FP), ("Q", LQ, FQ)):
            mask = np.abs(L) > FD_FLOOR
            rel = np.abs(L - F)[mask] / np.abs(L)[mask]
            row[label] = (int(mask.sum()), float(rel.max(initial=0.0)))
        out[name] = row
    return out


def check_objective_oracle(suite: Suite, name: str = "four_node") -> dict:
    from .oracles import eqv_cc_objective

    net, unc = suite.networks[name]
    res = suite.solve(name, "volt-cc", True).result
    out = {"ours": res.solution.objective, "oracles": {}}
    for solver in ("CVXOPT", "SCS"):
        opts = {"eps": 1e-10, "max_iters": 200_000} if solver == "SCS" else None
        val, status = eqv_cc_objective(net, unc, solver=solver, solver_options=opts)
        out["oracles"][solver] = (val, status, abs(val - res.solution.objective))
    return out


def criterion_7a(suite: Suite) -> CriterionResult:
    r = check_best_responses()
    ok = not r["failures"]
    return CriterionResult("7a", "best response vs lattice search", _status(ok),
                           f"{r['count']} instances (cases {r['cases']}); max distance {r['worst_distance']:.2e}; "
                           f"max lattice profit gain {r['worst_profit_gain']:.2e}; {len(r['failures'])} mismatches", r)


def criterion_7b(suite: Suite) -> CriterionResult:
    r = check_loss_sensitivities(suite)
    ok = all(v["P"][1] <= FD_TOL for v in r.values())
    parts = [f"{k} P {v['P'][1]:.3f} (Q {v['Q'][1]:.3f})" for k, v in r.items()]
    return CriterionResult("7b", "corrected loss sensitivities vs finite differences", _status(ok),
                           "max relative error where |L| > 1e-3: " + "; ".join(parts) + f" (tol {FD_TOL:g} on L^P)",
                           r)


def criterion_7c(suite: Suite) -> CriterionResult:
    r = check_objective_oracle(suite)
    ok = all(st == "optimal" and err <= OBJECTIVE_TOL for _, st, err in r["oracles"].values())
    parts = [f"{k} {v[0]:.9f} (diff {v[2]:.1e})" for k, v in r["oracles"].items()]
    return CriterionResult("7c", "4-node flow-and-voltage CC objective vs cvxpy", _status(ok),
                           f"ours {r['ours']:.9f}; " + "; ".join(parts) + f" (tol {OBJECTIVE_TOL:g})", r)


def criterion_8(suite: Suite) -> CriterionResult:
    # uniform prices without congestion; LVOLT-CC is excluded because loss factors differentiate prices
    spread = 0.0
    for sc in ("det", "gen-cc", "volt-cc"):
        for fcc in (False, True):
            res = suite.solve("feeder15_uncongested", sc, fcc).result
            spread = max(spread, float(np.max(np.abs(res.lambda_P - res.lambda_P[0]))))
    worst_primal = worst_dual = worst_gamma = worst_reactive = 0.0
    for name in FIXTURES:
        net, unc = suite.networks[name]
        det = suite.solve(name, "det").result
        zero = solve_scenario(net, UncertaintySpec.zero(net.n), "gen-cc", backend=suite.backend)
        # reactive output has no cost, so gQ, fQ and u may be non-unique; the
        # objective and the active dispatch are unique
        for key in ("gP", "fP"):
            worst_primal = max(worst_primal, float(np.max(np.abs(getattr(det, key) - getattr(zero, key)))))
        worst_primal = max(worst_primal, abs(det.solution.objective - zero.solution.objective))
        for key in ("gQ", "fQ", "u"):
            worst_reactive = max(worst_reactive, float(np.max(np.abs(getattr(det, key) - getattr(zero, key)))))
        for key in ("lambda_P", "lambda_Q"):
            worst_dual = max(worst_dual, float(np.max(np.abs(getattr(det, key) - getattr(zero, key)))))
        worst_gamma = max(worst_gamma, abs(zero.gamma))
    ok = (spread <= UNIFORM_TOL and worst_primal <= COLLAPSE_TOL and worst_dual <= COLLAPSE_TOL
          and worst_gamma <= GAMMA_ZERO_TOL)
    return CriterionResult("8", "structural limits", _status(ok),
                           f"uncongested price spread {spread:.2e} (tol {UNIFORM_TOL:g}); zero covariance vs "
                           f"deterministic: active dispatch and cost {worst_primal:.2e}, prices {worst_dual:.2e} "
                           f"(tol {COLLAPSE_TOL:g}), |gamma| {worst_gamma:.2e} (tol {GAMMA_ZERO_TOL:g}); "
                           f"reactive-side spread {worst_reactive:.2e} (not unique)")


CRITERIA = {
    "1": criterion_1, "2": criterion_2, "3": criterion_3, "4": criterion_4, "5": criterion_5,
    "6": criterion_6, "7a": criterion_7a, "7b": criterion_7b, "7c": criterion_7c, "8": criterion_8,
}


def run_all(suite: Suite | None = None, printer=print) -> list[CriterionResult]:
    suite = suite or Suite()
    out = []
    for key, fn in CRITERIA.items():
        try:
            res = fn(suite)
        except Exception as exc:          # a crashing criterion is a failing one
            res = CriterionResult(key, fn.__name__, "FAIL", f"{type(exc).__name__}: {exc}")
        out.append(res)
        if printer is not None:
            printer(res.line())
    return out
