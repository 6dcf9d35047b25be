"""KKT residuals and duality gap evaluated on the original (unlifted) program."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .program import ConicProgram, Solution


class DiagnosticsError(ValueError):
    pass


@dataclass
class KKTReport:
    stationarity: dict = field(default_factory=dict)     # variable group -> max |residual|
    complementarity: float = 0.0
    primal_infeasibility: float = 0.0
    dual_infeasibility: float = 0.0                     # inequality duals < 0, cone duals outside SOC
    worst_variable: object = None

    @property
    def max_stationarity(self) -> float:
        return max(self.stationarity.values(), default=0.0)

    def ok(self, tol: float = 1e-6) -> bool:
        return max(self.max_stationarity, self.complementarity,
                   self.primal_infeasibility, self.dual_infeasibility) <= tol

    def as_dict(self) -> dict:
        return {
            "stationarity": {str(k): v for k, v in self.stationarity.items()},
            "max_stationarity": self.max_stationarity,
            "complementarity": self.complementarity,
            "primal_infeasibility": self.primal_infeasibility,
            "dual_infeasibility": self.dual_infeasibility,
        }


def _check(program: ConicProgram, solution: Solution) -> None:
    if not solution.optimal:
        raise DiagnosticsError(f"solution status is {solution.status!r}, not optimal")
    missing = program.labels - set(solution.duals)
    if missing or set(solution.primal) != set(program.variables):
        raise DiagnosticsError("solution does not belong to this program")


def _group(name) -> object:
    return name[0] if isinstance(name, tuple) and name else name


def kkt_residuals(program: ConicProgram, solution: Solution, primal: dict | None = None) -> KKTReport:
    """Stationarity, complementarity and feasibility residuals.

    ``primal`` optionally overrides the solution's primal values (used to
    probe sensitivity to perturbations). Stationarity is grouped by the
    first element of each variable name.
    """
    _check(program, solution)
    values = dict(solution.primal)
    if primal:
        values.update(primal)
    x = np.array([values[v] for v in program.variables])
    idx = program.index
    grad = np.zeros(program.n_vars)
    for k, v in program.objective.items():
        grad[idx(k)] += v
    for q in program.quadratics:
        for r, m in q.rows:
            val = program._eval(r, m, x)
            for k, v in r.items():
                grad[idx(k)] += 2.0 * q.weight * val * v

    primal_inf = 0.0
    comp = 0.0
    dual_inf = 0.0
    for e in program.equalities:
        lam = solution.duals[e.label]
        # dual is dp*/db, Lagrangian term -lam (a.x - b)
        for k, v in e.coeffs.items():
            grad[idx(k)] -= lam * v
        primal_inf = max(primal_inf, abs(program._eval(e.coeffs, -e.rhs, x)))
    for e in program.inequalities:
        mu = solution.duals[e.label]
        for k, v in e.coeffs.items():
            grad[idx(k)] += mu * v
        g = program._eval(e.coeffs, -e.rhs, x)
        primal_inf = max(primal_inf, g)
        comp = max(comp, abs(mu * g))
        dual_inf = max(dual_inf, -mu)
    for cone in program.cones:
        z = solution.duals[cone.label]
        tc, td = cone.t
        for k, v in tc.items():
            grad[idx(k)] -= z[0] * v
        vals = np.array([program._eval(r, m, x) for r, m in cone.rows])
        for zj, (r, _) in zip(z[1:], cone.rows):
            for k, v in r.items():
                grad[idx(k)] -= zj * v
        t = program._eval(tc, td, x)
        primal_inf = max(primal_inf, float(np.linalg.norm(vals)) - t)
        comp = max(comp, abs(z[0] * t + z[1:] @ vals))
        dual_inf = max(dual_inf, float(np.linalg.norm(z[1:])) - z[0])

    report = KKTReport(complementarity=comp, primal_infeasibility=primal_inf,
                       dual_infeasibility=dual_inf)
    worst = -1.0
    for k, v in enumerate(program.variables):
        g = _group(v)
        res = abs(grad[k])
        report.stationarity[g] = max(report.stationarity.get(g, 0.0), res)
        if res > worst:
            worst = res
            report.worst_variable = v
    return report


def duality_gap(program: ConicProgram, solution: Solution) -> float:
    """``|primal - dual objective| / (1 + |primal|)`` from the solver certificate."""
    _check(program, solution)
    p = solution.stats["primal_objective"]
    d = solution.stats["dual_objective"]
    return abs(p - d) / (1.0 + abs(p))
