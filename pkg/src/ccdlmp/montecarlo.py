"""Monte Carlo validation of the chance constraints of a solved scenario.

Forecast errors ``omega ~ N(0, Sigma)`` are added to the non-root active
demand; every DER follows ``g + alpha * Omega`` with ``Omega = e^T omega``
(the substation takes the whole error when there are no participation
factors). Flows and squared voltages respond linearly through the path
matrix and the resistance matrix of the scenario.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .opf import OpfResult, ScenarioKind

GENERATOR = "Philox"
MIN_SAMPLES = 10_000
CHUNK = 20_000
VIOLATION_TOL = 1e-7
MOMENT_TOL = 5e-3


class MonteCarloError(ValueError):
    pass


@dataclass
class FamilyStats:
    """Violation counts of one constraint family (one entry per node or edge)."""

    name: str
    elements: list
    eps: float
    upper: np.ndarray            # violation counts of the upper side
    lower: np.ndarray
    joint: np.ndarray
    samples: int
    chance_constrained: bool
    joint_rule: bool = True      # bound the either-side rate; otherwise each side separately

    @property
    def rate_upper(self) -> np.ndarray:
        return self.upper / self.samples

    @property
    def rate_lower(self) -> np.ndarray:
        return self.lower / self.samples

    @property
    def rate_joint(self) -> np.ndarray:
        return self.joint / self.samples

    @property
    def half_width(self) -> float:
        """Binomial 3-sigma half-width at the target rate ``eps``."""
        return binomial_half_width(self.eps, self.samples)

    @property
    def threshold(self) -> float:
        return self.eps + self.half_width

    @property
    def max_side_rate(self) -> float:
        return float(max(np.max(self.rate_upper, initial=0.0), np.max(self.rate_lower, initial=0.0)))

    @property
    def max_joint_rate(self) -> float:
        return float(np.max(self.rate_joint, initial=0.0))

    @property
    def passed(self) -> bool:
        """Violation rate at most ``eps + 3 sigma`` for every element.

        With ``joint_rule`` a draw outside either limit counts; otherwise each
        side is a separate chance constraint and is bounded on its own.
        """
        return self.gating_rate <= self.threshold

    @property
    def gating_rate(self) -> float:
        return self.max_joint_rate if self.joint_rule else self.max_side_rate

    @property
    def sides_passed(self) -> bool:
        return self.max_side_rate <= self.threshold

    def rows(self) -> list[dict]:
        return [{"family": self.name, "element": e, "eps": self.eps,
                 "rate_upper": float(self.rate_upper[k]), "rate_lower": float(self.rate_lower[k]),
                 "rate_joint": float(self.rate_joint[k]), "threshold": self.threshold}
                for k, e in enumerate(self.elements)]


@dataclass
class MonteCarloReport:
    samples: int
    seed: int
    generator: str
    chunk: int
    families: dict
    cost_mean: float
    cost_expected: float
    u_std_sample: np.ndarray          # per non-root node
    u_std_expected: np.ndarray
    negative_alpha: list = field(default_factory=list)

    @property
    def cost_rel_error(self) -> float:
        return abs(self.cost_mean - self.cost_expected) / max(abs(self.cost_expected), 1e-12)

    @property
    def u_std_rel_error(self) -> float:
        out = 0.0
        for a, b in zip(self.u_std_sample, self.u_std_expected):
            if b > 1e-12:
                out = max(out, abs(a - b) / b)
            else:
                out = max(out, abs(a))
        return float(out)

    @property
    def rates_passed(self) -> bool:
        """Rate bound on the families the scenario chance-constrains."""
        return all(f.passed for f in self.families.values() if f.chance_constrained)

    @property
    def all_rates_passed(self) -> bool:
        """Rate bound on every family, including limits the scenario enforces only on the forecast."""
        return all(f.passed for f in self.families.values())

    def passed(self, moment_tol: float = MOMENT_TOL, all_families: bool = False) -> bool:
        rates = self.all_rates_passed if all_families else self.rates_passed
        return rates and self.cost_rel_error <= moment_tol and self.u_std_rel_error <= moment_tol

    def rows(self) -> list[dict]:
        return [row for f in self.families.values() for row in f.rows()]

    def as_dict(self) -> dict:
        return {
            "samples": self.samples, "seed": self.seed, "generator": self.generator, "chunk": self.chunk,
            "families": {k: {"eps": f.eps, "max_side_rate": f.max_side_rate,
                             "max_joint_rate": f.max_joint_rate, "threshold": f.threshold,
                             "joint_rule": f.joint_rule,
                             "passed": f.passed, "sides_passed": f.sides_passed,
                             "chance_constrained": f.chance_constrained}
                         for k, f in self.families.items()},
            "cost_mean": self.cost_mean, "cost_expected": self.cost_expected,
            "cost_rel_error": self.cost_rel_error, "u_std_rel_error": self.u_std_rel_error,
            "negative_alpha": self.negative_alpha, "rates_passed": self.rates_passed,
            "all_rates_passed": self.all_rates_passed, "passed": self.passed(),
        }


def binomial_half_width(p: float, samples: int) -> float:
    return 3.0 * math.sqrt(p * (1.0 - p) / samples)


def chunk_streams(seed: int, samples: int, chunk: int = CHUNK) -> list[tuple[np.random.Generator, int]]:
    """Independent counter-based substreams, one per chunk of draws."""
    sizes = [chunk] * (samples // chunk)
    if samples % chunk:
        sizes.append(samples % chunk)
    children = np.random.SeedSequence(seed).spawn(len(sizes))
    return [(np.random.Generator(np.random.Philox(c)), k) for c, k in zip(children, sizes)]


def _response(result: OpfResult):
    """Base point and linear response matrices of the realized quantities."""
    net = result.network
    n = net.n
    lossy = result.scenario is ScenarioKind.LVOLT_CC and result.matrices.loss_aware
    M = result.matrices
    A = M.A_L if lossy else M.A
    R = M.R_L if lossy else M.R
    alpha = result.alpha.copy()
    if not result.scenario.stochastic:
        alpha[:] = 0.0
        alpha[0] = 1.0
    return A, R, alpha


def monte_carlo_validate(result: OpfResult, samples: int = 100_000, seed: int = 0,
                         chunk: int = CHUNK, workers: int = 1,
                         tol: float = VIOLATION_TOL, uncertainty=None) -> MonteCarloReport:
    """Sample forecast errors and tally violations of generation, voltage and flow limits.

    ``uncertainty`` overrides the scenario's specification (needed for the
    deterministic model, which is solved without one).
    """
    if not result.optimal:
        raise MonteCarloError(f"solution status is {result.solution.status!r}, not optimal")
    if samples < MIN_SAMPLES:
        raise MonteCarloError(f"at least {MIN_SAMPLES} samples are required, got {samples}")
    unc = uncertainty if uncertainty is not None else result.uncertainty
    if unc is None:
        raise MonteCarloError("an uncertainty specification is required")
    net = result.network
    n = net.n
    A, R, alpha = _response(result)
    S_half = unc.sqrt()
    gP, gQ, fP, fQ, u = result.gP, result.gQ, result.fP, result.fQ, result.u
    ders = list(net.ders)
    limited = [d for d in ders if d.node != 0]
    a_dev = alpha[1:]
    negative = [int(i) for i in np.flatnonzero(alpha < -tol)]

    def run(stream: tuple[np.random.Generator, int]) -> dict:
        rng, k = stream
        omega = rng.standard_normal((k, n)) @ S_half
        total = omega.sum(axis=1)
        # net demand change seen by the network: omega - alpha * Omega (non-root)
        dev = omega - total[:, None] * a_dev[None, :]
        f_real = fP[1:] + dev @ A.T
        u_real = u[1:] - 2.0 * dev @ R.T
        out = {}
        g_up = np.zeros(len(limited), dtype=np.int64)
        g_dn = np.zeros(len(limited), dtype=np.int64)
        g_jt = np.zeros(len(limited), dtype=np.int64)
        for q, d in enumerate(limited):
            g = gP[d.node] + alpha[d.node] * total
            up = g > d.gP_max + tol
            dn = g < d.gP_min - tol
            g_up[q], g_dn[q], g_jt[q] = up.sum(), dn.sum(), (up | dn).sum()
        out["generation"] = (g_up, g_dn, g_jt)
        up = u_real > net.u_max[1:] + tol
        dn = u_real < net.u_min[1:] - tol
        out["voltage"] = (up.sum(0), dn.sum(0), (up | dn).sum(0))
        # apparent power: the reactive flow is not uncertain
        over = np.hypot(f_real, fQ[1:]) > net.s_max[1:] + tol
        out["flow"] = (over.sum(0), np.zeros(n, dtype=np.int64), over.sum(0))
        cost = np.zeros(k)
        for d in ders:
            cost += d.cost(gP[d.node] + alpha[d.node] * total)
        out["cost_sum"] = float(cost.sum())
        du = u_real - u[1:]
        out["u_sum"] = du.sum(0)
        out["u_sq"] = (du ** 2).sum(0)
        return out

    streams = chunk_streams(seed, samples, chunk)
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(run, streams))
    else:
        parts = [run(s) for s in streams]

    def total_of(key: str) -> tuple:
        return tuple(sum(p[key][j] for p in parts) for j in range(3))

    scen = result.scenario
    families = {
        # the two output limits are separate chance constraints in the model
        "generation": FamilyStats("generation", [d.node for d in limited], unc.eps_g,
                                  *total_of("generation"), samples, scen.stochastic, joint_rule=False),
        "voltage": FamilyStats("voltage", list(range(1, n + 1)), unc.eps_v, *total_of("voltage"),
                               samples, scen.voltage_cc),
        "flow": FamilyStats("flow", list(range(1, n + 1)), unc.eps_f, *total_of("flow"),
                            samples, result.flow_cc and scen.stochastic),
    }
    cost_mean = sum(p["cost_sum"] for p in parts) / samples
    s = unc.s
    cost_expected = sum(d.cost(gP[d.node]) + d.c2 * alpha[d.node] ** 2 * s * s for d in ders)
    mean = sum(p["u_sum"] for p in parts) / samples
    var = sum(p["u_sq"] for p in parts) / samples - mean ** 2
    u_std = np.sqrt(np.maximum(var, 0.0) * samples / (samples - 1))
    rho = R @ a_dev
    u_std_expected = np.array([2.0 * np.linalg.norm((R[i] - rho[i]) @ S_half) for i in range(n)])
    return MonteCarloReport(samples, seed, GENERATOR, chunk, families, float(cost_mean),
                            float(cost_expected), u_std, u_std_expected, negative)
