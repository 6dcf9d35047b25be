"""Scenario runs and their report files.

A run directory holds delimiter-separated tables plus ``summary.json``.
Report contents depend only on the inputs and the seed; wall-clock timings
are kept on the :class:`ScenarioRun` and printed, not written, so repeated
runs produce byte-identical files.
"""
from __future__ import annotations

import csv
import hashlib
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .conic import duality_gap, kkt_residuals
from .grid import RadialNetwork, UncertaintySpec
from .losses import LossFactorSet, compute_loss_factors
from .montecarlo import GENERATOR, MOMENT_TOL, MonteCarloReport, monte_carlo_validate
from .opf import OpfResult, ScenarioKind, solve_scenario
from .pricing import (DLMPReport, EquilibriumReport, GammaReport, decompose_dlmp, decompose_gamma,
                      equilibrium_check)

KKT_TOL = 1e-6
GAP_TOL = 1e-8
FORMAT_VERSION = 1


class StageError(RuntimeError):
    """A pipeline stage failed; ``stage`` names it."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


@dataclass
class ScenarioRun:
    network: RadialNetwork
    uncertainty: UncertaintySpec | None
    scenario: ScenarioKind
    options: dict
    result: OpfResult
    loss_factors: LossFactorSet | None = None
    dlmp: DLMPReport | None = None
    gamma: GammaReport | None = None
    equilibrium: EquilibriumReport | None = None
    kkt: dict = field(default_factory=dict)
    montecarlo: MonteCarloReport | None = None
    timings: dict = field(default_factory=dict)

    def checks(self) -> dict[str, bool]:
        """Every enabled invariant check and whether it passed."""
        out = {
            "solve.optimal": self.result.optimal,
            "kkt.stationarity": self.kkt.get("max_stationarity", np.inf) <= KKT_TOL,
            "kkt.complementarity": self.kkt.get("complementarity", np.inf) <= KKT_TOL,
            "kkt.duality_gap": self.kkt.get("duality_gap", np.inf) <= GAP_TOL,
        }
        if self.dlmp is not None:
            out["dlmp.identities"] = self.dlmp.ok()
        if self.gamma is not None:
            out["gamma.identity"] = self.gamma.ok()
        if self.equilibrium is not None:
            out["equilibrium"] = self.equilibrium.ok()
        if self.montecarlo is not None:
            # rate bounds are asserted; moment comparisons are reported (see moments())
            out["montecarlo.rates"] = self.montecarlo.rates_passed
        return out

    def moments(self) -> dict | None:
        """Analytic-vs-sample moment comparisons, reported but not gating."""
        mc = self.montecarlo
        if mc is None:
            return None
        return {"cost_rel_error": mc.cost_rel_error, "u_std_rel_error": mc.u_std_rel_error,
                "within_tolerance": mc.cost_rel_error <= MOMENT_TOL and mc.u_std_rel_error <= MOMENT_TOL}

    @property
    def passed(self) -> bool:
        return all(self.checks().values())


def network_fingerprint(network: RadialNetwork) -> str:
    """Digest of the topology, impedances, limits and demands."""
    doc = {
        "parent": list(network.parent),
        **{k: [float(v) for v in getattr(network, k)]
           for k in ("r", "x", "s_max", "dP", "dQ", "u_min", "u_max")},
        "u0": float(network.u0),
    }
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()[:16]


def _stage(name: str, timings: dict):
    class _Timer:
        def __enter__(self):
            self.t0 = time.perf_counter()

        def __exit__(self, kind, exc, tb):
            timings[name] = time.perf_counter() - self.t0
            if exc is not None and not isinstance(exc, StageError):
                raise StageError(name, f"{type(exc).__name__}: {exc}") from exc
            return False

    return _Timer()


def run_scenario(network: RadialNetwork, uncertainty: UncertaintySpec | None, scenario: str,
                 flow_cc: bool = False, loss_mode: str = "paper", samples: int = 0, seed: int = 0,
                 backend: str | None = None) -> ScenarioRun:
    """Load-to-report pipeline: linearize, build, solve, decompose, check, sample."""
    kind = ScenarioKind.parse(scenario)
    timings: dict = {}
    options = {"flow_cc": bool(flow_cc), "loss_mode": loss_mode, "samples": int(samples), "seed": int(seed),
               "backend": backend or "default"}
    if kind.stochastic and uncertainty is None:
        raise StageError("load", f"{kind.value} needs an uncertainty section in the network document")
    lf = None
    if kind is ScenarioKind.LVOLT_CC:
        with _stage("linearize", timings):
            lf = compute_loss_factors(network, uncertainty, mode=loss_mode, backend=backend)
    with _stage("solve", timings):
        res = solve_scenario(network, uncertainty, kind, loss_factors=lf, flow_cc=flow_cc, backend=backend)
    if not res.optimal:
        raise StageError("solve", f"status {res.solution.status} ({res.solution.stats.get('raw_status')})")
    run = ScenarioRun(network, uncertainty, kind, options, res, lf, timings=timings)
    with _stage("kkt", timings):
        rep = kkt_residuals(res.program, res.solution)
        run.kkt = {**rep.as_dict(), "duality_gap": duality_gap(res.program, res.solution)}
    with _stage("decompose", timings):
        run.dlmp = decompose_dlmp(res)
        run.gamma = decompose_gamma(res)
    with _stage("equilibrium", timings):
        run.equilibrium = equilibrium_check(res)
    if samples:
        with _stage("montecarlo", timings):
            run.montecarlo = monte_carlo_validate(res, samples, seed, uncertainty=uncertainty)
    return run


# --------------------------------------------------------------------------
# Writing
# --------------------------------------------------------------------------

def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def write_csv(path: Path, rows: list[dict]) -> Path:
    with open(path, "w", newline="") as fh:
        if not rows:
            return path
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: _fmt(v) for k, v in row.items()})
    return path


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else str(v)
    return obj


def dispatch_rows(run: ScenarioRun) -> list[dict]:
    res = run.result
    net = run.network
    cols = {"dP": net.dP, "dQ": net.dQ, "gP": res.gP, "gQ": res.gQ, "alpha": res.alpha, "fP": res.fP,
            "fQ": res.fQ, "u": res.u, "lambda_P": res.lambda_P, "lambda_Q": res.lambda_Q}
    return [{"node": i, **{k: float(v[i]) for k, v in cols.items()}} for i in net.nodes]


def summary(run: ScenarioRun) -> dict:
    res = run.result
    out = {
        "format": FORMAT_VERSION,
        "network": run.network.name,
        "network_fingerprint": network_fingerprint(run.network),
        "nodes": run.network.n + 1,
        "scenario": run.scenario.value,
        "options": run.options,
        "seed": run.options["seed"],
        "generator": GENERATOR,
        "status": res.solution.status,
        "objective": res.solution.objective,
        "gamma": res.gamma,
        "s": res.s,
        "kkt": run.kkt,
        "dlmp": {"recursive_residual": run.dlmp.recursive_residual,
                 "voltage_residual": run.dlmp.voltage_residual},
        "gamma_decomposition": run.gamma.as_dict() if run.gamma is not None else None,
        "equilibrium": run.equilibrium.as_dict(),
        "montecarlo": run.montecarlo.as_dict() if run.montecarlo is not None else None,
        "checks": run.checks(),
        "passed": run.passed,
    }
    return _jsonable(out)


def write_reports(run: ScenarioRun, out_dir: str | Path) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = [write_csv(out / "dispatch.csv", dispatch_rows(run)),
             write_csv(out / "dlmp.csv", run.dlmp.rows()),
             write_csv(out / "equilibrium.csv", run.equilibrium.rows())]
    if run.gamma is not None:
        paths.append(write_csv(out / "nu.csv", run.gamma.rows()))
    if run.montecarlo is not None:
        paths.append(write_csv(out / "montecarlo.csv", run.montecarlo.rows()))
    if run.loss_factors is not None:
        path = out / "loss_factors.json"
        path.write_text(json.dumps({"mode": run.loss_factors.mode, **run.loss_factors.tables()},
                                   indent=1, sort_keys=True) + "\n")
        paths.append(path)
    path = out / "summary.json"
    path.write_text(json.dumps(summary(run), indent=2, sort_keys=True) + "\n")
    paths.append(path)
    return paths


# --------------------------------------------------------------------------
# Comparing runs
# --------------------------------------------------------------------------

@dataclass
class PriceDiff:
    network: str
    scenario_a: str
    scenario_b: str
    lambda_a: np.ndarray
    lambda_b: np.ndarray

    @property
    def delta(self) -> np.ndarray:
        return self.lambda_b - self.lambda_a

    def rows(self) -> list[dict]:
        return [{"node": i, "lambda_a": float(a), "lambda_b": float(b), "delta": float(b - a)}
                for i, (a, b) in enumerate(zip(self.lambda_a, self.lambda_b))]


def _load_run(path: str | Path) -> tuple[dict, np.ndarray]:
    path = Path(path)
    try:
        meta = json.loads((path / "summary.json").read_text())
        with open(path / "dispatch.csv", newline="") as fh:
            lam = np.array([float(row["lambda_P"]) for row in csv.DictReader(fh)])
    except (OSError, KeyError, ValueError) as exc:
        raise StageError("diff", f"cannot read run directory {str(path)!r}: {exc}") from exc
    return meta, lam


def diff_runs(a: str | Path, b: str | Path) -> PriceDiff:
    """Per-node ``lambda_P(b) - lambda_P(a)``; both runs must use the same network."""
    meta_a, lam_a = _load_run(a)
    meta_b, lam_b = _load_run(b)
    if meta_a.get("network_fingerprint") != meta_b.get("network_fingerprint") or len(lam_a) != len(lam_b):
        raise StageError("diff", f"runs use different networks ({meta_a.get('network')!r} vs "
                                 f"{meta_b.get('network')!r})")
    return PriceDiff(meta_a.get("network", ""), meta_a.get("scenario", ""), meta_b.get("scenario", ""),
                     lam_a, lam_b)
