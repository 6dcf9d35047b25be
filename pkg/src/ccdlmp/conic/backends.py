"""Solver backends for compiled conic programs.

Each backend receives the :class:`StandardForm` arrays and returns the raw
``(status, x, z, stats)``; :func:`solve` maps the raw dual ``z`` of
``A x + s = b`` (``c + A^T z = 0``) to per-label duals in the kernel
convention. The backend is chosen by argument or the ``CCDLMP_BACKEND``
environment variable (``clarabel`` by default).
"""
from __future__ import annotations

import os
import time
from typing import Callable

import numpy as np

from .polish import polish as polish_solution
from .program import ConicProgram, Solution, StandardForm

BACKEND_ENV = "CCDLMP_BACKEND"
TOL = 1e-10


def _clarabel(sf: StandardForm):
    import clarabel
    import scipy.sparse as sp

    P = sp.triu(sf.P, format="csc")
    cones = []
    if sf.n_eq:
        cones.append(clarabel.ZeroConeT(sf.n_eq))
    if sf.n_le:
        cones.append(clarabel.NonnegativeConeT(sf.n_le))
    cones.extend(clarabel.SecondOrderConeT(d) for d in sf.soc_dims)
    # Tight tolerances first; models that stall ("AlmostSolved") are re-solved
    # with a looser target. Near-degenerate limits need the 1e-12 pass: at
    # 1e-10 slack and multiplier can both sit near sqrt(mu).
    # Each level is tried with tight iterative refinement first, which helps the
    # degenerate cases but stalls on some others, then with the defaults.
    attempts = [(tol, refine) for tol in (TOL / 100, TOL / 10, TOL, 10 * TOL, 100 * TOL)
                for refine in (True, False)]
    for tol, refine in attempts:
        settings = clarabel.DefaultSettings()
        settings.verbose = False
        settings.tol_feas = tol
        settings.tol_gap_abs = tol
        settings.tol_gap_rel = tol
        settings.tol_ktratio = 1e-10
        settings.presolve_enable = False
        settings.max_iter = 400
        if refine:
            settings.iterative_refinement_reltol = 1e-16
            settings.iterative_refinement_abstol = 1e-16
            settings.iterative_refinement_max_iter = 50
        sol = clarabel.DefaultSolver(P, sf.c, sf.A, sf.b, cones, settings).solve()
        name = str(sol.status)
        if name not in ("AlmostSolved", "InsufficientProgress", "NumericalError", "MaxIterations"):
            break
    status = {
        "Solved": "optimal",
        "PrimalInfeasible": "infeasible",
        "DualInfeasible": "unbounded",
    }.get(name, "numerical-failure")
    stats = {
        "backend": "clarabel",
        "raw_status": name,
        "tolerance": tol,
        "refined": refine,
        "iterations": int(sol.iterations),
        "solve_time": float(sol.solve_time),
        "r_prim": float(getattr(sol, "r_prim", np.nan)),
        "r_dual": float(getattr(sol, "r_dual", np.nan)),
    }
    return status, np.asarray(sol.x), np.asarray(sol.z), stats


def _num(v) -> float:
    return float("nan") if v is None else float(v)


def _cvxopt(sf: StandardForm):
    import cvxopt
    from cvxopt import solvers

    def spm(M):
        M = M.tocoo()
        return cvxopt.spmatrix(M.data.tolist(), M.row.tolist(), M.col.tolist(), M.shape)

    A = sf.A.tocsr()
    n = A.shape[1]
    ne = sf.n_eq
    G = A[ne:]
    h = cvxopt.matrix(sf.b[ne:].astype(float))
    dims = {"l": sf.n_le, "q": list(sf.soc_dims), "s": []}
    kw = {}
    if ne:
        kw["A"] = spm(A[:ne])
        kw["b"] = cvxopt.matrix(sf.b[:ne].astype(float))
    t0 = time.perf_counter()
    q = cvxopt.matrix(sf.c.astype(float))
    # cvxopt degrades when asked for more accuracy than it can reach, so the
    # tolerance is relaxed step by step until it reports convergence; at each
    # level the LDL factorization is the fallback for the default Cholesky one
    for tol, kkt in [(t, k) for t in (TOL, 10 * TOL, 100 * TOL) for k in (None, "ldl")]:
        opts = {"show_progress": False, "abstol": tol, "reltol": tol, "feastol": tol, "maxiters": 200}
        extra = dict(kw, kktsolver=kkt) if kkt else kw
        try:
            if sf.P.nnz:
                res = solvers.coneqp(spm(sf.P), q, spm(G), h, dims, options=opts, **extra)
            else:
                res = solvers.conelp(q, spm(G), h, dims, options=opts, **extra)
        except (ValueError, ArithmeticError) as exc:
            # raised from inside the scaling update on badly conditioned iterates
            res = {"status": f"error: {exc}", "x": None}
            continue
        if res["status"] in ("optimal", "primal infeasible", "dual infeasible"):
            break
    elapsed = time.perf_counter() - t0
    raw = res["status"]
    stats = {
        "backend": "cvxopt",
        "raw_status": raw,
        "tolerance": tol,
        "kktsolver": kkt or "default",
        "iterations": int(res.get("iterations", 0)),
        "solve_time": elapsed,
        "r_prim": _num(res.get("primal infeasibility")),
        "r_dual": _num(res.get("dual infeasibility")),
    }
    if raw == "optimal":
        status = "optimal"
    elif raw == "primal infeasible":
        status = "infeasible"
    elif raw == "dual infeasible":
        status = "unbounded"
    elif (res.get("x") is not None and stats["r_prim"] < 1e-8 and stats["r_dual"] < 1e-8
          and abs(_num(res.get("relative gap"))) < 1e-8):
        # cvxopt stops with "unknown" when it cannot reach the tight tolerances
        # requested above although the iterate is accurate
        status = "optimal"
    else:
        status = "numerical-failure"
    if res.get("x") is None:
        return status, np.full(n, np.nan), np.full(len(sf.b), np.nan), stats
    x = np.asarray(res["x"]).ravel()
    y = np.asarray(res["y"]).ravel() if ne else np.zeros(0)
    zg = np.asarray(res["z"]).ravel()
    return status, x, np.concatenate([y, zg]), stats


BACKENDS: dict[str, Callable] = {"clarabel": _clarabel, "cvxopt": _cvxopt}


def default_backend() -> str:
    name = os.environ.get(BACKEND_ENV, "clarabel").strip().lower()
    if name not in BACKENDS:
        raise ValueError(f"unknown backend {name!r} in ${BACKEND_ENV}; choose from {sorted(BACKENDS)}")
    return name


def solve(program: ConicProgram, backend: str | None = None, lift: bool = False,
          polish: bool = True) -> Solution:
    """Solve ``program`` and return primal values and sign-normalized duals.

    With ``lift=True`` quadratic objective terms are solved as cone epigraphs
    and their cone duals are reported under the quadratic term labels. With
    ``polish=True`` the backend iterate is refined on its active set
    (:mod:`ccdlmp.conic.polish`) when that lowers the KKT violation.
    """
    name = backend or default_backend()
    if name not in BACKENDS:
        raise ValueError(f"unknown backend {name!r}; choose from {sorted(BACKENDS)}")
    sf = program.compile(lift)
    t0 = time.perf_counter()
    status, x, z, stats = BACKENDS[name](sf)
    stats["wall_time"] = time.perf_counter() - t0
    if status != "optimal":
        return Solution(status=status, objective=float("nan"), stats=stats, program=program)
    if polish:
        x, z, info = polish_solution(sf, x, z)
        stats.update(info)

    xu = x[: sf.n_user]
    primal = {v: float(xu[k]) for k, v in enumerate(program.variables)}
    duals: dict = {}
    k = 0
    for e in program.equalities:
        duals[e.label] = float(-z[k])
        k += 1
    for e in program.inequalities:
        duals[e.label] = float(z[k])
        k += 1
    for cone in program.cones:
        d = 1 + len(cone.rows)
        duals[cone.label] = np.array(z[k:k + d])
        k += d
    for q in program.quadratics if lift else ():
        d = len(q.rows) + 2
        duals[q.label] = np.array(z[k:k + d])
        k += d
    objective = program.objective_value(xu)
    quad = 0.5 * float(x @ (sf.P @ x))
    stats["lift"] = lift
    stats["primal_objective"] = quad + float(sf.c @ x + sf.c0)
    stats["dual_objective"] = -quad - float(sf.b @ z) + sf.c0
    return Solution(status="optimal", objective=objective, primal=primal, duals=duals,
                    stats=stats, x=np.asarray(x), z=np.asarray(z), program=program)
