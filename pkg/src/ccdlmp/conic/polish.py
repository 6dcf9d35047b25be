"""Active-set polishing of an interior-point solution.

Interior-point iterates stop at a small but nonzero complementarity gap. For
a cone constraint that binds with a positive multiplier, the direction of the
cone dual is then only accurate to about the square root of that gap, which
is visible in quantities rebuilt from it. Polishing fixes the active set read
off the iterate and solves the resulting smooth KKT system by Newton's method:

* inactive rows and cones are dropped (zero dual),
* active inequality rows and cones at their vertex become equalities,
* cones on their boundary become ``||s_bar|| - s_0 = 0`` with dual
  ``lam * (1, -s_bar / ||s_bar||)``.

The polished point is kept only if its worst KKT violation is smaller than
that of the original iterate.
"""
from __future__ import annotations

import numpy as np

from .program import StandardForm

MAX_NEWTON = 8
NEWTON_TOL = 1e-14


def kkt_violation(sf: StandardForm, x: np.ndarray, z: np.ndarray) -> float:
    """Worst of primal infeasibility, dual infeasibility, stationarity and complementarity."""
    s = sf.b - sf.A @ x
    ne, nl = sf.n_eq, sf.n_le
    worst = float(np.max(np.abs(sf.P @ x + sf.c + sf.A.T @ z), initial=0.0))
    worst = max(worst, float(np.max(np.abs(s[:ne]), initial=0.0)))
    sl, zl = s[ne:ne + nl], z[ne:ne + nl]
    worst = max(worst, float(np.max(-sl, initial=0.0)), float(np.max(-zl, initial=0.0)),
                float(np.max(np.abs(sl * zl), initial=0.0)))
    k = ne + nl
    for d in sf.soc_dims:
        sb, zb = s[k:k + d], z[k:k + d]
        worst = max(worst, np.linalg.norm(sb[1:]) - sb[0], np.linalg.norm(zb[1:]) - zb[0], abs(sb @ zb))
        k += d
    return float(worst)


def _classify(sf: StandardForm, s: np.ndarray, z: np.ndarray):
    ne, nl = sf.n_eq, sf.n_le
    eq_rows = list(range(ne))
    eq_rows += [ne + i for i in range(nl) if z[ne + i] > s[ne + i]]
    boundary = []
    k = ne + nl
    for d in sf.soc_dims:
        sb, zb = s[k:k + d], z[k:k + d]
        s_gap = sb[0] - np.linalg.norm(sb[1:])
        z_gap = zb[0] - np.linalg.norm(zb[1:])
        if zb[0] <= s_gap:
            pass                                    # inactive
        elif sb[0] <= z_gap:
            eq_rows.extend(range(k, k + d))         # primal at the vertex
        else:
            boundary.append((k, d))
        k += d
    return np.array(eq_rows, dtype=int), boundary


def polish(sf: StandardForm, x: np.ndarray, z: np.ndarray) -> tuple[np.ndarray, np.ndarray, dict]:
    """Return ``(x, z, info)``; the inputs are returned unchanged if polishing does not help."""
    before = kkt_violation(sf, x, z)
    info = {"polished": False, "kkt_before": before, "kkt_after": before}
    A = sf.A.tocsr()
    P = sf.P.toarray()                          # compiled symmetric
    s = sf.b - A @ x
    eq_rows, boundary = _classify(sf, s, z)
    AE = A[eq_rows].toarray()
    bE = sf.b[eq_rows]
    blocks = [(A[k:k + d].toarray(), sf.b[k:k + d]) for k, d in boundary]
    n, me, mb = len(x), len(eq_rows), len(boundary)
    xk = x.copy()
    y = z[eq_rows].copy()
    lam = np.array([z[k] for k, _ in boundary])
    for _ in range(MAX_NEWTON):
        H = P.copy()
        J = np.zeros((mb, n))
        g = np.zeros(mb)
        grad = P @ xk + sf.c + AE.T @ y
        for j, (Ak, bk) in enumerate(blocks):
            sk = bk - Ak @ xk
            nrm = np.linalg.norm(sk[1:])
            if nrm <= 0.0:
                return x, z, info
            u = sk[1:] / nrm
            w = np.concatenate([[1.0], -u])
            J[j] = Ak.T @ w
            g[j] = nrm - sk[0]
            grad += lam[j] * J[j]
            Ab = Ak[1:]
            H += lam[j] / nrm * (Ab.T @ (np.eye(len(u)) - np.outer(u, u)) @ Ab)
        F = np.concatenate([grad, AE @ xk - bE, g])
        if np.max(np.abs(F), initial=0.0) <= NEWTON_TOL:
            break
        K = np.block([[H, AE.T, J.T],
                      [AE, np.zeros((me, me)), np.zeros((me, mb))],
                      [J, np.zeros((mb, me)), np.zeros((mb, mb))]])
        step = np.linalg.lstsq(K, -F, rcond=None)[0]
        if not np.all(np.isfinite(step)):
            return x, z, info
        xk += step[:n]
        y += step[n:n + me]
        lam += step[n + me:]
    zk = np.zeros_like(z)
    zk[eq_rows] = y
    for j, (k, d) in enumerate(boundary):
        sk = sf.b[k:k + d] - A[k:k + d] @ xk
        zk[k:k + d] = lam[j] * np.concatenate([[1.0], -sk[1:] / np.linalg.norm(sk[1:])])
    after = kkt_violation(sf, xk, zk)
    if not np.isfinite(after) or after >= before:
        info["kkt_after"] = after
        info["rejected"] = True
        return x, z, info
    info.update(polished=True, kkt_after=after, active_rows=me, boundary_cones=mb)
    return xk, zk, info
