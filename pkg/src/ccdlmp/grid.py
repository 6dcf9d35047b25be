"""Radial network data, uncertainty description and structural matrices.

Nodes are indexed ``0..n`` with ``0`` the substation. Edge ``i`` (``i >= 1``)
is the line that feeds node ``i`` from its ancestor, so edge and node indices
coincide on the non-root part of the tree. All matrices over non-root
quantities are ``n x n`` with row/column ``k`` referring to node ``k + 1``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np


class NetworkError(ValueError):
    """Raised for malformed or physically inconsistent network data."""


# --------------------------------------------------------------------------
# Standard normal quantile
# --------------------------------------------------------------------------

# Acklam's rational approximation coefficients.
_A = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
      1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
_B = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
      6.680131188771972e01, -1.328068155288572e01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
      -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
      3.754408661907416e00)
_P_LOW = 0.02425


def _acklam(p: float) -> float:
    if p < _P_LOW:
        q = math.sqrt(-2.0 * math.log(p))
        num = ((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]
        den = (((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0
        return num / den
    if p > 1.0 - _P_LOW:
        return -_acklam(1.0 - p)
    q = p - 0.5
    r = q * q
    num = (((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q
    den = ((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0
    return num / den


def gaussian_quantile(epsilon: float) -> float:
    """Return ``z`` with ``P[N(0,1) <= z] = 1 - epsilon`` for ``0 < epsilon < 0.5``.

    A rational first guess is polished with a Halley step against
    ``math.erfc``; the result is accurate to well below 1e-12.
    """
    eps = float(epsilon)
    if not (0.0 < eps < 0.5):
        raise ValueError(f"violation probability must lie in (0, 0.5), got {epsilon!r}")
    p = 1.0 - eps
    z = _acklam(p)
    for _ in range(2):
        # upper tail is computed directly to avoid cancellation in 1 - cdf
        err = 0.5 * math.erfc(z / math.sqrt(2.0)) - eps
        pdf = math.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)
        u = err / pdf
        z = z + u / (1.0 - 0.5 * z * u)
    return z


# --------------------------------------------------------------------------
# Network data
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class DER:
    """Controllable generator (or the substation when ``node == 0``).

    Costs are held in both the standard form ``c2 g^2 + c1 g + c0`` and the
    compact form with ``c2 = 1/(2b)``, ``c1 = a/b``. ``c0`` is kept as given;
    it only shifts the objective.
    """

    node: int
    a: float
    b: float
    c0: float
    gP_min: float = -math.inf
    gP_max: float = math.inf
    gQ_min: float = -math.inf
    gQ_max: float = math.inf

    @property
    def c2(self) -> float:
        return 1.0 / (2.0 * self.b)

    @property
    def c1(self) -> float:
        return self.a / self.b

    @classmethod
    def from_standard(cls, node: int, c2: float, c1: float, c0: float = 0.0, **limits: float) -> "DER":
        if c2 <= 0:
            raise NetworkError(f"DER at node {node}: c2 must be > 0, got {c2}")
        b = 1.0 / (2.0 * c2)
        return cls(node=node, a=c1 * b, b=b, c0=c0, **limits)

    @classmethod
    def from_ab(cls, node: int, a: float, b: float, c0: float | None = None, **limits: float) -> "DER":
        if b <= 0:
            raise NetworkError(f"DER at node {node}: b must be > 0, got {b}")
        return cls(node=node, a=a, b=b, c0=a * a / (2.0 * b) if c0 is None else c0, **limits)

    def cost(self, g: float | np.ndarray) -> float | np.ndarray:
        return self.c2 * g * g + self.c1 * g + self.c0


@dataclass(frozen=True)
class RadialNetwork:
    """Validated radial feeder. Build it with :func:`load_network` or :meth:`build`."""

    parent: tuple[int, ...]          # parent[i] for i >= 1; parent[0] == -1
    r: np.ndarray                    # length n+1, r[0] unused (0)
    x: np.ndarray
    s_max: np.ndarray
    dP: np.ndarray                   # length n+1
    dQ: np.ndarray
    u_min: np.ndarray                # length n+1, root entries unused
    u_max: np.ndarray
    u0: float
    ders: tuple[DER, ...]
    base_mva: float = 1.0
    name: str = "network"
    meta: Mapping[str, Any] = field(default_factory=dict)

    @property
    def n(self) -> int:
        return len(self.parent) - 1

    @property
    def nodes(self) -> range:
        return range(self.n + 1)

    @property
    def der_nodes(self) -> tuple[int, ...]:
        """Non-root DER nodes (the set G of the model)."""
        return tuple(d.node for d in self.ders if d.node != 0)

    @property
    def root_der(self) -> DER:
        for d in self.ders:
            if d.node == 0:
                return d
        raise NetworkError("network has no substation cost entry at node 0")

    def der_at(self, node: int) -> DER | None:
        for d in self.ders:
            if d.node == node:
                return d
        return None

    def children(self, i: int) -> tuple[int, ...]:
        return self._children[i]

    def topological_order(self) -> tuple[int, ...]:
        """Nodes ordered so that every ancestor precedes its descendants."""
        return self._order

    def __post_init__(self) -> None:
        n = self.n
        for name in ("r", "x", "s_max", "dP", "dQ", "u_min", "u_max"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != (n + 1,):
                raise NetworkError(f"field {name} must have length {n + 1}, got {arr.shape}")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        children: list[list[int]] = [[] for _ in range(n + 1)]
        for i in range(1, n + 1):
            p = self.parent[i]
            if not (0 <= p <= n) or p == i:
                raise NetworkError(f"edge into node {i}: invalid ancestor {p}")
            children[p].append(i)
        order = [0]
        seen = {0}
        head = 0
        while head < len(order):
            for c in children[order[head]]:
                if c in seen:
                    raise NetworkError(f"cycle detected at node {c}")
                seen.add(c)
                order.append(c)
            head += 1
        if len(order) != n + 1:
            missing = sorted(set(range(n + 1)) - seen)
            raise NetworkError(f"nodes not connected to the root (cycle or disconnected): {missing}")
        object.__setattr__(self, "_children", tuple(tuple(c) for c in children))
        object.__setattr__(self, "_order", tuple(order))
        self._validate()

    def _validate(self) -> None:
        for i in range(1, self.n + 1):
            if not self.r[i] > 0:
                raise NetworkError(f"edge {i}: resistance must be > 0, got {self.r[i]}")
            if not self.x[i] > 0:
                raise NetworkError(f"edge {i}: reactance must be > 0, got {self.x[i]}")
            if not self.s_max[i] > 0:
                raise NetworkError(f"edge {i}: s_max must be > 0, got {self.s_max[i]}")
            if not self.u_min[i] < self.u_max[i]:
                raise NetworkError(f"node {i}: u_min must be < u_max")
        if not self.u0 > 0:
            raise NetworkError("root voltage u0 must be > 0")
        seen: set[int] = set()
        for d in self.ders:
            if d.node in seen:
                raise NetworkError(f"duplicate DER at node {d.node}")
            seen.add(d.node)
            if not (0 <= d.node <= self.n):
                raise NetworkError(f"DER at unknown node {d.node}")
            if not d.b > 0:
                raise NetworkError(f"DER at node {d.node}: b must be > 0")
            if d.a < 0:
                raise NetworkError(f"DER at node {d.node}: a must be >= 0")
            if d.gP_min > d.gP_max or d.gQ_min > d.gQ_max:
                raise NetworkError(f"DER at node {d.node}: min limit exceeds max limit")
            if d.node != 0 and not all(math.isfinite(v) for v in (d.gP_min, d.gP_max, d.gQ_min, d.gQ_max)):
                raise NetworkError(f"DER at node {d.node}: generation limits must be finite")
        if 0 not in seen:
            raise NetworkError("network has no substation cost entry at node 0")

    # ------------------------------------------------------------------
    @classmethod
    def build(cls, parent: Sequence[int], r, x, s_max, dP, dQ=None, u_min=None, u_max=None,
              u0: float = 1.0, ders: Sequence[DER] = (), **kw) -> "RadialNetwork":
        """Convenience constructor taking per-edge arrays of length n (edges 1..n)."""
        n = len(parent)
        pad = lambda v, fill=0.0: np.concatenate(([fill], np.asarray(v, dtype=float)))
        node_arr = lambda v, default: (np.full(n + 1, default) if v is None
                                       else np.asarray(v, dtype=float) if len(v) == n + 1
                                       else pad(v))
        return cls(
            parent=(-1, *map(int, parent)),
            r=pad(r), x=pad(x), s_max=pad(s_max, np.inf),
            dP=node_arr(dP, 0.0), dQ=node_arr(dQ, 0.0),
            u_min=node_arr(u_min, 0.9 ** 2), u_max=node_arr(u_max, 1.1 ** 2),
            u0=u0, ders=tuple(ders), **kw,
        )

    def with_demand(self, dP=None, dQ=None) -> "RadialNetwork":
        from dataclasses import replace
        return replace(self,
                       dP=self.dP if dP is None else np.asarray(dP, dtype=float),
                       dQ=self.dQ if dQ is None else np.asarray(dQ, dtype=float))


# --------------------------------------------------------------------------
# Uncertainty
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class UncertaintySpec:
    """Gaussian forecast errors on non-root active demand, with risk levels."""

    sigma: np.ndarray                # n x n covariance
    eps_g: float = 0.05
    eps_v: float = 0.01
    eps_f: float = 0.05

    def __post_init__(self) -> None:
        S = np.array(self.sigma, dtype=float)
        if S.ndim != 2 or S.shape[0] != S.shape[1]:
            raise NetworkError(f"covariance must be square, got shape {S.shape}")
        if not np.allclose(S, S.T, atol=1e-12):
            raise NetworkError("covariance must be symmetric")
        if S.size and np.linalg.eigvalsh(S).min() < -1e-10 * max(1.0, np.abs(S).max()):
            raise NetworkError("covariance must be positive semidefinite")
        S.setflags(write=False)
        object.__setattr__(self, "sigma", S)
        for name in ("eps_g", "eps_v", "eps_f"):
            v = getattr(self, name)
            if not (0.0 < v < 0.5):
                raise NetworkError(f"{name} must lie in (0, 0.5), got {v}")

    @classmethod
    def from_std(cls, std: Sequence[float], **eps: float) -> "UncertaintySpec":
        std = np.asarray(std, dtype=float)
        return cls(np.diag(std ** 2), **eps)

    @classmethod
    def zero(cls, n: int, **eps: float) -> "UncertaintySpec":
        return cls(np.zeros((n, n)), **eps)

    @property
    def n(self) -> int:
        return self.sigma.shape[0]

    @property
    def s2(self) -> float:
        return float(self.sigma.sum())

    @property
    def s(self) -> float:
        return math.sqrt(max(self.s2, 0.0))

    @property
    def z_g(self) -> float:
        return gaussian_quantile(self.eps_g)

    @property
    def z_v(self) -> float:
        return gaussian_quantile(self.eps_v)

    @property
    def z_f(self) -> float:
        return gaussian_quantile(self.eps_f)

    def sqrt(self) -> np.ndarray:
        """Symmetric PSD square root; tiny negative eigenvalues are clipped to zero."""
        w, V = np.linalg.eigh(self.sigma)
        w = np.where(w < 0.0, 0.0, w)
        return (V * np.sqrt(w)) @ V.T

    def scaled(self, factor: float) -> "UncertaintySpec":
        """Covariance multiplied by ``factor`` (so ``s`` scales by sqrt(factor))."""
        return UncertaintySpec(self.sigma * factor, self.eps_g, self.eps_v, self.eps_f)


# --------------------------------------------------------------------------
# Topology
# --------------------------------------------------------------------------

def topology_sets(network: RadialNetwork, i: int) -> tuple[int | None, frozenset[int], frozenset[int]]:
    """Return ``(ancestor, children, downstream)`` of node ``i``; downstream includes ``i``."""
    if not (0 <= i <= network.n):
        raise IndexError(f"node {i} out of range 0..{network.n}")
    anc = None if i == 0 else network.parent[i]
    down = [i]
    k = 0
    while k < len(down):
        down.extend(network.children(down[k]))
        k += 1
    return anc, frozenset(network.children(i)), frozenset(down)


@dataclass(frozen=True)
class TopologyMatrices:
    A: np.ndarray
    A_inv: np.ndarray
    R: np.ndarray
    R_inv: np.ndarray
    X: np.ndarray
    A_L: np.ndarray | None = None
    R_L: np.ndarray | None = None
    R_L_inv: np.ndarray | None = None

    @property
    def loss_aware(self) -> bool:
        return self.R_L is not None


def path_matrix(network: RadialNetwork) -> np.ndarray:
    """``A[i-1, j-1] = 1`` iff edge ``i`` lies on the path from the root to node ``j``."""
    n = network.n
    A = np.zeros((n, n))
    for j in range(1, n + 1):
        k = j
        while k != 0:
            A[k - 1, j - 1] = 1.0
            k = network.parent[k]
    return A


def build_matrices(network: RadialNetwork, loss_factors=None) -> TopologyMatrices:
    """Assemble A, R = A^T diag(r) A, X = A^T diag(x) A and their inverses.

    ``A^{-1}`` is the signed parent incidence ``I - N`` and
    ``R^{-1} = A^{-1} diag(1/r) A^{-T}``, both exact. With ``loss_factors``
    the loss-aware ``A^L = A(I + Lpp)`` and
    ``R^L = A^T(diag(r) A^L + diag(x) A Lqp)`` are added.
    """
    n = network.n
    A = path_matrix(network)
    A_inv = np.eye(n)
    for j in range(1, n + 1):
        p = network.parent[j]
        if p != 0:
            A_inv[p - 1, j - 1] = -1.0
    r = network.r[1:]
    x = network.x[1:]
    R = A.T @ (r[:, None] * A)
    X = A.T @ (x[:, None] * A)
    R_inv = A_inv @ ((1.0 / r)[:, None] * A_inv.T)
    for M in (A, A_inv, R, R_inv, X):
        M.setflags(write=False)
    if loss_factors is None:
        return TopologyMatrices(A, A_inv, R, R_inv, X)

    Lpp = np.asarray(loss_factors.lam_pp)[1:, 1:]
    Lqp = np.asarray(loss_factors.lam_qp)[1:, 1:]
    if Lpp.shape != (n, n) or Lqp.shape != (n, n):
        raise NetworkError(f"loss factor dimensions {Lpp.shape} do not match network size {n}")
    A_L = A @ (np.eye(n) + Lpp)
    R_L = A.T @ (r[:, None] * A_L + x[:, None] * (A @ Lqp))
    cond = np.linalg.cond(R_L)
    if not np.isfinite(cond) or cond > 1e12:
        raise NetworkError(f"loss-aware R is numerically singular (condition estimate {cond:.3e})")
    R_L_inv = np.linalg.inv(R_L)
    for M in (A_L, R_L, R_L_inv):
        M.setflags(write=False)
    return TopologyMatrices(A, A_inv, R, R_inv, X, A_L, R_L, R_L_inv)


# --------------------------------------------------------------------------
# Parsing
# --------------------------------------------------------------------------

_FIXTURE_DIR = Path(__file__).parent / "fixtures"


def fixture_path(name: str) -> Path:
    """Resolve a bundled fixture name (``feeder15``) or a filesystem path."""
    p = Path(name)
    if p.exists():
        return p
    stem = p.name if p.suffix else p.name + ".json"
    candidate = _FIXTURE_DIR / stem
    if candidate.exists():
        return candidate
    raise FileNotFoundError(f"no network document at {name!r} and no bundled fixture {stem!r}")


def _num(obj: Mapping[str, Any], key: str, where: str, default: Any = ...) -> float:
    if key not in obj or obj[key] is None:
        if default is ...:
            raise NetworkError(f"{where}: missing field {key!r}")
        return default
    try:
        return float(obj[key])
    except (TypeError, ValueError):
        raise NetworkError(f"{where}: field {key!r} is not numeric: {obj[key]!r}") from None


def parse_network(doc: Mapping[str, Any]) -> tuple[RadialNetwork, UncertaintySpec | None]:
    """Validate a network document (already decoded) and build the model objects."""
    if not isinstance(doc, Mapping):
        raise NetworkError("network document must be a mapping")
    for key in ("nodes", "edges", "ders"):
        if key not in doc or not isinstance(doc[key], list):
            raise NetworkError(f"missing or malformed top-level key {key!r}")
    nodes = doc["nodes"]
    ids = []
    for k, nd in enumerate(nodes):
        if not isinstance(nd, Mapping) or "id" not in nd:
            raise NetworkError(f"nodes[{k}]: missing id")
        ids.append(int(nd["id"]))
    n = len(nodes) - 1
    if sorted(ids) != list(range(n + 1)):
        raise NetworkError(f"node ids must be exactly 0..{n}, got {sorted(ids)}")
    if n < 1:
        raise NetworkError("network needs at least one non-root node")

    dP = np.zeros(n + 1)
    dQ = np.zeros(n + 1)
    u_min = np.full(n + 1, np.nan)
    u_max = np.full(n + 1, np.nan)
    for nd in nodes:
        i = int(nd["id"])
        where = f"node {i}"
        dP[i] = _num(nd, "dP", where, 0.0)
        dQ[i] = _num(nd, "dQ", where, 0.0)
        if i != 0:
            u_min[i] = _num(nd, "u_min", where)
            u_max[i] = _num(nd, "u_max", where)
    u_min[0] = u_max[0] = _num(doc, "u0", "document", 1.0)

    parent = [-1] * (n + 1)
    r = np.zeros(n + 1)
    x = np.zeros(n + 1)
    s_max = np.full(n + 1, np.inf)
    seen_to: set[int] = set()
    for e in doc["edges"]:
        eid = e.get("id", e.get("to"))
        where = f"edge {eid}"
        try:
            frm, to = int(e["from"]), int(e["to"])
        except (KeyError, TypeError, ValueError):
            raise NetworkError(f"{where}: missing or malformed endpoint") from None
        if not (0 <= frm <= n and 0 <= to <= n):
            raise NetworkError(f"{where}: endpoint outside 0..{n}")
        if to == 0:
            raise NetworkError(f"{where}: the root cannot have an ancestor")
        if to in seen_to:
            raise NetworkError(f"{where}: node {to} has more than one ancestor (cycle or mesh)")
        seen_to.add(to)
        parent[to] = frm
        r[to] = _num(e, "r", where)
        x[to] = _num(e, "x", where)
        s_max[to] = _num(e, "s_max", where, np.inf)
    missing = [i for i in range(1, n + 1) if i not in seen_to]
    if missing:
        raise NetworkError(f"missing ancestor edge for nodes {missing}")

    ders = []
    for k, d in enumerate(doc["ders"]):
        where = f"ders[{k}]"
        if "node" not in d:
            raise NetworkError(f"{where}: missing node")
        node = int(d["node"])
        where = f"DER at node {node}"
        limits = {key: _num(d, key, where, default)
                  for key, default in (("gP_min", -math.inf), ("gP_max", math.inf),
                                       ("gQ_min", -math.inf), ("gQ_max", math.inf))}
        if "b" in d:
            ders.append(DER.from_ab(node, _num(d, "a", where, 0.0), _num(d, "b", where),
                                    d.get("c0"), **limits))
        else:
            ders.append(DER.from_standard(node, _num(d, "c2", where), _num(d, "c1", where),
                                          _num(d, "c0", where, 0.0), **limits))

    base = doc.get("base", {}) or {}
    net = RadialNetwork(
        parent=tuple(parent), r=r, x=x, s_max=s_max, dP=dP, dQ=dQ,
        u_min=u_min, u_max=u_max, u0=float(u_min[0]), ders=tuple(ders),
        base_mva=float(base.get("mva", 1.0)), name=str(doc.get("name", "network")),
        meta=dict(doc.get("meta", {}) or {}),
    )

    unc = None
    spec = doc.get("uncertainty")
    if spec is not None:
        eps = {k: _num(spec, k, "uncertainty", dflt)
               for k, dflt in (("eps_g", 0.05), ("eps_v", 0.01), ("eps_f", 0.05))}
        if "sigma" in spec:
            unc = UncertaintySpec(np.asarray(spec["sigma"], dtype=float), **eps)
        elif "sigma_diag" in spec:
            std = np.asarray(spec["sigma_diag"], dtype=float)
            if std.shape != (n,):
                raise NetworkError(f"uncertainty.sigma_diag must have length {n}")
            unc = UncertaintySpec.from_std(std, **eps)
        else:
            raise NetworkError("uncertainty needs 'sigma' or 'sigma_diag'")
        if unc.n != n:
            raise NetworkError(f"covariance dimension {unc.n} does not match {n} non-root nodes")
    return net, unc


def load_network(source: str | Path | Mapping[str, Any]) -> tuple[RadialNetwork, UncertaintySpec | None]:
    """Load a network from a JSON document, a path, or a bundled fixture name."""
    if isinstance(source, Mapping):
        return parse_network(source)
    text = str(source)
    if text.lstrip().startswith("{"):
        doc = json.loads(text)
    else:
        with open(fixture_path(text)) as fh:
            doc = json.load(fh)
    return parse_network(doc)
