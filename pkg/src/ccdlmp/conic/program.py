"""Labeled conic programs and their solutions.

A program is assembled with linear equalities, linear inequalities and
second-order cones, each carrying a unique hashable label (typically a tuple
such as ``("lambda_P", 3)``). Convex quadratic objective terms are either
passed to the backend as a PSD matrix ``P`` or, with ``lift=True``, lowered
to second-order cone epigraphs so that a pure conic solver suffices.
Lifting degrades dual accuracy to roughly the square root of the solver
tolerance (the epigraph cone is tangent at the optimum), so the solvers use
the native form and the lifted form serves export and cross-checks.

Dual sign convention (fixed here, independent of the backend):

* equality ``a.x = b``: the stored dual is ``d p*/d b``;
* inequality ``a.x <= b`` (i.e. ``g(x) = a.x - b <= 0``): stored dual ``>= 0``,
  equal to ``-d p*/d b``;
* cone ``||M x + m|| <= c.x + d``: the stored dual is the vector
  ``(z0, z1)`` in the second-order cone, entering stationarity as
  ``-(z0 c + M^T z1)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Hashable, Iterable, Mapping

import numpy as np
import scipy.sparse as sp

Label = Hashable
Linear = Mapping[Hashable, float]


class ProgramError(ValueError):
    """Construction error in a conic program."""


@dataclass(frozen=True)
class LinearConstraint:
    label: Label
    coeffs: dict
    rhs: float
    kind: str  # "eq" or "le"


@dataclass(frozen=True)
class ConeConstraint:
    label: Label
    rows: tuple       # tuple of (coeffs, const) for M x + m
    t: tuple          # (coeffs, const) for c.x + d


@dataclass(frozen=True)
class QuadraticTerm:
    label: Label
    rows: tuple       # weight * ||M x + m||^2
    weight: float


@dataclass(frozen=True)
class StandardForm:
    """``min x'Px/2 + c.x + c0  s.t.  A x + s = b``, ``s`` in zero^{n_eq} x R+^{n_le} x SOC..."""

    P: sp.csc_matrix
    c: np.ndarray
    c0: float
    A: sp.csc_matrix
    b: np.ndarray
    n_eq: int
    n_le: int
    soc_dims: tuple[int, ...]
    n_user: int          # columns belonging to declared variables (epigraphs follow)


class ConicProgram:
    """Builder for a labeled conic program; immutable once compiled."""

    def __init__(self, name: str = "program") -> None:
        self.name = name
        self.variables: list[Hashable] = []
        self._index: dict[Hashable, int] = {}
        self.objective: dict[Hashable, float] = {}
        self.objective_const = 0.0
        self.equalities: list[LinearConstraint] = []
        self.inequalities: list[LinearConstraint] = []
        self.cones: list[ConeConstraint] = []
        self.quadratics: list[QuadraticTerm] = []
        self._labels: set = set()
        self._compiled: dict[bool, StandardForm] = {}
        self.meta: dict[str, Any] = {}

    # ------------------------------------------------------------------ building
    def _check_open(self) -> None:
        if self._compiled:
            raise ProgramError("program is frozen after compilation")

    def _claim(self, label: Label) -> None:
        if label is None:
            raise ProgramError("every constraint needs a label")
        if label in self._labels:
            raise ProgramError(f"duplicate constraint label {label!r}")
        self._labels.add(label)

    def _linear(self, coeffs: Linear) -> dict:
        out = {}
        for name, v in coeffs.items():
            if name not in self._index:
                raise ProgramError(f"undeclared variable {name!r}")
            v = float(v)
            if not math.isfinite(v):
                raise ProgramError(f"non-finite coefficient for {name!r}")
            if v != 0.0:
                out[name] = out.get(name, 0.0) + v
        return out

    def add_variable(self, name: Hashable, lb: float | None = None, ub: float | None = None,
                     lb_label: Label | None = None, ub_label: Label | None = None) -> Hashable:
        """Declare a variable; finite bounds become labeled inequalities."""
        self._check_open()
        if name in self._index:
            raise ProgramError(f"variable {name!r} declared twice")
        self._index[name] = len(self.variables)
        self.variables.append(name)
        if lb is not None and math.isfinite(lb):
            self.add_le(lb_label or ("lb", name), {name: -1.0}, -lb)
        if ub is not None and math.isfinite(ub):
            self.add_le(ub_label or ("ub", name), {name: 1.0}, ub)
        return name

    def has_variable(self, name: Hashable) -> bool:
        return name in self._index

    def has_label(self, label: Label) -> bool:
        return label in self._labels

    def add_objective(self, coeffs: Linear, const: float = 0.0) -> None:
        self._check_open()
        for name, v in self._linear(coeffs).items():
            self.objective[name] = self.objective.get(name, 0.0) + v
        self.objective_const += float(const)

    def add_quadratic(self, label: Label, rows: Iterable[tuple[Linear, float]], weight: float = 1.0) -> None:
        """Add ``weight * ||M x + m||^2`` to the objective (``weight > 0``)."""
        self._check_open()
        if not weight > 0:
            raise ProgramError(f"quadratic weight must be positive, got {weight}")
        if label in self._labels or any(q.label == label for q in self.quadratics):
            raise ProgramError(f"duplicate label {label!r}")
        rows = tuple((self._linear(r), float(m)) for r, m in rows)
        self.quadratics.append(QuadraticTerm(label, rows, float(weight)))

    def add_eq(self, label: Label, coeffs: Linear, rhs: float) -> None:
        self._check_open()
        coeffs = self._linear(coeffs)
        self._claim(label)
        self.equalities.append(LinearConstraint(label, coeffs, float(rhs), "eq"))

    def add_le(self, label: Label, coeffs: Linear, rhs: float) -> None:
        self._check_open()
        coeffs = self._linear(coeffs)
        self._claim(label)
        self.inequalities.append(LinearConstraint(label, coeffs, float(rhs), "le"))

    def add_soc(self, label: Label, rows: Iterable[tuple[Linear, float]], t: tuple[Linear, float]) -> None:
        """Add ``||M x + m||_2 <= c.x + d`` with ``rows = [(M_k, m_k)]`` and ``t = (c, d)``."""
        self._check_open()
        rows = tuple((self._linear(r), float(m)) for r, m in rows)
        if not rows:
            raise ProgramError(f"cone {label!r} needs at least one row")
        t = (self._linear(t[0]), float(t[1]))
        self._claim(label)
        self.cones.append(ConeConstraint(label, rows, t))

    # ------------------------------------------------------------------ access
    @property
    def n_vars(self) -> int:
        return len(self.variables)

    def index(self, name: Hashable) -> int:
        return self._index[name]

    @property
    def labels(self) -> set:
        """Labels of all constraints (objective terms excluded)."""
        return set(self._labels)

    def constraint(self, label: Label):
        for group in (self.equalities, self.inequalities, self.cones, self.quadratics):
            for c in group:
                if c.label == label:
                    return c
        raise KeyError(label)

    def objective_value(self, x: np.ndarray) -> float:
        """Objective of the original (unlifted) program at ``x``."""
        val = self.objective_const + sum(v * x[self._index[k]] for k, v in self.objective.items())
        for q in self.quadratics:
            val += q.weight * sum(self._eval(r, m, x) ** 2 for r, m in q.rows)
        return float(val)

    def _eval(self, coeffs: dict, const: float, x: np.ndarray) -> float:
        return const + sum(v * x[self._index[k]] for k, v in coeffs.items())

    # ------------------------------------------------------------------ compile
    @property
    def frozen(self) -> bool:
        return bool(self._compiled)

    def compile(self, lift: bool = False) -> StandardForm:
        """Lower to standard form (cached); the builder is frozen afterwards."""
        if lift in self._compiled:
            return self._compiled[lift]
        n = self.n_vars
        nq = len(self.quadratics) if lift else 0
        ncol = n + nq
        c = np.zeros(ncol)
        c0 = self.objective_const
        for k, v in self.objective.items():
            c[self._index[k]] += v
        prow, pcol, pval = [], [], []
        if not lift:
            # w ||Mx + m||^2 = x'(w M'M)x + 2w m'M x + w m'm
            for q in self.quadratics:
                for r, m in q.rows:
                    items = [(self._index[k], v) for k, v in r.items()]
                    for i, vi in items:
                        c[i] += 2.0 * q.weight * m * vi
                        for j, vj in items:
                            prow.append(i)
                            pcol.append(j)
                            pval.append(2.0 * q.weight * vi * vj)
                    c0 += q.weight * m * m
        P = sp.csc_matrix((pval, (prow, pcol)), shape=(ncol, ncol))
        P.sum_duplicates()
        rows, cols, vals, b = [], [], [], []

        def emit(coeffs: dict, sign: float, rhs: float, extra: dict | None = None) -> None:
            r = len(b)
            for k, v in coeffs.items():
                rows.append(r)
                cols.append(self._index[k])
                vals.append(sign * v)
            for j, v in (extra or {}).items():
                rows.append(r)
                cols.append(j)
                vals.append(v)
            b.append(rhs)

        for e in self.equalities:
            emit(e.coeffs, 1.0, e.rhs)
        for e in self.inequalities:
            emit(e.coeffs, 1.0, e.rhs)
        dims = []
        for cone in self.cones:
            tc, td = cone.t
            emit(tc, -1.0, td)
            for r, m in cone.rows:
                emit(r, -1.0, m)
            dims.append(1 + len(cone.rows))
        # weight*||Mx+m||^2 <= tau  <=>  ||(2 sqrt(w)(Mx+m), tau - 1)|| <= tau + 1
        for k, q in enumerate(self.quadratics if lift else ()):
            tau = n + k
            c[tau] = 1.0
            emit({}, 0.0, 1.0, {tau: -1.0})
            s = 2.0 * math.sqrt(q.weight)
            for r, m in q.rows:
                emit({key: s * v for key, v in r.items()}, -1.0, s * m)
            emit({}, 0.0, -1.0, {tau: -1.0})
            dims.append(len(q.rows) + 2)
        A = sp.csc_matrix((vals, (rows, cols)), shape=(len(b), ncol))
        A.sum_duplicates()
        self._compiled[lift] = StandardForm(
            P=P, c=c, c0=c0, A=A, b=np.asarray(b, dtype=float),
            n_eq=len(self.equalities), n_le=len(self.inequalities),
            soc_dims=tuple(dims), n_user=n,
        )
        return self._compiled[lift]

    freeze = compile


@dataclass
class Solution:
    """Primal/dual result of a conic solve, with duals in the kernel convention."""

    status: str
    objective: float
    primal: dict = field(default_factory=dict)
    duals: dict = field(default_factory=dict)
    stats: dict = field(default_factory=dict)
    x: np.ndarray | None = None
    z: np.ndarray | None = None
    program: ConicProgram | None = field(default=None, repr=False)

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"

    def value(self, name: Hashable, default: float = 0.0) -> float:
        return float(self.primal.get(name, default))

    def dual(self, label: Label, default: float | None = None):
        if label in self.duals:
            return self.duals[label]
        if default is None:
            raise KeyError(f"no dual for {label!r}")
        return default
