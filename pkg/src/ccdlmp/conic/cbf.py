"""Write a compiled program in the Conic Benchmark Format (CBF, version 3).

Constraint labels are emitted as comment lines so the file can be matched
row by row against the builder.
"""
from __future__ import annotations

from io import StringIO
from pathlib import Path

from .program import ConicProgram


def dumps(program: ConicProgram) -> str:
    sf = program.compile(lift=True)
    out = StringIO()
    w = out.write
    w(f"# {program.name}\n")
    w("VER\n3\n\nOBJSENSE\nMIN\n\n")
    n = sf.A.shape[1]
    w(f"VAR\n{n} 1\nF {n}\n\n")
    # CBF rows are  -A x + b  in K, the same slack as A x + s = b
    blocks = []
    if sf.n_eq:
        blocks.append(("L=", sf.n_eq))
    if sf.n_le:
        blocks.append(("L+", sf.n_le))
    blocks.extend(("Q", d) for d in sf.soc_dims)
    w(f"CON\n{sf.A.shape[0]} {len(blocks)}\n")
    for kind, d in blocks:
        w(f"{kind} {d}\n")
    w("\n")
    labels = ([e.label for e in program.equalities] + [e.label for e in program.inequalities]
              + [c.label for c in program.cones] + [q.label for q in program.quadratics])
    for k, lab in enumerate(labels[: sf.n_eq + sf.n_le]):
        w(f"# row {k}: {lab!r}\n")
    row = sf.n_eq + sf.n_le
    for lab, d in zip(labels[sf.n_eq + sf.n_le:], sf.soc_dims):
        w(f"# rows {row}-{row + d - 1}: {lab!r}\n")
        row += d
    c = [(j, float(v)) for j, v in enumerate(sf.c) if v != 0.0]
    w(f"\nOBJACOORD\n{len(c)}\n")
    for j, v in c:
        w(f"{j} {v!r}\n")
    if sf.c0:
        w(f"\nOBJBCOORD\n{float(sf.c0)!r}\n")
    A = sf.A.tocoo()
    w(f"\nACOORD\n{A.nnz}\n")
    for i, j, v in sorted(zip(A.row.tolist(), A.col.tolist(), A.data.tolist())):
        w(f"{i} {j} {-v!r}\n")
    b = [(i, float(v)) for i, v in enumerate(sf.b) if v != 0.0]
    w(f"\nBCOORD\n{len(b)}\n")
    for i, v in b:
        w(f"{i} {v!r}\n")
    return out.getvalue()


def dump(program: ConicProgram, path: str | Path) -> Path:
    path = Path(path)
    path.write_text(dumps(program))
    return path
