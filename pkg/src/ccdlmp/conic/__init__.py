from .backends import BACKEND_ENV, BACKENDS, default_backend, solve
from .diagnostics import DiagnosticsError, KKTReport, duality_gap, kkt_residuals
from .program import ConicProgram, ProgramError, Solution, StandardForm

__all__ = [
    "BACKEND_ENV", "BACKENDS", "ConicProgram", "DiagnosticsError", "KKTReport",
    "ProgramError", "Solution", "StandardForm", "default_backend", "duality_gap",
    "kkt_residuals", "solve",
]
