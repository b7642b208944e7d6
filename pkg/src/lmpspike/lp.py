"""Thin wrapper around scipy's HiGHS linear-programming backend.

All variables are free unless explicit bounds are passed; scipy's default of
x >= 0 is never wanted here.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from .errors import NumericalError

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"


@dataclass(frozen=True)
class LPResult:
    status: str
    x: np.ndarray | None
    fun: float | None


def solve_lp(c, A_ub=None, b_ub=None, A_eq=None, b_eq=None, bounds=None) -> LPResult:
    """Minimize c @ x subject to A_ub x <= b_ub and A_eq x = b_eq."""
    c = np.asarray(c, dtype=float)
    if bounds is None:
        bounds = [(None, None)] * c.size
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq,
                  bounds=bounds, method="highs")
    if res.status == 0:
        return LPResult(OPTIMAL, np.asarray(res.x, dtype=float), float(res.fun))
    if res.status == 2:
        return LPResult(INFEASIBLE, None, None)
    if res.status == 3:
        return LPResult(UNBOUNDED, None, None)
    raise NumericalError(f"LP solver failed with status {res.status}: {res.message}")
