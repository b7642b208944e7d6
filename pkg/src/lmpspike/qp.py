"""Dense primal active-set solver for small strictly convex QPs.

Solves
    min  1/2 x' H x + h' x
    s.t. A_eq x  = b_eq
         A_in x <= b_in
with H symmetric positive definite.  The solver iterates on a working set of
inequality rows, re-solving the equality-constrained KKT system from scratch
each time; at the sizes this package deals in (a handful of variables, tens
of rows) a fresh dense solve is both faster and more predictable than factor
updates.

The exact final active set and the Lagrange multipliers are first-class
outputs: downstream code reconstructs parametric solution maps from them.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import lp
from .errors import InfeasibleError, NumericalError


@dataclass
class QPResult:
    x: np.ndarray
    objective: float
    eq_duals: np.ndarray          # one per equality row, free sign
    ineq_duals: np.ndarray        # one per inequality row, >= 0, zero off the active set
    working_set: tuple[int, ...]  # inequality rows active at the solution
    iterations: int = 0
    # stationarity convention: H x + h + A_eq' eq_duals + A_in' ineq_duals = 0
    stationarity_residual: float = field(default=0.0)


def _as_2d(a, ncols):
    if a is None:
        return np.zeros((0, ncols))
    a = np.asarray(a, dtype=float)
    if a.ndim == 1:
        a = a.reshape(1, -1)
    return a


def phase1_point(A_eq, b_eq, A_in, b_in, tol=1e-7):
    """Find a feasible point via an elastic LP, or raise InfeasibleError."""
    n = A_in.shape[1] if A_in.size else A_eq.shape[1]
    # variables (x, s): minimize s with A_in x - s <= b_in, A_eq x = b_eq, s >= 0
    c = np.zeros(n + 1)
    c[-1] = 1.0
    A_ub = None
    if A_in.shape[0]:
        A_ub = np.hstack([A_in, -np.ones((A_in.shape[0], 1))])
    Ae = None
    be = None
    if A_eq.shape[0]:
        Ae = np.hstack([A_eq, np.zeros((A_eq.shape[0], 1))])
        be = b_eq
    bounds = [(None, None)] * n + [(0.0, None)]
    res = lp.solve_lp(c, A_ub=A_ub, b_ub=b_in if A_in.shape[0] else None,
                      A_eq=Ae, b_eq=be, bounds=bounds)
    if res.status != lp.OPTIMAL:
        raise NumericalError(f"phase-1 LP ended with status {res.status}")
    scale = 1.0 + (np.abs(b_in).max() if b_in.size else 0.0)
    if res.fun > tol * scale:
        raise InfeasibleError(f"no feasible point (phase-1 slack {res.fun:.3e})")
    x0 = res.x[:n]
    if A_eq.shape[0]:
        # re-project onto the equalities; the LP satisfies them only to solver tolerance
        r = b_eq - A_eq @ x0
        x0 = x0 + A_eq.T @ np.linalg.solve(A_eq @ A_eq.T, r)
    return x0


def _kkt_solve(H, h, A_eq, b_eq, A_act, b_act):
    """Solve the equality-constrained QP given by the working set."""
    n = H.shape[0]
    ne, na = A_eq.shape[0], A_act.shape[0]
    K = np.zeros((n + ne + na, n + ne + na))
    K[:n, :n] = H
    if ne:
        K[:n, n:n + ne] = A_eq.T
        K[n:n + ne, :n] = A_eq
    if na:
        K[:n, n + ne:] = A_act.T
        K[n + ne:, :n] = A_act
    rhs = np.concatenate([-h, b_eq, b_act])
    try:
        sol = np.linalg.solve(K, rhs)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("singular KKT system in active-set iteration") from exc
    return sol[:n], sol[n:n + ne], sol[n + ne:]


def solve_qp(H, h, A_eq=None, b_eq=None, A_in=None, b_in=None, x0=None,
             max_iter=None, tol=1e-9) -> QPResult:
    """Primal active-set method; requires H positive definite.

    Raises InfeasibleError when the constraints admit no point, and
    NumericalError on iteration-limit or linear-algebra failure.
    """
    H = np.asarray(H, dtype=float)
    h = np.asarray(h, dtype=float)
    n = H.shape[0]
    A_eq = _as_2d(A_eq, n)
    b_eq = np.zeros(0) if b_eq is None else np.atleast_1d(np.asarray(b_eq, dtype=float))
    A_in = _as_2d(A_in, n)
    b_in = np.zeros(0) if b_in is None else np.atleast_1d(np.asarray(b_in, dtype=float))
    m = A_in.shape[0]
    if max_iter is None:
        max_iter = 100 * (n + m + 1)

    feas_tol = tol * (1.0 + (np.abs(b_in).max() if m else 0.0))
    if x0 is None:
        x = phase1_point(A_eq, b_eq, A_in, b_in)
    else:
        x = np.asarray(x0, dtype=float).copy()
        bad_eq = A_eq.shape[0] and np.abs(A_eq @ x - b_eq).max() > feas_tol
        bad_in = m and (A_in @ x - b_in).max() > feas_tol
        if bad_eq or bad_in:
            x = phase1_point(A_eq, b_eq, A_in, b_in)

    work: list[int] = []
    for it in range(max_iter):
        A_act = A_in[work] if work else np.zeros((0, n))
        b_act = b_in[work] if work else np.zeros(0)
        x_new, nu_eq, nu_act = _kkt_solve(H, h, A_eq, b_eq, A_act, b_act)
        p = x_new - x

        if np.abs(p).max() <= tol * (1.0 + np.abs(x_new).max()):
            # stationary on the working set: check dual feasibility
            if work:
                dual_tol = tol * (1.0 + np.abs(nu_act).max())
                worst = int(np.argmin(nu_act))
                if nu_act[worst] < -dual_tol:
                    # Bland-style: among sufficiently negative duals drop the
                    # lowest row index to avoid cycling
                    neg = [k for k in range(len(work)) if nu_act[k] < -dual_tol]
                    k = min(neg, key=lambda j: work[j])
                    work.pop(k)
                    continue
            ineq_duals = np.zeros(m)
            for k, row in enumerate(work):
                ineq_duals[row] = max(nu_act[k], 0.0)
            resid = H @ x_new + h
            if A_eq.shape[0]:
                resid = resid + A_eq.T @ nu_eq
            if m:
                resid = resid + A_in.T @ ineq_duals
            obj = 0.5 * x_new @ H @ x_new + h @ x_new
            return QPResult(x_new, float(obj), nu_eq, ineq_duals, tuple(sorted(work)),
                            iterations=it + 1,
                            stationarity_residual=float(np.abs(resid).max()))

        # ratio test against rows outside the working set
        alpha = 1.0
        blocker = -1
        if m:
            in_work = set(work)
            for i in range(m):
                if i in in_work:
                    continue
                d = A_in[i] @ p
                if d <= tol * (1.0 + np.abs(A_in[i]).max() * np.abs(p).max()):
                    continue
                slack = b_in[i] - A_in[i] @ x
                ratio = max(slack, 0.0) / d
                if ratio < alpha - 1e-12:
                    alpha = ratio
                    blocker = i
                elif blocker >= 0 and abs(ratio - alpha) <= 1e-12 and i < blocker:
                    blocker = i
        x = x + alpha * p
        if blocker >= 0:
            work.append(blocker)
    raise NumericalError(f"active-set QP did not converge in {max_iter} iterations")
