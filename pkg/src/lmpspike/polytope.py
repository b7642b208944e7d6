"""Halfspace polytopes {x : G x <= w} and the operations the region machinery needs.

Everything here is LP-backed (HiGHS): emptiness, Chebyshev centers, redundancy
removal, facet interior points and axis extremes.  Fourier-Motzkin projection
with per-step pruning handles the feasible-parameter-set construction, where a
handful of dispatch variables get eliminated from the joint constraint system.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import lp
from .errors import InfeasibleError, NumericalError

# rows with coefficient norm below this are treated as constant constraints
ZERO_ROW_TOL = 1e-11


@dataclass(frozen=True)
class Polytope:
    G: np.ndarray
    w: np.ndarray
    _cheb: tuple[np.ndarray, float] | None = field(default=None, compare=False)

    @staticmethod
    def from_rows(G, w) -> "Polytope":
        G = np.atleast_2d(np.asarray(G, dtype=float))
        w = np.atleast_1d(np.asarray(w, dtype=float))
        if G.shape[0] != w.shape[0]:
            raise ValueError("G and w row counts differ")
        return Polytope(G, w)

    @property
    def dim(self) -> int:
        return self.G.shape[1]

    @property
    def n_rows(self) -> int:
        return self.G.shape[0]

    def normalized(self) -> "Polytope":
        """Scale every row to unit norm; drop trivially true constant rows."""
        G, w = [], []
        for gi, wi in zip(self.G, self.w):
            r = np.linalg.norm(gi)
            if r <= ZERO_ROW_TOL:
                if wi < -1e-9:
                    # 0 <= w with w < 0: keep a marker row that makes the set empty
                    G.append(np.zeros(self.dim))
                    w.append(float(wi))
                continue
            G.append(gi / r)
            w.append(wi / r)
        if not G:
            return Polytope(np.zeros((0, self.dim)), np.zeros(0))
        return Polytope(np.asarray(G), np.asarray(w))

    def intersect(self, other: "Polytope") -> "Polytope":
        return Polytope(np.vstack([self.G, other.G]),
                        np.concatenate([self.w, other.w]))

    def contains(self, x, tol=1e-9) -> bool:
        x = np.asarray(x, dtype=float)
        if self.n_rows == 0:
            return True
        return bool(np.all(self.G @ x <= self.w + tol * (1.0 + np.abs(self.w))))

    def chebyshev(self) -> tuple[np.ndarray, float]:
        """Center and radius of the largest inscribed ball.

        The radius is capped so unbounded polyhedra do not break the LP; a
        negative radius signals emptiness.
        """
        if self._cheb is not None:
            return self._cheb
        p = self.normalized()
        if p.n_rows == 0:
            center, radius = np.zeros(self.dim), np.inf
        else:
            d = self.dim
            cap = 1e12
            c = np.zeros(d + 1)
            c[-1] = -1.0
            A = np.hstack([p.G, np.ones((p.n_rows, 1))])
            bounds = [(None, None)] * d + [(None, cap)]
            res = lp.solve_lp(c, A_ub=A, b_ub=p.w, bounds=bounds)
            if res.status != lp.OPTIMAL:
                raise NumericalError(f"Chebyshev LP status {res.status}")
            center, radius = res.x[:d], float(res.x[d])
        object.__setattr__(self, "_cheb", (center, radius))
        return center, radius

    def is_empty(self, tol=1e-9) -> bool:
        try:
            _, r = self.chebyshev()
        except NumericalError:
            return True
        return r < -tol

    def remove_redundancy(self, tol=1e-8) -> "Polytope":
        """Minimal representation; one LP per surviving row.

        Near-duplicate rows are collapsed first so the LP loop sees each
        halfspace once.
        """
        p = self.normalized()
        if p.n_rows == 0 or p.is_empty():
            return p
        keep_rows: list[int] = []
        for i in range(p.n_rows):
            dup = False
            for j in keep_rows:
                if (np.abs(p.G[i] - p.G[j]).max() <= 1e-9 and
                        abs(p.w[i] - p.w[j]) <= 1e-9 * (1.0 + abs(p.w[j]))):
                    dup = True
                    break
            if not dup:
                keep_rows.append(i)
        G, w = p.G[keep_rows], p.w[keep_rows]

        alive = list(range(G.shape[0]))
        for i in range(G.shape[0]):
            others = [j for j in alive if j != i]
            if not others:
                continue
            relaxed_w = w.copy()
            relaxed_w[i] += 1.0
            rows = others + [i]
            res = lp.solve_lp(-G[i], A_ub=G[rows], b_ub=relaxed_w[rows])
            if res.status == lp.UNBOUNDED:
                continue  # the face extends to infinity: certainly not redundant
            if res.status != lp.OPTIMAL:
                raise NumericalError(f"redundancy LP status {res.status}")
            if -res.fun <= w[i] + tol:
                alive.remove(i)
        return Polytope(G[alive], w[alive])

    def facet_point(self, i: int) -> np.ndarray | None:
        """Chebyshev center of facet i (None when the facet LP is infeasible)."""
        p = self.normalized()
        d = self.dim
        c = np.zeros(d + 1)
        c[-1] = -1.0
        rows = [j for j in range(p.n_rows) if j != i]
        A = np.hstack([p.G[rows], np.ones((len(rows), 1))])
        Ae = np.hstack([p.G[i].reshape(1, -1), np.zeros((1, 1))])
        bounds = [(None, None)] * d + [(0.0, 1e12)]
        res = lp.solve_lp(c, A_ub=A, b_ub=p.w[rows], A_eq=Ae, b_eq=[p.w[i]],
                          bounds=bounds)
        if res.status != lp.OPTIMAL:
            return None
        return res.x[:d]

    def support(self, direction) -> float:
        """max direction @ x over the polytope (inf when unbounded)."""
        res = lp.solve_lp(-np.asarray(direction, dtype=float),
                          A_ub=self.G, b_ub=self.w)
        if res.status == lp.UNBOUNDED:
            return np.inf
        if res.status == lp.INFEASIBLE:
            raise InfeasibleError("support of empty polytope")
        return -res.fun

    def bounding_box(self) -> tuple[np.ndarray, np.ndarray]:
        lo = np.empty(self.dim)
        hi = np.empty(self.dim)
        for k in range(self.dim):
            e = np.zeros(self.dim)
            e[k] = 1.0
            hi[k] = self.support(e)
            lo[k] = -self.support(-e)
        return lo, hi

    def to_dict(self) -> dict:
        return {"G": self.G.tolist(), "w": self.w.tolist()}

    @staticmethod
    def from_dict(d: dict) -> "Polytope":
        return Polytope.from_rows(d["G"], d["w"])


def box_polytope(lo, hi) -> Polytope:
    lo = np.atleast_1d(np.asarray(lo, dtype=float))
    hi = np.atleast_1d(np.asarray(hi, dtype=float))
    d = lo.size
    eye = np.eye(d)
    return Polytope(np.vstack([eye, -eye]), np.concatenate([hi, -lo]))


def fourier_motzkin(A, b, eliminate, prune_tol=1e-8) -> tuple[np.ndarray, np.ndarray]:
    """Project {x : A x <= b} onto the coordinates not in `eliminate`.

    Eliminated columns are removed one at a time; after each elimination the
    system is pruned by LP redundancy removal to keep the row count from
    exploding.  Returns rows over the surviving coordinates, in their original
    order.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float)).copy()
    b = np.atleast_1d(np.asarray(b, dtype=float)).copy()
    eliminate = sorted(eliminate, reverse=True)
    for col in eliminate:
        coeff = A[:, col]
        pos = np.where(coeff > ZERO_ROW_TOL)[0]
        neg = np.where(coeff < -ZERO_ROW_TOL)[0]
        zero = np.where(np.abs(coeff) <= ZERO_ROW_TOL)[0]
        rows = [np.delete(A[zero], col, axis=1)]
        rhs = [b[zero]]
        for i in pos:
            for j in neg:
                # combine a_i x <= b_i (coeff>0) with a_j x <= b_j (coeff<0)
                lam_i, lam_j = -coeff[j], coeff[i]
                row = lam_i * A[i] + lam_j * A[j]
                rows.append(np.delete(row, col).reshape(1, -1))
                rhs.append(np.atleast_1d(lam_i * b[i] + lam_j * b[j]))
        A = np.vstack(rows)
        b = np.concatenate(rhs)
        p = Polytope(A, b)
        if p.is_empty():
            raise InfeasibleError("projection is empty")
        p = p.remove_redundancy(tol=prune_tol)
        A, b = p.G, p.w
    return A, b
