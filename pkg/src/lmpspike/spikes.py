"""Price-spike events and their exponential decay rates.

A spike at node i means the nodal price leaves its band [alpha_i-, alpha_i+].
Under a Gaussian injection model with rate function
I(theta) = 1/2 (theta - mu)' Sigma^{-1} (theta - mu), the probability of a
spike decays like exp(-I*/eps) where I* minimizes I over the spike event.
Because prices are affine on each critical region, the event decomposes into
per-node, per-region, per-side polytope pieces, and each piece minimum is a
small convex QP; strict inequalities are handled by minimizing over closures,
which leaves the infimum unchanged since the pieces are open within each
region interior.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from . import lp, qp
from .errors import ConfigError, InfeasibleError
from .opf import LMPVector
from .regions import CriticalRegion, RegionDecomposition

UNREACHABLE = float("inf")


@dataclass(frozen=True)
class SpikeSpec:
    """Per-node price bands whose violation constitutes a spike."""
    alpha_minus: np.ndarray
    alpha_plus: np.ndarray
    lmp_at_mean: np.ndarray
    err_rel: float | None = None
    node_filter: tuple[int, ...] | None = None  # node indices, 0-based

    def __post_init__(self):
        am = np.asarray(self.alpha_minus, dtype=float)
        ap = np.asarray(self.alpha_plus, dtype=float)
        ref = np.asarray(self.lmp_at_mean, dtype=float)
        object.__setattr__(self, "alpha_minus", am)
        object.__setattr__(self, "alpha_plus", ap)
        object.__setattr__(self, "lmp_at_mean", ref)
        if not (am.shape == ap.shape == ref.shape):
            raise ConfigError("threshold vectors must share the price vector shape")
        bad = np.where(~((am < ref) & (ref < ap)))[0]
        if bad.size:
            raise ConfigError(
                "price at the mean must lie strictly inside the band; "
                f"violated at node indices {bad.tolist()}")

    @property
    def n(self) -> int:
        return self.alpha_minus.size

    def nodes(self) -> tuple[int, ...]:
        if self.node_filter is None:
            return tuple(range(self.n))
        return tuple(self.node_filter)


def build_thresholds(lmp_at_mean, err_rel: float,
                     node_filter=None) -> SpikeSpec:
    """Symmetric relative bands around the price at the mean injection."""
    if isinstance(lmp_at_mean, LMPVector):
        lmp_at_mean = lmp_at_mean.values
    ref = np.asarray(lmp_at_mean, dtype=float)
    if not err_rel > 0.0:
        raise ConfigError("err_rel must be positive")
    zero = np.where(ref == 0.0)[0]
    if zero.size:
        raise ConfigError("price at the mean is zero at node indices "
                          f"{zero.tolist()}: relative band is degenerate")
    half = err_rel * np.abs(ref)
    return SpikeSpec(alpha_minus=ref - half, alpha_plus=ref + half,
                     lmp_at_mean=ref, err_rel=err_rel,
                     node_filter=tuple(node_filter) if node_filter is not None
                     else None)


class RateFunction:
    """Gaussian large-fluctuation rate: quadratic form in the precision matrix."""

    def __init__(self, mu_theta, sigma_theta, epsilon: float = 1.0):
        self.mu_theta = np.atleast_1d(np.asarray(mu_theta, dtype=float))
        self.sigma_theta = np.atleast_2d(np.asarray(sigma_theta, dtype=float))
        if not epsilon > 0.0:
            raise ConfigError("noise scale epsilon must be positive")
        self.epsilon = float(epsilon)
        if self.sigma_theta.shape != (self.mu_theta.size, self.mu_theta.size):
            raise ConfigError("covariance shape does not match the mean")
        try:
            self._chol = cho_factor(self.sigma_theta, lower=True)
        except np.linalg.LinAlgError:
            raise ConfigError("covariance must be positive definite") from None
        self._precision = cho_solve(self._chol, np.eye(self.mu_theta.size))
        self._precision = 0.5 * (self._precision + self._precision.T)

    @property
    def dim(self) -> int:
        return self.mu_theta.size

    @property
    def precision(self) -> np.ndarray:
        return self._precision

    def rate(self, theta) -> float | np.ndarray:
        """1/2 (theta-mu)' Sigma^{-1} (theta-mu); vectorized over rows."""
        theta = np.asarray(theta, dtype=float)
        d = theta - self.mu_theta
        if d.ndim == 1:
            return 0.5 * float(d @ cho_solve(self._chol, d))
        sol = cho_solve(self._chol, d.T).T
        return 0.5 * np.einsum("ij,ij->i", d, sol)


def rate(rf: RateFunction, theta):
    return rf.rate(theta)


@dataclass(frozen=True)
class PieceMinimum:
    rate: float
    theta: np.ndarray
    region_id: int


def minimize_rate_piece(rf: RateFunction, region: CriticalRegion, node: int,
                        sign: str, spec: SpikeSpec) -> PieceMinimum | None:
    """Minimum of the rate over one spike piece, or None when the piece is empty.

    The piece is the closure of {theta in the region interior : price at
    `node` beyond the band on side `sign`}; emptiness of the open piece is
    decided by a support LP before any minimization.
    """
    if sign not in ("+", "-"):
        raise ValueError("sign must be '+' or '-'")
    crow = region.lmp_C[node]
    cval = float(region.lmp_c[node])
    alpha = float(spec.alpha_plus[node] if sign == "+" else spec.alpha_minus[node])
    poly = region.polytope
    row_scale = float(np.linalg.norm(crow))
    strict_tol = 1e-9 * (1.0 + abs(alpha))

    if row_scale <= 1e-12:
        # constant price over the region: the piece is all of it or nothing
        in_spike = cval > alpha + strict_tol if sign == "+" \
            else cval < alpha - strict_tol
        if not in_spike:
            return None
        G, w = poly.G, poly.w
    else:
        direction = crow if sign == "+" else -crow
        res = lp.solve_lp(-direction, A_ub=poly.G, b_ub=poly.w)
        if res.status != lp.OPTIMAL:
            return None  # empty or unbounded region slice: nothing to spike
        extreme = -res.fun + (cval if sign == "+" else -cval)
        threshold = alpha if sign == "+" else -alpha
        if extreme <= threshold + strict_tol:
            return None  # price never exits the band inside this region
        if sign == "+":
            G = np.vstack([poly.G, -crow.reshape(1, -1)])
            w = np.concatenate([poly.w, [cval - alpha]])
        else:
            G = np.vstack([poly.G, crow.reshape(1, -1)])
            w = np.concatenate([poly.w, [alpha - cval]])

    H = rf.precision
    h = -H @ rf.mu_theta
    try:
        res = qp.solve_qp(H, h, A_in=G, b_in=w)
    except InfeasibleError:
        return None
    theta_star = res.x
    return PieceMinimum(rate=float(rf.rate(theta_star)), theta=theta_star,
                        region_id=region.id)


@dataclass(frozen=True)
class SpikeDecayResult:
    """Decay-rate minimizer for one node and one side of the band."""
    node: int
    sign: str
    rate: float
    theta_star: np.ndarray | None
    region_id: int | None
    boundary_gap: float | None
    on_theta_boundary: bool

    @property
    def reachable(self) -> bool:
        return math.isfinite(self.rate)


@dataclass
class SpikeAnalysis:
    """Per-node decay rates, their minimizers, and the overall event rate."""
    spec: SpikeSpec
    per_side: dict[tuple[int, str], SpikeDecayResult]
    node_rates: dict[int, float]
    overall_rate: float
    epsilon: float = 1.0

    def result(self, node: int, sign: str) -> SpikeDecayResult:
        return self.per_side[(node, sign)]

    def nodes(self) -> list[int]:
        return sorted(self.node_rates)


def decay_rates(decomposition: RegionDecomposition, rf: RateFunction,
                spec: SpikeSpec) -> SpikeAnalysis:
    """Minimize the rate over every per-node spike piece and aggregate.

    A node whose price never leaves its band anywhere in the parameter set
    gets an infinite rate (event unreachable).  For finite rates the minimizer
    is recorded together with its region, the gap between the map price and
    the threshold, and whether it sits on the parameter-set boundary.
    """
    theta_poly = decomposition.theta_space
    boundary_tol = 1e-7 * (1.0 + float(np.abs(theta_poly.w).max()
                                       if theta_poly.n_rows else 1.0))
    per_side: dict[tuple[int, str], SpikeDecayResult] = {}
    node_rates: dict[int, float] = {}
    for node in spec.nodes():
        for sign in ("-", "+"):
            best: PieceMinimum | None = None
            for region in decomposition.regions:
                piece = minimize_rate_piece(rf, region, node, sign, spec)
                if piece is None:
                    continue
                if best is None or piece.rate < best.rate:
                    best = piece
            if best is None:
                per_side[(node, sign)] = SpikeDecayResult(
                    node=node, sign=sign, rate=UNREACHABLE, theta_star=None,
                    region_id=None, boundary_gap=None, on_theta_boundary=False)
                continue
            region = decomposition.regions[best.region_id]
            alpha = float(spec.alpha_plus[node] if sign == "+"
                          else spec.alpha_minus[node])
            gap = abs(float(region.lmp_at(best.theta)[node]) - alpha)
            on_boundary = bool(np.any(
                theta_poly.G @ best.theta >= theta_poly.w - boundary_tol)) \
                if theta_poly.n_rows else False
            per_side[(node, sign)] = SpikeDecayResult(
                node=node, sign=sign, rate=best.rate, theta_star=best.theta,
                region_id=best.region_id, boundary_gap=gap,
                on_theta_boundary=on_boundary)
        node_rates[node] = min(per_side[(node, "-")].rate,
                               per_side[(node, "+")].rate)
    overall = min(node_rates.values()) if node_rates else UNREACHABLE
    return SpikeAnalysis(spec=spec, per_side=per_side, node_rates=node_rates,
                         overall_rate=overall, epsilon=rf.epsilon)


@dataclass(frozen=True)
class NodeRanking:
    """Nodes ordered by ascending decay rate (most spike-prone first)."""
    nodes: tuple[int, ...]
    rates: tuple[float, ...]
    normalized_scores: tuple[float, ...]  # -min_k rate_k / rate_i, in [-1, 0]

    def position(self, node: int) -> int:
        return self.nodes.index(node)


def rank_nodes(analysis: SpikeAnalysis) -> NodeRanking:
    """Ascending rates; exact ties fall back to node index order."""
    items = sorted(analysis.node_rates.items(), key=lambda kv: (kv[1], kv[0]))
    nodes = tuple(node for node, _ in items)
    rates = tuple(r for _, r in items)
    finite = [r for r in rates if math.isfinite(r)]
    best = min(finite) if finite else UNREACHABLE
    scores = tuple(
        0.0 if not math.isfinite(r) else (-best / r if r > 0.0 else -1.0)
        for r in rates)
    return NodeRanking(nodes=nodes, rates=rates, normalized_scores=scores)


def approx_probability(rate_value: float, epsilon: float = 1.0) -> float:
    """Leading-order spike probability exp(-rate/eps); no prefactor."""
    if not epsilon > 0.0:
        raise ConfigError("epsilon must be positive")
    if not math.isfinite(rate_value):
        return 0.0
    return math.exp(-rate_value / epsilon)


def write_decay_csv(analysis: SpikeAnalysis, ranking: NodeRanking, path,
                    node_ids=None) -> None:
    """Per-node export: rates per side, minimizer, region, score and rank.

    `node_ids` maps internal 0-based node indices to external bus ids for the
    output; defaults to index + 1.
    """
    n_t = next((r.theta_star.size for r in analysis.per_side.values()
                if r.theta_star is not None), 0)
    rank_of = {node: k + 1 for k, node in enumerate(ranking.nodes)}
    score_of = dict(zip(ranking.nodes, ranking.normalized_scores))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        header = (["node", "I_star_minus", "I_star_plus", "I_star"]
                  + [f"theta_star_{k + 1}" for k in range(n_t)]
                  + ["region_id", "normalized_score", "rank"])
        writer.writerow(header)
        for node in analysis.nodes():
            minus = analysis.result(node, "-")
            plus = analysis.result(node, "+")
            rate_i = analysis.node_rates[node]
            winner = minus if minus.rate <= plus.rate else plus
            theta_cols = ([repr(float(v)) for v in winner.theta_star]
                          if winner.theta_star is not None else [""] * n_t)
            writer.writerow(
                [node_ids[node] if node_ids else node + 1,
                 _fmt_rate(minus.rate), _fmt_rate(plus.rate), _fmt_rate(rate_i)]
                + theta_cols
                + [winner.region_id if winner.region_id is not None else "",
                   repr(float(score_of[node])), rank_of[node]])


def _fmt_rate(value: float) -> str:
    return "" if not math.isfinite(value) else repr(float(value))
