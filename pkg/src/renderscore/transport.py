"""Discrete transportation solver underlying every earth-mover computation.

``solve_transport`` finds the minimum-cost flow between two weighted point
sets given a dense cost matrix:

    min Σ f_kl C[k,l]   s.t.  f_kl >= 0,
                              Σ_l f_kl <= supply_k,
                              Σ_k f_kl <= demand_l,
                              Σ f_kl == min(Σ supply, Σ demand).

Unequal totals are absorbed by a zero-cost dummy node on the deficit side,
which turns the problem into a balanced one solved exactly by a network
simplex (see _simplex). An opt-in entropic approximation is available for
supports too large for the exact method; plans produced that way are flagged
and skip the strict feasibility checks.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._simplex import STATUS_OPTIMAL, solve_transport_dense
from .errors import DimensionMismatch, EmptySignature

FEASIBILITY_EPS = 1e-9


@dataclass(frozen=True, eq=False)
class Signature:
    """Discrete distribution of features: (n, d) points with nonnegative weights.

    Zero-weight support points are dropped on construction; they never affect
    a transport objective.
    """

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=np.float64))
        w = np.asarray(self.weights, dtype=np.float64).ravel()
        if pts.shape[0] != w.shape[0]:
            raise DimensionMismatch(
                f"{pts.shape[0]} points vs {w.shape[0]} weights")
        if w.size and w.min() < 0.0:
            raise ValueError("signature weights must be nonnegative")
        keep = w > 0.0
        if not keep.all():
            pts = pts[keep]
            w = w[keep]
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    @property
    def total_mass(self) -> float:
        return float(self.weights.sum())


@dataclass(frozen=True, eq=False)
class TransportPlan:
    """Optimal flow between two weighted supports plus its objective value."""

    rows: np.ndarray       # supply indices of nonzero flows
    cols: np.ndarray       # demand indices
    values: np.ndarray     # flow amounts, all > 0
    objective: float
    moved_mass: float
    approximate: bool = False

    def dense(self, m: int, n: int) -> np.ndarray:
        out = np.zeros((m, n), dtype=np.float64)
        out[self.rows, self.cols] = self.values
        return out


def _as_weights(x) -> np.ndarray:
    if isinstance(x, Signature):
        return x.weights
    return np.asarray(x, dtype=np.float64).ravel()


def solve_transport(supply, demand, cost, method: str = "exact",
                    reg: float = 1e-2, max_iter: int = 500) -> TransportPlan:
    """Solve the transportation problem between two weight vectors.

    ``supply``/``demand`` may be raw weight arrays or Signatures (only the
    weights are used; the cost matrix already encodes the geometry).
    ``method`` is "exact" (network simplex, default) or "sinkhorn"
    (entropic approximation, flagged on the returned plan).
    """
    a = _as_weights(supply)
    b = _as_weights(demand)
    cost = np.ascontiguousarray(cost, dtype=np.float64)
    if cost.ndim != 2 or cost.shape != (a.shape[0], b.shape[0]):
        raise DimensionMismatch(
            f"cost is {cost.shape}, expected {(a.shape[0], b.shape[0])}")
    if a.size and a.min() < 0.0 or b.size and b.min() < 0.0:
        raise ValueError("weights must be nonnegative")
    total_a = float(a.sum())
    total_b = float(b.sum())
    if total_a <= 0.0 or total_b <= 0.0:
        raise EmptySignature("both sides need positive total mass")

    # drop zero-weight points, remembering original indices
    keep_a = np.where(a > 0.0)[0]
    keep_b = np.where(b > 0.0)[0]
    aa = a[keep_a]
    bb = b[keep_b]
    cc = cost[np.ix_(keep_a, keep_b)]

    if method == "sinkhorn":
        rows, cols, vals, objective = _sinkhorn_plan(cc, aa, bb, reg, max_iter)
        moved = float(vals.sum())
        return TransportPlan(keep_a[rows], keep_b[cols], vals,
                             float(objective), moved, approximate=True)
    if method != "exact":
        raise ValueError(f"unknown method {method!r}")

    m, n = aa.shape[0], bb.shape[0]
    diff = total_a - total_b
    if diff > FEASIBILITY_EPS:
        # excess supply: dummy demand column at zero cost
        cc = np.hstack([cc, np.zeros((m, 1))])
        bb = np.append(bb, diff)
    elif diff < -FEASIBILITY_EPS:
        cc = np.vstack([cc, np.zeros((1, n))])
        aa = np.append(aa, -diff)
    cc = np.ascontiguousarray(cc)

    max_pivots = 400 * (aa.shape[0] + bb.shape[0]) + 100_000
    rows, cols, vals, objective, status = solve_transport_dense(
        cc, aa, bb, max_pivots)
    if status != STATUS_OPTIMAL:
        raise RuntimeError("transport simplex hit its pivot limit")

    real = (rows < m) & (cols < n)
    rows, cols, vals = rows[real], cols[real], vals[real]
    moved = float(vals.sum())
    return TransportPlan(keep_a[rows], keep_b[cols], vals,
                         float(objective), moved)


def emd_value(supply, demand, cost, method: str = "exact") -> float:
    """Earth mover's distance: optimal objective divided by the moved mass."""
    plan = solve_transport(supply, demand, cost, method=method)
    if plan.moved_mass <= 0.0:
        raise EmptySignature("no mass was moved")
    return plan.objective / plan.moved_mass


def _sinkhorn_plan(cost, a, b, reg, max_iter, tol=1e-9):
    """Log-domain Sinkhorn iterations; returns sparse plan entries."""
    # unequal totals are balanced the same way as the exact path
    total_a, total_b = a.sum(), b.sum()
    m, n = cost.shape
    diff = total_a - total_b
    pad_col = diff > FEASIBILITY_EPS
    pad_row = diff < -FEASIBILITY_EPS
    if pad_col:
        cost = np.hstack([cost, np.zeros((m, 1))])
        b = np.append(b, diff)
    elif pad_row:
        cost = np.vstack([cost, np.zeros((1, n))])
        a = np.append(a, -diff)

    log_a = np.log(a)
    log_b = np.log(b)
    mk = -cost / reg
    f = np.zeros(a.shape[0])
    g = np.zeros(b.shape[0])
    for _ in range(max_iter):
        f = reg * (log_a - _logsumexp(mk + g[None, :] / reg, axis=1))
        g = reg * (log_b - _logsumexp(mk + f[:, None] / reg, axis=0))
        plan = np.exp(mk + f[:, None] / reg + g[None, :] / reg)
        if np.abs(plan.sum(axis=1) - a).max() < tol:
            break
    plan = np.exp(mk + f[:, None] / reg + g[None, :] / reg)
    if pad_col:
        plan = plan[:, :n]
        cost = cost[:, :n]
    elif pad_row:
        plan = plan[:m, :]
        cost = cost[:m, :]
    objective = float((plan * cost).sum())
    rows, cols = np.nonzero(plan > 1e-12)
    return rows, cols, plan[rows, cols], objective


def _logsumexp(x, axis):
    mx = np.max(x, axis=axis, keepdims=True)
    return (mx + np.log(np.exp(x - mx).sum(axis=axis, keepdims=True))).squeeze(axis)


def validate_plan(plan: TransportPlan, supply, demand,
                  eps: float = FEASIBILITY_EPS) -> None:
    """Assert the four LP constraints hold; raises AssertionError otherwise."""
    a = _as_weights(supply)
    b = _as_weights(demand)
    assert (plan.values >= -eps).all(), "negative flow"
    row_sums = np.zeros(a.shape[0])
    np.add.at(row_sums, plan.rows, plan.values)
    col_sums = np.zeros(b.shape[0])
    np.add.at(col_sums, plan.cols, plan.values)
    assert (row_sums <= a + eps).all(), "supply constraint violated"
    assert (col_sums <= b + eps).all(), "demand constraint violated"
    expected = min(a.sum(), b.sum())
    assert abs(plan.moved_mass - expected) <= max(eps, 1e-9 * expected), \
        "moved mass != min(total supply, total demand)"
