"""Box-constrained linear least squares by a primal active-set method.

Solves::

    minimize    0.5 * ||A x - b||^2 + 0.5 * ridge * ||x||^2
    subject to  lb <= x <= ub

The ridge term is tiny (1e-8 by default) and only exists to pick the
minimum-norm point when ``A`` has a null space, as the 6 x 8 allocation
problems always do.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve, LinAlgError


class NumericFail(ArithmeticError):
    """The active-set iteration did not settle within its change budget."""


@dataclass
class BoundedLsqProblem:
    A: np.ndarray
    b: np.ndarray
    lb: np.ndarray
    ub: np.ndarray

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        m, n = self.A.shape
        self.b = np.asarray(self.b, dtype=float).reshape(m)
        self.lb = np.broadcast_to(np.asarray(self.lb, dtype=float), (n,)).copy()
        self.ub = np.broadcast_to(np.asarray(self.ub, dtype=float), (n,)).copy()
        if np.any(self.lb > self.ub):
            raise ValueError("lower bound exceeds upper bound")


@dataclass
class BoundedLsqResult:
    x: np.ndarray
    residual: float
    active: np.ndarray  # -1 at lower bound, +1 at upper bound, 0 free
    iterations: int
    kkt: float


def kkt_violation(H, g, x, lb, ub, active) -> float:
    """Largest violation of the box-QP optimality conditions at ``x``."""
    grad = H @ x + g
    v = np.where(active == 0, np.abs(grad), 0.0)
    v = np.where(active == -1, np.maximum(-grad, 0.0), v)
    v = np.where(active == 1, np.maximum(grad, 0.0), v)
    fixed = lb == ub
    v[fixed] = 0.0
    return float(v.max(initial=0.0))


def solve_box_qp(H, g, lb, ub, *, x0=None, active0=None, tol=None, max_changes=None):
    """Primal active-set solver for ``min 0.5 x'Hx + g'x`` over a box, H positive definite.

    Returns ``(x, active, changes)``.
    """
    n = g.shape[0]
    lb = np.asarray(lb, dtype=float)
    ub = np.asarray(ub, dtype=float)
    if tol is None:
        tol = 1e-10 * max(1.0, np.abs(g).max(initial=0.0), np.abs(H).max(initial=0.0))
    if max_changes is None:
        max_changes = 10 * max(n, 1)

    fixed = lb == ub
    if active0 is not None:
        active = np.asarray(active0, dtype=int).copy()
    else:
        active = np.zeros(n, dtype=int)
    active[fixed] = -1
    # infinite bounds cannot be active
    active[(active == -1) & ~np.isfinite(lb)] = 0
    active[(active == 1) & ~np.isfinite(ub)] = 0

    x = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float).copy()
    x = np.clip(x, lb, ub)
    x[active == -1] = lb[active == -1]
    x[active == 1] = ub[active == 1]

    changes = 0
    while True:
        free = active == 0
        F = np.flatnonzero(free)
        if F.size:
            B = np.flatnonzero(~free)
            rhs = -(g[F] + H[np.ix_(F, B)] @ x[B]) if B.size else -g[F]
            HFF = H[np.ix_(F, F)]
            try:
                z = cho_solve(cho_factor(HFF, check_finite=False), rhs, check_finite=False)
            except LinAlgError:
                z = np.linalg.lstsq(HFF, rhs, rcond=None)[0]
            if not np.all(np.isfinite(z)):
                raise NumericFail("non-finite subproblem solution")
            xF = x[F]
            lo_v = z < lb[F]
            hi_v = z > ub[F]
            if lo_v.any() or hi_v.any():
                # step toward z until the first bound blocks
                step = z - xF
                t = np.ones(F.size)
                with np.errstate(divide="ignore", invalid="ignore"):
                    t[lo_v] = (lb[F][lo_v] - xF[lo_v]) / step[lo_v]
                    t[hi_v] = (ub[F][hi_v] - xF[hi_v]) / step[hi_v]
                t = np.clip(np.nan_to_num(t, nan=0.0), 0.0, 1.0)
                tmin = t.min()
                x[F] = xF + tmin * step
                block = (t <= tmin + 1e-14) & (lo_v | hi_v)
                for i, is_lo in zip(F[block], lo_v[block]):
                    active[i] = -1 if is_lo else 1
                    x[i] = lb[i] if is_lo else ub[i]
                changes += 1
                if changes > max_changes:
                    raise NumericFail("active-set change budget exceeded")
                continue
            x[F] = z

        grad = H @ x + g
        mult = np.where(active == -1, -grad, np.where(active == 1, grad, 0.0))
        mult[fixed] = 0.0
        j = int(np.argmax(mult))
        if mult[j] <= tol:
            return x, active, changes
        active[j] = 0
        changes += 1
        if changes > max_changes:
            raise NumericFail("active-set change budget exceeded")


def solve_bounded_lsq(p: BoundedLsqProblem, *, ridge: float = 1e-8, x0=None, active0=None,
                      max_changes=None) -> BoundedLsqResult:
    """Minimum-norm box-constrained least squares; see module docstring."""
    A, b = p.A, p.b
    n = A.shape[1]
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(b))):
        raise NumericFail("non-finite problem data")
    H = A.T @ A
    H[np.diag_indices(n)] += ridge
    g = -(A.T @ b)
    x, active, changes = solve_box_qp(H, g, p.lb, p.ub, x0=x0, active0=active0, max_changes=max_changes)
    r = A @ x - b
    return BoundedLsqResult(
        x=x,
        residual=float(np.linalg.norm(r)),
        active=active,
        iterations=changes,
        kkt=kkt_violation(H, g, x, p.lb, p.ub, active),
    )
