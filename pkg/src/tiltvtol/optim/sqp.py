"""Gauss-Newton SQP on a direct multiple-shooting transcription.

Decision variables are the inputs ``u_0 .. u_{N-1}`` and the shooting states
``s_1 .. s_N`` (``s_0`` is the fixed initial state). Dynamics enter as the
equality constraints ``f(s_k, u_k) - s_{k+1} = 0``. The objective is a sum of
squared residuals::

    sum_k ||r(s_k, u_k)||^2 + ||r_N(s_N)||^2 + w * sum_k ||s_k - clip(s_k, x_lb, x_ub)||^2

so state boxes are soft and input boxes are hard. Each iteration linearizes
with batched forward differences, condenses the shooting states out, and
solves the resulting box-constrained least-squares problem in the inputs
only. Steps are globalized with a backtracking line search on an l1 merit
function.
"""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, TextIO

import numpy as np

from .bvls import BoundedLsqProblem, NumericFail, solve_bounded_lsq


class SolverStatus(enum.Enum):
    CONVERGED = "Converged"
    MAX_ITER = "MaxIter"
    INFEASIBLE = "Infeasible"
    NUMERIC_FAIL = "NumericFail"

    @property
    def ok(self) -> bool:
        return self in (SolverStatus.CONVERGED, SolverStatus.MAX_ITER)


@dataclass
class NlpProblem:
    """Finite-horizon optimal control problem in least-squares form.

    ``dynamics(x, u)`` maps stacked states ``(K, nx)`` and inputs ``(K, nu)``
    to next states. ``stage_residual(x, u)`` returns ``(K, nr)`` and
    ``terminal_residual(x)`` returns ``(K, nt)``; the cost is the sum of
    their squares.
    """

    horizon: int
    dt: float
    x0: np.ndarray
    dynamics: Callable[[np.ndarray, np.ndarray], np.ndarray]
    stage_residual: Callable[[np.ndarray, np.ndarray], np.ndarray]
    terminal_residual: Callable[[np.ndarray], np.ndarray]
    input_lb: np.ndarray
    input_ub: np.ndarray
    state_lb: Optional[np.ndarray] = None
    state_ub: Optional[np.ndarray] = None
    state_penalty: float = 1e3
    input_guess: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        self.x0 = np.asarray(self.x0, dtype=float)
        self.input_lb = np.asarray(self.input_lb, dtype=float)
        self.input_ub = np.asarray(self.input_ub, dtype=float)
        if np.any(self.input_lb > self.input_ub):
            raise ValueError("inconsistent input bounds")
        nx = self.x0.shape[0]
        self.state_lb = np.full(nx, -np.inf) if self.state_lb is None else np.asarray(self.state_lb, dtype=float)
        self.state_ub = np.full(nx, np.inf) if self.state_ub is None else np.asarray(self.state_ub, dtype=float)
        if np.any(self.state_lb > self.state_ub):
            raise ValueError("inconsistent state bounds")

    @property
    def state_dim(self) -> int:
        return self.x0.shape[0]

    @property
    def input_dim(self) -> int:
        return self.input_lb.shape[0]


@dataclass
class NlpSolution:
    inputs: np.ndarray        # (N, nu)
    states: np.ndarray        # (N + 1, nx), states[0] is the initial state
    status: SolverStatus
    kkt_residual: float
    iterations: int
    cost: float = float("nan")
    active: Optional[np.ndarray] = field(default=None, repr=False)

    def shifted(self, dynamics: Callable, x0: np.ndarray | None = None) -> "NlpSolution":
        """Warm start for the next sampling instant: drop the first stage, repeat the last input."""
        U = np.vstack([self.inputs[1:], self.inputs[-1:]])
        x_last = dynamics(self.states[-1:], self.inputs[-1:])[0]
        X = np.vstack([self.states[1:], x_last[None]])
        if x0 is not None:
            X[0] = x0
        act = None
        if self.active is not None:
            a = self.active.reshape(self.inputs.shape)
            act = np.vstack([a[1:], a[-1:]]).ravel()
        return replace(self, inputs=U, states=X, active=act)


def _fd_stage(fun, X, U, hx, hu):
    """Value and forward-difference Jacobians of a batched function of (x, u)."""
    K, nx = X.shape
    nu = U.shape[1]
    m = 1 + nx + nu
    XX = np.repeat(X[:, None, :], m, axis=1)
    UU = np.repeat(U[:, None, :], m, axis=1)
    ix = np.arange(nx)
    iu = np.arange(nu)
    XX[:, 1 + ix, ix] += hx[:, ix]
    UU[:, 1 + nx + iu, iu] += hu[:, iu]
    out = fun(XX.reshape(K * m, nx), UU.reshape(K * m, nu))
    out = out.reshape(K, m, -1)
    base = out[:, 0, :]
    Jx = (out[:, 1:1 + nx, :] - base[:, None, :]) / hx[:, :, None]
    Ju = (out[:, 1 + nx:, :] - base[:, None, :]) / hu[:, :, None]
    # (K, nout, nx), (K, nout, nu)
    return base, np.swapaxes(Jx, 1, 2), np.swapaxes(Ju, 1, 2)


def _fd_terminal(fun, x, h):
    nx = x.shape[0]
    XX = np.repeat(x[None], 1 + nx, axis=0)
    XX[1 + np.arange(nx), np.arange(nx)] += h
    out = fun(XX)
    base = out[0]
    J = ((out[1:] - base) / h[:, None]).T
    return base, J


class _Evaluator:
    def __init__(self, p: NlpProblem):
        self.p = p
        self.sqrt_w = np.sqrt(p.state_penalty)

    def penalty(self, X):
        return self.sqrt_w * (X - np.clip(X, self.p.state_lb, self.p.state_ub))

    def cost_and_defects(self, X, U):
        p = self.p
        f = p.dynamics(X[:-1], U)
        c = f - X[1:]
        r = p.stage_residual(X[:-1], U)
        rN = p.terminal_residual(X[-1:])[0]
        pen = self.penalty(X[1:])
        cost = float(np.sum(r * r) + rN @ rN + np.sum(pen * pen))
        return cost, c


def rollout(p: NlpProblem, U: np.ndarray) -> np.ndarray:
    X = np.empty((U.shape[0] + 1, p.state_dim))
    X[0] = p.x0
    for k in range(U.shape[0]):
        X[k + 1] = p.dynamics(X[k:k + 1], U[k:k + 1])[0]
    return X


def solve_nlp(p: NlpProblem, warm_start: NlpSolution | None = None, *, shift: bool = True,
              tol: float = 1e-4, max_iter: int = 30, log: TextIO | None = None) -> NlpSolution:
    """Solve ``p`` from scratch or from ``warm_start``.

    With ``shift=True`` the warm start is advanced one stage first, which is
    what a receding-horizon caller wants after one sampling period.
    """
    N, nx, nu = p.horizon, p.state_dim, p.input_dim
    lb, ub = p.input_lb, p.input_ub

    if warm_start is not None:
        if warm_start.inputs.shape != (N, nu) or warm_start.states.shape != (N + 1, nx):
            raise ValueError("warm start dimensions do not match the problem")
        ws = warm_start.shifted(p.dynamics, p.x0) if shift else warm_start
        U = np.clip(ws.inputs, lb, ub)
        X = ws.states.copy()
        X[0] = p.x0
        active = ws.active
    else:
        guess = p.input_guess if p.input_guess is not None else 0.5 * (np.nan_to_num(lb) + np.nan_to_num(ub))
        U = np.tile(np.clip(guess, lb, ub), (N, 1))
        X = rollout(p, U)
        active = None

    ev = _Evaluator(p)
    lbU = np.tile(lb, N)
    ubU = np.tile(ub, N)
    mu = 1.0
    status = SolverStatus.MAX_ITER
    kkt = np.inf
    cost = np.inf
    steps = 0
    repaired = False

    def fail(reason):
        if log is not None:
            log.write(json.dumps({"event": "numeric_fail", "reason": reason}) + "\n")
        return NlpSolution(U, X, SolverStatus.NUMERIC_FAIL, float("inf"), steps, float("nan"), active)

    for it in range(max_iter + 1):
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(U))):
            return fail("non-finite iterate")
        Xs = X[:-1]
        hx = 1e-7 * np.maximum(1.0, np.abs(Xs))
        hu = 1e-7 * np.maximum(1.0, np.abs(U))
        f, A, B = _fd_stage(p.dynamics, Xs, U, hx, hu)
        r, Jx, Ju = _fd_stage(p.stage_residual, Xs, U, hx, hu)
        rN, JN = _fd_terminal(p.terminal_residual, X[-1], 1e-7 * np.maximum(1.0, np.abs(X[-1])))
        c = f - X[1:]
        pen = ev.penalty(X[1:])
        outside = (pen != 0.0).astype(float) * ev.sqrt_w
        if not (np.all(np.isfinite(r)) and np.all(np.isfinite(rN)) and np.all(np.isfinite(A))):
            return fail("non-finite model evaluation")
        cost = float(np.sum(r * r) + rN @ rN + np.sum(pen * pen))

        # condensing: dx_k = G[k] dU + h[k]; G[k] is zero beyond the first k input blocks,
        # and penalty rows are kept only for states currently outside their box
        nr = r.shape[1]
        nt = rN.shape[0]
        pen_rows = [np.flatnonzero(o) for o in outside]
        npen = sum(len(i) for i in pen_rows)
        rows = N * nr + npen + nt
        M = np.zeros((rows, N * nu))
        q = np.empty(rows)
        G = np.zeros((nx, N * nu))
        h = np.zeros(nx)
        row = N * nr
        for k in range(N):
            cols = k * nu
            sl = slice(k * nr, (k + 1) * nr)
            M[sl, :cols] = Jx[k] @ G[:, :cols]
            M[sl, cols:cols + nu] = Ju[k]
            q[sl] = r[k] + Jx[k] @ h
            G[:, :cols] = A[k] @ G[:, :cols]
            G[:, cols:cols + nu] = B[k]
            h = A[k] @ h + c[k]
            i = pen_rows[k]
            if len(i):
                M[row:row + len(i), :cols + nu] = ev.sqrt_w * G[i, :cols + nu]
                q[row:row + len(i)] = pen[k, i] + ev.sqrt_w * h[i]
                row += len(i)
        if nt:
            M[-nt:] = JN @ G
            q[-nt:] = rN + JN @ h

        Uf = U.ravel()
        defect = float(np.abs(c).max(initial=0.0))
        try:
            qp = solve_bounded_lsq(BoundedLsqProblem(M, -q, lbU - Uf, ubU - Uf), active0=active)
        except NumericFail:
            return fail("QP subproblem failed")
        # the Gauss-Newton step vanishes exactly at a KKT point; measuring it in input
        # units keeps the test independent of how the cost happens to be weighted
        kkt = max(float(np.abs(qp.x).max(initial=0.0)), defect)
        if log is not None:
            log.write(json.dumps({"iter": steps, "cost": cost, "kkt": kkt, "defect": defect,
                                  "inputs": U[0].tolist()}) + "\n")
        if kkt <= tol:
            status = SolverStatus.CONVERGED
            break
        if it == max_iter:
            break

        dU = qp.x
        active = qp.active
        dX = np.empty((N, nx))
        # recover the state step with the same recursion
        Gk = np.zeros(nx)
        for k in range(N):
            Gk = A[k] @ Gk + B[k] @ dU[k * nu:(k + 1) * nu] + c[k]
            dX[k] = Gk

        # l1 merit line search
        r_all = np.concatenate([r.ravel()] + [pen[k, i] for k, i in enumerate(pen_rows)] + [rN])
        lin = M @ dU + q
        dF = 2.0 * float(r_all @ (lin - r_all))
        c1 = float(np.abs(c).sum())
        if c1 > 0:
            mu = max(mu, 2.0 * max(dF, 0.0) / c1 + 1.0)
        dphi = dF - mu * c1
        phi0 = cost + mu * c1
        dU2 = dU.reshape(N, nu)
        alpha = 1.0
        accepted = False
        while alpha >= 1e-4:
            Ut = np.clip(U + alpha * dU2, lb, ub)
            Xt = X.copy()
            Xt[1:] += alpha * dX
            ct, cc = ev.cost_and_defects(Xt, Ut)
            phit = ct + mu * float(np.abs(cc).sum())
            if np.isfinite(phit) and phit <= phi0 + 1e-4 * alpha * min(dphi, 0.0):
                accepted = True
                break
            alpha *= 0.5
        steps += 1
        if not accepted:
            if not repaired and c1 > 0:
                # restart once from a dynamically consistent rollout of the current inputs
                X = rollout(p, U)
                repaired = True
                continue
            break
        U, X = Ut, Xt

    if status is not SolverStatus.CONVERGED:
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(U))):
            return fail("non-finite iterate")
        defect = float(np.abs(p.dynamics(X[:-1], U) - X[1:]).max(initial=0.0))
        if defect > 1e-2:
            X = rollout(p, U)
            if not np.all(np.isfinite(X)):
                return fail("non-finite rollout")
            cost, _ = ev.cost_and_defects(X, U)
        status = SolverStatus.MAX_ITER
    # with the dynamics met, what is left to violate are the soft state boxes
    excess = float(np.abs(X[1:] - np.clip(X[1:], p.state_lb, p.state_ub)).max(initial=0.0))
    if excess > 1e-2:
        status = SolverStatus.INFEASIBLE
    U = np.clip(U, lb, ub)
    return NlpSolution(U, X, status, float(kkt), steps, cost, active)
