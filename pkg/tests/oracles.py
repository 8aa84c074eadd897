"""Independent reference solvers used by the tests (not the package code)."""
import numpy as np


def random_problems(K, seed=0, m=6, n=8):
    """K random bounded least-squares instances (A, b, lo, hi) with 0 strictly inside the box."""
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(K, m, n))
    b = rng.normal(scale=3.0, size=(K, m))
    lo = -rng.uniform(0.05, 1.0, size=(K, n))
    hi = rng.uniform(0.05, 1.0, size=(K, n))
    return A, b, lo, hi


def projected_gradient_lsq(A, b, lb, ub, ridge=1e-8, iters=200_000):
    """Batched accelerated projected gradient for 0.5||Ax-b||^2 + 0.5*ridge*||x||^2 on a box.

    ``A`` is (K, m, n); all other arrays carry the same leading batch axis.
    Restarts the momentum whenever the objective goes up.
    """
    H = np.einsum("kmi,kmj->kij", A, A) + ridge * np.eye(A.shape[2])
    g = -np.einsum("kmi,km->ki", A, b)
    L = np.linalg.eigvalsh(H)[:, -1][:, None]
    x = np.clip(np.zeros_like(lb), lb, ub)
    y = x.copy()
    t = np.ones((A.shape[0], 1))

    def f(z):
        return 0.5 * np.einsum("ki,kij,kj->k", z, H, z) + np.einsum("ki,ki->k", g, z)

    fx = f(x)
    for _ in range(iters):
        grad = np.einsum("kij,kj->ki", H, y) + g
        xn = np.clip(y - grad / L, lb, ub)
        fn = f(xn)
        t_next = 0.5 * (1 + np.sqrt(1 + 4 * t * t))
        up = (fn > fx)[:, None]
        y = np.where(up, x, xn + ((t - 1) / t_next) * (xn - x))
        t = np.where(up, 1.0, t_next)
        x = np.where(up, x, xn)
        fx = np.where(up[:, 0], fx, fn)
    return x, fx + 0.5 * np.einsum("km,km->k", b, b)


def box_kkt(H, g, x, lb, ub, tol=1e-9):
    """Largest violation of the box-QP optimality conditions, classifying bounds by distance."""
    grad = H @ x + g
    at_lb = x <= lb + tol
    at_ub = x >= ub - tol
    v = np.where(at_lb, np.maximum(-grad, 0), np.where(at_ub, np.maximum(grad, 0), np.abs(grad)))
    return float(v.max(initial=0.0))


def riccati_scalar(N, q=1.0, r=1.0, qf=1.0):
    """Finite-horizon LQR for x+ = x + u: feedback gains and cost-to-go P_0."""
    P = qf
    gains = []
    for _ in range(N):
        k = P / (r + P)
        gains.append(k)
        P = q + P - P * P / (r + P)
    return gains[::-1], P
