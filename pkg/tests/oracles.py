"""Slow, independent reference implementations used to check the package.

Nothing here imports esnmpc; each routine is written from the defining
formula with plain loops or textbook algorithms.
"""
from __future__ import annotations

import math

import numpy as np


def tanh_series(z: float, terms: int = 60) -> float:
    """tanh via exp power series, no library tanh."""
    def exp(v):
        s, t = 1.0, 1.0
        for k in range(1, terms):
            t *= v / k
            s += t
        return s
    a, b = exp(z), exp(-z)
    return (a - b) / (a + b)


def dot_loop(a, b) -> float:
    s = 0.0
    for x, y in zip(a, b):
        s += float(x) * float(y)
    return s


def esn_step_loops(w_x, w_u, w_y, x, u, y):
    n = len(x)
    out = []
    for i in range(n):
        acc = w_u[i] * u + w_y[i] * y
        for j in range(n):
            acc += w_x[i][j] * x[j]
        out.append(math.tanh(acc))
    return out


def closure_fixed_point(w_x, support) -> set:
    """Smallest superset of ``support`` closed under i in S, w_x[i, j] != 0 => j in S."""
    s = set(int(i) for i in support)
    while True:
        grown = set(s)
        for i in s:
            for j in range(len(w_x)):
                if w_x[i][j] != 0.0:
                    grown.add(j)
        if grown == s:
            return s
        s = grown


def lasso_objective(phi, y, w, lam) -> float:
    r = y - phi @ w
    return float(r @ r + lam * np.sum(np.abs(w)))


def lasso_fista(phi, y, lam, iters: int = 200_000, tol: float = 1e-15):
    """Accelerated proximal gradient for ||y - phi w||^2 + lam ||w||_1."""
    L = 2.0 * np.linalg.norm(phi, 2) ** 2
    if L == 0.0:
        return np.zeros(phi.shape[1])
    w = np.zeros(phi.shape[1])
    z, t = w.copy(), 1.0
    for _ in range(iters):
        g = -2.0 * phi.T @ (y - phi @ z)
        v = z - g / L
        w_new = np.sign(v) * np.maximum(np.abs(v) - lam / L, 0.0)
        t_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
        z = w_new + (t - 1.0) / t_new * (w_new - w)
        if np.max(np.abs(w_new - w)) <= tol * max(1.0, np.max(np.abs(w_new))):
            w = w_new
            break
        w, t = w_new, t_new
    return w


def linear_mpc_batch(A, B, C, D, x, u_prev, d_hat, y_ref, N, q, r):
    """Unconstrained linear MPC as one batch least-squares problem.

    Model ``x+ = A x + B u``, ``y = C x + D u_prev``; cost
    ``sum q (y_i + d - ref)^2 + r du_i^2`` over i = 0..N-1.
    """
    A = np.atleast_2d(A)
    n = A.shape[0]
    # y_i = C A^i x + sum_{j<i} C A^{i-1-j} B u_j + D u_{i-1}
    F = np.zeros(N)
    G = np.zeros((N, N))
    Ap = np.eye(n)
    for i in range(N):
        F[i] = C @ Ap @ x
        Ap = A @ Ap
        for j in range(i):
            G[i, j] += C @ np.linalg.matrix_power(A, i - 1 - j) @ B
        if i == 0:
            F[i] += D * u_prev
        else:
            G[i, i - 1] += D
    T = np.tril(np.ones((N, N)))
    # U = u_prev + T du
    base = F + G @ (u_prev * np.ones(N)) + d_hat - y_ref
    M = G @ T
    H = q * M.T @ M + r * np.eye(N)
    return np.linalg.solve(H, -q * M.T @ base)


def dwell_lengths(signal) -> list:
    """Run lengths of a piecewise-constant sequence."""
    runs, count = [], 1
    for a, b in zip(signal[:-1], signal[1:]):
        if a == b:
            count += 1
        else:
            runs.append(count)
            count = 1
    runs.append(count)
    return runs


def ph_bisection(wa4, wb4, pk1=6.35, pk2=10.25):
    """pH from the reaction invariants, solved with a separate bracket/secant loop."""
    def f(ph):
        h = 10.0 ** (-ph)
        oh = 10.0 ** (ph - 14.0)
        frac = (1.0 + 2.0 * 10.0 ** (ph - pk2)) / (1.0 + 10.0 ** (pk1 - ph) + 10.0 ** (ph - pk2))
        return wa4 + oh - h + wb4 * frac
    lo, hi = 0.0, 14.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if f(mid) > 0:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)
