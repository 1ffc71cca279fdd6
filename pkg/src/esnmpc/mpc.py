"""Offset-free tracking MPC on top of an ESN prediction model.

Decision variables are the input moves ``delta_u(k..k+N-1)``; the applied
input is the integrator output ``u(k+i) = u(k-1) + sum_{j<=i} delta_u(k+j)``.
The plant/model mismatch at time k is held constant over the horizon as an
output disturbance ``d_hat``, and the controller minimizes

    J = sum_{i=0}^{N-1} q (y(k+i) + d_hat - y_ref)^2 + r delta_u(k+i)^2

subject to ``u_min <= u(k+i) <= u_max``.

The box lives on the accumulated inputs, so the solver works on ``U``
directly (a box) and maps back to moves. It is a projected Gauss-Newton
method in the two-metric form of Bertsekas: Newton step on the free
variables, scaled gradient on the epsilon-active ones, Armijo search along
the projection arc. The Gauss-Newton matrix is exact for linear models, so
an unconstrained linear problem is solved in one step.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Literal, Optional, Protocol, Sequence, Union

import numpy as np

from .ident import EsnModel
from .reservoir import EsnState

log = logging.getLogger(__name__)

StateUpdate = Literal["measured", "predicted"]


@dataclass(frozen=True)
class MpcConfig:
    horizon: int = 20
    t_s: float = 10.0
    q: float = 2.0
    r: float = 1.0
    u_min: float = 12.7
    u_max: float = 16.7
    gtol: float = 1e-9           # projected-gradient infinity norm
    ftol: float = 1e-14          # relative cost decrease that counts as stalled
    max_iter: int = 50
    # "measured" teacher-forces the model with y_meas between solves; on the
    # pH plant it can lock into a period-2 cycle with d_hat flipping sign
    state_update: StateUpdate = "predicted"

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError(f"horizon must be >= 1, got {self.horizon}")
        if not self.u_min < self.u_max:
            raise ValueError("u_min must be < u_max")
        if self.r <= 0:
            raise ValueError("move weight r must be > 0")
        if self.q < 0:
            raise ValueError("error weight q must be >= 0")
        if self.t_s <= 0:
            raise ValueError("t_s must be > 0")
        if self.state_update not in ("measured", "predicted"):
            raise ValueError(f"unknown state_update {self.state_update!r}")


class PredictionModel(Protocol):
    """What the controller needs from a model, in plant units."""

    def initial_state(self, u: float, y: float) -> np.ndarray: ...

    def output(self, x: np.ndarray, u_prev: float) -> float: ...

    def update(self, x: np.ndarray, u: float, y_fb: float) -> np.ndarray: ...

    def rollout(self, x: np.ndarray, u_prev: float, U: np.ndarray,
                fb_offset: float, jacobian: bool): ...


class EsnPredictor:
    """ESN prediction model; ``y`` fed back through ``W_y`` is ``y_model + fb_offset``."""

    def __init__(self, model: EsnModel):
        self.model = model
        w = model.reservoir
        sc = model.scaling
        self.n = w.n
        self.w_x = np.ascontiguousarray(w.w_x)
        self.w_u = w.w_u
        self.w_y = w.w_y
        self.w1 = model.readout.w_out1
        self.w2 = model.readout.w_out2
        self.sc = sc

    def output(self, x, u_prev):
        sc = self.sc
        y_n = self.w1 @ x + self.w2 * (u_prev - sc.u_shift) / sc.u_scale
        return float(y_n * sc.y_scale + sc.y_shift)

    def update(self, x, u, y_fb):
        sc = self.sc
        return np.tanh(self.w_x @ x
                       + self.w_u * ((u - sc.u_shift) / sc.u_scale)
                       + self.w_y * ((y_fb - sc.y_shift) / sc.y_scale))

    def initial_state(self, u, y, steps: int = 2000, tol: float = 1e-14):
        """Teacher-forced equilibrium for constant ``(u, y)``."""
        x = np.zeros(self.n)
        for _ in range(steps):
            x_new = self.update(x, u, y)
            if np.max(np.abs(x_new - x)) < tol:
                return x_new
            x = x_new
        return x

    def rollout(self, x, u_prev, U, fb_offset=0.0, jacobian=True):
        """Outputs ``y(k+i)``, i = 0..N-1 (without ``d_hat``) and ``dy/dU``."""
        sc = self.sc
        N = U.size
        ys, us = sc.y_scale, sc.u_scale
        w1, w2 = self.w1, self.w2
        y = np.empty(N)
        u_n = (U - sc.u_shift) / us
        u_prev_n = (u_prev - sc.u_shift) / us
        fb_n = fb_offset / ys
        if not jacobian:
            for i in range(N):
                y_n = w1 @ x + w2 * (u_prev_n if i == 0 else u_n[i - 1])
                y[i] = y_n
                x = np.tanh(self.w_x @ x + self.w_u * u_n[i] + self.w_y * (y_n + fb_n))
            return y * ys + sc.y_shift, None
        jac = np.zeros((N, N))
        S = np.zeros((self.n, N))    # dx(k+i)/dU in normalized units
        for i in range(N):
            y_n = w1 @ x + w2 * (u_prev_n if i == 0 else u_n[i - 1])
            y[i] = y_n
            dy = w1 @ S[:, :i]
            if i > 0:
                dy[i - 1] += w2 / us
            jac[i, :i] = dy
            x = np.tanh(self.w_x @ x + self.w_u * u_n[i] + self.w_y * (y_n + fb_n))
            # only columns 0..i of the next sensitivity are nonzero
            A = self.w_x @ S[:, :i + 1]
            A[:, :i] += np.outer(self.w_y, dy)
            A[:, i] += self.w_u / us
            S[:, :i + 1] = (1.0 - x * x)[:, None] * A
        return y * ys + sc.y_shift, jac * ys


class LinearPredictor:
    """Linear test model ``x+ = A x + B u``, ``y = C x + D u_prev`` (no feedback)."""

    def __init__(self, A, B, C, D=0.0):
        self.A = np.atleast_2d(np.asarray(A, dtype=float))
        self.B = np.asarray(B, dtype=float).reshape(-1)
        self.C = np.asarray(C, dtype=float).reshape(-1)
        self.D = float(D)
        self.n = self.A.shape[0]

    def output(self, x, u_prev):
        return float(self.C @ x + self.D * u_prev)

    def update(self, x, u, y_fb):
        return self.A @ x + self.B * u

    def initial_state(self, u, y):
        return np.linalg.solve(np.eye(self.n) - self.A, self.B * u)

    def rollout(self, x, u_prev, U, fb_offset=0.0, jacobian=True):
        N = U.size
        y = np.empty(N)
        jac = np.zeros((N, N))
        S = np.zeros((self.n, N))
        for i in range(N):
            y[i] = self.C @ x + self.D * (u_prev if i == 0 else U[i - 1])
            jac[i] = self.C @ S
            if i > 0:
                jac[i, i - 1] += self.D
            x = self.A @ x + self.B * U[i]
            S = self.A @ S
            S[:, i] += self.B
        return y, (jac if jacobian else None)


def as_predictor(model) -> PredictionModel:
    return EsnPredictor(model) if isinstance(model, EsnModel) else model


@dataclass
class ControllerState:
    x: np.ndarray
    u_prev: float
    d_hat: float = 0.0
    y_ref: float = 0.0

    @property
    def esn(self) -> EsnState:
        return EsnState(self.x, self.u_prev)


@dataclass
class MpcSolution:
    delta_u: np.ndarray
    predicted_y: np.ndarray
    cost: float
    iterations: int
    solve_time: float
    converged: bool = True
    cost_history: list = field(default_factory=list)

    def inputs(self, u_prev: float) -> np.ndarray:
        return u_prev + np.cumsum(self.delta_u)


def estimate_disturbance(y_measured: float, y_model: float) -> float:
    """Constant output disturbance held over the whole horizon."""
    return float(y_measured) - float(y_model)


def _feedback_offset(state: ControllerState, mode: StateUpdate) -> float:
    # measured-mode states are driven by y_meas = y_model + d_hat, so the
    # prediction feeds back the corrected output to stay consistent with them
    return state.d_hat if mode == "measured" else 0.0


def predict(model, state: ControllerState, delta_u: Sequence[float],
            mode: StateUpdate = "predicted") -> np.ndarray:
    """Predicted plant outputs ``y(k+i) + d_hat`` for the given input moves."""
    m = as_predictor(model)
    U = state.u_prev + np.cumsum(np.asarray(delta_u, dtype=float))
    y, _ = m.rollout(state.x, state.u_prev, U, _feedback_offset(state, mode), False)
    return y + state.d_hat


def _moves(U: np.ndarray, u_prev: float) -> np.ndarray:
    return np.diff(U, prepend=u_prev)


def _cost(y_pred, U, u_prev, y_ref, cfg: MpcConfig) -> float:
    e = y_pred - y_ref
    du = _moves(U, u_prev)
    return float(cfg.q * (e @ e) + cfg.r * (du @ du))


def objective(model, state: ControllerState, delta_u: Sequence[float],
              cfg: MpcConfig, y_ref: Optional[float] = None,
              gradient: bool = True):
    """Cost and its analytic gradient with respect to the moves ``delta_u``.

    With ``gradient=False`` the sensitivity pass is skipped and the gradient
    comes back as None.
    """
    m = as_predictor(model)
    y_ref = state.y_ref if y_ref is None else y_ref
    delta_u = np.asarray(delta_u, dtype=float)
    U = state.u_prev + np.cumsum(delta_u)
    y, jac = m.rollout(state.x, state.u_prev, U,
                       _feedback_offset(state, cfg.state_update), gradient)
    e = y + state.d_hat - y_ref
    J = float(cfg.q * (e @ e) + cfg.r * (delta_u @ delta_u))
    if not gradient:
        return J, None
    # dJ/dU from the error term; the chain U -> delta_u adds a reverse cumsum
    g_U = 2.0 * cfg.q * (jac.T @ e)
    grad = np.cumsum(g_U[::-1])[::-1] + 2.0 * cfg.r * delta_u
    return J, grad


def solve(model, cfg: MpcConfig, state: ControllerState,
          y_ref: Optional[float] = None,
          warm_start: Optional[Sequence[float]] = None) -> MpcSolution:
    """Projected Gauss-Newton over the accumulated inputs.

    Hitting ``max_iter`` returns the best feasible iterate with
    ``converged=False`` instead of raising.
    """
    t0 = time.perf_counter()
    m = as_predictor(model)
    y_ref = state.y_ref if y_ref is None else float(y_ref)
    N = cfg.horizon
    lo, hi = cfg.u_min, cfg.u_max
    u_prev = state.u_prev
    fb = _feedback_offset(state, cfg.state_update)
    sq, sr = np.sqrt(cfg.q), np.sqrt(cfg.r)
    # residual Jacobian of the move penalty: first differences of U
    Dm = np.eye(N) - np.eye(N, k=-1)

    warm = np.zeros(N) if warm_start is None else np.asarray(warm_start, dtype=float)
    U = np.clip(u_prev + np.cumsum(warm), lo, hi)

    def evaluate(U, jacobian):
        y, jac = m.rollout(state.x, u_prev, U, fb, jacobian)
        y = y + state.d_hat
        return y, jac, _cost(y, U, u_prev, y_ref, cfg)

    y, jac, J = evaluate(U, True)
    history = [J]
    converged = False
    it = 0
    while True:
        res = np.concatenate((sq * (y - y_ref), sr * _moves(U, u_prev)))
        Jr = np.vstack((sq * jac, sr * Dm))
        g = 2.0 * Jr.T @ res
        pg = U - np.clip(U - g, lo, hi)
        pg_norm = float(np.max(np.abs(pg)))
        if pg_norm <= cfg.gtol:
            converged = True
            break
        if it >= cfg.max_iter:
            break
        H = 2.0 * Jr.T @ Jr
        eps = min(1e-3 * (hi - lo), pg_norm)
        active = ((U <= lo + eps) & (g > 0)) | ((U >= hi - eps) & (g < 0))
        free = ~active
        d = np.zeros(N)
        if free.any():
            d[free] = np.linalg.solve(H[np.ix_(free, free)], g[free])
        if active.any():
            d[active] = g[active] / np.diag(H)[active]

        alpha, accepted = 1.0, False
        while alpha > 1e-12:
            U_try = np.clip(U - alpha * d, lo, hi)
            y_try, _, J_try = evaluate(U_try, False)
            decrease = alpha * (g[free] @ d[free]) + g[active] @ (U - U_try)[active]
            if J_try <= J - 1e-4 * decrease:
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            # no descent left at machine precision: treat as stationary
            converged = pg_norm <= 1e3 * cfg.gtol or J == 0.0
            break
        it += 1
        stalled = J - J_try <= cfg.ftol * max(1.0, J)
        U = U_try
        y, jac, J = evaluate(U, True)
        history.append(J)
        if stalled:
            converged = True
            break

    sol = MpcSolution(
        delta_u=_moves(U, u_prev),
        predicted_y=y,
        cost=J,
        iterations=it,
        solve_time=time.perf_counter() - t0,
        converged=converged,
        cost_history=history,
    )
    if not converged:
        log.debug("MPC solve stopped after %d iterations (|pg|=%.3g)", it, pg_norm)
    return sol


@dataclass
class LogRecord:
    time: float
    y_ref: float
    y_sys: float
    y_model: float
    d_hat: float
    u: float
    delta_u: float
    cost: float
    iterations: int
    solve_time: float
    converged: bool = True


LOG_COLUMNS = ("time", "y_ref", "y_sys", "y_model", "d_hat", "u", "delta_u",
               "cost", "iterations", "solve_time")


class Controller:
    """Receding-horizon loop state: model state, last input, warm start."""

    def __init__(self, model, cfg: MpcConfig, u0: float, y0: float,
                 x0: Optional[np.ndarray] = None):
        self.model = as_predictor(model)
        self.cfg = cfg
        x = self.model.initial_state(u0, y0) if x0 is None else np.asarray(x0, float)
        self.state = ControllerState(x, float(u0), 0.0, float(y0))
        self.warm = np.zeros(cfg.horizon)
        self.t = 0.0

    def step(self, plant, y_ref: float) -> LogRecord:
        """Measure, estimate d_hat, solve, apply the first move, update the model."""
        cfg = self.cfg
        st = self.state
        y_meas = float(plant.measure())
        y_mod = self.model.output(st.x, st.u_prev)
        st.d_hat = estimate_disturbance(y_meas, y_mod)
        st.y_ref = float(y_ref)
        sol = solve(self.model, cfg, st, warm_start=self.warm)
        u = float(np.clip(st.u_prev + sol.delta_u[0], cfg.u_min, cfg.u_max))
        du = u - st.u_prev
        plant.advance(u)
        y_fb = y_meas if cfg.state_update == "measured" else y_mod
        st.x = self.model.update(st.x, u, y_fb)
        st.u_prev = u
        self.warm = np.append(sol.delta_u[1:], 0.0)
        rec = LogRecord(self.t, st.y_ref, y_meas, y_mod, st.d_hat, u, du,
                        sol.cost, sol.iterations, sol.solve_time, sol.converged)
        self.t += cfg.t_s
        return rec


def step_closed_loop(controller: Controller, plant, y_ref: float) -> LogRecord:
    return controller.step(plant, y_ref)


def run_closed_loop(controller: Controller, plant,
                    reference: Union[float, Callable[[float], float]],
                    steps: int) -> list:
    ref = reference if callable(reference) else (lambda t: float(reference))
    records = []
    for _ in range(steps):
        records.append(controller.step(plant, ref(controller.t)))
    n_fail = sum(not r.converged for r in records)
    if n_fail:
        log.info("%d of %d MPC solves hit the iteration limit", n_fail, steps)
    return records


class EsnPlant:
    """An ESN used as the true plant, with an additive measurement bias."""

    def __init__(self, model, x0: np.ndarray, u_prev: float, bias: float = 0.0,
                 t_s: float = 10.0):
        self.model = as_predictor(model)
        self.x = np.asarray(x0, dtype=float)
        self.u_prev = float(u_prev)
        self.bias = float(bias)
        self.t_s = t_s

    def measure(self) -> float:
        return self.model.output(self.x, self.u_prev) + self.bias

    def advance(self, u: float) -> None:
        y = self.model.output(self.x, self.u_prev)
        self.x = self.model.update(self.x, u, y)
        self.u_prev = float(u)
