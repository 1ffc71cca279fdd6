"""Readout training for echo state networks.

Teacher-forced state collection, least squares (plain ESN training) and the
LASSO variant that produces sparse readouts, plus the free-run simulation and
fitting metric used for validation.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence, Union

import numba
import numpy as np

from .reservoir import EsnState, ReservoirWeights, certify

log = logging.getLogger(__name__)

# relative threshold below which a readout coefficient counts as zero
SUPPORT_RTOL = 1e-10
# washout used when the reservoir carries no stability certificate
DEFAULT_WASHOUT = 200
# numerical-rank cutoff for least squares; tanh features of a sparse
# reservoir are nearly collinear and the machine-epsilon default yields
# readouts whose output-feedback loop diverges in free run
LS_RCOND = 1e-6


class IdentError(ValueError):
    """Malformed dataset or training problem."""


class FittingUndefined(IdentError):
    """Fitting requested against a constant reference signal."""


class LassoNotConverged(RuntimeError):
    """Coordinate descent hit ``max_sweeps``; carries the last iterate."""

    def __init__(self, weights: "ReadoutWeights", objective: float, sweeps: int):
        super().__init__(
            f"LASSO did not converge in {sweeps} sweeps (objective {objective:.6g})"
        )
        self.weights = weights
        self.objective = objective
        self.sweeps = sweeps


@dataclass(frozen=True)
class Dataset:
    u: np.ndarray
    y: np.ndarray
    t_s: float = 10.0
    k0: int = 0

    def __post_init__(self):
        u = np.asarray(self.u, dtype=float).reshape(-1)
        y = np.asarray(self.y, dtype=float).reshape(-1)
        if u.shape != y.shape:
            raise IdentError(f"u and y lengths differ: {u.size} vs {y.size}")
        if self.t_s <= 0:
            raise IdentError(f"sampling time must be positive, got {self.t_s}")
        if self.k0 < 0:
            raise IdentError(f"washout must be >= 0, got {self.k0}")
        if u.size <= self.k0:
            raise IdentError(f"dataset has {u.size} samples, washout is {self.k0}")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "y", y)

    def __len__(self) -> int:
        return self.u.size


@dataclass(frozen=True)
class Scaling:
    """Affine map between plant units and the network's normalized signals."""

    u_shift: float = 0.0
    u_scale: float = 1.0
    y_shift: float = 0.0
    y_scale: float = 1.0

    @classmethod
    def from_range(cls, u: np.ndarray, y: np.ndarray) -> "Scaling":
        """Map the observed range of each signal onto [0, 1].

        The map is deliberately not zero-centred: with no readout intercept,
        a signed-symmetric drive would leave the tanh features odd in the
        inputs and unable to represent an output offset.
        """
        def lo_span(v):
            lo, hi = float(np.min(v)), float(np.max(v))
            return lo, (hi - lo) if hi > lo else 1.0
        return cls(*lo_span(u), *lo_span(y))

    def u_in(self, u):
        return (np.asarray(u, dtype=float) - self.u_shift) / self.u_scale

    def y_in(self, y):
        return (np.asarray(y, dtype=float) - self.y_shift) / self.y_scale

    def y_out(self, y_n):
        return np.asarray(y_n, dtype=float) * self.y_scale + self.y_shift


IDENTITY = Scaling()


@dataclass(frozen=True)
class RegressorMatrix:
    phi: np.ndarray
    y_target: np.ndarray
    k0: int = 0


@dataclass(frozen=True)
class ReadoutWeights:
    w_out1: np.ndarray
    w_out2: float
    lam: float = 0.0
    rank_deficient: bool = False
    support: np.ndarray = field(default=None)

    def __post_init__(self):
        w1 = np.asarray(self.w_out1, dtype=float).reshape(-1)
        object.__setattr__(self, "w_out1", w1)
        object.__setattr__(self, "w_out2", float(self.w_out2))
        if self.support is None:
            object.__setattr__(self, "support", support_of(w1))

    @classmethod
    def from_vector(cls, w: np.ndarray, lam: float = 0.0, **kw) -> "ReadoutWeights":
        return cls(w[:-1], float(w[-1]), lam, **kw)

    @property
    def vector(self) -> np.ndarray:
        return np.append(self.w_out1, self.w_out2)

    @property
    def n(self) -> int:
        return self.w_out1.size


def support_of(w_out1: np.ndarray) -> np.ndarray:
    w_out1 = np.asarray(w_out1, dtype=float)
    peak = np.max(np.abs(w_out1)) if w_out1.size else 0.0
    if peak == 0.0:
        return np.array([], dtype=int)
    return np.flatnonzero(np.abs(w_out1) >= SUPPORT_RTOL * peak)


def default_washout(w: ReservoirWeights, tol: float = 1e-8) -> int:
    """Samples needed for the initial-state influence to drop below ``tol``."""
    cert = certify(w)
    if not cert.delta_gas:
        return DEFAULT_WASHOUT
    if cert.alpha == 0.0:
        return 1
    return max(1, int(math.ceil(math.log(tol) / math.log(cert.alpha))))


def _as_state(w: ReservoirWeights, x0) -> EsnState:
    if x0 is None:
        return EsnState.zeros(w.n)
    if isinstance(x0, EsnState):
        return x0
    return EsnState(np.asarray(x0, dtype=float), 0.0)


def collect(
    w: ReservoirWeights,
    d: Dataset,
    x0: Union[EsnState, np.ndarray, None] = None,
    scaling: Scaling = IDENTITY,
) -> RegressorMatrix:
    """Teacher-forced state collection.

    The reservoir is driven by the measured input and the *measured* output.
    Row ``k`` of ``phi`` is ``(x(k), u(k-1))`` for ``k = k0 .. T-1``; ``u(-1)``
    is taken from ``x0.u_prev``.
    """
    s0 = _as_state(w, x0)
    u_n = scaling.u_in(d.u)
    y_n = scaling.y_in(d.y)
    T = len(d)
    x = np.asarray(s0.x, dtype=float).copy()
    if x.shape != (w.n,):
        raise IdentError(f"x0 has shape {x.shape}, reservoir has n={w.n}")
    states = np.empty((T, w.n))
    drive = np.outer(u_n, w.w_u) + np.outer(y_n, w.w_y)
    w_xt = w.w_x.T
    for k in range(T):
        states[k] = x
        x = np.tanh(x @ w_xt + drive[k])
    u_lag = np.concatenate(([float(scaling.u_in(s0.u_prev))], u_n[:-1]))
    phi = np.column_stack((states, u_lag))[d.k0:]
    return RegressorMatrix(phi, y_n[d.k0:].copy(), d.k0)


def train_ls(r: RegressorMatrix, rcond: float = LS_RCOND) -> ReadoutWeights:
    """Least-squares readout through an SVD-based solver.

    Singular values below ``rcond * s_max`` count as zero. A rank-deficient
    regressor yields the minimum-norm solution with ``rank_deficient=True``.
    """
    rows, cols = r.phi.shape
    if rows <= cols:
        raise IdentError(f"need more rows than columns, got {rows}x{cols}")
    sol, _, rank, _ = np.linalg.lstsq(r.phi, r.y_target, rcond=rcond)
    deficient = rank < cols
    if deficient:
        log.info("regressor is rank deficient (rank %d of %d)", rank, cols)
    return ReadoutWeights.from_vector(sol, 0.0, rank_deficient=deficient)


def lasso_objective(r: RegressorMatrix, w: np.ndarray, lam: float) -> float:
    res = r.y_target - r.phi @ w
    return float(res @ res + lam * np.sum(np.abs(w)))


def lambda_max(r: RegressorMatrix) -> float:
    """Smallest penalty for which the all-zero readout is optimal."""
    return float(2.0 * np.max(np.abs(r.phi.T @ r.y_target)))


@numba.njit(cache=True)
def _coordinate_descent(gram, corr, lam, w, tol, max_sweeps):
    p = w.size
    # resid_corr = corr - gram @ w, kept current after every coordinate move
    resid_corr = corr - gram @ w
    half = 0.5 * lam
    for sweep in range(max_sweeps):
        max_delta = 0.0
        max_w = 0.0
        for j in range(p):
            g = gram[j, j]
            old = w[j]
            if g <= 0.0:
                new = 0.0
            else:
                z = resid_corr[j] + g * old
                if z > half:
                    new = (z - half) / g
                elif z < -half:
                    new = (z + half) / g
                else:
                    new = 0.0
            delta = new - old
            if delta != 0.0:
                w[j] = new
                for i in range(p):
                    resid_corr[i] -= gram[i, j] * delta
                if abs(delta) > max_delta:
                    max_delta = abs(delta)
            if abs(new) > max_w:
                max_w = abs(new)
        if max_delta <= tol * max(1.0, max_w):
            return sweep + 1, True
    return max_sweeps, False


def train_lasso(
    r: RegressorMatrix,
    lam: float,
    tol: float = 1e-9,
    max_sweeps: int = 1_000_000,
    w_init: Optional[np.ndarray] = None,
) -> ReadoutWeights:
    """Minimize ``||y - phi w||^2 + lam * ||w||_1`` by cyclic coordinate descent.

    Converged once a full sweep moves no coefficient by more than
    ``tol * max(1, max|w|)``. ``w_out2`` is penalized like every other
    coefficient and there is no intercept.
    """
    if lam < 0:
        raise IdentError(f"lambda must be >= 0, got {lam}")
    gram = r.phi.T @ r.phi
    corr = r.phi.T @ r.y_target
    p = gram.shape[0]
    w = np.zeros(p) if w_init is None else np.array(w_init, dtype=float)
    sweeps, ok = _coordinate_descent(gram, corr, float(lam), w, float(tol),
                                     int(max_sweeps))
    rw = ReadoutWeights.from_vector(w, float(lam))
    if not ok:
        raise LassoNotConverged(rw, lasso_objective(r, w, lam), sweeps)
    log.debug("lasso lam=%.3g converged in %d sweeps, |support|=%d",
              lam, sweeps, rw.support.size)
    return rw


def fitting(y_sys: Sequence[float], y_model: Sequence[float]) -> float:
    """Fit percentage ``100 (1 - |y_sys - y_model| / |y_sys - mean(y_sys)|)``."""
    y_sys = np.asarray(y_sys, dtype=float)
    y_model = np.asarray(y_model, dtype=float)
    if y_sys.shape != y_model.shape:
        raise IdentError(f"length mismatch: {y_sys.size} vs {y_model.size}")
    spread = np.linalg.norm(y_sys - y_sys.mean())
    if spread == 0.0:
        raise FittingUndefined("fitting is undefined for a constant y_sys")
    return float(100.0 * (1.0 - np.linalg.norm(y_sys - y_model) / spread))


@numba.njit(cache=True)
def _free_run_kernel(indptr, cols, vals, w_u, w_y, r_idx, r_val, w2, x, u_prev,
                     u, y0, use_y0):
    n = x.size
    out = np.empty(u.size)
    x_new = np.empty(n)
    for k in range(u.size):
        y = 0.0
        for p in range(r_idx.size):
            y += r_val[p] * x[r_idx[p]]
        y += w2 * u_prev
        out[k] = y
        fb = y0 if (k == 0 and use_y0) else y
        for i in range(n):
            acc = 0.0
            for p in range(indptr[i], indptr[i + 1]):
                acc += vals[p] * x[cols[p]]
            x_new[i] = math.tanh(acc + w_u[i] * u[k] + w_y[i] * fb)
        x, x_new = x_new, x
        u_prev = u[k]
    return out


def free_run(
    w: ReservoirWeights,
    rw: ReadoutWeights,
    u: Sequence[float],
    x0: Union[EsnState, np.ndarray, None] = None,
    y0: Optional[float] = None,
) -> np.ndarray:
    """Simulate the trained network fed back by its own output.

    Returns ``y(0..T-1)``. ``y0``, when given, replaces the model output in the
    first feedback term (handy after a teacher-forced warm-up).

    Sums run over structural nonzeros in index order, so a network pruned to a
    closed state set reproduces the original bit for bit even when its output
    loop amplifies round-off.
    """
    s = _as_state(w, x0)
    if rw.n != w.n:
        raise IdentError(f"readout has {rw.n} states, reservoir has {w.n}")
    rows, cols = np.nonzero(w.w_x)
    indptr = np.zeros(w.n + 1, dtype=np.int64)
    np.cumsum(np.bincount(rows, minlength=w.n), out=indptr[1:])
    r_idx = np.flatnonzero(rw.w_out1)
    return _free_run_kernel(
        indptr, cols.astype(np.int64), w.w_x[rows, cols], w.w_u, w.w_y,
        r_idx, rw.w_out1[r_idx], float(rw.w_out2),
        np.array(s.x, dtype=float), float(s.u_prev), np.asarray(u, dtype=float),
        0.0 if y0 is None else float(y0), y0 is not None)


@dataclass(frozen=True)
class EsnModel:
    """A trained network together with its signal normalization."""

    reservoir: ReservoirWeights
    readout: ReadoutWeights
    scaling: Scaling = IDENTITY
    k0: int = 0
    label: str = ""

    @property
    def n(self) -> int:
        return self.reservoir.n

    def with_readout(self, rw: ReadoutWeights, **kw) -> "EsnModel":
        return replace(self, readout=rw, **kw)

    def warm_state(self, u: np.ndarray, y: np.ndarray) -> EsnState:
        """Teacher-forced state after consuming ``(u, y)`` from rest."""
        w = self.reservoir
        x = np.zeros(w.n)
        u_n = self.scaling.u_in(u)
        y_n = self.scaling.y_in(y)
        for k in range(len(u_n)):
            x = np.tanh(w.w_x @ x + w.w_u * u_n[k] + w.w_y * y_n[k])
        u_prev = float(u_n[-1]) if len(u_n) else 0.0
        return EsnState(x, u_prev)

    def simulate_validation(self, d: Dataset, warmup: Optional[int] = None):
        """Free-run prediction over ``d`` after a teacher-forced warm-up.

        Returns ``(y_measured, y_model)`` in plant units, both restricted to
        the samples after the warm-up.
        """
        k0 = self.k0 if warmup is None else warmup
        if k0 >= len(d):
            raise IdentError(f"warm-up {k0} leaves no validation samples")
        s = self.warm_state(d.u[:k0], d.y[:k0])
        y_n = free_run(self.reservoir, self.readout, self.scaling.u_in(d.u[k0:]), s)
        return d.y[k0:], self.scaling.y_out(y_n)

    def validate(self, d: Dataset, warmup: Optional[int] = None) -> float:
        y_sys, y_mod = self.simulate_validation(d, warmup)
        return fitting(y_sys, y_mod)


def train_model(
    w: ReservoirWeights,
    training: Dataset,
    lam: float = 0.0,
    scaling: Optional[Scaling] = None,
    label: str = "",
) -> EsnModel:
    """Collect, train (LS when ``lam == 0``) and bundle an :class:`EsnModel`."""
    if scaling is None:
        scaling = Scaling.from_range(training.u, training.y)
    r = collect(w, training, scaling=scaling)
    rw = train_ls(r) if lam == 0 else train_lasso(r, lam)
    return EsnModel(w, rw, scaling, training.k0, label)
