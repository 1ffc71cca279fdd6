"""Echo state network reservoir: generation, simulation and stability certificate.

The state-space model is

    x(k+1) = tanh(W_x x(k) + W_u u(k) + W_y y(k))
    y(k)   = W_out1 x(k) + W_out2 u(k-1)

Only the reservoir part (W_x, W_u, W_y) lives here; the trained readout is in
:mod:`esnmpc.ident`.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal, Optional, Sequence

import numpy as np

ScalingMode = Literal["norm", "radius"]

# delta_gas is only certified when ||W_x|| < 1 - DELTA_GAS_TOL
DELTA_GAS_TOL = 1e-9


class ReservoirError(ValueError):
    """Invalid reservoir parameters or inconsistent dimensions."""


@dataclass(frozen=True)
class ReservoirWeights:
    """Fixed random weights of an ESN reservoir.

    ``w_u`` and ``w_y`` are stored as 1-D arrays of length ``n`` (SISO).
    """

    w_x: np.ndarray
    w_u: np.ndarray
    w_y: np.ndarray
    density: float = 1.0
    seed: Optional[int] = None
    scaling_mode: ScalingMode = "norm"
    target: Optional[float] = None

    def __post_init__(self):
        w_x = np.atleast_2d(np.asarray(self.w_x, dtype=float))
        w_u = np.asarray(self.w_u, dtype=float).reshape(-1)
        w_y = np.asarray(self.w_y, dtype=float).reshape(-1)
        n = w_x.shape[0]
        if w_x.shape != (n, n):
            raise ReservoirError(f"w_x must be square, got {w_x.shape}")
        if w_u.shape != (n,) or w_y.shape != (n,):
            raise ReservoirError(
                f"w_u and w_y must have length {n}, got {w_u.shape} and {w_y.shape}"
            )
        object.__setattr__(self, "w_x", w_x)
        object.__setattr__(self, "w_u", w_u)
        object.__setattr__(self, "w_y", w_y)

    @property
    def n(self) -> int:
        return self.w_x.shape[0]


@dataclass(frozen=True)
class EsnState:
    """Reservoir activations plus the last applied input.

    ``u_prev`` is the auxiliary state xi(k) = u(k-1) that the readout needs.
    """

    x: np.ndarray
    u_prev: float = 0.0

    @classmethod
    def zeros(cls, n: int, u_prev: float = 0.0) -> "EsnState":
        return cls(np.zeros(n), float(u_prev))


@dataclass(frozen=True)
class StabilityCertificate:
    operator_norm: float
    spectral_radius: float
    delta_gas: bool
    alpha: Optional[float] = None
    q_min_eig: Optional[float] = field(default=None, repr=False)


def _spectral_radius(w_x: np.ndarray) -> float:
    if not w_x.any():
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvals(w_x))))


def generate_reservoir(
    n: int,
    density: float = 0.05,
    seed: int = 0,
    target: float = 0.9,
    mode: ScalingMode = "norm",
) -> ReservoirWeights:
    """Draw a sparse random reservoir and scale it to ``target``.

    ``mode="norm"`` scales the largest singular value of ``W_x`` to ``target``,
    which makes the reservoir delta-GAS by construction. ``mode="radius"``
    scales the spectral radius instead (the classical echo-state heuristic).

    Nonzero entries and the input/feedback weights are uniform on [-1, 1].
    """
    if n < 1:
        raise ReservoirError(f"n must be >= 1, got {n}")
    if not 0.0 < density <= 1.0:
        raise ReservoirError(f"density must be in (0, 1], got {density}")
    if not 0.0 < target < 1.0:
        raise ReservoirError(f"target must be in (0, 1), got {target}")
    if mode not in ("norm", "radius"):
        raise ReservoirError(f"unknown scaling mode {mode!r}")

    rng = np.random.default_rng(seed)
    nnz = int(round(density * n * n))
    if nnz == 0:
        raise ReservoirError(
            f"density {density} leaves no nonzero entry in a {n}x{n} reservoir"
        )
    idx = rng.choice(n * n, size=nnz, replace=False)
    values = rng.uniform(-1.0, 1.0, size=nnz)
    # a drawn exact zero would silently lower the structural density
    while np.any(values == 0.0):
        zeros = values == 0.0
        values[zeros] = rng.uniform(-1.0, 1.0, size=int(zeros.sum()))
    w_x = np.zeros(n * n)
    w_x[idx] = values
    w_x = w_x.reshape(n, n)

    if mode == "norm":
        scale = float(np.linalg.norm(w_x, 2))
    else:
        scale = _spectral_radius(w_x)
    if scale == 0.0:
        raise ReservoirError(
            f"reservoir {mode} is zero (seed={seed}); cannot scale to {target}"
        )
    w_x = (w_x / scale) * target

    w_u = rng.uniform(-1.0, 1.0, size=n)
    w_y = rng.uniform(-1.0, 1.0, size=n)
    return ReservoirWeights(w_x, w_u, w_y, density=density, seed=seed,
                            scaling_mode=mode, target=target)


def step(w: ReservoirWeights, s: EsnState, u: float, y: float) -> EsnState:
    """Advance the reservoir one sample with input ``u`` and output feedback ``y``."""
    x = np.asarray(s.x, dtype=float)
    if x.shape != (w.n,):
        raise ReservoirError(f"state has shape {x.shape}, reservoir has n={w.n}")
    x_next = np.tanh(w.w_x @ x + w.w_u * u + w.w_y * y)
    return EsnState(x_next, float(u))


def readout(s: EsnState, w_out1: np.ndarray, w_out2: float) -> float:
    """Output equation ``W_out1 x + W_out2 u_prev``."""
    w_out1 = np.asarray(w_out1, dtype=float).reshape(-1)
    x = np.asarray(s.x, dtype=float)
    if w_out1.shape != x.shape:
        raise ReservoirError(
            f"readout row has length {w_out1.size}, state has length {x.size}"
        )
    return float(w_out1 @ x + float(w_out2) * s.u_prev)


def certify(w: ReservoirWeights) -> StabilityCertificate:
    """Check the sufficient condition ||W_x|| < 1 for incremental stability.

    When it holds, any two trajectories under the same forcing satisfy
    ``|x(k) - x'(k)| <= alpha**k |x(0) - x'(0)|`` with
    ``alpha = sqrt(1 - lambda_min(I - W_x^T W_x))``.
    """
    w_x = w.w_x
    norm = float(np.linalg.norm(w_x, 2)) if w_x.any() else 0.0
    rho = min(_spectral_radius(w_x), norm)
    delta_gas = norm < 1.0 - DELTA_GAS_TOL
    if not delta_gas:
        return StabilityCertificate(norm, rho, False)
    q = np.eye(w.n) - w_x.T @ w_x
    q_min = float(np.linalg.eigvalsh(q)[0])
    alpha = float(np.sqrt(max(0.0, 1.0 - q_min)))
    return StabilityCertificate(norm, rho, True, alpha, q_min)


def simulate(
    w: ReservoirWeights,
    x0: np.ndarray,
    u: Sequence[float],
    y: Sequence[float],
) -> np.ndarray:
    """Run the reservoir forced by ``(u, y)``; returns states ``x(0..T)`` as rows."""
    u = np.asarray(u, dtype=float)
    y = np.asarray(y, dtype=float)
    if u.shape != y.shape:
        raise ReservoirError("u and y must have the same length")
    x = np.asarray(x0, dtype=float).copy()
    if x.shape != (w.n,):
        raise ReservoirError(f"x0 has shape {x.shape}, reservoir has n={w.n}")
    out = np.empty((u.size + 1, w.n))
    out[0] = x
    drive = np.outer(u, w.w_u) + np.outer(y, w.w_y)
    w_xt = w.w_x.T
    for k in range(u.size):
        x = np.tanh(x @ w_xt + drive[k])
        out[k + 1] = x
    return out


def echo_state_probe(
    w: ReservoirWeights,
    u: Sequence[float],
    y: Sequence[float],
    k_probe: int,
    seed: Optional[int] = None,
    x0: Optional[np.ndarray] = None,
    x0_other: Optional[np.ndarray] = None,
) -> float:
    """Distance after ``k_probe`` steps between two runs from different initial states.

    Initial states default to independent draws uniform on (-1, 1)^n.
    """
    if k_probe < 1:
        raise ReservoirError(f"k_probe must be >= 1, got {k_probe}")
    u = np.asarray(u, dtype=float)[:k_probe]
    y = np.asarray(y, dtype=float)[:k_probe]
    if u.size < k_probe or y.size < k_probe:
        raise ReservoirError("forcing sequence shorter than k_probe")
    rng = np.random.default_rng(seed)
    if x0 is None:
        x0 = rng.uniform(-1.0, 1.0, size=w.n)
    if x0_other is None:
        x0_other = rng.uniform(-1.0, 1.0, size=w.n)
    xa = simulate(w, x0, u, y)[-1]
    xb = simulate(w, x0_other, u, y)[-1]
    return float(np.linalg.norm(xa - xb))
