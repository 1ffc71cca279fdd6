"""pH neutralization benchmark plant and excitation signals.

The reactor model is the three-state reaction-invariant model of Henson and
Seborg (1994, "Adaptive nonlinear control of a pH neutralization process",
IEEE Trans. Control Syst. Technol. 2(3)). It is external to the ESN method
itself and only serves as the "real" system to identify and control.

States are the tank level ``h`` [cm] and the reaction invariants ``Wa4``
(charge balance) and ``Wb4`` (carbonate balance) [mol/L]::

    A dh/dt      = q1 + q2 + q3 - Cv (h + z)^nv
    A h dWa4/dt  = q1 (Wa1 - Wa4) + q2 (Wa2 - Wa4) + q3 (Wa3 - Wa4)
    A h dWb4/dt  = q1 (Wb1 - Wb4) + q2 (Wb2 - Wb4) + q3 (Wb3 - Wb4)

and the pH is the root of the static charge relation

    Wa4 + 10^(pH-14) - 10^(-pH)
        + Wb4 (1 + 2 10^(pH-pK2)) / (1 + 10^(pK1-pH) + 10^(pH-pK2)) = 0

q1 (acid) is constant, q2 (buffer) is the unmeasured disturbance channel and
q3 (base) is the manipulated input. Flows are in mL/s.
"""
from __future__ import annotations

import bisect
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Protocol, Sequence

import numpy as np


class PlantError(RuntimeError):
    pass


@dataclass(frozen=True)
class PhParameters:
    area: float = 207.0         # tank cross-section [cm^2]
    z: float = 11.5             # outlet elevation offset [cm]
    cv: float = 4.59            # valve coefficient [mL / (cm^nv s)]
    nv: float = 0.607           # valve exponent
    pk1: float = 6.35
    pk2: float = 10.25
    wa1: float = 3.0e-3         # HNO3 stream
    wb1: float = 0.0
    wa2: float = -3.0e-2        # NaHCO3 buffer stream
    wb2: float = 3.0e-2
    wa3: float = -3.05e-3       # NaOH / NaHCO3 base stream
    wb3: float = 5.0e-5
    q1: float = 16.6            # nominal acid flow
    q2: float = 0.55            # nominal buffer flow
    substep: float = 1.0        # RK4 step [s]


NOMINAL = PhParameters()
# base flow that holds the nominal plant at pH 7
U_NOMINAL = 15.556


def ph_from_invariants(wa4: float, wb4: float, p: PhParameters = NOMINAL,
                       tol: float = 1e-10) -> float:
    """Solve the static charge relation for pH by bisection on [0, 14]."""
    k1 = 10.0 ** p.pk1
    k2 = 10.0 ** -p.pk2

    def charge(ph):
        h = 10.0 ** -ph
        r2 = k2 / h
        return wa4 + 1e-14 / h - h + wb4 * (1.0 + 2.0 * r2) / (1.0 + k1 * h + r2)

    lo, hi = 0.0, 14.0
    f_lo, f_hi = charge(lo), charge(hi)
    if not (f_lo <= 0.0 <= f_hi):
        raise PlantError(
            f"pH root not bracketed in [0, 14] (Wa4={wa4:.3g}, Wb4={wb4:.3g})"
        )
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if charge(mid) > 0.0:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def _rhs(x, q1, q2, q3, p: PhParameters):
    h, wa4, wb4 = x
    if h <= 0.0:
        raise PlantError(f"tank level became non-positive ({h})")
    q4 = p.cv * (h + p.z) ** p.nv
    ah = p.area * h
    return (
        (q1 + q2 + q3 - q4) / p.area,
        (q1 * (p.wa1 - wa4) + q2 * (p.wa2 - wa4) + q3 * (p.wa3 - wa4)) / ah,
        (q1 * (p.wb1 - wb4) + q2 * (p.wb2 - wb4) + q3 * (p.wb3 - wb4)) / ah,
    )


def _rk4(x, q1, q2, q3, p, t_s, substep):
    n_sub = max(1, int(round(t_s / substep)))
    dt = t_s / n_sub
    for _ in range(n_sub):
        k1 = _rhs(x, q1, q2, q3, p)
        k2 = _rhs(tuple(a + 0.5 * dt * b for a, b in zip(x, k1)), q1, q2, q3, p)
        k3 = _rhs(tuple(a + 0.5 * dt * b for a, b in zip(x, k2)), q1, q2, q3, p)
        k4 = _rhs(tuple(a + dt * b for a, b in zip(x, k3)), q1, q2, q3, p)
        x = tuple(
            a + dt / 6.0 * (b1 + 2.0 * b2 + 2.0 * b3 + b4)
            for a, b1, b2, b3, b4 in zip(x, k1, k2, k3, k4)
        )
    return x


@dataclass(frozen=True)
class PhPlant:
    """Immutable snapshot of the reactor: state plus current disturbance flows."""

    x: tuple = (14.0, -4.32e-4, 5.28e-4)
    q1: float = NOMINAL.q1
    q2: float = NOMINAL.q2
    params: PhParameters = field(default=NOMINAL, repr=False)

    @property
    def ph(self) -> float:
        return ph_from_invariants(self.x[1], self.x[2], self.params)

    @classmethod
    def steady(cls, q3: float = U_NOMINAL, q2: Optional[float] = None,
               params: PhParameters = NOMINAL) -> "PhPlant":
        """Equilibrium reached with all flows frozen at the given values."""
        q1 = params.q1
        q2 = params.q2 if q2 is None else q2
        q = q1 + q2 + q3
        h = (q / params.cv) ** (1.0 / params.nv) - params.z
        wa4 = (q1 * params.wa1 + q2 * params.wa2 + q3 * params.wa3) / q
        wb4 = (q1 * params.wb1 + q2 * params.wb2 + q3 * params.wb3) / q
        return cls((h, wa4, wb4), q1, q2, params)


def plant_step(p: PhPlant, q3: float, t_s: float,
               substep: Optional[float] = None) -> tuple[PhPlant, float]:
    """Hold ``q3`` for ``t_s`` seconds; returns the new plant and its pH."""
    if t_s <= 0:
        raise PlantError(f"t_s must be positive, got {t_s}")
    if q3 < 0 or p.q1 < 0 or p.q2 < 0:
        raise PlantError("flows must be nonnegative")
    dt = p.params.substep if substep is None else substep
    x = _rk4(p.x, p.q1, p.q2, float(q3), p.params, t_s, dt)
    nxt = replace(p, x=x)
    return nxt, nxt.ph


class DiscretePlant(Protocol):
    """Anything a closed loop can measure and drive at a fixed sampling time."""

    t_s: float

    def measure(self) -> float: ...

    def advance(self, u: float) -> None: ...


class StepSchedule:
    """Piecewise-constant signal: ``values[i]`` from ``times[i]`` on."""

    def __init__(self, times: Sequence[float] = (), values: Sequence[float] = (),
                 initial: float = 0.0):
        times = [float(t) for t in times]
        if len(times) != len(values):
            raise ValueError("times and values must have equal length")
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("schedule times must be strictly increasing")
        self.times = times
        self.values = [float(v) for v in values]
        self.initial = float(initial)

    def __call__(self, t: float) -> float:
        i = bisect.bisect_right(self.times, t)
        return self.initial if i == 0 else self.values[i - 1]

    def sample(self, t: Sequence[float]) -> np.ndarray:
        return np.array([self(ti) for ti in t])


def disturbance_schedule(times: Sequence[float], values: Sequence[float],
                         nominal: float = NOMINAL.q2) -> StepSchedule:
    """Buffer-flow (q2) schedule; empty lists give the nominal constant flow."""
    return StepSchedule(times, values, nominal)


class PhProcess:
    """Stateful wrapper around :class:`PhPlant` implementing :class:`DiscretePlant`."""

    def __init__(self, plant: PhPlant, t_s: float = 10.0,
                 q2: Optional[Callable[[float], float]] = None,
                 substep: Optional[float] = None):
        self.plant = plant
        self.t_s = float(t_s)
        self.t = 0.0
        self.q2 = q2
        self.substep = substep
        self._y = plant.ph

    def measure(self) -> float:
        return self._y

    def advance(self, u: float) -> None:
        if self.q2 is not None:
            self.plant = replace(self.plant, q2=self.q2(self.t))
        self.plant, self._y = plant_step(self.plant, u, self.t_s, self.substep)
        self.t += self.t_s


def simulate_open_loop(plant: PhPlant, u: Sequence[float], t_s: float = 10.0,
                       q2: Optional[Callable[[float], float]] = None,
                       substep: Optional[float] = None) -> np.ndarray:
    """Outputs ``y(0..T-1)`` where ``y(k)`` is measured before ``u(k)`` is applied."""
    proc = PhProcess(plant, t_s, q2, substep)
    y = np.empty(len(u))
    for k, uk in enumerate(u):
        y[k] = proc.measure()
        proc.advance(uk)
    return y


@dataclass(frozen=True)
class MprsConfig:
    levels: tuple = tuple(np.linspace(12.7, 16.7, 5))
    fast_period: float = 10.0
    slow_period: float = 1000.0
    mix: float = 0.5
    seed: int = 0
    duration: float = 40000.0
    t_s: float = 10.0

    def __post_init__(self):
        if len(self.levels) < 2:
            raise ValueError("need at least two levels")
        if not 0.0 <= self.mix <= 1.0:
            raise ValueError(f"mix must be in [0, 1], got {self.mix}")
        for period in (self.fast_period, self.slow_period):
            ratio = period / self.t_s
            if period <= 0 or abs(ratio - round(ratio)) > 1e-9:
                raise ValueError(f"period {period} is not a multiple of t_s={self.t_s}")


def generate_mprs(c: MprsConfig) -> np.ndarray:
    """Multilevel pseudo-random signal sampled every ``t_s``.

    A fast band (dwell ``fast_period``) is followed by a slow band (dwell
    ``slow_period``). Each dwell draws a level uniformly from ``levels``, so
    consecutive dwells may repeat a level. The fast band length is rounded
    down to a whole number of slow periods so that every switch instant is a
    multiple of its band's period measured from t = 0.
    """
    n_total = int(round(c.duration / c.t_s))
    if n_total <= 0:
        return np.empty(0)
    rng = np.random.default_rng(c.seed)
    levels = np.asarray(c.levels, dtype=float)
    fast = int(round(c.fast_period / c.t_s))
    slow = int(round(c.slow_period / c.t_s))
    n_fast = int(c.mix * n_total) // slow * slow if c.mix < 1.0 else n_total

    out = np.empty(n_total)
    k = 0
    while k < n_total:
        dwell = fast if k < n_fast else slow
        end = min(k + dwell, n_total)
        if k < n_fast:
            end = min(end, n_fast)
        out[k:end] = levels[rng.integers(levels.size)]
        k = end
    return out
