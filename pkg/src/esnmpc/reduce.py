"""Order reduction of a LASSO-trained ESN.

An ESN is a mixed network: the tanh neurons plus the linear auxiliary state
xi(k+1) = u(k) that carries the direct feedthrough. Once the readout is
sparse, a neuron can only influence the output if it is read out directly or
feeds, through a chain of nonzero reservoir couplings, a neuron that is.

Why closing over ``W_x`` alone is enough: write the kept set S and its
complement P. Closure gives ``W_x[S, P] = 0`` and ``W_out1[P] = 0``, so

    x_S(k+1) = tanh(W_x[S, S] x_S(k) + W_u[S] u(k) + W_y[S] y(k))
    y(k)     = W_out1[S] x_S(k) + W_out2 u(k-1)

is a closed system. The output fed back through ``W_y`` is a function of
``x_S`` and ``u`` only, so P neither sees nor alters it: the P block is
unobservable and can be dropped without changing the input-output map, for
any initial value of x_P. The closure is structural (exact stored zeros),
which is conservative: it never drops a state that matters, though an
algebraic decomposition might drop more.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterable, Optional

import numpy as np

from .ident import (LS_RCOND, Dataset, EsnModel, ReadoutWeights, collect,
                    train_ls)
from .reservoir import ReservoirWeights


class ReductionError(ValueError):
    pass


@dataclass(frozen=True)
class ReductionReport:
    n_before: int
    n_after: int
    removed: tuple
    kept: tuple
    fitting_before: float
    fitting_after_prune: float
    fitting_after_retrain: float

    def summary(self) -> str:
        lines = [
            f"states: {self.n_before} -> {self.n_after} "
            f"({100.0 * (1 - self.n_after / self.n_before):.1f}% removed)",
            f"fitting before reduction : {self.fitting_before:8.2f} %",
            f"fitting after pruning    : {self.fitting_after_prune:8.2f} %",
            f"fitting after retraining : {self.fitting_after_retrain:8.2f} %",
        ]
        return "\n".join(lines)


def observable_closure(w: ReservoirWeights, rw: ReadoutWeights) -> np.ndarray:
    """Smallest state set containing the readout support and closed under coupling.

    ``i`` in the set and ``W_x[i, j] != 0`` puts ``j`` in the set.
    """
    if rw.n != w.n:
        raise ReductionError(f"readout has {rw.n} states, reservoir has {w.n}")
    support = np.asarray(rw.support, dtype=int)
    if support.size == 0:
        raise ReductionError("readout has empty support: nothing observable to keep")
    coupled = w.w_x != 0.0
    keep = np.zeros(w.n, dtype=bool)
    keep[support] = True
    frontier = keep.copy()
    while frontier.any():
        reached = coupled[frontier].any(axis=0)
        frontier = reached & ~keep
        keep |= reached
    return np.flatnonzero(keep)


def is_closed(w: ReservoirWeights, keep: Iterable[int]) -> bool:
    keep = np.asarray(sorted(set(int(i) for i in keep)), dtype=int)
    mask = np.zeros(w.n, dtype=bool)
    mask[keep] = True
    return not np.any(w.w_x[np.ix_(mask, ~mask)] != 0.0)


def prune(w: ReservoirWeights, rw: ReadoutWeights, keep: Iterable[int]):
    """Restrict reservoir and readout to ``keep``.

    Rejects index sets that drop a read-out state or are not closed under
    coupling, since either would change the input-output behaviour.
    """
    keep = np.asarray(sorted(set(int(i) for i in keep)), dtype=int)
    if keep.size == 0:
        raise ReductionError("cannot prune to an empty network")
    if keep.min() < 0 or keep.max() >= w.n:
        raise ReductionError("keep indices out of range")
    missing = np.setdiff1d(rw.support, keep)
    if missing.size:
        raise ReductionError(f"keep drops read-out states {missing.tolist()}")
    if not is_closed(w, keep):
        raise ReductionError("keep is not closed under reservoir coupling")
    w_red = replace(
        w,
        w_x=w.w_x[np.ix_(keep, keep)],
        w_u=w.w_u[keep],
        w_y=w.w_y[keep],
    )
    rw_red = ReadoutWeights(rw.w_out1[keep], rw.w_out2, rw.lam, rw.rank_deficient)
    return w_red, rw_red


def prune_model(model: EsnModel, keep: Optional[Iterable[int]] = None) -> EsnModel:
    if keep is None:
        keep = observable_closure(model.reservoir, model.readout)
    w_red, rw_red = prune(model.reservoir, model.readout, keep)
    return replace(model, reservoir=w_red, readout=rw_red)


def reduce_and_retrain(model: EsnModel, training: Dataset, validation: Dataset,
                       rcond: float = LS_RCOND):
    """Closure, prune, then least-squares retraining on the reduced reservoir.

    Returns ``(pruned_model, retrained_model, report)``; fittings in the report
    are computed on ``validation``.
    """
    if model.readout.lam <= 0:
        raise ReductionError("reduction expects a readout trained with lambda > 0")
    w, rw = model.reservoir, model.readout
    keep = observable_closure(w, rw)
    removed = np.setdiff1d(np.arange(w.n), keep)
    pruned = prune_model(model, keep)
    r = collect(pruned.reservoir, training, scaling=model.scaling)
    retrained = pruned.with_readout(train_ls(r, rcond))
    report = ReductionReport(
        n_before=w.n,
        n_after=int(keep.size),
        removed=tuple(int(i) for i in removed),
        kept=tuple(int(i) for i in keep),
        fitting_before=model.validate(validation),
        fitting_after_prune=pruned.validate(validation),
        fitting_after_retrain=retrained.validate(validation),
    )
    return pruned, retrained, report
