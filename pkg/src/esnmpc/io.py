"""File formats.

Model / reservoir files are JSON documents::

    {"format": "esnmpc-network", "version": 1,
     "reservoir": {"n", "density", "seed", "scaling_mode", "target",
                   "w_x" (n*n, row-major), "w_u" (n), "w_y" (n)},
     "readout":   {"w_out1" (n), "w_out2", "lambda", "rank_deficient"},   # optional
     "scaling":   {"u_shift", "u_scale", "y_shift", "y_scale"},            # optional
     "k0", "label", "config"}

Every float is written with 17 significant digits, so a reload is
bit-exact. Datasets are two-column CSV (``u,y``) with a JSON sidecar holding
the sampling time; closed-loop logs are CSV with the run configuration in
``#``-prefixed header lines.
"""
from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Iterable, Optional, Union

import numpy as np

from .ident import Dataset, EsnModel, ReadoutWeights, Scaling
from .mpc import LOG_COLUMNS, LogRecord
from .reservoir import ReservoirWeights

FORMAT = "esnmpc-network"
VERSION = 1
PathLike = Union[str, Path]


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def _array(a) -> str:
    return "[" + ", ".join(_fmt(v) for v in np.asarray(a, dtype=float).ravel()) + "]"


def _reservoir_json(w: ReservoirWeights) -> str:
    meta = {
        "n": w.n,
        "density": w.density,
        "seed": w.seed,
        "scaling_mode": w.scaling_mode,
        "target": w.target,
    }
    head = json.dumps(meta)[:-1]
    return (f'{head}, "w_x": {_array(w.w_x)}, '
            f'"w_u": {_array(w.w_u)}, "w_y": {_array(w.w_y)}}}')


def dumps_network(w: ReservoirWeights, rw: Optional[ReadoutWeights] = None,
                  scaling: Optional[Scaling] = None, k0: int = 0, label: str = "",
                  config: Optional[dict] = None) -> str:
    parts = [f'"format": "{FORMAT}"', f'"version": {VERSION}',
             f'"reservoir": {_reservoir_json(w)}']
    if rw is not None:
        parts.append(
            f'"readout": {{"w_out1": {_array(rw.w_out1)}, '
            f'"w_out2": {_fmt(rw.w_out2)}, "lambda": {_fmt(rw.lam)}, '
            f'"rank_deficient": {json.dumps(bool(rw.rank_deficient))}}}'
        )
    if scaling is not None:
        parts.append(
            '"scaling": {' + ", ".join(
                f'"{k}": {_fmt(getattr(scaling, k))}'
                for k in ("u_shift", "u_scale", "y_shift", "y_scale")) + "}"
        )
    parts.append(f'"k0": {int(k0)}')
    parts.append(f'"label": {json.dumps(label)}')
    if config is not None:
        parts.append(f'"config": {json.dumps(config, sort_keys=True)}')
    return "{\n  " + ",\n  ".join(parts) + "\n}\n"


def save_reservoir(path: PathLike, w: ReservoirWeights) -> None:
    Path(path).write_text(dumps_network(w))


def save_model(path: PathLike, model: EsnModel, config: Optional[dict] = None) -> None:
    Path(path).write_text(dumps_network(model.reservoir, model.readout, model.scaling,
                                        model.k0, model.label, config))


def _load_doc(path: PathLike) -> dict:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != FORMAT:
        raise ValueError(f"{path}: not an {FORMAT} file")
    if doc.get("version") != VERSION:
        raise ValueError(f"{path}: unsupported version {doc.get('version')}")
    return doc


def _reservoir_from(doc: dict) -> ReservoirWeights:
    r = doc["reservoir"]
    n = int(r["n"])
    return ReservoirWeights(
        np.array(r["w_x"], dtype=float).reshape(n, n),
        np.array(r["w_u"], dtype=float),
        np.array(r["w_y"], dtype=float),
        density=r["density"], seed=r["seed"],
        scaling_mode=r["scaling_mode"], target=r["target"],
    )


def load_reservoir(path: PathLike) -> ReservoirWeights:
    return _reservoir_from(_load_doc(path))


def load_model(path: PathLike) -> EsnModel:
    doc = _load_doc(path)
    if "readout" not in doc:
        raise ValueError(f"{path}: reservoir has no trained readout")
    ro = doc["readout"]
    rw = ReadoutWeights(np.array(ro["w_out1"], dtype=float), ro["w_out2"],
                        ro["lambda"], ro["rank_deficient"])
    scaling = Scaling(**doc["scaling"]) if "scaling" in doc else Scaling()
    return EsnModel(_reservoir_from(doc), rw, scaling, doc.get("k0", 0),
                    doc.get("label", ""))


def save_dataset(path: PathLike, d: Dataset, meta: Optional[dict] = None) -> None:
    """Write ``u,y`` CSV plus a ``.json`` sidecar with the sampling time."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["u", "y"])
        for u, y in zip(d.u, d.y):
            w.writerow([_fmt(u), _fmt(y)])
    side = {"t_s": d.t_s, "samples": len(d)}
    if meta:
        side.update(meta)
    path.with_suffix(".json").write_text(json.dumps(side, indent=2, sort_keys=True) + "\n")


def load_dataset(path: PathLike, k0: int = 0) -> Dataset:
    path = Path(path)
    side = path.with_suffix(".json")
    t_s = json.loads(side.read_text())["t_s"] if side.exists() else 10.0
    with path.open(newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    header = [h.strip() for h in rows[0]]
    iu, iy = header.index("u"), header.index("y")
    data = np.array([[float(r[iu]), float(r[iy])] for r in rows[1:]])
    if data.size == 0:
        raise ValueError(f"{path}: dataset is empty")
    return Dataset(data[:, 0], data[:, 1], t_s, k0)


def write_log(path: PathLike, records: Iterable[LogRecord],
              header: Optional[dict] = None) -> None:
    with Path(path).open("w", newline="") as fh:
        if header is not None:
            for line in json.dumps(header, indent=1, sort_keys=True).splitlines():
                fh.write(f"# {line}\n")
        w = csv.writer(fh)
        w.writerow(LOG_COLUMNS)
        for r in records:
            w.writerow([
                _fmt(r.time), _fmt(r.y_ref), _fmt(r.y_sys), _fmt(r.y_model),
                _fmt(r.d_hat), _fmt(r.u), _fmt(r.delta_u), _fmt(r.cost),
                r.iterations, _fmt(r.solve_time),
            ])


def read_log(path: PathLike) -> dict:
    """Columns of a closed-loop log as float arrays."""
    with Path(path).open(newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    cols = rows[0]
    data = np.array([[float(v) for v in r] for r in rows[1:]])
    return {c: data[:, i] for i, c in enumerate(cols)}


def read_header(path: PathLike) -> dict:
    lines = []
    with Path(path).open() as fh:
        for line in fh:
            if not line.startswith("#"):
                break
            lines.append(line[2:])
    return json.loads("".join(lines)) if lines else {}
