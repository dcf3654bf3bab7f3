"""Ensemble archive (binary container) and per-snapshot CSV export.

The archive uses the framing of :mod:`polcoh.container` with kind
``"twa-ensemble"``. The header ``meta`` holds grid, model parameters, pump,
trajectory config and seed. Blocks are ``indices`` (int64 trajectory ids),
``times`` (ps), ``clipped`` (int64), then for every trajectory and snapshot
``psi/<t>/<s>`` (complex128, n x n) followed by ``n_res/<t>/<s>`` (float64).
"""

import csv
import dataclasses

import numpy as np

from .. import container
from ..errors import TrajectoryBlowup
from .engine import TrajectoryEnsemble
from .model import ModelParams, PumpProfile, SimulationGrid, TrajectoryConfig

KIND = "twa-ensemble"


def _meta(ens):
    pump = ens.pump
    if isinstance(pump, PumpProfile):
        pump_meta = {"type": "super-gaussian", **dataclasses.asdict(pump)}
    else:
        pump_meta = {"type": "array"}
    return {
        "grid": dataclasses.asdict(ens.grid),
        "params": dataclasses.asdict(ens.params),
        "pump": pump_meta,
        "config": dataclasses.asdict(ens.config),
        "seed": ens.config.seed,
        "failures": [
            {"trajectory": f.trajectory_index, "step": f.step} for f in ens.failures
        ],
    }


def write_ensemble(path, ens):
    n = ens.grid.n_side
    head = {
        "indices": np.asarray(ens.indices, dtype="<i8"),
        "times": np.asarray(ens.times, dtype="<f8"),
        "clipped": np.asarray(ens.clipped, dtype="<i8"),
    }
    specs = [container.block_spec(k, v) for k, v in head.items()]
    if not isinstance(ens.pump, PumpProfile):
        head["pump_field"] = np.asarray(ens.pump, dtype="<f8")
        specs.append(container.block_spec("pump_field", head["pump_field"]))
    for t in range(ens.n_trajectories):
        for s in range(ens.n_snapshots):
            specs.append({"name": f"psi/{t}/{s}", "dtype": "<c16", "shape": [n, n]})
            specs.append({"name": f"n_res/{t}/{s}", "dtype": "<f8", "shape": [n, n]})
    with open(path, "wb") as fh:
        container.write_header(fh, KIND, _meta(ens), specs)
        for k, v in head.items():
            container.write_block(fh, v, v.dtype)
        for t in range(ens.n_trajectories):
            for s in range(ens.n_snapshots):
                container.write_block(fh, ens.psi[t, s], "<c16")
                container.write_block(fh, ens.n_res[t, s], "<f8")


def read_ensemble(path):
    header, arrays = container.read_container(path, expect_kind=KIND)
    meta = header["meta"]
    grid = SimulationGrid(**meta["grid"])
    params = ModelParams(**meta["params"])
    config = TrajectoryConfig(**meta["config"])
    pm = dict(meta["pump"])
    if pm.pop("type") == "super-gaussian":
        pump = PumpProfile(**pm)
    else:
        pump = arrays["pump_field"]
    indices = arrays["indices"]
    times = arrays["times"]
    n = grid.n_side
    shape = (len(indices), len(times), n, n)
    psi = np.empty(shape, complex)
    n_res = np.empty(shape)
    for t in range(shape[0]):
        for s in range(shape[1]):
            psi[t, s] = arrays[f"psi/{t}/{s}"]
            n_res[t, s] = arrays[f"n_res/{t}/{s}"]
    failures = [TrajectoryBlowup(f["step"], f["trajectory"]) for f in meta.get("failures", [])]
    return TrajectoryEnsemble(
        grid=grid, params=params, pump=pump, config=config, indices=indices,
        times=times, psi=psi, n_res=n_res, clipped=arrays["clipped"], failures=failures,
    )


def export_snapshot_csv(path, state, grid):
    """One row per cell: ``ix,iy,x,y,psi_re,psi_im,n_res`` (um, um^-1, um^-2)."""
    x, y = grid.coordinates()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["ix", "iy", "x", "y", "psi_re", "psi_im", "n_res"])
        n = grid.n_side
        for i in range(n):
            for j in range(n):
                z = state.psi[i, j]
                w.writerow([i, j, repr(float(x[i, j])), repr(float(y[i, j])),
                            repr(float(z.real)), repr(float(z.imag)), repr(float(state.n_res[i, j]))])
