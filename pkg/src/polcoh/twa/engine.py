"""Truncated-Wigner integration of the driven-dissipative polariton field.

The condensate field obeys

    dpsi = [-i/hbar H + (R n - gamma_c)/2 - i/hbar (g_r n + g_c |psi|^2_-)] psi dt + dW
    dn/dt = -(gamma_r + R |psi|^2_-) n + P

with |psi|^2_- = |psi|^2 - c/dV and complex Wiener increments satisfying
<dW dW*> = (R n + gamma_c) dt / (2 dV), <dW dW> = 0. The drift is advanced with
classical RK4 (spectral Laplacian, periodic box); one additive noise increment
per step uses the reservoir density frozen at the start of the step.

Trajectories are vectorised along a leading batch axis. Every trajectory draws
from its own generator seeded by (seed, index), so the result for a given
trajectory does not depend on which batch or thread computed it.
"""

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError, EnsembleFailure, TrajectoryBlowup
from .kernels import get_backend
from .model import FieldState, PumpProfile, check_step_stability
from .spectral import KineticOperator

log = logging.getLogger(__name__)


def trajectory_rng(seed, index):
    """Independent generator for trajectory ``index`` of a run seeded with ``seed``."""
    return np.random.Generator(np.random.SFC64(np.random.SeedSequence(int(seed), spawn_key=(int(index),))))


def init_vacuum_state(grid, rng):
    """Wigner vacuum: complex Gaussian noise with <|psi|^2> = 1/(2 dV) per cell, empty reservoir."""
    n = grid.n_side
    xi = rng.standard_normal((2, n, n))
    scale = math.sqrt(0.25 / grid.cell_volume)
    psi = scale * (xi[0] + 1j * xi[1])
    return FieldState(psi=psi, n_res=np.zeros((n, n)), time=0.0)


def _pump_field(pump, grid):
    if isinstance(pump, PumpProfile):
        return pump.evaluate(grid)
    field_ = np.asarray(pump, dtype=float)
    if field_.shape != (grid.n_side, grid.n_side):
        raise ValueError(f"pump array shape {field_.shape} does not match grid")
    return field_


class _Stepper:
    """RK4 + additive-noise stepper for a fixed-size batch of trajectories on one grid."""

    def __init__(self, params, pump_field, grid, dt, batch, backend=None, noise=True, fft=None):
        self.grid = grid
        self.params = params
        self.dt = float(dt)
        self.kern = get_backend(backend)
        self.noise = noise
        self.shape = (grid.n_side, grid.n_side)
        self.m = m = grid.n_side**2
        self.batch = batch
        self.pump = np.ascontiguousarray(pump_field, dtype=float).reshape(m)
        kfac = -1j * params.kinetic_coeff / params.hbar * grid.k_squared()
        self.kinetic = KineticOperator(kfac, batch, fft).apply
        self.noise_factor = self.dt / (4.0 * grid.cell_volume) if noise else 0.0
        self.coeffs = (
            params.condensation_rate,
            params.gamma_c,
            params.gamma_r,
            params.g_c,
            params.g_r,
            params.hbar,
            params.density_renorm / grid.cell_volume,
        )
        self.acc_psi = np.empty((batch, m), complex)
        self.acc_n = np.empty((batch, m))
        self.psi_s = np.empty((batch, m), complex)
        self.n_s = np.empty((batch, m))
        self.zero_xi = np.zeros((batch, 2, m))

    def step(self, psi, n, xi=None):
        """Advance ``psi``/``n`` (shape (batch, cells)) in place by one step."""
        k = self.kern
        dt = self.dt
        c = self.coeffs
        ps, ns, ap, an = self.psi_s, self.n_s, self.acc_psi, self.acc_n
        k.rk4_stage(psi, n, psi, n, self.kinetic(psi), self.pump, ap, an, ps, ns, 1.0, 0.5 * dt, True, *c)
        k.rk4_stage(psi, n, ps, ns, self.kinetic(ps), self.pump, ap, an, ps, ns, 2.0, 0.5 * dt, False, *c)
        k.rk4_stage(psi, n, ps, ns, self.kinetic(ps), self.pump, ap, an, ps, ns, 2.0, dt, False, *c)
        if xi is None:
            xi = self.zero_xi
        return k.rk4_finish(psi, n, ps, ns, self.kinetic(ps), self.pump, ap, an, xi,
                            dt, self.noise_factor, *c)


def twa_step(state, params, pump, grid, dt, rng=None, *, backend=None):
    """Return the field advanced by one step of size ``dt``.

    ``rng=None`` switches the Wiener increment off (deterministic drift only).
    Raises TrajectoryBlowup if the new field is not finite.
    """
    stepper = _Stepper(params, _pump_field(pump, grid), grid, dt, 1, backend, noise=rng is not None)
    m = stepper.m
    psi = np.ascontiguousarray(state.psi, dtype=complex).reshape(1, m).copy()
    n = np.ascontiguousarray(state.n_res, dtype=float).reshape(1, m).copy()
    xi = rng.standard_normal((1, 2, m)) if rng is not None else None
    clipped, bad = stepper.step(psi, n, xi)
    if bad[0]:
        raise TrajectoryBlowup(step=1)
    return FieldState(
        psi=psi.reshape(stepper.shape),
        n_res=n.reshape(stepper.shape),
        time=state.time + dt,
        clipped=state.clipped + int(clipped[0]),
    )


@dataclass
class TrajectoryEnsemble:
    """Post-burn-in snapshots of all surviving trajectories.

    ``psi`` has shape (trajectories, snapshots, n, n); ``n_res`` likewise.
    """

    grid: object
    params: object
    pump: object
    config: object
    indices: np.ndarray
    times: np.ndarray
    psi: np.ndarray
    n_res: np.ndarray
    clipped: np.ndarray
    failures: list = field(default_factory=list)

    @property
    def n_trajectories(self):
        return self.psi.shape[0]

    @property
    def n_snapshots(self):
        return self.psi.shape[1]

    def snapshot(self, trajectory, snap):
        return FieldState(
            psi=self.psi[trajectory, snap],
            n_res=self.n_res[trajectory, snap],
            time=float(self.times[snap]),
        )


def _validate_run(config, params, pump_field, grid):
    grid.check_validity(params)
    check_step_stability(config.dt, params, pump_field, grid)


def _run_batch(indices, config, params, pump_field, grid, backend=None, noise=True):
    """Integrate trajectories ``indices`` together.

    Returns a dict index -> (psi snapshots, n snapshots, clipped) or TrajectoryBlowup.
    The batch keeps its shape when a member blows up; the dead slot is zeroed
    and ignored, so survivors see exactly the same arithmetic.
    """
    nb = len(indices)
    stepper = _Stepper(params, pump_field, grid, config.dt, nb, backend, noise=noise)
    m = stepper.m
    gens = [trajectory_rng(config.seed, i) for i in indices]
    states = [init_vacuum_state(grid, g) for g in gens]
    psi = np.stack([s.psi.reshape(m) for s in states])
    n = np.stack([s.n_res.reshape(m) for s in states])
    alive = np.ones(nb, dtype=bool)
    snap_steps = config.snapshot_steps()
    out_psi = np.empty((nb, len(snap_steps), m), complex)
    out_n = np.empty((nb, len(snap_steps), m))
    clipped = np.zeros(nb, dtype=np.int64)
    results = {}
    snap_at = {s: j for j, s in enumerate(snap_steps)}
    xi = np.zeros((nb, 2, m))
    report_every = max(1, config.n_steps // 10)
    for step in range(1, config.n_steps + 1):
        if noise:
            for a in range(nb):
                if alive[a]:
                    gens[a].standard_normal(out=xi[a])
        clip, bad = stepper.step(psi, n, xi if noise else None)
        clipped += clip
        bad &= alive
        if bad.any():
            for a in np.flatnonzero(bad):
                idx = indices[a]
                results[idx] = TrajectoryBlowup(step=step, trajectory_index=idx)
                log.warning("trajectory %d blew up at step %d", idx, step)
            alive &= ~bad
            psi[bad] = 0.0
            n[bad] = 0.0
            xi[bad] = 0.0
            if not alive.any():
                break
        j = snap_at.get(step)
        if j is not None:
            out_psi[:, j] = psi
            out_n[:, j] = n
        if step % report_every == 0:
            log.debug("batch %s: step %d/%d", indices[0], step, config.n_steps)
    for a in np.flatnonzero(alive):
        results[indices[a]] = (out_psi[a], out_n[a], int(clipped[a]))
    return results


def run_trajectory(config, params, pump, grid, trajectory_index, *, backend=None, noise=True):
    """Integrate one trajectory and return its post-burn-in snapshots as FieldStates."""
    pump_field = _pump_field(pump, grid)
    _validate_run(config, params, pump_field, grid)
    res = _run_batch([trajectory_index], config, params, pump_field, grid, backend, noise)[trajectory_index]
    if isinstance(res, TrajectoryBlowup):
        raise res
    psi, n, clipped = res
    shape = (grid.n_side, grid.n_side)
    times = np.asarray(config.snapshot_steps()) * config.dt
    return [
        FieldState(psi=psi[j].reshape(shape), n_res=n[j].reshape(shape), time=float(t), clipped=clipped)
        for j, t in enumerate(times)
    ]


def default_threads():
    return os.cpu_count() or 1


def run_ensemble(config, params, pump, grid, *, threads=None, batch_size=8, backend=None, noise=True):
    """Run ``config.realizations`` independent trajectories.

    Trajectories are split into consecutive batches of ``batch_size`` and the
    batches distributed over ``threads`` worker threads (the kernels and FFTs
    release the GIL). Batch composition never depends on ``threads``, so the
    output is identical for any thread count.
    Fails with EnsembleFailure if more than 10% of trajectories blow up.
    """
    if config.realizations < 2:
        raise ConfigError("trajectory.realizations", "an ensemble needs at least 2 realizations")
    pump_field = _pump_field(pump, grid)
    _validate_run(config, params, pump_field, grid)
    threads = threads or default_threads()
    all_idx = list(range(config.realizations))
    if batch_size < 1:
        raise ConfigError("batch_size", "must be >= 1")
    batches = [all_idx[i:i + batch_size] for i in range(0, len(all_idx), batch_size)]

    def work(b):
        return _run_batch(b, config, params, pump_field, grid, backend, noise)

    results = {}
    if threads == 1 or len(batches) == 1:
        for b in batches:
            results.update(work(b))
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            for r in pool.map(work, batches):
                results.update(r)

    failures = [results[i] for i in all_idx if isinstance(results[i], TrajectoryBlowup)]
    if len(failures) > 0.1 * config.realizations:
        raise EnsembleFailure(failures, config.realizations)
    good = [i for i in all_idx if not isinstance(results[i], TrajectoryBlowup)]
    shape = (grid.n_side, grid.n_side)
    n_snap = len(config.snapshot_steps())
    psi = np.stack([results[i][0] for i in good]).reshape((len(good), n_snap) + shape)
    n = np.stack([results[i][1] for i in good]).reshape((len(good), n_snap) + shape)
    clipped = np.array([results[i][2] for i in good], dtype=np.int64)
    return TrajectoryEnsemble(
        grid=grid,
        params=params,
        pump=pump,
        config=config,
        indices=np.array(good, dtype=np.int64),
        times=np.asarray(config.snapshot_steps(), dtype=float) * config.dt,
        psi=psi,
        n_res=n,
        clipped=clipped,
        failures=failures,
    )
