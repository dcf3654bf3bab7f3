"""Compare the compiled and numpy RK4 kernels, and the FFT backends.

    python3 benchmarks/bench_kernels.py [--batch 8 32] [--steps 50] [--n-side 64]

Prints milliseconds per time step for every available (kernel, fft)
combination and the speedup of each over the numpy/scipy baseline. It also
checks that all combinations agree on one noisy step.
"""

import argparse
import time

import numpy as np

from polcoh.twa import ModelParams, PumpProfile, SimulationGrid
from polcoh.twa import kernels
from polcoh.twa.engine import _Stepper
from polcoh.twa.spectral import FFT_NAME


def _inputs(batch, m, seed=0):
    rng = np.random.default_rng(seed)
    psi = 0.5 * (rng.standard_normal((batch, m)) + 1j * rng.standard_normal((batch, m)))
    n = np.abs(rng.standard_normal((batch, m)))
    xi = rng.standard_normal((batch, 2, m))
    return psi, n, xi


def _time_steps(stepper, batch, m, steps):
    psi, n, xi = _inputs(batch, m)
    stepper.step(psi, n, xi)  # warm-up, plans FFTs
    t0 = time.perf_counter()
    for _ in range(steps):
        stepper.step(psi, n, xi)
    return (time.perf_counter() - t0) / steps * 1e3


def combos():
    kern = ["numpy"] + (["cython"] if kernels.compiled_backend is not None else [])
    ffts = ["scipy"] + (["fftw"] if FFT_NAME == "fftw" else [])
    return [(k, f) for k in kern for f in ffts]


def check_agreement(grid, params, pump, dt):
    m = grid.n_side ** 2
    ref = None
    for kern, fft in combos():
        st = _Stepper(params, pump, grid, dt, 2, kern, fft=fft)
        psi, n, xi = _inputs(2, m, seed=1)
        st.step(psi, n, xi)
        if ref is None:
            ref = (psi.copy(), n.copy())
            continue
        dpsi = np.max(np.abs(psi - ref[0])) / np.max(np.abs(ref[0]))
        dn = np.max(np.abs(n - ref[1])) / max(np.max(np.abs(ref[1])), 1e-300)
        print(f"  {kern:>6}/{fft:<5} max rel. deviation from numpy/scipy: psi {dpsi:.1e}, n {dn:.1e}")


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--batch", type=int, nargs="+", default=[1, 8, 32])
    ap.add_argument("--steps", type=int, default=50)
    ap.add_argument("--n-side", type=int, default=64)
    args = ap.parse_args(argv)

    grid = SimulationGrid(args.n_side, 0.9 * args.n_side)
    params = ModelParams()
    pump = PumpProfile.from_ratio(2.0, params, 16.0).evaluate(grid)
    dt = 0.04
    m = grid.n_side ** 2
    print(f"grid {grid.n_side}x{grid.n_side}, dt = {dt} ps, {args.steps} timed steps")
    print("agreement on one step:")
    check_agreement(grid, params, pump, dt)
    print(f"{'batch':>5} {'kernel':>7} {'fft':>6} {'ms/step':>9} {'us/traj-step':>13} {'speedup':>8}")
    for batch in args.batch:
        base = None
        for kern, fft in combos():
            ms = _time_steps(_Stepper(params, pump, grid, dt, batch, kern, fft=fft), batch, m, args.steps)
            base = base or ms
            print(f"{batch:>5} {kern:>7} {fft:>6} {ms:>9.3f} {ms / batch * 1e3:>13.1f} {base / ms:>7.2f}x")


if __name__ == "__main__":
    main()
