"""Ensemble estimators on truncated-Wigner snapshots.

Wigner (symmetric-ordered) averages of mode amplitudes are converted to
normally ordered photon-number moments before the displaced-thermal
decomposition. Statistical errors come from a leave-one-trajectory-out
jackknife, which is insensitive to correlations between snapshots of the
same trajectory.
"""

import csv
import math
import warnings
from dataclasses import asdict, dataclass, fields
from typing import NamedTuple

import numpy as np
import scipy.fft as sfft

from .coherence import (
    clamp_photon_moments,
    coherence_gradient,
    coherence_value,
    decompose_photon_moments,
    g2_value,
)
from .errors import DomainError, InsufficientDataError, OutOfModelWarning

MIN_SNAPSHOTS = 8


@dataclass(frozen=True)
class KSpaceWindow:
    """Square block of ``side`` x ``side`` modes centred on k = 0."""

    side: int = 3

    def __post_init__(self):
        if self.side < 1 or self.side % 2 == 0:
            raise DomainError(f"window side must be a positive odd integer, got {self.side}")

    @property
    def n_modes(self):
        return self.side * self.side

    def indices(self, n_side):
        """FFT-order indices of the window along one axis."""
        if self.side > n_side:
            raise DomainError(f"window side {self.side} exceeds grid size {n_side}")
        h = self.side // 2
        return np.arange(-h, h + 1) % n_side


def _field_array(ensemble_or_psi):
    psi = getattr(ensemble_or_psi, "psi", ensemble_or_psi)
    return np.asarray(psi)


def _origin_phase(grid):
    # Sum over physical coordinates r = (i - n/2) dx shifts the FFT by exp(2 pi i m (n/2) / n)
    n = grid.n_side
    m = np.fft.fftfreq(n, 1.0 / n)
    s = np.exp(2j * math.pi * m * (n // 2) / n)
    if n % 2 == 0:
        s = s.real.round()  # exactly (-1)^m
    return s[:, None] * s[None, :]


def project_to_kspace(snapshot, grid):
    """Mode amplitudes beta_k = V^(-1/2) dV sum_r exp(-i k r) psi(r), FFT order.

    ``snapshot`` is a FieldState or an array whose last two axes are the grid.
    Satisfies sum_k |beta_k|^2 = dV sum_r |psi(r)|^2.
    """
    psi = np.asarray(getattr(snapshot, "psi", snapshot))
    n = grid.n_side
    if psi.shape[-2:] != (n, n):
        raise DomainError(f"field shape {psi.shape[-2:]} does not match {n}x{n} grid")
    scale = grid.cell_volume / math.sqrt(grid.volume)
    return sfft.fft2(psi, axes=(-2, -1)) * (scale * _origin_phase(grid))


def window_amplitudes(psi, grid, window):
    """Amplitudes of the window modes, shape ``psi.shape[:-2] + (n_modes,)``."""
    beta = project_to_kspace(psi, grid)
    idx = window.indices(grid.n_side)
    w = beta[..., idx, :][..., :, idx]
    return w.reshape(w.shape[:-2] + (window.n_modes,))


class NormalMoments(NamedTuple):
    mean_N: float
    var_N: float
    mean_N2: float
    mode_mean: np.ndarray
    mode_second: np.ndarray


def wigner_to_normal_moments(w2, w4, cross=None, window=None):
    """Normally ordered window number moments from Wigner moments.

    Parameters
    ----------
    w2, w4 : array_like, shape (N_p,)
        Per-mode <|b|^2>_W and <|b|^4>_W.
    cross : array_like, shape (N_p, N_p), optional
        <|b_j|^2 |b_k|^2>_W; the diagonal is ignored. Omitted means
        uncorrelated modes, cross = w2_j w2_k.
    window : KSpaceWindow, optional
        Only used to check the number of modes.

    Notes
    -----
    Per mode <n> = W2 - 1/2 and <n^2> = W4 - W2; for j != k,
    <n_j n_k> = W_jk - W2_j/2 - W2_k/2 + 1/4.
    """
    w2 = np.atleast_1d(np.asarray(w2, dtype=float))
    w4 = np.atleast_1d(np.asarray(w4, dtype=float))
    npm = w2.size
    if w4.shape != w2.shape:
        raise DomainError("w2 and w4 must have the same shape")
    if window is not None and window.n_modes != npm:
        raise DomainError(f"window has {window.n_modes} modes, moments have {npm}")
    if cross is None:
        cross = np.outer(w2, w2)
    cross = np.asarray(cross, dtype=float)
    if cross.shape != (npm, npm):
        raise DomainError("cross moments must be an N_p x N_p matrix")
    n1 = w2 - 0.5
    n2 = w4 - w2
    nn = cross - 0.5 * w2[:, None] - 0.5 * w2[None, :] + 0.25
    off = ~np.eye(npm, dtype=bool)
    mean_N = float(n1.sum())
    mean_N2 = float(n2.sum() + nn[off].sum())
    return NormalMoments(mean_N, mean_N2 - mean_N**2, mean_N2, n1, n2)


def _window_moment_sums(amp):
    """Per-trajectory Wigner moments: returns (W2, W4, cross) averaged over snapshots.

    ``amp`` has shape (trajectories, snapshots, N_p).
    """
    p = amp.real**2 + amp.imag**2
    w2 = p.mean(axis=1)
    w4 = (p * p).mean(axis=1)
    cross = np.einsum("tsj,tsk->tjk", p, p) / p.shape[1]
    return w2, w4, cross


def _stats_from_moments(w2, w4, cross, n_modes):
    m = wigner_to_normal_moments(w2, w4, cross)
    return m.mean_N / n_modes, m.var_N / n_modes


class NumberStats(NamedTuple):
    mean_n_c: float
    var_n_c: float
    err_mean_n_c: float
    err_var_n_c: float
    covariance: np.ndarray
    n_modes: int
    n_trajectories: int
    n_snapshots: int


def _jackknife_cov(full, reps):
    reps = np.asarray(reps, dtype=float)
    k = reps.shape[0]
    d = reps - reps.mean(axis=0)
    return (k - 1) / k * (d.T @ d)


def condensate_number_stats(ensemble, window, grid):
    """Per-mode mean and variance of the window photon number, normally ordered.

    mean_n_c = <N>/N_p and var_n_c = <(dN)^2>/N_p. Moments are averaged over
    all snapshots and trajectories; errors and their covariance come from a
    jackknife over trajectories.
    """
    psi = _field_array(ensemble)
    if psi.ndim != 4:
        raise DomainError("expected fields of shape (trajectories, snapshots, n, n)")
    n_traj, n_snap = psi.shape[:2]
    if n_snap < MIN_SNAPSHOTS:
        raise InsufficientDataError(f"{n_snap} post-burn-in snapshots; need >= {MIN_SNAPSHOTS}")
    if n_traj < 2:
        raise InsufficientDataError("need at least 2 trajectories for error estimates")
    amp = window_amplitudes(psi, grid, window)
    w2, w4, cross = _window_moment_sums(amp)
    npm = window.n_modes
    full = _stats_from_moments(w2.mean(0), w4.mean(0), cross.mean(0), npm)
    tot = (w2.sum(0), w4.sum(0), cross.sum(0))
    reps = []
    for t in range(n_traj):
        k = n_traj - 1
        reps.append(_stats_from_moments((tot[0] - w2[t]) / k, (tot[1] - w4[t]) / k,
                                        (tot[2] - cross[t]) / k, npm))
    cov = _jackknife_cov(full, reps)
    return NumberStats(full[0], full[1], math.sqrt(cov[0, 0]), math.sqrt(cov[1, 1]),
                       cov, npm, n_traj, n_snap)


# ---------------------------------------------------------------------------
# first-order coherence

def _center_index(grid, center):
    x0, y0 = center
    n = grid.n_side
    i = int(round(x0 / grid.dx)) + n // 2
    j = int(round(y0 / grid.dx)) + n // 2
    if not (0 <= i < n and 0 <= j < n):
        raise DomainError(f"center {center} lies outside the grid")
    return i, j


def _g1_terms(psi, grid, i0, j0, mask):
    """Per-trajectory sums needed for g1 between (i0, j0) and cells in ``mask``."""
    c = psi[:, :, i0, j0]
    others = psi[:, :, mask]
    corr = np.einsum("ts,tsm->tm", c.conj(), others) / psi.shape[1]
    dens0 = (np.abs(c) ** 2).mean(axis=1)
    dens = (np.abs(others) ** 2).mean(axis=1)
    return corr, dens0, dens


def _g1_value(corr, dens0, dens, vac):
    n0 = dens0 - vac
    n1 = dens - vac
    with np.errstate(invalid="ignore", divide="ignore"):
        g = corr / np.sqrt(n0 * n1)
    return abs(np.mean(g))


def g1_element(ensemble, r, r_prime, grid):
    """Complex normally ordered g1 between grid cells ``r`` and ``r_prime`` (index pairs)."""
    psi = _field_array(ensemble)
    vac = 0.5 / grid.cell_volume
    a = psi[:, :, r[0], r[1]].ravel()
    b = psi[:, :, r_prime[0], r_prime[1]].ravel()
    na = np.mean(np.abs(a) ** 2) - vac
    if tuple(r) == tuple(r_prime):
        # same estimator for numerator and denominator, so exactly 1
        return complex(na / na) if na != 0 else complex(math.nan)
    nb = np.mean(np.abs(b) ** 2) - vac
    return complex(np.mean(a.conj() * b) / math.sqrt(na * nb))


class G1Curve(NamedTuple):
    distances: np.ndarray
    g1: np.ndarray
    err: np.ndarray


def g1_spatial(ensemble, grid, center=(0.0, 0.0), distances=None):
    """Azimuthally averaged |g1| between ``center`` (um) and rings at ``distances`` (um).

    Densities are normally ordered by subtracting 1/(2 dV); the cross term
    between distinct cells needs no correction. For each distance the
    complex g1 is averaged over the cells whose distance from the centre
    cell rounds to the same multiple of dx, then its modulus is taken. A
    distance that rounds to zero returns exactly 1.
    """
    psi = _field_array(ensemble)
    if distances is None:
        distances = np.arange(0.0, 0.5 * grid.length, 2.0)
    distances = np.asarray(distances, dtype=float)
    if np.any(distances < 0) or np.any(distances > 0.5 * grid.length):
        raise DomainError(f"distances must lie in [0, L/2 = {0.5 * grid.length}]")
    if psi.shape[0] < 2:
        raise InsufficientDataError("need at least 2 trajectories for g1 errors")
    i0, j0 = _center_index(grid, center)
    n = grid.n_side
    ii, jj = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    ring = np.rint(np.hypot(ii - i0, jj - j0)).astype(int)
    vac = 0.5 / grid.cell_volume
    n_traj = psi.shape[0]
    g = np.empty(distances.size)
    err = np.empty(distances.size)
    for k, d in enumerate(distances):
        shell = int(round(d / grid.dx))
        if shell == 0:
            g[k], err[k] = 1.0, 0.0
            continue
        mask = ring == shell
        corr, dens0, dens = _g1_terms(psi, grid, i0, j0, mask)
        g[k] = _g1_value(corr.mean(0), dens0.mean(0), dens.mean(0), vac)
        tc, t0, t1 = corr.sum(0), dens0.sum(0), dens.sum(0)
        reps = np.array([
            _g1_value((tc - corr[t]) / (n_traj - 1), (t0 - dens0[t]) / (n_traj - 1),
                      (t1 - dens[t]) / (n_traj - 1), vac)
            for t in range(n_traj)
        ])
        err[k] = math.sqrt((n_traj - 1) / n_traj * np.sum((reps - reps.mean()) ** 2))
    return G1Curve(distances, g, err)


# ---------------------------------------------------------------------------
# coherence report

@dataclass(frozen=True)
class CoherenceReport:
    pump_ratio: float
    mean_n_c: float
    err_mean_n_c: float
    var_n_c: float
    err_var_n_c: float
    nbar: float
    err_nbar: float
    alpha0_sq: float
    err_alpha0_sq: float
    g2: float
    err_g2: float
    coherence_C: float
    err_C: float
    n_trajectories: int
    n_snapshots: int
    out_of_model: bool


REPORT_COLUMNS = [f.name for f in fields(CoherenceReport)]


def _derived(s, v):
    """(nbar, alpha0_sq, g2, C) from in-range (mean, var)."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", OutOfModelWarning)
        nbar, a = decompose_photon_moments(s, v)
    g2 = g2_value(a, nbar) if s > 0 else math.nan
    return np.array([nbar, a, g2, float(coherence_value(a, nbar))])


def _jacobian(s, v):
    """d(nbar, alpha0_sq, g2, C)/d(mean, var) at an interior point."""
    root = math.sqrt(s * s + s - v)
    a_s, a_v = (2 * s + 1) / (2 * root), -1 / (2 * root)
    n_s, n_v = 1 - a_s, -a_v
    g_s, g_v = -1 / s**2 - 2 * (v - s) / s**3, 1 / s**2
    nbar, a = s - root, root
    c_a, c_n = coherence_gradient(a, nbar)
    c_a, c_n = float(c_a), float(c_n)
    return np.array([
        [n_s, n_v],
        [a_s, a_v],
        [g_s, g_v],
        [c_a * a_s + c_n * n_s, c_a * a_v + c_n * n_v],
    ])


def propagate_moment_errors(s, v, cov, n_samples=4000, seed=0):
    """Standard errors of (nbar, alpha0_sq, g2, C) given (mean, var) and their covariance.

    First-order propagation through the analytic Jacobian. Where the
    linearisation breaks down (within 3 standard errors of the coherent-
    amplitude-free boundary var = mean^2 + mean, where d|alpha0|^2/dvar
    diverges) the errors are the spread of the clamped decomposition over a
    seeded Gaussian sample of (mean, var) instead.
    """
    cov = np.asarray(cov, dtype=float)
    disc = s * s + s - v
    grad = np.array([2 * s + 1, -1.0])
    sd_disc = math.sqrt(max(grad @ cov @ grad, 0.0))
    if s > 0 and disc > 3 * sd_disc and disc > 0:
        jac = _jacobian(s, v)
        return np.sqrt(np.maximum(np.einsum("ij,jk,ik->i", jac, cov, jac), 0.0))
    if not np.any(cov):
        return np.zeros(4)
    rng = np.random.Generator(np.random.SFC64(seed))
    draws = rng.multivariate_normal([s, v], cov, size=n_samples, method="eigh")
    out = np.array([_derived(*clamp_photon_moments(ds, dv)[:2]) for ds, dv in draws])
    with np.errstate(invalid="ignore"):
        return np.nanstd(out, axis=0)


def coherence_report(ensemble, window, grid, pump_ratio):
    """Number statistics -> (nbar, |alpha0|^2) -> g2 and C, with propagated errors.

    Moment pairs outside the displaced-thermal range are clamped to the
    nearest boundary (OutOfModelWarning) and flagged in ``out_of_model``;
    the reported mean and variance are then the clamped values so that
    mean_n_c = nbar + alpha0_sq holds.
    """
    st = condensate_number_stats(ensemble, window, grid)
    s, v, clamped = clamp_photon_moments(st.mean_n_c, st.var_n_c)
    if clamped:
        warnings.warn(
            f"pump {pump_ratio}: (mean, var) = ({st.mean_n_c:.4g}, {st.var_n_c:.4g}) "
            "outside the displaced-thermal range; clamped",
            OutOfModelWarning,
            stacklevel=2,
        )
    nbar, a, g2, c = _derived(s, v)
    errs = propagate_moment_errors(s, v, st.covariance)
    return CoherenceReport(
        pump_ratio=float(pump_ratio),
        mean_n_c=s,
        err_mean_n_c=st.err_mean_n_c,
        var_n_c=v,
        err_var_n_c=st.err_var_n_c,
        nbar=float(nbar),
        err_nbar=float(errs[0]),
        alpha0_sq=float(a),
        err_alpha0_sq=float(errs[1]),
        g2=float(g2),
        err_g2=float(errs[2]),
        coherence_C=float(c),
        err_C=float(errs[3]),
        n_trajectories=st.n_trajectories,
        n_snapshots=st.n_snapshots,
        out_of_model=bool(clamped),
    )


# ---------------------------------------------------------------------------
# CSV

def _fmt(x):
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def write_report_csv(path, reports):
    """``report.csv``: one row per pump ratio, columns ``REPORT_COLUMNS``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for r in reports:
            d = asdict(r)
            w.writerow([_fmt(d[c]) for c in REPORT_COLUMNS])


def read_report_csv(path):
    types = {f.name: f.type for f in fields(CoherenceReport)}
    out = []
    with open(path, newline="") as fh:
        rd = csv.DictReader(fh)
        if rd.fieldnames != REPORT_COLUMNS:
            raise ValueError(f"unexpected report columns {rd.fieldnames}")
        for row in rd:
            kw = {}
            for k, val in row.items():
                t = types[k]
                if t in (bool, "bool"):
                    kw[k] = val == "1"
                elif t in (int, "int"):
                    kw[k] = int(val)
                else:
                    kw[k] = float(val)
            out.append(CoherenceReport(**kw))
    return out


G1_COLUMNS = ["pump_ratio", "distance", "g1", "err"]


def write_g1_csv(path, curves):
    """``g1.csv``: rows (pump_ratio, distance [um], g1, err) for each (ratio, G1Curve)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(G1_COLUMNS)
        for ratio, curve in curves:
            for d, g, e in zip(curve.distances, curve.g1, curve.err):
                w.writerow([_fmt(ratio), _fmt(d), _fmt(g), _fmt(e)])


def read_g1_csv(path):
    """Return {pump_ratio: G1Curve}."""
    rows = {}
    with open(path, newline="") as fh:
        rd = csv.DictReader(fh)
        if rd.fieldnames != G1_COLUMNS:
            raise ValueError(f"unexpected g1 columns {rd.fieldnames}")
        for row in rd:
            rows.setdefault(float(row["pump_ratio"]), []).append(
                (float(row["distance"]), float(row["g1"]), float(row["err"])))
    return {k: G1Curve(*map(np.array, zip(*v))) for k, v in rows.items()}
