"""Weighted least-squares fit of the phase-averaged displaced-thermal Husimi
function to (q, p) histograms, with Monte Carlo error propagation.

The model density per dq dp at bin centre (q, p) is Q_avg(|alpha - alpha_c|) / 2
with alpha = (q + i p)/sqrt(2) and alpha_c = (q_c + i p_c)/sqrt(2). Internally
nbar and |alpha0|^2 are fitted through their logarithms, which keeps them
positive inside the bounds [1e-8, 1e3] and [1e-10, 1e5].
"""

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np
from scipy import optimize

from .coherence import clamp_photon_moments, coherence_value, decompose_photon_moments, g2_value, phase_averaged_density
from .errors import FitFailure, InsufficientDataError, PropagationFailure

NBAR_BOUNDS = (1e-8, 1e3)
ALPHA_SQ_BOUNDS = (1e-10, 1e5)
MIN_OCCUPIED_BINS = 10
XTOL = 1e-8


@dataclass(frozen=True)
class FitResult:
    nbar: float
    alpha0_sq: float
    q_c: float = 0.0
    p_c: float = 0.0
    chi2: float = math.nan
    n_bins: int = 0
    converged: bool = True
    err_nbar: float = math.nan
    err_alpha0_sq: float = math.nan
    err_q_c: float = math.nan
    err_p_c: float = math.nan
    err_g2: float = math.nan
    err_C: float = math.nan
    err_n_total: float = math.nan

    @property
    def n_total(self):
        return self.nbar + self.alpha0_sq

    @property
    def g2(self):
        return float(g2_value(self.alpha0_sq, self.nbar))

    @property
    def coherence_C(self):
        return float(coherence_value(self.alpha0_sq, self.nbar))

    @property
    def ring_radius(self):
        """sqrt(q0^2 + p0^2) = sqrt(2 |alpha0|^2) in quadrature units."""
        return math.sqrt(2.0 * self.alpha0_sq)


def model_density(q, p, nbar, alpha0_sq, q_c=0.0, p_c=0.0):
    """Phase-averaged displaced-thermal Husimi density per dq dp."""
    r = np.hypot(q - q_c, p - p_c) / math.sqrt(2.0)
    return 0.5 * phase_averaged_density(r, alpha0_sq, nbar, "Q")


class _Problem:
    """Residual vector over the fitted bins.

    ``sigma`` defaults to the histogram's standard errors; bins with zero
    error are left out. Without any nonzero error the fit is unweighted.
    """

    def __init__(self, hist, sigma=None):
        if hist.occupied_bins < MIN_OCCUPIED_BINS:
            raise InsufficientDataError(f"{hist.occupied_bins} occupied bins; need >= {MIN_OCCUPIED_BINS}")
        qc, pc = hist.centers()
        dens = hist.density
        sig = hist.sigma_density if sigma is None else sigma
        use = sig > 0
        if np.any(use):
            self.weight = 1.0 / sig[use]
        else:
            use = np.ones_like(dens, dtype=bool)
            self.weight = np.ones(int(use.sum()))
        self.use = use
        self.q = qc[use]
        self.p = pc[use]
        self.data = dens[use]
        self.hist = hist

    def with_data(self, data):
        other = object.__new__(_Problem)
        other.__dict__.update(self.__dict__)
        other.data = data
        return other

    @staticmethod
    def unpack(x):
        return math.exp(x[0]), math.exp(x[1]), x[2], x[3]

    def residuals(self, x):
        nbar, a, qc, pc = self.unpack(x)
        return (self.data - model_density(self.q, self.p, nbar, a, qc, pc)) * self.weight

    def chi2(self, x):
        r = self.residuals(x)
        return float(np.dot(r, r))


def _bounds():
    lo = [math.log(NBAR_BOUNDS[0]), math.log(ALPHA_SQ_BOUNDS[0]), -np.inf, -np.inf]
    hi = [math.log(NBAR_BOUNDS[1]), math.log(ALPHA_SQ_BOUNDS[1]), np.inf, np.inf]
    return lo, hi


def _clip_start(nbar, a):
    nbar = min(max(nbar, 0.05), NBAR_BOUNDS[1] * 0.5)
    a = min(max(a, 1e-3), ALPHA_SQ_BOUNDS[1] * 0.5)
    return nbar, a


def initial_guess(hist):
    """(nbar, |alpha0|^2, q_c, p_c) from antinormal histogram moments."""
    qc, pc = hist.centers()
    w = hist.probability
    q0 = float(np.sum(w * qc))
    p0 = float(np.sum(w * pc))
    r2 = 0.5 * ((qc - q0) ** 2 + (pc - p0) ** 2)
    n1 = float(np.sum(w * r2)) - 1.0
    n2 = float(np.sum(w * r2 * r2)) - 3.0 * n1 - 2.0
    # clamp first: the guess only seeds the optimiser, no warning wanted
    s, v, _ = clamp_photon_moments(max(n1, 0.0), n2 - n1 * n1)
    nbar, a = decompose_photon_moments(s, v)
    return _clip_start(nbar, a) + (q0, p0)


def _solve(prob, x0, simplex=True, max_nfev=2000):
    lo, hi = _bounds()
    x0 = np.clip(np.asarray(x0, dtype=float), lo, hi)
    if simplex:
        res = optimize.minimize(
            prob.chi2, x0, method="Nelder-Mead", bounds=list(zip(lo, hi)),
            options={"xatol": 1e-6, "fatol": 1e-10, "maxiter": 4000, "adaptive": True},
        )
        x0 = np.clip(res.x, lo, hi)
    ls = optimize.least_squares(
        prob.residuals, x0, bounds=(lo, hi), method="trf", x_scale="jac",
        xtol=XTOL, ftol=1e-12, gtol=1e-12, max_nfev=max_nfev,
    )
    return ls


def _result(prob, ls):
    nbar, a, qc, pc = prob.unpack(ls.x)
    chi2 = float(np.dot(ls.fun, ls.fun))
    return FitResult(nbar=nbar, alpha0_sq=a, q_c=float(qc), p_c=float(pc), chi2=chi2,
                     n_bins=int(prob.data.size), converged=bool(ls.status > 0))


def model_sigma(hist, fit):
    """Binomial standard error of each bin density under the fitted model."""
    qc, pc = hist.centers()
    prob = model_density(qc, pc, fit.nbar, fit.alpha0_sq, fit.q_c, fit.p_c) * hist.bin_area
    prob = np.clip(prob, 0.0, 1.0)
    return np.sqrt(prob * (1.0 - prob) / hist.total_count) / hist.bin_area


def _start_vector(init):
    nbar, a, qc, pc = init
    return [math.log(max(nbar, NBAR_BOUNDS[0])), math.log(max(a, ALPHA_SQ_BOUNDS[0])), qc, pc]


def fit_displaced_thermal(hist, init=None, simplex=True, weights="model", reweight=2):
    """Fit (nbar, |alpha0|^2, q_c, p_c) to ``hist``.

    Minimises sum ((Q - model)/sigma)^2. The first pass uses the
    histogram's own standard errors and skips bins where they vanish: a
    Nelder-Mead search from the moment-based starting point, refined by a
    bounded trust-region least-squares polish (relative step tolerance 1e-8).

    With ``weights="model"`` (default) the fit is then repeated ``reweight``
    times with sigma computed from the binomial formula on the current model
    bin probabilities, over every bin of the extent. Errors taken from the
    data are correlated with the counts and pull the fitted width low when
    many bins hold few counts; model errors do not. ``weights="data"`` stops
    after the first pass.

    Raises FitFailure (with ``best``) if a polish does not converge.
    """
    if weights not in ("model", "data"):
        raise ValueError(f"weights must be 'model' or 'data', got {weights!r}")
    prob = _Problem(hist)
    if init is None:
        init = initial_guess(hist)
    elif isinstance(init, FitResult):
        init = (init.nbar, init.alpha0_sq, init.q_c, init.p_c)
    ls = _solve(prob, _start_vector(init), simplex=simplex)
    res = _result(prob, ls)
    if not res.converged:
        raise FitFailure(f"least-squares polish did not converge: {ls.message}", best=res)
    if weights == "model" and np.any(hist.sigma_density > 0):
        for _ in range(reweight):
            prob = _Problem(hist, model_sigma(hist, res))
            ls = _solve(prob, ls.x, simplex=False)
            res = _result(prob, ls)
            if not res.converged:
                raise FitFailure(f"reweighted polish did not converge: {ls.message}", best=res)
    return res


def _refit(prob, data, x0):
    ls = _solve(prob.with_data(data), x0, simplex=False, max_nfev=500)
    if ls.status <= 0:
        return None
    nbar, a, qc, pc = prob.unpack(ls.x)
    return np.array([nbar, a, qc, pc, float(g2_value(a, nbar)), float(coherence_value(a, nbar)), nbar + a])


def propagate_errors_mc(hist, fit, n_resamples=200, seed=0, threads=1, max_failure_fraction=0.05,
                        weights="model"):
    """Standard deviations of the fit parameters over noise-perturbed refits.

    Each resample adds independent Gaussian noise of the bin's standard
    error to every bin and refits from ``fit`` with the weights of the final
    pass of the original fit held fixed. Resample ``i`` uses its own
    generator seeded by (seed, i), so results do not depend on ``threads``.
    Returns ``fit`` with the err_* fields filled.
    """
    if n_resamples < 2:
        raise ValueError("n_resamples must be >= 2")
    has_errors = bool(np.any(hist.sigma_density > 0))
    if weights == "model" and has_errors:
        prob = _Problem(hist, model_sigma(hist, fit))
    else:
        prob = _Problem(hist)
    noise = hist.sigma_density[prob.use]
    x0 = np.array(_start_vector((fit.nbar, fit.alpha0_sq, fit.q_c, fit.p_c)))

    def one(i):
        rng = np.random.Generator(np.random.SFC64(np.random.SeedSequence(int(seed), spawn_key=(i,))))
        data = prob.data + noise * rng.standard_normal(noise.size)
        return _refit(prob, data, x0)

    if not has_errors:
        sd = np.zeros(7)
    else:
        if threads and threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                out = list(pool.map(one, range(n_resamples)))
        else:
            out = [one(i) for i in range(n_resamples)]
        good = [o for o in out if o is not None]
        failed = n_resamples - len(good)
        if failed > max_failure_fraction * n_resamples:
            raise PropagationFailure(f"{failed} of {n_resamples} resample fits failed")
        sd = np.std(np.array(good), axis=0, ddof=1)
    return replace(fit, err_nbar=float(sd[0]), err_alpha0_sq=float(sd[1]), err_q_c=float(sd[2]),
                   err_p_c=float(sd[3]), err_g2=float(sd[4]), err_C=float(sd[5]),
                   err_n_total=float(sd[6]))


def analytic_fit_errors(hist, fit):
    """Errors of (nbar, |alpha0|^2, g2, C) from the least-squares covariance (J^T J)^-1.

    Used to cross-check the Monte Carlo propagation.
    """
    prob = _Problem(hist, model_sigma(hist, fit)) if np.any(hist.sigma_density > 0) else _Problem(hist)
    x = np.array([math.log(fit.nbar), math.log(fit.alpha0_sq), fit.q_c, fit.p_c])
    jac = optimize.approx_fprime(x, prob.residuals, 1e-7)
    cov_x = np.linalg.pinv(jac.T @ jac)
    # chain rule from log parameters to (nbar, a)
    d = np.diag([fit.nbar, fit.alpha0_sq, 1.0, 1.0])
    cov = d @ cov_x @ d
    cov2 = cov[:2, :2]
    eps = 1e-6
    grads = []
    for f in (lambda a, n: g2_value(a, n), lambda a, n: coherence_value(a, n)):
        ga = (f(fit.alpha0_sq * (1 + eps), fit.nbar) - f(fit.alpha0_sq * (1 - eps), fit.nbar)) / (2 * eps * fit.alpha0_sq)
        gn = (f(fit.alpha0_sq, fit.nbar * (1 + eps)) - f(fit.alpha0_sq, fit.nbar * (1 - eps))) / (2 * eps * fit.nbar)
        grads.append(np.array([gn, ga]))
    out = {
        "nbar": math.sqrt(cov2[0, 0]),
        "alpha0_sq": math.sqrt(cov2[1, 1]),
        "g2": math.sqrt(float(grads[0] @ cov2 @ grads[0])),
        "C": math.sqrt(float(grads[1] @ cov2 @ grads[1])),
    }
    return out


FIT_COLUMNS = ["nbar", "alpha0_sq", "n_total", "g2", "C", "err_nbar", "err_alpha0_sq",
               "err_g2", "err_C", "chi2", "converged", "label"]


def write_fit_csv(path, rows):
    """Fit report: one row per (label, FitResult); ``label`` is the last column."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FIT_COLUMNS)
        for label, f in rows:
            vals = [f.nbar, f.alpha0_sq, f.n_total, f.g2, f.coherence_C, f.err_nbar,
                    f.err_alpha0_sq, f.err_g2, f.err_C, f.chi2]
            w.writerow([repr(float(v)) for v in vals] + ["1" if f.converged else "0", label])


def read_fit_csv(path):
    """Return a list of (label, FitResult) rows."""
    out = []
    with open(path, newline="") as fh:
        rd = csv.DictReader(fh)
        if rd.fieldnames != FIT_COLUMNS:
            raise ValueError(f"unexpected fit report columns {rd.fieldnames}")
        for row in rd:
            f = FitResult(nbar=float(row["nbar"]), alpha0_sq=float(row["alpha0_sq"]),
                          chi2=float(row["chi2"]), converged=row["converged"] == "1",
                          err_nbar=float(row["err_nbar"]), err_alpha0_sq=float(row["err_alpha0_sq"]),
                          err_g2=float(row["err_g2"]), err_C=float(row["err_C"]))
            out.append((row["label"], f))
    return out
