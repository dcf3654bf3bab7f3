"""Hilbert-Schmidt coherence, phase-space densities and photon statistics of
displaced thermal states.

A displaced thermal state has a Gaussian Glauber-Sudarshan function of width
``nbar`` centred at ``alpha0``. Its Hilbert-Schmidt coherence (the summed
squared modulus of the off-diagonal Fock-basis elements) has the closed form

    C = (1 - exp(-X) I0(X)) / (2 nbar + 1),   X = 2 |alpha0|^2 / (2 nbar + 1).

Everything here is a pure function of its arguments. The vectorised
``*_value`` helpers accept numpy arrays of ``alpha0_sq`` and ``nbar``.
"""

import cmath
import enum
import math
import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import linalg, special

from .errors import (
    DegenerateDistributionError,
    DomainError,
    InvariantViolation,
    NormalizationError,
    OutOfModelWarning,
    TruncationError,
    UndefinedStatisticError,
)

HERMITIAN_TOL = 1e-12
DEFAULT_DEFICIT_THRESHOLD = 1e-6


@dataclass(frozen=True)
class DisplacedThermalState:
    """Coherent amplitude ``alpha0`` on top of ``nbar`` thermal quanta."""

    alpha0: complex = 0.0
    nbar: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "alpha0", complex(self.alpha0))
        object.__setattr__(self, "nbar", float(self.nbar))
        if not (math.isfinite(self.nbar) and cmath.isfinite(self.alpha0)):
            raise DomainError("state parameters must be finite")
        if self.nbar < 0:
            raise DomainError(f"nbar must be >= 0, got {self.nbar}")

    @classmethod
    def from_magnitudes(cls, alpha0_sq, nbar, phase=0.0):
        if alpha0_sq < 0:
            raise DomainError(f"alpha0_sq must be >= 0, got {alpha0_sq}")
        return cls(cmath.rect(math.sqrt(alpha0_sq), phase), nbar)

    @property
    def alpha0_sq(self):
        return abs(self.alpha0) ** 2

    @property
    def mean_photon_number(self):
        return self.alpha0_sq + self.nbar

    def suggested_truncation(self):
        """Fock dimension keeping the truncation deficit well below 1e-6."""
        return int(math.ceil(8 * (self.nbar + self.alpha0_sq))) + 32


@dataclass(frozen=True)
class PhaseSpacePoint:
    """Quadratures with [q, p] = i; ``alpha = (q + i p) / sqrt(2)``."""

    q: float
    p: float

    @property
    def alpha(self):
        return complex(self.q, self.p) / math.sqrt(2.0)

    @classmethod
    def from_alpha(cls, alpha):
        alpha = complex(alpha)
        return cls(math.sqrt(2.0) * alpha.real, math.sqrt(2.0) * alpha.imag)


class FockDensityMatrix:
    """Density matrix in a truncated Fock basis.

    ``deficit`` is the probability lost to truncation, ``1 - trace``.
    Construction validates Hermiticity, the diagonal and the trace.
    """

    def __init__(self, elements, deficit=None, *, validate=True):
        rho = np.array(elements, dtype=complex)
        if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
            raise InvariantViolation(f"density matrix must be square, got shape {rho.shape}")
        self.elements = rho
        tr = float(np.trace(rho).real)
        self.deficit = 1.0 - tr if deficit is None else float(deficit)
        if validate:
            self.validate()

    @property
    def dim(self):
        return self.elements.shape[0]

    def validate(self, tol=HERMITIAN_TOL):
        rho = self.elements
        herm = np.max(np.abs(rho - rho.conj().T)) if rho.size else 0.0
        if herm > tol:
            raise InvariantViolation(f"matrix is not Hermitian: max |rho - rho^H| = {herm:.3e}")
        diag = np.diag(rho).real
        if diag.size and diag.min() < -tol:
            raise InvariantViolation(f"negative diagonal entry {diag.min():.3e}")
        tr = float(diag.sum())
        if tr > 1.0 + 1e-9 or tr < 1.0 - max(self.deficit, 0.0) - 1e-9:
            raise InvariantViolation(f"trace {tr!r} inconsistent with deficit {self.deficit:.3e}")

    def diagonal(self):
        return np.diag(self.elements).real.copy()

    def purity(self):
        return float(np.vdot(self.elements, self.elements).real)

    def __repr__(self):
        return f"FockDensityMatrix(dim={self.dim}, deficit={self.deficit:.2e})"


# ---------------------------------------------------------------------------
# coherence

def _one_minus_scaled_i0(x):
    """1 - exp(-x) I0(x) without cancellation at small x or overflow at large x."""
    x = np.asarray(x, dtype=float)
    shape = x.shape
    x = x.ravel()
    out = 1.0 - special.i0e(x)
    small = x < 1.0
    if np.any(small):
        xs = x[small]
        term = np.ones_like(xs)
        acc = np.zeros_like(xs)
        h = 0.25 * xs * xs
        for k in range(1, 30):
            term = term * h / (k * k)
            acc += term
        out[small] = -np.expm1(-xs) - np.exp(-xs) * acc
    return out.reshape(shape)


def _check_magnitudes(alpha0_sq, nbar):
    a = np.asarray(alpha0_sq, dtype=float)
    n = np.asarray(nbar, dtype=float)
    if np.any(n < 0) or np.any(a < 0):
        raise DomainError("nbar and alpha0_sq must be >= 0")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(n))):
        raise DomainError("nbar and alpha0_sq must be finite")
    return a, n


def coherence_value(alpha0_sq, nbar):
    """Closed-form coherence for arrays of |alpha0|^2 and nbar (broadcast)."""
    a, n = _check_magnitudes(alpha0_sq, nbar)
    d = 2.0 * n + 1.0
    a, d = np.broadcast_arrays(a, d)
    res = _one_minus_scaled_i0(2.0 * a / d) / d
    return res if res.ndim else float(res)


def coherence_closed_form(state):
    """Hilbert-Schmidt coherence of a displaced thermal state, in [0, 1)."""
    return float(coherence_value(state.alpha0_sq, state.nbar))


def coherence_gradient(alpha0_sq, nbar):
    """Partial derivatives (dC/d|alpha0|^2, dC/dnbar) of the closed form."""
    a, n = _check_magnitudes(alpha0_sq, nbar)
    d = 2.0 * n + 1.0
    x = 2.0 * a / d
    c = _one_minus_scaled_i0(x) / d
    slope = special.i0e(x) - special.i1e(x)
    dc_da = 2.0 * slope / d**2
    dc_dn = -2.0 * c / d - 4.0 * a * slope / d**3
    return dc_da, dc_dn


def coherence_from_density_matrix(rho):
    """Sum of |rho_mn|^2 over m != n."""
    if not isinstance(rho, FockDensityMatrix):
        rho = FockDensityMatrix(rho, validate=False)
    rho.validate()
    sq = np.abs(rho.elements) ** 2
    np.fill_diagonal(sq, 0.0)
    return float(sq.sum())


def dephase(rho):
    """Incoherent part: same diagonal, off-diagonals removed."""
    if not isinstance(rho, FockDensityMatrix):
        rho = FockDensityMatrix(rho)
    return FockDensityMatrix(np.diag(np.diag(rho.elements)), rho.deficit, validate=False)


def _thermal_populations(nbar, dim):
    k = np.arange(dim)
    if nbar == 0:
        return (k == 0).astype(float)
    ratio = nbar / (nbar + 1.0)
    return np.exp(k * math.log(ratio)) / (nbar + 1.0)


def displacement_operator(alpha0, dim):
    """exp(alpha0 a^dag - conj(alpha0) a) built from the ``dim``-dimensional ladder matrix."""
    a = np.diag(np.sqrt(np.arange(1, dim)), 1).astype(complex)
    return linalg.expm(alpha0 * a.conj().T - np.conj(alpha0) * a)


def build_displaced_thermal_density_matrix(state, n_trunc=None, threshold=DEFAULT_DEFICIT_THRESHOLD):
    """D(alpha0) rho_th D(alpha0)^dag truncated to ``n_trunc`` Fock states.

    The product is formed in a padded space and cropped, so probability that
    leaks above ``n_trunc`` shows up as the deficit ``1 - trace`` instead of
    being folded back by a truncated unitary. Raises TruncationError if the
    deficit exceeds ``threshold``.
    """
    if n_trunc is None:
        n_trunc = state.suggested_truncation()
    n_trunc = int(n_trunc)
    if n_trunc < 1:
        raise DomainError("n_trunc must be positive")
    # padding keeps the cropped block free of the ladder-truncation artefacts
    work = n_trunc + 32 + int(math.ceil(8.0 * abs(state.alpha0)))
    d = displacement_operator(state.alpha0, work)
    pops = _thermal_populations(state.nbar, work)
    rho = (d * pops) @ d.conj().T
    rho = rho[:n_trunc, :n_trunc]
    rho = 0.5 * (rho + rho.conj().T)
    deficit = 1.0 - float(np.trace(rho).real)
    if deficit > threshold:
        raise TruncationError(deficit, threshold)
    return FockDensityMatrix(rho, max(deficit, 0.0))


# ---------------------------------------------------------------------------
# phase space

class PhaseSpaceKind(enum.Enum):
    GLAUBER_SUDARSHAN = "P"
    WIGNER = "W"
    HUSIMI = "Q"

    @classmethod
    def parse(cls, kind):
        if isinstance(kind, cls):
            return kind
        key = str(kind).strip().upper().replace("-", "_")
        aliases = {"P": "GLAUBER_SUDARSHAN", "W": "WIGNER", "Q": "HUSIMI"}
        key = aliases.get(key, key)
        try:
            return cls[key]
        except KeyError:
            raise ValueError(f"unknown phase-space kind {kind!r}") from None

    def variance(self, nbar):
        return {"P": nbar, "W": nbar + 0.5, "Q": nbar + 1.0}[self.value]


def _alpha_of(point):
    if isinstance(point, PhaseSpacePoint):
        return point.alpha
    return np.asarray(point, dtype=complex)


def phase_space_density(state, point, kind):
    """Gaussian P, W or Q density of ``state`` at ``point`` (per d^2 alpha).

    ``point`` is a PhaseSpacePoint or complex ``alpha`` (scalar or array).
    """
    kind = PhaseSpaceKind.parse(kind)
    v = kind.variance(state.nbar)
    if v == 0:
        raise DegenerateDistributionError("the P function of a coherent state is a delta distribution")
    alpha = _alpha_of(point)
    res = np.exp(-np.abs(alpha - state.alpha0) ** 2 / v) / (math.pi * v)
    return res if np.ndim(res) else float(res)


def phase_averaged_density(radius, alpha0_sq, nbar, kind="Q"):
    """Phase-averaged P/W/Q density at |alpha| = ``radius`` (vectorised)."""
    v = PhaseSpaceKind.parse(kind).variance(np.asarray(nbar, dtype=float))
    if np.any(v <= 0):
        raise DegenerateDistributionError("phase-averaged P of a coherent state has no density")
    r = np.abs(np.asarray(radius, dtype=float))
    r0 = np.sqrt(np.asarray(alpha0_sq, dtype=float))
    res = np.exp(-((r - r0) ** 2) / v) * special.i0e(2.0 * r * r0 / v) / (math.pi * v)
    return res if np.ndim(res) else float(res)


def phase_averaged_husimi(state, point):
    """Husimi function of the phase-randomised state; depends only on |alpha|, |alpha0|."""
    return phase_averaged_density(np.abs(_alpha_of(point)), state.alpha0_sq, state.nbar, "Q")


def fock_diagonal_from_phase_space(state, n_max, nodes=400):
    """<n|rho|n> for n < n_max from radial integrals of the phase-averaged P function.

    Uses p_n = 2 pi \\int r P_avg(r) exp(-r^2) r^(2n) / n! dr (Gauss-Legendre),
    falling back to the Poisson mixture when nbar = 0.
    """
    n = np.arange(n_max)
    if state.nbar == 0:
        a = state.alpha0_sq
        if a == 0:
            return (n == 0).astype(float)
        return np.exp(n * math.log(a) - a - special.gammaln(n + 1))
    r0 = math.sqrt(state.alpha0_sq)
    width = math.sqrt(state.nbar)
    lo = max(0.0, r0 - 14.0 * width)
    hi = r0 + 14.0 * width
    x, w = np.polynomial.legendre.leggauss(nodes)
    r = 0.5 * (hi - lo) * x + 0.5 * (hi + lo)
    w = 0.5 * (hi - lo) * w
    p_avg = phase_averaged_density(r, state.alpha0_sq, state.nbar, "P")
    with np.errstate(divide="ignore"):
        logr = np.log(r)
    log_poisson = -r[None, :] ** 2 + 2.0 * n[:, None] * logr[None, :] - special.gammaln(n + 1)[:, None]
    return 2.0 * math.pi * (np.exp(log_poisson) * (r * p_avg * w)[None, :]).sum(axis=1)


def gauss_legendre_2d(func, center, half_width, order=96):
    """Tensor-product Gauss-Legendre integral of ``func(alpha)`` over a square in the alpha plane."""
    x, w = np.polynomial.legendre.leggauss(order)
    xs = half_width * x
    ws = half_width * w
    re = center.real + xs
    im = center.imag + xs
    alpha = re[:, None] + 1j * im[None, :]
    return float(np.sum(func(alpha) * ws[:, None] * ws[None, :]))


def purity_closed_form(state):
    return 1.0 / (2.0 * state.nbar + 1.0)


def purity_phase_space(state, method="PQ", box_sigmas=8.0, order=96):
    """tr(rho^2) as pi \\int P Q or pi \\int W^2 by 2-D quadrature over a ``box_sigmas`` box.

    The box is sized by the standard deviation of the integrand, itself a
    Gaussian centred at alpha0.
    """
    if method == "PQ":
        v1, v2 = state.nbar, state.nbar + 1.0
        k1, k2 = "P", "Q"
    elif method == "W2":
        v1 = v2 = state.nbar + 0.5
        k1 = k2 = "W"
    else:
        raise ValueError(f"unknown method {method!r}")
    v = v1 * v2 / (v1 + v2)
    half = box_sigmas * math.sqrt(v / 2.0)

    def integrand(alpha):
        return phase_space_density(state, alpha, k1) * phase_space_density(state, alpha, k2)

    return math.pi * gauss_legendre_2d(integrand, state.alpha0, half, order)


# ---------------------------------------------------------------------------
# photon statistics

def g2_value(alpha0_sq, nbar):
    """Vectorised 2 - (|alpha0|^2 / (|alpha0|^2 + nbar))^2; nan for vacuum."""
    a, n = _check_magnitudes(alpha0_sq, nbar)
    tot = a + n
    with np.errstate(invalid="ignore", divide="ignore"):
        res = np.where(tot > 0, 2.0 - (a / np.where(tot > 0, tot, 1.0)) ** 2, np.nan)
    return res if res.ndim else float(res)


def g2_displaced_thermal(state):
    """Equal-time g2; 2 for thermal light, 1 for coherent light."""
    a, n = state.alpha0_sq, state.nbar
    if a == 0 and n == 0:
        raise UndefinedStatisticError("g2 is undefined for the vacuum")
    if a == 0:
        return 2.0
    return 2.0 - (a / (a + n)) ** 2


class PhotonDecomposition(NamedTuple):
    nbar: float
    alpha0_sq: float


def photon_moments(alpha0_sq, nbar):
    """Forward map: (mean, variance) of the photon number."""
    return alpha0_sq + nbar, nbar**2 + nbar + alpha0_sq * (2.0 * nbar + 1.0)


def clamp_photon_moments(mean_n, var_n):
    """Project (mean, var) onto the displaced-thermal range; returns (mean, var, clamped)."""
    if not (math.isfinite(mean_n) and math.isfinite(var_n)):
        raise DomainError("photon-number moments must be finite")
    s, v = float(mean_n), float(var_n)
    clamped = False
    if s < 0:
        s, clamped = 0.0, True
    if v < s:
        v, clamped = s, True
    elif v > s * s + s:
        v, clamped = s * s + s, True
    return s, v, clamped


def decompose_photon_moments(mean_n, var_n):
    """Split photon-number mean and variance into (nbar, |alpha0|^2).

    Solves mean = nbar + |alpha0|^2, var = nbar^2 + nbar + |alpha0|^2 (2 nbar + 1).
    Pairs outside mean <= var <= mean^2 + mean are clamped to the nearest
    boundary with an OutOfModelWarning.
    """
    s, v, clamped = clamp_photon_moments(mean_n, var_n)
    if clamped:
        warnings.warn(
            f"(mean, var) = ({mean_n:.6g}, {var_n:.6g}) outside the displaced-thermal range; clamped",
            OutOfModelWarning,
            stacklevel=2,
        )
    disc = max(s * s + s - v, 0.0)
    nbar = min((v - s) / (s + math.sqrt(disc)), s) if s > 0 else 0.0
    return PhotonDecomposition(nbar, max(s - nbar, 0.0))


class QuadratureMoments(NamedTuple):
    mean_q: float
    mean_p: float
    var_q: float
    var_p: float
    cov_qp: float


def quadrature_moments(state):
    """First and second quadrature moments (symmetric ordering, [q, p] = i)."""
    s2 = math.sqrt(2.0)
    v = state.nbar + 0.5
    return QuadratureMoments(s2 * state.alpha0.real, s2 * state.alpha0.imag, v, v, 0.0)


def linear_coupling_map(state, reflectance):
    """State behind a beam-splitter-like coupling with amplitude ``reflectance``."""
    r = complex(reflectance)
    if abs(r) > 1.0 + 1e-12:
        raise DomainError(f"|r| must be <= 1, got {abs(r)}")
    return DisplacedThermalState(-r * state.alpha0, abs(r) ** 2 * state.nbar)


class SchmidtDecomposition(NamedTuple):
    schmidt_coefficients: np.ndarray
    schmidt_rank: int
    entanglement_entropy: float


def pair_conversion_schmidt(coefficients, tol=1e-10):
    """Schmidt data of sum_n psi_n |n>|n> produced from sum_n psi_n |n>.

    Entropy is in bits.
    """
    psi = np.asarray(coefficients, dtype=complex).ravel()
    norm = float(np.sum(np.abs(psi) ** 2))
    if abs(norm - 1.0) > tol:
        raise NormalizationError(f"coefficients have squared norm {norm!r}, expected 1")
    lam = np.abs(psi)
    rank = int(np.count_nonzero(lam > 1e-12))
    p = lam[lam > 0] ** 2
    entropy = float(-np.sum(p * np.log2(p)))
    return SchmidtDecomposition(lam, rank, max(entropy, 0.0))


def coherent_state_coefficients(alpha, dim):
    """Fock amplitudes of |alpha> truncated to ``dim`` (not renormalised)."""
    n = np.arange(dim)
    alpha = complex(alpha)
    if alpha == 0:
        return (n == 0).astype(complex)
    logmag = -0.5 * abs(alpha) ** 2 + n * math.log(abs(alpha)) - 0.5 * special.gammaln(n + 1)
    return np.exp(logmag) * np.exp(1j * n * cmath.phase(alpha))
