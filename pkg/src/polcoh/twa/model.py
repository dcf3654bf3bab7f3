"""Parameter containers for the stochastic open-dissipative Gross-Pitaevskii model.

Units throughout: micrometres, picoseconds, meV.
"""

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import constants

from ..errors import ConfigError, DomainError, TWAValidityWarning

HBAR_MEV_PS = 0.6582119569


def kinetic_coefficient(mass_ratio=1e-4):
    """hbar^2 / (2 m_eff) in meV um^2 for ``m_eff = mass_ratio * m_e``."""
    joule_m2 = constants.hbar**2 / (2.0 * mass_ratio * constants.m_e)
    return joule_m2 / constants.e * 1e3 * 1e12


@dataclass(frozen=True)
class SimulationGrid:
    n_side: int
    length: float

    def __post_init__(self):
        n = self.n_side
        if n < 2 or n & (n - 1):
            raise ConfigError("grid.n_side", f"must be a power of two, got {n}")
        if not self.length > 0:
            raise ConfigError("grid.length", "must be positive")

    @property
    def dx(self):
        return self.length / self.n_side

    @property
    def cell_volume(self):
        return self.dx**2

    @property
    def volume(self):
        return self.length**2

    @property
    def dk(self):
        return 2.0 * math.pi / self.length

    def coordinates(self):
        """Cell-centre coordinates, origin at index ``n_side // 2``."""
        x = (np.arange(self.n_side) - self.n_side // 2) * self.dx
        return np.meshgrid(x, x, indexing="ij")

    def wavenumbers(self):
        """Angular wavenumbers in FFT order."""
        return 2.0 * math.pi * np.fft.fftfreq(self.n_side, d=self.dx)

    def k_squared(self):
        k = self.wavenumbers()
        return k[:, None] ** 2 + k[None, :] ** 2

    def twa_validity_ratio(self, params):
        """hbar*gamma_c / (g_c/dV); the truncated-Wigner description needs this >> 1."""
        if params.g_c == 0:
            return math.inf
        return params.hbar * params.gamma_c / (params.g_c / self.cell_volume)

    def check_validity(self, params, hard=10.0, soft=20.0):
        ratio = self.twa_validity_ratio(params)
        if ratio < hard:
            raise ConfigError(
                "grid",
                f"TWA validity hbar*gamma_c/(g_c/dV) = {ratio:.2f} < {hard}; use larger cells",
            )
        if ratio < soft:
            warnings.warn(
                f"TWA validity ratio hbar*gamma_c/(g_c/dV) = {ratio:.1f} is below {soft}",
                TWAValidityWarning,
                stacklevel=2,
            )
        return ratio


@dataclass(frozen=True)
class ModelParams:
    """Rates in 1/ps, couplings in meV um^2, R in um^2/ps."""

    kinetic_coeff: float = field(default_factory=kinetic_coefficient)
    gamma_c: float = 0.2
    gamma_r: float = 0.3
    condensation_rate: float = 0.015
    g_c: float = 6e-3
    g_r: float = 1.2e-2
    hbar: float = HBAR_MEV_PS
    # |psi|^2_- = |psi|^2 - density_renorm / dV; 1.0 reproduces the printed model
    density_renorm: float = 1.0

    def __post_init__(self):
        for name in ("kinetic_coeff", "gamma_c", "gamma_r", "condensation_rate", "g_c", "g_r"):
            if getattr(self, name) < 0:
                raise ConfigError(f"model.{name}", "must be non-negative")
        if not self.hbar > 0:
            raise ConfigError("model.hbar", "must be positive")

    def with_(self, **changes):
        return replace(self, **changes)


def threshold_power(params):
    """Homogeneous condensation threshold gamma_c*gamma_r/R in 1/(ps um^2)."""
    if params.condensation_rate <= 0:
        raise DomainError("threshold power needs a positive condensation rate R")
    return params.gamma_c * params.gamma_r / params.condensation_rate


@dataclass(frozen=True)
class PumpProfile:
    """Super-Gaussian pump ``p0 * exp(-r^4 / w^4)`` centred on the grid origin."""

    p0: float
    width: float
    exponent: int = 4

    def __post_init__(self):
        if self.p0 < 0:
            raise ConfigError("pump.p0", "must be non-negative")
        if not self.width > 0:
            raise ConfigError("pump.width", "must be positive")
        if self.exponent != 4:
            raise ConfigError("pump.exponent", "only the quartic super-Gaussian is supported")

    def evaluate(self, grid):
        x, y = grid.coordinates()
        r2 = x * x + y * y
        return self.p0 * np.exp(-(r2 * r2) / self.width**4)

    @classmethod
    def from_ratio(cls, ratio, params, width):
        return cls(p0=ratio * threshold_power(params), width=width)


@dataclass
class FieldState:
    """One trajectory's field. ``psi`` in um^-1, ``n_res`` in um^-2, ``time`` in ps."""

    psi: np.ndarray
    n_res: np.ndarray
    time: float = 0.0
    clipped: int = 0

    def copy(self):
        return FieldState(self.psi.copy(), self.n_res.copy(), self.time, self.clipped)


@dataclass(frozen=True)
class TrajectoryConfig:
    dt: float
    total_time: float
    burn_in_fraction: float = 0.5
    snapshot_stride: int = 500
    seed: int = 0
    realizations: int = 32

    def __post_init__(self):
        if not self.dt > 0:
            raise ConfigError("trajectory.dt", "must be positive")
        if not self.total_time > 0:
            raise ConfigError("trajectory.total_time", "must be positive")
        if not 0.0 <= self.burn_in_fraction < 1.0:
            raise ConfigError("trajectory.burn_in_fraction", "must lie in [0, 1)")
        if self.snapshot_stride < 1:
            raise ConfigError("trajectory.snapshot_stride", "must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("trajectory.seed", "must be an unsigned 64-bit integer")
        if self.realizations < 1:
            raise ConfigError("trajectory.realizations", "must be >= 1")
        if len(self.snapshot_steps()) < 8:
            raise ConfigError(
                "trajectory.snapshot_stride",
                f"only {len(self.snapshot_steps())} snapshots after burn-in; need >= 8",
            )

    @property
    def n_steps(self):
        return int(round(self.total_time / self.dt))

    def snapshot_steps(self):
        burn = int(self.burn_in_fraction * self.n_steps)
        return list(range(burn + self.snapshot_stride, self.n_steps + 1, self.snapshot_stride))

    def with_(self, **changes):
        return replace(self, **changes)


def check_step_stability(dt, params, pump_field, grid):
    """Explicit-scheme bounds on the time step.

    Kinetic: dt <= 0.5 * hbar/K * (dx/pi)^2. Gain/noise: dt * (R n_max + gamma_c) <= 0.1
    with n_max bounded by the unsaturated reservoir P_max/gamma_r.
    """
    if params.kinetic_coeff > 0:
        limit = 0.5 * params.hbar / params.kinetic_coeff * (grid.dx / math.pi) ** 2
        if dt > limit:
            raise ConfigError("trajectory.dt", f"{dt} ps exceeds kinetic stability limit {limit:.4g} ps")
    p_max = float(np.max(pump_field)) if np.size(pump_field) else 0.0
    n_max = p_max / params.gamma_r if params.gamma_r > 0 else 0.0
    rate = params.condensation_rate * n_max + params.gamma_c
    if dt * rate > 0.1:
        raise ConfigError(
            "trajectory.dt",
            f"dt*(R n_max + gamma_c) = {dt * rate:.3g} exceeds 0.1",
        )
