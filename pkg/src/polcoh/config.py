"""Run configuration: a versioned TOML file validated into typed objects.

Every section is optional and falls back to the desk-scale defaults. Unknown
keys and invalid values raise ConfigError naming the dotted key path.
"""

import copy
import math
import sys
from dataclasses import dataclass, field
from importlib import resources

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .coherence import DisplacedThermalState
from .errors import ConfigError, DomainError
from .twa.model import (
    ModelParams,
    PumpProfile,
    SimulationGrid,
    TrajectoryConfig,
    check_step_stability,
    kinetic_coefficient,
)

SCHEMA_VERSION = 1

DEFAULTS = {
    "schema": SCHEMA_VERSION,
    "grid": {"n_side": 64, "length": 57.6},
    "model": {
        "mass_ratio": 1e-4,
        "gamma_c": 0.2,
        "gamma_r": 0.3,
        "condensation_rate": 0.015,
        "g_c": 6e-3,
        "g_r": 1.2e-2,
        "hbar": 0.6582119569,
        "density_renorm": 1.0,
    },
    "pump": {"width": 16.0, "ratios": [0.5, 2.0, 4.0, 6.0]},
    "trajectory": {
        "dt": 0.04,
        "total_time": 2000.0,
        "burn_in_fraction": 0.5,
        "snapshot_stride": 500,
        "seed": 0,
        "realizations": 32,
        "realizations_below_threshold": 32,
        "batch_size": 8,
    },
    "observables": {
        "window_side": 3,
        "g1_center": [0.0, 0.0],
        "g1_distances": [float(d) for d in range(0, 29, 2)],
    },
    "homodyne": {
        "bin_width": 0.25,
        "extent": 0.0,
        "margin": 0.025,
        "smoothing": 2048,
        "reference": "product",
        "window_size": 10000,
        "resamples": 200,
        "weights": "model",
    },
    "generator": {
        "nbar": 1.7,
        "alpha0_sq": 53.0,
        "low_nbar": 2.0,
        "low_alpha0_sq": 0.0,
        "switching_period": 1.0e11,
        "phase_coherence_time": 100.0,
        "sweep_period": 524288,
        "n_samples": 32000000,
        "lo_scale": 1.0,
    },
    "output": {"dir": "out"},
}


def _merge(base, override, path=""):
    out = copy.deepcopy(base)
    for key, val in override.items():
        dotted = f"{path}{key}"
        if key not in base:
            raise ConfigError(dotted, "unknown key")
        if isinstance(base[key], dict):
            if not isinstance(val, dict):
                raise ConfigError(dotted, "expected a table")
            out[key] = _merge(base[key], val, dotted + ".")
        else:
            out[key] = _coerce(dotted, base[key], val)
    return out


def _coerce(key, default, val):
    if isinstance(default, bool):
        if not isinstance(val, bool):
            raise ConfigError(key, f"expected a boolean, got {val!r}")
        return val
    if isinstance(default, int):
        if isinstance(val, bool) or not isinstance(val, int):
            raise ConfigError(key, f"expected an integer, got {val!r}")
        return val
    if isinstance(default, float):
        if isinstance(val, bool) or not isinstance(val, (int, float)):
            raise ConfigError(key, f"expected a number, got {val!r}")
        if not math.isfinite(val):
            raise ConfigError(key, "must be finite")
        return float(val)
    if isinstance(default, str):
        if not isinstance(val, str):
            raise ConfigError(key, f"expected a string, got {val!r}")
        return val
    if isinstance(default, list):
        if not isinstance(val, list) or not all(
            isinstance(v, (int, float)) and not isinstance(v, bool) for v in val
        ):
            raise ConfigError(key, "expected a list of numbers")
        return [float(v) for v in val]
    raise ConfigError(key, "unsupported value")  # pragma: no cover


@dataclass
class RunConfig:
    raw: dict
    grid: SimulationGrid
    params: ModelParams
    pump_width: float
    pump_ratios: list
    trajectory: TrajectoryConfig
    realizations_below_threshold: int
    batch_size: int
    window_side: int
    g1_center: tuple
    g1_distances: list
    homodyne: dict
    generator: dict
    output_dir: str
    source: str = field(default="<defaults>")

    def trajectory_for(self, ratio, seed=None):
        """Trajectory settings for one pump ratio (more realizations below threshold)."""
        n = self.realizations_below_threshold if ratio < 1.0 else self.trajectory.realizations
        changes = {"realizations": n}
        if seed is not None:
            changes["seed"] = seed
        return self.trajectory.with_(**changes)

    def pump(self, ratio):
        return PumpProfile.from_ratio(ratio, self.params, self.pump_width)

    def generator_states(self):
        g = self.generator
        high = DisplacedThermalState.from_magnitudes(g["alpha0_sq"], g["nbar"])
        low = DisplacedThermalState.from_magnitudes(g["low_alpha0_sq"], g["low_nbar"])
        return high, low


def _build(raw, source):
    if raw.get("schema") != SCHEMA_VERSION:
        raise ConfigError("schema", f"expected schema = {SCHEMA_VERSION}, got {raw.get('schema')!r}")
    m = dict(raw["model"])
    mass_ratio = m.pop("mass_ratio")
    if not mass_ratio > 0:
        raise ConfigError("model.mass_ratio", "must be positive")
    grid = SimulationGrid(**raw["grid"])
    params = ModelParams(kinetic_coeff=kinetic_coefficient(mass_ratio), **m)
    t = dict(raw["trajectory"])
    below = t.pop("realizations_below_threshold")
    batch = t.pop("batch_size")
    if batch < 1:
        raise ConfigError("trajectory.batch_size", "must be >= 1")
    if below < 2 or t["realizations"] < 2:
        raise ConfigError("trajectory.realizations", "ensembles need at least 2 realizations")
    traj = TrajectoryConfig(**t)
    pump = raw["pump"]
    ratios = pump["ratios"]
    if not ratios or any(r < 0 for r in ratios):
        raise ConfigError("pump.ratios", "must be a non-empty list of non-negative ratios")
    try:
        prof = PumpProfile.from_ratio(max(ratios), params, pump["width"])
    except DomainError as exc:
        raise ConfigError("model.condensation_rate", str(exc)) from None
    grid.check_validity(params)
    check_step_stability(traj.dt, params, prof.evaluate(grid), grid)
    obs = raw["observables"]
    side = obs["window_side"]
    if side < 1 or side % 2 == 0 or side > grid.n_side:
        raise ConfigError("observables.window_side", "must be odd, positive and at most grid.n_side")
    if len(obs["g1_center"]) != 2:
        raise ConfigError("observables.g1_center", "expected [x, y]")
    if any(d < 0 or d > grid.length / 2 for d in obs["g1_distances"]):
        raise ConfigError("observables.g1_distances", "distances must lie in [0, L/2]")
    hom = raw["homodyne"]
    if not hom["bin_width"] > 0:
        raise ConfigError("homodyne.bin_width", "must be positive")
    if hom["extent"] < 0:
        raise ConfigError("homodyne.extent", "must be >= 0 (0 selects automatic extent)")
    if not 0 <= hom["margin"] < 1:
        raise ConfigError("homodyne.margin", "must lie in [0, 1)")
    if hom["smoothing"] < 1:
        raise ConfigError("homodyne.smoothing", "must be >= 1")
    if hom["reference"] not in ("product", "channels"):
        raise ConfigError("homodyne.reference", "must be 'product' or 'channels'")
    if hom["weights"] not in ("model", "data"):
        raise ConfigError("homodyne.weights", "must be 'model' or 'data'")
    if hom["window_size"] < 1000:
        raise ConfigError("homodyne.window_size", "must be >= 1000")
    if hom["resamples"] < 2:
        raise ConfigError("homodyne.resamples", "must be >= 2")
    gen = raw["generator"]
    for key in ("nbar", "alpha0_sq", "low_nbar", "low_alpha0_sq"):
        if gen[key] < 0:
            raise ConfigError(f"generator.{key}", "must be >= 0")
    for key in ("switching_period", "phase_coherence_time", "lo_scale"):
        if gen[key] <= 0:
            raise ConfigError(f"generator.{key}", "must be positive")
    if gen["n_samples"] < 1000:
        raise ConfigError("generator.n_samples", "must be >= 1000")
    if gen["sweep_period"] < 0:
        raise ConfigError("generator.sweep_period", "must be >= 0 (0 disables the sweep)")
    return RunConfig(
        raw=raw, grid=grid, params=params, pump_width=pump["width"], pump_ratios=list(ratios),
        trajectory=traj, realizations_below_threshold=below, batch_size=batch,
        window_side=side, g1_center=tuple(obs["g1_center"]), g1_distances=list(obs["g1_distances"]),
        homodyne=dict(hom), generator=dict(gen), output_dir=raw["output"]["dir"], source=source,
    )


def config_from_dict(data, source="<dict>"):
    return _build(_merge(DEFAULTS, data), source)


def load_config(path=None):
    """Parse and validate a TOML config; ``None`` gives the desk defaults."""
    if path is None:
        return config_from_dict({"schema": SCHEMA_VERSION}, "<defaults>")
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError("config", f"file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError("config", f"invalid TOML in {path}: {exc}") from None
    return config_from_dict(data, str(path))


def preset_path(name):
    """Path of a shipped preset (``"desk"`` or ``"paper"``)."""
    ref = resources.files("polcoh") / "presets" / f"{name}.toml"
    if not ref.is_file():
        raise ConfigError("config", f"unknown preset {name!r}")
    return str(ref)
