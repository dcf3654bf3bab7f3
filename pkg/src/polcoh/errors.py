"""Exception and warning types shared across the package."""


class PolcohError(Exception):
    """Base class for all errors raised by polcoh."""


class DomainError(PolcohError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class InvariantViolation(PolcohError, ValueError):
    """A data object does not satisfy its structural invariants."""


class TruncationError(PolcohError):
    """Fock-space truncation lost more probability than allowed."""

    def __init__(self, deficit, threshold):
        self.deficit = deficit
        self.threshold = threshold
        super().__init__(
            f"truncation deficit {deficit:.3e} exceeds threshold {threshold:.1e}; "
            "increase n_trunc"
        )


class DegenerateDistributionError(PolcohError, ValueError):
    """The requested quasiprobability is a Dirac delta and has no density."""


class UndefinedStatisticError(PolcohError, ValueError):
    """A statistic is undefined for the given state (e.g. g2 of vacuum)."""


class NormalizationError(PolcohError, ValueError):
    pass


class ConfigError(PolcohError):
    """Invalid run configuration. ``key`` is the dotted path of the offending entry."""

    def __init__(self, key, message):
        self.key = key
        super().__init__(f"{key}: {message}")


class TrajectoryBlowup(PolcohError):
    """A stochastic trajectory produced a non-finite field."""

    def __init__(self, step, trajectory_index=None):
        self.step = step
        self.trajectory_index = trajectory_index
        where = "" if trajectory_index is None else f" in trajectory {trajectory_index}"
        super().__init__(f"non-finite field after step {step}{where}")


class EnsembleFailure(PolcohError):
    """Too many trajectories of an ensemble failed."""

    def __init__(self, failures, total):
        self.failures = list(failures)
        self.total = total
        super().__init__(f"{len(self.failures)} of {total} trajectories blew up")


class InsufficientDataError(PolcohError):
    pass


class PathologicalCorrelationError(PolcohError):
    pass


class InsufficientPostselectionError(InsufficientDataError):
    pass


class HistogramOverflowError(PolcohError):
    pass


class FitFailure(PolcohError):
    """Optimizer did not converge. ``best`` holds the best parameters found."""

    def __init__(self, message, best=None):
        self.best = best
        super().__init__(message)


class PropagationFailure(PolcohError):
    pass


class OutOfModelWarning(UserWarning):
    """Photon-number moments fell outside the displaced-thermal range and were clamped."""


class TWAValidityWarning(UserWarning):
    """The grid is close to violating the truncated-Wigner validity condition."""
