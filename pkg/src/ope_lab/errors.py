"""Exception types shared across the package."""

from __future__ import annotations


class OpeLabError(Exception):
    """Base class for all package-specific errors."""


class InvalidInput(OpeLabError, ValueError):
    """An input violates its structural invariants or a precondition.

    ``violations`` carries the individual findings when the rejection came
    from a validation report.
    """

    def __init__(self, message: str, violations=()):
        super().__init__(message)
        self.violations = tuple(violations)


class SingularCovariance(OpeLabError):
    """Unregularized Gram matrix is numerically singular."""

    def __init__(self, condition_estimate: float):
        super().__init__(
            "covariance matrix is numerically singular "
            f"(condition estimate {condition_estimate:.6g})"
        )
        self.condition_estimate = condition_estimate


class DivergentSeries(OpeLabError):
    """The discounted value series does not converge for this fit."""

    def __init__(self, spectral_radius: float, gamma: float):
        super().__init__(
            f"discounted series diverges: gamma * rho = {gamma * spectral_radius:.6g} >= 1 "
            f"(rho estimate {spectral_radius:.6g}, gamma {gamma:.6g})"
        )
        self.spectral_radius = spectral_radius
        self.gamma = gamma


class SingularSigma(OpeLabError):
    """The requested construction would make the data covariance singular."""


class StationaryAmbiguous(OpeLabError):
    """No stable invariant distribution could be selected for the chain."""


class AbsoluteContinuity(OpeLabError):
    """A distribution puts mass where its reference distribution has none."""

    def __init__(self, cell):
        super().__init__(f"support violation at cell {cell}")
        self.cell = cell


class ContractionHypothesisFailed(OpeLabError):
    """The supplied (kernel, features, M) do not satisfy the mean-embedding identity."""

    def __init__(self, residual: float):
        super().__init__(
            f"mean-embedding identity violated (max residual {residual:.6g} > 1e-8)"
        )
        self.residual = residual


class PerturbationTooLarge(OpeLabError):
    """A transition perturbation pushed some probability outside [0, 1]."""

    def __init__(self, max_violation: float):
        super().__init__(
            f"perturbed transition probabilities leave [0, 1] by up to {max_violation:.6g}"
        )
        self.max_violation = max_violation
