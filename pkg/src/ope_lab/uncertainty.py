"""Data-dependent confidence bounds computed from a fitted embedding.

The finite-horizon bound multiplies the embedded-occupancy terms
``(H - h + 1) sqrt(nu_h . Sigma^{-1} nu_h)`` by a self-normalized
log factor

    sqrt(2 lam) omega
      + 2 sqrt(2 d ln(1 + N / (lam d)) ln(3 N^2 H / delta))
      + (4/3) ln(3 N^2 H / delta),

where ``omega`` bounds the coefficient norm of any function taking values in
[0, 1].  The discounted variant replaces the per-step sum by the resolvent
vector ``(I - gamma M)^{-T} nu0`` and uses ``ln(2 N^2 / delta)``.

Natural logarithms throughout.  On an empty dataset the martingale terms
vanish and only the ``sqrt(2 lam) omega`` term survives, keeping the bound
finite.  The feature-norm precondition ``max ||phi||_2 <= 1`` is enforced,
never silently rescaled, because rescaling would change the meaning of lam.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .errors import DivergentSeries, InvalidInput
from .estimators import SPECTRAL_MARGIN, FittedEmbedding
from .features import FeatureMap
from .linalg import spectral_radius
from .mdp import _readonly

FEATURE_NORM_TOL = 1e-9
_VERTEX_FEASIBILITY_TOL = 1e-9


@dataclass(frozen=True)
class ConfidenceReport:
    """Bound together with its two factors: ``bound = sum(per_h_terms) * log_factor``."""

    bound: float
    delta: float
    omega: float
    lam: float
    per_h_terms: np.ndarray
    log_factor: float

    def __post_init__(self):
        object.__setattr__(self, "per_h_terms", _readonly(self.per_h_terms))

    def to_dict(self) -> dict:
        return {
            "bound": self.bound,
            "delta": self.delta,
            "omega": self.omega,
            "lambda": self.lam,
            "per_h_terms": self.per_h_terms.tolist(),
            "log_factor": self.log_factor,
        }


def _check_bound_inputs(fit: FittedEmbedding, delta: float, omega: float) -> None:
    if not 0.0 < delta < 1.0:
        raise InvalidInput(f"delta must lie in (0, 1), got {delta}")
    if omega <= 0.0:
        raise InvalidInput(f"omega must be positive, got {omega}")
    if fit.lam <= 0.0:
        raise InvalidInput("confidence bounds need lam > 0 (the log term is undefined at 0)")
    max_norm = fit.features.max_row_norm
    if max_norm > 1.0 + FEATURE_NORM_TOL:
        raise InvalidInput(
            f"features must satisfy ||phi(s,a)||_2 <= 1; max row norm is {max_norm:.6g}"
        )


def _log_factor(lam: float, omega: float, d: int, n: int, log_tail_arg: float) -> float:
    # With no samples the martingale sums are empty: only the ridge-bias term remains.
    if n == 0:
        return float(np.sqrt(2.0 * lam) * omega)
    growth = np.log1p(n / (lam * d))
    tail = np.log(log_tail_arg)
    return float(
        np.sqrt(2.0 * lam) * omega
        + 2.0 * np.sqrt(2.0 * d * growth * tail)
        + (4.0 / 3.0) * tail
    )


def confidence_bound(
    fit: FittedEmbedding, horizon: int, delta: float, omega: float
) -> ConfidenceReport:
    """Finite-horizon high-probability bound on ``|v - v_hat|``.

    ``horizon`` enters the tail log as ``max(horizon, 1)`` so the degenerate
    single-step case stays well-defined.
    """
    _check_bound_inputs(fit, delta, omega)
    if horizon < 0:
        raise InvalidInput("horizon must be nonnegative")
    nu_hats = fit.nu_hats(horizon)
    per_h = np.array(
        [
            (horizon - h + 1) * np.sqrt(fit.solver.quad_form(nu_hats[h]))
            for h in range(horizon + 1)
        ]
    )
    n = fit.n_samples
    factor = _log_factor(
        fit.lam, omega, fit.dim, n, 3.0 * n**2 * max(horizon, 1) / delta if n else 1.0
    )
    return ConfidenceReport(
        bound=float(per_h.sum() * factor),
        delta=delta,
        omega=omega,
        lam=fit.lam,
        per_h_terms=per_h,
        log_factor=factor,
    )


def discounted_confidence_bound(
    fit: FittedEmbedding, gamma: float, delta: float, omega: float
) -> ConfidenceReport:
    """Discounted analogue using the geometric-series aggregate of nu_h."""
    _check_bound_inputs(fit, delta, omega)
    if not 0.0 <= gamma < 1.0:
        raise InvalidInput(f"gamma must lie in [0, 1), got {gamma}")
    rho = spectral_radius(fit.m)
    if gamma * rho >= 1.0 - SPECTRAL_MARGIN:
        raise DivergentSeries(rho, gamma)
    aggregate = np.linalg.solve(np.eye(fit.dim) - gamma * fit.m.T, fit.nu0)
    term = np.sqrt(fit.solver.quad_form(aggregate)) / (1.0 - gamma)
    n = fit.n_samples
    factor = _log_factor(fit.lam, omega, fit.dim, n, 2.0 * n**2 / delta if n else 1.0)
    return ConfidenceReport(
        bound=float(term * factor),
        delta=delta,
        omega=omega,
        lam=fit.lam,
        per_h_terms=np.array([term]),
        log_factor=factor,
    )


@dataclass(frozen=True)
class OmegaEstimate:
    """Norm bound over {w : 0 <= phi(s,a) . w <= 1 everywhere}.

    ``lower_estimate`` is False when the value is exact (box-shaped feature
    maps and d <= 2) and True when it came from sampled polytope vertices.
    """

    value: float
    lower_estimate: bool


def _box_omega(matrix: np.ndarray) -> float | None:
    """Exact omega when every feature row is one-hot with a positive entry."""
    nonzero_per_row = (matrix != 0.0).sum(axis=1)
    if not np.all(nonzero_per_row == 1):
        return None
    coeffs = matrix.sum(axis=1)
    if np.any(coeffs <= 0.0):
        return None
    columns = matrix.argmax(axis=1)
    d = matrix.shape[1]
    upper = np.zeros(d)
    for j in range(d):
        touching = coeffs[columns == j]
        upper[j] = 1.0 / touching.max()
    return float(np.linalg.norm(upper))


def _feasible(matrix: np.ndarray, w: np.ndarray) -> bool:
    values = matrix @ w
    return bool(
        values.min() >= -_VERTEX_FEASIBILITY_TOL and values.max() <= 1.0 + _VERTEX_FEASIBILITY_TOL
    )


def _exact_omega_low_dim(matrix: np.ndarray) -> float:
    d = matrix.shape[1]
    if np.linalg.matrix_rank(matrix) < d:
        raise InvalidInput("feature polytope is unbounded (rank-deficient feature matrix)")
    if d == 1:
        best = 0.0
        for coeff in matrix[:, 0]:
            if coeff != 0.0 and _feasible(matrix, np.array([1.0 / coeff])):
                best = max(best, abs(1.0 / coeff))
        return best
    # d == 2: enumerate intersections of the bounding hyperplanes phi.w = 0|1.
    planes = [(row, level) for row in matrix for level in (0.0, 1.0)]
    best = 0.0
    for (a1, b1), (a2, b2) in itertools.combinations(planes, 2):
        system = np.array([a1, a2])
        if abs(np.linalg.det(system)) < 1e-14:
            continue
        vertex = np.linalg.solve(system, np.array([b1, b2]))
        if _feasible(matrix, vertex):
            best = max(best, float(np.linalg.norm(vertex)))
    return best


def _sampled_omega(matrix: np.ndarray, n_samples: int, seed: int) -> float:
    """Lower estimate from randomly sampled candidate vertices (active sets)."""
    n_rows, d = matrix.shape
    rng = np.random.default_rng(seed)
    best = 0.0
    # Warm start: the representation of the all-ones function, if feasible.
    coef, *_ = np.linalg.lstsq(matrix, np.ones(n_rows), rcond=None)
    if _feasible(matrix, coef):
        best = float(np.linalg.norm(coef))
    for _ in range(n_samples):
        rows = rng.choice(n_rows, size=d, replace=False)
        levels = rng.integers(0, 2, size=d).astype(float)
        system = matrix[rows]
        try:
            vertex = np.linalg.solve(system, levels)
        except np.linalg.LinAlgError:
            continue
        if _feasible(matrix, vertex):
            best = max(best, float(np.linalg.norm(vertex)))
    return best


def default_omega(features: FeatureMap, n_samples: int = 4000, seed: int = 0) -> OmegaEstimate:
    """Coefficient-norm bound for [0, 1]-valued functions in the class.

    Exact for box-shaped feature maps (tabular indicators give sqrt(d)) and
    for d <= 2 via vertex enumeration; otherwise a certified lower estimate
    from sampled vertices of the constraint polytope, flagged as such.
    Callers with a better prior bound should pass their own omega.
    """
    box = _box_omega(features.matrix)
    if box is not None:
        return OmegaEstimate(box, lower_estimate=False)
    if features.dim <= 2:
        return OmegaEstimate(_exact_omega_low_dim(features.matrix), lower_estimate=False)
    return OmegaEstimate(_sampled_omega(features.matrix, n_samples, seed), lower_estimate=True)
