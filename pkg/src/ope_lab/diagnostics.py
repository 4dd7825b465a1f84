"""Population-side diagnostics computed from the true model.

These quantities mirror the data-side embeddings: the exact transition
embedding ``M``, the behavior data covariance ``Sigma``, the stationary
target covariance ``Sigma_pi``, expected feature vectors ``nu_h``, the
restricted and Pearson chi-square mismatches, condition numbers, and the
closed-form error-bound right-hand side.  Singular covariances are handled
with pseudo-inverses and surfaced through flags, never silently.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import AbsoluteContinuity, ContractionHypothesisFailed, InvalidInput, StationaryAmbiguous
from .features import FeatureMap, initial_feature_vector, policy_average_features
from .linalg import psd_sqrt_pair, spd_inverse_apply, symmetrize
from .mdp import (
    InitialDistribution,
    Policy,
    TabularMdp,
    _readonly,
    state_action_occupancies,
    state_occupancies,
    transition_matrix,
)

STATIONARY_ITERATIONS = 10_000
STATIONARY_TOL = 1e-12
EMBEDDING_IDENTITY_TOL = 1e-8


class OccupancyKind(str, Enum):
    BEHAVIOR_AVERAGE = "behavior_average"
    TARGET_WEIGHTED = "target_weighted"
    MARGINAL = "marginal"


@dataclass(frozen=True)
class OccupancyMeasure:
    """Probability vector over flattened (s, a) cells."""

    probs: np.ndarray
    kind: OccupancyKind

    def __post_init__(self):
        probs = _readonly(self.probs)
        if probs.min() < -1e-12 or abs(probs.sum() - 1.0) > 1e-10:
            raise InvalidInput("occupancy measure must be a probability vector")
        object.__setattr__(self, "probs", probs)


def behavior_average_occupancy(
    model: TabularMdp, behavior: Policy, init: InitialDistribution, horizon: int
) -> OccupancyMeasure:
    """Average of the (s, a) marginals over steps 0..H-1 of an episode."""
    joint = state_action_occupancies(model, behavior, init, horizon - 1)
    return OccupancyMeasure(joint.mean(axis=0).reshape(-1), OccupancyKind.BEHAVIOR_AVERAGE)


def target_weighted_occupancy(
    model: TabularMdp, target: Policy, init: InitialDistribution, horizon: int
) -> OccupancyMeasure:
    """(s, a) distribution weighted by remaining steps, over h = 0..H."""
    joint = state_action_occupancies(model, target, init, horizon)
    weights = np.arange(horizon + 1, 0, -1, dtype=float)
    weighted = np.tensordot(weights, joint, axes=(0, 0)) / weights.sum()
    return OccupancyMeasure(weighted.reshape(-1), OccupancyKind.TARGET_WEIGHTED)


def marginal_occupancy(
    model: TabularMdp, policy: Policy, init: InitialDistribution, h: int
) -> OccupancyMeasure:
    joint = state_action_occupancies(model, policy, init, h)
    return OccupancyMeasure(joint[h].reshape(-1), OccupancyKind.MARGINAL)


def stationary_distribution(kernel: np.ndarray):
    """Invariant distribution of a finite chain by power iteration.

    Deterministic uniform start, 1e4 iterations, tolerance 1e-12; a periodic
    oscillation is resolved by averaging the last two iterates.  Returns
    ``(distribution, ambiguous)`` where ``ambiguous`` reports that a second
    deterministic start converged to a different fixed point (multiple
    recurrent classes); the uniform-start fixed point is kept in that case so
    downstream diagnostics stay computable.  If no stable fixed point is found
    at all, raises :class:`StationaryAmbiguous`.
    """
    kernel = np.asarray(kernel, dtype=float)
    n = kernel.shape[0]

    def iterate(start: np.ndarray) -> np.ndarray | None:
        current = start
        for _ in range(STATIONARY_ITERATIONS):
            following = current @ kernel
            if np.abs(following - current).sum() <= STATIONARY_TOL:
                return following
            current = following
        # Non-convergence; a period-two oscillation averages to an invariant point.
        averaged = 0.5 * (current + current @ kernel)
        if np.abs(averaged @ kernel - averaged).sum() <= 1e-10:
            return averaged
        return None

    uniform = np.full(n, 1.0 / n)
    primary = iterate(uniform)
    if primary is None:
        raise StationaryAmbiguous("power iteration found no stable invariant distribution")
    probe_start = np.arange(1.0, n + 1.0)
    probe_start /= probe_start.sum()
    probe = iterate(probe_start)
    ambiguous = bool(probe is None or np.abs(probe - primary).sum() > 1e-8)
    return primary, ambiguous


@dataclass(frozen=True)
class PopulationProfile:
    """Exact counterparts of the fitted embeddings plus mismatch constants.

    ``singular`` flags a rank-deficient data covariance (every Sigma-inverse
    quantity then uses a pseudo-inverse); ``sigma_pi_singular`` flags a
    rank-deficient target covariance, which is structural for indicator
    features and only affects the restricted condition number kappa1.
    """

    m_pi: np.ndarray
    sigma: np.ndarray
    sigma_pi: np.ndarray
    nu_h: np.ndarray
    kappa1: float
    kappa2: float
    c1: float
    stationary: np.ndarray
    features: FeatureMap
    horizon: int
    singular: bool = False
    sigma_pi_singular: bool = False
    stationary_ambiguous: bool = False

    def __post_init__(self):
        for name in ("m_pi", "sigma", "sigma_pi", "nu_h", "stationary"):
            object.__setattr__(self, name, _readonly(getattr(self, name)))

    @property
    def dim(self) -> int:
        return self.sigma.shape[0]

    def sigma_inv(self, rhs: np.ndarray) -> np.ndarray:
        solution, _ = spd_inverse_apply(self.sigma, rhs, allow_pseudo=self.singular)
        return solution

    def to_dict(self) -> dict:
        return {
            "m_pi": self.m_pi.tolist(),
            "sigma": self.sigma.tolist(),
            "sigma_pi": self.sigma_pi.tolist(),
            "nu_h": self.nu_h.tolist(),
            "kappa1": self.kappa1,
            "kappa2": self.kappa2,
            "c1": self.c1,
            "stationary": self.stationary.tolist(),
            "horizon": self.horizon,
            "singular": bool(self.singular),
            "sigma_pi_singular": bool(self.sigma_pi_singular),
            "stationary_ambiguous": bool(self.stationary_ambiguous),
        }


def feature_expectations(
    model: TabularMdp,
    policy: Policy,
    init: InitialDistribution,
    features: FeatureMap,
    horizon: int,
) -> np.ndarray:
    """Exact nu_h = E[phi(s_h, a_h)] for h = 0..H by forward propagation."""
    joint = state_action_occupancies(model, policy, init, horizon)
    return joint.reshape(horizon + 1, -1) @ features.matrix


def population_profile(
    model: TabularMdp,
    behavior: Policy,
    behavior_init: InitialDistribution,
    target: Policy,
    target_init: InitialDistribution,
    features: FeatureMap,
    horizon: int,
    stationary: np.ndarray | None = None,
) -> PopulationProfile:
    """Assemble the exact embedding, covariances, and mismatch constants.

    ``sigma`` averages the behavior occupancy over steps 0..H-1; ``sigma_pi``
    uses the invariant distribution of the target chain (pass ``stationary``
    to override the power-iteration selection).  ``m_pi`` is the least-squares
    embedding of the target transition operator; it reproduces the operator
    exactly iff the class is closed on this instance.
    """
    if horizon < 1:
        raise InvalidInput("horizon must be at least 1")
    averaged = policy_average_features(features, target)
    flat_kernel = model.transition.reshape(-1, model.n_states)
    images = flat_kernel @ averaged.matrix
    m_pi, *_ = np.linalg.lstsq(features.matrix, images, rcond=None)

    mu_bar = behavior_average_occupancy(model, behavior, behavior_init, horizon)
    sigma = symmetrize(features.matrix.T @ (mu_bar.probs[:, None] * features.matrix))

    if stationary is None:
        stationary, ambiguous = stationary_distribution(transition_matrix(model, target))
    else:
        stationary = np.asarray(stationary, dtype=float)
        ambiguous = False
    sigma_pi = symmetrize(averaged.matrix.T @ (stationary[:, None] * averaged.matrix))

    _, sigma_inv_sqrt, sigma_singular = psd_sqrt_pair(sigma)
    whitened_pi = symmetrize(sigma_inv_sqrt @ sigma_pi @ sigma_inv_sqrt)
    eigvals = np.linalg.eigvalsh(whitened_pi)
    floor = max(float(eigvals[-1]), 1.0) * 1e-12
    positive = eigvals[eigvals > floor]
    pi_singular = positive.size < eigvals.size
    kappa1 = float(positive[-1] / positive[0]) if positive.size else float("inf")

    behavior_states = state_occupancies(model, behavior, behavior_init, horizon)[1:]
    mixed = np.einsum(
        "hs,sd,se->de", behavior_states / horizon, averaged.matrix, averaged.matrix
    )
    kappa2 = max(
        float(np.linalg.norm(sigma_inv_sqrt @ symmetrize(mixed) @ sigma_inv_sqrt, ord=2)), 1.0
    )

    sigma_inv_phi = sigma_inv_sqrt @ sigma_inv_sqrt @ features.matrix.T
    c1 = float(np.max(np.einsum("nd,dn->n", features.matrix, sigma_inv_phi))) / features.dim

    # Exact expected feature vectors of the target rollout.  On closed
    # instances these coincide with the embedded recursion nu_{h+1} = M^T nu_h.
    nu = feature_expectations(model, target, target_init, features, horizon)

    return PopulationProfile(
        m_pi=m_pi,
        sigma=sigma,
        sigma_pi=sigma_pi,
        nu_h=nu,
        kappa1=kappa1,
        kappa2=kappa2,
        c1=c1,
        stationary=stationary,
        features=features,
        horizon=horizon,
        singular=sigma_singular,
        sigma_pi_singular=pi_singular,
        stationary_ambiguous=ambiguous,
    )


@dataclass(frozen=True)
class MismatchTerms:
    """Per-step and step-weighted distribution-mismatch norms."""

    per_h: np.ndarray
    weighted: float
    singular: bool

    def __post_init__(self):
        object.__setattr__(self, "per_h", _readonly(self.per_h))


def _nu_slice(profile: PopulationProfile, horizon: int) -> np.ndarray:
    if horizon >= profile.nu_h.shape[0]:
        raise InvalidInput(
            f"profile holds nu_h up to h = {profile.nu_h.shape[0] - 1}; "
            f"rebuild it with horizon >= {horizon}"
        )
    return profile.nu_h[: horizon + 1]


def mismatch_terms(profile: PopulationProfile, horizon: int) -> MismatchTerms:
    """sqrt(nu_h . Sigma^{-1} nu_h) per step, and the (H - h + 1)-weighted form."""
    nu = _nu_slice(profile, horizon)
    singular = profile.singular
    per_h = np.empty(horizon + 1)
    for h in range(horizon + 1):
        solution, flagged = spd_inverse_apply(profile.sigma, nu[h], allow_pseudo=True)
        singular = singular or flagged
        per_h[h] = np.sqrt(max(float(nu[h] @ solution), 0.0))
    weights = np.arange(horizon + 1, 0, -1, dtype=float)
    aggregate = weights @ nu
    solution, flagged = spd_inverse_apply(profile.sigma, aggregate, allow_pseudo=True)
    weighted = float(np.sqrt(max(aggregate @ solution, 0.0)))
    return MismatchTerms(per_h, weighted, singular or flagged)


def restricted_chi_square(feature_mean: np.ndarray, second_moment: np.ndarray) -> float:
    """Class-restricted chi-square mismatch: nu . Sigma^{-1} nu - 1.

    This is the closed form of ``sup_f E_{p1}[f]^2 / E_{p2}[f^2] - 1`` over a
    linear class with feature mean ``nu`` under p1 and second-moment matrix
    ``Sigma`` under p2.  Nonnegativity requires the class to contain the
    constant functions.
    """
    feature_mean = np.asarray(feature_mean, dtype=float)
    solution, _ = spd_inverse_apply(second_moment, feature_mean, allow_pseudo=False)
    return float(feature_mean @ solution - 1.0)


def pearson_chi_square(p1: OccupancyMeasure, p2: OccupancyMeasure) -> float:
    """Plain Pearson chi-square divergence between two occupancy measures."""
    a, b = p1.probs, p2.probs
    if a.shape != b.shape:
        raise InvalidInput("occupancy measures have different shapes")
    unsupported = np.where((b == 0.0) & (a > 0.0))[0]
    if unsupported.size:
        raise AbsoluteContinuity(int(unsupported[0]))
    mask = b > 0.0
    return float(np.sum((a[mask] - b[mask]) ** 2 / b[mask]))


@dataclass(frozen=True)
class ContractionReport:
    norms: np.ndarray
    singular: bool

    def __post_init__(self):
        object.__setattr__(self, "norms", _readonly(self.norms))


def contraction_check(
    chain_kernel: np.ndarray,
    psi: np.ndarray,
    m: np.ndarray,
    init: InitialDistribution,
    steps: int,
) -> ContractionReport:
    """Norms ``||Sigma_t^{1/2} M Sigma_{t+1}^{-1/2}||_2`` along the chain.

    Requires the mean-embedding identity ``kernel @ psi == psi @ M`` to hold
    within 1e-8 (otherwise the contraction property has no reason to hold and
    :class:`ContractionHypothesisFailed` is raised).  Singular step
    covariances fall back to pseudo-inverse square roots and are flagged.
    """
    chain_kernel = np.asarray(chain_kernel, dtype=float)
    psi = np.asarray(psi, dtype=float)
    m = np.asarray(m, dtype=float)
    residual = float(np.max(np.abs(chain_kernel @ psi - psi @ m))) if psi.size else 0.0
    if residual > EMBEDDING_IDENTITY_TOL:
        raise ContractionHypothesisFailed(residual)
    occupancy = init.probs
    norms = np.empty(steps)
    singular = False
    covariance = symmetrize(psi.T @ (occupancy[:, None] * psi))
    for t in range(steps):
        occupancy = occupancy @ chain_kernel
        covariance_next = symmetrize(psi.T @ (occupancy[:, None] * psi))
        sqrt_t, _, flag_t = psd_sqrt_pair(covariance)
        _, inv_sqrt_next, flag_next = psd_sqrt_pair(covariance_next)
        singular = singular or flag_t or flag_next
        norms[t] = np.linalg.norm(sqrt_t @ m @ inv_sqrt_next, ord=2)
        covariance = covariance_next
    return ContractionReport(norms, singular)


@dataclass(frozen=True)
class BoundBreakdown:
    """Closed-form error-bound value split into its 1/sqrt(N) and 1/N parts."""

    total: float
    first_order: float
    second_order: float


def theoretical_bound_rhs(
    profile: PopulationProfile,
    horizon: int,
    n_samples: int,
    delta: float,
    lam: float,
    improved: bool = False,
) -> BoundBreakdown:
    """Evaluate the instance-dependent error-bound right-hand side.

    The first-order part multiplies the mismatch terms by
    ``sqrt(ln(12 / delta) / (2 N))``; the improved variant uses the
    step-weighted aggregate instead of the per-step sum and is valid only
    when ``phi(s,a) . Sigma^{-1} phi(s',a') >= 0`` everywhere (checked).  The
    second-order part is ``C ln(12 d H / delta) d H^{3.5} / N`` with
    ``C = 15 kappa1 C1 (3 + kappa2) sqrt(nu0 . Sigma^{-1} nu0)``.
    """
    if profile.singular:
        raise InvalidInput("bound evaluation rejected: profile covariances are singular")
    if n_samples < 1 or horizon < 1:
        raise InvalidInput("n_samples and horizon must be at least 1")
    if not 0.0 < delta < 1.0:
        raise InvalidInput(f"delta must lie in (0, 1), got {delta}")
    if lam < 0.0:
        raise InvalidInput("lam must be nonnegative")
    terms = mismatch_terms(profile, horizon)
    if improved:
        gram = profile.features.matrix @ np.linalg.solve(
            profile.sigma, profile.features.matrix.T
        )
        if gram.min() < -1e-10:
            raise InvalidInput(
                "improved bound rejected: phi . Sigma^{-1} phi' is negative for some pair "
                f"(min {gram.min():.3e})"
            )
        first = terms.weighted * np.sqrt(np.log(12.0 / delta) / (2.0 * n_samples))
    else:
        weights = np.arange(horizon + 1, 0, -1, dtype=float)
        first = float(weights @ terms.per_h) * np.sqrt(np.log(12.0 / delta) / (2.0 * n_samples))
    d = profile.dim
    nu0 = profile.nu_h[0]
    constant = (
        15.0
        * profile.kappa1
        * profile.c1
        * (3.0 + profile.kappa2)
        * np.sqrt(max(float(nu0 @ profile.sigma_inv(nu0)), 0.0))
    )
    second = constant * np.log(12.0 * d * horizon / delta) * d * horizon**3.5 / n_samples
    return BoundBreakdown(float(first + second), float(first), float(second))
