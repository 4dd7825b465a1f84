"""Regression-based off-policy value estimators for linear function classes.

The workhorse is :func:`fit_embeddings`, which regresses the logged
transitions onto the feature space once:

    Sigma = lam * I + sum_n phi_n phi_n^T
    M     = Sigma^{-1} sum_n phi_n phibar(s'_n)^T
    R     = Sigma^{-1} sum_n r'_n phi_n

where ``phibar`` is the target-policy average of the features at the next
state.  Every estimator in this module (finite-horizon backward recursion,
discounted resolvent, marginalized importance weights, and the saddle-point
form) is a deterministic function of that fit; the iterative-regression
variant :func:`fqi_regression_value` re-solves the per-step least-squares
problems explicitly and exists to cross-check the recursion.

:class:`LinearOPE` wraps the same machinery in a scikit-learn style
``fit``/query estimator so it composes with the wider ecosystem.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator

from .errors import DivergentSeries, InvalidInput
from .features import FeatureMap, initial_feature_vector, policy_average_features
from .linalg import SpdSolver, spectral_radius
from .mdp import InitialDistribution, Policy, TransitionDataset, _readonly

SPECTRAL_MARGIN = 1e-9


@dataclass(frozen=True)
class FittedEmbedding:
    """Ridge-regression embeddings of the transition operator and reward.

    ``sigma`` is the regularized Gram matrix (lam * I + sum phi phi^T, not
    averaged), ``m`` the embedded transition operator, ``r`` the embedded
    reward, and ``nu0`` the initial feature vector of the evaluation task.
    """

    sigma: np.ndarray
    m: np.ndarray
    r: np.ndarray
    nu0: np.ndarray
    lam: float
    n_samples: int
    horizon_used: int
    features: FeatureMap
    target: Policy
    solver: SpdSolver = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "sigma", _readonly(self.sigma))
        object.__setattr__(self, "m", _readonly(self.m))
        object.__setattr__(self, "r", _readonly(self.r))
        object.__setattr__(self, "nu0", _readonly(self.nu0))

    @property
    def dim(self) -> int:
        return self.sigma.shape[0]

    def sigma_inv(self, rhs: np.ndarray) -> np.ndarray:
        """Apply Sigma^{-1} through the cached factorization."""
        return self.solver.solve(rhs)

    def nu_hats(self, horizon: int) -> np.ndarray:
        """Embedded occupancy vectors nu_h^T = nu0^T M^h for h = 0..horizon."""
        out = np.empty((horizon + 1, self.dim))
        current = self.nu0
        for h in range(horizon + 1):
            out[h] = current
            current = self.m.T @ current
        return out


def fit_embeddings(
    data: TransitionDataset,
    features: FeatureMap,
    target: Policy,
    lam: float,
    init: InitialDistribution | None = None,
) -> FittedEmbedding:
    """Fit the covariance, transition, and reward embeddings from logged data.

    ``lam = 0`` is accepted only when the raw Gram matrix is numerically
    nonsingular (condition estimate below 1e12); otherwise
    :class:`~ope_lab.errors.SingularCovariance` is raised.  ``init`` fixes the
    evaluation's initial feature vector; omit it to defer (``nu0`` is then the
    zero vector and must not be used for values).
    """
    if lam < 0.0:
        raise InvalidInput(f"lam must be nonnegative, got {lam}")
    if (features.n_states, features.n_actions) != (target.n_states, target.n_actions):
        raise InvalidInput("feature map and target policy disagree on (n_states, n_actions)")
    d = features.dim
    phi = features.at(data.flat_states, data.flat_actions)
    averaged = policy_average_features(features, target)
    phi_next = averaged.at(data.flat_next_states)

    sigma = lam * np.eye(d) + phi.T @ phi
    solver = SpdSolver(sigma, regularized=lam > 0.0)
    m = solver.solve(phi.T @ phi_next)
    r = solver.solve(phi.T @ data.flat_rewards)
    nu0 = initial_feature_vector(features, target, init) if init is not None else np.zeros(d)
    return FittedEmbedding(
        sigma=sigma,
        m=m,
        r=r,
        nu0=nu0,
        lam=float(lam),
        n_samples=data.n_samples,
        horizon_used=data.horizon,
        features=features,
        target=target,
        solver=solver,
    )


@dataclass(frozen=True)
class ValueEstimate:
    """Finite-horizon estimate with its weight and embedded-occupancy sequences.

    ``weights[h]`` solves the backward recursion (``weights[H + 1] = 0``),
    ``nu_hats[h]`` is ``nu0^T M^h``, and ``value = nu0 . weights[0]``.
    """

    value: float
    weights: np.ndarray
    nu_hats: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "weights", _readonly(self.weights))
        object.__setattr__(self, "nu_hats", _readonly(self.nu_hats))


def cme_value(fit: FittedEmbedding, horizon: int) -> ValueEstimate:
    """Value by backward recursion in embedding space.

    ``w_{H+1} = 0`` and ``w_h = R + M w_{h+1}``; the estimate is
    ``nu0 . w_0``, equivalently ``sum_h nu_h . R``.
    """
    if horizon < 0:
        raise InvalidInput("horizon must be nonnegative")
    weights = np.zeros((horizon + 2, fit.dim))
    for h in range(horizon, -1, -1):
        weights[h] = fit.r + fit.m @ weights[h + 1]
    return ValueEstimate(
        value=float(fit.nu0 @ weights[0]),
        weights=weights,
        nu_hats=fit.nu_hats(horizon),
    )


def fqi_regression_value(
    data: TransitionDataset,
    features: FeatureMap,
    target: Policy,
    init: InitialDistribution,
    lam: float,
    horizon: int,
) -> ValueEstimate:
    """Value by iterated ridge regressions on bootstrapped targets.

    Performs ``horizon + 1`` explicit regressions: at step h the targets are
    ``y_n = r'_n + phibar(s'_n) . w_{h+1}`` and ``w_h`` solves the ridge
    normal equations.  The Gram factorization is shared across iterations
    (they all use the same design matrix), which is numerically identical to
    per-iteration solves.
    """
    fit = fit_embeddings(data, features, target, lam, init)
    phi = features.at(data.flat_states, data.flat_actions)
    phi_next = policy_average_features(features, target).at(data.flat_next_states)
    rewards = data.flat_rewards

    weights = np.zeros((horizon + 2, fit.dim))
    for h in range(horizon, -1, -1):
        targets = rewards + phi_next @ weights[h + 1]
        weights[h] = fit.sigma_inv(phi.T @ targets)
    return ValueEstimate(
        value=float(fit.nu0 @ weights[0]),
        weights=weights,
        nu_hats=fit.nu_hats(horizon),
    )


@dataclass(frozen=True)
class DiscountedValue:
    value: float
    w: np.ndarray
    spectral_radius: float

    def __post_init__(self):
        object.__setattr__(self, "w", _readonly(self.w))


def discounted_value(fit: FittedEmbedding, gamma: float) -> DiscountedValue:
    """Discounted estimate ``nu0 . w`` with ``(I - gamma M) w = R``.

    The geometric series behind the resolvent converges only when
    ``rho(gamma M) < 1``; the spectral radius is estimated by the documented
    power iteration and a violation raises :class:`DivergentSeries`.
    """
    if not 0.0 <= gamma < 1.0:
        raise InvalidInput(f"gamma must lie in [0, 1), got {gamma}")
    rho = spectral_radius(fit.m)
    if gamma * rho >= 1.0 - SPECTRAL_MARGIN:
        raise DivergentSeries(rho, gamma)
    w = np.linalg.solve(np.eye(fit.dim) - gamma * fit.m, fit.r)
    return DiscountedValue(value=float(fit.nu0 @ w), w=w, spectral_radius=rho)


def mis_weights(fit: FittedEmbedding, horizon: int, data: TransitionDataset) -> np.ndarray:
    """Per-sample importance weights reproducing the regression estimate.

    ``weight_n = N * sum_h nu_h . Sigma^{-1} phi_n``; reweighting the observed
    rewards by these recovers :func:`cme_value` exactly.  The weights depend
    on states and actions only, never on rewards.
    """
    if data.n_samples != fit.n_samples:
        raise InvalidInput("weights must be computed on the dataset the fit was built from")
    summed_nu = fit.nu_hats(horizon).sum(axis=0)
    direction = fit.sigma_inv(summed_nu)
    phi = fit.features.at(data.flat_states, data.flat_actions)
    return fit.n_samples * (phi @ direction)


def dualdice_value(
    data: TransitionDataset,
    features: FeatureMap,
    target: Policy,
    init: InitialDistribution,
    gamma: float,
    lam: float = 0.0,
) -> float:
    """Discounted estimate via the closed-form linear saddle point.

    The stationary-correction function is ``g(s, a) = phi(s, a) . y`` with
    ``y = N Sigma^{-1} (I - gamma M)^{-T} nu0``, and the estimate averages
    ``g(s_n, a_n) r'_n``.  With ``lam = 0`` on full-rank data this coincides
    with :func:`discounted_value`.
    """
    fit = fit_embeddings(data, features, target, lam, init)
    rho = spectral_radius(fit.m)
    if gamma * rho >= 1.0 - SPECTRAL_MARGIN:
        raise DivergentSeries(rho, gamma)
    resolvent_nu = np.linalg.solve(np.eye(fit.dim) - gamma * fit.m.T, fit.nu0)
    y = fit.n_samples * fit.sigma_inv(resolvent_nu)
    phi = features.at(data.flat_states, data.flat_actions)
    corrections = phi @ y
    return float(np.mean(corrections * data.flat_rewards)) if data.n_samples else 0.0


class LinearOPE(BaseEstimator):
    """Scikit-learn style facade over the embedding estimator.

    Parameters are stored verbatim; :meth:`fit` consumes a
    :class:`TransitionDataset` and exposes the fitted embedding as
    ``embedding_``.  Query methods delegate to the module-level functions.

    >>> est = LinearOPE(features, target, init, lam=1.0).fit(dataset)
    >>> est.value(horizon=5)
    """

    def __init__(
        self,
        features: FeatureMap,
        target: Policy,
        init: InitialDistribution,
        lam: float = 1.0,
    ):
        self.features = features
        self.target = target
        self.init = init
        self.lam = lam

    def fit(self, dataset: TransitionDataset, y=None) -> "LinearOPE":
        self.embedding_ = fit_embeddings(dataset, self.features, self.target, self.lam, self.init)
        self.n_samples_ = dataset.n_samples
        return self

    def _check_fitted(self):
        if not hasattr(self, "embedding_"):
            raise InvalidInput("estimator is not fitted; call fit(dataset) first")

    def value(self, horizon: int) -> float:
        self._check_fitted()
        return cme_value(self.embedding_, horizon).value

    def discounted(self, gamma: float) -> float:
        self._check_fitted()
        return discounted_value(self.embedding_, gamma).value

    def confidence(self, horizon: int, delta: float, omega: float | None = None):
        """Data-dependent error bound; see :mod:`ope_lab.uncertainty`."""
        from .uncertainty import confidence_bound, default_omega

        self._check_fitted()
        if omega is None:
            omega = default_omega(self.features).value
        return confidence_bound(self.embedding_, horizon, delta, omega)
