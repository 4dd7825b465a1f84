"""Minimax hard-instance constructions: indistinguishable model pairs.

Two ingredients make off-policy evaluation provably hard: a two-state
instance whose data covariance degenerates as a mixing parameter approaches
one half, and a signed transition perturbation that moves probability mass
between high-value and low-value states while staying statistically
indistinguishable from the original model at sample size N.  This module
builds both, plus the likelihood-ratio measurement used to certify
indistinguishability empirically.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import InvalidInput, PerturbationTooLarge, SingularSigma
from .diagnostics import PopulationProfile, _nu_slice
from .features import FeatureMap
from .mdp import (
    InitialDistribution,
    Policy,
    RewardNoise,
    TabularMdp,
    TransitionDataset,
    _readonly,
    exact_q_functions,
    validate_mdp,
)


@dataclass(frozen=True)
class HardInstance:
    """A worst-case evaluation task: model, both policies, features, and z."""

    model: TabularMdp
    behavior: Policy
    behavior_init: InitialDistribution
    target: Policy
    target_init: InitialDistribution
    features: FeatureMap
    z: float
    horizon: int


def two_state_instance(z: float, horizon: int) -> HardInstance:
    """Two absorbing states, rewards 1 and 0, mixing parameter z.

    Both actions keep the state fixed; the target policy plays action 0 and
    starts at the high state, the behavior policy plays action 1 and starts
    uniformly.  The features are chosen so the behavior-averaged rows at the
    two states are [z, 1-z] and [1-z, z] while the target-averaged rows are
    the coordinate vectors, giving the closed-form data covariance

        Sigma = [[z^2 - z + 1/2, z (1 - z)], [z (1 - z), z^2 - z + 1/2]].

    At z = 1/2 the two states become indistinguishable from behavior data and
    Sigma is singular; that value is rejected.
    """
    if not 0.25 <= z <= 0.75:
        raise InvalidInput(f"z must lie in [1/4, 3/4], got {z}")
    if z == 0.5:
        raise SingularSigma("z = 1/2 makes the data covariance singular")
    transition = np.zeros((2, 2, 2))
    transition[0, :, 0] = 1.0
    transition[1, :, 1] = 1.0
    reward = np.array([[1.0, 1.0], [0.0, 0.0]])
    model = TabularMdp(transition, reward, RewardNoise.BERNOULLI)
    target = Policy(np.array([[1.0, 0.0], [1.0, 0.0]]))
    behavior = Policy(np.array([[0.0, 1.0], [0.0, 1.0]]))
    # Rows indexed (s, a): (0,0), (0,1), (1,0), (1,1).
    features = FeatureMap(
        np.array([[1.0, 0.0], [z, 1.0 - z], [0.0, 1.0], [1.0 - z, z]]),
        n_states=2,
        n_actions=2,
    )
    return HardInstance(
        model=model,
        behavior=behavior,
        behavior_init=InitialDistribution.uniform(2),
        target=target,
        target_init=InitialDistribution.point_mass(0, 2),
        features=features,
        z=float(z),
        horizon=horizon,
    )


def value_level_sets(
    model: TabularMdp, target: Policy, horizon: int
) -> tuple[tuple[int, ...], tuple[int, ...]]:
    """States whose values clear 3/4 (high) or stay under 1/4 (low) of the maximum.

    The thresholds apply at every step h: high states need
    ``V_h >= 3/4 (H - h + 1)`` and low states ``V_h <= 1/4 (H - h + 1)``.
    """
    tables = exact_q_functions(model, target, horizon)
    steps = np.arange(horizon + 1)
    scale = (horizon - steps + 1)[:, None]
    high = np.where(np.all(tables.v_values >= 0.75 * scale, axis=0))[0]
    low = np.where(np.all(tables.v_values <= 0.25 * scale, axis=0))[0]
    return tuple(int(s) for s in high), tuple(int(s) for s in low)


def _deterministic_actions(behavior: Policy) -> np.ndarray:
    if not behavior.is_deterministic(tol=1e-12):
        raise InvalidInput(
            "perturbation construction requires a deterministic behavior policy"
        )
    return behavior.action_probs.argmax(axis=1)


def min_next_state_mass(model: TabularMdp, behavior: Policy) -> np.ndarray:
    """m(s') = min over s of the behavior-policy transition probability to s'."""
    actions = _deterministic_actions(behavior)
    rows = model.transition[np.arange(model.n_states), actions]
    return rows.min(axis=0)


@dataclass(frozen=True)
class PerturbationSpec:
    """Direction and geometry of a transition perturbation.

    ``p_bar``/``p_under`` are the minimal behavior-policy masses of the high
    and low sets; ``c`` their minimum; ``epsilon`` the admissible per-row
    total-variation radius (None disables the radius check).  ``direction``
    may be None while the optimal direction is still to be computed.
    """

    high_set: tuple[int, ...]
    low_set: tuple[int, ...]
    p_bar: float
    p_under: float
    c: float
    epsilon: float | None = None
    direction: np.ndarray | None = None

    def __post_init__(self):
        if self.direction is not None:
            object.__setattr__(self, "direction", _readonly(self.direction))

    def with_direction(self, direction: np.ndarray) -> "PerturbationSpec":
        return replace(self, direction=direction)


def perturbation_spec(
    model: TabularMdp,
    behavior: Policy,
    target: Policy,
    horizon: int,
    direction: np.ndarray | None = None,
    epsilon: float | None = None,
) -> PerturbationSpec:
    """Build the perturbation geometry from the value level sets of the instance."""
    high, low = value_level_sets(model, target, horizon)
    if not high or not low:
        raise InvalidInput(
            "perturbation requires nonempty high-value and low-value state sets; "
            f"found high={high}, low={low}"
        )
    mass = min_next_state_mass(model, behavior)
    p_bar = float(mass[list(high)].sum())
    p_under = float(mass[list(low)].sum())
    if p_bar <= 0.0 or p_under <= 0.0:
        raise InvalidInput(
            "behavior chain must reach both state sets from everywhere "
            f"(p_bar={p_bar:.6g}, p_under={p_under:.6g})"
        )
    return PerturbationSpec(
        high_set=high,
        low_set=low,
        p_bar=p_bar,
        p_under=p_under,
        c=min(p_bar, p_under),
        epsilon=epsilon,
        direction=direction,
    )


def perturbation_delta(
    model: TabularMdp, behavior: Policy, features: FeatureMap, spec: PerturbationSpec
) -> np.ndarray:
    """Signed tensor Delta[s, a, s'] added to the transition kernel.

    ``Delta(s'|s,a) = -phi(s,a) . x * m(s') * (p_under on the high set minus
    p_bar on the low set)``; the two set masses balance so every row sums to
    zero exactly.  Positive ``phi . x`` therefore drains the high-value set.
    """
    if spec.direction is None:
        raise InvalidInput("perturbation spec has no direction vector")
    mass = min_next_state_mass(model, behavior)
    signed = np.zeros(model.n_states)
    signed[list(spec.high_set)] = spec.p_under
    signed[list(spec.low_set)] = -spec.p_bar
    delta_q = mass * signed  # per next-state signed density
    scale = features.matrix @ spec.direction  # phi(s, a) . x per row
    return -(scale[:, None] * delta_q[None, :]).reshape(
        model.n_states, model.n_actions, model.n_states
    )


def perturb_instance(
    model: TabularMdp, behavior: Policy, features: FeatureMap, spec: PerturbationSpec
) -> TabularMdp:
    """Apply the perturbation, enforcing model validity and the TV radius.

    The per-row total-variation displacement equals
    ``|phi(s,a) . x| * p_bar * p_under``; if ``spec.epsilon`` is set, every
    row must stay within it.
    """
    delta = perturbation_delta(model, behavior, features, spec)
    perturbed = model.transition + delta
    overshoot = max(float((-perturbed).max()), float((perturbed - 1.0).max()))
    if overshoot > 1e-12:
        raise PerturbationTooLarge(overshoot)
    if spec.epsilon is not None:
        tv_rows = 0.5 * np.abs(delta).sum(axis=2)
        if tv_rows.max() > spec.epsilon + 1e-12:
            raise InvalidInput(
                f"perturbation exceeds the TV radius: {tv_rows.max():.6g} > {spec.epsilon:.6g}"
            )
    clipped = np.clip(perturbed, 0.0, 1.0)
    candidate = TabularMdp(clipped, model.mean_reward, model.reward_noise)
    validate_mdp(candidate).raise_if_invalid("perturbed model")
    return candidate


def optimal_perturbation_direction(
    profile: PopulationProfile, spec: PerturbationSpec, n_samples: int, horizon: int
) -> np.ndarray:
    """Direction maximizing the value gap at indistinguishability budget 1/(4 sqrt(N)).

    ``x* = Sigma^{-1} v / (4 sqrt(N) sqrt(v . Sigma^{-1} v)
    sqrt(p_bar p_under (p_bar + p_under)))`` with
    ``v = sum_h (H - h) nu_h`` over h = 0..H-1; the covariance-norm constraint
    then holds with equality.
    """
    if n_samples < 1:
        raise InvalidInput("n_samples must be positive")
    nu = _nu_slice(profile, max(horizon - 1, 0))
    weights = np.arange(horizon, 0, -1, dtype=float)
    aggregate = weights @ nu[:horizon]
    sigma_inv_nu = profile.sigma_inv(aggregate)
    norm_sq = float(aggregate @ sigma_inv_nu)
    if norm_sq <= 0.0:
        raise InvalidInput("aggregate occupancy vector vanishes; no direction exists")
    budget = spec.p_bar * spec.p_under * (spec.p_bar + spec.p_under)
    return sigma_inv_nu / (4.0 * np.sqrt(n_samples) * np.sqrt(norm_sq) * np.sqrt(budget))


@dataclass(frozen=True)
class LikelihoodRatio:
    log_ratio: float
    ratio: float


def likelihood_ratio(
    data: TransitionDataset, p: TabularMdp, p_tilde: TabularMdp
) -> LikelihoodRatio:
    """Likelihood ratio of the perturbed model over the original on a dataset.

    Initial-distribution and policy factors are shared between the two models
    and cancel, so only transition probabilities enter.  Observations with
    zero probability under ``p`` are rejected; zero probability under
    ``p_tilde`` yields a ratio of exactly zero.
    """
    idx = (data.flat_states, data.flat_actions, data.flat_next_states)
    base = p.transition[idx]
    if np.any(base <= 0.0):
        position = int(np.where(base <= 0.0)[0][0])
        raise InvalidInput(
            f"observed transition #{position} has zero probability under the base model"
        )
    alt = p_tilde.transition[idx]
    if np.any(alt <= 0.0):
        return LikelihoodRatio(float("-inf"), 0.0)
    log_ratio = float(np.log(alt).sum() - np.log(base).sum())
    return LikelihoodRatio(log_ratio, float(np.exp(log_ratio)))
