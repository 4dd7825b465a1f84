"""Built-in evaluation instances and seeded random-instance generators.

The named fixtures here are shared by the command-line tool and the test
suite: a closed ergodic four-state task for rate and coverage experiments, a
four-state task shaped for the perturbation experiment, the two-state
construction, and reproducible random instances.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInput
from .features import FeatureMap, build_tabular_features
from .hard_instances import two_state_instance
from .mdp import InitialDistribution, Policy, RewardNoise, TabularMdp


@dataclass(frozen=True)
class Instance:
    """Everything an evaluation experiment needs, with the true model known."""

    model: TabularMdp
    behavior: Policy
    behavior_init: InitialDistribution
    target: Policy
    target_init: InitialDistribution
    features: FeatureMap


def four_state_instance() -> Instance:
    """Fixed ergodic four-state task with indicator features (closed class).

    Behavior explores uniformly; the target strongly prefers action 0.  All
    transition entries are positive, so occupancies stay bounded away from
    zero and the unregularized Gram matrix is invertible for moderate N.
    """
    transition = np.array(
        [
            [[0.70, 0.15, 0.10, 0.05], [0.25, 0.25, 0.25, 0.25]],
            [[0.20, 0.50, 0.20, 0.10], [0.30, 0.30, 0.20, 0.20]],
            [[0.10, 0.20, 0.50, 0.20], [0.20, 0.20, 0.30, 0.30]],
            [[0.05, 0.10, 0.15, 0.70], [0.25, 0.25, 0.25, 0.25]],
        ]
    )
    reward = np.array([[0.9, 0.2], [0.6, 0.4], [0.3, 0.5], [0.1, 0.8]])
    return Instance(
        model=TabularMdp(transition, reward, RewardNoise.BERNOULLI),
        behavior=Policy(np.full((4, 2), 0.5)),
        behavior_init=InitialDistribution.uniform(4),
        target=Policy(np.tile([0.85, 0.15], (4, 1))),
        target_init=InitialDistribution.point_mass(0, 4),
        features=build_tabular_features(4, 2),
    )


def hard_four_state_instance() -> Instance:
    """Four-state task shaped for the perturbation experiment.

    Under the target policy (action 0) state 0 is a high-value near-absorbing
    state and state 3 a low-value one; the deterministic behavior policy
    (action 1) mixes everywhere, so every next state is reachable from every
    state and the two-dimensional feature covariance is well conditioned.
    Features depend on the state only, interpolating between the two poles.
    """
    transition = np.array(
        [
            [[0.94, 0.02, 0.02, 0.02], [0.40, 0.20, 0.20, 0.20]],
            [[0.10, 0.60, 0.20, 0.10], [0.25, 0.30, 0.25, 0.20]],
            [[0.10, 0.20, 0.60, 0.10], [0.20, 0.25, 0.30, 0.25]],
            [[0.02, 0.02, 0.02, 0.94], [0.20, 0.20, 0.20, 0.40]],
        ]
    )
    reward = np.tile(np.array([1.0, 0.55, 0.45, 0.0])[:, None], (1, 2))
    rows = np.array([[(3 - s) / 3.0, s / 3.0] for s in range(4) for _ in range(2)])
    return Instance(
        model=TabularMdp(transition, reward, RewardNoise.BERNOULLI),
        behavior=Policy(np.tile([0.0, 1.0], (4, 1))),
        behavior_init=InitialDistribution.uniform(4),
        target=Policy(np.tile([1.0, 0.0], (4, 1))),
        target_init=InitialDistribution.point_mass(0, 4),
        features=FeatureMap(rows, n_states=4, n_actions=2),
    )


def two_state_as_instance(z: float, horizon: int) -> Instance:
    hard = two_state_instance(z, horizon)
    return Instance(
        model=hard.model,
        behavior=hard.behavior,
        behavior_init=hard.behavior_init,
        target=hard.target,
        target_init=hard.target_init,
        features=hard.features,
    )


def random_mdp(rng: np.random.Generator, n_states: int, n_actions: int,
               noise: RewardNoise = RewardNoise.BERNOULLI) -> TabularMdp:
    """Dense random model: Dirichlet transition rows, uniform rewards."""
    transition = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
    reward = rng.uniform(0.0, 1.0, size=(n_states, n_actions))
    return TabularMdp(transition, reward, noise)


def random_policy(rng: np.random.Generator, n_states: int, n_actions: int) -> Policy:
    return Policy(rng.dirichlet(np.ones(n_actions), size=n_states))


def random_features(
    rng: np.random.Generator, n_states: int, n_actions: int, dim: int, unit_rows: bool = False
) -> FeatureMap:
    """Random dense feature map; ``unit_rows`` rescales rows into the unit ball."""
    matrix = rng.normal(size=(n_states * n_actions, dim))
    if unit_rows:
        matrix /= np.linalg.norm(matrix, axis=1, keepdims=True).max()
    return FeatureMap(matrix, n_states, n_actions)


def random_instance(
    seed: int,
    n_states: int,
    n_actions: int,
    feature_kind: str = "tabular",
    dim: int | None = None,
) -> Instance:
    """Seeded random instance; features are tabular indicators or random dense."""
    rng = np.random.default_rng(seed)
    if feature_kind == "tabular":
        features = build_tabular_features(n_states, n_actions)
    elif feature_kind == "random":
        features = random_features(rng, n_states, n_actions, dim or n_states, unit_rows=True)
    else:
        raise InvalidInput(f"unknown feature kind {feature_kind!r}")
    return Instance(
        model=random_mdp(rng, n_states, n_actions),
        behavior=random_policy(rng, n_states, n_actions),
        behavior_init=InitialDistribution.uniform(n_states),
        target=random_policy(rng, n_states, n_actions),
        target_init=InitialDistribution.uniform(n_states),
        features=features,
    )


def build_builtin(spec: dict) -> Instance:
    """Resolve an instance description like {"builtin": "two-state", "z": 0.75}."""
    name = spec.get("builtin")
    if name == "two-state":
        if "z" not in spec:
            raise InvalidInput("two-state instance needs a 'z' parameter")
        return two_state_as_instance(float(spec["z"]), int(spec.get("horizon", 4)))
    if name == "four-state":
        return four_state_instance()
    if name == "hard-four-state":
        return hard_four_state_instance()
    if name == "random":
        return random_instance(
            seed=int(spec.get("instance_seed", 0)),
            n_states=int(spec.get("n_states", 4)),
            n_actions=int(spec.get("n_actions", 2)),
            feature_kind=spec.get("features", "tabular"),
            dim=spec.get("dim"),
        )
    raise InvalidInput(f"unknown builtin instance {name!r}")
