"""Feature maps for the linear function class over state-action pairs.

A feature map stores a dense ``(n_states * n_actions, d)`` matrix with row
index ``s * n_actions + a``.  Policy averaging and closure checks are plain
matrix algebra on top of it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidInput
from .mdp import InitialDistribution, Policy, TabularMdp, _readonly, transition_matrix

CONSTANT_FIT_TOL = 1e-8


@dataclass(frozen=True)
class FeatureMap:
    """Dense feature matrix over state-action pairs."""

    matrix: np.ndarray
    n_states: int
    n_actions: int

    def __post_init__(self):
        matrix = _readonly(self.matrix)
        if matrix.ndim != 2:
            raise InvalidInput(f"feature matrix must be 2-D, got shape {matrix.shape}")
        if matrix.shape[0] != self.n_states * self.n_actions:
            raise InvalidInput(
                f"feature matrix has {matrix.shape[0]} rows, expected "
                f"{self.n_states} * {self.n_actions}"
            )
        zero_columns = np.where(~matrix.any(axis=0))[0]
        if zero_columns.size:
            raise InvalidInput(f"feature dimension {int(zero_columns[0])} is identically zero")
        object.__setattr__(self, "matrix", matrix)
        # Does the all-ones function lie in the column span?
        coef, *_ = np.linalg.lstsq(matrix, np.ones(matrix.shape[0]), rcond=None)
        residual = float(np.max(np.abs(matrix @ coef - 1.0))) if matrix.size else 1.0
        object.__setattr__(self, "contains_constant", residual <= CONSTANT_FIT_TOL)

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    @property
    def max_row_norm(self) -> float:
        return float(np.max(np.linalg.norm(self.matrix, axis=1)))

    def row(self, state: int, action: int) -> np.ndarray:
        return self.matrix[state * self.n_actions + action]

    def at(self, states: np.ndarray, actions: np.ndarray) -> np.ndarray:
        """Feature rows for vectors of states/actions, shape (n, d)."""
        return self.matrix[np.asarray(states) * self.n_actions + np.asarray(actions)]

    def to_dict(self) -> dict:
        return {"dim": self.dim, "matrix": self.matrix.tolist()}

    @classmethod
    def from_dict(cls, data: dict, n_states: int, n_actions: int) -> "FeatureMap":
        matrix = np.asarray(data["matrix"], dtype=float)
        if matrix.shape[1] != data["dim"]:
            raise InvalidInput("declared dim does not match matrix width")
        return cls(matrix, n_states, n_actions)


@dataclass(frozen=True)
class PolicyFeatures:
    """Per-state features averaged over a policy's action distribution."""

    matrix: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "matrix", _readonly(self.matrix))

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def at(self, states: np.ndarray) -> np.ndarray:
        return self.matrix[np.asarray(states)]


def build_tabular_features(n_states: int, n_actions: int) -> FeatureMap:
    """One-hot indicator features; the function class is everything."""
    if n_states < 1 or n_actions < 1:
        raise InvalidInput("n_states and n_actions must be positive")
    return FeatureMap(np.eye(n_states * n_actions), n_states, n_actions)


def policy_average_features(features: FeatureMap, policy: Policy) -> PolicyFeatures:
    """Rows ``sum_a pi(a|s) phi(s, a)``."""
    if (policy.n_states, policy.n_actions) != (features.n_states, features.n_actions):
        raise InvalidInput("policy and feature map disagree on (n_states, n_actions)")
    cube = features.matrix.reshape(features.n_states, features.n_actions, features.dim)
    return PolicyFeatures(np.einsum("sa,sad->sd", policy.action_probs, cube))


def initial_feature_vector(
    features: FeatureMap, policy: Policy, init: InitialDistribution
) -> np.ndarray:
    """Expected feature vector of the first state-action pair."""
    if init.n_states != features.n_states:
        raise InvalidInput("initial distribution and feature map disagree on n_states")
    averaged = policy_average_features(features, policy)
    return init.probs @ averaged.matrix


@dataclass(frozen=True)
class ClosureResidual:
    """Sup-norm residuals of projecting the transition images and the reward
    onto the feature span; both zero iff the class is closed on this model."""

    transition_residual: float
    reward_residual: float


def closure_residual(model: TabularMdp, target: Policy, features: FeatureMap) -> ClosureResidual:
    if (features.n_states, features.n_actions) != (model.n_states, model.n_actions):
        raise InvalidInput("feature map and model disagree on (n_states, n_actions)")
    averaged = policy_average_features(features, target)
    flat_kernel = model.transition.reshape(-1, model.n_states)
    # Image of each basis function under the policy transition operator.
    images = flat_kernel @ averaged.matrix
    coef, *_ = np.linalg.lstsq(features.matrix, images, rcond=None)
    transition_residual = float(np.max(np.abs(features.matrix @ coef - images)))
    reward = model.mean_reward.reshape(-1)
    coef_r, *_ = np.linalg.lstsq(features.matrix, reward, rcond=None)
    reward_residual = float(np.max(np.abs(features.matrix @ coef_r - reward)))
    return ClosureResidual(transition_residual, reward_residual)


def save_features(features: FeatureMap, path: str | Path) -> None:
    Path(path).write_text(json.dumps(features.to_dict(), indent=2, sort_keys=True))


def load_features(path: str | Path, n_states: int, n_actions: int) -> FeatureMap:
    return FeatureMap.from_dict(json.loads(Path(path).read_text()), n_states, n_actions)
