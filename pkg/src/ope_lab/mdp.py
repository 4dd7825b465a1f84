"""Finite MDP models, episodic simulation, and exact dynamic-programming oracles.

All value objects are frozen dataclasses holding read-only numpy arrays, so
they can be shared freely across worker threads.  Simulation draws one RNG
substream per episode (spawned from a single seed), which makes datasets
byte-reproducible independently of iteration order or parallel scheduling.

Conventions: an episode has ``H`` transitions; the return of a policy counts
the ``H + 1`` rewards collected at steps ``h = 0..H`` from the initial state.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np
import scipy.linalg

from .errors import InvalidInput

_PROB_TOL = 1e-12


def _readonly(values, dtype=float) -> np.ndarray:
    arr = np.array(values, dtype=dtype)
    arr.setflags(write=False)
    return arr


class RewardNoise(str, Enum):
    """Reward sampling law around the mean reward, supported on [0, 1]."""

    DETERMINISTIC = "deterministic"
    BERNOULLI = "bernoulli"


@dataclass(frozen=True)
class Violation:
    """One invariant violation: which field, at which index, by how much."""

    field: str
    index: tuple
    magnitude: float
    message: str


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[Violation, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def raise_if_invalid(self, what: str) -> None:
        if not self.ok:
            details = "; ".join(v.message for v in self.violations[:5])
            raise InvalidInput(f"invalid {what}: {details}", self.violations)


@dataclass(frozen=True)
class TabularMdp:
    """Finite MDP: transition tensor P[s, a, s'] and mean rewards r[s, a] in [0, 1]."""

    transition: np.ndarray
    mean_reward: np.ndarray
    reward_noise: RewardNoise = RewardNoise.BERNOULLI

    def __post_init__(self):
        transition = _readonly(self.transition)
        reward = _readonly(self.mean_reward)
        if transition.ndim != 3 or transition.shape[0] != transition.shape[2]:
            raise InvalidInput(f"transition tensor must be (S, A, S), got {transition.shape}")
        if reward.shape != transition.shape[:2]:
            raise InvalidInput(
                f"mean_reward shape {reward.shape} does not match transitions {transition.shape[:2]}"
            )
        object.__setattr__(self, "transition", transition)
        object.__setattr__(self, "mean_reward", reward)
        object.__setattr__(self, "reward_noise", RewardNoise(self.reward_noise))

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[1]

    def to_dict(self) -> dict:
        return {
            "n_states": self.n_states,
            "n_actions": self.n_actions,
            "transition": self.transition.tolist(),
            "mean_reward": self.mean_reward.tolist(),
            "reward_noise": self.reward_noise.value,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TabularMdp":
        model = cls(
            transition=np.asarray(data["transition"], dtype=float),
            mean_reward=np.asarray(data["mean_reward"], dtype=float),
            reward_noise=RewardNoise(data.get("reward_noise", "bernoulli")),
        )
        if model.n_states != data["n_states"] or model.n_actions != data["n_actions"]:
            raise InvalidInput("declared n_states/n_actions do not match array shapes")
        return model


@dataclass(frozen=True)
class Policy:
    """Stochastic policy as a row-stochastic matrix pi[s, a]."""

    action_probs: np.ndarray

    def __post_init__(self):
        probs = _readonly(self.action_probs)
        if probs.ndim != 2:
            raise InvalidInput(f"action_probs must be 2-D, got shape {probs.shape}")
        object.__setattr__(self, "action_probs", probs)

    @property
    def n_states(self) -> int:
        return self.action_probs.shape[0]

    @property
    def n_actions(self) -> int:
        return self.action_probs.shape[1]

    def is_deterministic(self, tol: float = 0.0) -> bool:
        return bool(np.all(np.max(self.action_probs, axis=1) >= 1.0 - tol))

    def to_dict(self) -> dict:
        return {"action_probs": self.action_probs.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "Policy":
        return cls(np.asarray(data["action_probs"], dtype=float))


@dataclass(frozen=True)
class InitialDistribution:
    probs: np.ndarray

    def __post_init__(self):
        probs = _readonly(self.probs)
        if probs.ndim != 1:
            raise InvalidInput(f"initial distribution must be 1-D, got shape {probs.shape}")
        object.__setattr__(self, "probs", probs)

    @property
    def n_states(self) -> int:
        return self.probs.shape[0]

    @classmethod
    def uniform(cls, n_states: int) -> "InitialDistribution":
        return cls(np.full(n_states, 1.0 / n_states))

    @classmethod
    def point_mass(cls, state: int, n_states: int) -> "InitialDistribution":
        probs = np.zeros(n_states)
        probs[state] = 1.0
        return cls(probs)

    def to_dict(self) -> dict:
        return {"probs": self.probs.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "InitialDistribution":
        return cls(np.asarray(data["probs"], dtype=float))


def _row_violations(field_name: str, rows: np.ndarray) -> list[Violation]:
    """Check that every row of a 2-D array is a probability vector."""
    found = []
    negative = np.argwhere(rows < 0.0)
    for idx in negative:
        idx = tuple(int(i) for i in idx)
        found.append(
            Violation(field_name, idx, float(-rows[idx]), f"{field_name}{idx} is negative ({rows[idx]:.6g})")
        )
    sums = rows.sum(axis=1)
    bad = np.argwhere(np.abs(sums - 1.0) > _PROB_TOL)
    for idx in bad:
        i = int(idx[0])
        deficit = float(1.0 - sums[i])
        found.append(
            Violation(
                field_name,
                (i,),
                abs(deficit),
                f"{field_name} row {i} sums to {sums[i]:.12g} (deficit {deficit:.6g})",
            )
        )
    return found


def validate_mdp(model: TabularMdp) -> ValidationReport:
    """Check model invariants: stochastic transition rows, rewards in [0, 1].

    Violations are returned, not raised; each names the offending index and
    its magnitude.
    """
    violations: list[Violation] = []
    s, a, _ = model.transition.shape
    flat_rows = model.transition.reshape(s * a, s)
    for v in _row_violations("transition", flat_rows):
        if len(v.index) == 1:
            row = v.index[0]
            v = Violation(v.field, (row // a, row % a), v.magnitude,
                          f"transition row (s={row // a}, a={row % a}) sums off by {v.magnitude:.6g}")
        else:
            row, col = v.index
            v = Violation(v.field, (row // a, row % a, col), v.magnitude, v.message)
        violations.append(v)
    bad_rewards = np.argwhere((model.mean_reward < 0.0) | (model.mean_reward > 1.0))
    for idx in bad_rewards:
        idx = tuple(int(i) for i in idx)
        value = float(model.mean_reward[idx])
        magnitude = max(-value, value - 1.0)
        violations.append(
            Violation("mean_reward", idx, magnitude, f"mean_reward{idx} = {value:.6g} outside [0, 1]")
        )
    return ValidationReport(tuple(violations))


def validate_policy(policy: Policy) -> ValidationReport:
    return ValidationReport(tuple(_row_violations("action_probs", policy.action_probs)))


def validate_initial_distribution(init: InitialDistribution) -> ValidationReport:
    return ValidationReport(tuple(_row_violations("probs", init.probs[None, :])))


def _check_compatible(model: TabularMdp, policy: Policy, init: InitialDistribution | None = None):
    if policy.action_probs.shape != (model.n_states, model.n_actions):
        raise InvalidInput(
            f"policy shape {policy.action_probs.shape} does not match model "
            f"({model.n_states}, {model.n_actions})"
        )
    if init is not None and init.n_states != model.n_states:
        raise InvalidInput(f"initial distribution has {init.n_states} states, model has {model.n_states}")
    validate_mdp(model).raise_if_invalid("model")
    validate_policy(policy).raise_if_invalid("policy")
    if init is not None:
        validate_initial_distribution(init).raise_if_invalid("initial distribution")


@dataclass(frozen=True)
class TransitionDataset:
    """Logged transitions from K episodes of H steps each (N = K * H samples).

    Within an episode the chain is contiguous: ``next_states[k, h] ==
    states[k, h + 1]``.
    """

    states: np.ndarray
    actions: np.ndarray
    next_states: np.ndarray
    rewards: np.ndarray

    def __post_init__(self):
        states = _readonly(self.states, dtype=np.int64)
        actions = _readonly(self.actions, dtype=np.int64)
        next_states = _readonly(self.next_states, dtype=np.int64)
        rewards = _readonly(self.rewards, dtype=float)
        shapes = {states.shape, actions.shape, next_states.shape, rewards.shape}
        if len(shapes) != 1 or states.ndim != 2:
            raise InvalidInput(f"dataset arrays must share one (K, H) shape, got {shapes}")
        if states.shape[0] > 0 and states.shape[1] > 1:
            if not np.array_equal(next_states[:, :-1], states[:, 1:]):
                raise InvalidInput("episode chain broken: next_states[k, h] != states[k, h+1]")
        if rewards.size and (rewards.min() < 0.0 or rewards.max() > 1.0):
            raise InvalidInput("rewards must lie in [0, 1]")
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "actions", actions)
        object.__setattr__(self, "next_states", next_states)
        object.__setattr__(self, "rewards", rewards)

    @property
    def n_episodes(self) -> int:
        return self.states.shape[0]

    @property
    def horizon(self) -> int:
        return self.states.shape[1]

    @property
    def n_samples(self) -> int:
        return self.states.size

    @property
    def flat_states(self) -> np.ndarray:
        return self.states.ravel()

    @property
    def flat_actions(self) -> np.ndarray:
        return self.actions.ravel()

    @property
    def flat_next_states(self) -> np.ndarray:
        return self.next_states.ravel()

    @property
    def flat_rewards(self) -> np.ndarray:
        return self.rewards.ravel()

    def to_csv(self, path: str | Path) -> None:
        """Write rows ``episode,h,state,action,next_state,reward``."""
        with open(path, "w", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(["episode", "h", "state", "action", "next_state", "reward"])
            for k in range(self.n_episodes):
                for h in range(self.horizon):
                    writer.writerow(
                        [k, h, self.states[k, h], self.actions[k, h],
                         self.next_states[k, h], f"{self.rewards[k, h]:.17g}"]
                    )

    @classmethod
    def from_csv(cls, path: str | Path) -> "TransitionDataset":
        rows: dict[int, list[tuple[int, int, int, int, float]]] = {}
        with open(path, newline="") as handle:
            for record in csv.DictReader(handle):
                rows.setdefault(int(record["episode"]), []).append(
                    (int(record["h"]), int(record["state"]), int(record["action"]),
                     int(record["next_state"]), float(record["reward"]))
                )
        if not rows:
            return cls(*(np.zeros((0, 1)) for _ in range(4)))
        episodes = [sorted(rows[k]) for k in sorted(rows)]
        horizon = len(episodes[0])
        if any(len(ep) != horizon for ep in episodes):
            raise InvalidInput("episodes in the CSV have unequal lengths")
        arr = np.array(episodes, dtype=float)  # (K, H, 5), columns h,s,a,s',r
        return cls(arr[:, :, 1], arr[:, :, 2], arr[:, :, 3], arr[:, :, 4])


def concat_datasets(first: TransitionDataset, second: TransitionDataset) -> TransitionDataset:
    if first.horizon != second.horizon:
        raise InvalidInput("cannot concatenate datasets with different horizons")
    return TransitionDataset(
        np.concatenate([first.states, second.states]),
        np.concatenate([first.actions, second.actions]),
        np.concatenate([first.next_states, second.next_states]),
        np.concatenate([first.rewards, second.rewards]),
    )


def sample_episodes(
    model: TabularMdp,
    behavior: Policy,
    init: InitialDistribution,
    n_episodes: int,
    horizon: int,
    seed: int,
) -> TransitionDataset:
    """Simulate ``n_episodes`` independent episodes of ``horizon`` transitions.

    Each episode consumes its own RNG substream (``SeedSequence(seed).spawn``),
    so the dataset is identical regardless of iteration order.  The uniform
    draws per episode follow a fixed layout (one for the initial state, then
    action/next-state/reward triples per step); the reward draw is consumed
    even under deterministic noise so both noise laws share one stream layout.
    """
    _check_compatible(model, behavior, init)
    if n_episodes < 0:
        raise InvalidInput("n_episodes must be nonnegative")
    if horizon < 1:
        raise InvalidInput("horizon must be at least 1")
    n_states, n_actions = model.n_states, model.n_actions
    if n_episodes == 0:
        empty = np.zeros((0, horizon))
        return TransitionDataset(empty, empty, empty, empty)

    draws = np.empty((n_episodes, 1 + 3 * horizon))
    for k, child in enumerate(np.random.SeedSequence(seed).spawn(n_episodes)):
        draws[k] = np.random.Generator(np.random.PCG64(child)).random(1 + 3 * horizon)

    cum_init = np.cumsum(init.probs)
    cum_policy = np.cumsum(behavior.action_probs, axis=1)
    cum_next = np.cumsum(model.transition, axis=2)

    states = np.empty((n_episodes, horizon), dtype=np.int64)
    actions = np.empty_like(states)
    next_states = np.empty_like(states)
    rewards = np.empty((n_episodes, horizon))

    current = np.minimum(np.searchsorted(cum_init, draws[:, 0]), n_states - 1)
    for h in range(horizon):
        u_action = draws[:, 1 + 3 * h]
        u_next = draws[:, 2 + 3 * h]
        u_reward = draws[:, 3 + 3 * h]
        act = np.minimum((cum_policy[current] < u_action[:, None]).sum(axis=1), n_actions - 1)
        nxt = np.minimum((cum_next[current, act] < u_next[:, None]).sum(axis=1), n_states - 1)
        mean = model.mean_reward[current, act]
        if model.reward_noise is RewardNoise.BERNOULLI:
            rewards[:, h] = (u_reward < mean).astype(float)
        else:
            rewards[:, h] = mean
        states[:, h] = current
        actions[:, h] = act
        next_states[:, h] = nxt
        current = nxt
    return TransitionDataset(states, actions, next_states, rewards)


@dataclass(frozen=True)
class ExactValueTables:
    """Backward-recursion value tables: Q[h, s, a] and V[h, s] for h = 0..H."""

    q_values: np.ndarray
    v_values: np.ndarray
    policy_value: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "q_values", _readonly(self.q_values))
        object.__setattr__(self, "v_values", _readonly(self.v_values))


def transition_matrix(model: TabularMdp, policy: Policy) -> np.ndarray:
    """State-to-state kernel of the chain induced by ``policy``."""
    return np.einsum("sa,sat->st", policy.action_probs, model.transition)


def mean_reward_under(model: TabularMdp, policy: Policy) -> np.ndarray:
    """Per-state expected one-step reward under ``policy``."""
    return np.einsum("sa,sa->s", policy.action_probs, model.mean_reward)


def exact_q_functions(
    model: TabularMdp,
    target: Policy,
    horizon: int,
    init: InitialDistribution | None = None,
) -> ExactValueTables:
    """Exact Q- and V-tables by backward recursion.

    ``Q_H = r`` and ``Q_{h-1} = r + P V_h`` with ``V_h = sum_a pi(a|s) Q_h``.
    When ``init`` is given, ``policy_value`` is filled with ``init . V_0``.
    """
    _check_compatible(model, target, init)
    if horizon < 0:
        raise InvalidInput("horizon must be nonnegative")
    n_states, n_actions = model.n_states, model.n_actions
    q = np.zeros((horizon + 1, n_states, n_actions))
    v = np.zeros((horizon + 1, n_states))
    q[horizon] = model.mean_reward
    v[horizon] = np.einsum("sa,sa->s", target.action_probs, q[horizon])
    for h in range(horizon - 1, -1, -1):
        q[h] = model.mean_reward + np.einsum("sat,t->sa", model.transition, v[h + 1])
        v[h] = np.einsum("sa,sa->s", target.action_probs, q[h])
    value = float(init.probs @ v[0]) if init is not None else None
    return ExactValueTables(q, v, value)


def exact_policy_value(
    model: TabularMdp, target: Policy, init: InitialDistribution, horizon: int
) -> float:
    """Expected return of ``target`` from ``init`` over steps 0..H."""
    return exact_q_functions(model, target, horizon, init).policy_value


def discounted_exact_value(
    model: TabularMdp, target: Policy, init: InitialDistribution, gamma: float
) -> float:
    """Infinite-horizon discounted value, solving ``(I - gamma P) V = r`` exactly."""
    _check_compatible(model, target, init)
    if not 0.0 <= gamma < 1.0:
        raise InvalidInput(f"gamma must lie in [0, 1), got {gamma}")
    kernel = transition_matrix(model, target)
    reward = mean_reward_under(model, target)
    values = scipy.linalg.solve(np.eye(model.n_states) - gamma * kernel, reward)
    return float(init.probs @ values)


def state_occupancies(
    model: TabularMdp, policy: Policy, init: InitialDistribution, horizon: int
) -> np.ndarray:
    """State marginals xi_h for h = 0..H under ``policy``, shape (H + 1, S)."""
    _check_compatible(model, policy, init)
    kernel = transition_matrix(model, policy)
    occupancies = np.empty((horizon + 1, model.n_states))
    occupancies[0] = init.probs
    for h in range(horizon):
        occupancies[h + 1] = occupancies[h] @ kernel
    return occupancies


def state_action_occupancies(
    model: TabularMdp, policy: Policy, init: InitialDistribution, horizon: int
) -> np.ndarray:
    """Joint (s, a) marginals for h = 0..H, shape (H + 1, S, A)."""
    return state_occupancies(model, policy, init, horizon)[:, :, None] * policy.action_probs[None]


def empirical_mdp(dataset: TransitionDataset, n_states: int, n_actions: int) -> TabularMdp:
    """Count-based plug-in model: empirical transition kernel and mean rewards.

    Every (s, a) pair must appear in the data; missing pairs are rejected
    because their rows would be undefined.
    """
    counts = np.zeros((n_states, n_actions))
    np.add.at(counts, (dataset.flat_states, dataset.flat_actions), 1.0)
    missing = np.argwhere(counts == 0)
    if missing.size:
        cell = tuple(int(i) for i in missing[0])
        raise InvalidInput(f"state-action pair {cell} never observed; empirical model undefined")
    transition = np.zeros((n_states, n_actions, n_states))
    np.add.at(
        transition,
        (dataset.flat_states, dataset.flat_actions, dataset.flat_next_states),
        1.0,
    )
    transition /= counts[:, :, None]
    reward_sum = np.zeros((n_states, n_actions))
    np.add.at(reward_sum, (dataset.flat_states, dataset.flat_actions), dataset.flat_rewards)
    return TabularMdp(transition, reward_sum / counts, RewardNoise.DETERMINISTIC)


def save_json(obj, path: str | Path) -> None:
    Path(path).write_text(json.dumps(obj.to_dict(), indent=2, sort_keys=True))


def load_mdp(path: str | Path) -> TabularMdp:
    return TabularMdp.from_dict(json.loads(Path(path).read_text()))


def load_policy(path: str | Path) -> Policy:
    return Policy.from_dict(json.loads(Path(path).read_text()))


def load_initial_distribution(path: str | Path) -> InitialDistribution:
    return InitialDistribution.from_dict(json.loads(Path(path).read_text()))
