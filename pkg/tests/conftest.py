import numpy as np
import pytest

from ope_lab import InitialDistribution, Policy, RewardNoise, TabularMdp


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


def make_chain_mdp() -> TabularMdp:
    """Small deterministic 2-state chain used by validation tests."""
    transition = np.zeros((2, 1, 2))
    transition[0, 0, 1] = 1.0
    transition[1, 0, 0] = 1.0
    reward = np.array([[1.0], [0.0]])
    return TabularMdp(transition, reward, RewardNoise.DETERMINISTIC)


def absorbing_reward_one(n_actions: int = 1) -> tuple[TabularMdp, Policy, InitialDistribution]:
    """Single absorbing state paying reward 1 forever."""
    transition = np.ones((1, n_actions, 1))
    reward = np.ones((1, n_actions))
    model = TabularMdp(transition, reward, RewardNoise.DETERMINISTIC)
    policy = Policy(np.full((1, n_actions), 1.0 / n_actions))
    return model, policy, InitialDistribution.point_mass(0, 1)
