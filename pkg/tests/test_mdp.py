"""Model validation, simulation, and exact dynamic-programming oracles."""

import numpy as np
import pytest

from ope_lab import (
    InitialDistribution,
    InvalidInput,
    Policy,
    RewardNoise,
    TabularMdp,
    TransitionDataset,
    behavior_average_occupancy,
    concat_datasets,
    discounted_exact_value,
    empirical_mdp,
    exact_policy_value,
    exact_q_functions,
    random_instance,
    random_mdp,
    random_policy,
    sample_episodes,
    state_action_occupancies,
    two_state_instance,
    validate_mdp,
)
from conftest import absorbing_reward_one, make_chain_mdp


class TestValidateMdp:
    def test_valid_chain_is_ok(self):
        assert validate_mdp(make_chain_mdp()).ok

    def test_deficient_row_sum_is_reported_with_index_and_magnitude(self):
        transition = np.zeros((2, 1, 2))
        transition[0, 0, 1] = 0.9
        transition[1, 0, 0] = 1.0
        report = validate_mdp(TabularMdp(transition, np.zeros((2, 1))))
        assert not report.ok
        (violation,) = report.violations
        assert violation.index == (0, 0)
        assert violation.magnitude == pytest.approx(0.1, abs=1e-12)

    def test_out_of_range_reward_names_the_cell(self):
        model = make_chain_mdp()
        reward = np.array([[1.5], [0.0]])
        report = validate_mdp(TabularMdp(model.transition, reward))
        bad = [v for v in report.violations if v.field == "mean_reward"]
        assert bad and bad[0].index == (0, 0)


class TestSampleEpisodes:
    def test_zero_episodes_gives_empty_dataset(self):
        model, policy, init = absorbing_reward_one()
        dataset = sample_episodes(model, policy, init, 0, 3, seed=0)
        assert dataset.n_samples == 0 and dataset.horizon == 3

    def test_degenerate_chain_yields_constant_tuples(self):
        model, policy, init = absorbing_reward_one()
        dataset = sample_episodes(model, policy, init, 5, 4, seed=1)
        assert np.all(dataset.states == 0)
        assert np.all(dataset.actions == 0)
        assert np.all(dataset.next_states == 0)
        assert np.all(dataset.rewards == 1.0)

    def test_empirical_frequencies_match_propagated_occupancy(self):
        inst = random_instance(7, n_states=3, n_actions=2)
        dataset = sample_episodes(inst.model, inst.behavior, inst.behavior_init, 10_000, 5, seed=2)
        counts = np.zeros((3, 2))
        np.add.at(counts, (dataset.flat_states, dataset.flat_actions), 1.0)
        empirical = counts.reshape(-1) / dataset.n_samples
        expected = behavior_average_occupancy(inst.model, inst.behavior, inst.behavior_init, 5)
        tv = 0.5 * np.abs(empirical - expected.probs).sum()
        assert tv < 0.01

    def test_identical_seeds_reproduce_identical_datasets(self, tmp_path):
        inst = random_instance(3, n_states=4, n_actions=2)
        first = sample_episodes(inst.model, inst.behavior, inst.behavior_init, 50, 6, seed=9)
        second = sample_episodes(inst.model, inst.behavior, inst.behavior_init, 50, 6, seed=9)
        assert np.array_equal(first.states, second.states)
        assert np.array_equal(first.rewards, second.rewards)
        first.to_csv(tmp_path / "a.csv")
        second.to_csv(tmp_path / "b.csv")
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()

    def test_episodes_are_internally_consistent_chains(self):
        inst = random_instance(11, n_states=5, n_actions=3)
        dataset = sample_episodes(inst.model, inst.behavior, inst.behavior_init, 40, 7, seed=4)
        assert np.array_equal(dataset.next_states[:, :-1], dataset.states[:, 1:])

    def test_bernoulli_rewards_are_binary_with_matching_mean(self):
        rng = np.random.default_rng(0)
        model = random_mdp(rng, 2, 2, RewardNoise.BERNOULLI)
        policy = random_policy(rng, 2, 2)
        dataset = sample_episodes(model, policy, InitialDistribution.uniform(2), 4000, 3, seed=5)
        assert set(np.unique(dataset.rewards)) <= {0.0, 1.0}
        # Mean of rewards at a fixed (s, a) approaches the model mean.
        mask = (dataset.flat_states == 0) & (dataset.flat_actions == 0)
        assert dataset.flat_rewards[mask].mean() == pytest.approx(
            model.mean_reward[0, 0], abs=0.05
        )

    def test_invalid_policy_is_rejected(self):
        model, _, init = absorbing_reward_one()
        with pytest.raises(InvalidInput):
            sample_episodes(model, Policy(np.array([[0.5]])), init, 1, 1, seed=0)


class TestExactValues:
    def test_zero_rewards_give_zero_values(self):
        inst = random_instance(5, n_states=3, n_actions=2)
        model = TabularMdp(inst.model.transition, np.zeros((3, 2)))
        tables = exact_q_functions(model, inst.target, 4, inst.target_init)
        assert np.all(tables.q_values == 0.0) and tables.policy_value == 0.0

    def test_absorbing_unit_reward_accumulates_horizon_plus_one(self):
        model, policy, init = absorbing_reward_one()
        assert exact_policy_value(model, policy, init, 3) == pytest.approx(4.0)
        assert exact_policy_value(model, policy, init, 2) == pytest.approx(3.0)

    def test_value_matches_monte_carlo_rollouts(self):
        inst = random_instance(13, n_states=3, n_actions=2)
        horizon = 4
        exact = exact_policy_value(inst.model, inst.target, inst.target_init, horizon)
        # Independent vectorized Monte-Carlo rollout oracle under the target policy.
        rng = np.random.default_rng(99)
        n = 1_000_000
        cum_init = np.cumsum(inst.target_init.probs)
        cum_pi = np.cumsum(inst.target.action_probs, axis=1)
        cum_p = np.cumsum(inst.model.transition, axis=2)
        state = np.searchsorted(cum_init, rng.random(n))
        returns = np.zeros(n)
        for _ in range(horizon + 1):
            action = (cum_pi[state] < rng.random(n)[:, None]).sum(axis=1)
            returns += inst.model.mean_reward[state, action]
            state = (cum_p[state, action] < rng.random(n)[:, None]).sum(axis=1)
        mc = returns.mean()
        stderr = returns.std() / np.sqrt(n)
        assert abs(mc - exact) < 3 * stderr + 1e-12

    def test_bellman_residual_vanishes_on_random_models(self, rng):
        for seed in range(5):
            inst = random_instance(seed, n_states=4, n_actions=3)
            horizon = 5
            tables = exact_q_functions(inst.model, inst.target, horizon)
            for h in range(horizon):
                expected = inst.model.mean_reward + np.einsum(
                    "sat,t->sa", inst.model.transition, tables.v_values[h + 1]
                )
                assert np.abs(tables.q_values[h] - expected).max() < 1e-10
            # V is the policy average of Q, and Q stays within [0, H - h + 1].
            for h in range(horizon + 1):
                v = np.einsum("sa,sa->s", inst.target.action_probs, tables.q_values[h])
                assert np.abs(v - tables.v_values[h]).max() < 1e-12
                assert tables.q_values[h].min() >= 0.0
                assert tables.q_values[h].max() <= horizon - h + 1 + 1e-12

    def test_two_state_instance_values(self):
        horizon = 6
        hard = two_state_instance(0.75, horizon)
        value = exact_policy_value(hard.model, hard.target, hard.target_init, horizon)
        assert value == pytest.approx(horizon + 1.0, abs=1e-12)
        uniform = InitialDistribution.uniform(2)
        half = exact_policy_value(hard.model, hard.target, uniform, horizon)
        assert half == pytest.approx((horizon + 1.0) / 2.0, abs=1e-12)


class TestDiscountedExactValue:
    def test_gamma_zero_is_single_step_reward(self):
        inst = random_instance(17, n_states=3, n_actions=2)
        expected = float(
            inst.target_init.probs
            @ np.einsum("sa,sa->s", inst.target.action_probs, inst.model.mean_reward)
        )
        got = discounted_exact_value(inst.model, inst.target, inst.target_init, 0.0)
        assert got == pytest.approx(expected, abs=1e-12)

    def test_absorbing_unit_reward_is_geometric_sum(self):
        model, policy, init = absorbing_reward_one()
        assert discounted_exact_value(model, policy, init, 0.9) == pytest.approx(10.0, abs=1e-9)

    def test_matches_truncated_series(self):
        inst = random_instance(23, n_states=4, n_actions=2)
        gamma = 0.85
        exact = discounted_exact_value(inst.model, inst.target, inst.target_init, gamma)
        occupancies = state_action_occupancies(inst.model, inst.target, inst.target_init, 1000)
        per_step = np.einsum("hsa,sa->h", occupancies, inst.model.mean_reward)
        truncated = float(per_step @ gamma ** np.arange(1001))
        assert abs(exact - truncated) < 1e-8


class TestDatasetPlumbing:
    def test_csv_round_trip(self, tmp_path):
        inst = random_instance(2, n_states=3, n_actions=2)
        dataset = sample_episodes(inst.model, inst.behavior, inst.behavior_init, 12, 5, seed=3)
        path = tmp_path / "data.csv"
        dataset.to_csv(path)
        loaded = TransitionDataset.from_csv(path)
        assert np.array_equal(loaded.states, dataset.states)
        assert np.array_equal(loaded.rewards, dataset.rewards)

    def test_broken_chain_is_rejected(self):
        states = np.array([[0, 1]])
        next_states = np.array([[0, 0]])  # states[0, 1] == 1 != next_states[0, 0]
        with pytest.raises(InvalidInput):
            TransitionDataset(states, np.zeros((1, 2)), next_states, np.zeros((1, 2)))

    def test_empirical_mdp_requires_full_support(self):
        model, policy, init = absorbing_reward_one(n_actions=2)
        skewed = Policy(np.array([[1.0, 0.0]]))
        dataset = sample_episodes(model, skewed, init, 10, 2, seed=0)
        with pytest.raises(InvalidInput):
            empirical_mdp(dataset, 1, 2)

    def test_concat_requires_matching_horizons(self):
        inst = random_instance(2, n_states=3, n_actions=2)
        a = sample_episodes(inst.model, inst.behavior, inst.behavior_init, 3, 4, seed=0)
        b = sample_episodes(inst.model, inst.behavior, inst.behavior_init, 3, 5, seed=0)
        with pytest.raises(InvalidInput):
            concat_datasets(a, b)
        merged = concat_datasets(a, a)
        assert merged.n_episodes == 6
