import math

import numpy as np
import pytest

from relevance_grpo.exceptions import InputError
from relevance_grpo.grpo import (
    GrpoConfig,
    GroupLogprobs,
    PolicySnapshot,
    ToyGroup,
    TrajectoryLogprobs,
    finite_diff_check,
    grpo_gradient,
    grpo_objective,
    grpo_terms,
    kl_estimate,
    per_token_surrogate,
    standardize_advantages,
    touched_coordinates,
)
from relevance_grpo.policy.toy import ToyPolicyParams, token_logprobs
from relevance_grpo.rollout import VARIANTS
from relevance_grpo.trainer import gradient_check_problem

#
# Advantages
#


def test_advantages_are_standardized(rng):
    for _ in range(1000):
        size = int(rng.integers(2, 65))
        rewards = rng.choice([0.0, 0.1, 0.5, 1.0], size=size)
        stats = standardize_advantages(rewards)
        if np.ptp(rewards) == 0:
            assert np.all(stats.advantages == 0)
            continue
        assert abs(np.mean(stats.advantages)) <= 1e-9
        assert abs(np.std(stats.advantages) - 1) <= 1e-9

        scale, shift = rng.uniform(0.1, 10), rng.uniform(-5, 5)
        shifted = standardize_advantages(scale * rewards + shift)
        np.testing.assert_allclose(
            shifted.advantages, stats.advantages, rtol=0, atol=1e-9
        )


def test_constant_group_has_zero_advantages():
    stats = standardize_advantages([0.7] * 16)
    assert stats.std == 0.0
    assert stats.mean == pytest.approx(0.7)
    assert np.all(stats.advantages == 0)


def test_population_std():
    stats = standardize_advantages([1.0, 0.0])
    assert stats.std == 0.5
    np.testing.assert_array_equal(stats.advantages, [1.0, -1.0])


@pytest.mark.parametrize('rewards', ([], [1.0]))
def test_advantages_need_two_rewards(rewards):
    with pytest.raises(InputError):
        standardize_advantages(rewards)


#
# Surrogate and KL
#


@pytest.mark.parametrize('epsilon', (0.05, 0.2, 0.5, 0.9))
@pytest.mark.parametrize('advantage', (-2.0, -0.3, 0.0, 1.0, 3.5))
def test_surrogate_at_ratio_one_equals_advantage(epsilon, advantage):
    assert per_token_surrogate(-1.3, -1.3, advantage, epsilon) == advantage


def test_surrogate_clips_positive_advantage():
    assert per_token_surrogate(math.log(1.5), 0.0, 1.0, 0.2) == 1.2


def test_surrogate_clips_negative_advantage():
    assert per_token_surrogate(math.log(0.5), 0.0, -1.0, 0.2) == -0.8


def test_surrogate_unclipped_side():
    assert per_token_surrogate(math.log(0.5), 0.0, 1.0, 0.2) == pytest.approx(0.5)
    assert per_token_surrogate(math.log(1.5), 0.0, -1.0, 0.2) == pytest.approx(-1.5)


def test_kl_estimate_is_non_negative(rng):
    logp_new = np.log(rng.uniform(1e-6, 1, size=100_000))
    logp_ref = np.log(rng.uniform(1e-6, 1, size=100_000))
    assert np.all(kl_estimate(logp_new, logp_ref) >= 0)


def test_kl_estimate_zero_at_equality():
    assert kl_estimate(-0.7, -0.7) == 0.0
    logprobs = np.array([-1.0, -2.0])
    np.testing.assert_array_equal(kl_estimate(logprobs, logprobs), 0)


def test_kl_estimate_value():
    x = 0.25 / 0.5
    expected = x - math.log(x) - 1
    assert kl_estimate(math.log(0.5), math.log(0.25)) == pytest.approx(expected)


#
# Objective
#


def test_objective_matches_hand_computation():
    # rewards [1, 0] standardise to advantages [1, -1]
    first = TrajectoryLogprobs(
        new=np.log([0.5, 0.5]), old=np.log([0.5, 0.5]), ref=np.log([0.25, 0.5])
    )
    second = TrajectoryLogprobs(
        new=np.log([0.45, 0.2]), old=np.log([0.5, 0.5]), ref=np.log([0.45, 0.2])
    )
    config = GrpoConfig(epsilon=0.2, beta=0.1)

    kl = 0.5 - math.log(0.5) - 1
    first_value = ((1 - 0.1 * kl) + 1) / 2
    second_value = (-0.9 + -0.8) / 2
    expected = (first_value + second_value) / 2

    terms = grpo_terms([GroupLogprobs([1.0, 0.0], [first, second])], config)
    assert terms.objective == pytest.approx(expected, abs=1e-12)
    assert terms.kl_mean == pytest.approx(kl / 4, abs=1e-12)
    assert terms.clip_fraction == 0.25
    assert terms.degenerate_groups == 0


def test_objective_averages_groups_then_trajectories():
    short = TrajectoryLogprobs(new=[-1.0], old=[-1.0], ref=[-1.0])
    long = TrajectoryLogprobs(new=[-1.0] * 5, old=[-1.0] * 5, ref=[-1.0] * 5)
    config = GrpoConfig(beta=0.0)
    group = GroupLogprobs([1.0, 0.0], [short, long])
    assert grpo_objective([group], config) == pytest.approx(0.0)
    assert grpo_objective([group, group], config) == pytest.approx(0.0)


def test_degenerate_group_counted():
    traj = TrajectoryLogprobs(new=[-1.0], old=[-1.0], ref=[-1.0])
    terms = grpo_terms([GroupLogprobs([0.5, 0.5], [traj, traj])], GrpoConfig())
    assert terms.degenerate_groups == 1
    assert terms.objective == 0.0


def test_misaligned_token_vectors():
    with pytest.raises(InputError):
        TrajectoryLogprobs(new=[-1.0, -2.0], old=[-1.0], ref=[-1.0, -2.0])


def test_group_needs_reward_per_trajectory():
    traj = TrajectoryLogprobs(new=[-1.0], old=[-1.0], ref=[-1.0])
    with pytest.raises(InputError):
        GroupLogprobs([1.0], [traj, traj])


@pytest.mark.parametrize(
    'kwargs',
    (
        {'epsilon': 0.0},
        {'epsilon': 1.0},
        {'beta': -0.1},
        {'group_size': 1},
        {'batch_size': 0},
        {'learning_rate': -1.0},
        {'reference_snapshot_policy': 'latest'},
    ),
)
def test_grpo_config_validation(kwargs):
    with pytest.raises(InputError):
        GrpoConfig(**kwargs)


def test_snapshot_is_read_only(rng):
    params = ToyPolicyParams.random(rng)
    snapshot = PolicySnapshot.take(params, 'theta_old')
    with pytest.raises(ValueError):
        snapshot.params.logits['score'][0, 0] = 1.0
    params.logits['score'][0, 0] = 123.0
    assert snapshot.params.logits['score'][0, 0] != 123.0


def test_snapshot_tag():
    with pytest.raises(InputError):
        PolicySnapshot.take(ToyPolicyParams.zeros(), 'theta_new')


#
# Gradient
#


@pytest.mark.parametrize('beta', (0.0, 1.0))
def test_gradient_matches_finite_differences(toy_env, rng, beta):
    config = GrpoConfig(epsilon=0.2, beta=beta)
    worst = 0.0
    for _ in range(32):
        params, ref, groups = gradient_check_problem(toy_env, rng, config)
        worst = max(worst, finite_diff_check(params, groups, config, h=1e-5, ref=ref))
    assert worst <= 1e-4


@pytest.mark.parametrize('beta', (0.0, 1.0))
def test_gradient_check_problem_keeps_ratios_inside_clip_range(toy_env, rng, beta):
    config = GrpoConfig(epsilon=0.2, beta=beta)
    for _ in range(64):
        params, ref, groups = gradient_check_problem(toy_env, rng, config)
        for group in groups:
            assert np.ptp(group.rewards) > 0
            for tokens, logp_old in zip(group.tokens, group.logp_old):
                logp = token_logprobs(params, group.instance, tokens)
                ratios = np.exp(logp - logp_old)
                assert np.all(np.abs(ratios - 1.0) <= config.epsilon / 2)
                assert np.any(ratios != 1.0)
        assert finite_diff_check(params, groups, config, h=1e-5, ref=ref) <= 1e-4


def test_gradient_check_problem_needs_two_trajectories(toy_env, rng):
    with pytest.raises(InputError, match='group_size'):
        gradient_check_problem(toy_env, rng, group_size=1)


def test_gradient_check_problem_without_config_suits_any_beta(toy_env, rng):
    params, ref, groups = gradient_check_problem(toy_env, rng)
    for beta in (0.0, 1.0):
        config = GrpoConfig(beta=beta)
        assert finite_diff_check(params, groups, config, h=1e-5, ref=ref) <= 1e-4


@pytest.mark.parametrize('variant', ('no_intent', 'no_extract', 'single_round'))
def test_gradient_for_ablation_variants(toy_env, rng, variant):
    config = GrpoConfig(beta=0.5)
    params, ref, groups = gradient_check_problem(
        toy_env, rng, config, variant=VARIANTS[variant]
    )
    assert finite_diff_check(params, groups, config, ref=ref) <= 1e-4


def test_gradient_at_old_policy(toy_env, rng):
    config = GrpoConfig(beta=0.3)
    params, ref, groups = gradient_check_problem(toy_env, rng, config)
    on_policy = [
        ToyGroup.sampled_from(g.instance, g.rewards, g.tokens, params) for g in groups
    ]
    assert finite_diff_check(params, on_policy, config, ref=ref) <= 1e-6


def test_gradient_only_touches_group_buckets(toy_env, rng):
    params, ref, groups = gradient_check_problem(toy_env, rng)
    grad = grpo_gradient(groups, params, ref, GrpoConfig())
    touched = set(touched_coordinates(groups))
    for slot, table in grad.logits.items():
        for bucket, j in zip(*np.nonzero(table)):
            assert (slot, int(bucket), int(j)) in touched


def test_finite_diff_check_rejects_bad_step(toy_env, rng):
    params, ref, groups = gradient_check_problem(toy_env, rng)
    with pytest.raises(InputError):
        finite_diff_check(params, groups, GrpoConfig(), h=0.0)


def test_gradient_needs_groups():
    with pytest.raises(InputError):
        grpo_gradient(
            [], ToyPolicyParams.zeros(), ToyPolicyParams.zeros(), GrpoConfig()
        )
