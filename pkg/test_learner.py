#!/usr/bin/env python3
"""
Tests for the MLP, the squashed Gaussian actor, the soft actor-critic updates and checkpoints
"""

import math

import numpy as np
import pytest

from src.core import RngStream, Transition
from src.envs import make_env
from src.learner import (
    LOG_2PI, LearnerConfig, MlpParams, SoftActorCritic, SquashedGaussianPolicy, UniformRandomPolicy,
    actor_loss_gradients, actor_sample, critic_loss_gradients, critic_target, load_policy, mlp_apply,
    mlp_backprop, mlp_init, save_policy, soft_update, squashed_gaussian_log_prob, temperature_loss_gradient,
    update_step
)
from src.tsda import ReplayBuffer, TransitionBatch
from src.workbench_models import (
    BufferNotReadyError, CheckpointFormatError, ContractViolationError, TrainingDivergedError
)

SMALL = LearnerConfig(batch_size=16, hidden_sizes=(8, 8))


def constant_params(sizes, bias):
    """Network whose output ignores the input and equals `bias`"""
    weights = [np.zeros((o, i)) for i, o in zip(sizes[:-1], sizes[1:])]
    biases = [np.zeros(o) for o in sizes[1:]]
    biases[-1] = np.asarray(bias, dtype=np.float64)
    return MlpParams(tuple(sizes), weights, biases)


def filled_buffer(count=100, reward=None, seed=0):
    env = make_env("pendulum")
    rng = RngStream(seed)
    buffer = ReplayBuffer(2 * count, 2, 1, tsda_enabled=reward is None)
    state = env.reset(rng)
    for _ in range(count):
        action = env.clamp_action(rng.uniform(-1.0, 1.0, size=1))
        next_state, r, terminal = env.step(state, action)
        buffer.push(Transition(state, action, r if reward is None else reward, next_state, terminal), env.descriptor)
        state = next_state
    return env, buffer


def test_learner_config_defaults():
    assert LearnerConfig().to_dict() == {
        "batch_size": 128,
        "discount": 0.99,
        "critic_lr": 1e-3,
        "actor_lr": 1e-3,
        "critic_target_updates_per_env_step": 2,
        "actor_updates_per_env_step": 2,
        "q_soft_update_rate": 0.01,
        "actor_log_std_bounds": [-10.0, 2.0],
        "temperature_lr": 1e-4,
        "temperature_adam_beta1": 0.5,
        "initial_temperature": 0.1,
        "optimizer": "adam",
        "hidden_sizes": [256, 256],
    }


@pytest.mark.parametrize("overrides", [{"discount": 1.0}, {"batch_size": 0}, {"actor_log_std_bounds": (2.0, -10.0)},
                                       {"optimizer": "sgd"}, {"hidden_sizes": ()}])
def test_learner_config_validation(overrides):
    with pytest.raises(ContractViolationError):
        LearnerConfig(**overrides)


# --- MLP ----------------------------------------------------------------------

def test_zero_network_outputs_zero():
    params = constant_params((3, 4, 2), [0.0, 0.0])
    assert mlp_apply(params, np.array([1.0, -2.0, 3.0])).tolist() == [0.0, 0.0]


def test_identity_network_passes_positive_inputs():
    params = MlpParams((2, 2, 2), [np.eye(2), np.eye(2)], [np.zeros(2), np.zeros(2)])
    assert mlp_apply(params, np.array([0.5, 2.0])).tolist() == [0.5, 2.0]


def test_random_networks_are_finite():
    rng = RngStream(0)
    for _ in range(1000):
        params = mlp_init((3, 6, 2), rng)
        assert np.all(np.isfinite(mlp_apply(params, rng.normal(size=3))))


def test_mlp_rejects_wrong_input_width():
    params = mlp_init((2, 4, 1), RngStream(0))
    with pytest.raises(ContractViolationError):
        mlp_apply(params, np.zeros(3))


def test_mlp_params_shape_validation():
    with pytest.raises(ContractViolationError):
        MlpParams((2, 1), [np.zeros((2, 1))], [np.zeros(1)])


def test_single_linear_layer_gradient():
    params = MlpParams((2, 1), [np.array([[0.3, -0.7]])], [np.array([0.1])])
    x = np.array([2.0, 5.0])
    grads = mlp_backprop(params, x, np.array([1.5]))
    assert grads.weights[0].tolist() == [[3.0, 7.5]]
    assert grads.biases[0].tolist() == [1.5]
    assert grads.input.tolist() == pytest.approx([0.45, -1.05])


def test_zero_output_gradient_gives_zero_gradients():
    params = mlp_init((3, 5, 2), RngStream(1))
    grads = mlp_backprop(params, np.ones((4, 3)), np.zeros((4, 2)))
    assert all(not np.any(g) for g in grads.arrays())
    assert not np.any(grads.input)


def _finite_difference_check(sizes, seed):
    rng = RngStream(seed)
    params = mlp_init(sizes, rng)
    x = rng.normal(size=(3, sizes[0]))
    g = rng.normal(size=(3, sizes[-1]))

    def loss(p, inputs=x):
        return float(np.sum(g * mlp_apply(p, inputs)))

    grads = mlp_backprop(params, x, g)
    h = 1e-6
    for array, grad in zip(params.arrays(), grads.arrays()):
        for index in np.ndindex(array.shape):
            original = array[index]
            array[index] = original + h
            up = loss(params)
            array[index] = original - h
            down = loss(params)
            array[index] = original
            numeric = (up - down) / (2 * h)
            assert abs(numeric - grad[index]) <= 1e-4 * max(abs(numeric), abs(grad[index])) + 1e-8

    for index in np.ndindex(x.shape):
        shifted = x.copy()
        shifted[index] += h
        up = loss(params, shifted)
        shifted[index] -= 2 * h
        down = loss(params, shifted)
        numeric = (up - down) / (2 * h)
        assert abs(numeric - grads.input[index]) <= 1e-4 * max(abs(numeric), abs(grads.input[index])) + 1e-8


@pytest.mark.parametrize("seed", range(5))
def test_actor_shaped_gradients_match_finite_differences(seed):
    _finite_difference_check((3, 8, 8, 2), seed)


@pytest.mark.parametrize("seed", range(5))
def test_critic_shaped_gradients_match_finite_differences(seed):
    _finite_difference_check((6, 8, 8, 1), seed)


def test_soft_update_rates():
    source = constant_params((1, 1), [1.0])
    target = constant_params((1, 1), [0.0])
    soft_update(target, source, 0.01)
    assert target.biases[0][0] == pytest.approx(0.01)
    soft_update(target, source, 0.0)
    assert target.biases[0][0] == pytest.approx(0.01)
    soft_update(target, source, 1.0)
    assert target.biases[0][0] == 1.0


def test_soft_update_rejects_mismatched_networks():
    with pytest.raises(ContractViolationError):
        soft_update(mlp_init((2, 3, 1), RngStream(0)), mlp_init((2, 4, 1), RngStream(0)), 0.5)


# --- policy ---------------------------------------------------------------------

@pytest.mark.parametrize("seed", range(5))
def test_log_prob_gradients_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    mean = rng.normal(size=(1, 3))
    log_std = rng.uniform(-1.0, 0.5, size=(1, 3))
    noise = rng.normal(size=(1, 3))
    _, _, d_mean, d_log_std = squashed_gaussian_log_prob(mean, log_std, noise)
    h = 1e-6
    for j in range(3):
        step = np.zeros((1, 3))
        step[0, j] = h
        numeric_mean = (squashed_gaussian_log_prob(mean + step, log_std, noise)[1]
                        - squashed_gaussian_log_prob(mean - step, log_std, noise)[1]) / (2 * h)
        numeric_std = (squashed_gaussian_log_prob(mean, log_std + step, noise)[1]
                       - squashed_gaussian_log_prob(mean, log_std - step, noise)[1]) / (2 * h)
        assert numeric_mean[0] == pytest.approx(d_mean[0, j], rel=1e-5, abs=1e-7)
        assert numeric_std[0] == pytest.approx(d_log_std[0, j], rel=1e-5, abs=1e-7)


def test_log_prob_at_zero_pre_squash():
    _, log_prob, _, _ = squashed_gaussian_log_prob(np.zeros((1, 1)), np.zeros((1, 1)), np.zeros((1, 1)))
    assert log_prob[0] == pytest.approx(-0.5 * LOG_2PI, abs=1e-5)


def test_narrow_policy_acts_near_mean():
    policy = SquashedGaussianPolicy(constant_params((3, 4, 2), [0.0, -10.0]))
    rng = RngStream(2)
    for _ in range(1000):
        action, log_prob = actor_sample(policy, np.zeros(3), rng)
        assert abs(action[0]) < 1e-3
        assert math.isfinite(log_prob)


def test_log_std_is_clamped():
    policy = SquashedGaussianPolicy(constant_params((3, 4, 2), [0.0, 5.0]))
    _, log_std, in_bounds, _ = policy.distribution(np.zeros((1, 3)))
    assert log_std[0, 0] == 2.0
    assert not in_bounds[0, 0]


def test_saturated_actions_stay_inside_bounds():
    policy = SquashedGaussianPolicy(constant_params((3, 4, 4), [50.0, -50.0, -10.0, -10.0]))
    drawn = policy.sample(np.zeros((100, 3)), RngStream(0))
    assert np.all(np.abs(drawn.actions) < 1.0)
    assert np.all(np.isfinite(drawn.log_prob))


def test_deterministic_act_uses_mean():
    policy = SquashedGaussianPolicy(constant_params((3, 4, 2), [0.4, 0.0]))
    assert policy.act(np.zeros(3)).tolist() == [np.tanh(0.4)]


def test_uniform_random_policy():
    policy = UniformRandomPolicy(3)
    actions = np.array([policy.act(None, RngStream(5)) for _ in range(10)])
    assert actions.shape == (10, 3)
    assert np.all(np.abs(actions) <= 1.0)


# --- critic targets and updates -----------------------------------------------

def _batch(rewards, terminals):
    n = len(rewards)
    return TransitionBatch(np.zeros((n, 2)), np.zeros((n, 1)), np.asarray(rewards, dtype=np.float64),
                           np.zeros((n, 2)), np.asarray(terminals, dtype=bool))


def test_terminal_target_is_reward():
    policy = SquashedGaussianPolicy(constant_params((2, 4, 2), [0.0, 0.0]))
    critics = [constant_params((3, 4, 1), [100.0])] * 2
    y = critic_target(_batch([0.7, 0.2], [True, True]), critics, policy, 0.1, 0.99, RngStream(0))
    assert y.tolist() == [0.7, 0.2]


def test_zero_discount_target_is_reward():
    policy = SquashedGaussianPolicy(constant_params((2, 4, 2), [0.0, 0.0]))
    critics = [constant_params((3, 4, 1), [100.0])] * 2
    y = critic_target(_batch([0.7], [False]), critics, policy, 0.1, 0.0, RngStream(0))
    assert y.tolist() == [0.7]


def test_target_uses_smaller_critic_and_entropy_bonus():
    policy = SquashedGaussianPolicy(constant_params((2, 4, 2), [0.0, -1.0]))
    critics = [constant_params((3, 4, 1), [2.0]), constant_params((3, 4, 1), [3.0])]
    batch = _batch([1.0], [False])
    assert critic_target(batch, critics, policy, 0.0, 0.9, RngStream(4))[0] == pytest.approx(2.8)
    log_prob = policy.sample(np.zeros((1, 2)), RngStream(4)).log_prob[0]
    y = critic_target(batch, critics, policy, 0.5, 0.9, RngStream(4))[0]
    assert y == pytest.approx(1.0 + 0.9 * (2.0 - 0.5 * log_prob))


def test_update_step_produces_finite_losses():
    env, buffer = filled_buffer()
    learner = SoftActorCritic(env.observation_dim, 1, SMALL, RngStream(0, 1), featurize=env.observe_batch)
    rng = RngStream(0, 2)
    for _ in range(20):
        record = update_step(learner, buffer, rng)
        assert record.is_finite()
        assert record.temperature > 0
    assert learner.updates == 20


def test_update_step_is_deterministic():
    env, buffer = filled_buffer()
    runs = []
    for _ in range(2):
        learner = SoftActorCritic(env.observation_dim, 1, SMALL, RngStream(3, 1), featurize=env.observe_batch)
        rng = RngStream(3, 2)
        records = [update_step(learner, buffer, rng) for _ in range(5)]
        runs.append((records, learner.policy.params.arrays()))
    assert runs[0][0] == runs[1][0]
    assert all(np.array_equal(a, b) for a, b in zip(runs[0][1], runs[1][1]))


def test_update_step_needs_a_full_batch():
    env, buffer = filled_buffer(count=5)
    learner = SoftActorCritic(env.observation_dim, 1, SMALL, featurize=env.observe_batch)
    with pytest.raises(BufferNotReadyError):
        update_step(learner, buffer, RngStream(0))


def test_non_finite_rewards_abort_training():
    env, buffer = filled_buffer(reward=float("nan"))
    learner = SoftActorCritic(env.observation_dim, 1, SMALL, featurize=env.observe_batch)
    with pytest.raises(TrainingDivergedError) as info:
        update_step(learner, buffer, RngStream(0))
    assert info.value.error_code == "TRAINING_DIVERGED"
    assert "critic_loss" in info.value.diagnostics


def _central_difference(loss, array, index, h=1e-6):
    original = array[index]
    array[index] = original + h
    up = loss()
    array[index] = original - h
    down = loss()
    array[index] = original
    return (up - down) / (2 * h)


def _assert_close(numeric, analytic):
    assert abs(numeric - analytic) <= 1e-5 * max(abs(numeric), abs(analytic)) + 1e-7


@pytest.mark.parametrize("seed", range(3))
def test_critic_loss_gradients_match_finite_differences(seed):
    rng = RngStream(seed)
    critic = mlp_init((5, 6, 6, 1), rng)
    inputs = rng.normal(size=(8, 5))
    targets = rng.normal(size=8)
    _, grads = critic_loss_gradients(critic, inputs, targets)

    def loss():
        return critic_loss_gradients(critic, inputs, targets)[0]

    for array, grad in zip(critic.arrays(), grads.arrays()):
        for index in np.ndindex(array.shape):
            _assert_close(_central_difference(loss, array, index), grad[index])


def _actor_problem(seed, clamp_half):
    rng = RngStream(seed)
    policy = SquashedGaussianPolicy(mlp_init((3, 6, 4), rng))
    critics = [mlp_init((5, 6, 1), rng) for _ in range(2)]
    obs = rng.normal(size=(6, 3))
    noise = rng.normal(size=(6, 2))
    if clamp_half:
        raw = np.sort(mlp_apply(policy.params, obs)[:, 2:].ravel())
        middle = len(raw) // 2
        policy.log_std_bounds = (-10.0, float(0.5 * (raw[middle - 1] + raw[middle])))
    return policy, critics, obs, noise


@pytest.mark.parametrize("clamp_half", [False, True])
@pytest.mark.parametrize("seed", range(3))
def test_actor_loss_gradients_match_finite_differences(seed, clamp_half):
    policy, critics, obs, noise = _actor_problem(seed, clamp_half)
    _, grads, drawn = actor_loss_gradients(policy, critics, obs, noise, 0.3)
    assert drawn.std_in_bounds.all() != clamp_half

    def loss():
        return actor_loss_gradients(policy, critics, obs, noise, 0.3)[0]

    for array, grad in zip(policy.params.arrays(), grads.arrays()):
        for index in np.ndindex(array.shape):
            _assert_close(_central_difference(loss, array, index), grad[index])


@pytest.mark.parametrize("log_temperature", [-2.3, 0.0, 1.0])
def test_temperature_gradient_matches_finite_difference(log_temperature):
    log_prob = np.random.default_rng(0).normal(-1.0, 2.0, size=16)
    loss, grad = temperature_loss_gradient(log_temperature, log_prob, -1.0)
    h = 1e-6
    numeric = (temperature_loss_gradient(log_temperature + h, log_prob, -1.0)[0]
               - temperature_loss_gradient(log_temperature - h, log_prob, -1.0)[0]) / (2 * h)
    _assert_close(numeric, grad)
    assert loss == pytest.approx(-math.exp(log_temperature) * np.mean(log_prob - 1.0))


def test_high_entropy_lowers_the_temperature():
    _, grad = temperature_loss_gradient(0.0, np.full(4, -5.0), -1.0)
    assert grad > 0
    _, grad = temperature_loss_gradient(0.0, np.full(4, 3.0), -1.0)
    assert grad < 0


def test_actor_update_moves_against_the_gradient():
    config = LearnerConfig(batch_size=6, hidden_sizes=(6,))
    learner = SoftActorCritic(3, 2, config, RngStream(4, 1))
    obs = RngStream(4, 0).normal(size=(6, 3))
    batch = TransitionBatch(obs, np.zeros((6, 2)), np.zeros(6), obs, np.zeros(6, dtype=bool))
    noise = RngStream(4, 2).normal(size=(6, 2))
    _, grads, drawn = actor_loss_gradients(learner.policy, learner.critics, obs, noise, learner.temperature)
    _, d_log_temperature = temperature_loss_gradient(float(learner.log_temperature[0]), drawn.log_prob,
                                                     learner.target_entropy)
    before = [a.copy() for a in learner.policy.params.arrays()]
    log_temperature = float(learner.log_temperature[0])

    learner.update_actor_and_temperature(batch, RngStream(4, 2))

    for old, new, grad in zip(before, learner.policy.params.arrays(), grads.arrays()):
        moved = np.abs(grad) > 1e-6
        assert np.array_equal(np.sign(new - old)[moved], -np.sign(grad)[moved])
    assert np.sign(learner.log_temperature[0] - log_temperature) == -np.sign(d_log_temperature)


def test_repeated_critic_updates_fit_a_fixed_batch():
    rng = np.random.default_rng(0)
    n = 16
    states = rng.normal(size=(n, 2))
    actions = rng.uniform(-1.0, 1.0, size=(n, 1))
    rewards = 2.0 * states[:, 0] - states[:, 1] + actions[:, 0]
    batch = TransitionBatch(states, actions, rewards, rng.normal(size=(n, 2)), np.zeros(n, dtype=bool))
    config = LearnerConfig(batch_size=n, hidden_sizes=(32, 32), discount=0.5, critic_lr=3e-3)
    learner = SoftActorCritic(2, 1, config, RngStream(0, 1))
    frozen = [[a.copy() for a in target.arrays()] for target in learner.critic_targets]

    sample_rng = RngStream(0, 2)
    losses = [learner.update_critics(batch, sample_rng) for _ in range(1500)]

    assert np.mean(losses[-100:]) < 0.05 * losses[0]
    for target, saved in zip(learner.critic_targets, frozen):
        assert all(np.array_equal(a, b) for a, b in zip(target.arrays(), saved))


def test_temperature_stays_positive_over_long_training():
    env, buffer = filled_buffer(count=200, seed=5)
    config = LearnerConfig(batch_size=8, hidden_sizes=(4,), temperature_lr=1e-3)
    learner = SoftActorCritic(env.observation_dim, 1, config, RngStream(5, 1), featurize=env.observe_batch)
    rng = RngStream(5, 2)
    for _ in range(5000):
        record = update_step(learner, buffer, rng)
        assert record.temperature > 0
        assert math.isfinite(record.temperature)
    assert learner.actor_optimizer.t == 10_000
    assert learner.temperature_optimizer.t == 10_000


# --- checkpoints ----------------------------------------------------------------

def test_checkpoint_round_trip(tmp_path):
    policy = SquashedGaussianPolicy(mlp_init((5, 8, 8, 2), RngStream(7)), (-5.0, 1.0))
    path = save_policy(tmp_path / "actor.bin", policy)
    loaded = load_policy(path)
    assert loaded.params.sizes == (5, 8, 8, 2)
    assert loaded.log_std_bounds == (-5.0, 1.0)
    assert all(np.array_equal(a, b) for a, b in zip(loaded.params.arrays(), policy.params.arrays()))
    obs = np.linspace(-1.0, 1.0, 5)
    assert np.array_equal(loaded.act(obs), policy.act(obs))


def test_checkpoint_byte_layout(tmp_path):
    policy = SquashedGaussianPolicy(mlp_init((3, 4, 2), RngStream(0)))
    data = save_policy(tmp_path / "actor.bin", policy).read_bytes()
    n_params = 4 * 3 + 4 + 2 * 4 + 2
    assert data[:8] == b"TSDAACT1"
    assert len(data) == 8 + 8 * 4 + 16 + 8 * n_params


def test_truncated_checkpoint_rejected(tmp_path):
    path = save_policy(tmp_path / "actor.bin", SquashedGaussianPolicy(mlp_init((3, 4, 2), RngStream(0))))
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(CheckpointFormatError):
        load_policy(path)


def test_checkpoint_with_trailing_bytes_rejected(tmp_path):
    path = save_policy(tmp_path / "actor.bin", SquashedGaussianPolicy(mlp_init((3, 4, 2), RngStream(0))))
    path.write_bytes(path.read_bytes() + b"\x00")
    with pytest.raises(CheckpointFormatError):
        load_policy(path)


def test_foreign_file_rejected(tmp_path):
    path = tmp_path / "notes.bin"
    path.write_bytes(b"not a checkpoint at all")
    with pytest.raises(CheckpointFormatError):
        load_policy(path)


def test_missing_checkpoint_rejected(tmp_path):
    with pytest.raises(CheckpointFormatError):
        load_policy(tmp_path / "absent.bin")
