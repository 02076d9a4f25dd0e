import numpy as np
import pytest

from merlin.agents.base import flatten
from merlin.agents.merlin import MerlinAgent
from merlin.core.config import lesion
from merlin.core.errors import ShapeError
from merlin.envs.memory_game import MemoryGame
from merlin.models.policy import Policy, gae, policy_loss, sample_action, softmax, value_loss
from merlin.verification import (
    check_gae_oracle,
    check_policy_blocks_mbp,
    check_policy_loss,
    check_return_hat_blocks_value,
)


def test_gae_single_step_terminal():
    window = gae([1.0], [0.25], 9.0, 0.9, 0.8, terminal=True)
    np.testing.assert_allclose(window.deltas, [0.75])
    np.testing.assert_allclose(window.advantages, [0.75])
    np.testing.assert_allclose(window.returns, [1.0])


def test_gae_bootstraps_from_next_value():
    window = gae([0.0, 1.0], [0.5, 0.5], 2.0, 1.0, 0.5, terminal=False)
    np.testing.assert_allclose(window.deltas, [0.0, 2.5])
    np.testing.assert_allclose(window.advantages, [1.25, 2.5])
    np.testing.assert_allclose(window.returns, [3.0, 3.0])


def test_gae_lambda_one_equals_return_minus_value(rng):
    r, v = rng.normal(size=6), rng.normal(size=6)
    window = gae(r, v, 0.7, 1.0, 1.0, terminal=False)
    np.testing.assert_allclose(window.advantages, window.returns - v, atol=1e-12)


def test_gae_rejects_mismatched_lengths():
    with pytest.raises(ShapeError):
        gae([1.0, 2.0], [0.0], 0.0, 1.0, 1.0, terminal=True)


def test_gae_matches_double_sum():
    assert check_gae_oracle(seed=4).passed


def test_policy_loss_value(tape):
    logits = [tape.constant(np.zeros(2)), tape.constant(np.array([np.log(3.0), 0.0]))]
    window = gae([0.0, 0.0], [0.0, 0.0], 0.0, 1.0, 1.0, terminal=True, actions=[1, 0])
    window.advantages[:] = [2.0, -1.0]
    loss, entropy = policy_loss(window, logits, alpha_entropy=0.0)
    expected = -(np.log(0.5) * 2.0) - (np.log(0.75) * -1.0)
    assert loss.item() == pytest.approx(expected, rel=1e-12)
    h1 = -(0.75 * np.log(0.75) + 0.25 * np.log(0.25))
    assert entropy == pytest.approx((np.log(2.0) + h1) / 2)


def test_entropy_bonus_lowers_loss(tape):
    logits = [tape.constant(np.zeros(4))]
    window = gae([0.0], [0.0], 0.0, 1.0, 1.0, terminal=True, actions=[0])
    plain, _ = policy_loss(window, logits, 0.0)
    bonus, _ = policy_loss(window, logits, 0.1)
    assert bonus.item() == pytest.approx(plain.item() - 0.1 * np.log(4.0))


def test_value_loss(tape):
    values = [tape.constant(np.float64(1.0)), tape.constant(np.float64(-1.0))]
    assert value_loss(values, [2.0, 1.0]).item() == pytest.approx(0.5 * (1.0 + 4.0))


def test_sample_action(rng):
    logits = np.array([0.0, 5.0, 1.0])
    assert sample_action(logits, rng, greedy=True) == 1
    draws = [sample_action(logits, rng) for _ in range(2000)]
    assert np.mean(np.array(draws) == 1) == pytest.approx(softmax(logits)[1], abs=0.03)


def test_policy_loss_gradients():
    assert check_policy_loss(seed=2).passed


def test_policy_loss_never_reaches_mbp_parameters():
    assert check_policy_blocks_mbp(seed=2).passed


def test_return_prediction_never_trains_value_head():
    assert check_return_hat_blocks_value(seed=2).passed


def merlin_window(config, seed=0):
    agent = MerlinAgent(config)
    rng = np.random.default_rng(seed)
    params = agent.init_params(rng)
    env = MemoryGame(config, seed)
    return agent, agent.run_window(params, env, env.reset(), agent.initial_state(), rng)


def test_unblocked_policy_gradient_reaches_mbp(make_config):
    config = make_config(block_policy_gradient=False)
    _, result = merlin_window(config)
    _, blocked = merlin_window(make_config())
    assert set(result.grads) == {"mbp", "policy"}
    # same trajectory, extra policy-loss gradient on the MBP encoder
    name = "mbp/encoder/image/out/w"
    assert not np.allclose(result.grads["mbp"][name], blocked.grads["mbp"][name])


def test_window_gradients_stay_in_their_group(tiny):
    agent, result = merlin_window(tiny)
    assert set(result.grads["mbp"]) == set(agent.mbp.param_names())
    assert set(result.grads["policy"]) == set(agent.policy.param_names())
    assert all(np.all(np.isfinite(g)) for group in result.grads.values() for g in group.values())
    assert result.steps == tiny.window


def test_no_return_lesion_adds_policy_value_head(tiny):
    config = lesion(tiny, "no-return")
    policy = Policy(config)
    assert policy.value is not None
    assert "policy/value/w" in policy.param_names()
    agent, result = merlin_window(config)
    assert agent.mbp.return_decoder is None
    assert np.any(result.grads["policy"]["policy/value/w"] != 0)


def test_policy_has_no_value_head_with_return_decoder(tiny):
    assert Policy(tiny).value is None


def test_uniform_logits_sample_every_action_equally(rng):
    draws = np.array([sample_action(np.zeros(16), rng) for _ in range(100_000)])
    freq = np.bincount(draws, minlength=16) / draws.size
    np.testing.assert_allclose(freq, 1.0 / 16.0, atol=0.005)


def test_bootstrap_leaves_rollout_draws_unchanged(tiny):
    agent = MerlinAgent(tiny)
    params = agent.init_params(np.random.default_rng(0))
    env_a, env_b = MemoryGame(tiny, 0), MemoryGame(tiny, 0)
    rng_a, rng_b = np.random.default_rng(9), np.random.default_rng(9)
    result = agent.run_window(params, env_a, env_a.reset(), agent.initial_state(), rng_a)
    assert not result.done
    agent.rollout(flatten(params), env_b, env_b.reset(), agent.initial_state(), rng_b, tiny.window)
    assert rng_a.random() == rng_b.random()
