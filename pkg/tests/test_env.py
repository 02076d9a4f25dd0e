import numpy as np
import pytest

from merlin.core.config import preset
from merlin.core.errors import ConfigError, GameError
from merlin.envs.augment import Affine, apply_affine, augment
from merlin.envs.glyphs import glyph_set, hamming, load_glyph_dir, save_glyph_dir
from merlin.envs.memory_game import MemoryGame
from merlin.envs.oracle import PerfectMemoryPlayer, mean_stderr, oracle_play, random_play, reference_scores
from merlin.verification import check_env_properties


def pair_locations(env):
    cards = env.board.cards
    return {int(c): [int(i) for i in np.flatnonzero(cards == c)] for c in np.unique(cards[cards >= 0])}


def test_glyph_set_is_deterministic_and_distinct():
    a = glyph_set(7, 10, size=16)
    b = glyph_set(7, 10, size=16)
    np.testing.assert_array_equal(a, b)
    assert a.shape == (10, 16, 16)
    assert set(np.unique(a)) <= {0.0, 1.0}
    for i in range(10):
        for j in range(i + 1, 10):
            assert hamming(a[i], a[j]) >= 0.05


def test_glyph_dir_round_trip(tmp_path):
    glyphs = glyph_set(1, 3, size=8)
    save_glyph_dir(str(tmp_path), glyphs)
    np.testing.assert_array_equal(load_glyph_dir(str(tmp_path), size=8), glyphs)


def test_glyph_dir_rejects_wrong_size(tmp_path):
    save_glyph_dir(str(tmp_path), glyph_set(1, 2, size=8))
    with pytest.raises(ConfigError):
        load_glyph_dir(str(tmp_path), size=16)


def test_empty_glyph_dir_rejected(tmp_path):
    with pytest.raises(ConfigError):
        load_glyph_dir(str(tmp_path))


def test_identity_affine_keeps_image(rng):
    image = glyph_set(2, 1, size=16)[0]
    np.testing.assert_allclose(apply_affine(image, Affine()), image, atol=1e-6)


def test_augment_stays_in_unit_range(rng):
    image = glyph_set(2, 1, size=16)[0]
    out = augment(image, rng)
    assert out.shape == image.shape
    assert out.min() >= 0.0 and out.max() <= 1.0


def test_reset_deals_each_card_twice(tiny):
    env = MemoryGame(tiny, 0)
    obs = env.reset()
    cards = env.board.cards
    assert sorted(cards[cards >= 0].tolist()) == [0, 0, 1, 1, 2, 2]
    assert np.all(obs.image == 0.0)
    assert obs.prev_action is None and obs.prev_reward == 0.0
    assert obs.image.shape == (tiny.image_size, tiny.image_size, tiny.image_channels)


def test_pool_is_shared_across_episodes(tiny):
    env = MemoryGame(tiny, 4)
    pool = env.pool.copy()
    env.reset()
    env.reset()
    np.testing.assert_array_equal(env.pool, pool)
    assert env.pool.shape[0] == tiny.glyph_pool_size


def test_reset_with_seed_repeats_board(tiny):
    env = MemoryGame(tiny, 0)
    env.reset(seed=11)
    first = env.board.cards.copy()
    env.reset(seed=11)
    np.testing.assert_array_equal(env.board.cards, first)


def test_matching_pair_scores_and_clears(tiny):
    env = MemoryGame(tiny, 0)
    env.reset()
    a, b = pair_locations(env)[0]
    obs, reward, done = env.step(a)
    assert reward == 0.0 and not done
    assert obs.image.max() > 0.0
    assert obs.action_onehot()[a] == 1.0
    obs, reward, _ = env.step(b)
    assert reward == 1.0
    assert env.board.cleared[a] and env.board.cleared[b]
    # cleared location shows a blank card
    obs, reward, _ = env.step(a)
    assert reward == 0.0
    assert np.all(obs.image == 0.0)


def test_same_location_twice_does_not_match(tiny):
    env = MemoryGame(tiny, 0)
    env.reset()
    a, _ = pair_locations(env)[0]
    env.step(a)
    _, reward, _ = env.step(a)
    assert reward == 0.0


def test_cleared_board_pays_every_remaining_move(tiny):
    env = MemoryGame(tiny, 0)
    env.reset()
    for a, b in pair_locations(env).values():
        env.step(a)
        env.step(b)
    assert env.board.all_cleared
    rewards = []
    done = False
    while not done:
        obs, reward, done = env.step(0)
        rewards.append(reward)
        assert np.all(obs.image == 0.0)
    assert rewards == [1.0] * (tiny.move_budget - 6)


def test_step_errors(tiny):
    env = MemoryGame(tiny, 0)
    with pytest.raises(GameError):
        env.step(0)
    env.reset()
    with pytest.raises(GameError):
        env.step(tiny.num_actions)
    with pytest.raises(GameError):
        env.step(-1)
    for _ in range(tiny.move_budget):
        env.step(0)
    assert env.done
    with pytest.raises(GameError):
        env.step(0)


def test_perfect_memory_player_takes_known_partner():
    player = PerfectMemoryPlayer(4)
    cleared = np.zeros(4, dtype=bool)
    player.observe(0, 5)
    player.observe(1, 7)
    player.observe(2, 5)
    assert player.act(cleared) == 0
    player.observe(3, 7)
    assert player.act(cleared) == 1


def test_oracle_clears_mini_board_within_nine_moves(tiny):
    env = MemoryGame(tiny, 0)
    for seed in range(50):
        result = oracle_play(env, seed)
        assert result.moves_to_clear is not None and result.moves_to_clear <= 9
        assert result.score == 3 + (tiny.move_budget - result.moves_to_clear)


def test_reference_scores_order(tiny):
    scores = reference_scores(tiny, episodes=300, seed=0)
    assert scores.oracle_clear_rate == 1.0
    assert scores.oracle_mean > scores.random_mean + 5 * scores.random_stderr
    assert scores.oracle_stderr >= 0.0


def test_random_play_is_seeded(tiny):
    env = MemoryGame(tiny, 0)
    a = random_play(env, np.random.default_rng(3), seed=1)
    b = random_play(env, np.random.default_rng(3), seed=1)
    assert a == b


def test_mean_stderr():
    mean, stderr = mean_stderr([1.0, 3.0])
    assert mean == 2.0
    assert stderr == pytest.approx(1.0)
    assert mean_stderr([4.0]) == (4.0, 0.0)


def test_full_board_battery():
    result = check_env_properties(seed=1, episodes=50)
    assert result.passed, result.detail


def test_oracle_clears_every_full_board():
    config = preset()
    env = MemoryGame(config, 0)
    for seed in range(1000):
        result = oracle_play(env, seed)
        assert result.moves_to_clear is not None and result.moves_to_clear <= config.move_budget
