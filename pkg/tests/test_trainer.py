import csv
import json
import logging
import os
import threading

import numpy as np
import pytest

from merlin.agents import make_agent
from merlin.core.errors import CheckpointError, GradientError
from merlin.db import checkpoint as checkpoint_store
from merlin.schemas.run import METRICS_COLUMNS, MetricsRow
from merlin.training.evaluation import evaluate, evaluate_checkpoint, write_reads, write_saliency
from merlin.training.server import ParameterServer, adam_step
from merlin.training.trainer import (
    CONFIG_FILE,
    FINAL_CHECKPOINT,
    MANIFEST_FILE,
    METRICS_FILE,
    build_id,
    restore,
    train,
)
from merlin.training.worker import EpisodeAccumulator, Worker, worker_seed


def single_server(value=1.0, lr=0.1, **kwargs):
    params = {"policy": {"w": np.array([value])}, "mbp": {"u": np.zeros(2)}}
    return ParameterServer(params, {"policy": lr, "mbp": lr}, **kwargs)


def read_rows(path):
    with open(path, newline="") as f:
        return list(csv.reader(f))


# Parameter server


def test_first_adam_step_by_hand():
    server = single_server()
    adam_step(server, {"w": np.array([0.5])}, "policy")
    expected = 1.0 - 0.1 * 0.5 / (0.5 + 1e-8)
    assert server.params["policy"]["w"][0] == pytest.approx(expected, abs=1e-10)
    assert server.steps == {"policy": 1, "mbp": 0}


def test_zero_gradient_leaves_parameters():
    server = single_server()
    server.apply("policy", {"w": np.zeros(1)})
    assert server.params["policy"]["w"][0] == 1.0


def test_groups_have_independent_step_counts():
    server = single_server()
    for _ in range(3):
        server.apply("mbp", {"u": np.ones(2)})
    server.apply("policy", {"w": np.array([0.5])})
    assert server.steps == {"policy": 1, "mbp": 3}
    # bias correction uses the policy group's own count
    assert server.params["policy"]["w"][0] == pytest.approx(1.0 - 0.1 * 0.5 / (0.5 + 1e-8), abs=1e-10)


def test_overlapping_groups_rejected():
    with pytest.raises(GradientError):
        ParameterServer({"mbp": {"w": np.ones(1)}, "policy": {"w": np.ones(1)}}, {"mbp": 0.1, "policy": 0.1})


def test_missing_learning_rate_rejected():
    with pytest.raises(GradientError):
        ParameterServer({"mbp": {"w": np.ones(1)}}, {"policy": 0.1})


@pytest.mark.parametrize("group, grads", [
    ("policy", {"u": np.ones(2)}),
    ("policy", {"w": np.ones(2)}),
    ("policy", {"w": np.array([np.nan])}),
    ("value", {"w": np.ones(1)}),
])
def test_bad_submissions_leave_parameters_untouched(group, grads):
    server = single_server()
    with pytest.raises(GradientError):
        server.apply(group, grads)
    assert server.params["policy"]["w"][0] == 1.0
    assert server.steps == {"policy": 0, "mbp": 0}


def test_rejected_group_blocks_the_whole_submission():
    server = single_server()
    with pytest.raises(GradientError):
        server.apply_all({"mbp": {"u": np.ones(2)}, "policy": {"w": np.array([np.nan])}})
    np.testing.assert_array_equal(server.params["mbp"]["u"], np.zeros(2))
    assert server.params["policy"]["w"][0] == 1.0
    assert server.steps == {"policy": 0, "mbp": 0}


def test_apply_all_steps_every_group():
    server = single_server()
    server.apply_all({"mbp": {"u": np.ones(2)}, "policy": {"w": np.array([0.5])}})
    assert server.steps == {"policy": 1, "mbp": 1}
    assert server.params["mbp"]["u"][0] < 0.0


def test_gradient_clipping_scales_global_norm():
    clipped = single_server(grad_clip=0.5)
    plain = single_server()
    clipped.apply("mbp", {"u": np.array([3.0, 4.0])})
    plain.apply("mbp", {"u": np.array([0.3, 0.4])})
    np.testing.assert_allclose(clipped.params["mbp"]["u"], plain.params["mbp"]["u"])


def test_state_arrays_round_trip():
    server = single_server()
    server.apply("policy", {"w": np.array([0.5])})
    arrays = server.state_arrays()
    assert set(arrays) == {"w", "u", "adam/m/w", "adam/v/w", "adam/m/u", "adam/v/u"}
    other = single_server(value=7.0)
    other.load_state(arrays, server.steps, 42)
    assert other.params["policy"]["w"][0] == server.params["policy"]["w"][0]
    assert other.steps == server.steps and other.env_steps == 42


def test_concurrent_applies_count_every_step():
    server = single_server(lr=1e-3)

    def body():
        for _ in range(50):
            server.apply("policy", {"w": np.array([1.0])})

    threads = [threading.Thread(target=body) for _ in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert server.steps["policy"] == 200
    assert np.isfinite(server.params["policy"]["w"][0])


def test_episode_accumulator_weights_entropy_by_steps():
    acc = EpisodeAccumulator()
    acc.add([1.0, 0.0], {"kl": 0.5, "policy_entropy": 1.0})
    acc.add([1.0], {"kl": 0.25, "policy_entropy": 4.0})
    assert acc.score == 2.0 and acc.steps == 3
    assert acc.sums["kl"] == 0.75
    assert acc.entropy_weighted / acc.steps == pytest.approx(2.0)


# Workers


def make_worker(config, rows=None):
    agent = make_agent(config)
    server = ParameterServer.from_config(agent.init_params(np.random.default_rng(config.seed)), config)
    report = rows.append if rows is not None else (lambda row: None)
    return Worker(0, config, agent, server, report), agent, server


def test_worker_discards_window_with_one_bad_group(monkeypatch, make_config):
    worker, agent, server = make_worker(make_config())
    run_window = agent.run_window

    def poisoned(*args):
        result = run_window(*args)
        name = next(iter(result.grads["policy"]))
        result.grads["policy"][name] = np.full_like(result.grads["policy"][name], np.nan)
        return result

    monkeypatch.setattr(agent, "run_window", poisoned)
    before = server.snapshot()
    assert worker.run_window() == 0
    assert worker.discarded == 1
    assert server.steps == {"mbp": 0, "policy": 0} and server.env_steps == 0
    for group, values in before.items():
        for name, value in values.items():
            np.testing.assert_array_equal(server.params[group][name], value)


def test_worker_flags_clamped_probabilities(monkeypatch, caplog, make_config):
    rows = []
    worker, agent, _ = make_worker(make_config(), rows)
    run_window = agent.run_window
    calls = []

    def saturating(*args):
        result = run_window(*args)
        calls.append(1)
        result.stats["saturated"] = 2.0
        return result

    monkeypatch.setattr(agent, "run_window", saturating)
    with caplog.at_level(logging.WARNING, logger="merlin.training.worker"):
        while not rows:
            worker.run_window()
    assert rows[0].saturated == 2 * len(calls)
    assert "clamped" in caplog.text
    assert len(rows[0].csv_values()) == len(METRICS_COLUMNS)


# End-to-end runs


def run(tmp_path, config, name="run"):
    out = str(tmp_path / name)
    return train(config, out), out


def test_run_writes_manifest_metrics_and_final_checkpoint(tmp_path, make_config):
    config = make_config(sync=True, max_steps=30)
    result, out = run(tmp_path, config)
    assert result.server.env_steps >= 30
    with open(os.path.join(out, MANIFEST_FILE)) as f:
        manifest = json.load(f)
    assert manifest["seed"] == config.seed
    assert manifest["build_id"] == build_id()
    with open(os.path.join(out, CONFIG_FILE)) as f:
        assert json.load(f)["agent"] == "merlin"
    rows = read_rows(os.path.join(out, METRICS_FILE))
    assert tuple(rows[0]) == METRICS_COLUMNS
    assert len(rows) - 1 == result.episodes >= 2
    env_steps = [int(r[1]) for r in rows[1:]]
    assert env_steps == sorted(env_steps)
    assert all(float(r[0]) == 0.0 for r in rows[1:])
    assert os.path.exists(os.path.join(out, FINAL_CHECKPOINT))


def test_sync_runs_are_deterministic(tmp_path, make_config):
    config = make_config(sync=True, workers=2)
    _, a = run(tmp_path, config, "a")
    _, b = run(tmp_path, config, "b")
    assert read_rows(os.path.join(a, METRICS_FILE)) == read_rows(os.path.join(b, METRICS_FILE))


def test_periodic_checkpoints(tmp_path, make_config):
    result, out = run(tmp_path, make_config(sync=True, max_steps=30, checkpoint_interval=10))
    names = [os.path.basename(p) for p in result.checkpoints]
    assert names[-1] == FINAL_CHECKPOINT
    assert len(names) >= 3
    assert all(n.startswith("step_") for n in names[:-1])


def test_threaded_run_finishes(tmp_path, make_config):
    result, out = run(tmp_path, make_config(workers=2, max_steps=30))
    assert result.server.env_steps >= 30
    assert result.episodes >= 2


def test_checkpoint_restores_trained_parameters(tmp_path, make_config):
    config = make_config(sync=True, max_steps=30)
    result, out = run(tmp_path, config)
    path = os.path.join(out, FINAL_CHECKPOINT)
    restored_config, agent, params = restore(path)
    assert restored_config.model_dump() == config.model_dump()
    for group, values in result.server.params.items():
        for name, value in values.items():
            np.testing.assert_array_equal(params[group][name], value)
    meta = checkpoint_store.load(path).meta
    assert meta.env_steps == result.server.env_steps
    assert meta.group_steps == result.server.steps

    summary = evaluate_checkpoint(path, episodes=3, seed=5)
    direct = evaluate(result.agent, result.server.params, config, 3, seed=5, greedy=False)
    assert summary.mean_score == pytest.approx(np.mean([t.score for t in direct]))
    assert summary.episodes == 3 and summary.reference is None


def test_eval_can_deal_from_training_pool(tmp_path, make_config):
    config = make_config(sync=True, max_steps=10, seed=3)
    result, out = run(tmp_path, config)
    summary = evaluate_checkpoint(os.path.join(out, FINAL_CHECKPOINT), episodes=2, seed=5, train_pool=True)
    direct = evaluate(result.agent, result.server.params, config, 2, seed=5, greedy=False,
                      pool_seed=worker_seed(config, 0))
    assert summary.mean_score == pytest.approx(np.mean([t.score for t in direct]))
    assert worker_seed(config, 0) == 3000


def test_restore_rejects_mismatched_groups(tmp_path, make_config):
    result, out = run(tmp_path, make_config(sync=True, max_steps=10))
    ckpt = checkpoint_store.load(os.path.join(out, FINAL_CHECKPOINT))
    meta = ckpt.meta.model_copy(update={"config": {**ckpt.meta.config, "agent": "rl-lstm", "lesion": "none"}})
    path = str(tmp_path / "bad.ckpt")
    checkpoint_store.save(path, meta, ckpt.arrays)
    with pytest.raises(CheckpointError):
        restore(path)


def test_eval_exports(tmp_path, make_config):
    result, out = run(tmp_path, make_config(sync=True, max_steps=10))
    path = os.path.join(out, FINAL_CHECKPOINT)
    reads = tmp_path / "reads.jsonl"
    saliency = tmp_path / "saliency"
    episodes_csv = tmp_path / "episodes.csv"
    summary = evaluate_checkpoint(path, episodes=2, seed=0, greedy=True, episodes_csv=str(episodes_csv),
                                  dump_reads=str(reads), dump_saliency=str(saliency), reference_episodes=20)
    assert summary.greedy and summary.reference.oracle_clear_rate == 1.0
    rows = read_rows(episodes_csv)
    assert rows[0] == ["episode", "seed", "score", "steps"] and len(rows) == 3
    lines = [json.loads(line) for line in reads.read_text().splitlines()]
    assert len(lines) == 2 * 10
    assert set(lines[0]) == {"episode", "step", "action", "reward", "reads"}
    assert set(lines[0]["reads"]) == {"mbp", "policy"}
    maps = np.load(saliency / "episode_0001.npy")
    assert maps.shape == (10, 8, 8)
    assert np.all(maps >= 0)


def test_write_reads_and_saliency_formats(tmp_path):
    from merlin.training.evaluation import EpisodeTrace

    trace = EpisodeTrace(score=1.0, actions=[2], rewards=[1.0], reads=[{"policy": [[1.0, 0.0]]}],
                         saliency=[np.ones((4, 4))])
    write_reads(str(tmp_path / "r.jsonl"), [trace])
    assert json.loads((tmp_path / "r.jsonl").read_text()) == {
        "episode": 0, "step": 0, "action": 2, "reward": 1.0, "reads": {"policy": [[1.0, 0.0]]},
    }
    write_saliency(str(tmp_path / "s"), [trace])
    assert np.load(tmp_path / "s" / "episode_0000.npy").shape == (1, 4, 4)


def test_metrics_row_formats_wall_time():
    row = MetricsRow(wall_time=1.23456, env_steps=5, episode_return=2.0)
    assert row.csv_values()[:3] == ["1.235", "5", "2.0"]


# Lesions and baselines


@pytest.mark.slow
@pytest.mark.parametrize("flag", ["no-memory", "only-return", "no-return", "no-retroactive"])
def test_lesioned_runs_complete(tmp_path, make_config, flag):
    result, out = run(tmp_path, make_config(sync=True, max_steps=30, lesion=flag), flag)
    assert result.episodes >= 2
    rows = read_rows(os.path.join(out, METRICS_FILE))
    if flag == "only-return":
        assert all(float(r[METRICS_COLUMNS.index("kl")]) == 0.0 for r in rows[1:])


@pytest.mark.slow
def test_no_retroactive_matches_default_memory_game(tmp_path, make_config):
    _, plain = run(tmp_path, make_config(sync=True, max_steps=30), "plain")
    _, lesioned = run(tmp_path, make_config(sync=True, max_steps=30, lesion="no-retroactive"), "lesioned")
    assert read_rows(os.path.join(plain, METRICS_FILE)) == read_rows(os.path.join(lesioned, METRICS_FILE))


@pytest.mark.slow
@pytest.mark.parametrize("agent", ["rl-lstm", "rl-mem"])
def test_baseline_runs_complete(tmp_path, make_config, agent):
    result, out = run(tmp_path, make_config(agent=agent, sync=True, max_steps=30), agent)
    assert set(result.server.params) == {"policy"}
    assert result.episodes >= 2
    rows = read_rows(os.path.join(out, METRICS_FILE))
    assert all(float(r[METRICS_COLUMNS.index("mbp_loss")]) == 0.0 for r in rows[1:])
