"""
Verification battery run by `merlin check`: gradient oracles, KL against
Monte Carlo, advantage and return oracles, memory invariants, stop-gradient
contracts and environment properties.

Every check returns a CheckResult; none raises on a failed property.
"""
import logging
import time
from typing import Callable, List, Optional, Tuple

import numpy as np

from merlin.agents.merlin import MerlinAgent
from merlin.autodiff import ops
from merlin.autodiff.gradcheck import check_all_primitives, grad_check
from merlin.autodiff.tape import Tape, Tensor
from merlin.core.config import TrainConfig, preset
from merlin.envs.memory_game import MemoryGame
from merlin.envs.oracle import reference_scores
from merlin.models.mbp import DiagGaussian, kl_diag_gauss, mbp_window_loss, return_targets
from merlin.models.memory import MemoryState, allocate, content_read, write
from merlin.models.nets import DeepLSTM, ReturnDecoder
from merlin.models.policy import gae, policy_loss
from merlin.schemas.run import CheckResult

logger = logging.getLogger(__name__)

GRAD_TOLERANCE = 1e-4
GRAD_EPSILON = 1e-5
# both gradients below this are treated as exact zeros
GRAD_ABS_TOL = 1e-9

KLFunction = Callable[[DiagGaussian, DiagGaussian], Tensor]


def tiny_config(**overrides) -> TrainConfig:
    """A MERLIN configuration small enough to finite-difference in seconds."""
    values = dict(
        precision="float64", image_size=8, resnet_strides=(2, 1), resnet_channels=3, resnet_bottleneck=2,
        embed_size=12, z_size=4, lstm_width=6, policy_hidden=8, value_hidden=6, advantage_hidden=4,
        mem_rows=6, glyph_pool_size=6, window=3, max_steps=60, checkpoint_interval=1000,
    )
    values.update(overrides)
    return preset(values.pop("agent", "merlin"), values.pop("task", "memory-mini"), **values)


def _result(name: str, value: float, threshold: float, passed: Optional[bool] = None, detail: str = "") -> CheckResult:
    if passed is None:
        passed = bool(value <= threshold)
    return CheckResult(name=name, passed=passed, value=float(value), threshold=float(threshold), detail=detail)


# Gradient oracles


def check_primitive_grads(seed: int = 0, points: int = 20) -> CheckResult:
    errors = check_all_primitives(seed, points, GRAD_EPSILON)
    worst_name = max(errors, key=errors.get)
    return _result("grad/primitives", errors[worst_name], GRAD_TOLERANCE, detail=f"worst {worst_name}")


def check_lstm_unroll(seed: int = 0, steps: int = 3) -> CheckResult:
    rng = np.random.default_rng(seed)
    lstm = DeepLSTM("lstm", 3, 4, layers=2)
    tape = Tape("float64")
    params = lstm.init_params(rng, "float64")
    p = tape.bind_params(params)
    state = lstm.zero_state("float64").on(tape)
    point = dict(params)
    h = None
    for t in range(steps):
        x = rng.normal(size=3)
        point[f"x{t}"] = x
        state, h = lstm(p, state, tape.input(f"x{t}", x))
    tape.mark_output("loss", (h * tape.constant(rng.normal(size=h.shape))).sum())
    return _result("grad/lstm_unroll", grad_check(tape, point, GRAD_EPSILON), GRAD_TOLERANCE)


def check_content_read(seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(seed)
    rows, word, heads = 5, 4, 2
    point = {"memory": rng.normal(size=(rows, word)), "keys": rng.normal(size=(heads, word)),
             "betas": rng.uniform(0.5, 3.0, size=heads)}
    tape = Tape("float64")
    mem = MemoryState(tape.input("memory", point["memory"]), np.zeros(rows), np.zeros(rows), np.zeros(rows))
    result = content_read(mem, tape.input("keys", point["keys"]), tape.input("betas", point["betas"]))
    loss = (result.vectors * tape.constant(rng.normal(size=(heads, word)))).sum()
    loss = loss + (result.weights * tape.constant(rng.normal(size=(heads, rows)))).sum()
    tape.mark_output("loss", loss)
    return _result("grad/content_read", grad_check(tape, point, GRAD_EPSILON), GRAD_TOLERANCE)


def _merlin_rollout(seed: int, config: TrainConfig):
    agent = MerlinAgent(config)
    rng = np.random.default_rng(seed)
    params = agent.init_params(rng)
    flat = {name: value for group in params.values() for name, value in group.items()}
    env = MemoryGame(config, seed)
    rollout = agent.rollout(flat, env, env.reset(), agent.initial_state(), rng, config.window)
    return agent, params, rollout


def check_mbp_window(seed: int = 0, max_entries: int = 4) -> CheckResult:
    config = tiny_config()
    _, params, rollout = _merlin_rollout(seed, config)
    returns = return_targets(rollout.rewards, rollout.done, 0.0, config.gamma)
    loss = mbp_window_loss([s.extras["record"] for s in rollout.steps], returns, config)
    rollout.tape.mark_output("loss", loss.total)
    error = grad_check(rollout.tape, params["mbp"], GRAD_EPSILON, abs_tol=GRAD_ABS_TOL,
                       max_entries=max_entries, rng=np.random.default_rng(seed))
    return _result("grad/mbp_window", error, GRAD_TOLERANCE)


def _policy_loss(config: TrainConfig, rollout) -> Tensor:
    values = [s.value.item() for s in rollout.steps]
    window = gae(rollout.rewards, values, 0.0, config.gamma, config.lam, rollout.done, rollout.actions)
    loss, _ = policy_loss(window, [s.logits for s in rollout.steps], config.alpha_entropy)
    return loss


def check_policy_loss(seed: int = 0, max_entries: int = 4) -> CheckResult:
    config = tiny_config()
    _, params, rollout = _merlin_rollout(seed, config)
    rollout.tape.mark_output("loss", _policy_loss(config, rollout))
    error = grad_check(rollout.tape, params["policy"], GRAD_EPSILON, abs_tol=GRAD_ABS_TOL,
                       max_entries=max_entries, rng=np.random.default_rng(seed))
    return _result("grad/policy_loss", error, GRAD_TOLERANCE)


# KL divergence


def _random_gaussian(rng: np.random.Generator, dim: int) -> Tuple[np.ndarray, np.ndarray]:
    return rng.normal(size=dim), rng.uniform(-1.0, 1.0, size=dim)


def _log_density(x: np.ndarray, mu: np.ndarray, log_sigma: np.ndarray) -> np.ndarray:
    return np.sum(-log_sigma - 0.5 * np.square((x - mu) / np.exp(log_sigma)), axis=-1)


def check_kl_monte_carlo(seed: int = 0, kl: KLFunction = kl_diag_gauss, pairs: int = 50,
                         samples: int = 100_000, dim: int = 4) -> CheckResult:
    """
    Analytic KL against the Monte Carlo mean of log q(x) - log p(x), x ~ q.

    Passes when every pair agrees within 3 standard errors.
    """
    rng = np.random.default_rng(seed)
    scores = []
    for _ in range(pairs):
        (mq, sq), (mp, sp) = _random_gaussian(rng, dim), _random_gaussian(rng, dim)
        tape = Tape("float64")
        q = DiagGaussian(tape.constant(mq), tape.constant(sq))
        p = DiagGaussian(tape.constant(mp), tape.constant(sp))
        analytic = kl(q, p).item()
        x = mq + np.exp(sq) * rng.standard_normal((samples, dim))
        ratio = _log_density(x, mq, sq) - _log_density(x, mp, sp)
        stderr = ratio.std(ddof=1) / np.sqrt(samples)
        scores.append(abs(analytic - ratio.mean()) / max(stderr, 1e-300))
    scores = np.asarray(scores)
    within = int(np.count_nonzero(scores <= 3.0))
    return _result("kl/monte_carlo", float(scores.max()), 3.0,
                   detail=f"{within}/{pairs} pairs within 3 standard errors")


def check_kl_self(seed: int = 0, kl: KLFunction = kl_diag_gauss, pairs: int = 20) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(pairs):
        mu, log_sigma = _random_gaussian(rng, 6)
        tape = Tape("float64")
        q = DiagGaussian(tape.constant(mu), tape.constant(log_sigma))
        worst = max(worst, abs(kl(q, q).item()))
    return _result("kl/self_zero", worst, 0.0, passed=worst == 0.0)


# Advantages and returns


def _gae_double_sum(r: np.ndarray, v: np.ndarray, v_next: float, gamma: float, lam: float,
                    terminal: bool) -> np.ndarray:
    n = r.shape[0]
    deltas = np.zeros(n)
    for k in range(n):
        last = k == n - 1
        following = (0.0 if terminal else v_next) if last else v[k + 1]
        discount = 0.0 if (terminal and last) else gamma
        deltas[k] = r[k] + discount * following - v[k]
    return np.array([sum((gamma * lam) ** (k - t) * deltas[k] for k in range(t, n)) for t in range(n)])


def check_gae_oracle(seed: int = 0, instances: int = 200) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(instances):
        n = int(rng.integers(1, 25))
        r, v = rng.normal(size=n), rng.normal(size=n)
        v_next = float(rng.normal())
        gamma, lam = float(rng.uniform(0.5, 1.0)), float(rng.uniform(0.0, 1.0))
        terminal = bool(rng.integers(2))
        window = gae(r, v, v_next, gamma, lam, terminal)
        expected = _gae_double_sum(r, v, v_next, gamma, lam, terminal)
        worst = max(worst, float(np.max(np.abs(window.advantages - expected))))
    return _result("gae/double_sum", worst, 1e-10)


def check_return_targets() -> CheckResult:
    cases = [
        (([1.0, 0.0, 2.0], True, 5.0, 1.0), [3.0, 2.0, 2.0]),
        (([1.0, 0.0, 2.0], False, 5.0, 1.0), [8.0, 7.0, 7.0]),
        (([1.0, 0.0, 2.0], False, 5.0, 0.5), [2.125, 2.25, 4.5]),
        (([0.0, 1.0], True, 9.0, 0.9), [0.9, 1.0]),
    ]
    worst = 0.0
    for (rewards, terminal, v_boot, gamma), expected in cases:
        got = return_targets(rewards, terminal, v_boot, gamma)
        worst = max(worst, float(np.max(np.abs(got - np.asarray(expected)))))
    return _result("returns/hand_unrolled", worst, 1e-12)


# Memory


def _write_sequence(zs: np.ndarray, rows: int, gamma: float) -> MemoryState:
    tape = Tape("float64")
    mem = MemoryState.blank(rows, 2 * zs.shape[1], "float64").on(tape)
    for z in zs:
        mem = write(mem, tape.constant(z), gamma)
    return mem.numpy()


def check_memory_append(seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(seed)
    zs = rng.normal(size=(3, 4))
    mem = _write_sequence(zs, 5, 1.0)
    expected = np.zeros((5, 8))
    expected[:3, :4] = zs
    error = float(np.max(np.abs(mem.matrix - expected)))
    return _result("memory/append", error, 0.0, passed=error == 0.0 and mem.t == 3)


def check_retroactive(seed: int = 0, gammas=(0.5, 0.9, 0.96)) -> CheckResult:
    """Second half of row i must equal sum_{j>i} (1 - gamma) gamma^(j-i-1) z_j."""
    rng = np.random.default_rng(seed)
    steps, width = 8, 5
    worst = 0.0
    for gamma in gammas:
        zs = rng.normal(size=(steps, width))
        mem = _write_sequence(zs, steps, gamma)
        for i in range(steps):
            expected = np.zeros(width)
            for j in range(i + 1, steps):
                expected += (1.0 - gamma) * gamma ** (j - i - 1) * zs[j]
            worst = max(worst, float(np.max(np.abs(mem.matrix[i, width:] - expected))))
    return _result("memory/retroactive", worst, 1e-5)


def check_retroactive_inert(seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(seed)
    mem = _write_sequence(rng.normal(size=(6, 3)), 6, 1.0)
    worst = float(np.max(np.abs(mem.matrix[:, 3:])))
    return _result("memory/gamma_one_inert", worst, 0.0, passed=worst == 0.0)


def check_read_simplex(seed: int = 0, trials: int = 20) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        tape = Tape("float64")
        mem = MemoryState(tape.constant(rng.normal(size=(7, 6))), np.zeros(7), np.zeros(7), np.zeros(7))
        keys = tape.constant(rng.normal(size=(3, 6)))
        betas = tape.constant(rng.uniform(0.1, 20.0, size=3))
        w = content_read(mem, keys, betas).weights.value
        if np.any(w < 0):
            return _result("memory/read_simplex", 1.0, 1e-12, passed=False, detail="negative weight")
        worst = max(worst, float(np.max(np.abs(w.sum(axis=1) - 1.0))))
    return _result("memory/read_simplex", worst, 1e-12)


def check_allocation() -> CheckResult:
    mem = MemoryState.blank(4, 2)
    fresh = [allocate(MemoryState(mem.matrix, mem.usage, mem.v_wr, mem.v_ret, t)) for t in range(4)]
    full = MemoryState(mem.matrix, np.array([0.5, 0.2, 0.2, 0.9]), mem.v_wr, mem.v_ret, 4)
    chosen = allocate(full)
    passed = fresh == [0, 1, 2, 3] and chosen == 1
    return _result("memory/allocation", 0.0 if passed else 1.0, 0.0, passed,
                   detail=f"fresh rows {fresh}, full memory chose row {chosen}")


# Stop-gradient contracts


def check_policy_blocks_mbp(seed: int = 0) -> CheckResult:
    config = tiny_config()
    agent, _, rollout = _merlin_rollout(seed, config)
    grads = rollout.tape.backward({_policy_loss(config, rollout): None}, wrt=agent.mbp.param_names())
    worst = max(float(np.max(np.abs(g))) for g in grads.values())
    return _result("stop_gradient/policy_to_mbp", worst, 0.0, passed=worst == 0.0)


def check_return_hat_blocks_value(seed: int = 0) -> CheckResult:
    config = tiny_config()
    rng = np.random.default_rng(seed)
    decoder = ReturnDecoder("return_decoder", config)
    tape = Tape("float64")
    p = tape.bind_params(decoder.init_params(rng, "float64"))
    action = np.zeros(config.num_actions)
    action[0] = 1.0
    pred = decoder(p, tape.input("z", rng.normal(size=config.z_size)),
                   tape.input("logits", rng.normal(size=config.num_actions)), tape.constant(action))
    loss = ops.square(pred.return_hat - 1.5) * 0.5
    grads = tape.backward({loss: None}, wrt=decoder.value.param_names())
    worst = max(float(np.max(np.abs(g))) for g in grads.values())
    return _result("stop_gradient/return_hat_to_value", worst, 0.0, passed=worst == 0.0)


# Environment


def check_env_properties(seed: int = 0, episodes: int = 200) -> CheckResult:
    """Every card appears twice; the oracle clears every board and outscores random play."""
    config = preset("merlin", "memory")
    env = MemoryGame(config, seed)
    for episode in range(20):
        env.reset(seed + episode)
        counts = np.bincount(env.board.cards[env.board.cards >= 0], minlength=config.num_pairs)
        if not np.all(counts == 2):
            return _result("env/properties", 1.0, 0.0, passed=False, detail=f"card counts {counts.tolist()}")
    scores = reference_scores(config, episodes, seed)
    passed = scores.oracle_clear_rate == 1.0 and scores.oracle_mean > scores.random_mean
    return _result("env/properties", 1.0 - scores.oracle_clear_rate, 0.0, passed,
                   detail=f"oracle {scores.oracle_mean:.2f} +/- {scores.oracle_stderr:.2f}, "
                          f"random {scores.random_mean:.2f} +/- {scores.random_stderr:.2f}")


def run_checks(seed: int = 0, kl: KLFunction = kl_diag_gauss) -> List[CheckResult]:
    """Run the whole battery; `kl` may be replaced to confirm the KL check catches a broken formula."""
    checks: List[Callable[[], CheckResult]] = [
        lambda: check_primitive_grads(seed),
        lambda: check_lstm_unroll(seed),
        lambda: check_content_read(seed),
        lambda: check_mbp_window(seed),
        lambda: check_policy_loss(seed),
        lambda: check_kl_monte_carlo(seed, kl),
        lambda: check_kl_self(seed, kl),
        lambda: check_gae_oracle(seed),
        check_return_targets,
        lambda: check_memory_append(seed),
        lambda: check_retroactive(seed),
        lambda: check_retroactive_inert(seed),
        lambda: check_read_simplex(seed),
        check_allocation,
        lambda: check_policy_blocks_mbp(seed),
        lambda: check_return_hat_blocks_value(seed),
        lambda: check_env_properties(seed),
    ]
    results = []
    for check in checks:
        start = time.monotonic()
        result = check()
        logger.info(f"{result.name}: {'pass' if result.passed else 'FAIL'} "
                    f"({result.value:.3e}, {time.monotonic() - start:.1f}s)")
        results.append(result)
    return results


def format_table(results: List[CheckResult]) -> str:
    width = max(len(r.name) for r in results)
    lines = [f"{'check':<{width}}  result  {'value':>10}  {'threshold':>10}  detail"]
    for r in results:
        lines.append(f"{r.name:<{width}}  {'pass' if r.passed else 'FAIL':<6}  {r.value:>10.3e}  "
                     f"{r.threshold:>10.3e}  {r.detail}")
    return "\n".join(lines)
