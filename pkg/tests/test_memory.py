import numpy as np
import pytest

from merlin.core.errors import ShapeError
from merlin.models.memory import (
    MemoryInterface,
    MemoryState,
    allocate,
    content_read,
    make_keys,
    retroactive_update,
    update_usage,
    write,
)
from merlin.verification import (
    check_allocation,
    check_content_read,
    check_memory_append,
    check_read_simplex,
    check_retroactive,
    check_retroactive_inert,
)


def write_all(tape, zs, rows, gamma):
    mem = MemoryState.blank(rows, 2 * zs.shape[1], "float64").on(tape)
    for z in zs:
        mem = write(mem, tape.constant(z), gamma)
    return mem


def test_append_fills_rows_in_order(tape, rng):
    zs = rng.normal(size=(3, 2))
    mem = write_all(tape, zs, 4, 1.0)
    matrix = mem.matrix.value
    np.testing.assert_array_equal(matrix[:3, :2], zs)
    np.testing.assert_array_equal(matrix[3], np.zeros(4))
    np.testing.assert_array_equal(mem.v_wr, [0.0, 0.0, 1.0, 0.0])
    assert mem.t == 3


@pytest.mark.parametrize("gamma", [0.5, 0.9, 0.96])
def test_retroactive_half_is_discounted_sum(tape, rng, gamma):
    zs = rng.normal(size=(5, 3))
    matrix = write_all(tape, zs, 5, gamma).matrix.value
    for i in range(5):
        expected = np.zeros(3)
        for j in range(i + 1, 5):
            expected += (1.0 - gamma) * gamma ** (j - i - 1) * zs[j]
        np.testing.assert_allclose(matrix[i, 3:], expected, atol=1e-10)


def test_gamma_one_leaves_retroactive_half_blank(tape, rng):
    matrix = write_all(tape, rng.normal(size=(4, 3)), 4, 1.0).matrix.value
    assert np.all(matrix[:, 3:] == 0.0)


def test_retroactive_update_formula():
    v_ret = np.array([0.2, 0.0])
    v_wr = np.array([0.0, 1.0])
    np.testing.assert_allclose(retroactive_update(v_ret, v_wr, 0.9), [0.18, 0.1])


def test_allocation_prefers_fresh_rows_then_least_used():
    mem = MemoryState.blank(3, 2)
    assert allocate(mem) == 0
    full = MemoryState(mem.matrix, np.array([0.7, 0.3, 0.3]), mem.v_wr, mem.v_ret, t=3)
    assert allocate(full) == 1


def test_overwrite_clears_row_and_usage(tape, rng):
    zs = rng.normal(size=(3, 2))
    mem = write_all(tape, zs, 3, 0.5)
    mem = MemoryState(mem.matrix, np.array([2.0, 0.1, 5.0]), mem.v_wr, mem.v_ret, mem.t)
    z = rng.normal(size=2)
    after = write(mem, tape.constant(z), 0.5)
    np.testing.assert_allclose(after.matrix.value[1], np.append(z, 0.0))
    assert after.usage[1] == 0.0
    assert after.v_ret[1] == 0.0
    assert after.overwrites == 1
    np.testing.assert_allclose(after.matrix.value[0, :2], zs[0])


def test_usage_accumulates_read_weights(tape):
    mem = MemoryState.blank(3, 2)
    weights = tape.constant(np.array([[0.2, 0.3, 0.5], [1.0, 0.0, 0.0]]))
    updated = update_usage(mem, [weights, tape.constant(np.array([[0.0, 0.5, 0.5]]))])
    np.testing.assert_allclose(updated.usage, [1.2, 0.8, 1.0])
    np.testing.assert_array_equal(mem.usage, np.zeros(3))


def test_read_weights_are_simplex(tape, rng):
    mem = MemoryState(tape.constant(rng.normal(size=(6, 4))), np.zeros(6), np.zeros(6), np.zeros(6))
    result = content_read(mem, tape.constant(rng.normal(size=(2, 4))), tape.constant(np.array([1.0, 30.0])))
    w = result.weights.value
    assert w.shape == (2, 6)
    assert np.all(w >= 0)
    np.testing.assert_allclose(w.sum(axis=1), 1.0, atol=1e-12)
    assert result.flat.shape == (8,)


def test_sharp_key_focuses_on_matching_row(tape, rng):
    matrix = rng.normal(size=(5, 4))
    mem = MemoryState(tape.constant(matrix), np.zeros(5), np.zeros(5), np.zeros(5))
    result = content_read(mem, tape.constant(matrix[3:4]), tape.constant(np.array([2000.0])))
    assert int(np.argmax(result.weights.value[0])) == 3
    np.testing.assert_allclose(result.vectors.value[0], matrix[3], atol=1e-3)


def test_key_width_must_match_word(tape):
    mem = MemoryState.blank(3, 4, "float64")
    with pytest.raises(ShapeError):
        content_read(mem, tape.constant(np.ones((1, 3))), tape.constant(np.ones(1)))


def test_write_rejects_mismatched_z(tape):
    mem = MemoryState.blank(3, 4, "float64")
    with pytest.raises(ShapeError):
        write(mem, tape.constant(np.ones(3)), 1.0)


def test_interface_produces_keys_and_positive_strengths(tape, rng):
    interface = MemoryInterface("iface", 5, 2, 4)
    p = tape.bind_params(interface.init_params(rng, "float64"))
    keys, betas = make_keys(interface, p, tape.input("h", rng.normal(size=5)))
    assert keys.shape == (2, 4)
    assert betas.shape == (2,)
    assert np.all(betas.value > 0)


def test_reads_of_written_rows_are_differentiable(tape, rng):
    z = tape.param("z", rng.normal(size=2))
    mem = write(MemoryState.blank(3, 4, "float64").on(tape), z, 1.0)
    result = content_read(mem, tape.constant(rng.normal(size=(1, 4))), tape.constant(np.array([2.0])))
    grads = tape.backward({result.vectors.sum(): None}, wrt=["z"])
    assert np.any(grads["z"] != 0)


def test_stopped_view_blocks_gradient(tape, rng):
    z = tape.param("z", rng.normal(size=2))
    mem = write(MemoryState.blank(3, 4, "float64").on(tape), z, 1.0).stopped()
    result = content_read(mem, tape.constant(rng.normal(size=(1, 4))), tape.constant(np.array([2.0])))
    grads = tape.backward({result.vectors.sum(): None}, wrt=["z"])
    np.testing.assert_array_equal(grads["z"], np.zeros(2))


@pytest.mark.parametrize("check", [
    check_memory_append,
    check_retroactive,
    check_retroactive_inert,
    check_read_simplex,
    check_content_read,
])
def test_memory_battery(check):
    assert check(seed=5).passed


def test_allocation_battery():
    assert check_allocation().passed
