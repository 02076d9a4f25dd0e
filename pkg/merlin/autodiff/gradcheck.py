"""Central finite-difference gradient checks."""
import logging
from typing import Dict, Mapping, Optional

import numpy as np

from merlin.autodiff.primitives import PRIMITIVES, Primitive
from merlin.autodiff.tape import Tape
from merlin.core.errors import GradientError

logger = logging.getLogger(__name__)

RELATIVE_FLOOR = 1e-12


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    return np.abs(analytic - numeric) / np.maximum(RELATIVE_FLOOR, np.abs(analytic) + np.abs(numeric))


def grad_check(tape: Tape, point: Mapping[str, np.ndarray], epsilon: float = 1e-5,
               output: str = "loss", abs_tol: float = 0.0, max_entries: Optional[int] = None,
               rng: Optional[np.random.Generator] = None) -> float:
    """
    Compare reverse-mode gradients against central differences.

    Args:
        tape: Recorded float64 tape with a scalar output named `output`
        point: Slot values at which to differentiate; every key is checked
        epsilon: Finite-difference half step
        abs_tol: Entries whose analytic and numeric gradients are both below this count as exact
        max_entries: Check at most this many randomly chosen entries per slot
        rng: Generator used to choose entries when `max_entries` is set

    Returns:
        Maximum relative error over all checked entries
    """
    if epsilon <= 0:
        raise GradientError(f"epsilon must be positive, got {epsilon}")
    if tape.dtype != np.float64:
        raise GradientError(f"gradient checks need a float64 tape, got {tape.dtype}")
    rng = rng or np.random.default_rng(0)
    base = {name: np.array(value, dtype=np.float64) for name, value in point.items()}

    outputs = tape.eval(base)
    if np.asarray(outputs[output]).size != 1:
        raise GradientError(f"output {output} is not a scalar")
    analytic = tape.backward({output: None}, wrt=list(base))

    worst = 0.0
    try:
        for name, value in base.items():
            indices = np.arange(value.size)
            if max_entries is not None and value.size > max_entries:
                indices = rng.choice(value.size, size=max_entries, replace=False)
            grad = analytic[name].reshape(-1)
            for flat in indices:
                numeric = _central_difference(tape, base, name, int(flat), epsilon, output)
                a = float(grad[flat])
                if abs(a) < abs_tol and abs(numeric) < abs_tol:
                    continue
                err = float(relative_error(np.float64(a), np.float64(numeric)))
                if err > worst:
                    worst = err
                    logger.debug(f"{name}[{flat}] analytic={a:.6e} numeric={numeric:.6e} error={err:.3e}")
    finally:
        tape.eval(base)
    return worst


def _central_difference(tape: Tape, base: Dict[str, np.ndarray], name: str, flat: int,
                        epsilon: float, output: str) -> float:
    original = base[name]
    shifted = original.copy().reshape(-1)
    values = []
    for sign in (1.0, -1.0):
        shifted[flat] = original.reshape(-1)[flat] + sign * epsilon
        values.append(float(tape.eval({**base, name: shifted.reshape(original.shape)})[output]))
    return (values[0] - values[1]) / (2.0 * epsilon)


def check_primitive(primitive: Primitive, rng: np.random.Generator, points: int = 20,
                    epsilon: float = 1e-5) -> float:
    """
    Grad-check one primitive at `points` random inputs drawn from its sampler.

    The output is reduced against a fixed random projection so every output
    entry carries gradient. For non-differentiable primitives (stop-gradient)
    the analytic gradient must be exactly zero; the returned error is 0 or inf.
    """
    worst = 0.0
    for _ in range(points):
        inputs, attrs = primitive.sample(rng)
        tape = Tape("float64")
        slots = [tape.input(f"x{i}", x) for i, x in enumerate(inputs)]
        out = tape.apply(primitive, *slots, **attrs)
        projection = tape.constant(rng.normal(size=out.shape))
        tape.mark_output("loss", (out * projection).sum())
        point = {f"x{i}": x for i, x in enumerate(inputs)}
        if not primitive.differentiable:
            grads = tape.backward({"loss": None}, wrt=list(point))
            if any(np.any(g != 0) for g in grads.values()):
                return float("inf")
            continue
        worst = max(worst, grad_check(tape, point, epsilon))
    return worst


def check_all_primitives(seed: int = 0, points: int = 20, epsilon: float = 1e-5) -> Dict[str, float]:
    rng = np.random.default_rng(seed)
    return {name: check_primitive(p, rng, points, epsilon) for name, p in sorted(PRIMITIVES.items())}
