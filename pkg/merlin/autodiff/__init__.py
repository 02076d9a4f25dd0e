from merlin.autodiff.gradcheck import check_all_primitives, grad_check
from merlin.autodiff.primitives import PRIMITIVES
from merlin.autodiff.tape import Tape, Tensor, backward, eval

__all__ = ["PRIMITIVES", "Tape", "Tensor", "backward", "check_all_primitives", "eval", "grad_check"]
