from merlin.models.base import Module, ParamSpec, Params
from merlin.models.baselines import RLLSTM, RLMem
from merlin.models.mbp import MBP, DiagGaussian, kl_diag_gauss, mbp_window_loss, return_targets
from merlin.models.memory import MemoryState, content_read, write
from merlin.models.policy import Policy, gae, policy_loss

# Export the network components
__all__ = [
    "Module",
    "ParamSpec",
    "Params",
    "MBP",
    "DiagGaussian",
    "kl_diag_gauss",
    "mbp_window_loss",
    "return_targets",
    "MemoryState",
    "content_read",
    "write",
    "Policy",
    "gae",
    "policy_loss",
    "RLLSTM",
    "RLMem",
]
