"""Neural substrate: dense nets, coupling flows, AdamW steps, weight averaging."""
from orlearners.nn.dense import DTYPE, DenseNet, OutputActivation, as_tensor, bound_lipschitz, to_numpy
from orlearners.nn.flow import CouplingFlow, flow_forward, flow_inverse
from orlearners.nn.serialization import load_parameters, read_metadata, save_parameters
from orlearners.nn.training import EmaTracker, grad_step, make_optimizer, minibatches, run_epochs

__all__ = [
    "DTYPE",
    "CouplingFlow",
    "DenseNet",
    "EmaTracker",
    "OutputActivation",
    "as_tensor",
    "bound_lipschitz",
    "flow_forward",
    "flow_inverse",
    "grad_step",
    "load_parameters",
    "make_optimizer",
    "minibatches",
    "read_metadata",
    "run_epochs",
    "save_parameters",
    "to_numpy",
]
