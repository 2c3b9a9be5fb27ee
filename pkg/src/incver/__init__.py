"""Branch-and-bound verifier for ReLU networks with incremental proof reuse.

The package verifies properties of the form ``for all x in a box,
c^T N(x) + d >= 0`` for feedforward ReLU networks, and can replay the
branching proof recorded on one network to verify a slightly perturbed
network faster (reuse, reorder, or prune-and-reorder the recorded tree).
"""

from incver.model import (
    Affine,
    Network,
    Relu,
    ReluId,
    load_network,
    perturb,
    quantize,
    save_network,
)
from incver.props import InputBox, OutputConstraint, Property, load_property, save_property
from incver.spectree import SpecTree, load_tree, prune, save_tree, singleton
from incver.heuristics import HeuristicConfig
from incver.verifier import (
    Mode,
    RunResult,
    RunVerdict,
    VerifierConfig,
    delta_bound,
    verify,
    verify_incremental,
)

__all__ = [
    "Affine",
    "Network",
    "Relu",
    "ReluId",
    "load_network",
    "perturb",
    "quantize",
    "save_network",
    "InputBox",
    "OutputConstraint",
    "Property",
    "load_property",
    "save_property",
    "SpecTree",
    "load_tree",
    "prune",
    "save_tree",
    "singleton",
    "HeuristicConfig",
    "Mode",
    "RunResult",
    "RunVerdict",
    "VerifierConfig",
    "delta_bound",
    "verify",
    "verify_incremental",
]

__version__ = "0.1.0"
