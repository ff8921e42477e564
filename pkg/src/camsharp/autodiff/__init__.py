"""Higher-order reverse-mode autodiff over a static float64 graph."""

from . import ops
from .gradients import ADJOINTS, build_gradient_graph, gradients
from .graph import (
    DomainError,
    Graph,
    GraphError,
    Node,
    NonFiniteError,
    ShapeError,
    Tensor,
    UnboundInputError,
    UnsupportedOpError,
    eval_forward,
)
from .ops import FORWARD

SUPPORTED_OPS = frozenset(FORWARD) | {"input", "const"}

__all__ = [
    "ADJOINTS",
    "DomainError",
    "FORWARD",
    "Graph",
    "GraphError",
    "Node",
    "NonFiniteError",
    "SUPPORTED_OPS",
    "ShapeError",
    "Tensor",
    "UnboundInputError",
    "UnsupportedOpError",
    "build_gradient_graph",
    "eval_forward",
    "gradients",
    "ops",
]
