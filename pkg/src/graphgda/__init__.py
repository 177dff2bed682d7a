"""Gradual domain adaptation for attributed graphs along approximate FGW geodesics."""
from .errors import InvalidArgument, InvalidState, NumericalFailure, Unsupported
from .graph import Graph, attribute_distance_matrix, load_graph, load_graph_dir, save_graph

__version__ = "0.1.0"

__all__ = [
    "Graph",
    "InvalidArgument",
    "InvalidState",
    "NumericalFailure",
    "Unsupported",
    "attribute_distance_matrix",
    "load_graph",
    "load_graph_dir",
    "save_graph",
    "__version__",
]
