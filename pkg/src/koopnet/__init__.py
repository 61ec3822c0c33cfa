"""Modular Koopman surrogates for interconnected nonlinear systems."""
from .graph import Digraph, condensation, has_vertex_shared_by_cycles, strong_components, topological_sort
from .systems import Box, NetworkSystem, integrate, local_flow, full_vector_field
from .benchmarks import make_benchmark
from .dictionary import make_monomial_dictionary, make_thin_plate_rbf_dictionary
from .learners import (NetworkKoopmanModel, edmd_fit, gedmd_fit, ledmd_fit, medmd_fit, mgedmd_fit, sedmd_fit,
                       network_edmd_fit)
from .predict import predict, prediction_error

__version__ = "0.1.0"

__all__ = ["Digraph", "condensation", "has_vertex_shared_by_cycles", "strong_components", "topological_sort",
           "Box", "NetworkSystem", "integrate", "local_flow", "full_vector_field", "make_benchmark",
           "make_monomial_dictionary", "make_thin_plate_rbf_dictionary", "NetworkKoopmanModel", "edmd_fit",
           "gedmd_fit", "ledmd_fit", "medmd_fit", "mgedmd_fit", "sedmd_fit", "network_edmd_fit", "predict",
           "prediction_error"]
