"""Unsupervised learning of coupled ground metrics between features and samples."""

__version__ = "0.1.0"

from .core import (
    FEATURES,
    SAMPLES,
    CostMatrix,
    Dataset,
    MatrixClass,
    normalize_dataset,
    scaled_identity_reference,
    scaled_l1_reference,
    validate_class,
)
from .data import SyntheticSpec, generate_synthetic, load_csv
from .evaluation import asw, dunn_index, euclidean_baseline
from .laplacian import LaplacianGroundMap, solve_laplacian
from .mahalanobis import KernelGroundMap, RadialKernel
from .ot import OtGroundMap, SinkhornParams, TransportProblem, entropic_ot, exact_ot, sinkhorn_divergence
from .solvers import SolverConfig, Verdict, solve

__all__ = [
    "SAMPLES", "FEATURES", "CostMatrix", "Dataset", "MatrixClass", "normalize_dataset", "scaled_identity_reference",
    "scaled_l1_reference", "validate_class", "SyntheticSpec", "generate_synthetic", "load_csv",
    "asw", "dunn_index", "euclidean_baseline", "LaplacianGroundMap", "solve_laplacian",
    "KernelGroundMap", "RadialKernel", "OtGroundMap", "SinkhornParams", "TransportProblem",
    "entropic_ot", "exact_ot", "sinkhorn_divergence", "SolverConfig", "Verdict", "solve",
]
