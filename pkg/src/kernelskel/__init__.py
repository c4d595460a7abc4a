"""Proxy-point interpolative decompositions of kernel blocks and H² construction."""
from ._backend import BACKEND
from .compress import (CompressionResult, ErrorReport, compress_hybrid, compress_proxy,
                       diagnostics, evaluate_approx, refine_weights)
from .geometry import (Admissibility, AdaptiveGrid, Box, DomainPair, GridApprox, PointSet,
                       RandomUniform, ShellRegion, SurfaceGrid, admissible, cube_pair,
                       far_apart_pair, generate_points, nearby_pair, read_points, write_points)
from .h2 import H2Matrix, Mode, audit, build_h2, build_tree, dense_matrix, matvec
from .kernels import (CoincidentPointsError, InverseDistance, Kernel, Multiquadric, assemble,
                      make_degenerate, parse_kernel)
from .linalg import FixedRank, Threshold, aca, id_rows, ls_project, srrqr, truncated_svd
from .proxy import (IdSelectParams, ProxyCache, ProxySet, Random, SaturationError, Surface,
                    select_proxy, select_proxy_id)

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "CompressionResult", "ErrorReport", "compress_hybrid", "compress_proxy",
    "diagnostics", "evaluate_approx", "refine_weights", "Admissibility", "AdaptiveGrid",
    "Box", "DomainPair", "GridApprox", "PointSet", "RandomUniform", "ShellRegion",
    "SurfaceGrid", "admissible", "cube_pair", "far_apart_pair", "generate_points",
    "nearby_pair", "read_points", "write_points", "H2Matrix", "Mode", "audit", "build_h2",
    "build_tree", "dense_matrix", "matvec", "CoincidentPointsError",
    "InverseDistance", "Kernel", "Multiquadric", "assemble", "make_degenerate",
    "parse_kernel", "FixedRank", "Threshold", "aca", "id_rows", "ls_project", "srrqr",
    "truncated_svd", "IdSelectParams", "ProxyCache", "ProxySet", "Random",
    "SaturationError", "Surface", "select_proxy", "select_proxy_id",
]
