"""Transfer-operator numerics on dyadic grids."""

__version__ = "0.1.0"

from .core import (CellMeasure, DyadicGrid, GridFunction, compose, inner, integrate, pushforward,
                   rn_derivative, tv_distance)
from .errors import XferopsError
from .maps import PiecewiseAffineMap, doubling, reflection, u_map
from .xferop import (BranchSystem, FilterDoubling, HaarDoubling, KernelG, MeanIntegral, Normalized,
                     TransferOp, UFamily, check_pullout, default_sigma, from_descriptor, normalize)
from .invmeasures import classify, harmonic_function, invariant_measure, rn_chain
from .pathspace import PathSpec, moment_exact, sample_paths
from .mra import decompose, haar_expand
from .uhilbert import HalfDensity, ergodic_average, r_hat, s_hat, uh_inner
from .ifs import AffineIFS, chaos_game, equilibrium_measure, u_family

__all__ = [
    "CellMeasure", "DyadicGrid", "GridFunction", "compose", "inner", "integrate", "pushforward",
    "rn_derivative", "tv_distance", "XferopsError", "PiecewiseAffineMap", "doubling", "reflection",
    "u_map", "BranchSystem", "FilterDoubling", "HaarDoubling", "KernelG", "MeanIntegral",
    "Normalized", "TransferOp", "UFamily", "check_pullout", "default_sigma", "from_descriptor",
    "normalize", "classify", "harmonic_function", "invariant_measure", "rn_chain", "PathSpec",
    "moment_exact", "sample_paths", "decompose", "haar_expand", "HalfDensity", "ergodic_average",
    "r_hat", "s_hat", "uh_inner", "AffineIFS", "chaos_game", "equilibrium_measure", "u_family",
]
