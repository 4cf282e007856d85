"""Quasi-ML MIMO detection by semidefinite relaxation."""

from .baseline import exhaustive_ml, sphere_decode, zero_forcing
from .detect import PipelineConfig, parse_method, run_method, sdp_detect
from .model import Constellation, DecodeResult, SystemInstance, build_expansion, expansion_for, get_constellation
from .reduce import lll_reduce, reduce_system
from .relax import assemble_model, build_bqp, build_projection
from .rounding import RoundingConfig, round_solution
from .soft import soft_decode
from .solver import SolverConfig, solve

__version__ = "0.1.0"
