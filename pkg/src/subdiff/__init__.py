"""Time-fractional convection-diffusion: forward solvers and
passive-measurement parameter reconstruction."""

from .forward import ProblemSpec, Solution, solve_fd, solve_fd_2d, solve_spectral
from .gauge import CoefficientSet, to_gauge
from .grid import Grid
from .invert import InversionConfig, ParamBlock, ParamLayout, run_inversion
from .mlf import MlfParams, duhamel_kernel, eval_mlf
from .observe import ObservationRecord, add_noise, extract
from .sturm_liouville import PotentialField, SpectralData, solve_eigen

__version__ = "0.1.0"

__all__ = [
    "CoefficientSet", "Grid", "InversionConfig", "MlfParams",
    "ObservationRecord", "ParamBlock", "ParamLayout", "PotentialField",
    "ProblemSpec", "Solution", "SpectralData", "add_noise", "duhamel_kernel",
    "eval_mlf", "extract", "run_inversion", "solve_eigen", "solve_fd",
    "solve_fd_2d", "solve_spectral", "to_gauge",
]
