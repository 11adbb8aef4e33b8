"""Bilevel learning of spatially varying TGV weights for image denoising."""
from .exceptions import ConvergenceError, SolverError
from .fields import GridSpec, ScalarField, SymTensorField, VectorField
from .lower_dual import DualSolverConfig, recover_image, solve_lower_dual
from .lower_pd import KKTState, PDSolverConfig, pd_newton_solve
from .upper import CorridorSpec, sigma_corridor
from .bilevel_dual import BilevelDualConfig, run_bilevel_dual
from .bilevel_pd import BilevelPDConfig, run_bilevel_pd
from .metrics import add_gaussian_noise, make_phantom, psnr, ssim

__version__ = "0.1.0"
