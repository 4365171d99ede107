"""Numerical toolkit for the critical Riesz-potential system u = I(v^q), v = I(u^p)."""

__version__ = "0.1.0"

from .exponents import ExponentConfig, choose_r, identity_audit, make_config, make_config_from_p0
from .radial_grid import RadialFunction, RadialGrid, fit_tail, lp_norm, make_grid
from .riesz import RieszKernelTable, apply_riesz, brute_force_riesz, build_kernel_table

__all__ = [
    "ExponentConfig",
    "RadialFunction",
    "RadialGrid",
    "RieszKernelTable",
    "apply_riesz",
    "brute_force_riesz",
    "build_kernel_table",
    "choose_r",
    "fit_tail",
    "identity_audit",
    "lp_norm",
    "make_config",
    "make_config_from_p0",
    "make_grid",
]
