"""Robust function-on-function regression with quadratic and interaction terms."""

from .errors import RobFuncError
from .fd import FunctionalSample, Grid, read_csv, write_csv
from .fpca import classical_fpca_fit, rfpca_fit
from .model import TermSet, fit, load_model, predict, reconstruct_beta, reconstruct_gamma, save_model
from .scale import m_scale, tau_scale
from .selection import forward_select, rbic_search
from .tau import tau_fit

__version__ = "0.1.0"

__all__ = [
    "RobFuncError",
    "FunctionalSample",
    "Grid",
    "read_csv",
    "write_csv",
    "rfpca_fit",
    "classical_fpca_fit",
    "TermSet",
    "fit",
    "predict",
    "reconstruct_beta",
    "reconstruct_gamma",
    "save_model",
    "load_model",
    "m_scale",
    "tau_scale",
    "rbic_search",
    "forward_select",
    "tau_fit",
]
