"""Personalized online ensemble forecasting for panels of time series."""

from . import bench, core, cv, engine, learners, risk, selector, simgen
from ._kernels import BACKEND as KERNEL_BACKEND
from .errors import POSLError

__version__ = "0.1.0"

__all__ = ["bench", "core", "cv", "engine", "learners", "risk", "selector", "simgen",
           "KERNEL_BACKEND", "POSLError", "__version__"]
