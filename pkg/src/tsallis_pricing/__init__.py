"""Pricing bounded claims in an incomplete Brownian market with Tsallis relative entropy."""
from .market import MarketModel, MeasureSpec, PathEnsemble, TimeGrid, simulate
from .qcalc import DomainError, QGammaParams, driver_f, mu, q_exp, q_ln

__version__ = "0.1.0"

__all__ = ["DomainError", "MarketModel", "MeasureSpec", "PathEnsemble", "QGammaParams", "TimeGrid",
           "driver_f", "mu", "q_exp", "q_ln", "simulate", "__version__"]
