"""Prevalence estimation under label shift."""
from .core import LabeledDataset, ProbabilityVector, UnlabeledDataset, gamma_star
from .selse import SelseConfig, SelseEstimate, quantify

__all__ = ["LabeledDataset", "ProbabilityVector", "UnlabeledDataset", "gamma_star", "SelseConfig", "SelseEstimate", "quantify"]
__version__ = "0.1.0"
