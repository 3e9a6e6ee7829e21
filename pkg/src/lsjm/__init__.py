"""Variational latent space models for single- and multi-view networks."""

from .joint import FusedPosterior, LsjmFit, align, fit_lsjm, fuse
from .lsm import FitConfig, FitReport, PriorConfig, ViewVariationalState, fit_lsm, link_probabilities
from .network import AdjacencyView, MultiplexNetwork, NodeSet, build_multiplex

__all__ = [
    "AdjacencyView", "FitConfig", "FitReport", "FusedPosterior", "LsjmFit", "MultiplexNetwork",
    "NodeSet", "PriorConfig", "ViewVariationalState", "align", "build_multiplex", "fit_lsjm",
    "fit_lsm", "fuse", "link_probabilities",
]
