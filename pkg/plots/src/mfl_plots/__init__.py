"""Batch figure rendering for mfl-minimax CSV artifacts."""

__version__ = "0.1.0"

from .render import PlotSpec, PlotInputError, render

__all__ = ["PlotSpec", "PlotInputError", "render"]
