"""Scripting frontend for nyssl: array-in/array-out bindings plus figure
scripts that render the pipeline's CSV artifacts."""

from .bindings import BindingError, BoundModel, py_embed, py_influence, py_probe, py_train
from .plots import PlotError, plot_influence, plot_landmark_grid, plot_spectrum

__all__ = [
    "BindingError",
    "BoundModel",
    "py_embed",
    "py_influence",
    "py_probe",
    "py_train",
    "PlotError",
    "plot_influence",
    "plot_landmark_grid",
    "plot_spectrum",
]
