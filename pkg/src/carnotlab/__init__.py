"""Numerical laboratory for step-2 Carnot group geometry, Brownian rough-path
sampling, and discretized transport costs."""

__version__ = "0.1.0"

from .groups import (
    CarnotStructure,
    GroupElement,
    dilate,
    element,
    gauge_distance,
    h_type_check,
    identity,
    inverse,
    preset,
    preset_names,
    product,
    w_apply,
)

__all__ = [
    "CarnotStructure",
    "GroupElement",
    "dilate",
    "element",
    "gauge_distance",
    "h_type_check",
    "identity",
    "inverse",
    "preset",
    "preset_names",
    "product",
    "w_apply",
    "__version__",
]
