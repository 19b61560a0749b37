"""Spectral-Galerkin Paneitz operator on S^4, T^4 and S^2 x S^2.

The public entry points live in the submodules: :mod:`paneitz.geometry`
(backends, quadrature, conformal factors), :mod:`paneitz.operator`
(assembly), :mod:`paneitz.eigen` (generalized eigensolver),
:mod:`paneitz.conformal` (volume normalisation, curvature change, Moebius
balancing), :mod:`paneitz.extremal` (eigenvalue derivatives, certificates,
ascent), :mod:`paneitz.maps` (Paneitz maps) and :mod:`paneitz.cli`.
"""
from __future__ import annotations

__version__ = "0.1.0"

from .conformal import hersch_balance, normalize_volume
from .eigen import SpectrumResult, solve
from .errors import PaneitzError
from .geometry import ConformalFactor, build_s2xs2, build_sphere, build_torus
from .operator import PaneitzSystem, assemble

__all__ = [
    "__version__",
    "PaneitzError",
    "ConformalFactor",
    "build_sphere",
    "build_torus",
    "build_s2xs2",
    "PaneitzSystem",
    "assemble",
    "SpectrumResult",
    "solve",
    "normalize_volume",
    "hersch_balance",
]
