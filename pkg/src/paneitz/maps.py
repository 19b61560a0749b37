"""Sphere-valued maps, Paneitz-map residuals and the metric ``e(U)^{1/2} g``.

A map ``U = (U_1, ..., U_p)`` is given by the basis coefficients of its
components. It is a Paneitz map when ``P_g U = e_g(U) U`` with the
pointwise density ``e_g`` of :func:`paneitz.operator.density`.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .eigen import DEFAULT_CLUSTER_TOL, solve
from .errors import ConfigurationError, HypothesisViolationError, InvalidMapError, NumericalError
from .geometry import ConformalFactor, ManifoldBackend
from .operator import apply_paneitz, assemble, density

__all__ = [
    "SphereValuedMap",
    "MapMetricReport",
    "SPHERE_CONSTRAINT_TOL",
    "paneitz_map_residual",
    "map_energy",
    "metric_from_map",
]

SPHERE_CONSTRAINT_TOL = 1e-6


@dataclass(frozen=True)
class SphereValuedMap:
    """Components as rows of a ``(p, basis_dim)`` coefficient array, ``p >= 2``."""

    components: np.ndarray

    def __post_init__(self):
        comps = np.array(self.components, dtype=float)
        if comps.ndim != 2 or comps.shape[0] < 2:
            raise ConfigurationError("a sphere-valued map needs at least two components")
        if not np.all(np.isfinite(comps)):
            raise ConfigurationError("map coefficients must be finite")
        comps.flags.writeable = False
        object.__setattr__(self, "components", comps)

    @property
    def p(self) -> int:
        return self.components.shape[0]

    def values(self, backend: ManifoldBackend) -> np.ndarray:
        self._match(backend)
        return self.components @ backend.values

    def constraint_violation(self, backend: ManifoldBackend) -> float:
        """``max_q |sum_i U_i(x_q)^2 - 1|``."""
        v = self.values(backend)
        return float(np.max(np.abs(np.sum(v * v, axis=0) - 1.0)))

    def rotated(self, R) -> "SphereValuedMap":
        """The map ``R U`` for an orthogonal ``p x p`` matrix ``R``."""
        return SphereValuedMap(np.asarray(R, dtype=float) @ self.components)

    def _match(self, backend):
        if self.components.shape[1] != backend.basis_dim:
            raise ConfigurationError(
                f"map has {self.components.shape[1]} coefficients, backend basis has {backend.basis_dim}")

    def to_json(self) -> dict:
        return {"p": self.p, "components": self.components.tolist()}

    @classmethod
    def from_json(cls, d) -> "SphereValuedMap":
        comps = d["components"]
        if "p" in d and int(d["p"]) != len(comps):
            raise ConfigurationError("map JSON: p does not match the number of components")
        return cls(np.asarray(comps, dtype=float))


def _checked(backend, umap, tol=SPHERE_CONSTRAINT_TOL):
    bad = umap.constraint_violation(backend)
    if bad > tol:
        raise InvalidMapError(f"map leaves the unit sphere by {bad:.3g} at a node (tolerance {tol:g})")


def paneitz_map_residual(backend: ManifoldBackend, umap: SphereValuedMap) -> float:
    """``max_q |(P_g U)(x_q) - e_g(U)(x_q) U(x_q)|`` with the Euclidean norm on R^p.

    Taking the norm of the whole residual vector at each node keeps the value
    invariant under rotations of the target sphere.

    Raises
    ------
    InvalidMapError
        If the map leaves the unit sphere by more than 1e-6 at a node.
    """
    _checked(backend, umap)
    e = density(backend, umap.components)
    PU = apply_paneitz(backend, umap.components) @ backend.values
    return float(np.max(np.linalg.norm(PU - e * umap.values(backend), axis=0)))


def map_energy(backend: ManifoldBackend, umap: SphereValuedMap) -> float:
    """Sum of the Paneitz energies of the components, from the energy matrix."""
    K = assemble(backend).energy
    C = umap.components
    return float(np.einsum("ia,ab,ib->", C, K, C))


@dataclass(frozen=True)
class MapMetricReport:
    """Where eigenvalue 1 sits in the spectrum of ``e(U)^{1/2} g``."""

    k: int
    multiplicity: int
    eigenvalue: float
    component_rayleigh: list
    component_residuals: list

    def to_json(self) -> dict:
        return {"k": self.k, "multiplicity": self.multiplicity, "eigenvalue": self.eigenvalue,
                "component_rayleigh": list(self.component_rayleigh),
                "component_residuals": list(self.component_residuals)}


def metric_from_map(backend: ManifoldBackend, umap: SphereValuedMap, tol: float = 1e-6,
                    cluster_tol: float = DEFAULT_CLUSTER_TOL):
    """Conformal factor ``w = log(e_g(U)) / 4`` and the eigen-check for it.

    In the metric ``e^{2w} g = e_g(U)^{1/2} g`` each component of a Paneitz
    map solves the eigenproblem with eigenvalue 1. Both the Rayleigh quotient
    and the relative residual ``|K c - M c| / |M c|`` of every component must
    be within ``tol``. ``k`` is the first index of the cluster containing 1.

    Raises
    ------
    HypothesisViolationError
        If ``e_g(U) <= 0`` at some node; the worst node is reported.
    NumericalError
        If a component fails the eigen-check.
    """
    _checked(backend, umap)
    e = density(backend, umap.components)
    worst = int(np.argmin(e))
    if e[worst] <= 0:
        raise HypothesisViolationError(
            f"energy density is not positive: e = {e[worst]:.6g} at node {worst} "
            f"{np.array2string(backend.nodes[worst], precision=6)}",
            node=worst, value=float(e[worst]))
    w = ConformalFactor(0.25 * np.log(e))
    system = assemble(backend, w)
    rq, res = [], []
    for c in umap.components:
        Mc = system.mass @ c
        if not np.any(c):
            continue
        rq.append(float(c @ system.energy @ c) / float(c @ Mc))
        res.append(float(np.linalg.norm(system.energy @ c - Mc) / np.linalg.norm(Mc)))
    if max(abs(r - 1) for r in rq) > tol or max(res) > tol:
        raise NumericalError(
            f"components are not eigenfunctions with eigenvalue 1 (worst residual {max(res):.3g})")
    spec = solve(system, cluster_tol=cluster_tol)
    hit = int(np.argmin(np.abs(spec.eigenvalues - 1.0))) + 1
    if abs(spec.eigenvalue(hit) - 1.0) > tol:
        raise NumericalError("eigenvalue 1 not found in the re-weighted spectrum")
    group = spec.cluster_indices(hit)
    report = MapMetricReport(group[0], len(group), spec.eigenvalue(group[0]), rq, res)
    return w, report
