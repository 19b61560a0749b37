"""Weak-form Paneitz operator: energy and weighted mass matrices.

The operator is never applied through its divergence form. Its bilinear
energy

    E(f, h) = int  Lap f Lap h + (2/3) R <grad f, grad h> - 2 Ric(grad f, grad h)

is assembled against the base metric, and the conformal factor only enters
through the mass matrix ``int e^{4w} f h``.
"""
from __future__ import annotations

from dataclasses import dataclass
import weakref

import numpy as np

from .errors import ConfigurationError, TruncationError, UnsupportedBackendError
from .geometry import NODE_CHUNK, ConformalFactor, ManifoldBackend, SphereBackend

__all__ = [
    "PaneitzSystem",
    "assemble",
    "energy_matrix",
    "mass_matrix",
    "energy_integrand_tensor",
    "apply_paneitz",
    "apply_paneitz_sphere",
    "leibniz_sides",
    "leibniz_residual",
    "density",
    "coefficient_degree",
]


@dataclass(frozen=True)
class PaneitzSystem:
    """Energy matrix ``energy`` (K) and weighted mass matrix ``mass`` (M_w)."""

    backend: ManifoldBackend
    energy: np.ndarray
    mass: np.ndarray
    conformal_factor: ConformalFactor

    @property
    def dim(self) -> int:
        return self.energy.shape[0]


def energy_integrand_tensor(backend: ManifoldBackend) -> np.ndarray:
    """Constant matrix ``T`` with ``(2/3)R<u,v> - 2Ric(u,v) = u @ T @ v``."""
    R = float(backend.scalar_curvature[0])
    return (2.0 / 3.0) * R * np.eye(backend.dim_ambient) - 2.0 * backend.ricci


def _chunked_gram(left, right, weights):
    """sum_q weights_q left[:, q, ...] . right[:, q, ...] accumulated in node order."""
    out = np.zeros((left.shape[0], right.shape[0]))
    Q = left.shape[1]
    for start in range(0, Q, NODE_CHUNK):
        sl = slice(start, min(start + NODE_CHUNK, Q))
        lw = left[:, sl] * weights[sl].reshape((-1,) + (1,) * (left.ndim - 2))
        out += lw.reshape(left.shape[0], -1) @ right[:, sl].reshape(right.shape[0], -1).T
    return out


def energy_matrix(backend: ManifoldBackend) -> np.ndarray:
    """Symmetric energy matrix of the base metric."""
    T = energy_integrand_tensor(backend)
    K = _chunked_gram(backend.laplacians, backend.laplacians, backend.weights)
    if np.any(T):
        K += _chunked_gram(backend.gradients @ T, backend.gradients, backend.weights)
    return 0.5 * (K + K.T)


def mass_matrix(backend: ManifoldBackend, w: ConformalFactor) -> np.ndarray:
    dens = backend.weights * w.volume_density
    M = _chunked_gram(backend.values, backend.values, dens)
    return 0.5 * (M + M.T)


_ENERGY_CACHE: "weakref.WeakKeyDictionary[ManifoldBackend, np.ndarray]" = weakref.WeakKeyDictionary()


def assemble(backend: ManifoldBackend, w: ConformalFactor | None = None) -> PaneitzSystem:
    """Assemble K and M_w. K depends on the base metric only.

    The energy matrix is computed once per backend and reused, so every
    system built on one backend shares the identical K.
    """
    if w is None:
        w = ConformalFactor.zero(backend)
    if w.node_values.shape != (backend.n_nodes,):
        raise ConfigurationError(
            f"conformal factor has {w.node_values.size} node values, backend has {backend.n_nodes}")
    if w.coeffs is not None and w.coeffs.shape != (backend.basis_dim,):
        raise ConfigurationError("conformal factor coefficients do not match backend basis")
    K = _ENERGY_CACHE.get(backend)
    if K is None:
        K = energy_matrix(backend)
        K.flags.writeable = False
        _ENERGY_CACHE[backend] = K
    M = mass_matrix(backend, w)
    M.flags.writeable = False
    return PaneitzSystem(backend, K, M, w)


def apply_paneitz(backend: ManifoldBackend, coeffs) -> np.ndarray:
    """Coefficients of ``P_g f`` for ``f`` in the basis.

    On every shipped backend the Laplace eigenbasis diagonalises P_g, with
    closed-form diagonal ``backend.paneitz_diagonal``.
    """
    coeffs = np.asarray(coeffs, dtype=float)
    if coeffs.shape[-1] != backend.basis_dim:
        raise ConfigurationError("coefficient length mismatch")
    return coeffs * backend.paneitz_diagonal


def apply_paneitz_sphere(backend: ManifoldBackend, coeffs) -> np.ndarray:
    """Round-sphere operator ``Lap^2 - (2/r^2) Lap`` acting degree by degree."""
    if not isinstance(backend, SphereBackend):
        raise UnsupportedBackendError("apply_paneitz_sphere requires a sphere backend")
    coeffs = np.asarray(coeffs, dtype=float)
    if coeffs.shape[-1] != backend.basis_dim:
        raise ConfigurationError("coefficient length mismatch")
    mu = backend.laplace_eigenvalue
    return coeffs * (mu * (mu + 2.0 / backend.radius**2))


def coefficient_degree(backend: ManifoldBackend, coeffs, tol: float = 1e-12) -> int:
    """Highest basis degree carrying a non-negligible coefficient."""
    coeffs = np.asarray(coeffs, dtype=float)
    scale = max(1.0, float(np.max(np.abs(coeffs), initial=0.0)))
    mask = np.abs(coeffs) > tol * scale
    return int(backend.degrees[mask].max(initial=0))


def leibniz_sides(backend: SphereBackend, phi, psi):
    """Both sides of the product rule for P_g, evaluated at the nodes.

    The left side projects the product onto the basis and applies the
    operator; the right side is assembled term by term::

        psi P phi + phi P psi + 2 Lap phi Lap psi + 2 <grad Lap phi, grad psi>
        + 2 <grad Lap psi, grad phi> + 2 Lap <grad phi, grad psi>
        - (4/3) R <grad phi, grad psi> + 4 Ric(grad phi, grad psi)
    """
    if not isinstance(backend, SphereBackend):
        raise UnsupportedBackendError("Leibniz check is implemented on the sphere backend")
    phi = np.asarray(phi, dtype=float)
    psi = np.asarray(psi, dtype=float)
    need = coefficient_degree(backend, phi) + coefficient_degree(backend, psi)
    if need > backend.max_degree:
        raise TruncationError(
            f"product has degree {need} > max_degree {backend.max_degree}", required_degree=need)
    mu = backend.laplace_eigenvalue
    f, h = backend.evaluate(phi), backend.evaluate(psi)
    lhs = backend.evaluate(apply_paneitz_sphere(backend, backend.project(f * h)))

    gf, gh = backend.gradient_of(phi), backend.gradient_of(psi)
    lap_f, lap_h = backend.laplacian_of(phi), backend.laplacian_of(psi)
    g_lap_f = backend.gradient_of(-mu * phi)
    g_lap_h = backend.gradient_of(-mu * psi)
    inner = np.einsum("qi,qi->q", gf, gh)
    lap_inner = backend.laplacian_of(backend.project(inner))
    R = backend.scalar_curvature
    rhs = (h * backend.evaluate(apply_paneitz_sphere(backend, phi))
           + f * backend.evaluate(apply_paneitz_sphere(backend, psi))
           + 2 * lap_f * lap_h
           + 2 * np.einsum("qi,qi->q", g_lap_f, gh)
           + 2 * np.einsum("qi,qi->q", g_lap_h, gf)
           + 2 * lap_inner
           - (4.0 / 3.0) * R * inner
           + 4 * backend.ricci_on_gradients(gf, gh))
    return lhs, rhs


def leibniz_residual(backend: SphereBackend, phi, psi) -> float:
    """Max-norm difference between the two sides of the product rule."""
    lhs, rhs = leibniz_sides(backend, phi, psi)
    return float(np.max(np.abs(lhs - rhs)))


def density(backend: ManifoldBackend, components) -> np.ndarray:
    """Pointwise energy density of a map ``U = (U_1, ..., U_p)``::

        e(U) = sum_i U_i Lap^2 U_i + (2/3) R |grad U_i|^2 - 2 Ric(grad U_i, grad U_i)

    ``Lap^2`` acts as ``mu^2`` on Laplace eigen-coefficients.
    """
    comps = np.atleast_2d(np.asarray(components, dtype=float))
    if comps.shape[0] < 2:
        raise ConfigurationError("a sphere-valued map needs at least two components")
    if comps.shape[1] != backend.basis_dim:
        raise ConfigurationError("component coefficient length mismatch")
    mu = backend.laplace_eigenvalue
    vals = comps @ backend.values
    bilap = (comps * mu**2) @ backend.values
    grads = np.tensordot(comps, backend.gradients, axes=(1, 0))  # (p, Q, d)
    T = energy_integrand_tensor(backend)
    curv = np.einsum("pqi,ij,pqj->pq", grads, T, grads)
    return np.sum(vals * bilap + curv, axis=0)
