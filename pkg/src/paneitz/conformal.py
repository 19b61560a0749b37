"""Volume normalisation, conformal change of curvature, Moebius balancing."""
from __future__ import annotations

from dataclasses import dataclass, field
import math

import numpy as np

from .errors import ConfigurationError, NonConvergenceError, UnsupportedBackendError
from .geometry import ConformalFactor, ManifoldBackend, SphereBackend, TorusBackend, NODE_CHUNK

__all__ = [
    "normalize_volume",
    "conformal_volume",
    "ConformalCurvature",
    "conformal_curvature_torus",
    "MoebiusParams",
    "moebius_map",
    "moebius_pullback_factor",
    "BalanceResult",
    "first_moments",
    "hersch_balance",
    "random_factor",
]


def conformal_volume(backend: ManifoldBackend, w: ConformalFactor) -> float:
    """Vol(M, e^{2w} g) = int e^{4w} dv_g."""
    return backend.integrate(w.volume_density)


def normalize_volume(backend: ManifoldBackend, w: ConformalFactor,
                     target: float | None = None) -> ConformalFactor:
    """Shift ``w`` by a constant so that ``int e^{4w} dv_g == target``.

    ``target`` defaults to the volume of the base metric.
    """
    if target is None:
        target = backend.volume
    if target <= 0:
        raise ConfigurationError("target volume must be positive")
    shift = -0.25 * math.log(conformal_volume(backend, w) / target)
    return w.shifted(backend, shift)


def random_factor(backend: ManifoldBackend, rng, degree: int = 2,
                  amplitude: float = 0.5) -> ConformalFactor:
    """Random factor on the basis modes of degree ``1..degree``.

    Coefficients are standard normal, then scaled so that ``max |w|`` over
    the nodes equals ``amplitude``.
    """
    modes = np.flatnonzero((backend.degrees >= 1) & (backend.degrees <= degree))
    if modes.size == 0:
        raise ConfigurationError("no basis modes of the requested degree")
    c = np.zeros(backend.basis_dim)
    c[modes] = rng.standard_normal(modes.size)
    c *= amplitude / np.max(np.abs(backend.evaluate(c)))
    return ConformalFactor.from_coeffs(backend, c)


# ---------------------------------------------------------------------------
# conformal change of curvature on the flat torus

@dataclass(frozen=True)
class ConformalCurvature:
    """Curvature data of ``e^{2w} g`` for the flat torus metric ``g``.

    With ``n = 4`` and ``g`` flat::

        Ric_hat = -2 (Hess w - dw (x) dw) - (Lap w + 2 |dw|^2) g
        R_hat   = e^{-2w} (-6 Lap w - 6 |dw|^2)
        Lap_hat f = e^{-2w} (Lap f + 2 <dw, df>)

    ``ricci`` is the coordinate (0,2)-tensor, so for a function gradient
    ``df`` the hatted quantity ``Ric_hat(grad_hat f, grad_hat h)`` equals
    ``e^{-4w} df @ ricci @ dh``.
    """

    w: np.ndarray
    grad_w: np.ndarray
    scalar: np.ndarray
    ricci: np.ndarray
    volume_weights: np.ndarray

    def laplacian(self, lap_f, grad_f):
        """Lap_hat at the nodes for arrays of shape (..., Q) / (..., Q, 4)."""
        return np.exp(-2 * self.w) * (lap_f + 2 * np.einsum("...qi,qi->...q", grad_f, self.grad_w))

    def inner(self, grad_f, grad_h):
        """g_hat(grad_hat f, grad_hat h)."""
        return np.exp(-2 * self.w) * np.einsum("...qi,...qi->...q", grad_f, grad_h)

    def ricci_on_gradients(self, grad_f, grad_h):
        return np.exp(-4 * self.w) * np.einsum("...qi,qij,...qj->...q", grad_f, self.ricci, grad_h)

    def total_scalar_curvature(self) -> float:
        return float(np.sum(self.scalar * self.volume_weights))

    def energy_matrix(self, backend: TorusBackend) -> np.ndarray:
        """Paneitz energy assembled entirely from the hatted metric data."""
        lap_hat = self.laplacian(backend.laplacians, backend.gradients)
        e2 = np.exp(-2 * self.w)
        e4 = np.exp(-4 * self.w)
        # per-node tensor of (2/3) R_hat g_hat(.,.) - 2 Ric_hat(.,.) on coordinate gradients
        T = ((2.0 / 3.0) * (self.scalar * e2)[:, None, None] * np.eye(4)
             - 2.0 * e4[:, None, None] * self.ricci)
        dv = self.volume_weights
        n = backend.basis_dim
        K = np.zeros((n, n))
        G = backend.gradients
        for start in range(0, backend.n_nodes, NODE_CHUNK):
            sl = slice(start, min(start + NODE_CHUNK, backend.n_nodes))
            K += (lap_hat[:, sl] * dv[sl]) @ lap_hat[:, sl].T
            GT = np.einsum("aqi,qij->aqj", G[:, sl], T[sl]) * dv[sl, None]
            K += GT.reshape(n, -1) @ G[:, sl].reshape(n, -1).T
        return 0.5 * (K + K.T)


def conformal_curvature_torus(backend: TorusBackend, w: ConformalFactor) -> ConformalCurvature:
    """Curvature, Laplacian and volume data of ``e^{2w} g`` on the flat torus."""
    if not isinstance(backend, TorusBackend):
        raise UnsupportedBackendError("conformal curvature needs coordinate Hessians (torus only)")
    if w.coeffs is None:
        raise ConfigurationError("conformal factor must be given by basis coefficients")
    gw = backend.gradient_of(w.coeffs)
    hw = backend.function_hessian(w.coeffs)
    lap_w = np.trace(hw, axis1=1, axis2=2)
    grad2 = np.einsum("qi,qi->q", gw, gw)
    eye = np.eye(4)
    ricci = (-2.0 * (hw - gw[:, :, None] * gw[:, None, :])
             - (lap_w + 2 * grad2)[:, None, None] * eye)
    scalar = np.exp(-2 * w.node_values) * (-6.0 * lap_w - 6.0 * grad2)
    return ConformalCurvature(w.node_values, gw, scalar, ricci,
                              backend.weights * w.volume_density)


# ---------------------------------------------------------------------------
# Moebius dilations of the unit 4-sphere

@dataclass(frozen=True)
class MoebiusParams:
    """Conformal dilation of S^4 toward ``center`` with strength ``dilation``.

    The map is: stereographic projection from ``-center``, scaling of R^4 by
    ``dilation``, inverse projection. ``dilation == 1`` is the identity.
    """

    center: tuple
    dilation: float = 1.0

    def __post_init__(self):
        c = np.asarray(self.center, dtype=float)
        if c.shape != (5,):
            raise ConfigurationError("center must be a 5-vector")
        if abs(np.linalg.norm(c) - 1) > 1e-12:
            raise ConfigurationError("center must be a unit vector")
        if not math.isfinite(self.dilation) or self.dilation <= 0:
            raise ConfigurationError("dilation must be a positive finite number")
        object.__setattr__(self, "center", tuple(float(x) for x in c))
        object.__setattr__(self, "dilation", float(self.dilation))

    @classmethod
    def identity(cls):
        return cls((0.0, 0.0, 0.0, 0.0, 1.0), 1.0)

    @classmethod
    def from_ball(cls, a) -> "MoebiusParams":
        """Ball chart: ``a = tanh-like`` point with direction = center and
        ``|a| = (t - 1) / (t + 1)``."""
        a = np.asarray(a, dtype=float)
        r = float(np.linalg.norm(a))
        if r >= 1:
            raise ConfigurationError("ball parameter must lie in the open unit ball")
        if r == 0:
            return cls.identity()
        c = a / r
        c /= np.linalg.norm(c)
        return cls(tuple(c), (1 + r) / (1 - r))

    def to_ball(self) -> np.ndarray:
        return (self.dilation - 1) / (self.dilation + 1) * np.asarray(self.center)

    def to_json(self) -> dict:
        return {"center": list(self.center), "dilation": self.dilation}

    @classmethod
    def from_json(cls, d) -> "MoebiusParams":
        return cls(tuple(d["center"]), float(d["dilation"]))


def moebius_map(params: MoebiusParams, points):
    """Images of unit-sphere ``points`` and the conformal stretch factor.

    Returns ``(images, stretch)`` with ``phi^* g_round = stretch**2 g_round``.
    """
    x = np.asarray(points, dtype=float)
    c = np.asarray(params.center)
    t = params.dilation
    s = x @ c
    perp = x - s[:, None] * c[None, :]
    den = (1 + s) + t * t * (1 - s)
    images = (((1 + s) - t * t * (1 - s))[:, None] * c[None, :] + 2 * t * perp) / den[:, None]
    stretch = 2 * t / den
    return images, stretch


def _require_unit_sphere(backend):
    if not isinstance(backend, SphereBackend):
        raise UnsupportedBackendError("Moebius maps are defined on the sphere backend")
    if abs(backend.radius - 1.0) > 1e-14:
        raise UnsupportedBackendError("Moebius maps require the unit sphere")


def moebius_pullback_factor(backend: SphereBackend, params: MoebiusParams,
                            w: ConformalFactor) -> ConformalFactor:
    """Factor ``w_phi`` with ``e^{2 w_phi} g = phi^*(e^{2w} g)``, at the nodes.

    Only node values are produced; the Jacobian term is not polynomial and is
    never projected onto the basis.
    """
    _require_unit_sphere(backend)
    if params.dilation <= 0:
        raise ConfigurationError("dilation must be positive")
    if params.dilation == 1.0:
        return w
    if w.coeffs is None:
        raise ConfigurationError("pullback needs w as basis coefficients")
    images, stretch = moebius_map(params, backend.nodes)
    vals = backend.evaluate_at(w.coeffs, images) + np.log(stretch)
    return ConformalFactor(vals)


def first_moments(backend: SphereBackend, w: ConformalFactor) -> np.ndarray:
    """``int x_i e^{4w} dv_g`` for the five ambient coordinates."""
    return (backend.weights * w.volume_density) @ backend.nodes


@dataclass
class BalanceResult:
    params: MoebiusParams
    factor: ConformalFactor
    moments: np.ndarray
    iterations: int
    history: list = field(default_factory=list)

    def __iter__(self):
        # unpacks as (params, balanced factor)
        yield self.params
        yield self.factor

    def to_json(self) -> dict:
        return {"params": self.params.to_json(), "moments": [float(m) for m in self.moments],
                "iterations": self.iterations, "residual_history": list(self.history)}


def hersch_balance(backend: SphereBackend, w: ConformalFactor, tol: float = 1e-8,
                   max_iter: int = 60, fd_step: float = 1e-6) -> BalanceResult:
    """Find a Moebius dilation whose pullback of ``e^{2w} g`` has centre of mass 0.

    Damped Newton on the five-dimensional ball chart of dilations (see
    :meth:`MoebiusParams.from_ball`); the Jacobian of the moment map is
    estimated by central differences. Converged when every moment is at
    most ``tol * vol``.

    Raises
    ------
    NonConvergenceError
        If the iteration stagnates or ``max_iter`` is exhausted.
    """
    _require_unit_sphere(backend)
    vol = backend.volume

    def moments(a):
        p = MoebiusParams.from_ball(a)
        return first_moments(backend, moebius_pullback_factor(backend, p, w))

    a = np.zeros(5)
    F = moments(a)
    history = [float(np.max(np.abs(F)) / vol)]
    it = 0
    while history[-1] > tol:
        if it >= max_iter:
            raise NonConvergenceError(f"balancing did not converge in {max_iter} iterations",
                                      best_residual=min(history), history=history)
        J = np.empty((5, 5))
        for j in range(5):
            e = np.zeros(5)
            e[j] = fd_step
            J[:, j] = (moments(a + e) - moments(a - e)) / (2 * fd_step)
        step = -np.linalg.solve(J, F)
        norm0 = np.linalg.norm(F)
        damp = 1.0
        while True:
            trial = a + damp * step
            if np.linalg.norm(trial) < 1 - 1e-9:
                Ft = moments(trial)
                if np.linalg.norm(Ft) < norm0:
                    break
            damp *= 0.5
            if damp < 1e-10:
                raise NonConvergenceError("balancing stagnated (no decrease along Newton step)",
                                          best_residual=min(history), history=history)
        a, F = trial, Ft
        history.append(float(np.max(np.abs(F)) / vol))
        it += 1
    params = MoebiusParams.from_ball(a)
    factor = moebius_pullback_factor(backend, params, w)
    return BalanceResult(params, factor, first_moments(backend, factor), it, history)
