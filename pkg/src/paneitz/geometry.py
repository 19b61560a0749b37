"""Model 4-manifold backends: quadrature, Laplace eigenbases and curvature.

Three homogeneous model spaces are supported:

* ``sphere``  -- round S^4 of a given radius, basis of spherical harmonics
  realised as harmonic polynomials on R^5;
* ``torus``   -- flat T^4 with arbitrary periods, real Fourier basis;
* ``s2xs2``   -- Riemannian product S^2(a) x S^2(b), products of S^2
  harmonics.

All geometric vectors (gradients) are stored in ambient coordinates: R^5
for the sphere, R^4 for the torus and R^3 x R^3 for the product. The
Laplacian follows the geometer's sign convention, so ``laplacians[a] ==
-laplace_eigenvalue[a] * values[a]``.
"""
from __future__ import annotations

from functools import cached_property
from itertools import product as iproduct
import math

import numpy as np
from scipy import special

from . import _polynomials as poly
from .errors import ConfigurationError, UnsupportedBackendError

__all__ = [
    "ManifoldBackend",
    "SphereBackend",
    "TorusBackend",
    "ProductSphereBackend",
    "ConformalFactor",
    "build_sphere",
    "build_torus",
    "build_s2xs2",
    "backend_from_descriptor",
    "integrate",
    "sphere_volume",
]

#: Number of quadrature nodes handled at once by node-chunked kernels.
NODE_CHUNK = 4096


def sphere_volume(n: int, radius: float = 1.0) -> float:
    """Volume of the round n-sphere of the given radius."""
    return 2 * math.pi ** ((n + 1) / 2) / math.gamma((n + 1) / 2) * radius**n


def _freeze(*arrays):
    for a in arrays:
        if isinstance(a, np.ndarray):
            a.flags.writeable = False


class ManifoldBackend:
    """Discretisation data for one closed model 4-manifold.

    Instances are immutable once built; all arrays are read-only.

    Attributes
    ----------
    kind : str
        ``"sphere"``, ``"torus"`` or ``"s2xs2"``.
    params : dict
        Geometric parameters (radius, periods or radii).
    max_degree : int
        Truncation parameter (max harmonic degree, or max frequency).
    nodes : ndarray, shape (Q, d)
        Quadrature points in ambient/chart coordinates.
    weights : ndarray, shape (Q,)
        Positive weights summing to the volume.
    values, laplacians : ndarray, shape (B, Q)
    gradients : ndarray, shape (B, Q, d)
    laplace_eigenvalue : ndarray, shape (B,)
    degrees : ndarray of int, shape (B,)
        Truncation level each basis function belongs to.
    scalar_curvature : ndarray, shape (Q,)
    ricci : ndarray, shape (d, d)
        Constant matrix such that ``Ric(u, v) = u @ ricci @ v`` for tangent
        vectors in ambient coordinates.
    """

    kind: str = ""
    hessians = None

    def __init__(self, *, params, max_degree, nodes, weights, values, gradients,
                 laplace_eigenvalue, degrees, scalar_curvature, ricci, paneitz_diagonal,
                 quad_degree):
        self.params = dict(params)
        self.max_degree = int(max_degree)
        self.quad_degree = int(quad_degree)
        self.nodes = nodes
        self.weights = weights
        self.values = values
        self.gradients = gradients
        self.laplace_eigenvalue = laplace_eigenvalue
        self.laplacians = -laplace_eigenvalue[:, None] * values
        self.degrees = degrees
        self.scalar_curvature = np.full(len(weights), float(scalar_curvature))
        self.ricci = ricci
        self.paneitz_diagonal = paneitz_diagonal
        _freeze(self.nodes, self.weights, self.values, self.gradients, self.laplacians,
                self.laplace_eigenvalue, self.degrees, self.scalar_curvature, self.ricci,
                self.paneitz_diagonal)

    def __repr__(self):
        return (f"<{type(self).__name__} {self.params} max_degree={self.max_degree}, "
                f"{self.basis_dim} basis functions, {self.n_nodes} nodes>")

    @property
    def basis_dim(self) -> int:
        return self.values.shape[0]

    @property
    def n_nodes(self) -> int:
        return self.values.shape[1]

    @property
    def dim_ambient(self) -> int:
        return self.gradients.shape[2]

    @cached_property
    def volume(self) -> float:
        return float(self.weights.sum())

    def ricci_on_gradients(self, u, v):
        """Ric(u, v) at every node; ``u`` and ``v`` have shape (..., Q, d)."""
        return np.einsum("...i,ij,...j->...", u, self.ricci, v)

    def integrate(self, f) -> float:
        f = np.asarray(f, dtype=float)
        if f.shape != self.weights.shape:
            raise ConfigurationError(
                f"node function has shape {f.shape}, expected {self.weights.shape}")
        return float(self.weights @ f)

    def project(self, f) -> np.ndarray:
        """L^2 projection of node values onto the basis (exact for basis functions)."""
        f = np.asarray(f, dtype=float)
        if f.shape[-1] != self.n_nodes:
            raise ConfigurationError("node function length mismatch")
        return (f * self.weights) @ self.values.T

    def evaluate(self, coeffs) -> np.ndarray:
        return np.asarray(coeffs, dtype=float) @ self.values

    def gradient_of(self, coeffs) -> np.ndarray:
        """Gradient field (Q, d) of the basis expansion ``coeffs``."""
        return np.tensordot(np.asarray(coeffs, dtype=float), self.gradients, axes=(0, 0))

    def laplacian_of(self, coeffs) -> np.ndarray:
        return np.asarray(coeffs, dtype=float) @ self.laplacians

    def constant_coeffs(self, c: float = 1.0) -> np.ndarray:
        """Coefficients of the constant function ``c`` (basis function 0 is constant)."""
        out = np.zeros(self.basis_dim)
        out[0] = c * math.sqrt(self.volume)
        return out

    def coordinates(self) -> dict[str, np.ndarray]:
        """Named coordinate functions at the nodes, for expression presets."""
        return {f"x{i + 1}": self.nodes[:, i] for i in range(self.nodes.shape[1])}

    def descriptor(self) -> dict:
        params = {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.params.items()}
        return {"kind": self.kind, "params": params, "max_degree": self.max_degree,
                "quad_degree": self.quad_degree}


# ---------------------------------------------------------------------------
# round spheres

def sphere_quadrature(n: int, degree: int, radius: float = 1.0):
    """Product rule on S^n exact for polynomials of total degree <= ``degree``.

    Polar angles use Gauss-Jacobi rules in ``cos(theta_k)`` whose weight
    ``(1 - t^2)^((n-k-1)/2)`` absorbs the sine powers of the volume element;
    the last (periodic) angle uses ``degree + 1`` uniform nodes.
    """
    npolar = degree // 2 + 1
    rules = []
    for k in range(1, n):
        a = (n - k - 1) / 2
        t, w = special.roots_jacobi(npolar, a, a)
        rules.append((t, w))
    nphi = degree + 1
    phi = 2 * math.pi * np.arange(nphi) / nphi
    wphi = np.full(nphi, 2 * math.pi / nphi)

    grids = np.meshgrid(*[r[0] for r in rules], phi, indexing="ij")
    wgrids = np.meshgrid(*[r[1] for r in rules], wphi, indexing="ij")
    ts = [g.ravel() for g in grids[:-1]]
    ph = grids[-1].ravel()
    w = np.prod([g.ravel() for g in wgrids], axis=0)

    x = np.empty((ph.size, n + 1))
    s = np.ones(ph.size)
    for k, t in enumerate(ts):
        x[:, k] = s * t
        s = s * np.sqrt(np.clip(1 - t * t, 0.0, None))
    x[:, n - 1] = s * np.cos(ph)
    x[:, n] = s * np.sin(ph)
    return radius * x, w * radius**n


class _HarmonicSphere:
    """Orthonormal spherical harmonics on S^n(radius) through ``max_degree``."""

    def __init__(self, n, radius, max_degree, quad_degree):
        self.n = n
        self.radius = float(radius)
        self.nodes, self.weights = sphere_quadrature(n, quad_degree, radius)
        u = self.nodes / radius
        nvars = n + 1
        self.blocks = []  # (degree, exponents, coefficient matrix)
        vals, grads, mus, degs = [], [], [], []
        for ell in range(max_degree + 1):
            exps = poly.monomial_exponents(nvars, ell)
            harm = np.array(poly.harmonic_basis(nvars, ell))
            v = harm @ poly.eval_monomials(exps, u).T
            gram = (v * self.weights) @ v.T
            ev, evec = np.linalg.eigh(gram)
            tr = evec @ np.diag(ev ** -0.5) @ evec.T  # symmetric orthonormalisation
            coeffs = tr @ harm
            v = coeffs @ poly.eval_monomials(exps, u).T
            g = poly.eval_gradients(exps, coeffs, u)
            g = (g - ell * v[:, :, None] * u[None, :, :]) / radius
            self.blocks.append((ell, exps, coeffs))
            vals.append(v)
            grads.append(g)
            mus.append(np.full(len(v), ell * (ell + n - 1) / radius**2))
            degs.append(np.full(len(v), ell))
        self.values = np.vstack(vals)
        self.gradients = np.concatenate(grads, axis=0)
        self.mu = np.concatenate(mus)
        self.degrees = np.concatenate(degs)

    def evaluate_at(self, coeffs, points):
        u = np.asarray(points, dtype=float) / self.radius
        out = np.zeros(u.shape[0])
        start = 0
        for _, exps, c in self.blocks:
            stop = start + c.shape[0]
            out += (coeffs[start:stop] @ c) @ poly.eval_monomials(exps, u).T
            start = stop
        return out


class SphereBackend(ManifoldBackend):
    kind = "sphere"

    def __init__(self, radius, max_degree, quad_degree):
        hs = _HarmonicSphere(4, radius, max_degree, quad_degree)
        self._harm = hs
        r2 = radius**2
        mu = hs.mu
        super().__init__(
            params={"radius": float(radius)}, max_degree=max_degree, quad_degree=quad_degree,
            nodes=hs.nodes, weights=hs.weights, values=hs.values, gradients=hs.gradients,
            laplace_eigenvalue=mu, degrees=hs.degrees,
            scalar_curvature=12.0 / r2, ricci=np.eye(5) * (3.0 / r2),
            paneitz_diagonal=mu * (mu + 2.0 / r2),
        )

    @property
    def radius(self) -> float:
        return self.params["radius"]

    def evaluate_at(self, coeffs, points) -> np.ndarray:
        """Evaluate a basis expansion at arbitrary points of the sphere."""
        return self._harm.evaluate_at(np.asarray(coeffs, dtype=float), points)


def build_sphere(radius: float = 1.0, max_degree: int = 3, quad_degree: int | None = None) -> SphereBackend:
    """Round S^4 of ``radius`` with spherical harmonics of degree <= ``max_degree``.

    The default quadrature is exact for polynomial integrands of degree
    ``4 * max_degree + 4``.
    """
    if radius <= 0:
        raise ConfigurationError("radius must be positive")
    if max_degree < 2:
        raise ConfigurationError("max_degree must be >= 2 to represent degree-2 harmonics")
    if quad_degree is None:
        quad_degree = 4 * max_degree + 4
    return SphereBackend(radius, int(max_degree), int(quad_degree))


# ---------------------------------------------------------------------------
# flat torus

def _half_lattice(max_freq):
    """Integer vectors in [-F, F]^4 with first nonzero entry positive."""
    out = []
    for k in iproduct(range(-max_freq, max_freq + 1), repeat=4):
        nz = [c for c in k if c != 0]
        if nz and nz[0] > 0:
            out.append(k)
    return out


class TorusBackend(ManifoldBackend):
    kind = "torus"

    def __init__(self, periods, max_freq, nodes_per_dim):
        periods = np.asarray(periods, dtype=float)
        vol = float(np.prod(periods))
        axes = [p * np.arange(nodes_per_dim) / nodes_per_dim for p in periods]
        grid = np.meshgrid(*axes, indexing="ij")
        x = np.stack([g.ravel() for g in grid], axis=1)
        w = np.full(x.shape[0], vol / nodes_per_dim**4)

        lattice = _half_lattice(max_freq)
        freqs = [np.array(k, dtype=float) * 2 * math.pi / periods for k in lattice]
        order = sorted(range(len(lattice)),
                       key=lambda i: (float(freqs[i] @ freqs[i]), lattice[i]))
        nb = 1 + 2 * len(lattice)
        values = np.empty((nb, x.shape[0]))
        grads = np.zeros((nb, x.shape[0], 4))
        wavevec = np.zeros((nb, 4))
        mu = np.zeros(nb)
        degs = np.zeros(nb, dtype=np.int64)
        kinds = [("const", ())]
        values[0] = 1 / math.sqrt(vol)
        amp = math.sqrt(2 / vol)
        row = 1
        for i in order:
            c = freqs[i]
            theta = x @ c
            cs, sn = np.cos(theta), np.sin(theta)
            values[row], values[row + 1] = amp * cs, amp * sn
            grads[row] = -amp * sn[:, None] * c[None, :]
            grads[row + 1] = amp * cs[:, None] * c[None, :]
            wavevec[row] = wavevec[row + 1] = c
            mu[row] = mu[row + 1] = c @ c
            degs[row] = degs[row + 1] = max(abs(v) for v in lattice[i])
            kinds += [("cos", lattice[i]), ("sin", lattice[i])]
            row += 2
        self.wavevectors = wavevec
        self.modes = kinds
        # cos <-> sin partner, with the sign picked up by differentiation
        self._partner = np.arange(nb)
        self._partner_sign = np.zeros(nb)
        for r in range(1, nb, 2):
            self._partner[r], self._partner[r + 1] = r + 1, r
            self._partner_sign[r], self._partner_sign[r + 1] = -1.0, 1.0
        _freeze(self.wavevectors)
        super().__init__(
            params={"periods": tuple(float(p) for p in periods)}, max_degree=max_freq,
            quad_degree=nodes_per_dim, nodes=x, weights=w, values=values, gradients=grads,
            laplace_eigenvalue=mu, degrees=degs, scalar_curvature=0.0, ricci=np.zeros((4, 4)),
            paneitz_diagonal=mu**2,
        )

    @property
    def periods(self):
        return self.params["periods"]

    def function_hessian(self, coeffs) -> np.ndarray:
        """Coordinate Hessian (Q, 4, 4) of a basis expansion."""
        coeffs = np.asarray(coeffs, dtype=float)
        weighted = (coeffs[:, None] * self.wavevectors)  # (B, 4)
        # Hess(phi_a) = -k k^T phi_a for every Fourier mode
        return -np.einsum("ai,aj,aq->qij", weighted, self.wavevectors, self.values)

    @cached_property
    def hessians(self) -> np.ndarray:
        """Coordinate Hessians of all basis functions, shape (B, Q, 4, 4)."""
        h = -np.einsum("ai,aj,aq->aqij", self.wavevectors, self.wavevectors, self.values)
        h.flags.writeable = False
        return h

    def coordinates(self):
        out = super().coordinates()
        for i, p in enumerate(self.periods):
            out[f"L{i + 1}"] = np.full(self.n_nodes, p)
        return out

    def descriptor(self):
        d = super().descriptor()
        d["max_freq"] = d.pop("max_degree")
        d["nodes_per_dim"] = d.pop("quad_degree")
        return d


def build_torus(periods=(1.0, 1.0, 1.0, 1.0), max_freq: int = 1,
                nodes_per_dim: int | None = None) -> TorusBackend:
    """Flat torus R^4 / (periods) with Fourier modes ``|k_j| <= max_freq``.

    The default uniform grid of ``4 * max_freq + 4`` points per direction
    integrates products of four basis functions exactly.
    """
    periods = tuple(float(p) for p in periods)
    if len(periods) != 4 or any(p <= 0 for p in periods):
        raise ConfigurationError("periods must be four positive reals")
    if max_freq < 1:
        raise ConfigurationError("max_freq must be >= 1")
    if nodes_per_dim is None:
        nodes_per_dim = 4 * max_freq + 4
    if nodes_per_dim <= 2 * max_freq:
        raise ConfigurationError("nodes_per_dim too small to resolve the basis")
    return TorusBackend(periods, int(max_freq), int(nodes_per_dim))


# ---------------------------------------------------------------------------
# S^2 x S^2

class ProductSphereBackend(ManifoldBackend):
    kind = "s2xs2"

    def __init__(self, radius_a, radius_b, max_degree, quad_degree):
        fa = _HarmonicSphere(2, radius_a, max_degree, quad_degree)
        fb = _HarmonicSphere(2, radius_b, max_degree, quad_degree)
        qa, qb = len(fa.weights), len(fb.weights)
        nodes = np.hstack([np.repeat(fa.nodes, qb, axis=0), np.tile(fb.nodes, (qa, 1))])
        weights = np.outer(fa.weights, fb.weights).ravel()
        pairs = [(i, j) for i in range(len(fa.mu)) for j in range(len(fb.mu))
                 if fa.degrees[i] + fb.degrees[j] <= max_degree]
        pairs.sort(key=lambda ij: (fa.degrees[ij[0]] + fb.degrees[ij[1]], -fa.degrees[ij[0]]))
        ia = np.array([p[0] for p in pairs])
        ib = np.array([p[1] for p in pairs])
        va, vb = fa.values[ia], fb.values[ib]
        values = (va[:, :, None] * vb[:, None, :]).reshape(len(pairs), -1)
        ga = (fa.gradients[ia][:, :, None, :] * vb[:, None, :, None]).reshape(len(pairs), -1, 3)
        gb = (va[:, :, None, None] * fb.gradients[ib][:, None, :, :]).reshape(len(pairs), -1, 3)
        mu_a, mu_b = fa.mu[ia], fb.mu[ib]
        mu = mu_a + mu_b
        ra, rb = 1 / radius_a**2, 1 / radius_b**2
        scal = 2 * ra + 2 * rb
        ricci = np.diag([ra] * 3 + [rb] * 3)
        self.factor_degrees = np.stack([fa.degrees[ia], fb.degrees[ib]], axis=1)
        _freeze(self.factor_degrees)
        super().__init__(
            params={"radii": (float(radius_a), float(radius_b))}, max_degree=max_degree,
            quad_degree=quad_degree, nodes=nodes, weights=weights, values=values,
            gradients=np.concatenate([ga, gb], axis=2), laplace_eigenvalue=mu,
            degrees=fa.degrees[ia] + fb.degrees[ib], scalar_curvature=scal, ricci=ricci,
            paneitz_diagonal=mu**2 + (2 / 3) * scal * mu - 2 * (ra * mu_a + rb * mu_b),
        )

    def coordinates(self):
        out = super().coordinates()
        for i in range(3):
            out[f"p{i + 1}"] = self.nodes[:, i]
            out[f"q{i + 1}"] = self.nodes[:, 3 + i]
        return out


def build_s2xs2(radius_a: float = 1.0, radius_b: float = 1.0, max_degree: int = 2,
                quad_degree: int | None = None) -> ProductSphereBackend:
    """S^2(a) x S^2(b) with products Y_l1 Y_l2, ``l1 + l2 <= max_degree``."""
    if radius_a <= 0 or radius_b <= 0:
        raise ConfigurationError("radii must be positive")
    if max_degree < 1:
        raise ConfigurationError("max_degree must be >= 1")
    if quad_degree is None:
        quad_degree = 4 * max_degree + 4
    return ProductSphereBackend(float(radius_a), float(radius_b), int(max_degree), int(quad_degree))


def backend_from_descriptor(desc: dict) -> ManifoldBackend:
    """Rebuild a backend from its JSON descriptor."""
    kind = desc.get("kind")
    params = desc.get("params", {})
    if kind == "sphere":
        return build_sphere(params.get("radius", 1.0), desc.get("max_degree", 3),
                            desc.get("quad_degree"))
    if kind == "torus":
        return build_torus(params.get("periods", (1.0,) * 4),
                           desc.get("max_freq", desc.get("max_degree", 1)),
                           desc.get("nodes_per_dim"))
    if kind == "s2xs2":
        a, b = params.get("radii", (1.0, 1.0))
        return build_s2xs2(a, b, desc.get("max_degree", 2), desc.get("quad_degree"))
    raise UnsupportedBackendError(f"unknown backend kind {kind!r}")


def integrate(backend: ManifoldBackend, node_function) -> float:
    """Quadrature sum ``sum_q weight_q * f(x_q)``."""
    return backend.integrate(node_function)


# ---------------------------------------------------------------------------
# conformal factors

class ConformalFactor:
    """The function ``w`` of a conformal metric ``e^{2w} g``.

    A factor either carries basis coefficients (and then its node values are
    their expansion) or only node values, e.g. after a Moebius pullback whose
    Jacobian is not polynomial.
    """

    __slots__ = ("coeffs", "node_values")

    def __init__(self, node_values, coeffs=None):
        node_values = np.array(node_values, dtype=float)
        if not np.all(np.isfinite(node_values)):
            raise ConfigurationError("conformal factor has non-finite node values")
        node_values.flags.writeable = False
        if coeffs is not None:
            coeffs = np.array(coeffs, dtype=float)
            coeffs.flags.writeable = False
        object.__setattr__(self, "node_values", node_values)
        object.__setattr__(self, "coeffs", coeffs)

    def __setattr__(self, name, value):
        raise AttributeError("ConformalFactor is immutable")

    def __repr__(self):
        kind = "coeffs" if self.coeffs is not None else "nodes"
        return f"<ConformalFactor ({kind}) range=[{self.node_values.min():.4g}, {self.node_values.max():.4g}]>"

    @classmethod
    def zero(cls, backend):
        return cls(np.zeros(backend.n_nodes), np.zeros(backend.basis_dim))

    @classmethod
    def from_coeffs(cls, backend, coeffs):
        coeffs = np.asarray(coeffs, dtype=float)
        if coeffs.shape != (backend.basis_dim,):
            raise ConfigurationError(
                f"expected {backend.basis_dim} coefficients, got shape {coeffs.shape}")
        return cls(backend.evaluate(coeffs), coeffs)

    @classmethod
    def from_function(cls, backend, node_values):
        """Project node values onto the basis (exact when they lie in its span)."""
        return cls.from_coeffs(backend, backend.project(node_values))

    @property
    def volume_density(self) -> np.ndarray:
        """``e^{4w}`` at the nodes."""
        return np.exp(4.0 * self.node_values)

    def shifted(self, backend, c: float) -> "ConformalFactor":
        """The factor ``w + c``."""
        coeffs = None if self.coeffs is None else self.coeffs + backend.constant_coeffs(c)
        return ConformalFactor(self.node_values + c, coeffs)

    def scaled(self, s: float) -> "ConformalFactor":
        coeffs = None if self.coeffs is None else s * self.coeffs
        return ConformalFactor(s * self.node_values, coeffs)

    def check(self, backend, atol=1e-12) -> None:
        if self.node_values.shape != (backend.n_nodes,):
            raise ConfigurationError("conformal factor does not match backend nodes")
        if self.coeffs is not None:
            if self.coeffs.shape != (backend.basis_dim,):
                raise ConfigurationError("conformal factor does not match backend basis")
            dev = np.max(np.abs(backend.evaluate(self.coeffs) - self.node_values))
            if dev > atol * max(1.0, np.max(np.abs(self.node_values))):
                raise ConfigurationError(f"node values inconsistent with coefficients ({dev:.3g})")
        assert np.all(self.volume_density > 0)
