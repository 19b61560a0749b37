"""Eigenvalue derivatives along conformal deformations and extremality tests.

For a volume-preserving deformation ``g(t) = e^{2 w_t} g_w`` with
``alpha = 4 dw/dt`` at ``t = 0``, the branches issuing from a cluster
``{lambda_k}`` of multiplicity ``m`` have first derivatives equal to the
eigenvalues of the ``m x m`` matrix

    Q_ij = -lambda_k * int alpha psi_i psi_j dv_{g_w}

over an M_w-orthonormal basis ``psi`` of the cluster. The one-sided
derivatives of ``lambda_k`` itself pick out order statistics of these
branch derivatives.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
import math

import numpy as np

from .conformal import MoebiusParams, hersch_balance, moebius_map, normalize_volume
from .eigen import DEFAULT_CLUSTER_TOL, SpectrumResult, cluster, solve
from .errors import (CertificationFailure, ConfigurationError, DirectionNotAdmissibleError,
                     NonConvergenceError, UnsupportedBackendError)
from .geometry import ConformalFactor, ManifoldBackend, SphereBackend
from .operator import PaneitzSystem, assemble, density

__all__ = [
    "DerivativeReport",
    "ExtremalityCertificate",
    "ObstructionFlags",
    "AscentResult",
    "ZERO_EIGENVALUE_TOL",
    "make_admissible",
    "one_sided_derivatives",
    "cluster_matrix",
    "extremality_certificate",
    "pointwise_formula_check",
    "obstruction_report",
    "maximize_lambda_k",
]

ZERO_EIGENVALUE_TOL = 1e-8


def _is_zero(lam):
    return abs(lam) <= ZERO_EIGENVALUE_TOL


def _dv(system: PaneitzSystem) -> np.ndarray:
    return system.backend.weights * system.conformal_factor.volume_density


def make_admissible(system: PaneitzSystem, alpha) -> np.ndarray:
    """Remove the dv_{g_w}-mean of a node function."""
    alpha = np.asarray(alpha, dtype=float)
    dv = _dv(system)
    return alpha - (dv @ alpha) / dv.sum()


def cluster_matrix(system: PaneitzSystem, spectrum: SpectrumResult, k: int, alpha) -> np.ndarray:
    """The matrix Q over the cluster containing ``k``."""
    lam = spectrum.eigenvalue(k)
    psi = spectrum.cluster_vectors(k).T @ system.backend.values  # (m, Q)
    weighted = psi * (_dv(system) * np.asarray(alpha, dtype=float))
    Q = -lam * (weighted @ psi.T)
    return 0.5 * (Q + Q.T)


@dataclass(frozen=True)
class DerivativeReport:
    """One-sided derivatives of ``lambda_k`` along one direction.

    ``cases`` is a subset of ``{"BelowGap", "AboveGap"}``, or ``["Interior"]``
    when ``k`` sits strictly inside its cluster. ``d_plus``/``d_minus`` are
    the derivatives for ``t -> 0+`` and ``t -> 0-``; ``plus_branch`` and
    ``minus_branch`` index the ascending ``branch_derivatives``.
    """

    k: int
    lambda_k: float
    branch_derivatives: np.ndarray
    d_plus: float
    d_minus: float
    cases: list
    cluster: list
    plus_branch: int = 0
    minus_branch: int = 0
    ties: bool = False
    note: str = ""

    @property
    def case(self) -> str:
        return self.cases[0]

    def to_json(self) -> dict:
        return {"k": self.k, "lambda_k": self.lambda_k,
                "branch_derivatives": [float(x) for x in self.branch_derivatives],
                "d_plus": self.d_plus, "d_minus": self.d_minus, "cases": list(self.cases),
                "cluster": list(self.cluster), "plus_branch": self.plus_branch,
                "minus_branch": self.minus_branch, "ties": self.ties, "note": self.note}


def one_sided_derivatives(system: PaneitzSystem, spectrum: SpectrumResult, k: int, alpha,
                          mean_tol: float = 1e-9) -> DerivativeReport:
    """One-sided derivatives of ``lambda_k`` along ``alpha = 4 dw/dt``.

    For ``t -> 0+`` the ``j``-th smallest branch derivative is selected, and
    for ``t -> 0-`` the ``j``-th largest, where ``j`` is the position of ``k``
    inside its cluster. This gives ``(min, max)`` when ``k`` is the first index
    of its cluster and ``(max, min)`` when it is the last.

    Raises
    ------
    DirectionNotAdmissibleError
        If ``int alpha dv_{g_w}`` differs from zero by more than ``mean_tol``
        (relative to ``int |alpha| dv_{g_w}`` when that exceeds 1).
    """
    alpha = np.asarray(alpha, dtype=float)
    if alpha.shape != (system.backend.n_nodes,):
        raise ConfigurationError("direction must be given by its node values")
    lam = spectrum.eigenvalue(k)
    dv = _dv(system)
    mean = float(dv @ alpha)
    if abs(mean) > mean_tol * max(1.0, float(dv @ np.abs(alpha))):
        raise DirectionNotAdmissibleError(
            f"direction changes the volume to first order (int alpha dv = {mean:.3g})")
    idx = spectrum.cluster_indices(k)
    m = len(idx)
    first, last = idx[0], idx[-1]
    cases = []
    if k == first:
        cases.append("BelowGap")
    if k == last and last < len(spectrum):
        cases.append("AboveGap")
    if not cases:
        cases = ["AboveGap"] if k == last else ["Interior"]
    if _is_zero(lam):
        zeros = np.zeros(m)
        return DerivativeReport(k, lam, zeros, 0.0, 0.0, cases, idx,
                                note="zero eigenvalue: all branch derivatives vanish")
    branches = np.linalg.eigvalsh(cluster_matrix(system, spectrum, k, alpha))
    j = k - first  # 0-based position inside the cluster
    plus, minus = j, m - 1 - j
    # lowest index among equal order statistics
    scale = 1e-12 * max(1.0, float(np.max(np.abs(branches))))
    ties = bool(np.any(np.abs(np.diff(branches)) <= scale))
    plus = int(np.flatnonzero(np.abs(branches - branches[plus]) <= scale)[0])
    minus = int(np.flatnonzero(np.abs(branches - branches[minus]) <= scale)[0])
    return DerivativeReport(k, lam, branches, float(branches[plus]), float(branches[minus]),
                            cases, idx, plus, minus, ties)


# ---------------------------------------------------------------------------
# extremality certificate

@dataclass(frozen=True)
class ExtremalityCertificate:
    """PSD matrix ``S`` with ``sum S_ab psi_a psi_b`` close to 1.

    ``vectors`` holds the M_w-orthonormal cluster basis ``psi`` as columns
    (basis coefficients).
    """

    k: int
    lambda_k: float
    cluster: list
    gram: np.ndarray
    vectors: np.ndarray
    residual: float
    tolerance: float
    certified: bool
    reason: str = ""
    iterations: int = 0

    def family(self) -> np.ndarray:
        """Coefficient rows of eigenfunctions ``phi_i`` with ``sum phi_i^2 = sum S psi psi``."""
        ev, U = np.linalg.eigh(self.gram)
        keep = ev > 1e-14 * max(1.0, float(ev.max(initial=0.0)))
        F = U[:, keep] * np.sqrt(ev[keep])
        return (self.vectors @ F).T

    def to_json(self) -> dict:
        return {"k": self.k, "lambda_k": self.lambda_k, "cluster": list(self.cluster),
                "gram": self.gram.tolist(), "residual": self.residual,
                "tolerance": self.tolerance, "certified": self.certified,
                "reason": self.reason, "iterations": self.iterations}


def _sym_basis(m):
    """Orthonormal (Frobenius) basis of symmetric m x m matrices, as index data."""
    iu = np.triu_indices(m)
    scale = np.where(iu[0] == iu[1], 1.0, math.sqrt(2.0))
    return iu, scale


def _psd_project(S):
    ev, U = np.linalg.eigh(0.5 * (S + S.T))
    S = (U * np.clip(ev, 0.0, None)) @ U.T
    return 0.5 * (S + S.T)


def extremality_certificate(system: PaneitzSystem, spectrum: SpectrumResult, k: int,
                            tolerance: float = 1e-6, max_iter: int = 20000) -> ExtremalityCertificate:
    """Search for ``S >= 0`` with ``sum_ab S_ab psi_a psi_b == 1`` on the k-cluster.

    Minimises the convex quadratic ``|| sum S_ab psi_a psi_b - 1 ||^2`` in
    L^2(dv_{g_w}) by projected gradient with PSD projection by eigenvalue
    clipping, started from the projected least-squares solution.
    """
    lam = spectrum.eigenvalue(k)
    if _is_zero(lam):
        raise ConfigurationError("certificate requires a nonzero eigenvalue")
    idx = spectrum.cluster_indices(k)
    vecs = spectrum.cluster_vectors(k)
    psi = vecs.T @ system.backend.values  # (m, Q)
    dv = _dv(system)
    m = psi.shape[0]
    iu, scale = _sym_basis(m)
    # design matrix in Frobenius-orthonormal coordinates of symmetric matrices
    A = psi[iu[0]] * psi[iu[1]] * scale[:, None]  # (p, Q)
    sw = np.sqrt(dv)

    def to_matrix(s):
        S = np.zeros((m, m))
        S[iu] = s / scale
        return S + np.triu(S, 1).T

    def to_vector(S):
        return S[iu] * scale

    def residual_of(S):
        r = np.einsum("aq,ab,bq->q", psi, S, psi) - 1.0
        return float(np.sqrt(dv @ (r * r)))

    s_ls = np.linalg.lstsq((A * sw).T, sw, rcond=None)[0]
    S = _psd_project(to_matrix(s_ls))
    iterations = 0
    if residual_of(S) > tolerance * 1e-3:
        H = (A * dv) @ A.T
        b = A @ dv
        L = 2 * float(np.linalg.eigvalsh(H)[-1])
        s = to_vector(S)
        for iterations in range(1, max_iter + 1):
            grad = 2 * (H @ s - b)
            S_new = _psd_project(to_matrix(s - grad / L))
            s_new = to_vector(S_new)
            if np.linalg.norm(s_new - s) <= 1e-13 * (1 + np.linalg.norm(s)):
                s = s_new
                break
            s = s_new
        S = to_matrix(s)
    res = residual_of(S)
    if m == 1:
        return ExtremalityCertificate(k, lam, idx, S, vecs, res, tolerance, False,
                                      "simple eigenvalue: an extremal nonzero eigenvalue is degenerate",
                                      iterations)
    ok = res <= tolerance
    reason = "" if ok else "no PSD combination of eigenfunction products is constant"
    return ExtremalityCertificate(k, lam, idx, S, vecs, res, tolerance, ok, reason, iterations)


def pointwise_formula_check(system: PaneitzSystem, spectrum: SpectrumResult, k: int,
                            certificate: ExtremalityCertificate | None = None) -> float:
    """Max deviation of the pointwise energy density of the certificate family from lambda_k.

    Only constant factors ``w == c`` are supported, where the density of
    ``e^{2c} g`` is ``e^{-4c}`` times that of ``g``; the curvature of a
    non-constant conformal metric is not available on curved backends.
    """
    lam = spectrum.eigenvalue(k)
    if _is_zero(lam):
        raise ConfigurationError("pointwise formula requires a nonzero eigenvalue")
    w = system.conformal_factor.node_values
    if np.ptp(w) > 1e-12:
        raise UnsupportedBackendError("pointwise formula is only evaluated for constant factors")
    if certificate is None:
        certificate = extremality_certificate(system, spectrum, k)
    if not certificate.certified:
        raise CertificationFailure(f"cluster of lambda_{k} is not certified: {certificate.reason}")
    fam = certificate.family()
    if fam.shape[0] < 2:
        fam = np.vstack([fam, np.zeros_like(fam)])
    e = math.exp(-4 * float(np.mean(w))) * density(system.backend, fam)
    return float(np.max(np.abs(e - lam)))


# ---------------------------------------------------------------------------
# local-extremum obstructions

@dataclass(frozen=True)
class ObstructionFlags:
    k: int
    can_be_local_max: bool
    can_be_local_min: bool
    note: str = ""

    def to_json(self) -> dict:
        return {"k": self.k, "can_be_local_max": self.can_be_local_max,
                "can_be_local_min": self.can_be_local_min, "note": self.note}


def obstruction_report(spectrum: SpectrumResult, k: int) -> ObstructionFlags:
    """Necessary multiplicity conditions for a local max / min of ``lambda_k``.

    A local maximiser with nonzero ``lambda_k`` needs ``lambda_k ==
    lambda_{k+1}``; a local minimiser needs ``lambda_k == lambda_{k-1}``.
    Equality is decided by the spectrum's clustering.
    """
    if k + 1 > len(spectrum):
        raise ConfigurationError(f"spectrum must be computed through index {k + 1}")
    lam = spectrum.eigenvalue(k)
    if _is_zero(lam):
        return ObstructionFlags(k, True, True, "zero eigenvalue: no obstruction applies")
    # membership only, so an incomplete trailing group is fine here
    group = next(g for g in spectrum.clusters.groups if k in g)
    return ObstructionFlags(k, (k + 1) in group, (k - 1) in group)


# ---------------------------------------------------------------------------
# projected ascent

@dataclass
class AscentResult:
    w_best: ConformalFactor
    lambda_best: float
    trajectory: list = field(default_factory=list)
    status: str = "max_steps"

    def __iter__(self):
        yield self.w_best
        yield self.trajectory


def _recluster(spec: SpectrumResult, tol: float) -> SpectrumResult:
    return SpectrumResult(spec.eigenvalues, spec.eigenvectors, cluster(spec.eigenvalues, tol),
                          spec.residual_norms)


def _direction_basis(backend: ManifoldBackend, max_degree: int) -> np.ndarray:
    return np.flatnonzero((backend.degrees >= 1) & (backend.degrees <= max_degree))


def maximize_lambda_k(backend: ManifoldBackend, k: int, w_init: ConformalFactor | None = None,
                      steps: int = 200, step_size: float = 0.1, direction_degree: int = 2,
                      ascent_cluster_tol: float = 1e-3, min_step: float = 1e-9,
                      target_volume: float | None = None, gauge: str | None = None,
                      workers: int | None = None) -> AscentResult:
    """Projected first-order ascent of the volume-normalised ``lambda_k``.

    Every iteration builds the cluster matrices ``Q(d)`` for the candidate
    directions ``+-`` (low-degree basis mode, mean removed) and ``+-`` the
    projection of the cluster-trace gradient, keeps the direction with the
    largest right derivative ``d_plus`` and tries ``w + h d / 4``
    (renormalised). Improving trials are accepted; otherwise ``h`` is
    halved. When no candidate improves at the loose ``ascent_cluster_tol``
    grouping, the default grouping is tried before declaring convergence.
    Candidate directions are evaluated on a thread pool.

    ``gauge="balanced"`` (the default on the unit sphere) evaluates each
    iterate on its Moebius-balanced representative. Normalised eigenvalues
    are Moebius invariant, but Galerkin eigenvalues are not, and an
    unbalanced iterate can gain from discretisation error alone.
    ``gauge="none"`` uses the iterate as is.

    Returns the best factor (in the ungauged base coordinates) and the
    trajectory rows ``(step, lambda_k, step_size, direction_id)``, which are
    non-decreasing in ``lambda_k`` by construction.
    """
    if w_init is None:
        w_init = ConformalFactor.zero(backend)
    if w_init.coeffs is None:
        raise ConfigurationError("ascent needs the initial factor as basis coefficients")
    if target_volume is None:
        target_volume = backend.volume
    if gauge is None:
        unit_sphere = isinstance(backend, SphereBackend) and abs(backend.radius - 1.0) <= 1e-14
        gauge = "balanced" if unit_sphere else "none"
    if gauge not in ("balanced", "none"):
        raise ConfigurationError(f"unknown gauge {gauge!r}")
    if gauge == "balanced" and abs(target_volume - backend.volume) > 1e-12 * backend.volume:
        raise ConfigurationError("balanced gauge requires the base volume as target")
    modes = _direction_basis(backend, direction_degree)
    if modes.size == 0:
        raise ConfigurationError("no admissible direction modes")

    def evaluate(w):
        """Normalised iterate -> (state, lambda_k)."""
        w = normalize_volume(backend, w, target_volume)
        fwd = inv = None
        rep = w
        if gauge == "balanced":
            params, bal = hersch_balance(backend, w)
            if params.dilation != 1.0:
                rep = normalize_volume(backend, bal, target_volume)
                inverse = MoebiusParams(params.center, 1.0 / params.dilation)
                fwd = moebius_map(params, backend.nodes)[0]
                inv = moebius_map(inverse, backend.nodes)[0]
        system = assemble(backend, rep)
        spec = solve(system, cluster_tol=ascent_cluster_tol)
        return (w, system, spec, fwd, inv), spec.eigenvalue(k)

    def in_gauge(coeffs, points):
        if points is None:
            return backend.evaluate(coeffs)
        return backend.evaluate_at(coeffs, points)

    def candidates(state):
        _, system, spec, fwd, inv = state
        dv = _dv(system)
        raw = []
        for a in modes:
            c = np.zeros(backend.basis_dim)
            c[a] = 1.0
            raw.append((c, f"mode{a}"))
        # cluster density transported back to base coordinates
        psi = np.stack([in_gauge(v, inv) for v in spec.cluster_vectors(k).T])
        tg = np.zeros(backend.basis_dim)
        tg[modes] = backend.project(-np.sum(psi * psi, axis=0))[modes]
        if np.any(tg):
            raw.append((tg, "trace"))
        out = []
        for c, name in raw:
            vals = in_gauge(c, fwd)
            vals = vals - (dv @ vals) / dv.sum()
            size = np.max(np.abs(vals))
            if size == 0:
                continue
            out.append((vals / size, c / size, "+" + name))
            out.append((-vals / size, -c / size, "-" + name))
        return out

    def best_direction(state):
        _, system, spec, _, _ = state
        cands = candidates(state)
        # the loose grouping sees nearly split clusters; fall back to the default one
        for spec_t in (spec, _recluster(spec, DEFAULT_CLUSTER_TOL)):
            with ThreadPoolExecutor(max_workers=workers) as pool:
                reps = list(pool.map(
                    lambda cand: one_sided_derivatives(system, spec_t, k, cand[0]), cands))
            i = max(range(len(cands)), key=lambda j: reps[j].d_plus)
            if reps[i].d_plus > 1e-10 * max(1.0, abs(spec_t.eigenvalue(k))):
                return cands[i][1], cands[i][2]
        return None

    state, lam = evaluate(w_init)
    if _is_zero(lam):
        raise ConfigurationError(f"lambda_{k} vanishes at the initial metric")
    trajectory = [(0, lam, step_size, "init")]
    h = step_size
    status = "max_steps"
    for step in range(1, steps + 1):
        best = best_direction(state)
        if best is None:
            status = "converged"
            trajectory.append((step, lam, h, "none"))
            break
        direction, did = best
        w = state[0]
        while h >= min_step:
            trial = ConformalFactor.from_coeffs(backend, w.coeffs + 0.25 * h * direction)
            try:
                t_state, t_lam = evaluate(trial)
            except NonConvergenceError:
                t_lam = -np.inf
            if t_lam > lam:
                state, lam = t_state, t_lam
                break
            h *= 0.5
        if h < min_step:
            status = "converged"
            trajectory.append((step, lam, h, "none"))
            break
        trajectory.append((step, lam, h, did))
        h = min(2 * h, step_size)
    return AscentResult(state[0], lam, trajectory, status)
