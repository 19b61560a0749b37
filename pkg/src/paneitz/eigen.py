"""Dense generalized eigensolver for ``K v = lambda M_w v`` and helpers.

Eigenvalue indices are 1-based everywhere in the public API: ``k = 1`` is
the lowest eigenvalue (zero, with constant eigenfunction, on every shipped
backend).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .errors import ConfigurationError, IllConditionedMassError
from .operator import PaneitzSystem

__all__ = ["SpectrumResult", "Clustering", "solve", "rayleigh", "cluster",
           "DEFAULT_CLUSTER_TOL", "MAX_MASS_CONDITION"]

DEFAULT_CLUSTER_TOL = 1e-6
MAX_MASS_CONDITION = 1e12


@dataclass(frozen=True)
class Clustering:
    """Multiplicity groups of an ascending eigenvalue list.

    ``groups`` holds 1-based index lists. ``ambiguous`` lists the (1-based)
    positions ``i`` whose gap to ``i + 1`` lies within a factor 10 of the
    tolerance on either side, so the grouping decision there was close.
    ``incomplete`` is set when the last group continues past the computed
    eigenvalues.
    """

    groups: list
    tolerance: float
    min_gap: float
    ambiguous: list = field(default_factory=list)
    incomplete: bool = False

    @property
    def sizes(self) -> list:
        return [len(g) for g in self.groups]

    def group_of(self, k: int) -> list:
        for g in self.groups:
            if k in g:
                if self.incomplete and g is self.groups[-1]:
                    raise ConfigurationError(
                        f"the cluster of index {k} extends past the computed eigenvalues")
                return g
        raise ConfigurationError(f"index {k} not in clustering")

    def to_json(self) -> dict:
        return {"groups": [list(g) for g in self.groups], "tolerance": self.tolerance,
                "min_gap": self.min_gap, "ambiguous": list(self.ambiguous),
                "incomplete": self.incomplete}


def cluster(eigenvalues, tolerance: float = DEFAULT_CLUSTER_TOL) -> Clustering:
    """Greedy grouping of adjacent eigenvalues.

    ``lambda_{i+1}`` joins the group of ``lambda_i`` when the gap is at most
    ``tolerance * max(1, |lambda_i|)``.
    """
    ev = np.asarray(eigenvalues, dtype=float)
    if ev.size == 0:
        return Clustering([], tolerance, float("inf"))
    groups = [[1]]
    min_gap = float("inf")
    ambiguous = []
    for i in range(1, ev.size):
        gap = ev[i] - ev[i - 1]
        scale = tolerance * max(1.0, abs(ev[i - 1]))
        if 0.1 * scale < gap <= 10 * scale:
            ambiguous.append(i)
        if gap <= scale:
            groups[-1].append(i + 1)
        else:
            groups.append([i + 1])
            min_gap = min(min_gap, float(gap))
    return Clustering(groups, tolerance, min_gap, ambiguous)


@dataclass(frozen=True)
class SpectrumResult:
    """Lowest eigenpairs of a Paneitz system.

    ``eigenvectors[:, i]`` is the coefficient vector of the eigenfunction for
    ``eigenvalues[i]`` (i.e. for index ``k = i + 1``); the columns are
    M_w-orthonormal.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    clusters: Clustering
    residual_norms: np.ndarray

    def __len__(self):
        return self.eigenvalues.size

    def eigenvalue(self, k: int) -> float:
        self._check(k)
        return float(self.eigenvalues[k - 1])

    def eigenvector(self, k: int) -> np.ndarray:
        self._check(k)
        return self.eigenvectors[:, k - 1]

    def cluster_indices(self, k: int) -> list:
        self._check(k)
        return list(self.clusters.group_of(k))

    def cluster_vectors(self, k: int) -> np.ndarray:
        """Coefficient vectors (columns) spanning the cluster containing ``k``."""
        idx = np.array(self.cluster_indices(k)) - 1
        return self.eigenvectors[:, idx]

    def _check(self, k):
        if not 1 <= k <= self.eigenvalues.size:
            raise ConfigurationError(f"eigenvalue index {k} outside 1..{self.eigenvalues.size}")

    def to_json(self) -> dict:
        return {"eigenvalues": [float(x) for x in self.eigenvalues],
                "clusters": [list(g) for g in self.clusters.groups],
                "cluster_tolerance": self.clusters.tolerance,
                "ambiguous_gaps": list(self.clusters.ambiguous),
                "last_cluster_incomplete": self.clusters.incomplete,
                "residual_norms": [float(x) for x in self.residual_norms]}


def _mass_condition(M):
    ev = np.linalg.eigvalsh(M)
    if ev[0] <= 0:
        return float("inf")
    return float(ev[-1] / ev[0])


def solve(system: PaneitzSystem, count: int | None = None,
          cluster_tol: float = DEFAULT_CLUSTER_TOL) -> SpectrumResult:
    """Lowest ``count`` eigenpairs of ``K v = lambda M_w v``.

    The problem is reduced to standard form through a Cholesky factorisation
    of the mass matrix (LAPACK ``sygvd``).

    Raises
    ------
    IllConditionedMassError
        If ``cond(M_w) > 1e12``.
    """
    K, M = system.energy, system.mass
    n = K.shape[0]
    if count is None:
        count = n
    if not 0 <= count <= n:
        raise ConfigurationError(f"count must be in 0..{n}")
    cond = _mass_condition(M)
    if cond > MAX_MASS_CONDITION:
        raise IllConditionedMassError(f"mass matrix condition number {cond:.3g} exceeds 1e12")
    if count == 0:
        return SpectrumResult(np.zeros(0), np.zeros((n, 0)), cluster([], cluster_tol), np.zeros(0))
    vals, vecs = linalg.eigh(K, M, driver="gvd")
    full = cluster(vals, cluster_tol)
    vals, vecs = vals[:count], vecs[:, :count]
    resid = np.linalg.norm(K @ vecs - (M @ vecs) * vals, axis=0)
    # fix the sign of each vector for reproducible output
    pivot = np.argmax(np.abs(vecs), axis=0)
    signs = np.sign(vecs[pivot, np.arange(vecs.shape[1])])
    vecs = vecs * np.where(signs == 0, 1.0, signs)
    for a in (vals, vecs, resid):
        a.flags.writeable = False
    groups = [g for g in full.groups if g[0] <= count]
    incomplete = groups[-1][-1] > count
    groups[-1] = [i for i in groups[-1] if i <= count]
    clusters = Clustering(groups, cluster_tol, full.min_gap,
                          [i for i in full.ambiguous if i < count], incomplete)
    return SpectrumResult(vals, vecs, clusters, resid)


def rayleigh(system: PaneitzSystem, coeffs) -> float:
    """``(c^T K c) / (c^T M_w c)``."""
    c = np.asarray(coeffs, dtype=float)
    if c.shape != (system.dim,):
        raise ConfigurationError("coefficient length mismatch")
    den = float(c @ system.mass @ c)
    if not np.any(c) or den <= 0:
        raise ConfigurationError("Rayleigh quotient of the zero vector")
    return float(c @ system.energy @ c) / den
