"""Harmonic homogeneous polynomials in R^{n+1} and their evaluation.

Polynomials are stored densely as coefficient rows over a fixed list of
monomial exponents. Only small degrees are ever needed (<= 6), so the dense
representation is cheap.
"""
from __future__ import annotations

from functools import lru_cache
from itertools import combinations_with_replacement

import numpy as np
from scipy import linalg


@lru_cache(maxsize=None)
def monomial_exponents(nvars: int, degree: int) -> np.ndarray:
    """Exponent rows of all monomials of exact ``degree`` in ``nvars`` variables.

    Rows are in reverse-lexicographic order so that powers of the first
    variable come first.
    """
    if degree < 0:
        return np.zeros((0, nvars), dtype=np.int64)
    rows = []
    for combo in combinations_with_replacement(range(nvars), degree):
        e = np.zeros(nvars, dtype=np.int64)
        for v in combo:
            e[v] += 1
        rows.append(e)
    out = np.array(rows, dtype=np.int64).reshape(-1, nvars)
    out.flags.writeable = False
    return out


def _index(exps: np.ndarray) -> dict[tuple, int]:
    return {tuple(e): i for i, e in enumerate(exps)}


def laplacian_matrix(nvars: int, degree: int) -> np.ndarray:
    """Matrix of the flat Laplacian from degree ``degree`` to ``degree - 2``."""
    src = monomial_exponents(nvars, degree)
    dst = monomial_exponents(nvars, degree - 2)
    idx = _index(dst)
    out = np.zeros((len(dst), len(src)))
    for j, e in enumerate(src):
        for v in range(nvars):
            if e[v] >= 2:
                f = e.copy()
                f[v] -= 2
                out[idx[tuple(f)], j] += e[v] * (e[v] - 1)
    return out


@lru_cache(maxsize=None)
def harmonic_basis(nvars: int, degree: int) -> np.ndarray:
    """Canonical spanning set of harmonic polynomials of exact ``degree``.

    Returns a ``(dim, n_monomials)`` coefficient matrix. A harmonic
    polynomial is determined by its monomials of degree <= 1 in the first
    variable; row ``i`` is the unique harmonic polynomial whose coefficients
    on those pivot monomials form the ``i``-th unit vector. In degree 1 this
    gives exactly the coordinate functions.
    """
    exps = monomial_exponents(nvars, degree)
    pivots = np.flatnonzero(exps[:, 0] <= 1)
    if degree < 2:
        out = np.eye(len(exps))[pivots]
    else:
        null = linalg.null_space(laplacian_matrix(nvars, degree))
        if null.shape[1] != len(pivots):
            raise RuntimeError("harmonic dimension mismatch")
        out = (null @ np.linalg.inv(null[pivots, :])).T
        out[np.abs(out) < 1e-13] = 0.0
    out.flags.writeable = False
    return out


def harmonic_dimension(nvars: int, degree: int) -> int:
    """dim of harmonic polynomials of degree ``degree`` in ``nvars`` variables."""
    if degree < 0:
        return 0
    return len(monomial_exponents(nvars, degree)) - len(monomial_exponents(nvars, degree - 2))


def eval_monomials(exps: np.ndarray, points: np.ndarray) -> np.ndarray:
    """``(n_points, n_monomials)`` matrix of monomial values."""
    points = np.asarray(points, dtype=float)
    out = np.ones((points.shape[0], exps.shape[0]))
    for v in range(exps.shape[1]):
        maxp = int(exps[:, v].max(initial=0))
        if maxp == 0:
            continue
        powers = np.ones((points.shape[0], maxp + 1))
        for p in range(1, maxp + 1):
            powers[:, p] = powers[:, p - 1] * points[:, v]
        out *= powers[:, exps[:, v]]
    return out


def eval_gradients(exps: np.ndarray, coeffs: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Ambient gradients of the polynomials ``coeffs @ monomials``.

    Returns shape ``(n_polys, n_points, nvars)``.
    """
    nvars = exps.shape[1]
    degree = int(exps[0].sum()) if len(exps) else 0
    out = np.zeros((coeffs.shape[0], points.shape[0], nvars))
    if degree == 0:
        return out
    lower = monomial_exponents(nvars, degree - 1)
    idx = _index(lower)
    mono = eval_monomials(lower, points)
    for v in range(nvars):
        d = np.zeros((len(exps), len(lower)))
        for j, e in enumerate(exps):
            if e[v] > 0:
                f = e.copy()
                f[v] -= 1
                d[j, idx[tuple(f)]] = e[v]
        out[:, :, v] = (coeffs @ d) @ mono.T
    return out
