from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from paneitz.conformal import normalize_volume, random_factor
from paneitz.eigen import cluster, rayleigh, solve
from paneitz.errors import ConfigurationError, IllConditionedMassError
from paneitz.geometry import ConformalFactor, build_s2xs2, build_sphere, build_torus
from paneitz.operator import assemble


def test_round_sphere_spectrum(sphere3):
    spec = solve(assemble(sphere3))
    assert spec.clusters.sizes == [1, 5, 14, 30]
    expected = np.repeat([0.0, 24.0, 120.0, 360.0], [1, 5, 14, 30])
    assert np.max(np.abs(spec.eigenvalues - expected) / np.maximum(1, expected)) < 1e-10


def test_torus_spectrum(torus1):
    spec = solve(assemble(torus1), 9)
    assert spec.eigenvalue(1) == pytest.approx(0, abs=1e-9)
    assert np.allclose(spec.eigenvalues[1:], 16 * math.pi**4, rtol=1e-12)
    assert spec.clusters.sizes == [1, 8]


def test_product_spectrum_matches_closed_form():
    b = build_s2xs2(1.0, 1.0, 2)
    spec = solve(assemble(b))
    assert np.allclose(spec.eigenvalues, np.sort(b.paneitz_diagonal), atol=1e-9)


def test_eigenvectors_mass_orthonormal(sphere3):
    w = normalize_volume(sphere3, random_factor(sphere3, np.random.default_rng(5), amplitude=0.4))
    system = assemble(sphere3, w)
    spec = solve(system, 20)
    V = spec.eigenvectors
    assert np.allclose(V.T @ system.mass @ V, np.eye(20), atol=1e-10)
    assert np.max(spec.residual_norms) < 1e-9


def test_count_zero(sphere3):
    spec = solve(assemble(sphere3), 0)
    assert len(spec) == 0 and spec.clusters.groups == []


def test_count_out_of_range(sphere3):
    with pytest.raises(ConfigurationError):
        solve(assemble(sphere3), sphere3.basis_dim + 1)


def test_index_is_one_based(sphere3):
    spec = solve(assemble(sphere3), 3)
    with pytest.raises(ConfigurationError):
        spec.eigenvalue(0)
    assert spec.clusters.incomplete
    with pytest.raises(ConfigurationError):
        spec.cluster_indices(2)
    assert solve(assemble(sphere3), 6).cluster_indices(2) == [2, 3, 4, 5, 6]


def test_ill_conditioned_mass():
    b = build_sphere(1.0, 2)
    w = ConformalFactor.from_function(b, 12.0 * b.nodes[:, 0])
    with pytest.raises(IllConditionedMassError):
        solve(assemble(b, w))


def test_rayleigh(sphere3):
    system = assemble(sphere3)
    c = np.zeros(sphere3.basis_dim)
    c[3] = 2.0
    assert rayleigh(system, c) == pytest.approx(24.0, rel=1e-12)
    with pytest.raises(ConfigurationError):
        rayleigh(system, np.zeros(sphere3.basis_dim))


@given(st.floats(-1.0, 1.0))
def test_scaling_law(c):
    # lambda_k(e^{2c} g_w) = e^{-4c} lambda_k(g_w)
    b = build_sphere(1.0, 2)
    w = random_factor(b, np.random.default_rng(11), amplitude=0.3)
    lam = solve(assemble(b, w)).eigenvalues
    lam_c = solve(assemble(b, w.shifted(b, c))).eigenvalues
    assert np.allclose(lam_c * math.exp(4 * c), lam, rtol=1e-10, atol=1e-10)


@given(st.integers(0, 10_000))
def test_kernel_and_negative_count_invariant(seed):
    b = build_torus(max_freq=1)
    w = random_factor(b, np.random.default_rng(seed), degree=1, amplitude=0.5)
    lam = solve(assemble(b, w)).eigenvalues
    scale = np.max(np.abs(lam))
    assert np.sum(np.abs(lam) <= 1e-8 * scale) == 1
    assert np.sum(lam < -1e-8 * scale) == 0


# ---------------------------------------------------------------------------
# clustering

@given(st.lists(st.floats(-100, 100), min_size=1, max_size=30), st.floats(1e-10, 1e-2))
def test_cluster_partitions_indices(values, tol):
    ev = np.sort(values)
    c = cluster(ev, tol)
    flat = [i for g in c.groups for i in g]
    assert flat == list(range(1, len(ev) + 1))
    for g in c.groups:
        for i in g[1:]:
            assert ev[i - 1] - ev[i - 2] <= tol * max(1, abs(ev[i - 2]))


def test_cluster_flags_close_decisions():
    c = cluster([1.0, 1.0 + 2e-6, 5.0], 1e-6)
    assert c.groups == [[1], [2], [3]]
    assert c.ambiguous == [1]


def _smooth_w(backend):
    x = backend.nodes
    if backend.kind == "torus":
        t = 2 * math.pi * x
        v = 0.3 * np.cos(t[:, 0]) + 0.2 * np.sin(t[:, 1] + t[:, 2])
    else:
        v = 0.3 * x[:, 0] + 0.2 * x[:, 1] * x[:, -1]
    return normalize_volume(backend, ConformalFactor(v))


@pytest.mark.slow
@pytest.mark.parametrize("build,levels,quad", [
    (lambda n, q: build_sphere(1.0, n, q), (2, 3, 4), 20),
    (lambda n, q: build_torus(max_freq=n, nodes_per_dim=q), (1, 2), 12),
    (lambda n, q: build_s2xs2(1.0, 2.0, n, q), (2, 3, 4), 20),
])
def test_monotone_refinement(build, levels, quad):
    # common quadrature so the trial spaces are nested with one inner product
    spectra = [solve(assemble(b, _smooth_w(b))).eigenvalues for b in (build(n, quad) for n in levels)]
    for coarse, fine in zip(spectra, spectra[1:]):
        n = len(coarse)
        assert np.all(fine[:n] <= coarse + 1e-9 * np.maximum(1, np.abs(coarse)))
