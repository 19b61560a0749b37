from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from paneitz.conformal import normalize_volume, random_factor
from paneitz.eigen import solve
from paneitz.errors import (CertificationFailure, ConfigurationError, DirectionNotAdmissibleError,
                            UnsupportedBackendError)
from paneitz.extremal import (cluster_matrix, extremality_certificate, make_admissible,
                              maximize_lambda_k, obstruction_report, one_sided_derivatives,
                              pointwise_formula_check)
from paneitz.geometry import ConformalFactor
from paneitz.operator import assemble


@pytest.fixture(scope="module")
def round_sphere(sphere3):
    system = assemble(sphere3)
    return system, solve(system)


@pytest.fixture(scope="module")
def flat_torus(torus1):
    system = assemble(torus1)
    return system, solve(system)


def _random_direction(system, rng):
    b = system.backend
    alpha = random_factor(b, rng, degree=min(2, b.max_degree), amplitude=1.0).node_values
    return make_admissible(system, alpha)


# ---------------------------------------------------------------------------
# one-sided derivatives

def test_branch_set_for_x1sq_minus_x2sq(round_sphere):
    system, spec = round_sphere
    x = system.backend.nodes
    rep = one_sided_derivatives(system, spec, 2, x[:, 0] ** 2 - x[:, 1] ** 2)
    expected = np.array([-48 / 7, 0, 0, 0, 48 / 7])
    assert np.max(np.abs(rep.branch_derivatives - expected)) <= 1e-8
    assert rep.d_plus == pytest.approx(-48 / 7, abs=1e-8)
    assert rep.d_minus == pytest.approx(48 / 7, abs=1e-8)
    assert rep.cases == ["BelowGap"]
    assert rep.cluster == [2, 3, 4, 5, 6]


def test_interior_and_above_gap_cases(round_sphere):
    system, spec = round_sphere
    x = system.backend.nodes
    alpha = x[:, 0] ** 2 - x[:, 1] ** 2
    interior = one_sided_derivatives(system, spec, 4, alpha)
    assert interior.cases == ["Interior"]
    assert interior.d_plus == pytest.approx(0, abs=1e-10) and interior.d_minus == pytest.approx(0, abs=1e-10)
    assert interior.ties and interior.plus_branch == 1
    top = one_sided_derivatives(system, spec, 6, alpha)
    assert top.cases == ["AboveGap"]
    assert top.d_plus == pytest.approx(48 / 7) and top.d_minus == pytest.approx(-48 / 7)


@given(st.integers(0, 10_000))
def test_derivative_symmetry(seed):
    from paneitz.geometry import build_sphere
    b = build_sphere(1.0, 3)
    system = assemble(b)
    spec = solve(system)
    alpha = _random_direction(system, np.random.default_rng(seed))
    rp = one_sided_derivatives(system, spec, 2, alpha)
    rm = one_sided_derivatives(system, spec, 2, -alpha)
    assert np.allclose(rm.branch_derivatives, -rp.branch_derivatives[::-1], atol=1e-10)
    assert rm.d_plus == pytest.approx(-rp.d_minus, abs=1e-10)
    assert rm.d_minus == pytest.approx(-rp.d_plus, abs=1e-10)


@pytest.mark.parametrize("which", ["round_sphere", "flat_torus"])
def test_round_and_flat_metrics_are_extremal_witness(request, which):
    system, spec = request.getfixturevalue(which)
    rng = np.random.default_rng(123)
    for _ in range(50):
        rep = one_sided_derivatives(system, spec, 2, _random_direction(system, rng))
        assert rep.d_plus * rep.d_minus <= 0


@pytest.mark.parametrize("which", ["round_sphere", "flat_torus"])
def test_certificate_trace_identity(request, which):
    system, spec = request.getfixturevalue(which)
    cert = extremality_certificate(system, spec, 2)
    assert cert.certified
    rng = np.random.default_rng(7)
    for _ in range(10):
        Q = cluster_matrix(system, spec, 2, _random_direction(system, rng))
        assert abs(np.trace(Q @ cert.gram)) <= 1e-8


def test_finite_differences_at_simple_eigenvalues(sphere3):
    rng = np.random.default_rng(2024)
    w = normalize_volume(sphere3, random_factor(sphere3, rng, amplitude=0.15))
    system = assemble(sphere3, w)
    spec = solve(system)
    k = next(k for k in range(2, 7) if len(spec.cluster_indices(k)) == 1)
    h = 1e-4
    for _ in range(10):
        alpha = _random_direction(system, rng)
        formula = one_sided_derivatives(system, spec, k, alpha).d_plus

        def lam(t):
            f = normalize_volume(sphere3, ConformalFactor(w.node_values + 0.25 * t * alpha))
            return solve(assemble(sphere3, f)).eigenvalue(k)

        fd = (lam(h) - lam(-h)) / (2 * h)
        assert abs(fd - formula) <= 1e-4 * abs(formula)


def test_zero_eigenvalue_derivative(round_sphere):
    system, spec = round_sphere
    rep = one_sided_derivatives(system, spec, 1, _random_direction(system, np.random.default_rng(0)))
    assert rep.d_plus == rep.d_minus == 0.0 and rep.note


def test_inadmissible_direction(round_sphere):
    system, spec = round_sphere
    x = system.backend.nodes
    with pytest.raises(DirectionNotAdmissibleError):
        one_sided_derivatives(system, spec, 2, x[:, 0] ** 2)
    with pytest.raises(ConfigurationError):
        one_sided_derivatives(system, spec, 2, np.zeros(3))


# ---------------------------------------------------------------------------
# certificates

@pytest.mark.parametrize("which,lam", [("round_sphere", 24.0), ("flat_torus", 16 * math.pi**4)])
def test_certificates(request, which, lam):
    system, spec = request.getfixturevalue(which)
    cert = extremality_certificate(system, spec, 2)
    assert cert.certified and cert.residual <= 1e-8
    assert np.linalg.eigvalsh(cert.gram)[0] >= -1e-10
    fam = cert.family() @ system.backend.values
    assert np.max(np.abs(np.sum(fam**2, axis=0) - 1)) <= 1e-8
    assert pointwise_formula_check(system, spec, 2, cert) <= 1e-9 * max(1.0, lam)


def test_higher_cluster_certificate(round_sphere):
    system, spec = round_sphere
    cert = extremality_certificate(system, spec, 7)
    assert cert.certified and cert.cluster == list(range(7, 21))


def test_perturbed_metric_not_certified(sphere3):
    w = normalize_volume(sphere3, random_factor(sphere3, np.random.default_rng(9), amplitude=0.3))
    system = assemble(sphere3, w)
    spec = solve(system)
    cert = extremality_certificate(system, spec, 2)
    assert not cert.certified and cert.reason
    with pytest.raises(UnsupportedBackendError):
        pointwise_formula_check(system, spec, 2, cert)


def test_symmetric_perturbation_fails_with_degenerate_cluster(sphere3):
    # w = 0.3 x1 keeps an O(4) symmetry, so lambda_2 stays degenerate
    w = normalize_volume(sphere3, ConformalFactor.from_function(sphere3, 0.3 * sphere3.nodes[:, 0]))
    system = assemble(sphere3, w)
    spec = solve(system)
    cert = extremality_certificate(system, spec, 2)
    assert len(cert.cluster) > 1
    assert not cert.certified and cert.residual > 1e-3


def test_certificate_preconditions(round_sphere):
    system, spec = round_sphere
    with pytest.raises(ConfigurationError):
        extremality_certificate(system, spec, 1)
    cert = extremality_certificate(system, spec, 2, tolerance=1e-30)
    assert not cert.certified
    with pytest.raises(CertificationFailure):
        pointwise_formula_check(system, spec, 2, cert)


def test_pointwise_check_constant_factor(sphere3):
    w = ConformalFactor.zero(sphere3).shifted(sphere3, 0.2)
    system = assemble(sphere3, w)
    spec = solve(system)
    assert spec.eigenvalue(2) == pytest.approx(24 * math.exp(-0.8), rel=1e-12)
    assert pointwise_formula_check(system, spec, 2) <= 1e-9


# ---------------------------------------------------------------------------
# obstructions

def test_obstruction_flags(round_sphere):
    _, spec = round_sphere
    assert obstruction_report(spec, 2).can_be_local_max
    assert not obstruction_report(spec, 2).can_be_local_min
    assert not obstruction_report(spec, 6).can_be_local_max
    one = obstruction_report(spec, 1)
    assert one.can_be_local_max and one.can_be_local_min and one.note
    with pytest.raises(ConfigurationError):
        obstruction_report(spec, len(spec))


# ---------------------------------------------------------------------------
# ascent

def test_round_metric_has_no_ascent_direction(sphere3):
    res = maximize_lambda_k(sphere3, 2, None, steps=5)
    assert res.status == "converged"
    assert len(res.trajectory) == 2 and res.trajectory[-1][3] == "none"
    assert res.lambda_best == pytest.approx(24.0, rel=1e-12)


def test_ascent_trajectory_monotone(sphere3):
    c = np.zeros(sphere3.basis_dim)
    c[1] = 0.2
    res = maximize_lambda_k(sphere3, 2, ConformalFactor.from_coeffs(sphere3, c), steps=3)
    lams = [row[1] for row in res.trajectory]
    assert all(b >= a for a, b in zip(lams, lams[1:]))
    assert lams[-1] <= 24 * (1 + 1e-6)


def test_ascent_argument_checks(sphere3, torus1):
    with pytest.raises(ConfigurationError):
        maximize_lambda_k(sphere3, 2, ConformalFactor(np.zeros(sphere3.n_nodes)))
    with pytest.raises(ConfigurationError):
        maximize_lambda_k(sphere3, 2, None, gauge="bogus")
    with pytest.raises(ConfigurationError):
        maximize_lambda_k(sphere3, 1, None)
    with pytest.raises(ConfigurationError):
        maximize_lambda_k(torus1, 2, None, direction_degree=0)
