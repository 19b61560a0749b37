"""Command-line interface.

Subcommands: ``spectrum``, ``balance``, ``extremal``, ``maximize``,
``derivative`` and ``verify``. Results are printed (or written under
``--out``) as JSON envelopes carrying the config, its hash and the package
version; spectra and trajectories are also available as CSV.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 certification or identity-check failure.
"""
from __future__ import annotations

import argparse
from dataclasses import asdict, dataclass, field, fields
from datetime import datetime, timezone
import json
import math
from pathlib import Path
import sys

import numpy as np

from . import __version__
from .conformal import (conformal_curvature_torus, hersch_balance, normalize_volume,
                        random_factor)
from .eigen import solve
from .errors import CertificationFailure, ConfigurationError, NumericalError, PaneitzError
from .extremal import (extremality_certificate, maximize_lambda_k, make_admissible,
                       obstruction_report, one_sided_derivatives, pointwise_formula_check)
from .geometry import (ConformalFactor, SphereBackend, TorusBackend, build_s2xs2, build_sphere,
                       build_torus)
from .maps import SphereValuedMap, paneitz_map_residual
from .operator import assemble, leibniz_sides
from .serialization import (direction_from_spec, dumps, envelope, factor_from_spec,
                            spectrum_to_csv, trajectory_to_csv)

COMMANDS = ("spectrum", "balance", "extremal", "maximize", "derivative", "verify")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_CERTIFICATION = 0, 2, 3, 4


@dataclass
class ExperimentConfig:
    """Everything needed to rerun one command."""

    command: str
    backend: str = "sphere"
    max_degree: int | None = None
    max_freq: int = 1
    radius: list = field(default_factory=lambda: [1.0])
    periods: list = field(default_factory=lambda: [1.0, 1.0, 1.0, 1.0])
    quad_degree: int | None = None
    w: str = "zero"
    k: int = 2
    count: int | None = None
    steps: int = 200
    step_size: float = 0.1
    tol: float | None = None
    seed: int = 0
    direction: str | None = None
    remove_mean: bool = False
    samples: int = 5
    out: str | None = None
    format: str = "json"

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise ConfigurationError(f"unknown command {self.command!r}")
        if self.tol is not None and not self.tol > 0:
            raise ConfigurationError("--tol must be positive")
        if self.step_size <= 0:
            raise ConfigurationError("--step-size must be positive")
        if self.steps < 0 or self.samples < 0:
            raise ConfigurationError("--steps and --samples must be non-negative")
        if self.format not in ("json", "csv"):
            raise ConfigurationError("--format must be json or csv")
        self.radius = [float(r) for r in self.radius]
        self.periods = [float(p) for p in self.periods]

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ConfigurationError(f"unknown config keys: {sorted(extra)}")
        return cls(**d)

    def build_backend(self):
        if self.backend == "sphere":
            if len(self.radius) != 1:
                raise ConfigurationError("sphere takes one --radius")
            return build_sphere(self.radius[0], 3 if self.max_degree is None else self.max_degree,
                                self.quad_degree)
        if self.backend == "torus":
            return build_torus(self.periods, self.max_freq, self.quad_degree)
        if self.backend == "s2xs2":
            radii = self.radius * 2 if len(self.radius) == 1 else self.radius
            if len(radii) != 2:
                raise ConfigurationError("s2xs2 takes one or two --radius values")
            return build_s2xs2(radii[0], radii[1], 2 if self.max_degree is None else self.max_degree,
                               self.quad_degree)
        raise ConfigurationError(f"unknown backend {self.backend!r}")


# ---------------------------------------------------------------------------
# commands; each returns (result dict, csv text or None, exit code)

def _factor(cfg, backend):
    return normalize_volume(backend, factor_from_spec(backend, cfg.w))


def cmd_spectrum(cfg: ExperimentConfig):
    """Eigenvalues, clusters and residuals of the weighted problem."""
    backend = cfg.build_backend()
    system = assemble(backend, _factor(cfg, backend))
    spec = solve(system, cfg.count, **({"cluster_tol": cfg.tol} if cfg.tol else {}))
    result = {"backend": backend.descriptor(), "basis_dim": backend.basis_dim,
              "n_nodes": backend.n_nodes, "cluster_sizes": spec.clusters.sizes,
              "spectrum": spec.to_json()}
    return result, spectrum_to_csv(spec), EXIT_OK


def cmd_balance(cfg: ExperimentConfig):
    """Moebius-balance a factor on the unit sphere and report its lambda_2."""
    backend = cfg.build_backend()
    w = _factor(cfg, backend)
    res = hersch_balance(backend, w, **({"tol": cfg.tol} if cfg.tol else {}))
    balanced = normalize_volume(backend, res.factor)
    spec = solve(assemble(backend, balanced), min(2, backend.basis_dim))
    result = {"balance": res.to_json(), "lambda_2": spec.eigenvalue(2) if len(spec) >= 2 else None}
    return result, None, EXIT_OK


def cmd_extremal(cfg: ExperimentConfig):
    """Extremality certificate for the cluster of lambda_k."""
    backend = cfg.build_backend()
    w = _factor(cfg, backend)
    system = assemble(backend, w)
    spec = solve(system)
    cert = extremality_certificate(system, spec, cfg.k, **({"tolerance": cfg.tol} if cfg.tol else {}))
    result = {"certificate": cert.to_json(), "obstructions": obstruction_report(spec, cfg.k).to_json()}
    if cert.certified:
        try:
            result["pointwise_deviation"] = pointwise_formula_check(system, spec, cfg.k, cert)
        except ConfigurationError as exc:
            result["pointwise_deviation"] = None
            result["pointwise_note"] = str(exc)
    return result, None, EXIT_OK if cert.certified else EXIT_CERTIFICATION


def cmd_maximize(cfg: ExperimentConfig):
    """Monotone ascent on lambda_k over conformal factors."""
    backend = cfg.build_backend()
    w = factor_from_spec(backend, cfg.w)
    res = maximize_lambda_k(backend, cfg.k, w, steps=cfg.steps, step_size=cfg.step_size)
    result = {"status": res.status, "lambda_best": res.lambda_best,
              "w_best": res.w_best.coeffs, "trajectory": [list(r) for r in res.trajectory]}
    return result, trajectory_to_csv(res.trajectory), EXIT_OK


def cmd_derivative(cfg: ExperimentConfig):
    """One-sided derivatives of lambda_k along a direction."""
    backend = cfg.build_backend()
    system = assemble(backend, _factor(cfg, backend))
    spec = solve(system)
    if cfg.direction is None:
        raise ConfigurationError("derivative needs --direction")
    alpha = direction_from_spec(backend, cfg.direction)
    if cfg.remove_mean:
        alpha = make_admissible(system, alpha)
    rep = one_sided_derivatives(system, spec, cfg.k, alpha)
    return {"derivative": rep.to_json()}, None, EXIT_OK


def _check(name, value, tol, extra=None):
    d = {"name": name, "value": value, "tol": tol, "passed": bool(value <= tol), "skipped": False}
    if extra:
        d.update(extra)
    return d


def _skip(name, reason):
    return {"name": name, "value": None, "tol": None, "passed": True, "skipped": True,
            "reason": reason}


def cmd_verify(cfg: ExperimentConfig):
    """Identity suite: Leibniz rule, conformal covariance, scaling law, kernel invariance."""
    backend = cfg.build_backend()
    rng = np.random.default_rng(cfg.seed)
    checks = []
    base = solve(assemble(backend))
    scale = max(1.0, float(np.max(np.abs(base.eigenvalues))))
    checks.append(_check("eigen_residuals", float(np.max(base.residual_norms)) / scale, 1e-10))

    if isinstance(backend, SphereBackend) and backend.max_degree >= 2:
        x = backend.nodes / backend.radius
        c1, c2 = backend.project(x[:, 0]), backend.project(x[:, 1])
        for label, (f, h) in {"x1,x2": (c1, c2), "x1,x1": (c1, c1)}.items():
            lhs, rhs = leibniz_sides(backend, f, h)
            checks.append(_check(f"leibniz({label})", float(np.max(np.abs(lhs - rhs))), 1e-9))
        if abs(backend.radius - 1.0) < 1e-14:
            lhs, _ = leibniz_sides(backend, c1, c2)
            checks.append(_check("leibniz_value(x1,x2)",
                                 float(np.max(np.abs(lhs - 120 * x[:, 0] * x[:, 1]))), 1e-9))
            ident = SphereValuedMap(np.stack([backend.project(x[:, i]) for i in range(5)]))
            checks.append(_check("identity_map_residual", paneitz_map_residual(backend, ident), 1e-9))
    else:
        checks.append(_skip("leibniz", "sphere backend with max_degree >= 2 only"))

    if isinstance(backend, TorusBackend):
        K = assemble(backend).energy
        worst = 0.0
        for _ in range(cfg.samples):
            w = random_factor(backend, rng, degree=1, amplitude=0.3)
            Kh = conformal_curvature_torus(backend, w).energy_matrix(backend)
            worst = max(worst, float(np.max(np.abs(Kh - K))))
        checks.append(_check("conformal_covariance", worst, 1e-7))
    else:
        checks.append(_skip("conformal_covariance", "needs coordinate Hessians (torus only)"))

    worst_scaling = 0.0
    base_kernel = int(np.sum(np.abs(base.eigenvalues) <= 1e-8 * scale))
    base_neg = int(np.sum(base.eigenvalues < -1e-8 * scale))
    kernel_ok = True
    for _ in range(cfg.samples):
        w = normalize_volume(backend, random_factor(backend, rng, degree=min(2, backend.max_degree),
                                                    amplitude=0.3))
        lam = solve(assemble(backend, w)).eigenvalues
        shift = 0.3
        lam_s = solve(assemble(backend, w.shifted(backend, shift))).eigenvalues
        worst_scaling = max(worst_scaling,
                            float(np.max(np.abs(lam_s * math.exp(4 * shift) - lam)) / scale))
        ls = max(1.0, float(np.max(np.abs(lam))))
        kernel_ok &= int(np.sum(np.abs(lam) <= 1e-8 * ls)) == base_kernel
        kernel_ok &= int(np.sum(lam < -1e-8 * ls)) == base_neg
    checks.append(_check("scaling_law", worst_scaling, 1e-10))
    checks.append(_check("kernel_invariance", 0.0 if kernel_ok else 1.0, 0.0,
                         {"kernel_dim": base_kernel, "negative_count": base_neg}))
    ok = all(c["passed"] for c in checks)
    return {"checks": checks, "all_passed": ok}, None, EXIT_OK if ok else EXIT_CERTIFICATION


HANDLERS = {"spectrum": cmd_spectrum, "balance": cmd_balance, "extremal": cmd_extremal,
            "maximize": cmd_maximize, "derivative": cmd_derivative, "verify": cmd_verify}


# ---------------------------------------------------------------------------
# argument parsing and output

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file (flags given explicitly override it)")
    common.add_argument("--backend", choices=("sphere", "torus", "s2xs2"))
    common.add_argument("--max-degree", type=int, help="sphere / s2xs2 truncation degree")
    common.add_argument("--max-freq", type=int, help="torus Fourier cutoff")
    common.add_argument("--radius", type=float, nargs="+", help="sphere radius, or the two s2xs2 radii")
    common.add_argument("--periods", type=float, nargs=4, help="torus periods")
    common.add_argument("--quad-degree", type=int,
                        help="quadrature exactness degree (torus: nodes per dimension)")
    common.add_argument("--w", help="conformal factor: 'zero', expression (e.g. '0.1*x1^2') or coefficient file")
    common.add_argument("--k", type=int, help="eigenvalue index (1-based)")
    common.add_argument("--count", type=int, help="number of eigenvalues")
    common.add_argument("--steps", type=int)
    common.add_argument("--step-size", type=float)
    common.add_argument("--tol", type=float)
    common.add_argument("--seed", type=int)
    common.add_argument("--direction", help="direction expression or coefficient file")
    common.add_argument("--remove-mean", action="store_true", default=None,
                        help="subtract the weighted mean of the direction")
    common.add_argument("--samples", type=int, help="random samples for verify")
    common.add_argument("--out", help="output directory")
    common.add_argument("--format", choices=("json", "csv"))

    parser = argparse.ArgumentParser(prog="paneitz",
                                     description="Spectral-Galerkin Paneitz operator experiments.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=HANDLERS[name].__doc__ or name)
    return parser


def config_from_args(args) -> ExperimentConfig:
    base = {}
    if args.config:
        try:
            base = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigurationError(f"cannot read config {args.config}: {exc}") from None
    base["command"] = args.command
    for f in fields(ExperimentConfig):
        if f.name == "command":
            continue
        v = getattr(args, f.name, None)
        if v is not None:
            base[f.name] = v
    return ExperimentConfig.from_json(base)


def _emit(cfg, payload_text, csv_text):
    if cfg.out:
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"{cfg.command}.json").write_text(payload_text)
        if csv_text is not None:
            (out / f"{cfg.command}.csv").write_text(csv_text)
    if cfg.format == "csv" and csv_text is not None:
        sys.stdout.write(csv_text)
    else:
        sys.stdout.write(payload_text)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = config_from_args(args)
        result, csv_text, code = HANDLERS[cfg.command](cfg)
        stamp = datetime.now(timezone.utc).isoformat(timespec="seconds")
        _emit(cfg, dumps(envelope(cfg.command, cfg.to_json(), result, __version__, stamp)), csv_text)
        return code
    except CertificationFailure as exc:
        print(f"certification failure: {exc}", file=sys.stderr)
        return EXIT_CERTIFICATION
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ConfigurationError, OSError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except PaneitzError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
