"""Named experiments: config in, long-format result rows out.

Each runner appends ``Row`` records to a list and returns ``derived``, the
constants (norm sums, moments) that went into its bounds. A row's ``holds``
column is ``True``/``False`` for an asserted inequality and ``None`` for a
value that is only reported.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__, oracles
from .config import ExperimentConfig
from .errors import DomainError
from .disorder import (
    GAUSSIAN,
    SIGMA_SLACK,
    STREAM_XI,
    DisorderDistribution,
    SeedPolicy,
    _couplings,
    concentration_tail,
    guerra_interpolation_scan,
    ibp_catalog,
    pressure_derivative_check,
    ibp_residual,
    quenched_pressure,
    universality_gap,
)
from .feynman_kac import (
    PathMeasureParams,
    covariance_check,
    fk_concentration_probe,
    fk_matrix_element,
    fk_partition_estimate,
    sample_path,
)
from .gibbs import coupling_response, duhamel_three_point, duhamel_two_point, make_gibbs, thermal_average
from .hamiltonians import DisorderedHamiltonian, build_model, norm_power_sum
from .spin_operators import HermitianOperator, SpinSystem
from .trotter import (
    check_holder_trace,
    check_trace_product_bound,
    hermitian_expm,
    partition_function_ratio_bound,
    random_hermitian,
    trotter_error_curve,
)

CSV_COLUMNS = ("experiment", "model", "n_sites", "beta", "case", "quantity",
               "value", "stderr", "bound", "holds")
TOLERANCE_POLICY = {
    "monte_carlo": "holds iff value <= bound + 3 * stderr",
    "exact": "holds iff value <= bound * (1 + 1e-10) (or an absolute tolerance named in the row case)",
    "finite_difference": "h = 1e-4; |FD - formula| <= 1e-5 * max(|formula|, natural scale)"
                         " + 16 eps |X| / h^m for the m-th difference",
}
STREAM_INSTANCES = 5

DUHAMEL_TOL = 1e-8
POSITIVITY_TOL = 1e-10
FD_STEP = 1e-4
FD_REL_TOL = 1e-5
# roundoff of a central difference: evaluation error ~ eps |X| amplified by 1/h and 4/h^2
FD_ROUNDOFF_UNITS = 16.0
TROTTER_SLOPE_TOL = 0.15


@dataclass
class Row:
    model: str
    n_sites: Optional[int]
    beta: Optional[float]
    case: str
    quantity: str
    value: Optional[float]
    stderr: Optional[float] = None
    bound: Optional[float] = None
    holds: Optional[bool] = None


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v), ".17g")


def rows_to_csv(experiment: str, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in rows:
        w.writerow([experiment, r.model, _fmt(r.n_sites), _fmt(r.beta), r.case, r.quantity,
                    _fmt(r.value), _fmt(r.stderr), _fmt(r.bound), _fmt(r.holds)])
    return buf.getvalue()


def _model(cfg: ExperimentConfig, n: Optional[int] = None) -> DisorderedHamiltonian:
    return build_model(cfg.model, n if n is not None else cfg.n_sites, **cfg.model_params())


def _dist(cfg: ExperimentConfig) -> DisorderDistribution:
    return DisorderDistribution.by_name(cfg.dist)


def _model_constants(ham: DisorderedHamiltonian) -> dict:
    return {
        "family": ham.family, "n_sites": ham.system.n_sites, "n_terms": ham.n_terms,
        "norm_sum_p2": norm_power_sum(ham, 2) if ham.n_terms else 0.0,
        "norm_sum_p3": norm_power_sum(ham, 3) if ham.n_terms else 0.0,
        "sign_convention": ham.sign_convention, "field_scaling": ham.field_scaling,
    }


def _dist_constants(dist: DisorderDistribution) -> dict:
    return {"name": dist.name, "mean": dist.mean, "variance": dist.variance,
            "abs_third": dist.abs_third}


def _replica_couplings(ham, dist, seed, replica=0) -> np.ndarray:
    return _couplings(ham, dist, SeedPolicy(seed), STREAM_XI, replica, replica + 1)[0]


def run_exact(cfg, rows):
    ham = _model(cfg)
    dist = _dist(cfg)
    xi = _replica_couplings(ham, dist, cfg.master_seed)
    for beta in cfg.beta:
        state = make_gibbs(ham, beta, xi)
        n = ham.system.n_sites
        rows.append(Row(ham.family, n, beta, "replica=0", "log_partition", state.log_partition))
        rows.append(Row(ham.family, n, beta, "replica=0", "log_partition_per_site",
                        state.log_partition / n))
    return {"model": _model_constants(ham), "dist": _dist_constants(dist)}


def _label(index) -> str:
    return "-".join(str(v) for v in index) if isinstance(index, tuple) else str(index)


def _scale_tol(formula: float, scale: float) -> float:
    return FD_REL_TOL * max(abs(formula), scale)


def run_duhamel(cfg, rows):
    ham = _model(cfg)
    dist = _dist(cfg)
    n = ham.system.n_sites
    if not ham.n_terms:
        raise DomainError("duhamel needs a model with disorder terms")
    policy = SeedPolicy(cfg.master_seed)
    for beta in cfg.beta:
        for r in range(cfg.n_instances):
            rng = policy.generator(r, STREAM_INSTANCES)
            xi = dist.sample(rng, ham.n_terms)
            i, j = (int(v) for v in rng.integers(0, ham.n_terms, 2))
            xa, xb = ham.terms[i].operator, ham.terms[j].operator
            state = make_gibbs(ham, beta, xi)
            theta = state.hamiltonian_exponent
            case = f"instance={r};A={_label(ham.terms[i].index)};B={_label(ham.terms[j].index)}"
            two = duhamel_two_point(state, xa, xb)
            rows.append(Row(ham.family, n, beta, case, "two_point", two))
            if ham.system.dim <= 16:
                quad = oracles.duhamel_two_point(theta, xa, xb).real
                rows.append(Row(ham.family, n, beta, case + ";tol=1e-8", "two_point_vs_quadrature",
                                abs(two - quad), bound=DUHAMEL_TOL, holds=abs(two - quad) <= DUHAMEL_TOL))
            if ham.system.dim <= 8:
                three = duhamel_three_point(state, xa, xb, xa)
                quad3 = oracles.duhamel_three_point(theta, xa, xb, xa).real
                rows.append(Row(ham.family, n, beta, case + ";tol=1e-8", "three_point_vs_quadrature",
                                abs(three - quad3), bound=DUHAMEL_TOL,
                                holds=abs(three - quad3) <= DUHAMEL_TOL))
            var = duhamel_two_point(state, xa, xa) - thermal_average(state, xa) ** 2
            rows.append(Row(ham.family, n, beta, case + ";tol=1e-10", "duhamel_variance", var,
                            bound=-POSITIVITY_TOL, holds=var >= -POSITIVITY_TOL))
            rows.extend(_derivative_rows(ham, beta, xi, i, case))
        if ham.n_terms and beta != 0:
            p = pressure_derivative_check(ham, beta, dist, cfg.n_samples, cfg.master_seed,
                                          h=cfg.fd_step)
            allowance = p.correction_radius + p.truncation
            rows.append(Row(ham.family, n, beta, f"dist={dist.name};fd_step={cfg.fd_step!r}",
                            "pressure_fd_minus_duhamel", abs(p.difference), p.difference_stderr,
                            allowance, p.holds))
            rows.append(Row(ham.family, n, beta, f"dist={dist.name}", "pressure_fd",
                            p.finite_difference))
            rows.append(Row(ham.family, n, beta, f"dist={dist.name}", "pressure_duhamel",
                            p.duhamel_mean))
    return {"model": _model_constants(ham), "dist": _dist_constants(dist)}


def _derivative_rows(ham, beta, xi, i, case):
    """Finite differences of the coupling response against the Duhamel formulas."""
    index = ham.terms[i].index
    resp = coupling_response(ham, beta, xi, index)
    norm = float(ham.term_norms[i])
    vals = {}
    for step in (-FD_STEP, FD_STEP):
        shifted = np.array(xi, dtype=float)
        shifted[i] += step
        st = make_gibbs(ham, beta, shifted)
        vals[step] = thermal_average(st, ham.terms[i].operator)
    fd1 = (vals[FD_STEP] - vals[-FD_STEP]) / (2 * FD_STEP)
    fd2 = (vals[FD_STEP] - 2 * resp.value + vals[-FD_STEP]) / FD_STEP**2
    out = []
    unit = FD_ROUNDOFF_UNITS * np.finfo(float).eps * norm
    for name, fd, formula, scale, roundoff in (
        ("first_derivative", fd1, resp.first, abs(beta) * norm**2, unit / FD_STEP),
        ("second_derivative", fd2, resp.second, beta**2 * norm**3, unit / FD_STEP**2),
    ):
        tol = _scale_tol(formula, scale) + roundoff
        out.append(Row(ham.family, ham.system.n_sites, beta, case + ";fd_step=1e-4",
                       name + "_fd_error", abs(fd - formula), bound=tol, holds=abs(fd - formula) <= tol))
    three_cap = norm**3 + 1e-9
    out.append(Row(ham.family, ham.system.n_sites, beta, case + ";A=B=C", "three_point_ceiling",
                   abs(resp.three_point), bound=three_cap, holds=abs(resp.three_point) <= three_cap))
    ceiling = 6 * beta**2 * norm**3
    out.append(Row(ham.family, ham.system.n_sites, beta, case, "second_derivative_ceiling",
                   abs(resp.second), bound=ceiling, holds=abs(resp.second) <= ceiling * (1 + 1e-10) + 1e-12))
    return out


def _unit_norm(m: np.ndarray) -> np.ndarray:
    return m / np.max(np.abs(np.linalg.eigvalsh(m)))


def run_trotter(cfg, rows):
    system = SpinSystem(cfg.n_sites)
    policy = SeedPolicy(cfg.master_seed)
    for r in range(cfg.n_instances):
        rng = policy.generator(r, STREAM_INSTANCES)
        a = HermitianOperator.from_matrix(system, _unit_norm(random_hermitian(system.dim, rng)))
        b = HermitianOperator.from_matrix(system, _unit_norm(random_hermitian(system.dim, rng)))
        curve, slope = trotter_error_curve(a, b, cfg.k_list)
        errs = [e for _, e in curve]
        monotone = all(e2 <= e1 + 1e-12 for e1, e2 in zip(errs, errs[1:]))
        for k, e in curve:
            rows.append(Row("random", system.n_sites, None, f"instance={r};k={k}", "trotter_error", e))
        rows.append(Row("random", system.n_sites, None, f"instance={r}", "error_nonincreasing",
                        float(monotone), holds=monotone))
        ok = slope is not None and abs(slope + 1.0) <= TROTTER_SLOPE_TOL
        rows.append(Row("random", system.n_sites, None, f"instance={r};target=-1", "loglog_slope",
                        slope, bound=TROTTER_SLOPE_TOL, holds=ok))
        # commuting pair: A and a polynomial in A
        c = HermitianOperator.from_matrix(system, a.entries @ a.entries - 0.5 * a.entries)
        (k1, e1), = trotter_error_curve(a, c, [1])[0]
        rows.append(Row("random", system.n_sites, None, f"instance={r};k=1;tol=1e-10",
                        "commuting_error", e1, bound=1e-10, holds=e1 <= 1e-10))
    return {"k_list": list(cfg.k_list)}


def run_trace_bounds(cfg, rows):
    ham = _model(cfg)
    dist = _dist(cfg)
    system = ham.system
    policy = SeedPolicy(cfg.master_seed)
    beta = cfg.beta[0]
    for r in range(cfg.n_instances):
        rng = policy.generator(r, STREAM_INSTANCES)
        x = HermitianOperator.from_matrix(system, random_hermitian(system.dim, rng))
        h = HermitianOperator.from_matrix(system, random_hermitian(system.dim, rng))
        parts = rng.dirichlet(np.ones(int(rng.integers(1, 7))))
        parts = parts / parts.sum()
        c = check_trace_product_bound(x, h, parts)
        rows.append(Row("random", system.n_sites, None, f"instance={r};n={len(parts)}",
                        "trace_product_bound", c.lhs, bound=c.rhs, holds=c.holds))
        k2 = 2 * int(rng.integers(1, 4))
        mats = [rng.standard_normal((system.dim, system.dim))
                + 1j * rng.standard_normal((system.dim, system.dim)) for _ in range(k2)]
        c = check_holder_trace(mats)
        rows.append(Row("random", system.n_sites, None, f"instance={r};2k={k2}",
                        "holder_trace_bound", c.lhs, bound=c.rhs, holds=c.holds))
        if ham.n_terms:
            xi = dist.sample(rng, ham.n_terms)
            i = int(rng.integers(0, ham.n_terms))
            c = partition_function_ratio_bound(ham, beta, xi, ham.terms[i].index)
            rows.append(Row(ham.family, system.n_sites, beta, f"instance={r};I={_label(ham.terms[i].index)}",
                            "partition_ratio", c.ratio, bound=c.bound, holds=c.holds))
    return {"model": _model_constants(ham), "dist": _dist_constants(dist)}


def run_universality(cfg, rows):
    ham = _model(cfg)
    dist = _dist(cfg)
    n = ham.system.n_sites
    for beta in cfg.beta:
        g = universality_gap(ham, beta, dist, cfg.n_samples, cfg.master_seed)
        case = f"dist={dist.name}"
        rows.append(Row(ham.family, n, beta, case, "alpha_per_site_xi", g.alpha_xi.mean / n,
                        g.alpha_xi.std_error / n))
        rows.append(Row(ham.family, n, beta, "dist=gaussian", "alpha_per_site_gauss",
                        g.alpha_gauss.mean / n, g.alpha_gauss.std_error / n))
        rows.append(Row(ham.family, n, beta, case, "gap_per_site", g.gap_per_site,
                        g.stderr_per_site, g.bound_per_site, g.gap_le_bound))
    return {"model": _model_constants(ham), "dist": _dist_constants(dist)}


def run_concentration(cfg, rows):
    ham = _model(cfg)
    n = ham.system.n_sites
    for beta in cfg.beta:
        sigma = math.sqrt(beta**2 * norm_power_sum(ham, 2))
        grid = [u * sigma for u in cfg.u_grid] if cfg.u_scale == "sigma" else list(cfg.u_grid)
        for t in concentration_tail(ham, beta, cfg.n_samples, grid, cfg.master_seed):
            rows.append(Row(ham.family, n, beta, f"u={t.u!r}", "tail_probability",
                            t.empirical, t.stderr, t.bound, t.holds))
    return {"model": _model_constants(ham), "dist": _dist_constants(GAUSSIAN)}


def run_ibp(cfg, rows):
    for name, dist, f, fp, sup in ibp_catalog():
        c = ibp_residual(dist, f, fp, sup)
        rows.append(Row("none", None, None, f"dist={dist.name};F={name}", "ibp_residual",
                        c.residual, bound=c.bound, holds=c.holds))
    return {}


def run_interpolate(cfg, rows):
    ham = _model(cfg)
    dist = _dist(cfg)
    n = ham.system.n_sites
    for beta in cfg.beta:
        t = beta**2
        grid = list(np.linspace(0.0, t, cfg.s_points))
        for r in guerra_interpolation_scan(ham, beta, dist, grid, cfg.n_samples, cfg.master_seed):
            case = f"s={r.s!r};dist={dist.name}"
            rows.append(Row(ham.family, n, beta, case, "alpha_interp", r.alpha_hat, r.alpha_stderr))
            if r.slope is not None:
                rows.append(Row(ham.family, n, beta, case, "alpha_interp_slope", abs(r.slope),
                                r.slope_stderr, r.slope_bound, r.holds))
    return {"model": _model_constants(ham), "dist": _dist_constants(dist)}


def run_fk_check(cfg, rows):
    ham = _model(cfg)
    dist = _dist(cfg)
    system = ham.system
    n = system.n_sites
    xi = _replica_couplings(ham, dist, cfg.master_seed)
    for beta in cfg.beta:
        state = make_gibbs(ham, beta, xi)
        z_exact = math.exp(state.log_partition)
        est = fk_partition_estimate(ham, beta, xi, cfg.n_paths, cfg.master_seed)
        rows.append(Row(ham.family, n, beta, "replica=0", "partition_function_fk", est.mean,
                        est.std_error, z_exact, abs(est.mean - z_exact) <= SIGMA_SLACK * est.std_error))
        expo = hermitian_expm(state.hamiltonian_exponent.entries)
        up = np.ones(n, dtype=int)
        flipped = up.copy()
        flipped[0] = -1
        for label, tgt in (("diag", up), ("offdiag", flipped)):
            exact = float(expo[system.index_of(up), system.index_of(tgt)].real)
            me = fk_matrix_element(ham, beta, xi, up, tgt, cfg.n_paths, cfg.master_seed + 1)
            rows.append(Row(ham.family, n, beta, f"element={label}", "matrix_element_fk", me.mean,
                            me.std_error, exact, abs(me.mean - exact) <= SIGMA_SLACK * me.std_error))
            rows.append(Row(ham.family, n, beta, f"element={label}", "matrix_element_nonnegative",
                            me.mean, me.std_error, 0.0, me.mean >= -SIGMA_SLACK * me.std_error))
        policy = SeedPolicy(cfg.master_seed)
        params = PathMeasureParams(cfg.lam, beta, n)
        for r in range(cfg.n_instances):
            rng = policy.generator(r, STREAM_INSTANCES)
            pa = sample_path(params, "uniform", rng)
            pb = sample_path(params, "uniform", rng)
            c = covariance_check(pa, pb, 2000, cfg.master_seed + r)
            rows.append(Row(ham.family, n, beta, f"pair={r};tol=1e-10", "covariance_identity_error",
                            abs(c.analytic - c.overlap_form), bound=1e-10,
                            holds=abs(c.analytic - c.overlap_form) <= 1e-10 * max(1.0, abs(c.analytic))))
            # per-pair 3 sigma over many pairs would flag chance misses; reported only
            rows.append(Row(ham.family, n, beta, f"pair={r}", "covariance_mc", c.mc, c.mc_stderr,
                            c.analytic))
    return {"model": _model_constants(ham), "dist": _dist_constants(dist)}


def run_fk_concentration(cfg, rows):
    ham = _model(cfg)
    n = ham.system.n_sites
    for beta in cfg.beta:
        probe = fk_concentration_probe(ham, beta, cfg.n_samples, cfg.u_grid, cfg.master_seed)
        for t in probe.rows:
            rows.append(Row(ham.family, n, beta, f"u={t.u!r}", "per_site_tail_probability",
                            t.empirical, t.stderr, t.bound, t.holds))
        rows.append(Row(ham.family, n, beta, "reported", "best_fit_K", probe.best_fit_k))
    return {"model": _model_constants(ham), "dist": _dist_constants(GAUSSIAN)}


def pressure_trend(cfg, rows):
    """Per-site quenched pressure along an ascending N grid; reported, never asserted."""
    grid = list(cfg.n_grid)
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ValueError("n_grid must be ascending")
    dist = _dist(cfg)
    derived = {}
    for beta in cfg.beta:
        prev = None
        for n in grid:
            ham = _model(cfg, n)
            est = quenched_pressure(ham, beta, dist, cfg.n_samples, cfg.master_seed, keep_values=False)
            rows.append(Row(ham.family, n, beta, f"dist={dist.name}", "alpha_per_site",
                            est.mean / n, est.std_error / n))
            if prev is not None:
                rows.append(Row(ham.family, n, beta, f"from_n={prev[0]}", "successive_difference",
                                est.mean / n - prev[1], math.hypot(est.std_error / n, prev[2])))
            prev = (n, est.mean / n, est.std_error / n)
            derived[f"n={n}"] = _model_constants(ham)
    derived["dist"] = _dist_constants(dist)
    return derived


EXPERIMENT_RUNNERS = {
    "exact": run_exact,
    "duhamel": run_duhamel,
    "trotter": run_trotter,
    "trace-bounds": run_trace_bounds,
    "universality": run_universality,
    "concentration": run_concentration,
    "ibp": run_ibp,
    "interpolate": run_interpolate,
    "fk-check": run_fk_check,
    "fk-concentration": run_fk_concentration,
    "pressure-trend": pressure_trend,
}


def _write_manifest(path: Path, manifest: dict) -> None:
    tmp = path.with_suffix(".tmp")
    tmp.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")
    os.replace(tmp, path)


def run(cfg: ExperimentConfig, output_dir=None):
    """Run one experiment, writing ``manifest.json`` then ``results.csv``.

    Returns ``(status, rows)`` with status ``"ok"`` or ``"assertion_failed"``.
    On an exception the rows produced so far are still written, the manifest
    is marked ``failed`` with the error text, and the exception propagates.
    """
    cfg.validate()
    out = Path(output_dir or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest_path = out / "manifest.json"
    manifest = {
        "config": cfg.resolved(),
        "library_version": __version__,
        "timestamp": datetime.now(timezone.utc).isoformat(),
        "tolerance_policy": TOLERANCE_POLICY,
        "csv_columns": list(CSV_COLUMNS),
        "status": "running",
    }
    _write_manifest(manifest_path, manifest)
    rows: list = []
    try:
        derived = EXPERIMENT_RUNNERS[cfg.experiment](cfg, rows)
    except Exception as exc:
        (out / "results.csv").write_text(rows_to_csv(cfg.experiment, rows))
        manifest.update(status="failed", error=f"{type(exc).__name__}: {exc}", n_rows=len(rows))
        _write_manifest(manifest_path, manifest)
        raise
    (out / "results.csv").write_text(rows_to_csv(cfg.experiment, rows))
    failed = [r for r in rows if r.holds is False]
    manifest.update(status="completed_with_violations" if failed else "completed",
                    derived=derived, n_rows=len(rows), n_violations=len(failed))
    _write_manifest(manifest_path, manifest)
    return ("assertion_failed" if failed else "ok"), rows
