"""Command-line interface.

Every subcommand reads a TOML config, writes its outputs atomically into
--out (temp file + rename), and drops a manifest.json capturing the config
hash, package/library versions, and the effective seed so any run can be
reproduced bit-identically.

Exit codes: 0 success, 1 validation/input error, 2 numerical failure
(divergence, or an infeasible certificate under --require-feasible).
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import sys
import tempfile

import click
import numpy as np
import scipy

from . import __version__
from .errors import DivergenceError, InputError, PsfUnmixError
from .certificate import compute_constants
from .config import (
    experiment_from_toml,
    load_toml,
    problem_from_toml,
    r_star_scope_from_toml,
    solver_from_dict,
)
from .experiments import (
    certify,
    export_landscape_csv,
    landscape,
    monte_carlo,
    write_plot_spec,
)
from .kernels import lorentz
from .libsfit import (
    SpectrumObservation,
    build_concentration_matrix,
    export_fit_csv,
    fit_spectrum,
    ingest_lines,
    synthesize_spectrum,
)
from .metrics import build_table
from .model import MixtureParams, build_dictionary, synthesize
from .solver import solve

EXIT_VALIDATION = 1
EXIT_NUMERICAL = 2


def _atomic_write(path, write_fn):
    """Write via a sibling temp file and rename, so readers never see partial files."""
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    os.close(fd)
    try:
        write_fn(tmp)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)


def _write_text(path, text):
    _atomic_write(path, lambda tmp: open(tmp, "w", newline="").write(text))


def _manifest(out_dir, config_path, seed, extra=None):
    os.makedirs(out_dir, exist_ok=True)
    digest = None
    if config_path is not None:
        with open(config_path, "rb") as fh:
            digest = hashlib.sha256(fh.read()).hexdigest()
    payload = {
        "config": str(config_path) if config_path else None,
        "config_sha256": digest,
        "seed": seed,
        "versions": {
            "psfunmix": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "python": sys.version.split()[0],
        },
    }
    if extra:
        payload.update(extra)
    _write_text(os.path.join(out_dir, "manifest.json"), json.dumps(payload, indent=2) + "\n")


def _load_experiment(config_path, seed, threads):
    cfg = load_toml(config_path)
    exp = experiment_from_toml(cfg)
    if seed is not None:
        exp = dataclasses.replace(exp, seed=seed)
    if threads is not None:
        exp = dataclasses.replace(exp, threads=threads)
    return cfg, exp


def _common_options(fn):
    fn = click.option("--config", "config_path", required=True,
                      type=click.Path(exists=True, dir_okay=False))(fn)
    fn = click.option("--out", "out_dir", default=".",
                      type=click.Path(file_okay=False))(fn)
    fn = click.option("--seed", type=int, default=None)(fn)
    fn = click.option("--threads", type=int, default=None)(fn)
    return fn


@click.group()
def main():
    """Spike-mixture unmixing with basin-of-attraction certification."""


def _run(body):
    try:
        body()
    except (InputError, click.UsageError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_VALIDATION)
    except DivergenceError as exc:
        click.echo(f"numerical failure: {exc}", err=True)
        sys.exit(EXIT_NUMERICAL)
    except PsfUnmixError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_NUMERICAL)


@main.command(name="certify")
@_common_options
@click.option("--delta", type=float, default=None,
              help="Separation; defaults to the first Delta_list entry.")
@click.option("--require-feasible", is_flag=True, default=False)
def certify_cmd(config_path, out_dir, seed, threads, delta, require_feasible):
    """Compute the basin certificate for one separation value."""

    def body():
        cfg, exp = _load_experiment(config_path, seed, threads)
        Delta = delta if delta is not None else exp.Delta_list[0]
        cert = certify(exp, Delta, r_star_scope=r_star_scope_from_toml(cfg))
        os.makedirs(out_dir, exist_ok=True)
        _write_text(os.path.join(out_dir, "certificate.json"), cert.to_json() + "\n")
        _manifest(out_dir, config_path, exp.seed, {"Delta": Delta})
        click.echo(f"feasible={cert.feasible} epsilon_0={cert.epsilon_0:g} "
                   f"c_minus={cert.c_minus:g} r_star={cert.r_star:g}")
        if require_feasible and not cert.feasible:
            click.echo("certificate infeasible (--require-feasible)", err=True)
            sys.exit(EXIT_NUMERICAL)

    _run(body)


@main.command(name="solve")
@_common_options
@click.option("--init-scale", type=float, default=1.0,
              help="Multiplies the true theta to form the initialization.")
def solve_cmd(config_path, out_dir, seed, threads, init_scale):
    """Solve an explicit problem config (grid/support/params sections)."""

    def body():
        cfg = load_toml(config_path)
        grid, support, params = problem_from_toml(cfg)
        family = lorentz()
        x_star = synthesize(build_dictionary(family, grid, support, params.theta), params.eta)
        init = MixtureParams(theta=params.theta * init_scale, eta=params.eta)
        solver_cfg = solver_from_dict(cfg.get("solver", {})) if "solver" in cfg else None
        report = solve(family, grid, support, x_star, init, config=solver_cfg,
                       ground_truth=params)
        os.makedirs(out_dir, exist_ok=True)
        _atomic_write(os.path.join(out_dir, "trace.csv"), report.export_trace)
        summary = {
            "converged": report.converged,
            "iterations": report.iterations,
            "final_loss": float(report.loss_trace[-1]),
            "grad_norm": report.grad_norm,
            "theta_hat": list(report.params.theta),
            "theta_error": report.theta_error,
            "eta_error": report.eta_error,
        }
        _write_text(os.path.join(out_dir, "solve.json"), json.dumps(summary, indent=2) + "\n")
        _manifest(out_dir, config_path, seed)
        click.echo(f"converged={report.converged} iters={report.iterations} "
                   f"loss={report.loss_trace[-1]:g}")

    _run(body)


@main.command(name="landscape")
@_common_options
@click.option("--delta", type=float, default=None)
def landscape_cmd(config_path, out_dir, seed, threads, delta):
    """Loss grid over (theta1, theta2) with the certified radius annotated."""

    def body():
        cfg, exp = _load_experiment(config_path, seed, threads)
        Delta = delta if delta is not None else exp.Delta_list[0]
        cert = certify(exp, Delta, r_star_scope=r_star_scope_from_toml(cfg))
        ax1, ax2, losses, eps = landscape(exp, Delta, certificate=cert)
        os.makedirs(out_dir, exist_ok=True)
        _atomic_write(os.path.join(out_dir, "landscape.csv"),
                      lambda tmp: export_landscape_csv(tmp, ax1, ax2, losses))
        _atomic_write(
            os.path.join(out_dir, "landscape.plotspec"),
            lambda tmp: write_plot_spec(
                tmp, "contour", x="theta1 (log)", y="theta2 (log)",
                z="loss", annotate_radius=eps if eps is not None else "none",
                center=list(exp.theta_star),
            ),
        )
        _manifest(out_dir, config_path, exp.seed, {"Delta": Delta})
        click.echo(f"landscape {losses.shape} written; epsilon_0="
                   f"{eps if eps is not None else 'infeasible'}")

    _run(body)


@main.command(name="montecarlo")
@_common_options
@click.option("--delta", type=float, default=None)
def montecarlo_cmd(config_path, out_dir, seed, threads, delta):
    """Success-rate curve versus initialization distance."""

    def body():
        cfg, exp = _load_experiment(config_path, seed, threads)
        Delta = delta if delta is not None else exp.Delta_list[0]
        cert = certify(exp, Delta, r_star_scope=r_star_scope_from_toml(cfg))
        curve = monte_carlo(exp, Delta, certificate=cert)
        os.makedirs(out_dir, exist_ok=True)
        _atomic_write(os.path.join(out_dir, "success_curve.csv"), curve.export_csv)
        _atomic_write(
            os.path.join(out_dir, "success_curve.plotspec"),
            lambda tmp: write_plot_spec(
                tmp, "line", x="distance (log)", y="success rate",
                vline=curve.epsilon_0 if curve.epsilon_0 is not None else "none",
            ),
        )
        _manifest(out_dir, config_path, exp.seed, {"Delta": Delta})
        click.echo(f"rates: {np.array2string(curve.rates, precision=2)}")

    _run(body)


@main.command(name="metrics")
@_common_options
@click.option("--delta", type=float, default=None)
def metrics_cmd(config_path, out_dir, seed, threads, delta):
    """Export the coherence/interference table as CSVs."""

    def body():
        _, exp = _load_experiment(config_path, seed, threads)
        Delta = delta if delta is not None else exp.Delta_list[0]
        support = exp.support(Delta)
        table = build_table(exp.family(), exp.grid(), support,
                            exp.params().theta, Delta,
                            truncation_tol=exp.truncation_tol)
        os.makedirs(out_dir, exist_ok=True)
        coh = os.path.join(out_dir, "coherence.csv")
        intf = os.path.join(out_dir, "interference.csv")
        _atomic_write(coh, lambda tmp: table.export_csv(tmp, intf + ".tmp2"))
        os.replace(intf + ".tmp2", intf)
        _manifest(out_dir, config_path, exp.seed, {"Delta": Delta})
        click.echo(f"{len(table.C)} coherence and {len(table.I)} interference entries")

    _run(body)


@main.command(name="libs-fit")
@click.option("--spectrum", "spectrum_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--lines", "lines_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_dir", default=".", type=click.Path(file_okay=False))
def libs_fit_cmd(spectrum_path, lines_path, out_dir):
    """Fit a spectrum CSV (wavelength_nm, intensity[, transfer]) against a line database."""

    def body():
        db = ingest_lines(lines_path)
        rows = np.genfromtxt(spectrum_path, delimiter=",", names=True)
        if rows.dtype.names is None or "wavelength_nm" not in rows.dtype.names:
            raise InputError("spectrum CSV needs a wavelength_nm column")
        transfer = rows["transfer"] if "transfer" in rows.dtype.names else None
        obs = SpectrumObservation(
            wavelengths=rows["wavelength_nm"],
            x_obs=rows["intensity"],
            transfer=transfer,
        )
        result = fit_spectrum(db, obs, lorentz())
        os.makedirs(out_dir, exist_ok=True)
        _atomic_write(os.path.join(out_dir, "fit.csv"),
                      lambda tmp: export_fit_csv(tmp, obs, db, lorentz(), result))
        summary = {
            "theta_hat": list(result.theta_hat),
            "eta_hat": list(result.eta_hat),
            "nu_hat": list(result.nu_hat),
            "modalities": ["{} {}".format(*m) for m in db.modalities],
            "relative_fit_error": result.relative_fit_error,
            "negative_amplitudes": result.negative_amplitudes,
        }
        _write_text(os.path.join(out_dir, "fit.json"), json.dumps(summary, indent=2) + "\n")
        _manifest(out_dir, None, None, {"spectrum": spectrum_path, "lines": lines_path})
        click.echo(f"fit error {result.relative_fit_error:.4f}; "
                   f"nu_hat={np.array2string(result.nu_hat, precision=4)}")

    _run(body)


@main.command(name="synth")
@click.option("--lines", "lines_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_dir", default=".", type=click.Path(file_okay=False))
@click.option("--seed", type=int, default=0)
@click.option("--snr-db", type=float, default=40.0)
@click.option("--theta", type=str, default=None,
              help="Comma-separated widths, one per modality.")
@click.option("--nu", type=str, default=None,
              help="Comma-separated concentrations, one per modality.")
@click.option("--samples", type=int, default=4001)
def synth_cmd(lines_path, out_dir, seed, snr_db, theta, nu, samples):
    """Generate a synthetic spectrum CSV from a line database."""

    def body():
        db = ingest_lines(lines_path)
        wl = db.wavelengths()
        span = (wl.min() - 5.0, wl.max() + 5.0)
        thetas = ([float(t) for t in theta.split(",")] if theta
                  else [0.05 * (i + 1) for i in range(db.p)])
        nus = ([float(v) for v in nu.split(",")] if nu else [1.0] * db.p)
        if len(thetas) != db.p or len(nus) != db.p:
            raise InputError(f"need {db.p} theta and nu values (one per modality)")
        obs, truth = synthesize_spectrum(
            db, lorentz(), thetas, nus, span, samples,
            transfer=lambda lam: 1.0 + 0.2 * np.sin(2 * np.pi * (lam - span[0]) / (span[1] - span[0])),
            baseline=lambda lam: 0.05 + 0.01 * (lam - span[0]),
            snr_db=snr_db, seed=seed,
        )
        os.makedirs(out_dir, exist_ok=True)

        def write_csv(tmp):
            import csv as _csv

            with open(tmp, "w", newline="") as fh:
                w = _csv.writer(fh, lineterminator="\n")
                w.writerow(["wavelength_nm", "intensity", "transfer"])
                for lam, x, t in zip(obs.wavelengths, obs.x_obs, obs.transfer):
                    w.writerow([repr(float(lam)), repr(float(x)), repr(float(t))])

        _atomic_write(os.path.join(out_dir, "spectrum.csv"), write_csv)
        truth_out = {k: list(np.asarray(v, dtype=float)) for k, v in truth.items()
                     if k in ("theta", "eta", "nu")}
        _write_text(os.path.join(out_dir, "truth.json"), json.dumps(truth_out, indent=2) + "\n")
        _manifest(out_dir, None, seed, {"lines": lines_path, "snr_db": snr_db})
        click.echo(f"synthetic spectrum with {db.p} modalities written to {out_dir}")

    _run(body)


if __name__ == "__main__":
    main()
