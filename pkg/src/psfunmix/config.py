"""TOML configuration loading for experiments and explicit problems."""

from __future__ import annotations

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .errors import InputError
from .experiments import ExperimentConfig
from .model import problem_from_config
from .solver import SolveConfig


def load_toml(path) -> dict:
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise InputError(f"invalid TOML in {path}: {exc}") from exc


def solver_from_dict(cfg: dict) -> SolveConfig:
    allowed = {"method", "step", "max_iters", "grad_tol", "lm_damping_init", "theta_bounds"}
    unknown = set(cfg) - allowed
    if unknown:
        raise InputError(f"unknown solver fields {sorted(unknown)}")
    kwargs = dict(cfg)
    if "theta_bounds" in kwargs:
        kwargs["theta_bounds"] = tuple(tuple(b) for b in kwargs["theta_bounds"])
    return SolveConfig(**kwargs)


def experiment_from_toml(cfg: dict) -> ExperimentConfig:
    """Build an ExperimentConfig from the nested TOML layout.

    Sections: [grid] T/N, [model] theta_star/counts/eta_star,
    [experiment] Monte Carlo + landscape knobs, [certificate] estimation
    knobs, [solver] solver knobs.  Missing sections fall back to defaults.
    """
    kwargs = {}
    grid = cfg.get("grid", {})
    if "T" in grid:
        kwargs["T"] = float(grid["T"])
    if "N" in grid:
        kwargs["N"] = int(grid["N"])
    model = cfg.get("model", {})
    if "theta_star" in model:
        kwargs["theta_star"] = tuple(float(t) for t in model["theta_star"])
    if "counts" in model:
        kwargs["counts"] = tuple(int(L) for L in model["counts"])
    if "eta_star" in model:
        kwargs["eta_star"] = tuple(float(e) for e in model["eta_star"])
    exp = cfg.get("experiment", {})
    for key in ("trials", "distance_bins", "seed", "landscape_resolution", "threads"):
        if key in exp:
            kwargs[key] = int(exp[key])
    for key in ("distance_min", "distance_max", "landscape_span"):
        if key in exp:
            kwargs[key] = float(exp[key])
    if "Delta_list" in exp:
        kwargs["Delta_list"] = tuple(float(d) for d in exp["Delta_list"])
    if "randomize_eta" in exp:
        kwargs["randomize_eta"] = bool(exp["randomize_eta"])
    cert = cfg.get("certificate", {})
    if "theta_box_factor" in cert:
        kwargs["theta_box_factor"] = tuple(float(f) for f in cert["theta_box_factor"])
    if "lipschitz_samples" in cert:
        kwargs["lipschitz_samples"] = int(cert["lipschitz_samples"])
    if "truncation_tol" in cert:
        kwargs["truncation_tol"] = float(cert["truncation_tol"])
    if "solver" in cfg:
        kwargs["solver"] = solver_from_dict(cfg["solver"])
    try:
        return ExperimentConfig(**kwargs)
    except TypeError as exc:
        raise InputError(f"bad experiment config: {exc}") from exc


def r_star_scope_from_toml(cfg: dict) -> str:
    return cfg.get("certificate", {}).get("r_star_scope", "full-bracket")


def problem_from_toml(cfg: dict):
    """Explicit (grid, support, params) problem, for the `solve` subcommand."""
    return problem_from_config(cfg)
