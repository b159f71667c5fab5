"""Synthetic experiment harness: certification, loss landscapes, Monte Carlo.

The harness owns the support recipe used throughout the synthetic studies:
spike k of modality i sits at (i-1)*Delta + k*p*Delta, so interleaved
modalities achieve the minimal separation Delta exactly.

Randomness is counter-based: each Monte Carlo trial draws from a Philox stream
keyed by (seed, bin index, trial index), so trials can run in any order or in
parallel and still reproduce bit-identically.
"""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .certificate import BasinCertificate, compute_constants
from .errors import InputError
from .kernels import KernelFamily, lorentz
from .metrics import build_table, estimate_lipschitz
from .model import (
    MixtureParams,
    SamplingGrid,
    SupportSpec,
    build_dictionary,
    make_grid,
    synthesize,
)
from .solver import SolveConfig, recovered, solve


@dataclass(frozen=True)
class ExperimentConfig:
    """Complete, seed-reproducible description of a synthetic study."""

    T: float = 0.06
    N: int = 12001
    theta_star: tuple = (2e-5, 1e-3)
    counts: tuple = (10, 5)  # spikes per modality; amplitudes default to 1/L_i
    Delta_list: tuple = (1e-3, 5e-4, 2.5e-4)
    eta_star: tuple = None  # explicit amplitudes override the 1/L_i rule
    # Monte Carlo
    trials: int = 50
    distance_bins: int = 12
    distance_min: float = 1e-6
    distance_max: float = 1e-1
    seed: int = 0
    randomize_eta: bool = False  # opt-in joint (theta, eta) perturbation
    # landscape
    landscape_resolution: int = 41
    landscape_span: float = 4.0  # log10-symmetric factor around theta_star
    # certificate inputs
    theta_box_factor: tuple = (0.5, 1.5)  # box [f0*theta, f1*theta] per modality
    lipschitz_samples: int = 5
    truncation_tol: float = 1e-3
    solver: SolveConfig = field(default_factory=SolveConfig)
    threads: int = 1

    def family(self) -> KernelFamily:
        return lorentz()

    def grid(self) -> SamplingGrid:
        return make_grid(self.T, self.N)

    def support(self, Delta: float) -> SupportSpec:
        p = len(self.counts)
        locs = tuple(
            tuple((i + k * p) * float(Delta) for k in range(L))
            for i, L in enumerate(self.counts)
        )
        return SupportSpec(locations=locs)

    def params(self) -> MixtureParams:
        if self.eta_star is not None:
            eta = np.asarray(self.eta_star, dtype=float)
        else:
            eta = np.concatenate([np.full(L, 1.0 / L) for L in self.counts])
        return MixtureParams(theta=np.asarray(self.theta_star, dtype=float), eta=eta)


@dataclass
class SuccessCurve:
    distances: np.ndarray
    successes: np.ndarray
    trials: int
    epsilon_0: float = None  # omitted (None) for infeasible certificates

    @property
    def rates(self) -> np.ndarray:
        return self.successes / self.trials

    def export_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["distance", "trials", "successes", "rate", "epsilon0"])
            eps = "" if self.epsilon_0 is None else repr(self.epsilon_0)
            for d, s in zip(self.distances, self.successes):
                w.writerow([repr(float(d)), self.trials, int(s),
                            repr(int(s) / self.trials), eps])


def certify(config: ExperimentConfig, Delta: float,
            r_star_scope: str = "full-bracket") -> BasinCertificate:
    """Coherence table + Lipschitz estimates + constants for one separation."""
    family, grid = config.family(), config.grid()
    support = config.support(Delta)
    params = config.params()
    table = build_table(family, grid, support, params.theta, Delta,
                        truncation_tol=config.truncation_tol)
    f0, f1 = config.theta_box_factor
    box = [(f0 * t, f1 * t) for t in params.theta]
    lip = estimate_lipschitz(family, grid, support, Delta, box,
                             samples_per_axis=config.lipschitz_samples,
                             truncation_tol=config.truncation_tol)
    return compute_constants(table, lip, support, params.theta, params.eta,
                             r_star_scope=r_star_scope)


# ---------------------------------------------------------------------------
# Landscape


def landscape(config: ExperimentConfig, Delta: float, certificate=None):
    """Loss of (theta1, theta2) with eta fixed at the ground truth.

    Returns (axis1, axis2, losses, epsilon_0) with log-spaced axes centered on
    theta_star; requires exactly two modalities for a 2-D grid.
    """
    if len(config.theta_star) != 2:
        raise InputError("2-D landscapes need exactly two modalities")
    family, grid = config.family(), config.grid()
    support = config.support(Delta)
    params = config.params()
    x_star = synthesize(build_dictionary(family, grid, support, params.theta), params.eta)

    n = config.landscape_resolution
    span = np.log10(config.landscape_span)
    axes = [
        np.logspace(np.log10(t) - span, np.log10(t) + span, n)
        for t in params.theta
    ]
    axes = [np.clip(ax, family.theta_min, family.theta_max) for ax in axes]
    losses = np.empty((n, n))
    from .hessian import loss as loss_fn

    for i1, t1 in enumerate(axes[0]):
        for i2, t2 in enumerate(axes[1]):
            losses[i1, i2] = loss_fn(family, grid, support, (t1, t2), params.eta, x_star)
    eps = certificate.epsilon_0 if certificate is not None and certificate.feasible else None
    return axes[0], axes[1], losses, eps


def export_landscape_csv(path, axis1, axis2, losses):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["theta1", "theta2", "loss"])
        for i1, t1 in enumerate(axis1):
            for i2, t2 in enumerate(axis2):
                w.writerow([repr(float(t1)), repr(float(t2)), repr(float(losses[i1, i2]))])


# ---------------------------------------------------------------------------
# Monte Carlo


def _sphere_point(rng, p, radius):
    """Uniform draw on the inf-norm sphere: one coordinate pinned to +-radius,
    the rest uniform in [-radius, radius]."""
    x = rng.uniform(-radius, radius, size=p)
    j = int(rng.integers(p))
    x[j] = radius if rng.integers(2) else -radius
    return x


def _trial_init(config, params, family, bin_index, trial, distance):
    seq = np.random.SeedSequence((int(config.seed), int(bin_index), int(trial)))
    rng = np.random.Generator(np.random.Philox(seq))
    p = len(params.theta)
    offset = _sphere_point(rng, p, distance)
    theta0 = params.theta + offset
    # sign-flip projection: reflecting the offending offset preserves the
    # inf-distance while moving back inside the kernel domain
    for i in range(p):
        if not (family.theta_min <= theta0[i] <= family.theta_max):
            theta0[i] = params.theta[i] - offset[i]
    eta0 = params.eta.copy()
    if config.randomize_eta:
        eta0 = eta0 + _sphere_point(rng, eta0.size, distance)
    return MixtureParams(theta=theta0, eta=eta0)


def monte_carlo(config: ExperimentConfig, Delta: float,
                certificate: BasinCertificate = None) -> SuccessCurve:
    family, grid = config.family(), config.grid()
    support = config.support(Delta)
    params = config.params()
    x_star = synthesize(build_dictionary(family, grid, support, params.theta), params.eta)
    distances = np.logspace(
        np.log10(config.distance_min), np.log10(config.distance_max),
        config.distance_bins,
    )

    def run_trial(bin_index, trial):
        init = _trial_init(config, params, family, bin_index, trial,
                           distances[bin_index])
        report = solve(family, grid, support, x_star, init,
                       config=replace(config.solver), certificate=certificate,
                       ground_truth=params)
        return recovered(report, params.theta)

    jobs = [(b, t) for b in range(len(distances)) for t in range(config.trials)]
    if config.threads > 1:
        with ThreadPoolExecutor(max_workers=config.threads) as pool:
            outcomes = list(pool.map(lambda bt: run_trial(*bt), jobs))
    else:
        outcomes = [run_trial(b, t) for b, t in jobs]

    successes = np.zeros(len(distances), dtype=int)
    for (b, _), ok in zip(jobs, outcomes):
        successes[b] += int(ok)
    eps = certificate.epsilon_0 if certificate is not None and certificate.feasible else None
    return SuccessCurve(distances=distances, successes=successes,
                        trials=config.trials, epsilon_0=eps)


def isotonic_nonincreasing(rates) -> np.ndarray:
    """Pool-adjacent-violators fit of a nonincreasing curve to the rates."""
    vals = [float(v) for v in rates]
    weights = [1.0] * len(vals)
    blocks = []
    for v, w in zip(vals, weights):
        blocks.append([v, w])
        while len(blocks) > 1 and blocks[-2][0] < blocks[-1][0]:
            v1, w1 = blocks.pop()
            v0, w0 = blocks.pop()
            blocks.append([(v0 * w0 + v1 * w1) / (w0 + w1), w0 + w1])
    out = []
    for v, w in blocks:
        out.extend([v] * int(round(w)))
    return np.array(out)


# ---------------------------------------------------------------------------
# Plot specs (text descriptions so any plotting tool can reproduce figures)


def write_plot_spec(path, kind, **fields):
    lines = [f"kind: {kind}"]
    lines += [f"{k}: {v}" for k, v in sorted(fields.items())]
    with open(path, "w", newline="") as fh:
        fh.write("\n".join(lines) + "\n")
