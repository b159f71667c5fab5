"""Spectral line fitting pipeline for LIBS-style emission spectra.

Flow: a line database (CSV of species/ion/wavelength/strength records) fixes
the spike support, with one modality per (species, ion) pair; the observed
spectrum is modeled as

    x_obs = Xi * (G(theta) eta + b + noise),

with Xi the instrument transfer function (diagonal, strictly positive), b the
baseline emission, and heavy-tailed nonnegative-ish noise (chi-square-like in
practice).  Preprocessing estimates b on Xi^-1 x_obs with asymmetric-penalty
iteratively reweighted smoothing and subtracts Xi*b_hat; the remaining
Xi-weighted non-linear least squares is solved by row-scaling the dictionary
and reusing the core solver.  Concentrations come from the linear model
eta = A nu with A built from relative line strengths (or supplied a priori).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import optimize, sparse
from scipy.sparse.linalg import spsolve

from .errors import ConditioningError, InputError
from .kernels import KernelFamily
from .model import (
    MixtureParams,
    SamplingGrid,
    SupportSpec,
    build_dictionary,
    make_grid,
)
from .solver import SolveConfig, SolveReport, solve, solve_eta_linear


# ---------------------------------------------------------------------------
# Line database


@dataclass(frozen=True)
class LineRecord:
    species: str
    ion: str
    wavelength_nm: float
    strength: float
    coeff: float = None  # optional explicit eta <- nu coefficient


@dataclass(frozen=True)
class LineDatabase:
    """Emission lines grouped into modalities by (species, ion) pair."""

    records: tuple

    def __post_init__(self):
        if not self.records:
            raise InputError("line database is empty")
        seen = set()
        for rec in self.records:
            if rec.wavelength_nm <= 0:
                raise InputError(f"non-positive wavelength {rec.wavelength_nm} for {rec.species} {rec.ion}")
            if rec.strength < 0:
                raise InputError(f"negative strength for {rec.species} {rec.ion} at {rec.wavelength_nm} nm")
            key = (rec.species, rec.ion, rec.wavelength_nm)
            if key in seen:
                raise InputError(f"duplicate line {key}")
            seen.add(key)
        # deterministic modality order, wavelengths sorted within a modality
        groups = {}
        for rec in self.records:
            groups.setdefault((rec.species, rec.ion), []).append(rec)
        ordered = []
        for key in sorted(groups):
            ordered.extend(sorted(groups[key], key=lambda r: r.wavelength_nm))
        object.__setattr__(self, "records", tuple(ordered))

    @property
    def modalities(self) -> tuple:
        out, last = [], None
        for rec in self.records:
            key = (rec.species, rec.ion)
            if key != last:
                out.append(key)
                last = key
        return tuple(out)

    @property
    def p(self) -> int:
        return len(self.modalities)

    @property
    def counts(self) -> tuple:
        keys = [(r.species, r.ion) for r in self.records]
        return tuple(keys.count(m) for m in self.modalities)

    def wavelengths(self) -> np.ndarray:
        return np.array([r.wavelength_nm for r in self.records])

    def strengths(self) -> np.ndarray:
        return np.array([r.strength for r in self.records])

    def support(self, center: float) -> SupportSpec:
        """Spike support on the centered axis (wavelength - center)."""
        locs, idx = [], 0
        for L in self.counts:
            locs.append(tuple(r.wavelength_nm - center for r in self.records[idx:idx + L]))
            idx += L
        return SupportSpec(locations=tuple(locs))


def ingest_lines(path) -> LineDatabase:
    """Parse a line-database CSV with header species,ion,wavelength_nm,strength[,coeff]."""
    required = {"species", "ion", "wavelength_nm", "strength"}
    records = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise InputError(
                f"line database must have columns {sorted(required)}, got {reader.fieldnames}"
            )
        for lineno, row in enumerate(reader, start=2):
            try:
                coeff = row.get("coeff")
                records.append(LineRecord(
                    species=row["species"].strip(),
                    ion=row["ion"].strip(),
                    wavelength_nm=float(row["wavelength_nm"]),
                    strength=float(row["strength"]),
                    coeff=float(coeff) if coeff not in (None, "") else None,
                ))
            except (TypeError, ValueError) as exc:
                raise InputError(f"malformed line-database row at line {lineno}: {exc}") from exc
    return LineDatabase(records=tuple(records))


# ---------------------------------------------------------------------------
# Observation


@dataclass
class SpectrumObservation:
    """Uniformly sampled spectrum with transfer function and baseline slot."""

    wavelengths: np.ndarray
    x_obs: np.ndarray
    transfer: np.ndarray = None  # Xi diagonal; defaults to all-ones
    baseline: np.ndarray = None  # b_hat, filled by preprocessing

    def __post_init__(self):
        self.wavelengths = np.asarray(self.wavelengths, dtype=float).ravel()
        self.x_obs = np.asarray(self.x_obs, dtype=float).ravel()
        n = self.wavelengths.size
        if n < 2 or self.x_obs.size != n:
            raise InputError("wavelengths and intensities must have equal length >= 2")
        steps = np.diff(self.wavelengths)
        if np.any(steps <= 0) or np.ptp(steps) > 1e-8 * steps[0]:
            raise InputError("wavelength grid must be uniform and ascending")
        if self.transfer is None:
            self.transfer = np.ones(n)
        else:
            self.transfer = np.asarray(self.transfer, dtype=float).ravel()
            if self.transfer.size != n:
                raise InputError("transfer function length mismatch")
            if np.any(self.transfer <= 0):
                raise InputError("transfer function must be strictly positive")

    @property
    def center(self) -> float:
        return 0.5 * (self.wavelengths[0] + self.wavelengths[-1])

    def grid(self) -> SamplingGrid:
        return make_grid(self.wavelengths[-1] - self.wavelengths[0], self.wavelengths.size)

    def x_tilde(self) -> np.ndarray:
        if self.baseline is None:
            raise InputError("baseline not estimated yet; run estimate_baseline first")
        return self.x_obs - self.transfer * self.baseline


def estimate_baseline(x_obs, transfer, asymmetry=0.01, smoothness=1e5, iters=10):
    """Asymmetric-penalty iteratively reweighted smoothing baseline.

    Operates on the transfer-corrected spectrum y = x_obs / transfer; points
    above the current smooth get weight `asymmetry`, points below get
    1 - asymmetry, so peaks are ignored while the slow background is tracked.
    """
    x_obs = np.asarray(x_obs, dtype=float).ravel()
    transfer = np.asarray(transfer, dtype=float).ravel()
    if transfer.size != x_obs.size:
        raise InputError("transfer function length mismatch")
    if np.any(transfer <= 0):
        raise InputError("transfer function must be strictly positive")
    y = x_obs / transfer
    n = y.size
    D = sparse.diags([1.0, -2.0, 1.0], [0, -1, -2], shape=(n, n - 2))
    penalty = smoothness * (D @ D.T)
    w = np.ones(n)
    z = y
    for _ in range(iters):
        W = sparse.diags(w)
        z = spsolve((W + penalty).tocsc(), w * y)
        w = np.where(y > z, asymmetry, 1.0 - asymmetry)
    return z


# ---------------------------------------------------------------------------
# Concentration model


def build_concentration_matrix(db: LineDatabase) -> np.ndarray:
    """A (L-bar x p): column i holds modality i's line coefficients.

    Explicit `coeff` values are used verbatim; otherwise relative strengths
    normalized to unit column sum stand in.
    """
    Lbar, p = len(db.records), db.p
    A = np.zeros((Lbar, p))
    idx = 0
    for i, L in enumerate(db.counts):
        block = db.records[idx:idx + L]
        if all(r.coeff is None for r in block):
            coeffs = np.array([r.strength for r in block])
            total = coeffs.sum()
            if total <= 0:
                raise InputError(f"modality {db.modalities[i]} has zero total strength")
            coeffs = coeffs / total
        elif any(r.coeff is None for r in block):
            raise InputError(
                f"modality {db.modalities[i]} mixes explicit and implicit coefficients"
            )
        else:
            coeffs = np.array([r.coeff for r in block])
        A[idx:idx + L, i] = coeffs
        idx += L
    return A


def estimate_concentrations(A, eta_hat, cond_threshold=1e12) -> np.ndarray:
    """Nonnegativity-projected least squares for A nu ~ eta_hat."""
    A = np.asarray(A, dtype=float)
    eta_hat = np.asarray(eta_hat, dtype=float).ravel()
    if A.shape[0] != eta_hat.size:
        raise InputError("A rows must match the amplitude count")
    sv = np.linalg.svd(A, compute_uv=False)
    if sv.size < A.shape[1] or sv[-1] <= 0 or sv[0] / sv[-1] > cond_threshold:
        raise ConditioningError("concentration matrix is rank deficient")
    nu, _ = optimize.nnls(A, eta_hat)
    return nu


# ---------------------------------------------------------------------------
# Synthesis and fitting


def synthesize_spectrum(db, family, theta, nu, wavelength_span, N,
                        transfer=None, baseline=None, snr_db=None, seed=0):
    """Generate a SpectrumObservation from known ground truth.

    wavelength_span = (lo, hi) nm; baseline/transfer are callables of the
    wavelength array or explicit vectors; noise is zero-mean scaled
    chi-square (k=2) sized to the requested SNR over the clean signal.
    Returns (observation, ground_truth_dict).
    """
    lo, hi = wavelength_span
    wavelengths = np.linspace(lo, hi, N)
    center = 0.5 * (lo + hi)
    grid = make_grid(hi - lo, N)
    support = db.support(center)
    theta = np.asarray(theta, dtype=float).ravel()
    A = build_concentration_matrix(db)
    nu = np.asarray(nu, dtype=float).ravel()
    eta = A @ nu
    stack = build_dictionary(family, grid, support, theta)
    clean = stack.G0 @ eta

    if transfer is None:
        xi = np.ones(N)
    elif callable(transfer):
        xi = np.asarray(transfer(wavelengths), dtype=float)
    else:
        xi = np.asarray(transfer, dtype=float)
    if baseline is None:
        b = np.zeros(N)
    elif callable(baseline):
        b = np.asarray(baseline(wavelengths), dtype=float)
    else:
        b = np.asarray(baseline, dtype=float)

    noise = np.zeros(N)
    if snr_db is not None:
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed))))
        raw = rng.chisquare(2.0, size=N) - 2.0  # zero-mean, variance 4
        rms = math.sqrt(float(clean @ clean) / N)
        noise = raw * (rms * 10.0 ** (-snr_db / 20.0) / 2.0)

    obs = SpectrumObservation(
        wavelengths=wavelengths,
        x_obs=xi * (clean + b + noise),
        transfer=xi,
    )
    truth = {"theta": theta, "eta": eta, "nu": nu, "baseline": b, "clean": clean}
    return obs, truth


@dataclass
class FitResult:
    report: SolveReport
    theta_hat: np.ndarray
    eta_hat: np.ndarray
    nu_hat: np.ndarray
    residual_norm: float
    relative_fit_error: float
    negative_amplitudes: bool
    baseline: np.ndarray = None


def _init_theta_scan(db, obs, family, grid, support, x_target, theta_grid=None):
    """Coarse log-grid scan: per candidate theta, score the linear-eta residual."""
    if theta_grid is None:
        span = obs.wavelengths[-1] - obs.wavelengths[0]
        h = span / (obs.wavelengths.size - 1)
        theta_grid = np.logspace(math.log10(max(2 * h, family.theta_min)),
                                 math.log10(min(span / 10, family.theta_max)), 9)
    best_theta, best_score = None, np.inf
    theta = np.full(db.p, theta_grid[len(theta_grid) // 2])
    for _ in range(2):  # two coordinate passes are enough for a coarse init
        for i in range(db.p):
            for cand in theta_grid:
                trial = theta.copy()
                trial[i] = cand
                stack = build_dictionary(family, grid, support, trial)
                G = obs.transfer[:, None] * stack.G0
                eta, *_ = np.linalg.lstsq(G, x_target, rcond=None)
                res = G @ eta - x_target
                score = float(res @ res)
                if score < best_score:
                    best_score, best_theta = score, trial.copy()
            theta = best_theta.copy()
    return best_theta


def fit_spectrum(db: LineDatabase, obs: SpectrumObservation, family: KernelFamily,
                 init: MixtureParams = None, config: SolveConfig = None,
                 concentration_matrix=None, baseline_refinements: int = 2,
                 refine_smoothness: float = 1e9) -> FitResult:
    """Baseline-corrected, transfer-weighted fit of the spectrum.

    The weighted objective 0.5*||Xi G(theta) eta - x_tilde||^2 is solved by
    row-scaling the dictionary with Xi inside the core solver.

    The initial baseline estimate is biased upward under heavy peak tails, so
    after each fit the baseline is re-estimated on the peak-stripped spectrum
    (observation minus the fitted line model) and the fit repeated,
    `baseline_refinements` times.
    """
    if obs.baseline is None:
        obs = replace(obs, baseline=estimate_baseline(obs.x_obs, obs.transfer))
    grid = obs.grid()
    support = db.support(obs.center)

    if init is None:
        x_target = obs.x_tilde()
        theta0 = _init_theta_scan(db, obs, family, grid, support, x_target)
        stack = build_dictionary(family, grid, support, theta0)
        weighted = replace(stack, G0=obs.transfer[:, None] * stack.G0)
        eta0 = solve_eta_linear(weighted, x_target)
        init = MixtureParams(theta=theta0, eta=eta0)

    for round_idx in range(baseline_refinements + 1):
        x_target = obs.x_tilde()
        report = solve(family, grid, support, x_target, init, config=config,
                       row_weights=obs.transfer)
        if round_idx == baseline_refinements:
            break
        stack = build_dictionary(family, grid, support, report.params.theta)
        stripped = obs.x_obs - obs.transfer * (stack.G0 @ report.params.eta)
        # the stripped residual is noise around the baseline, so a symmetric
        # (mean-tracking) smoothing pass is unbiased where the asymmetric one
        # would chase the noise floor
        refined = estimate_baseline(stripped, obs.transfer, asymmetry=0.5,
                                    smoothness=refine_smoothness, iters=1)
        obs = replace(obs, baseline=refined)
        init = report.params
    theta_hat = report.params.theta
    eta_hat = report.params.eta
    A = concentration_matrix if concentration_matrix is not None else build_concentration_matrix(db)
    nu_hat = estimate_concentrations(A, eta_hat)
    res_norm = math.sqrt(2.0 * float(report.loss_trace[-1]))
    denom = float(np.linalg.norm(x_target))
    return FitResult(
        report=report,
        theta_hat=theta_hat,
        eta_hat=eta_hat,
        nu_hat=nu_hat,
        residual_norm=res_norm,
        relative_fit_error=res_norm / denom if denom > 0 else np.inf,
        negative_amplitudes=bool(np.any(eta_hat < 0)),
        baseline=obs.baseline,
    )


def export_fit_csv(path, obs: SpectrumObservation, db, family, result: FitResult):
    """Fitted-spectrum CSV: wavelength, observed, baseline-corrected, fitted."""
    if obs.baseline is None and result.baseline is not None:
        obs = replace(obs, baseline=result.baseline)
    grid = obs.grid()
    support = db.support(obs.center)
    stack = build_dictionary(family, grid, support, result.theta_hat)
    fitted = obs.transfer * (stack.G0 @ result.eta_hat)
    x_target = obs.x_tilde()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["wavelength_nm", "observed", "corrected", "fitted"])
        for lam, xo, xc, xf in zip(obs.wavelengths, obs.x_obs, x_target, fitted):
            w.writerow([repr(float(lam)), repr(float(xo)), repr(float(xc)), repr(float(xf))])
