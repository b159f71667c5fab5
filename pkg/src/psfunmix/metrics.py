"""Coherence and interference metrics of a sampled PSF dictionary.

The central object is the shift correlation

    dot(delta) = sum_s  d^a g(theta_i, u_s) * d^b g(theta_j, u_s - delta)

between two kernel-derivative vectors sampled on the grid.  The coherence
mu_{a,b}(theta_i, theta_j, Delta) is the supremum of |dot| over |delta| >=
Delta (a continuous supremum; evenness of the kernels reduces it to delta >=
0).  Coherence functions sum coherences over the Delta-spaced lattice
m*Delta, and interference functions sum tail suprema of a single kernel
derivative.  Both series converge for integrable kernels but have heavy
(1/m^2) tails for Lorentz PSFs, so truncation is closed with an analytic decay
bound; the bound is added to the sum (conservative for the certificate) and
recorded as the truncation residual.

Implementation notes: dot(delta) is a convolution of the sampled first vector
with the (even) kernel derivative, so a dense delta-scan is computed with FFTs
on two lattices (a fine sub-sample-resolution lattice near the origin and a
coarse sample-step lattice out to an adaptively extended horizon), followed by
golden-section refinement around the best lattice point.  Beyond the horizon
the contribution is capped with the kernel decay envelope via

    |dot(delta)| <= ||v||_1 * sup_{|t| >= delta - T/2} |d^b g(theta_j, t)|.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import fft as sfft

from .errors import InputError, SeriesTruncationError
from .kernels import KernelFamily
from .model import SamplingGrid, SupportSpec

_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class SeriesValue:
    """A summed coherence/interference value plus its truncation record."""

    value: float
    residual: float
    terms: int


@dataclass
class LipschitzEstimates:
    """Sampled-slope estimates of the Theorem hypotheses' Lipschitz constants.

    C_Delta bounds the theta-slopes of the coherence and interference
    functions; K bounds the slope of theta -> G(theta) in the induced
    infinity norm.  Both carry a 1.25 safety factor over the raw sampled
    maxima, which are kept for audit.
    """

    C_Delta: float
    K: float
    raw_C_Delta: float
    raw_K: float
    samples_per_axis: int
    safety: float


class _Scanner:
    """Dense |dot(delta)| scan for one (a, b, theta_i, theta_j) pair."""

    def __init__(self, family, grid, a, b, theta_i, theta_j, fine_points_per_scale=50):
        self.family = family
        self.grid = grid
        self.a, self.b = a, b
        self.theta_i, self.theta_j = float(theta_i), float(theta_j)
        self.h = grid.spacing
        self.T = grid.T
        self.v = np.asarray(family.derivative(a)(self.theta_i, grid.u), dtype=float)
        self.l1_v = float(np.sum(np.abs(self.v)))
        self._w_fn = family.derivative(b)

        step_target = min(self.theta_i, self.theta_j) / fine_points_per_scale
        self.q = int(np.clip(math.ceil(self.h / step_target), 1, 64))
        self.tau = self.h / self.q
        self._build_fine()
        self.delta_max = max(4.0 * self.T, 100.0 * max(self.theta_i, self.theta_j))
        self._build_coarse(self.delta_max)

    # -- lattice construction -------------------------------------------------

    def _conv_abs(self, offsets, n_lags):
        """|dot| at delta = k*h + offset for k = 0..n_lags-1, per offset.

        Uses dot(delta) = sum_s v_s * w(delta - u_s) with w the even kernel
        derivative, i.e. a linear convolution evaluated by FFT.
        """
        N = self.grid.N
        n = N + n_lags - 1
        nfft = sfft.next_fast_len(N + n)
        V = sfft.rfft(self.v, nfft)
        rows = []
        base = np.arange(-(N - 1), n_lags) * self.h + 0.5 * self.T
        for off in offsets:
            w = self._w_fn(self.theta_j, base + off)
            W = sfft.rfft(w, nfft)
            conv = sfft.irfft(V * W, nfft)
            rows.append(np.abs(conv[N - 1 : N - 1 + n_lags]))
        return rows

    def _build_fine(self):
        n_lags = self.grid.N
        offsets = [j * self.tau for j in range(self.q)]
        rows = self._conv_abs(offsets, n_lags)
        lattice = np.stack(rows, axis=1).ravel()  # delta = m * tau
        self.fine_abs = lattice
        self.fine_sufmax = np.maximum.accumulate(lattice[::-1])[::-1]

    def _build_coarse(self, delta_max):
        n_lags = int(math.ceil(delta_max / self.h)) + 1
        self.coarse_abs = self._conv_abs([0.0], n_lags)[0]
        self.coarse_sufmax = np.maximum.accumulate(self.coarse_abs[::-1])[::-1]
        self.delta_max = (n_lags - 1) * self.h

    MAX_COARSE_LAGS = 1 << 22

    def extend(self, factor=4.0):
        """Grow the coarse horizon; returns False once the lag cap is hit."""
        target = self.delta_max * factor
        if target / self.h + 1 > self.MAX_COARSE_LAGS:
            return False
        self._build_coarse(target)
        return True

    # -- point evaluations ----------------------------------------------------

    def dot(self, delta):
        w = self._w_fn(self.theta_j, np.abs(self.grid.u - delta))
        return float(self.v @ w)

    def dots(self, deltas):
        """Direct |dot| at many deltas, chunked to bound memory."""
        deltas = np.asarray(deltas, dtype=float)
        out = np.empty_like(deltas)
        chunk = max(1, int(4e6 / self.grid.N))
        for lo in range(0, deltas.size, chunk):
            d = deltas[lo : lo + chunk]
            w = self._w_fn(self.theta_j, np.abs(self.grid.u[None, :] - d[:, None]))
            out[lo : lo + chunk] = np.abs(w @ self.v)
        return out

    def tail_bound(self, delta):
        """Upper bound on sup_{|x| >= delta} |dot(x)|; +inf when delta <= T/2."""
        margin = delta - 0.5 * self.T
        if margin <= 0.0:
            return math.inf
        return self.l1_v * self.family.tail_sup(self.b, self.theta_j, margin)

    # -- supremum queries -----------------------------------------------------

    def _refine(self, center, radius, lower):
        """Golden-section polish of |dot| on [max(center-radius, lower),
        center+radius]; |dot| is smooth there so ~40 shrinks suffice."""
        lo = max(center - radius, lower, 0.0)
        hi = center + radius
        x1 = hi - _GOLDEN * (hi - lo)
        x2 = lo + _GOLDEN * (hi - lo)
        f1, f2 = abs(self.dot(x1)), abs(self.dot(x2))
        for _ in range(40):
            if f1 < f2:
                lo, x1, f1 = x1, x2, f2
                x2 = lo + _GOLDEN * (hi - lo)
                f2 = abs(self.dot(x2))
            else:
                hi, x2, f2 = x2, x1, f1
                x1 = hi - _GOLDEN * (hi - lo)
                f1 = abs(self.dot(x1))
        return max(f1, f2)

    def sup_from(self, Delta, refine=True, max_extensions=3):
        """sup over |delta| >= Delta of |dot(delta)|."""
        if Delta < 0 or not np.isfinite(Delta):
            if math.isinf(Delta) and Delta > 0:
                return 0.0
            raise InputError(f"separation must be a finite nonnegative real, got {Delta}")
        while True:
            best = 0.0
            fine_best = -1.0
            idx = -1
            fine_max_delta = (self.fine_abs.size - 1) * self.tau
            if Delta <= fine_max_delta:
                idx = int(math.ceil(Delta / self.tau - 1e-12))
                fine_best = float(self.fine_sufmax[idx])
                best = fine_best
            cidx = int(math.ceil(Delta / self.h - 1e-12))
            cbest = -1.0
            if cidx < self.coarse_abs.size:
                cbest = float(self.coarse_sufmax[cidx])
                best = max(best, cbest)
            beyond = self.tail_bound(max(self.delta_max, Delta))
            if beyond <= best or beyond == 0.0:
                if refine and best > 0.0:
                    # locate the maximizing lattice point only when polishing
                    if cbest >= fine_best:
                        rel = int(np.argmax(self.coarse_abs[cidx:]))
                        pos, step = (cidx + rel) * self.h, self.h
                    else:
                        rel = int(np.argmax(self.fine_abs[idx:]))
                        pos, step = (idx + rel) * self.tau, self.tau
                    best = max(best, self._refine(pos, step, Delta))
                return best
            if max_extensions <= 0 or not self.extend():
                # horizon cap reached: conservative envelope fallback
                return max(best, beyond)
            max_extensions -= 1


class MetricsEngine:
    """Caches scanners and sums the coherence/interference series for one
    (family, grid) pair."""

    TERM_CAP = 1_000_000

    def __init__(self, family: KernelFamily, grid: SamplingGrid, truncation_tol=1e-3,
                 refine_terms=3):
        self.family = family
        self.grid = grid
        self.truncation_tol = float(truncation_tol)
        self.refine_terms = int(refine_terms)
        self._scanners = {}

    def scanner(self, a, b, theta_i, theta_j) -> _Scanner:
        if a not in (0, 1, 2) or b not in (0, 1, 2):
            raise InputError(f"derivative orders must be in {{0,1,2}}, got ({a}, {b})")
        self.family.check_theta([theta_i, theta_j])
        key = (a, b, round(float(theta_i), 15), round(float(theta_j), 15))
        if key not in self._scanners:
            self._scanners[key] = _Scanner(self.family, self.grid, a, b, theta_i, theta_j)
        return self._scanners[key]

    # -- mu -------------------------------------------------------------------

    def mu(self, a, b, theta_i, theta_j, Delta, refine=True) -> float:
        if Delta < 0:
            raise InputError(f"Delta must be >= 0, got {Delta}")
        return self.scanner(a, b, theta_i, theta_j).sup_from(Delta, refine=refine)

    # -- coherence function ---------------------------------------------------

    def coherence(self, a, b, theta_i, theta_j, Delta, same_modality_same_order) -> SeriesValue:
        if not Delta > 0:
            raise InputError(f"coherence function needs Delta > 0, got {Delta}")
        sc = self.scanner(a, b, theta_i, theta_j)
        total = 0.0
        m = 1 if same_modality_same_order else 0
        terms = 0
        if math.isinf(Delta):
            if m == 0:
                total = sc.sup_from(0.0)
                terms = 1
            return SeriesValue(value=2.0 * total, residual=0.0, terms=terms)
        term = math.inf
        while m <= self.TERM_CAP:
            # decay-envelope closure of the remaining tail
            margin = (m * Delta) - 0.5 * sc.T
            if margin > 0.0 and terms > 0:
                closure = sc.l1_v * (
                    self.family.tail_sup(b, theta_j, margin)
                    + self.family.tail_integral(b, theta_j, margin) / Delta
                )
                if closure <= self.truncation_tol * total:
                    return SeriesValue(
                        value=2.0 * (total + closure),
                        residual=2.0 * closure,
                        terms=terms,
                    )
            term = sc.sup_from(m * Delta, refine=(terms < self.refine_terms))
            if term < 1e-12 * (total + 1e-300):
                return SeriesValue(value=2.0 * total, residual=2.0 * term, terms=terms)
            total += term
            terms += 1
            m += 1
        raise SeriesTruncationError(
            f"coherence series hit the {self.TERM_CAP}-term cap with last term {term:g}",
            partial_sum=2.0 * total,
            last_term=term,
        )

    # -- interference ---------------------------------------------------------

    def interference(self, a, theta_i, Delta) -> SeriesValue:
        if not Delta > 0:
            raise InputError(f"interference function needs Delta > 0, got {Delta}")
        self.family.check_theta(theta_i)
        if a not in (0, 1, 2):
            raise InputError(f"derivative order must be in {{0,1,2}}, got {a}")
        theta_i = float(theta_i)
        peak = abs(float(self.family.derivative(a)(theta_i, np.float64(0.0))))
        if math.isinf(Delta):
            return SeriesValue(value=peak, residual=0.0, terms=0)
        total = 0.0
        terms = 0
        m = 1
        while m <= self.TERM_CAP:
            r = m * Delta
            closure = self.family.tail_sup(a, theta_i, r) + (
                self.family.tail_integral(a, theta_i, r) / Delta
            )
            if terms > 0 and closure <= self.truncation_tol * max(total, peak):
                return SeriesValue(
                    value=peak + 2.0 * (total + closure),
                    residual=2.0 * closure,
                    terms=terms,
                )
            term = self.family.tail_sup(a, theta_i, r)
            if term < 1e-12 * (total + peak + 1e-300):
                return SeriesValue(value=peak + 2.0 * total, residual=2.0 * term, terms=terms)
            total += term
            terms += 1
            m += 1
        raise SeriesTruncationError(
            f"interference series hit the {self.TERM_CAP}-term cap",
            partial_sum=peak + 2.0 * total,
            last_term=term,
        )


# ---------------------------------------------------------------------------
# Public one-shot operations


def coherence_mu(family, grid, a, b, theta_i, theta_j, Delta, normalization="raw"):
    """mu_{a,b}(theta_i, theta_j, Delta) on the sampled grid.

    normalization="continuum" multiplies by the grid spacing T/(N-1), turning
    the raw dot product into a Riemann sum of the continuum correlation (used
    for oracle comparison against the Lorentz identity).
    """
    value = MetricsEngine(family, grid).mu(a, b, theta_i, theta_j, Delta)
    if normalization == "continuum":
        return value * grid.spacing
    if normalization != "raw":
        raise InputError(f"unknown normalization {normalization!r}")
    return value


def coherence_function(family, grid, a, b, theta_i, theta_j, Delta,
                       same_modality_same_order):
    return MetricsEngine(family, grid).coherence(
        a, b, theta_i, theta_j, Delta, same_modality_same_order
    ).value


def interference(family, grid, a, theta_i, Delta):
    return MetricsEngine(family, grid).interference(a, theta_i, Delta).value


# ---------------------------------------------------------------------------
# Coherence table (certificate input)


@dataclass
class CoherenceTable:
    """All mu / C / I entries a basin certificate needs, plus records.

    mu entries are keyed (a, b, i, j, Delta); C entries likewise; I entries
    (a, i, Delta).  Residual maps mirror the C and I keys.
    """

    theta: np.ndarray
    Delta: float
    mu: dict = field(default_factory=dict)
    C: dict = field(default_factory=dict)
    I: dict = field(default_factory=dict)
    residuals: dict = field(default_factory=dict)
    truncation_tol: float = 1e-3

    def mu_at(self, a, b, i, j, Delta):
        key = (a, b, i, j, Delta)
        if key not in self.mu:
            raise _missing("mu", key)
        return self.mu[key]

    def C_at(self, a, b, i, j, Delta):
        key = (a, b, i, j, Delta)
        if key not in self.C:
            raise _missing("C", key)
        return self.C[key]

    def I_at(self, a, i, Delta):
        key = (a, i, Delta)
        if key not in self.I:
            raise _missing("I", key)
        return self.I[key]

    def export_csv(self, coherence_path, interference_path):
        with open(coherence_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["a", "b", "i", "j", "Delta", "mu", "C"])
            keys = sorted(set(self.mu) | set(self.C))
            for a, b, i, j, d in keys:
                w.writerow([
                    a, b, i, j, repr(d),
                    repr(self.mu.get((a, b, i, j, d), "")),
                    repr(self.C.get((a, b, i, j, d), "")),
                ])
        with open(interference_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["a", "i", "Delta", "I"])
            for a, i, d in sorted(self.I):
                w.writerow([a, i, repr(d), repr(self.I[(a, i, d)])])


def _missing(kind, key):
    from .errors import DependencyError

    return DependencyError(f"coherence table is missing {kind} entry {key}", missing=key)


def build_table(family, grid, support: SupportSpec, theta, Delta,
                truncation_tol=1e-3) -> CoherenceTable:
    """Compute every table entry the Theorem constants consume."""
    theta = np.asarray(theta, dtype=float).ravel()
    p = theta.size
    if p != support.p:
        raise InputError("theta length does not match the number of modalities")
    engine = MetricsEngine(family, grid, truncation_tol=truncation_tol)
    table = CoherenceTable(theta=theta, Delta=float(Delta), truncation_tol=truncation_tol)
    for i in range(p):
        for aa in (0, 1):
            table.mu[(aa, aa, i, i, 0.0)] = engine.mu(aa, aa, theta[i], theta[i], 0.0)
    for i in range(p):
        for j in range(p):
            for a in (0, 1):
                for b in (0, 1):
                    same = (i == j) and (a == b)
                    sv = engine.coherence(a, b, theta[i], theta[j], Delta, same)
                    table.C[(a, b, i, j, float(Delta))] = sv.value
                    table.residuals[("C", a, b, i, j)] = sv.residual
    for i in range(p):
        for a in (0, 1, 2):
            sv = engine.interference(a, theta[i], Delta)
            table.I[(a, i, float(Delta))] = sv.value
            table.residuals[("I", a, i)] = sv.residual
    return table


# ---------------------------------------------------------------------------
# Lipschitz estimates


def estimate_lipschitz(family, grid, support: SupportSpec, Delta, theta_box,
                       samples_per_axis=5, safety=1.25,
                       truncation_tol=1e-3) -> LipschitzEstimates:
    """Sampled finite-difference Lipschitz constants C_Delta and K.

    theta_box is a per-modality list of (lo, hi) sub-intervals of the kernel
    domain.  C_Delta is the largest slope of theta -> C_{a,b}(theta, theta', Delta)
    (theta' running over the box midpoints) and of theta -> I_a(theta, Delta);
    K the largest sampled slope of theta -> G(theta) in the max-row-sum norm.
    Estimates carry a 1.25 safety factor; raw maxima are kept alongside.
    """
    from .model import build_dictionary

    box = [(float(lo), float(hi)) for lo, hi in theta_box]
    if len(box) != support.p:
        raise InputError("theta_box must have one interval per modality")
    for lo, hi in box:
        if not (lo < hi):
            raise InputError(f"degenerate theta box interval ({lo}, {hi})")
        family.check_theta([lo, hi])
    n = int(samples_per_axis)
    if n < 2:
        raise InputError("samples_per_axis must be >= 2")

    engine = MetricsEngine(family, grid, truncation_tol=truncation_tol)
    theta_primes = [0.5 * (lo + hi) for lo, hi in box]

    raw_c = 0.0
    for lo, hi in box:
        samples = np.linspace(lo, hi, n)
        for a in (0, 1):
            for b in (0, 1):
                for tp in theta_primes:
                    vals = [
                        engine.coherence(a, b, th, tp, Delta, False).value
                        for th in samples
                    ]
                    slopes = np.abs(np.diff(vals)) / np.diff(samples)
                    raw_c = max(raw_c, float(slopes.max()))
        for a in (0, 1, 2):
            vals = [engine.interference(a, th, Delta).value for th in samples]
            slopes = np.abs(np.diff(vals)) / np.diff(samples)
            raw_c = max(raw_c, float(slopes.max()))

    # K: slope of theta |-> G(theta) in the infinity norm, per-axis differences
    raw_k = 0.0
    mids = np.array(theta_primes)
    axis_samples = [np.linspace(lo, hi, n) for lo, hi in box]
    base = build_dictionary(family, grid, support, mids).G0
    for axis in range(support.p):
        prev_theta = None
        prev_G = None
        for th in axis_samples[axis]:
            vec = mids.copy()
            vec[axis] = th
            G = build_dictionary(family, grid, support, vec).G0
            if prev_G is not None:
                num = float(np.max(np.sum(np.abs(G - prev_G), axis=1)))
                raw_k = max(raw_k, num / abs(th - prev_theta))
            prev_theta, prev_G = th, G
        num = float(np.max(np.sum(np.abs(G - base), axis=1)))
        den = float(np.max(np.abs(vec - mids)))
        if den > 0:
            raw_k = max(raw_k, num / den)

    return LipschitzEstimates(
        C_Delta=safety * raw_c,
        K=safety * raw_k,
        raw_C_Delta=raw_c,
        raw_K=raw_k,
        samples_per_axis=n,
        safety=safety,
    )
