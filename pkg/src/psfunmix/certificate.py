"""Basin-of-attraction certificate.

Combines the coherence/interference table and the Lipschitz estimates into the
four conditioning constants

    c_minus : half the worst diagonal energy over modalities,
    c_plus  : 3/2 the best diagonal energy,
    r_star  : worst cumulative cross-talk (coherence functions),
    q_star  : worst interference/Lipschitz growth rate,

and, when r_star < c_minus, the certified radius epsilon_0 of the infinity-norm
ball around the ground truth on which the loss is strongly convex and smooth.
Inside that ball the convexity/smoothness pair at radius eps is

    xi = c_minus - r_star - q_star * eps,
    gamma = c_plus + r_star + q_star * eps.

Infeasible inputs (r_star >= c_minus) still produce a certificate, with
feasible=False and epsilon_0=0: small-separation regimes are exactly where
plots need the infeasible constants.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import FeasibilityError, InputError, OutOfBasinError
from .metrics import CoherenceTable, LipschitzEstimates
from .model import SupportSpec

#: how the modality sum inside r_star is grouped; "full-bracket" sums the whole
#: two-term summand over j, "first-term" restricts the sum to the
#: amplitude-weighted term and evaluates the plain coherence term at j=i.
#: "full-bracket" is the default; the alternative exists for sensitivity runs.
R_STAR_SCOPES = ("full-bracket", "first-term")


@dataclass(frozen=True)
class BasinCertificate:
    c_minus: float
    c_plus: float
    r_star: float
    q_star: float
    feasible: bool
    epsilon_0: float
    Delta: float
    eta_mins: tuple
    eta_maxs: tuple
    r_star_scope: str = "full-bracket"
    provenance: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "c_minus": self.c_minus,
            "c_plus": self.c_plus,
            "r_star": self.r_star,
            "q_star": self.q_star,
            "feasible": self.feasible,
            "epsilon_0": self.epsilon_0,
            "Delta": self.Delta,
            "eta_mins": list(self.eta_mins),
            "eta_maxs": list(self.eta_maxs),
            "r_star_scope": self.r_star_scope,
            "provenance": self.provenance,
        }

    def to_json(self, indent=2) -> str:
        return json.dumps(self.to_dict(), indent=indent)


def _table_digest(table: CoherenceTable) -> str:
    payload = repr((
        sorted(table.mu.items()),
        sorted(table.C.items()),
        sorted(table.I.items()),
        tuple(table.theta),
        table.Delta,
    )).encode()
    return hashlib.sha256(payload).hexdigest()[:16]


def compute_constants(
    table: CoherenceTable,
    lip: LipschitzEstimates,
    support: SupportSpec,
    theta_star,
    eta_star,
    r_star_scope: str = "full-bracket",
) -> BasinCertificate:
    """Assemble the certificate constants from precomputed metrics.

    Every mu/C/I lookup goes through the table; a missing entry raises a
    dependency error naming the gap rather than silently recomputing.
    """
    if r_star_scope not in R_STAR_SCOPES:
        raise InputError(f"unknown r_star scope {r_star_scope!r}; pick from {R_STAR_SCOPES}")
    theta_star = np.asarray(theta_star, dtype=float).ravel()
    eta_star = np.asarray(eta_star, dtype=float).ravel()
    p = support.p
    if theta_star.size != p or eta_star.size != support.total:
        raise InputError("theta/eta sizes do not match the support")
    Delta = table.Delta
    slices = support.modality_slices()
    eta_groups = [eta_star[sl] for sl in slices]
    eta_mins = np.array([np.min(g) for g in eta_groups])
    eta_maxs = np.array([np.max(g) for g in eta_groups])

    c_minus = 0.5 * min(
        min(eta_mins[i] ** 2 * table.mu_at(1, 1, i, i, 0.0),
            table.mu_at(0, 0, i, i, 0.0))
        for i in range(p)
    )
    c_plus = 1.5 * max(
        max(eta_maxs[i] ** 2 * table.mu_at(1, 1, i, i, 0.0),
            table.mu_at(0, 0, i, i, 0.0))
        for i in range(p)
    )

    r_star = -np.inf
    for i in range(p):
        if r_star_scope == "full-bracket":
            branch_a = sum(
                eta_maxs[j] * table.C_at(0, 1, i, j, Delta)
                + table.C_at(0, 0, i, j, Delta)
                for j in range(p)
            )
            branch_b = eta_maxs[i] * sum(
                eta_maxs[j] * table.C_at(1, 1, i, j, Delta)
                + table.C_at(1, 0, i, j, Delta)
                for j in range(p)
            )
        else:  # "first-term"
            branch_a = sum(
                eta_maxs[j] * table.C_at(0, 1, i, j, Delta) for j in range(p)
            ) + table.C_at(0, 0, i, i, Delta)
            branch_b = eta_maxs[i] * (
                sum(eta_maxs[j] * table.C_at(1, 1, i, j, Delta) for j in range(p))
                + table.C_at(1, 0, i, i, Delta)
            )
        r_star = max(r_star, branch_a, branch_b)

    eta_inf = float(np.max(np.abs(eta_star)))
    q_star = max(
        float(np.sum(np.abs(eta_groups[i]))) * table.I_at(2, i, Delta)
        + support.counts[i] * table.I_at(1, i, Delta)
        for i in range(p)
    ) + lip.K * eta_inf + 4.0 * p * lip.C_Delta * max(1.0, eta_inf ** 2)

    feasible = bool(r_star < c_minus)
    if not feasible:
        epsilon_0 = 0.0
    elif q_star > 0.0:
        epsilon_0 = (c_minus - r_star) / q_star
    else:
        # no curvature drift at all (q* = 0): the margin never erodes
        epsilon_0 = math.inf
    provenance = {
        "table_sha256": _table_digest(table),
        "table_truncation_tol": table.truncation_tol,
        "lipschitz": {
            "C_Delta": lip.C_Delta,
            "K": lip.K,
            "samples_per_axis": lip.samples_per_axis,
            "safety": lip.safety,
            "note": "sampled finite-difference estimates, not proven bounds",
        },
        "r_star_scope": r_star_scope,
    }
    return BasinCertificate(
        c_minus=float(c_minus),
        c_plus=float(c_plus),
        r_star=float(r_star),
        q_star=float(q_star),
        feasible=feasible,
        epsilon_0=float(epsilon_0),
        Delta=Delta,
        eta_mins=tuple(eta_mins),
        eta_maxs=tuple(eta_maxs),
        r_star_scope=r_star_scope,
        provenance=provenance,
    )


def convexity_pair(cert: BasinCertificate, epsilon: float):
    """(xi, gamma) at radius epsilon; requires a feasible certificate and
    0 <= epsilon < epsilon_0 (no clamping — out of range is an error)."""
    if not cert.feasible:
        raise FeasibilityError(
            f"certificate is infeasible (r_star={cert.r_star:g} >= c_minus={cert.c_minus:g})"
        )
    if not (0.0 <= epsilon):
        raise InputError(f"epsilon must be >= 0, got {epsilon}")
    if epsilon >= cert.epsilon_0:
        raise OutOfBasinError(
            f"epsilon {epsilon:g} is not below the certified radius {cert.epsilon_0:g}"
        )
    xi = cert.c_minus - cert.r_star - cert.q_star * epsilon
    gamma = cert.c_plus + cert.r_star + cert.q_star * epsilon
    return xi, gamma
