"""Loss, gradient, and exact Hessian of the unmixing objective.

The objective is L(theta, eta) = 0.5 * ||G(theta) eta - x_star||^2.  Its
Hessian splits into a Gauss-Newton term E = J^T J (J the Jacobian of the model
in (theta, eta)) plus a residual-coupled term R that vanishes at zero
residual:

    theta-theta[i,j] = (G1^i eta_i)^T (G1^j eta_j) + 1{i=j} r^T G2^i eta_i
    theta-eta[i,(j,k)] = (G1^i eta_i)^T g_{j,k}    + 1{i=j} r^T d1 g_{i,k}
    eta-eta = G0^T G0

with G_a^i the per-modality derivative stacks.  Alongside the exact spectrum
extremes (dense symmetric eigensolver; dimensions stay in the tens), Weyl
bounds from the diagonal D of E are computed, and the module can audit the
certificate's bound inequalities at sampled points near the ground truth.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError
from .kernels import KernelFamily
from .model import DictionaryStack, SamplingGrid, SupportSpec, build_dictionary


@dataclass(frozen=True)
class HessianBlocks:
    """Symmetric (p + L-bar) Hessian with its E/R split and residual."""

    H: np.ndarray
    E_part: np.ndarray
    R_part: np.ndarray
    D_part: np.ndarray  # diagonal of E, as a vector
    residual: np.ndarray
    p: int


def _check_shapes(support: SupportSpec, theta, eta, x_star, grid: SamplingGrid):
    theta = np.asarray(theta, dtype=float).ravel()
    eta = np.asarray(eta, dtype=float).ravel()
    x_star = np.asarray(x_star, dtype=float).ravel()
    if theta.size != support.p:
        raise InputError(f"theta has {theta.size} entries, expected {support.p}")
    if eta.size != support.total:
        raise InputError(f"eta has {eta.size} entries, expected {support.total}")
    if x_star.size != grid.N:
        raise InputError(f"x_star has {x_star.size} samples, expected {grid.N}")
    return theta, eta, x_star


def model_jacobian(stack: DictionaryStack, eta) -> np.ndarray:
    """Jacobian of (theta, eta) -> G(theta) eta, shape N x (p + L-bar)."""
    eta = np.asarray(eta, dtype=float).ravel()
    p = stack.support.p
    cols = [stack.block(1, i) @ eta[sl] for i, sl in enumerate(stack.support.modality_slices())]
    return np.column_stack(cols + [stack.G0])


def loss(family, grid, support, theta, eta, x_star) -> float:
    theta, eta, x_star = _check_shapes(support, theta, eta, x_star, grid)
    stack = build_dictionary(family, grid, support, theta)
    r = stack.G0 @ eta - x_star
    return 0.5 * float(r @ r)


def gradient(family, grid, support, theta, eta, x_star) -> np.ndarray:
    """Stacked gradient [d/dtheta; d/deta], length p + L-bar."""
    theta, eta, x_star = _check_shapes(support, theta, eta, x_star, grid)
    stack = build_dictionary(family, grid, support, theta)
    r = stack.G0 @ eta - x_star
    slices = support.modality_slices()
    g_theta = np.array([r @ (stack.block(1, i) @ eta[sl]) for i, sl in enumerate(slices)])
    g_eta = stack.G0.T @ r
    return np.concatenate([g_theta, g_eta])


def hessian(family, grid, support, theta, eta, x_star) -> HessianBlocks:
    theta, eta, x_star = _check_shapes(support, theta, eta, x_star, grid)
    stack = build_dictionary(family, grid, support, theta)
    r = stack.G0 @ eta - x_star
    p, Lbar = support.p, support.total
    n = p + Lbar
    slices = support.modality_slices()
    J = model_jacobian(stack, eta)
    E = J.T @ J

    R = np.zeros((n, n))
    for i, sl in enumerate(slices):
        R[i, i] = r @ (stack.block(2, i) @ eta[sl])
        row = r @ stack.block(1, i)  # r^T d1 g_{i,k} for k in modality i
        cols = p + np.arange(sl.start, sl.stop)
        R[i, cols] = row
        R[cols, i] = row

    H = E + R
    return HessianBlocks(
        H=H,
        E_part=E,
        R_part=R,
        D_part=np.diag(E).copy(),
        residual=r,
        p=p,
    )


def eig_extremes(blocks: HessianBlocks):
    """Exact (lambda_min, lambda_max) by dense symmetric eigendecomposition."""
    vals = np.linalg.eigvalsh(blocks.H)
    return float(vals[0]), float(vals[-1])


def weyl_bounds(blocks: HessianBlocks):
    """(lower, upper) spectrum bounds: lambda extremes of D shifted by the
    max-absolute-row-sum norm of H - D."""
    off = blocks.H.copy()
    np.fill_diagonal(off, np.diag(blocks.H) - blocks.D_part)
    dev = float(np.max(np.sum(np.abs(off), axis=1)))
    return float(np.min(blocks.D_part)) - dev, float(np.max(blocks.D_part)) + dev


# ---------------------------------------------------------------------------
# Inequality audits


@dataclass
class AuditReport:
    """Measured lhs/rhs/slack for each certificate bound inequality."""

    rows: list = field(default_factory=list)

    def add(self, name, lhs, rhs):
        self.rows.append({
            "inequality": name,
            "lhs": float(lhs),
            "rhs": float(rhs),
            "slack": float(rhs - lhs),
            "passed": bool(lhs <= rhs),
        })

    @property
    def passed(self) -> bool:
        return all(row["passed"] for row in self.rows)

    def failures(self):
        return [row["inequality"] for row in self.rows if not row["passed"]]

    def to_json(self, indent=2) -> str:
        return json.dumps(self.rows, indent=indent)


def _op_inf_norm(M) -> float:
    return float(np.max(np.sum(np.abs(M), axis=1)))


def audit_lemmas(
    family: KernelFamily,
    grid: SamplingGrid,
    support: SupportSpec,
    theta,
    eta,
    x_star,
    table,
    lip,
    cert,
    epsilon: float,
) -> AuditReport:
    """Check the diagonal, stack-norm, and off-diagonal bound inequalities at
    one parameter point within distance epsilon of the ground truth.

    Failures are recorded, not raised: callers use the report both for
    positive checks and for deliberately broken negative controls.
    """
    theta, eta, x_star = _check_shapes(support, theta, eta, x_star, grid)
    blocks = hessian(family, grid, support, theta, eta, x_star)
    report = AuditReport()

    report.add("diag_lower", cert.c_minus, float(np.min(blocks.D_part)))
    report.add("diag_upper", float(np.max(blocks.D_part)), cert.c_plus)

    stack = build_dictionary(family, grid, support, theta)
    Delta = cert.Delta
    for i in range(support.p):
        for a in (0, 1, 2):
            lhs = _op_inf_norm(stack.block(a, i))
            rhs = table.I_at(a, i, Delta) + lip.C_Delta * epsilon
            report.add(f"stack_norm_a{a}_i{i}", lhs, rhs)
    for i in range(support.p):
        for j in range(support.p):
            for a in (0, 1):
                for b in (0, 1):
                    gram = stack.block(a, i).T @ stack.block(b, j)
                    if i == j and a == b:
                        # the self-correlation term sits on the Hessian
                        # diagonal D and is excluded from C_{a,a}(i,i,.),
                        # whose series starts at m=1; compare like with like
                        np.fill_diagonal(gram, 0.0)
                    lhs = _op_inf_norm(gram)
                    rhs = table.C_at(a, b, i, j, Delta) + 2.0 * lip.C_Delta * epsilon
                    report.add(f"cross_gram_a{a}b{b}_i{i}j{j}", lhs, rhs)

    off = blocks.H.copy()
    np.fill_diagonal(off, np.diag(blocks.H) - blocks.D_part)
    report.add("offdiag_norm", _op_inf_norm(off), cert.r_star + cert.q_star * epsilon)
    return report
