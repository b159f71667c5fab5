"""Solvers for the non-linear least-squares unmixing objective.

Two methods are provided:

  * fixed-step gradient descent — step defaults to 1/gamma when a basin
    certificate is supplied, the guaranteed-descent step for a gamma-smooth
    loss;
  * Levenberg-Marquardt on the stacked (theta, eta) parameter with additive
    lambda*I damping (x3 on rejected steps, /2 on accepted ones).

Theta iterates are clamped to the kernel family's domain after every step —
the kernels are undefined outside it.  Amplitudes are unconstrained.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import ConditioningError, DivergenceError, InputError
from .hessian import model_jacobian
from .model import MixtureParams, build_dictionary

_DIVERGENCE_FACTOR = 1e12


@dataclass
class SolveConfig:
    method: str = "levenberg-marquardt"  # or "gradient-descent"
    step: float = None  # GD only; default 1/gamma from the certificate
    max_iters: int = 200
    grad_tol: float = None  # default: 1e-10 * initial gradient inf-norm, floored
    lm_damping_init: float = None  # default: 1e-3 * trace(E)/(p + L-bar)
    theta_bounds: tuple = None  # ((lo, hi), ...) per modality; default family domain

    def __post_init__(self):
        if self.method not in ("gradient-descent", "levenberg-marquardt"):
            raise InputError(f"unknown method {self.method!r}")
        if self.step is not None and not self.step > 0:
            raise InputError(f"step must be positive, got {self.step}")
        if self.max_iters < 1:
            raise InputError("max_iters must be >= 1")


@dataclass
class SolveReport:
    params: MixtureParams
    converged: bool
    iterations: int
    loss_trace: np.ndarray
    grad_norm: float
    theta_error: float = None  # inf-norm distances when ground truth is known
    eta_error: float = None

    def export_trace(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iter", "loss"])
            for k, val in enumerate(self.loss_trace):
                w.writerow([k, repr(float(val))])


def _theta_bounds(family, support, config):
    if config.theta_bounds is not None:
        bounds = [(float(lo), float(hi)) for lo, hi in config.theta_bounds]
        if len(bounds) != support.p:
            raise InputError("theta_bounds must have one interval per modality")
        for lo, hi in bounds:
            if not (family.theta_min <= lo < hi <= family.theta_max):
                raise InputError(f"theta bound ({lo}, {hi}) outside the kernel domain")
        return bounds
    return [(family.theta_min, family.theta_max)] * support.p


def _clamp(theta, bounds):
    return np.array([min(max(t, lo), hi) for t, (lo, hi) in zip(theta, bounds)])


def _split(z, p):
    return z[:p], z[p:]


def _eval(family, grid, support, theta, eta, x_star, row_weights=None):
    stack = build_dictionary(family, grid, support, theta)
    if row_weights is not None:
        from dataclasses import replace

        w = row_weights[:, None]
        stack = replace(stack, G0=w * stack.G0, G1=w * stack.G1, G2=w * stack.G2)
    r = stack.G0 @ eta - x_star
    return stack, r, 0.5 * float(r @ r)


def solve(family, grid, support, x_star, init: MixtureParams,
          config: SolveConfig = None, certificate=None,
          ground_truth: MixtureParams = None, row_weights=None) -> SolveReport:
    """Minimize the loss from `init`; see SolveConfig for the method knobs.

    row_weights, when given, scales every dictionary row (all derivative
    stacks alike), turning the objective into the diagonally weighted loss
    0.5 * ||diag(w) G(theta) eta - x_star||^2.
    """
    config = config or SolveConfig()
    init.validate(support)
    x_star = np.asarray(x_star, dtype=float).ravel()
    if row_weights is not None:
        row_weights = np.asarray(row_weights, dtype=float).ravel()
        if row_weights.size != grid.N:
            raise InputError("row_weights length must equal the sample count")
    bounds = _theta_bounds(family, support, config)
    p = support.p
    z = np.concatenate([_clamp(init.theta, bounds), init.eta])

    stack, r, f0 = _eval(family, grid, support, *_split(z, p), x_star, row_weights)
    if not np.isfinite(f0):
        raise InputError("non-finite loss at the initialization")

    if config.method == "gradient-descent":
        if config.step is not None:
            step = config.step
        elif certificate is not None:
            from .certificate import convexity_pair

            _, gamma = convexity_pair(certificate, 0.0)
            step = 1.0 / gamma
        else:
            raise InputError("gradient-descent needs an explicit step or a certificate")
    else:
        J = model_jacobian(stack, z[p:])
        lam = config.lm_damping_init
        if lam is None:
            lam = 1e-3 * float(np.sum(J * J)) / z.size

    def grad_of(stack, r, eta):
        g_theta = np.array([
            r @ (stack.block(1, i) @ eta[sl])
            for i, sl in enumerate(support.modality_slices())
        ])
        return np.concatenate([g_theta, stack.G0.T @ r])

    g = grad_of(stack, r, z[p:])
    grad_tol = config.grad_tol
    if grad_tol is None:
        grad_tol = max(1e-10 * float(np.max(np.abs(g))), 1e-300)

    trace = [f0]
    f = f0
    converged = float(np.max(np.abs(g))) < grad_tol
    iters = 0
    for iters in range(1, config.max_iters + 1):
        if converged:
            iters -= 1
            break
        if config.method == "gradient-descent":
            z_new = z - step * g
            z_new[:p] = _clamp(z_new[:p], bounds)
            stack, r, f_new = _eval(family, grid, support, *_split(z_new, p), x_star, row_weights)
            z, f = z_new, f_new
        else:
            J = model_jacobian(stack, z[p:])
            accepted = False
            for _ in range(50):
                A = J.T @ J + lam * np.eye(z.size)
                try:
                    d = np.linalg.solve(A, -(J.T @ r))
                except np.linalg.LinAlgError:
                    lam *= 3.0
                    continue
                z_try = z + d
                z_try[:p] = _clamp(z_try[:p], bounds)
                stack_try, r_try, f_try = _eval(family, grid, support, *_split(z_try, p), x_star, row_weights)
                if np.isfinite(f_try) and f_try < f:
                    z, f, stack, r = z_try, f_try, stack_try, r_try
                    lam = max(lam / 2.0, 1e-300)
                    accepted = True
                    break
                lam *= 3.0
            if not accepted:
                trace.append(f)
                break
        trace.append(f)
        if not np.isfinite(f) or f > _DIVERGENCE_FACTOR * max(f0, 1e-300):
            raise DivergenceError(
                f"loss blew up to {f:g} from {f0:g}", trace=np.array(trace)
            )
        g = grad_of(stack, r, z[p:])
        converged = float(np.max(np.abs(g))) < grad_tol

    theta_hat, eta_hat = _split(z, p)
    params = MixtureParams(theta=theta_hat, eta=eta_hat)
    theta_err = eta_err = None
    if ground_truth is not None:
        theta_err = float(np.max(np.abs(theta_hat - ground_truth.theta)))
        eta_err = float(np.max(np.abs(eta_hat - ground_truth.eta)))
    return SolveReport(
        params=params,
        converged=bool(converged),
        iterations=iters,
        loss_trace=np.array(trace),
        grad_norm=float(np.max(np.abs(g))),
        theta_error=theta_err,
        eta_error=eta_err,
    )


def solve_eta_linear(stack, x_star, cond_threshold=1e12) -> np.ndarray:
    """Least-squares amplitudes for a fixed dictionary (eta enters linearly)."""
    x_star = np.asarray(x_star, dtype=float).ravel()
    if x_star.size != stack.G0.shape[0]:
        raise InputError("x_star length does not match the dictionary rows")
    sv = np.linalg.svd(stack.G0, compute_uv=False)
    if sv[0] == 0.0 or sv[0] / max(sv[-1], 1e-300) > cond_threshold:
        raise ConditioningError(
            f"dictionary condition number exceeds {cond_threshold:g}; "
            "near-duplicate columns (close spikes with similar widths?)"
        )
    eta, *_ = np.linalg.lstsq(stack.G0, x_star, rcond=None)
    return eta


def recovered(report: SolveReport, theta_star, rel_tol=1e-3) -> bool:
    """Success rule: relative inf-norm error of theta within rel_tol."""
    theta_star = np.asarray(theta_star, dtype=float).ravel()
    err = float(np.max(np.abs(report.params.theta - theta_star)))
    return err <= rel_tol * float(np.max(np.abs(theta_star)))
