"""Parametric PSF families.

A kernel family is a map (theta, t) -> g(theta, t) on a closed shape-parameter
interval, together with its first two derivatives in theta.  The Lorentz family

    g(theta, t) = theta / (pi * (theta**2 + t**2))

is the workhorse; user-defined families can be supplied through plain callables,
optionally falling back to finite differences for the theta-derivatives.

Tail helpers (`tail_sup`, `tail_integral`) bound the decay of the kernel away
from the origin.  They feed the truncation bounds of the coherence and
interference series and are exact for the Lorentz family.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import DomainError, InputError

_SQRT3 = math.sqrt(3.0)


@dataclass(frozen=True)
class KernelFamily:
    """Even, twice theta-differentiable PSF family on [theta_min, theta_max].

    eval0/eval1/eval2 take (theta, t) with t scalar or ndarray and return the
    kernel / its first / second derivative in theta.  tail_sup(order, theta, r)
    returns an upper bound on sup_{|t| >= r} |d^order g(theta, t)|;
    tail_integral(order, theta, r) bounds the integral of that sup-envelope
    over [r, inf).  Both may be numeric fallbacks for user families.
    """

    name: str
    theta_min: float
    theta_max: float
    eval0: Callable
    eval1: Callable
    eval2: Callable
    tail_sup: Callable = field(default=None, repr=False)
    tail_integral: Callable = field(default=None, repr=False)
    corr_tail_sup: Callable = field(default=None, repr=False)
    corr_tail_integral: Callable = field(default=None, repr=False)
    derivatives_exact: bool = True

    def __post_init__(self):
        if not (0.0 < self.theta_min < self.theta_max):
            raise InputError(
                f"invalid theta domain [{self.theta_min}, {self.theta_max}]"
            )
        if self.tail_sup is None:
            object.__setattr__(self, "tail_sup", _numeric_tail_sup(self))
        if self.tail_integral is None:
            object.__setattr__(self, "tail_integral", _numeric_tail_integral(self))

    def check_theta(self, theta):
        thetas = np.atleast_1d(np.asarray(theta, dtype=float))
        if not np.all(np.isfinite(thetas)):
            raise DomainError(f"non-finite theta {theta!r}")
        if np.any(thetas < self.theta_min) or np.any(thetas > self.theta_max):
            raise DomainError(
                f"theta {theta!r} outside [{self.theta_min}, {self.theta_max}]"
            )

    def derivative(self, order):
        try:
            return (self.eval0, self.eval1, self.eval2)[order]
        except (IndexError, TypeError):
            raise InputError(f"derivative order must be 0, 1 or 2, got {order!r}")


def eval_kernel(family: KernelFamily, order: int, theta: float, t):
    """Evaluate the order-th theta-derivative of the kernel at (theta, t)."""
    family.check_theta(theta)
    fn = family.derivative(order)
    t_arr = np.asarray(t, dtype=float)
    if not np.all(np.isfinite(t_arr)):
        raise InputError("non-finite sample location t")
    out = fn(float(theta), t_arr)
    if np.ndim(t) == 0:
        return float(out)
    return out


# ---------------------------------------------------------------------------
# Lorentz family


def _lorentz0(theta, t):
    return theta / (np.pi * (theta * theta + t * t))


def _lorentz1(theta, t):
    tt = t * t
    th2 = theta * theta
    return (tt - th2) / (np.pi * (th2 + tt) ** 2)


def _lorentz2(theta, t):
    tt = t * t
    th2 = theta * theta
    return 2.0 * theta * (th2 - 3.0 * tt) / (np.pi * (th2 + tt) ** 3)


def _lorentz_tail_sup(order, theta, r):
    """sup_{|t| >= r} |d^order g(theta, t)| for the Lorentz kernel, exactly.

    |g| is unimodal; |g'| peaks at t=0 and (after its zero at t=theta) again at
    sqrt(3)*theta; |g''| peaks at t=0 and again at t=theta.  Beyond the last
    interior extremum each |derivative| is nonincreasing in |t|, so the sup is
    the boundary value, capped by the outer-peak value when r sits before it.
    """
    r = max(float(r), 0.0)
    if order == 0:
        return float(_lorentz0(theta, r))
    if order == 1:
        boundary = abs(float(_lorentz1(theta, r)))
        if r <= _SQRT3 * theta:
            return max(boundary, 1.0 / (8.0 * np.pi * theta * theta))
        return boundary
    if order == 2:
        boundary = abs(float(_lorentz2(theta, r)))
        if r <= theta:
            return max(boundary, 1.0 / (2.0 * np.pi * theta ** 3))
        return boundary
    raise InputError(f"derivative order must be 0, 1 or 2, got {order!r}")


def _lorentz_tail_integral(order, theta, r):
    """Closed-form integral over [r, inf) of the monotone tail of |d^order g|.

    Valid for r past the last interior extremum (enforced by flooring r); the
    antiderivatives are
        order 0:  (1/pi) * (pi/2 - arctan(r/theta))
        order 1:  r / (pi * (r^2 + theta^2))
        order 2:  (2 theta / pi) * r / (r^2 + theta^2)^2
    """
    r = max(float(r), _SQRT3 * theta)
    if order == 0:
        return (0.5 * np.pi - math.atan(r / theta)) / np.pi
    if order == 1:
        return r / (np.pi * (r * r + theta * theta))
    if order == 2:
        return (2.0 * theta / np.pi) * r / (r * r + theta * theta) ** 2
    raise InputError(f"derivative order must be 0, 1 or 2, got {order!r}")


def _lorentz_corr_tail_sup(a, b, theta_i, theta_j, r):
    """Continuum bound on sup_{|d| >= r} |corr(d)| for the shift correlation
    of d^a g(theta_i, .) with d^b g(theta_j, .).

    The Lorentz semigroup identity  integral g(t1,t) g(t2,t-d) dt = g(t1+t2, d)
    makes the correlation the order-(a+b) width-derivative of a Lorentz kernel
    of width theta_i + theta_j, so the single-kernel tail bounds apply.
    Only available for a+b <= 2; callers fall back to the l1 envelope above.
    """
    order = a + b
    if order > 2:
        return None
    return _lorentz_tail_sup(order, theta_i + theta_j, r)


def _lorentz_corr_tail_integral(a, b, theta_i, theta_j, r):
    order = a + b
    if order > 2:
        return None
    return _lorentz_tail_integral(order, theta_i + theta_j, r)


def lorentz(theta_min: float = 1e-6, theta_max: float = 10.0) -> KernelFamily:
    """Lorentz (Cauchy) PSF family with analytic derivatives and tail bounds."""
    return KernelFamily(
        name="lorentz",
        theta_min=theta_min,
        theta_max=theta_max,
        eval0=_lorentz0,
        eval1=_lorentz1,
        eval2=_lorentz2,
        tail_sup=_lorentz_tail_sup,
        tail_integral=_lorentz_tail_integral,
        corr_tail_sup=_lorentz_corr_tail_sup,
        corr_tail_integral=_lorentz_corr_tail_integral,
    )


# ---------------------------------------------------------------------------
# User-defined families

def make_family(
    name,
    theta_min,
    theta_max,
    eval0,
    eval1=None,
    eval2=None,
    tail_sup=None,
    tail_integral=None,
    fd_rel_step1: float = 1e-6,
    fd_rel_step2: float = 1e-4,
) -> KernelFamily:
    """Build a kernel family from evaluation rules.

    If eval1/eval2 are omitted they fall back to central finite differences in
    theta (steps fd_rel_step*theta).  The fallback is lower accuracy than
    analytic rules; prefer supplying derivatives when available.
    """
    exact = eval1 is not None and eval2 is not None

    if eval1 is None:
        def eval1(theta, t, _f=eval0, _h=fd_rel_step1):
            h = _h * theta
            return (_f(theta + h, t) - _f(theta - h, t)) / (2.0 * h)

    if eval2 is None:
        def eval2(theta, t, _f=eval0, _h=fd_rel_step2):
            h = _h * theta
            return (_f(theta + h, t) - 2.0 * _f(theta, t) + _f(theta - h, t)) / (h * h)

    return KernelFamily(
        name=name,
        theta_min=theta_min,
        theta_max=theta_max,
        eval0=eval0,
        eval1=eval1,
        eval2=eval2,
        tail_sup=tail_sup,
        tail_integral=tail_integral,
        derivatives_exact=exact,
    )


def _numeric_tail_sup(family):
    """Fallback sup bound: dense scan of [r, r + 50*theta] plus the scan edge.

    Assumes the derivative magnitudes are eventually nonincreasing, which holds
    for the integrable even kernels this package targets.
    """

    def tail_sup(order, theta, r):
        fn = family.derivative(order)
        r = max(float(r), 0.0)
        span = 50.0 * theta
        grid = r + np.linspace(0.0, span, 2001)
        vals = np.abs(fn(theta, grid))
        return float(vals.max())

    return tail_sup


def _numeric_tail_integral(family):
    """Fallback integral bound: quadrature over [r, r + 200*theta] plus a
    quadratic-decay extrapolation of the remainder."""

    def tail_integral(order, theta, r):
        r = max(float(r), 2.0 * theta)
        edge = r + 200.0 * theta
        grid = np.linspace(r, edge, 4001)
        fn = family.derivative(order)
        vals = np.abs(fn(theta, grid))
        body = float(np.trapezoid(vals, grid))
        # remainder modeled as C/t^2 matched at the scan edge
        remainder = float(vals[-1]) * edge * edge / edge
        return body + remainder

    return tail_integral
