"""Sampling grid, spike support, dictionary assembly and signal synthesis.

The dictionary G(theta) stacks one column per spike: column (i, l) samples
g(theta_i, u - t_{i,l}) on the uniform grid u.  Derivative stacks G_1, G_2 hold
the same columns for the first and second theta-derivatives; they feed the
gradient/Hessian assembly and the conditioning metrics.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError
from .kernels import KernelFamily


@dataclass(frozen=True)
class SamplingGrid:
    """N uniform timestamps over [-T/2, T/2] (endpoints included)."""

    T: float
    N: int
    u: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        if not (np.isfinite(self.T) and self.T > 0):
            raise InputError(f"window width T must be positive, got {self.T!r}")
        if int(self.N) != self.N or self.N < 2:
            raise InputError(f"sample count N must be an integer >= 2, got {self.N!r}")
        object.__setattr__(self, "N", int(self.N))
        if self.u is None:
            s = np.arange(self.N, dtype=float)
            u = -0.5 * self.T + self.T * s / (self.N - 1)
            object.__setattr__(self, "u", u)

    @property
    def spacing(self) -> float:
        return self.T / (self.N - 1)


def make_grid(T: float, N: int) -> SamplingGrid:
    return SamplingGrid(T=float(T), N=N)


@dataclass(frozen=True)
class SupportSpec:
    """Spike locations grouped into p modalities; all locations distinct."""

    locations: tuple  # tuple of tuples, one inner tuple per modality

    def __post_init__(self):
        locs = tuple(tuple(float(t) for t in grp) for grp in self.locations)
        if len(locs) < 1 or any(len(grp) < 1 for grp in locs):
            raise InputError("support needs at least one modality with one spike")
        flat = [t for grp in locs for t in grp]
        if not np.all(np.isfinite(flat)):
            raise InputError("non-finite spike location")
        if len(set(flat)) != len(flat):
            raise InputError("spike locations must be pairwise distinct")
        object.__setattr__(self, "locations", locs)

    @property
    def p(self) -> int:
        return len(self.locations)

    @property
    def counts(self) -> tuple:
        return tuple(len(grp) for grp in self.locations)

    @property
    def total(self) -> int:
        return sum(self.counts)

    def flat_locations(self) -> np.ndarray:
        return np.array([t for grp in self.locations for t in grp], dtype=float)

    def modality_slices(self):
        slices, start = [], 0
        for n in self.counts:
            slices.append(slice(start, start + n))
            start += n
        return slices


def min_separation(support: SupportSpec) -> float:
    """Minimal distance between any two spikes, across and within modalities.

    A single-spike support has no pairwise distance; returns +inf with a
    warning in that case.
    """
    flat = np.sort(support.flat_locations())
    if flat.size < 2:
        warnings.warn("support has a single spike; minimal separation is +inf")
        return float("inf")
    return float(np.min(np.diff(flat)))


@dataclass(frozen=True)
class MixtureParams:
    """Shape vector theta (length p) and amplitudes eta in dictionary column order."""

    theta: np.ndarray
    eta: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "theta", np.asarray(self.theta, dtype=float).ravel())
        object.__setattr__(self, "eta", np.asarray(self.eta, dtype=float).ravel())

    def validate(self, support: SupportSpec):
        if self.theta.size != support.p:
            raise InputError(
                f"theta has {self.theta.size} entries, support has {support.p} modalities"
            )
        if self.eta.size != support.total:
            raise InputError(
                f"eta has {self.eta.size} entries, support has {support.total} spikes"
            )


@dataclass(frozen=True)
class DictionaryStack:
    """Sampled dictionary and its theta-derivative stacks (N x L-bar each)."""

    G0: np.ndarray
    G1: np.ndarray
    G2: np.ndarray
    support: SupportSpec

    def block(self, order: int, modality: int) -> np.ndarray:
        """Columns of the order-th stack belonging to one modality."""
        sl = self.support.modality_slices()[modality]
        return (self.G0, self.G1, self.G2)[order][:, sl]


def build_dictionary(
    family: KernelFamily,
    grid: SamplingGrid,
    support: SupportSpec,
    theta,
) -> DictionaryStack:
    """Assemble G_0, G_1, G_2 with columns ordered (1,1) .. (p, L_p)."""
    theta = np.asarray(theta, dtype=float).ravel()
    if theta.size != support.p:
        raise InputError(
            f"theta has {theta.size} entries, support has {support.p} modalities"
        )
    family.check_theta(theta)
    stacks = [np.empty((grid.N, support.total)) for _ in range(3)]
    col = 0
    for i, grp in enumerate(support.locations):
        th = float(theta[i])
        for t_loc in grp:
            shifted = grid.u - t_loc
            stacks[0][:, col] = family.eval0(th, shifted)
            stacks[1][:, col] = family.eval1(th, shifted)
            stacks[2][:, col] = family.eval2(th, shifted)
            col += 1
    return DictionaryStack(G0=stacks[0], G1=stacks[1], G2=stacks[2], support=support)


def synthesize(stack: DictionaryStack, eta) -> np.ndarray:
    """x = G_0 @ eta."""
    eta = np.asarray(eta, dtype=float).ravel()
    if eta.size != stack.G0.shape[1]:
        raise InputError(
            f"eta has {eta.size} entries, dictionary has {stack.G0.shape[1]} columns"
        )
    return stack.G0 @ eta


# ---------------------------------------------------------------------------
# Config (de)serialization: nested key-value dicts matching the TOML layout
# grid.T, grid.N, support.locations, params.theta, params.eta.


def problem_to_config(grid: SamplingGrid, support: SupportSpec, params: MixtureParams):
    return {
        "grid": {"T": grid.T, "N": grid.N},
        "support": {"locations": [list(grp) for grp in support.locations]},
        "params": {"theta": list(params.theta), "eta": list(params.eta)},
    }


def problem_from_config(cfg: dict):
    try:
        grid = make_grid(cfg["grid"]["T"], cfg["grid"]["N"])
        support = SupportSpec(locations=tuple(tuple(g) for g in cfg["support"]["locations"]))
        params = MixtureParams(theta=cfg["params"]["theta"], eta=cfg["params"]["eta"])
    except KeyError as exc:
        raise InputError(f"config missing field {exc}") from exc
    params.validate(support)
    return grid, support, params
