"""Additive-noise SDE problems and their Hamiltonian structure.

Problems have drift f(t, x) and per-channel diffusion g_r(t) that depends on
time only (additive noise by construction).  Second-order mechanical systems

    M q'' + grad_U(t, q) = sum_r sigma_r(t) W_r'

are recast as first-order systems in (P, Q) block order with P = M q', so
the noise enters the momentum block only.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import DomainError, StructureError

__all__ = [
    "AdditiveSde",
    "SecondOrderSpec",
    "EnergyLaw",
    "from_second_order",
    "harmonic_oscillator",
    "double_well",
    "symplectic_matrix",
]

STRUCTURES = ("generic", "hamiltonian", "second_order_hamiltonian")


@dataclass(frozen=True)
class AdditiveSde:
    """Problem definition: drift, per-channel diffusion columns, structure.

    ``drift(t, x)`` maps a state (last axis of length ``dim``) to its drift;
    builtin systems broadcast over leading axes (``vectorized=True``).
    ``diffusion(t, r)`` returns the full state-space column of channel
    ``r`` (0-based) at time t.  ``h0`` is the autonomous Hamiltonian when
    the structure provides one, and ``y0`` a default initial state.
    """

    dim: int
    m: int
    drift: Callable[[float, np.ndarray], np.ndarray]
    diffusion: Callable[[float, int], np.ndarray]
    structure: str = "generic"
    h0: Callable[[np.ndarray], np.ndarray] | None = None
    y0: np.ndarray | None = None
    vectorized: bool = False
    name: str = ""

    def __post_init__(self):
        if self.dim < 1:
            raise StructureError(f"state dimension must be >= 1, got {self.dim}")
        if self.m < 1:
            raise StructureError(f"channel count must be >= 1, got {self.m}")
        if self.structure not in STRUCTURES:
            raise StructureError(f"unknown structure {self.structure!r}; expected one of {STRUCTURES}")
        if self.structure != "generic" and self.dim % 2 != 0:
            raise StructureError(f"{self.structure} systems need even dimension, got {self.dim}")
        if self.y0 is not None:
            y0 = np.asarray(self.y0, dtype=float)
            if y0.shape != (self.dim,):
                raise StructureError(f"y0 must have shape ({self.dim},), got {y0.shape}")
            y0.setflags(write=False)
            object.__setattr__(self, "y0", y0)


@dataclass(frozen=True)
class SecondOrderSpec:
    """Second-order mechanical problem: M q'' + grad_U = additive forcing.

    ``mass_inv`` is the symmetric inverse mass matrix, ``grad_u(t, q)`` the
    potential gradient, and ``sigmas`` one time-only intensity per channel
    (scalar or n-vector valued).
    """

    n: int
    mass_inv: np.ndarray
    grad_u: Callable[[float, np.ndarray], np.ndarray]
    sigmas: tuple[Callable[[float], float | np.ndarray], ...]

    def __post_init__(self):
        if self.n < 1:
            raise StructureError(f"configuration dimension must be >= 1, got {self.n}")
        mi = np.asarray(self.mass_inv, dtype=float)
        if mi.shape != (self.n, self.n):
            raise StructureError(f"mass_inv must have shape ({self.n}, {self.n}), got {mi.shape}")
        if not np.array_equal(mi, mi.T):
            raise DomainError("mass_inv must be symmetric")
        mi.setflags(write=False)
        object.__setattr__(self, "mass_inv", mi)
        object.__setattr__(self, "sigmas", tuple(self.sigmas))
        if not self.sigmas:
            raise StructureError("at least one noise channel is required")


@dataclass(frozen=True)
class EnergyLaw:
    """Expected linear growth of the energy: E[H0(t)] = intercept + slope*t.

    For momentum-forced systems the slope is (1/2) * sum_r sigma_r^2.
    """

    h0: Callable[[np.ndarray], np.ndarray]
    expected_slope: float
    intercept: float

    def expected_mean(self, t):
        return self.intercept + self.expected_slope * np.asarray(t, dtype=float)


def symplectic_matrix(dim: int) -> np.ndarray:
    """The standard symplectic matrix J = [[0, I], [-I, 0]] in (P, Q) order."""
    if dim % 2 != 0:
        raise DomainError(f"symplectic matrix needs even dimension, got {dim}")
    n = dim // 2
    J = np.zeros((dim, dim))
    J[:n, n:] = np.eye(n)
    J[n:, :n] = -np.eye(n)
    return J


def from_second_order(
    spec: SecondOrderSpec,
    potential: Callable[[np.ndarray], np.ndarray] | None = None,
    vectorized: bool = False,
    y0=None,
    name: str = "",
) -> AdditiveSde:
    """Recast a second-order problem as a 2n-dimensional first-order system.

    The state is (P, Q) with P = M dQ/dt; the drift is (-grad_U, M^{-1} P)
    and every diffusion column has an identically zero Q block.  When the
    autonomous ``potential`` U(q) is supplied, the Hamiltonian
    H0 = (1/2) p' M^{-1} p + U(q) is attached.
    """
    n = spec.n
    mass_inv = spec.mass_inv
    grad_u = spec.grad_u
    sigmas = spec.sigmas

    def drift(t, y):
        y = np.asarray(y, dtype=float)
        p = y[..., :n]
        q = y[..., n:]
        return np.concatenate([-np.asarray(grad_u(t, q), dtype=float), p @ mass_inv.T], axis=-1)

    def diffusion(t, r):
        if not 0 <= r < len(sigmas):
            raise DomainError(f"channel {r} out of range for m={len(sigmas)}")
        col = np.zeros(2 * n)
        col[:n] = sigmas[r](t)
        return col

    h0 = None
    if potential is not None:

        def h0(y):
            y = np.asarray(y, dtype=float)
            p = y[..., :n]
            q = y[..., n:]
            return 0.5 * np.sum(p * (p @ mass_inv.T), axis=-1) + np.asarray(potential(q), dtype=float)

    return AdditiveSde(
        dim=2 * n,
        m=len(sigmas),
        drift=drift,
        diffusion=diffusion,
        structure="second_order_hamiltonian",
        h0=h0,
        y0=y0,
        vectorized=vectorized,
        name=name,
    )


def harmonic_oscillator(sigma: float, p0: float = 1.0, q0: float = 0.0):
    """Linear oscillator dP = -Q dt + sigma dW, dQ = P dt.

    Returns the problem plus its energy law: with H0 = (p^2 + q^2)/2,
    E[H0(t)] = H0(p0, q0) + (sigma^2/2) t.
    """
    spec = SecondOrderSpec(
        n=1,
        mass_inv=np.eye(1),
        grad_u=lambda t, q: q,
        sigmas=(lambda t: sigma,),
    )
    sde = from_second_order(
        spec,
        potential=lambda q: 0.5 * q[..., 0] ** 2,
        vectorized=True,
        y0=np.array([p0, q0]),
        name="harmonic_oscillator",
    )
    law = EnergyLaw(h0=sde.h0, expected_slope=0.5 * sigma**2, intercept=0.5 * (p0**2 + q0**2))
    return sde, law


def double_well(sigma1: float, sigma2: float, p0: float = 1.0, q0: float = 0.0):
    """Double-well oscillator dP = (Q - Q^3) dt + sigma_1 dW_1 + sigma_2 dW_2.

    H0 = (p^2 - q^2)/2 + q^4/4 grows in mean with slope
    (sigma_1^2 + sigma_2^2)/2.
    """
    spec = SecondOrderSpec(
        n=1,
        mass_inv=np.eye(1),
        grad_u=lambda t, q: q**3 - q,
        sigmas=(lambda t: sigma1, lambda t: sigma2),
    )
    sde = from_second_order(
        spec,
        potential=lambda q: -0.5 * q[..., 0] ** 2 + 0.25 * q[..., 0] ** 4,
        vectorized=True,
        y0=np.array([p0, q0]),
        name="double_well",
    )
    h0_0 = 0.5 * (p0**2 - q0**2) + 0.25 * q0**4
    law = EnergyLaw(h0=sde.h0, expected_slope=0.5 * (sigma1**2 + sigma2**2), intercept=h0_0)
    return sde, law
