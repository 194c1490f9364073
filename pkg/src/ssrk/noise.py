"""Wiener increment generation on a fine grid with dyadic coarse aggregation.

Each fine step stores the pair (dw, dz) per channel, where dw is the Wiener
increment over the step and dz the time integral of W(s) - W(t_k) across it.
The pair is jointly Gaussian with

    E[dw^2] = h,   E[dz^2] = h^3/3,   E[dw dz] = h^2/2,

and is simulated from two independent standard normals as

    dw = sqrt(h) u1,   dz = (1/2) h^(3/2) (u1 + u2/sqrt(3)).

Storing the fine grid and summing exactly lets one Brownian path drive both
a fine reference run and any coarser dyadic run (common random numbers).

Random source: Philox (counter-based, 64-bit, keyed by the seed) producing
53-bit uniforms, mapped through the inverse normal CDF.  No rejection step
is involved, so the draw count per step is fixed on every platform.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import BinaryIO

import numpy as np
from scipy.special import ndtri

from .errors import DomainError, StructureError

__all__ = [
    "NoisePath",
    "increments_from_normals",
    "sample_path",
    "aggregate",
    "aggregate_arrays",
    "aggregate_path",
    "write_path",
    "read_path",
]

_HEADER = struct.Struct("<qdqq")  # m, h_fine, n_fine, seed


@dataclass(frozen=True)
class NoisePath:
    """Fine-grid increment pairs for ``m`` independent channels.

    ``dw`` and ``dz`` have shape (m, n_fine).  Immutable and shareable.
    """

    m: int
    h_fine: float
    n_fine: int
    dw: np.ndarray
    dz: np.ndarray
    seed: int

    def __post_init__(self):
        if self.m < 1:
            raise DomainError(f"channel count must be >= 1, got {self.m}")
        if not self.h_fine > 0.0:
            raise DomainError(f"fine step must be positive, got {self.h_fine}")
        if self.n_fine < 1:
            raise DomainError(f"fine step count must be >= 1, got {self.n_fine}")
        dw = np.asarray(self.dw, dtype=float)
        dz = np.asarray(self.dz, dtype=float)
        if dw.shape != (self.m, self.n_fine) or dz.shape != (self.m, self.n_fine):
            raise StructureError(
                f"increment arrays must have shape ({self.m}, {self.n_fine}), "
                f"got {dw.shape} and {dz.shape}"
            )
        dw.setflags(write=False)
        dz.setflags(write=False)
        object.__setattr__(self, "dw", dw)
        object.__setattr__(self, "dz", dz)


def increments_from_normals(u1, u2, h: float):
    """Map standard-normal draws (u1, u2) to an increment pair over step h."""
    u1 = np.asarray(u1, dtype=float)
    u2 = np.asarray(u2, dtype=float)
    dw = np.sqrt(h) * u1
    dz = 0.5 * h**1.5 * (u1 + u2 / np.sqrt(3.0))
    return dw, dz


def _standard_normals(seed: int, shape: tuple[int, ...]) -> np.ndarray:
    gen = np.random.Generator(np.random.Philox(key=seed))
    # (k + 1/2) * 2^-53 keeps the uniforms strictly inside (0, 1).
    k = gen.integers(0, 1 << 53, size=shape, dtype=np.uint64)
    return ndtri((k + 0.5) * 2.0**-53)


def sample_path(m: int, h_fine: float, n_fine: int, seed: int) -> NoisePath:
    """Sample a fine-grid path; deterministic for a given seed.

    Per fine step and channel, two standard normals are drawn (step-major,
    then channel, then the pair) and mapped by ``increments_from_normals``.
    """
    if m < 1:
        raise DomainError(f"channel count must be >= 1, got {m}")
    if not h_fine > 0.0:
        raise DomainError(f"fine step must be positive, got {h_fine}")
    if n_fine < 1:
        raise DomainError(f"fine step count must be >= 1, got {n_fine}")
    u = _standard_normals(seed, (n_fine, m, 2))
    dw, dz = increments_from_normals(u[:, :, 0].T, u[:, :, 1].T, h_fine)
    return NoisePath(m=m, h_fine=h_fine, n_fine=n_fine, dw=dw, dz=dz, seed=seed)


def _check_factor(path: NoisePath, coarse_factor: int) -> int:
    if coarse_factor < 1:
        raise DomainError(f"coarse_factor must be >= 1, got {coarse_factor}")
    if path.n_fine % coarse_factor != 0:
        raise DomainError(
            f"coarse_factor {coarse_factor} does not divide n_fine {path.n_fine}"
        )
    return path.n_fine // coarse_factor


def aggregate_arrays(dw: np.ndarray, dz: np.ndarray, h_fine: float, coarse_factor: int):
    """Aggregate (..., n_fine) increment arrays to the coarser grid.

    Over a coarse interval assembled from K fine pairs (dw_k, dz_k):

        dw_c = sum_k dw_k
        dz_c = sum_k ( dz_k + h_fine * sum_{j<k} dw_j )

    which is the exact interval-additive decomposition of the integrated
    increment; only summation order changes, so aggregating in one go or in
    dyadic stages agrees to float reassociation error.
    """
    K = coarse_factor
    n_coarse = dw.shape[-1] // K
    shape = dw.shape[:-1] + (n_coarse, K)
    dwr = dw.reshape(shape)
    dzr = dz.reshape(shape)
    weights = h_fine * np.arange(K - 1, -1, -1, dtype=float)
    dw_c = dwr.sum(axis=-1)
    dz_c = dzr.sum(axis=-1) + dwr @ weights
    return dw_c, dz_c


def aggregate(path: NoisePath, coarse_factor: int, channel: int, coarse_step_index: int):
    """Increment pair of one coarse step, summed exactly from the fine grid."""
    n_coarse = _check_factor(path, coarse_factor)
    if not 0 <= channel < path.m:
        raise DomainError(f"channel {channel} out of range for m={path.m}")
    if not 0 <= coarse_step_index < n_coarse:
        raise DomainError(
            f"coarse step index {coarse_step_index} out of range for {n_coarse} coarse steps"
        )
    k0 = coarse_step_index * coarse_factor
    sl = slice(k0, k0 + coarse_factor)
    dw_c, dz_c = aggregate_arrays(
        path.dw[channel, sl], path.dz[channel, sl], path.h_fine, coarse_factor
    )
    return float(dw_c[0]), float(dz_c[0])


def aggregate_path(path: NoisePath, coarse_factor: int) -> NoisePath:
    """The same Brownian path viewed on the grid coarsened by ``coarse_factor``."""
    n_coarse = _check_factor(path, coarse_factor)
    dw_c, dz_c = aggregate_arrays(path.dw, path.dz, path.h_fine, coarse_factor)
    return NoisePath(
        m=path.m,
        h_fine=path.h_fine * coarse_factor,
        n_fine=n_coarse,
        dw=dw_c,
        dz=dz_c,
        seed=path.seed,
    )


def write_path(path: NoisePath, fp: BinaryIO) -> None:
    """Binary dump: header (m, h_fine, n_fine, seed), then per channel the
    little-endian doubles (dw, dz) interleaved per fine step."""
    fp.write(_HEADER.pack(path.m, path.h_fine, path.n_fine, path.seed))
    interleaved = np.stack([path.dw, path.dz], axis=-1)
    fp.write(np.ascontiguousarray(interleaved, dtype="<f8").tobytes())


def read_path(fp: BinaryIO) -> NoisePath:
    """Read a path written by ``write_path``."""
    header = fp.read(_HEADER.size)
    if len(header) != _HEADER.size:
        raise StructureError("truncated path header")
    m, h_fine, n_fine, seed = _HEADER.unpack(header)
    count = m * n_fine * 2
    payload = fp.read(count * 8)
    data = np.frombuffer(payload, dtype="<f8", count=count).reshape(m, n_fine, 2)
    return NoisePath(
        m=m,
        h_fine=h_fine,
        n_fine=n_fine,
        dw=data[:, :, 0].copy(),
        dz=data[:, :, 1].copy(),
        seed=seed,
    )
