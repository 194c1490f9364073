"""Monte Carlo convergence studies, energy-growth measurement and the
closed-form growth-rate perturbations of the linear oscillator.

Convergence experiments reuse one Brownian path per trajectory across the
reference run and every coarser run (common random numbers), so measured
error differences reflect discretization only.  The reference solution is
the 2-stage symplectic order-1.5/2.0 scheme on a fine dyadic grid
(default T/4096); at that resolution its bias is far below the smallest
measured error.

Trajectories are advanced in blocks: all paths of a block share the step
loop with batched states, and implicit stages iterate until the worst path
of the block converges.  Results are therefore reproducible for a fixed
block size; the partitioning is recorded in the results.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError, DomainError, ExperimentError
from .integrator import DEFAULT_SOLVER, SolverConfig, _advance, one_step_affine_map, run_trajectory
from .noise import aggregate_arrays, sample_path
from .sde import AdditiveSde, EnergyLaw, harmonic_oscillator
from .tableau import Tableau, make_builtin

__all__ = [
    "ConvergenceResult",
    "GrowthResult",
    "ms_convergence",
    "energy_growth",
    "drift_constant",
    "moment_slope_oracle",
    "DRIFT_CONSTANT_KINDS",
    "DEFAULT_REFERENCE_DIVISIONS",
]

DEFAULT_REFERENCE_DIVISIONS = 4096  # reference grid is T / 4096
DEFAULT_BLOCK_SIZE = 512
MAX_FAILED_FRACTION = 0.01

DRIFT_CONSTANT_KINDS = ("c_ssrk05", "c_alpha1", "c_b1_at_alpha_half")

_SQRT6 = math.sqrt(6.0)


@dataclass(frozen=True)
class ConvergenceResult:
    """Root-mean-square endpoint errors per step size plus the fitted order.

    ``rms_errors[i]`` estimates sqrt(E |y_N - y_ref(T)|^2) at
    ``step_sizes[i]``; ``fitted_order`` is the least-squares slope of
    log2(rms) against log2(h).  ``order_se`` propagates the per-h Monte
    Carlo standard errors through the fit treating levels as independent
    (common random numbers correlate them, so it is an approximation).
    """

    scheme: str
    step_sizes: tuple[float, ...]
    rms_errors: tuple[float, ...]
    fitted_order: float
    n_paths: int
    seed: int
    reference_h: float
    rms_standard_errors: tuple[float, ...]
    order_se: float
    reference_scheme: str
    n_failed: int
    block_size: int

    def as_dict(self) -> dict:
        return {
            "scheme": self.scheme,
            "step_sizes": list(self.step_sizes),
            "rms_errors": list(self.rms_errors),
            "rms_standard_errors": list(self.rms_standard_errors),
            "fitted_order": self.fitted_order,
            "order_se": self.order_se,
            "n_paths": self.n_paths,
            "n_failed": self.n_failed,
            "seed": self.seed,
            "reference_h": self.reference_h,
            "reference_scheme": self.reference_scheme,
            "block_size": self.block_size,
        }


@dataclass(frozen=True)
class GrowthResult:
    """Mean energy along numerical solutions and its fitted linear slope.

    ``fitted_slope`` is the least-squares slope of the recorded mean-energy
    series, which equals the average of per-path slopes; ``slope_se`` is
    the standard error of that average.
    """

    scheme: str
    times: tuple[float, ...]
    mean_h0: tuple[float, ...]
    fitted_slope: float
    expected_slope: float
    n_paths: int
    slope_se: float
    seed: int
    h: float
    n_failed: int
    block_size: int

    def as_dict(self) -> dict:
        return {
            "scheme": self.scheme,
            "h": self.h,
            "times": list(self.times),
            "mean_h0": list(self.mean_h0),
            "fitted_slope": self.fitted_slope,
            "slope_se": self.slope_se,
            "expected_slope": self.expected_slope,
            "n_paths": self.n_paths,
            "n_failed": self.n_failed,
            "seed": self.seed,
            "block_size": self.block_size,
        }


def _fit_line(x: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    """Least-squares slope and intercept of y against x."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    xbar = x.mean()
    sxx = float(np.sum((x - xbar) ** 2))
    slope = float(np.sum((x - xbar) * (y - y.mean())) / sxx)
    return slope, float(y.mean() - slope * xbar)


def _slope_weights(x: np.ndarray) -> np.ndarray:
    """Weights w with slope = w . y for the least-squares line through (x, y)."""
    x = np.asarray(x, dtype=float)
    xc = x - x.mean()
    return xc / float(np.sum(xc * xc))


def _dyadic_steps(T: float, h: float, label: str) -> int:
    if not h > 0:
        raise DomainError(f"{label} must be positive, got {h}")
    k = math.log2(T / h)
    if abs(k - round(k)) > 1e-9 or round(k) < 0:
        raise DomainError(f"{label}={h} is not T/2^k for integer k (T={T})")
    return 1 << round(k)


def _resolve_y0(sde: AdditiveSde, y0) -> np.ndarray:
    if y0 is None:
        if sde.y0 is None:
            raise DomainError("no initial state: pass y0 or use a problem that carries one")
        return np.asarray(sde.y0, dtype=float)
    y0 = np.asarray(y0, dtype=float)
    if y0.shape != (sde.dim,):
        raise DomainError(f"y0 must have shape ({sde.dim},), got {y0.shape}")
    return y0


def _blocks(n_paths: int, block_size: int) -> list[range]:
    return [range(lo, min(lo + block_size, n_paths)) for lo in range(0, n_paths, block_size)]


def _sample_block(m: int, h_fine: float, n_fine: int, seed: int, paths: range):
    """Fine increments for a block of trajectories, one seed per trajectory."""
    B = len(paths)
    dw = np.empty((m, n_fine, B))
    dz = np.empty((m, n_fine, B))
    for k, i in enumerate(paths):
        p = sample_path(m, h_fine, n_fine, seed + i)
        dw[:, :, k] = p.dw
        dz[:, :, k] = p.dz
    return dw, dz


def _batch_final(sde, tab, y0, h, n_steps, dw, dz, cfg) -> np.ndarray:
    """Advance a (B, dim) batch n_steps times; increments are (m, n_steps, B)."""
    B = dw.shape[2]
    y = np.broadcast_to(y0, (B, sde.dim)).copy()
    for n in range(n_steps):
        y = _advance(sde, tab, n * h, y, h, dw[:, n], dz[:, n], cfg)
    return y


def _run_with_fallback(sde, tab, y0, h, n_steps, dw, dz, cfg):
    """Batch advance; on divergence, isolate failures path by path.

    Returns (finals (B, dim), failed boolean mask (B,)).  Failed paths have
    undefined finals and must be excluded by the caller.
    """
    B = dw.shape[2]
    try:
        return _batch_final(sde, tab, y0, h, n_steps, dw, dz, cfg), np.zeros(B, dtype=bool)
    except ConvergenceError:
        pass
    finals = np.zeros((B, sde.dim))
    failed = np.zeros(B, dtype=bool)
    for k in range(B):
        try:
            finals[k] = _batch_final(sde, tab, y0, h, n_steps, dw[:, :, k : k + 1], dz[:, :, k : k + 1], cfg)[0]
        except ConvergenceError:
            failed[k] = True
    return finals, failed


def _map_blocks(work, blocks, threads: int):
    """Apply ``work`` to each block, reducing in block order regardless of threads."""
    if threads <= 1 or len(blocks) <= 1:
        return [work(b) for b in blocks]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(work, blocks))


def ms_convergence(
    sde: AdditiveSde,
    schemes: list[Tableau],
    h_list,
    T: float,
    n_paths: int,
    seed: int,
    reference: str = "fine_ssrk",
    reference_h: float | None = None,
    y0=None,
    cfg: SolverConfig = DEFAULT_SOLVER,
    block_size: int = DEFAULT_BLOCK_SIZE,
    threads: int = 1,
) -> list[ConvergenceResult]:
    """Mean-square endpoint errors of ``schemes`` against a fine reference.

    Per trajectory, one Brownian path sampled at ``reference_h`` feeds the
    reference run and, through exact aggregation, every coarse run.  The
    per-path error is the Euclidean endpoint distance; rms_error(h) is the
    root of the mean squared error over paths.  Diverged trajectories are
    dropped and counted; more than 1% of them aborts the experiment.
    """
    if reference != "fine_ssrk":
        raise DomainError(f"unknown reference kind {reference!r}")
    if n_paths < 2:
        raise DomainError(f"n_paths must be >= 2, got {n_paths}")
    y0 = _resolve_y0(sde, y0)
    h_list = sorted({float(h) for h in h_list}, reverse=True)
    if not h_list:
        raise DomainError("h_list is empty")
    if reference_h is None:
        reference_h = T / DEFAULT_REFERENCE_DIVISIONS
    n_fine = _dyadic_steps(T, reference_h, "reference_h")
    steps_per_h = [_dyadic_steps(T, h, "h") for h in h_list]
    factors = []
    for h, n_steps in zip(h_list, steps_per_h):
        if n_fine % n_steps != 0:
            raise DomainError(f"reference step {reference_h} does not divide h={h}")
        factors.append(n_fine // n_steps)
    ref_tab = make_builtin("ssrk_alpha1", [0.5])

    n_schemes = len(schemes)
    n_levels = len(h_list)

    def work(paths: range):
        dw, dz = _sample_block(sde.m, reference_h, n_fine, seed, paths)
        B = len(paths)
        ref_final, ref_failed = _run_with_fallback(sde, ref_tab, y0, reference_h, n_fine, dw, dz, cfg)
        sq = np.full((n_schemes, n_levels, B), np.nan)
        for li, (h, n_steps, K) in enumerate(zip(h_list, steps_per_h, factors)):
            if K == 1:
                dwc, dzc = dw, dz
            else:
                dwc, dzc = aggregate_arrays(
                    dw.transpose(0, 2, 1), dz.transpose(0, 2, 1), reference_h, K
                )
                dwc = dwc.transpose(0, 2, 1)
                dzc = dzc.transpose(0, 2, 1)
            for si, tab in enumerate(schemes):
                finals, failed = _run_with_fallback(sde, tab, y0, h, n_steps, dwc, dzc, cfg)
                err2 = np.sum((finals - ref_final) ** 2, axis=1)
                err2[failed | ref_failed] = np.nan
                sq[si, li] = err2
        return sq

    parts = _map_blocks(work, _blocks(n_paths, block_size), threads)
    sq_all = np.concatenate(parts, axis=2)

    results = []
    log2h = np.log2(np.asarray(h_list))
    for si, tab in enumerate(schemes):
        failed_paths = int(np.isnan(sq_all[si]).any(axis=0).sum())
        if failed_paths > MAX_FAILED_FRACTION * n_paths:
            raise ExperimentError(
                f"scheme {tab.name!r}: {failed_paths}/{n_paths} trajectories failed "
                f"(> {MAX_FAILED_FRACTION:.0%})"
            )
        mean_sq = np.empty(n_levels)
        se_sq = np.empty(n_levels)
        for li in range(n_levels):
            vals = sq_all[si, li]
            vals = vals[~np.isnan(vals)]
            mean_sq[li] = vals.mean()
            se_sq[li] = vals.std(ddof=1) / math.sqrt(len(vals))
        rms = np.sqrt(mean_sq)
        se_rms = se_sq / (2.0 * rms)
        order, _ = _fit_line(log2h, np.log2(rms))
        w = _slope_weights(log2h)
        sd_log2 = se_sq / (2.0 * math.log(2.0) * mean_sq)
        order_se = float(np.sqrt(np.sum((w * sd_log2) ** 2)))
        results.append(
            ConvergenceResult(
                scheme=tab.name,
                step_sizes=tuple(h_list),
                rms_errors=tuple(rms.tolist()),
                fitted_order=order,
                n_paths=n_paths,
                seed=seed,
                reference_h=reference_h,
                rms_standard_errors=tuple(se_rms.tolist()),
                order_se=order_se,
                reference_scheme=f"{ref_tab.name} @ h={reference_h!r}",
                n_failed=failed_paths,
                block_size=block_size,
            )
        )
    return results


def energy_growth(
    sde: AdditiveSde,
    energy: EnergyLaw,
    scheme: Tableau,
    h: float,
    T: float,
    n_paths: int,
    seed: int,
    record_stride: int | None = None,
    y0=None,
    cfg: SolverConfig = DEFAULT_SOLVER,
    block_size: int = DEFAULT_BLOCK_SIZE,
    threads: int = 1,
) -> GrowthResult:
    """Mean of H0 along numerical solutions on [0, T] with its fitted slope.

    Noise is sampled directly on the step grid.  Per-path slopes (linear
    functionals of the recorded series) provide the Monte Carlo standard
    error of the fitted slope.
    """
    if not h > 0:
        raise DomainError(f"step size must be positive, got {h}")
    n_steps = round(T / h)
    if n_steps < 2 or not math.isclose(n_steps * h, T, rel_tol=1e-9):
        raise DomainError(f"T={T} is not an integral multiple (>= 2) of h={h}")
    if n_paths < 2:
        raise DomainError(f"n_paths must be >= 2, got {n_paths}")
    y0 = _resolve_y0(sde, y0)
    if record_stride is None:
        record_stride = max(1, n_steps // 1000)
    if record_stride < 1:
        raise DomainError(f"record_stride must be >= 1, got {record_stride}")
    rec = np.arange(0, n_steps + 1, record_stride)
    times = rec * h
    w = _slope_weights(times)
    h0 = energy.h0
    if h0 is None:
        raise DomainError("the energy law has no Hamiltonian attached")

    def work(paths: range):
        dw, dz = _sample_block(sde.m, h, n_steps, seed, paths)
        B = len(paths)
        sums = np.zeros(len(rec))
        slopes = np.full(B, np.nan)
        y = np.broadcast_to(y0, (B, sde.dim)).copy()
        try:
            acc = np.zeros(B)
            ri = 0
            if rec[0] == 0:
                vals = np.asarray(h0(y), dtype=float)
                sums[0] = vals.sum()
                acc += w[0] * vals
                ri = 1
            for n in range(n_steps):
                y = _advance(sde, scheme, n * h, y, h, dw[:, n], dz[:, n], cfg)
                if ri < len(rec) and n + 1 == rec[ri]:
                    vals = np.asarray(h0(y), dtype=float)
                    sums[ri] += vals.sum()
                    acc += w[ri] * vals
                    ri += 1
            slopes = acc
            counts = np.full(len(rec), B, dtype=float)
        except ConvergenceError:
            sums[:] = 0.0
            counts = np.zeros(len(rec))
            for k in range(B):
                try:
                    series = _energy_series(sde, scheme, y0, h, n_steps, dw[:, :, k : k + 1], dz[:, :, k : k + 1], cfg, rec, h0)
                    sums += series
                    counts += 1.0
                    slopes[k] = float(w @ series)
                except ConvergenceError:
                    pass
        return sums, counts, slopes

    parts = _map_blocks(work, _blocks(n_paths, block_size), threads)
    sums = sum(p[0] for p in parts)
    counts = sum(p[1] for p in parts)
    slopes = np.concatenate([p[2] for p in parts])
    ok = ~np.isnan(slopes)
    n_failed = int((~ok).sum())
    if n_failed > MAX_FAILED_FRACTION * n_paths:
        raise ExperimentError(
            f"scheme {scheme.name!r}: {n_failed}/{n_paths} trajectories failed "
            f"(> {MAX_FAILED_FRACTION:.0%})"
        )
    mean_h0 = sums / counts
    fitted = float(slopes[ok].mean())
    slope_se = float(slopes[ok].std(ddof=1) / math.sqrt(ok.sum()))
    return GrowthResult(
        scheme=scheme.name,
        times=tuple(times.tolist()),
        mean_h0=tuple(mean_h0.tolist()),
        fitted_slope=fitted,
        expected_slope=energy.expected_slope,
        n_paths=n_paths,
        slope_se=slope_se,
        seed=seed,
        h=h,
        n_failed=n_failed,
        block_size=block_size,
    )


def _energy_series(sde, scheme, y0, h, n_steps, dw, dz, cfg, rec, h0) -> np.ndarray:
    """Recorded H0 series of a single trajectory (fallback path)."""
    y = np.broadcast_to(y0, (1, sde.dim)).copy()
    out = np.empty(len(rec))
    ri = 0
    if rec[0] == 0:
        out[0] = float(h0(y)[0])
        ri = 1
    for n in range(n_steps):
        y = _advance(sde, scheme, n * h, y, h, dw[:, n], dz[:, n], cfg)
        if ri < len(rec) and n + 1 == rec[ri]:
            out[ri] = float(h0(y)[0])
            ri += 1
    return out


def drift_constant(kind: str, h: float, params=()) -> float:
    """Closed-form growth-rate perturbation added by a scheme at step h.

    ``c_ssrk05`` is the 2-stage symplectic alpha1=1/2 scheme's constant;
    ``c_alpha1`` the one-parameter family's (params = [alpha1]); and
    ``c_b1_at_alpha_half`` the two-parameter family's at alpha1 = 1/2
    (params = [b1], |b1| < sqrt(2/3)), which vanishes identically at
    b1 = (-2 +/- sqrt(6))/6.
    """
    if kind not in DRIFT_CONSTANT_KINDS:
        raise DomainError(f"unknown drift-constant kind {kind!r}; known: {DRIFT_CONSTANT_KINDS}")
    if not h > 0:
        raise DomainError(f"step size must be positive, got {h}")
    params = [float(p) for p in params]
    h2 = h * h
    if kind == "c_ssrk05":
        if params:
            raise DomainError("c_ssrk05 takes no parameters")
        return (-16.0 * (4.0 - _SQRT6) * h2 + (4.0 - _SQRT6) * h2 * h2) / (3.0 * (16.0 + h2) ** 2)
    if kind == "c_alpha1":
        if len(params) != 1:
            raise DomainError("c_alpha1 takes parameters [alpha1]")
        a1 = params[0]
        if not 0.0 < a1 < 1.0:
            raise DomainError(f"alpha1 must satisfy 0 < alpha1 < 1, got {a1}")
        s = math.sqrt(1.0 / a1 - 1.0)
        num = (_SQRT6 * a1 + 2.0 * s - _SQRT6) * h2 * ((a1 - 1.0) * a1 * h2 + 4.0)
        den = 6.0 * s * ((a1 - 1.0) ** 2 * h2 + 4.0) * (a1**2 * h2 + 4.0)
        return -num / den
    if len(params) != 1:
        raise DomainError("c_b1_at_alpha_half takes parameters [b1]")
    b1 = params[0]
    bound = math.sqrt(2.0 / 3.0)
    if not -bound < b1 < bound:
        raise DomainError(f"b1 must satisfy |b1| < sqrt(2/3) = {bound!r}, got {b1}")
    return (3.0 * math.sqrt(2.0 - 3.0 * b1 * b1) - 3.0 * b1 - 4.0) * (16.0 - h2) * h2 / (3.0 * (16.0 + h2))


def moment_slope_oracle(
    tab: Tableau,
    sigma: float,
    h: float,
    T: float | None = None,
    y0=(1.0, 0.0),
    record_stride: int = 1,
) -> float:
    """Growth rate of E[H0] for the linear oscillator from the exact
    second-moment recursion of the scheme's affine one-step map.

    With y' = R y + u dw + v dz/h, the second moment obeys
    S' = R S R' + N with N assembled from the increment moments
    E[dw^2] = h, E[dz^2] = h^3/3, E[dw dz] = h^2/2.  Energy-preserving
    maps (R orthogonal, as for every symplectic tableau on the oscillator)
    make E[H0] exactly affine; the default returns that per-unit-time rate,
    tr(N) / (2h).  With ``T`` given, the recursion is propagated over
    [0, T] and the recorded series fitted by least squares, which is the
    deterministic counterpart of ``energy_growth`` (meaningful also for
    energy-amplifying maps like the explicit Euler one).
    """
    sde, _ = harmonic_oscillator(sigma)
    R, gains = one_step_affine_map(sde, tab, h)
    u, v = gains[0]
    N = h * np.outer(u, u) + 0.5 * h * (np.outer(u, v) + np.outer(v, u)) + (h / 3.0) * np.outer(v, v)
    if T is None:
        return float(np.trace(N)) / (2.0 * h)
    n_steps = round(T / h)
    if n_steps < 2 or not math.isclose(n_steps * h, T, rel_tol=1e-9):
        raise DomainError(f"T={T} is not an integral multiple (>= 2) of h={h}")
    y0 = np.asarray(y0, dtype=float)
    S = np.outer(y0, y0)
    rec = np.arange(0, n_steps + 1, record_stride)
    series = np.empty(len(rec))
    ri = 0
    if rec[0] == 0:
        series[0] = 0.5 * float(np.trace(S))
        ri = 1
    for n in range(n_steps):
        S = R @ S @ R.T + N
        if ri < len(rec) and n + 1 == rec[ri]:
            series[ri] = 0.5 * float(np.trace(S))
            ri += 1
    slope, _ = _fit_line(rec * h, series)
    return slope
