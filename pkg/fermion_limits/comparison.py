"""This module contains the machinery that compares Hartree-Fock and Vlasov
dynamics: the Weyl-quantized Vlasov kernels A and B, distance series between
trajectories, exchange and commutator magnitudes, and ħ-sweep rate fits.
"""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
import logging
import math
from typing import Callable, Optional, Sequence, Union

import numpy as np

from fermion_limits._evolvers import Trajectory
from fermion_limits.density import (
    DensityMatrix,
    density_distance,
    mixed_gaussian_state,
    operator_norm,
    spatial_density,
    trace_distance,
)
from fermion_limits.errors import ContractError
from fermion_limits.hartree_fock import HFConfig, exchange_operator, hf_evolve
from fermion_limits.interaction import InteractionKernel, build_kernel
from fermion_limits.spectral import (
    PhaseGrid,
    SpatialGrid,
    convolve_periodic,
    spectral_gradient,
)
from fermion_limits.vlasov import VlasovConfig, vlasov_density, vlasov_evolve
from fermion_limits.wigner import (
    PhaseField,
    band_limit,
    gaussian_profile,
    pair_midpoint_values,
    phase_l2_norm,
    weyl_quantize,
    wigner_transform,
)

logger = logging.getLogger(__name__)

FieldHook = Callable[[np.ndarray], np.ndarray]


@dataclass
class RateStudy:
    """Least-squares log-log fit of distances against ħ."""

    hbar_values: list[float]
    distances: list[float]
    fitted_slope: float
    fit_residual: float
    intercept: float = 0.0
    excluded: list[float] = field(default_factory=list)


def _pair_points(grid: SpatialGrid) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Unwrapped pair geometry: for every pair (a, b), y = x_b, the minimal-image
    displacement x_a - x_b, and the midpoint y + displacement/2.
    """
    displacement = grid.pair_displacements()
    base = np.broadcast_to(
        grid.flat_coordinates().T[:, None, :], displacement.shape
    )
    return base, displacement, base + displacement / 2


def _midpoint_gradient(
    f: PhaseField, kernel: InteractionKernel, gradient: Optional[FieldHook]
) -> np.ndarray:
    grid = f.grid.spatial
    if gradient is not None:
        _, _, midpoint = _pair_points(grid)
        return np.asarray(gradient(midpoint), dtype=float)
    if kernel.is_free:
        return np.zeros((grid.d, grid.size, grid.size))
    potential = convolve_periodic(vlasov_density(f), kernel.multiplier, grid)
    return np.stack(
        [pair_midpoint_values(g, grid) for g in spectral_gradient(potential, grid)]
    )


def weyl_vlasov_kernel_A(
    f: PhaseField,
    kernel: InteractionKernel,
    gradient: Optional[FieldHook] = None,
) -> np.ndarray:
    """
    Computes A(x, y) = ∇V((x + y)/2)·(x - y) ρ_f(x, y) with V = K * ρ_f and
    ρ_f the Weyl quantization of f.

    Args:
        f: phase field on the Wigner phase grid
        kernel: interaction kernel
        gradient: optional callable mapping points (d, ...) to ∇V (d, ...),
            replacing the self-consistent potential

    Returns:
        complex array of shape (n^d, n^d)
    """
    rho = weyl_quantize(f)
    _, displacement, _ = _pair_points(rho.grid)
    slope = np.sum(_midpoint_gradient(f, kernel, gradient) * displacement, axis=0)
    return slope * rho.kernel


def remainder_B(
    f: PhaseField,
    kernel: InteractionKernel,
    potential: Optional[FieldHook] = None,
    gradient: Optional[FieldHook] = None,
) -> np.ndarray:
    """
    Computes the Weyl remainder

        B(x, y) = [V(x) - V(y) - ∇V((x + y)/2)·(x - y)] ρ_f(x, y)

    with V = K * ρ_f, or with an injected potential and its gradient.

    Raises:
        ContractError: if only one of `potential` and `gradient` is given
    """
    if (potential is None) != (gradient is None):
        raise ContractError("Potential and gradient hooks must be given together")
    rho = weyl_quantize(f)
    grid = rho.grid
    base, displacement, _ = _pair_points(grid)
    if potential is not None:
        difference = np.asarray(potential(base + displacement)) - np.asarray(
            potential(base)
        )
    elif kernel.is_free:
        difference = np.zeros((grid.size, grid.size))
    else:
        values = convolve_periodic(vlasov_density(f), kernel.multiplier, grid).ravel()
        difference = values[:, None] - values[None, :]
    slope = np.sum(_midpoint_gradient(f, kernel, gradient) * displacement, axis=0)
    return (difference - slope) * rho.kernel


def remainder_norm(f: PhaseField, kernel: InteractionKernel) -> float:
    """Computes ‖B(ρ_f)‖_{L¹}."""
    return operator_norm(remainder_B(f, kernel), f.grid.spatial, f.hbar, 1)


def _check_aligned(first: Trajectory, second: Trajectory) -> None:
    if len(first) != len(second):
        raise ContractError(
            f"Trajectories have {len(first)} and {len(second)} snapshots"
        )
    for s, t in zip(first.times, second.times):
        if abs(s - t) > 1e-12:
            logger.error(f"(COMPARE) snapshot times {s} and {t} differ")
            raise ContractError(f"Snapshot times {s!r} and {t!r} are not aligned")


def trace_distance_series(
    hf_traj: Trajectory[DensityMatrix], vlasov_traj: Trajectory[PhaseField]
) -> np.ndarray:
    """
    Computes ‖ρ(t) - Q(f(t))‖_{L¹} at every snapshot.

    Raises:
        ContractError: if snapshot times differ by more than 1e-12 or the
            grids do not match
    """
    _check_aligned(hf_traj, vlasov_traj)
    return np.array(
        [
            trace_distance(rho, weyl_quantize(f))
            for rho, f in zip(hf_traj.states, vlasov_traj.states)
        ]
    )


def density_distance_series(
    hf_traj: Trajectory[DensityMatrix], vlasov_traj: Trajectory[PhaseField]
) -> np.ndarray:
    """Computes ‖ρ(t, x) - ρ_f(t, x)‖_{L¹(dx)} at every snapshot."""
    _check_aligned(hf_traj, vlasov_traj)
    out = []
    for rho, f in zip(hf_traj.states, vlasov_traj.states):
        difference = spatial_density(rho) - vlasov_density(f)
        out.append(float(np.sum(np.abs(difference)) * rho.grid.cell_volume))
    return np.array(out)


def phase_distance_series(
    hf_traj: Trajectory[DensityMatrix], vlasov_traj: Trajectory[PhaseField]
) -> np.ndarray:
    """Computes the phase-space L² distance between W(ρ(t)) and f(t)."""
    _check_aligned(hf_traj, vlasov_traj)
    out = []
    for rho, f in zip(hf_traj.states, vlasov_traj.states):
        w = wigner_transform(rho, f.grid, check_aliasing=False)
        out.append(phase_l2_norm(f.with_values(w.values - f.values)))
    return np.array(out)


def exchange_commutator(kernel: InteractionKernel, rho: DensityMatrix) -> np.ndarray:
    """Kernel of the operator commutator [X_ρ, ρ]."""
    exchange = exchange_operator(kernel, rho)
    return rho.grid.cell_volume * (exchange @ rho.kernel - rho.kernel @ exchange)


def exchange_magnitude_series(
    hf_traj: Trajectory[DensityMatrix], kernel: InteractionKernel
) -> np.ndarray:
    """Computes ‖[X_ρ(t), ρ(t)]‖_{L¹} at every snapshot."""
    return np.array(
        [
            operator_norm(exchange_commutator(kernel, rho), rho.grid, rho.hbar, 1)
            for rho in hf_traj.states
        ]
    )


def commutator_kernel_norm(
    kernel: InteractionKernel, x0: int, rho: DensityMatrix
) -> float:
    """
    Computes ‖[K(x₀ - ·), ρ]‖_{L¹}.

    Args:
        kernel: interaction kernel
        x0: flat index of the grid node x₀
        rho: state

    Returns:
        rescaled trace norm of the commutator
    """
    values = kernel.pair_matrix()[x0]
    commutator = (values[:, None] - values[None, :]) * rho.kernel
    return operator_norm(commutator, rho.grid, rho.hbar, 1)


def convolution_commutator_norm(
    rho: DensityMatrix, f: PhaseField, kernel: InteractionKernel
) -> float:
    """Computes ‖[K * (ρ - ρ_f), Q(f)]‖_{L¹}."""
    grid = rho.grid
    quantized = weyl_quantize(f)
    difference = spatial_density(rho) - vlasov_density(f)
    potential = convolve_periodic(difference, kernel.multiplier, grid).ravel()
    commutator = (potential[:, None] - potential[None, :]) * quantized.kernel
    return operator_norm(commutator, grid, rho.hbar, 1)


def duhamel_check(
    hf_traj: Trajectory[DensityMatrix],
    vlasov_traj: Trajectory[PhaseField],
    kernel: InteractionKernel,
    exchange_on: bool = True,
) -> dict:
    """
    Measures the first-order Duhamel bound over the first snapshot interval

        d(t₁) ≤ d(0) + t₁(‖[K*(ρ - ρ_f), ρ_f]‖ + ‖B‖ + ‖[X, ρ]‖)/ħ.

    Returns:
        dict with the measured distance, the bound and whether it holds
    """
    _check_aligned(hf_traj, vlasov_traj)
    if len(hf_traj) < 2:
        raise ContractError("Duhamel check needs at least two snapshots")
    rho, f = hf_traj.states[0], vlasov_traj.states[0]
    t1 = hf_traj.times[1]
    ingredients = convolution_commutator_norm(rho, f, kernel) + remainder_norm(f, kernel)
    if exchange_on:
        ingredients += operator_norm(
            exchange_commutator(kernel, rho), rho.grid, rho.hbar, 1
        )
    start = trace_distance(rho, weyl_quantize(f))
    measured = trace_distance(hf_traj.states[1], weyl_quantize(vlasov_traj.states[1]))
    bound = start + t1 * ingredients / rho.hbar
    return {"t": t1, "distance": measured, "bound": bound, "holds": measured <= bound}


def hartree_vs_hf_distance(
    hartree_traj: Trajectory[DensityMatrix], hf_traj: Trajectory[DensityMatrix]
) -> float:
    """Trace distance between the final Hartree and Hartree-Fock states."""
    _check_aligned(hartree_traj, hf_traj)
    return trace_distance(hartree_traj.final, hf_traj.final)


def fit_rate(
    hbar_values: Sequence[float], distances: Sequence[Union[float, Sequence[float]]]
) -> RateStudy:
    """
    Fits log(distance) = slope·log(ħ) + c by least squares.

    Args:
        hbar_values: strictly decreasing ħ values spanning a factor ≥ 4
        distances: one distance per ħ, or one time series per ħ of which
            the final value is used

    Returns:
        `RateStudy` with slope and root-mean-square residual

    Raises:
        ContractError: if fewer than 4 positive distances remain, or the ħ
            values are not strictly decreasing over a factor ≥ 4
    """
    hbar = np.asarray(hbar_values, dtype=float)
    final = np.array([np.ravel(d)[-1] for d in distances], dtype=float)
    if hbar.shape != final.shape:
        raise ContractError(
            f"{hbar.size} ħ values but {final.size} distances were given"
        )
    if np.any(np.diff(hbar) >= 0):
        raise ContractError(f"ħ values must be strictly decreasing, got {hbar.tolist()}")
    valid = final > 0
    excluded = hbar[~valid].tolist()
    if excluded:
        logger.warning(f"(RATE-FIT) nonpositive distances at hbar={excluded} excluded")
    if int(np.sum(valid)) < 4:
        logger.error(f"(RATE-FIT) only {int(np.sum(valid))} usable points")
        raise ContractError(
            f"Rate fit needs at least 4 positive distances, got {int(np.sum(valid))}"
        )
    hbar, final = hbar[valid], final[valid]
    if hbar[0] / hbar[-1] < 4:
        raise ContractError(
            f"ħ values must span a factor of at least 4, got {hbar[0] / hbar[-1]:.3g}"
        )
    x, y = np.log(hbar), np.log(final)
    slope, intercept = np.polyfit(x, y, 1)
    residual = math.sqrt(float(np.mean((y - (slope * x + intercept)) ** 2)))
    logger.debug(f"(RATE-FIT) slope {slope:.6f} residual {residual:.3e}")
    return RateStudy(
        hbar_values=hbar.tolist(),
        distances=final.tolist(),
        fitted_slope=float(slope),
        fit_residual=residual,
        intercept=float(intercept),
        excluded=excluded,
    )


@dataclass
class SweepSettings:
    """
    Physical and numerical settings shared by all members of an ħ sweep.

    Each member uses n = cells_per_hbar/ħ grid points, so the velocity
    half-width πħn/L of the Wigner phase grid is the same for all ħ.
    """

    length: float = 4 * math.pi
    cells_per_hbar: float = 16.0
    sign: str = "repulsive"
    a: float = 0.3
    R: float = 0.05
    dt: float = 0.005
    t_end: float = 0.5
    snapshots: int = 10
    width_x: float = 1.5
    width_v: float = 0.7
    center: Optional[float] = None
    velocity: float = 0.0
    kinetic_prefactor: float = 0.5
    commutator_points: int = 8
    verify_kernel: bool = False

    def grid(self, hbar: float) -> SpatialGrid:
        return SpatialGrid(1, int(round(self.cells_per_hbar / hbar)), self.length)


def rate_member(hbar: float, settings: SweepSettings) -> dict:
    """
    Runs one member of an ħ sweep: Hartree-Fock, Hartree and Vlasov
    evolutions from the same Gaussian data, and every comparison series.

    Returns:
        dict of plain lists and floats keyed by measurement name
    """
    logger.debug(f"(RATE-SWEEP) member hbar={hbar} starting")
    grid = settings.grid(hbar)
    kernel = build_kernel(
        grid, settings.sign, settings.a, settings.R, verify=settings.verify_kernel
    )
    center = None if settings.center is None else [settings.center]
    rho0 = mixed_gaussian_state(
        grid, hbar, center, settings.width_x, settings.width_v, [settings.velocity]
    )
    phase = PhaseGrid.for_wigner(grid, hbar)
    f0 = band_limit(
        gaussian_profile(
            phase, hbar, center, settings.width_x, settings.width_v, [settings.velocity]
        )
    )
    hf_config = HFConfig(
        kernel,
        settings.dt,
        settings.t_end,
        exchange_on=True,
        kinetic_prefactor=settings.kinetic_prefactor,
        snapshots=settings.snapshots,
    )
    hf = hf_evolve(rho0, hf_config)
    hartree_config = HFConfig(
        kernel,
        settings.dt,
        settings.t_end,
        exchange_on=False,
        kinetic_prefactor=settings.kinetic_prefactor,
        snapshots=settings.snapshots,
    )
    hartree = hf_evolve(rho0, hartree_config)
    vlasov = vlasov_evolve(
        f0, VlasovConfig(kernel, settings.dt, settings.t_end, settings.snapshots)
    )
    step = max(1, grid.size // settings.commutator_points)
    commutator = max(
        commutator_kernel_norm(kernel, x0, rho0) for x0 in range(0, grid.size, step)
    )
    member = {
        "hbar": hbar,
        "t": hf.times,
        "distance_L1": trace_distance_series(hf, vlasov).tolist(),
        "distance_L2_phase": phase_distance_series(hf, vlasov).tolist(),
        "density_L1": density_distance_series(hf, vlasov).tolist(),
        "B_L1": [remainder_norm(f, kernel) for f in vlasov.states],
        "exchange_L1": exchange_magnitude_series(hf, kernel).tolist(),
        "commutator_L1": commutator,
        "hartree_vs_hf": hartree_vs_hf_distance(hartree, hf),
        "duhamel": duhamel_check(hf, vlasov, kernel) if len(hf) > 1 else None,
    }
    logger.debug(
        f"(RATE-SWEEP) member hbar={hbar} done, final distance "
        f"{member['distance_L1'][-1]:.6e}"
    )
    return member


def run_rate_study(
    hbar_values: Sequence[float], settings: SweepSettings, jobs: int = 1
) -> dict:
    """
    Runs an ħ sweep and fits the scaling of every measured quantity.

    Members run in a process pool of `jobs` workers; results are keyed by ħ
    so the outcome does not depend on scheduling.

    Returns:
        dict with the per-member results (descending ħ) and `RateStudy`
        fits for the operator distance, the remainder B and the commutator
    """
    hbar_values = [float(h) for h in hbar_values]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(
                pool.map(rate_member, hbar_values, [settings] * len(hbar_values))
            )
    else:
        results = [rate_member(h, settings) for h in hbar_values]
    members = sorted(results, key=lambda m: -m["hbar"])
    ordered = [m["hbar"] for m in members]
    return {
        "members": members,
        "distance": fit_rate(ordered, [m["distance_L1"] for m in members]),
        "remainder": fit_rate(ordered, [m["B_L1"] for m in members]),
        "commutator": fit_rate(ordered, [m["commutator_L1"] for m in members]),
        "exchange_max": [max(m["exchange_L1"]) for m in members],
        "hartree_vs_hf": [m["hartree_vs_hf"] for m in members],
    }
