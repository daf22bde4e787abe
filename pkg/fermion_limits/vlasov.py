"""This module contains a semi-Lagrangian solver for the Vlasov equation

    ∂_t f + v·∇_x f - ∇(K * ρ_f)·∇_v f = 0,   ρ_f = ∫ f dv

on a periodic `PhaseGrid`, with Strang splitting between position and
velocity advection and periodic cubic-spline interpolation.
"""

from dataclasses import dataclass
import logging
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage

from fermion_limits._evolvers import Observer, Trajectory, _BaseEvolver
from fermion_limits.errors import DomainError, ResolutionError
from fermion_limits.interaction import InteractionKernel, force_field, mean_field_potential
from fermion_limits.wigner import PhaseField

logger = logging.getLogger(__name__)


@dataclass
class VlasovConfig:
    """Settings of a Vlasov evolution."""

    kernel: InteractionKernel
    dt: float
    t_end: float = 0.0
    snapshots: int = 10
    clip_negative: bool = False

    def __post_init__(self) -> None:
        if self.dt <= 0:
            raise DomainError(f"Time step must be positive, got {self.dt}")
        if self.t_end < 0:
            raise DomainError(f"Final time must be nonnegative, got {self.t_end}")


def vlasov_density(f: PhaseField) -> np.ndarray:
    """Computes the velocity marginal ρ_f(x) = ∫ f(x, v) dv."""
    d = f.grid.d
    return np.sum(f.values, axis=f.velocity_axes) * f.grid.velocity_spacing**d


def vlasov_mass(f: PhaseField) -> float:
    return f.mass()


def boundary_mass(f: PhaseField, cells: int = 2) -> float:
    return f.boundary_mass(cells)


def l2_norm(f: PhaseField) -> float:
    return f.l2_norm()


def vlasov_energy(f: PhaseField, kernel: InteractionKernel) -> float:
    """Computes ½∫|v|² f dx dv + ½∫ (K * ρ_f) ρ_f dx."""
    _, v = f.grid.phase_coordinates()
    kinetic = 0.5 * float(np.sum(np.sum(v**2, axis=0) * f.values)) * f.grid.cell_volume
    if kernel.is_free:
        return kinetic
    density = vlasov_density(f)
    potential = mean_field_potential(kernel, density)
    return kinetic + 0.5 * float(np.sum(potential * density)) * kernel.grid.cell_volume


def _advect(values: np.ndarray, axis: int, displacement: np.ndarray) -> np.ndarray:
    """
    Evaluates the periodic cubic spline of `values` at index - displacement
    along `axis`; `displacement` is in cells and broadcasts to the array.
    """
    coordinates = np.indices(values.shape, dtype=float)
    coordinates[axis] -= np.broadcast_to(displacement, values.shape)
    return ndimage.map_coordinates(values, coordinates, order=3, mode="grid-wrap")


def _check_cfl(f: PhaseField, dt: float) -> None:
    spatial = f.grid.spatial
    if abs(dt) * f.grid.v_max > spatial.length / 2:
        logger.error(f"(hbar={f.hbar}) dt={dt} moves beyond half the domain")
        raise DomainError(
            f"Time step {dt} violates dt·v_max ≤ L/2 "
            f"(v_max={f.grid.v_max}, L={spatial.length})"
        )


def _position_half_step(f: PhaseField, tau: float) -> np.ndarray:
    phase = f.grid
    d = phase.d
    values = f.values
    velocity_shape = (1,) * d + (phase.n_v,) * d
    for i in range(d):
        v = phase.velocity_coordinates()[i].reshape(velocity_shape)
        values = _advect(values, i, v * tau / phase.spatial.spacing)
    return values


def vlasov_step(
    f: PhaseField, config: VlasovConfig, dt: Optional[float] = None
) -> PhaseField:
    """
    Advances a field by one Strang step: half a position advection, a full
    velocity advection in the self-consistent force, another half position
    advection.

    Args:
        f: field
        config: evolution settings
        dt: step overriding `config.dt`

    Returns:
        `PhaseField` after one step

    Raises:
        DomainError: if dt·v_max exceeds half the period
    """
    dt = config.dt if dt is None else dt
    _check_cfl(f, dt)
    phase = f.grid
    d = phase.d
    values = _position_half_step(f, dt / 2)
    if not config.kernel.is_free:
        half = f.with_values(values)
        force = force_field(config.kernel, vlasov_density(half))
        spatial_shape = phase.spatial.shape + (1,) * d
        for i in range(d):
            shift = force[i].reshape(spatial_shape) * dt / phase.velocity_spacing
            values = _advect(values, d + i, shift)
    values = _position_half_step(f.with_values(values), dt / 2)
    lowest = float(np.min(values))
    if lowest < -1e-6:
        logger.warning(f"(hbar={f.hbar}) interpolation undershoot {lowest:.3e}")
        if config.clip_negative:
            values = np.clip(values, 0.0, None)
    return f.with_values(values)


class VlasovEvolver(_BaseEvolver[PhaseField]):
    """Semi-Lagrangian Vlasov evolution with a boundary-mass monitor."""

    label = "VLASOV"

    def __init__(self, config: VlasovConfig):
        super().__init__(config.dt, config.t_end, config.snapshots)
        self.config = config

    def step(self, state: PhaseField, dt: float) -> PhaseField:
        return vlasov_step(state, self.config, dt)

    def check(self, state: PhaseField, t: float) -> None:
        edge = state.boundary_mass()
        if edge > 1e-6:
            logger.error(f"(VLASOV) boundary mass {edge:.3e} at t={t}")
            raise ResolutionError(
                f"Velocity boundary mass {edge:.3e} exceeds 1e-6 at t={t:.6g}"
            )


def vlasov_evolve(
    f: PhaseField, config: VlasovConfig, observers: Sequence[Observer] = ()
) -> Trajectory[PhaseField]:
    """
    Evolves a field to `config.t_end` and records snapshots.

    Raises:
        ResolutionError: if mass reaches the velocity boundary at a snapshot
        ObserverError: if an observer fails
    """
    return VlasovEvolver(config).evolve(f, observers)
