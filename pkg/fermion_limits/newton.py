"""This module contains classical mean-field particle dynamics

    dx_i/dt = v_i,   dv_i/dt = -∇(K * μ)(x_i),   μ = Σ_j w_j δ_{x_j},

integrated with velocity Verlet. Forces are computed particle-mesh: the
ensemble is deposited on the grid with cloud-in-cell weights, the force
field is the same spectral convolution the Vlasov solver uses, and it is
gathered back with the same stencil.
"""

from dataclasses import dataclass
import itertools
import logging
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage

from fermion_limits._evolvers import Observer, Trajectory, _BaseEvolver
from fermion_limits.errors import ContractError, DomainError
from fermion_limits.interaction import InteractionKernel, force_field, mean_field_potential
from fermion_limits.spectral import SpatialGrid
from fermion_limits.wigner import PhaseField

logger = logging.getLogger(__name__)


@dataclass(eq=False)
class ParticleEnsemble:
    """Weighted point particles on the periodic domain of a kernel's grid."""

    positions: np.ndarray
    velocities: np.ndarray
    kernel: InteractionKernel
    weights: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        grid = self.kernel.grid
        self.positions = np.mod(
            np.asarray(self.positions, dtype=float).reshape(-1, grid.d), grid.length
        )
        self.velocities = np.asarray(self.velocities, dtype=float).reshape(-1, grid.d)
        if self.positions.shape != self.velocities.shape:
            raise ContractError(
                f"Positions {self.positions.shape} and velocities "
                f"{self.velocities.shape} differ"
            )
        count = self.positions.shape[0]
        if self.weights is None:
            self.weights = np.full(count, 1.0 / count)
        self.weights = np.asarray(self.weights, dtype=float)
        if self.weights.shape != (count,):
            raise ContractError(f"Expected {count} weights, got {self.weights.shape}")

    @property
    def grid(self) -> SpatialGrid:
        return self.kernel.grid

    def __len__(self) -> int:
        return self.positions.shape[0]

    def moved(self, positions: np.ndarray, velocities: np.ndarray) -> "ParticleEnsemble":
        return ParticleEnsemble(positions, velocities, self.kernel, self.weights)


def _cic_stencil(cells: np.ndarray, shape: Sequence[int]):
    """Yields (node indices, weights) of the cloud-in-cell stencil per corner."""
    base = np.floor(cells).astype(int)
    frac = cells - base
    for corner in itertools.product((0, 1), repeat=cells.shape[1]):
        offset = np.array(corner)
        weight = np.prod(np.where(offset, frac, 1 - frac), axis=1)
        index = tuple((base[:, i] + offset[i]) % shape[i] for i in range(cells.shape[1]))
        yield index, weight


def _deposit(cells: np.ndarray, weights: np.ndarray, shape: Sequence[int]) -> np.ndarray:
    out = np.zeros(shape)
    for index, weight in _cic_stencil(cells, shape):
        np.add.at(out, index, weights * weight)
    return out


def deposit_density(ens: ParticleEnsemble) -> np.ndarray:
    """Cloud-in-cell density on the grid, integrating to Σ w."""
    grid = ens.grid
    mass = _deposit(ens.positions / grid.spacing, ens.weights, grid.shape)
    return mass / grid.cell_volume


def gather_force(ens: ParticleEnsemble, force: np.ndarray) -> np.ndarray:
    """Interpolates a (d, n, ..., n) field to the particles, shape (N_p, d)."""
    grid = ens.grid
    out = np.zeros(ens.positions.shape)
    for index, weight in _cic_stencil(ens.positions / grid.spacing, grid.shape):
        for i in range(grid.d):
            out[:, i] += weight * force[i][index]
    return out


def particle_force(ens: ParticleEnsemble) -> np.ndarray:
    if ens.kernel.is_free:
        return np.zeros(ens.positions.shape)
    return gather_force(ens, force_field(ens.kernel, deposit_density(ens)))


def newton_step(ens: ParticleEnsemble, dt: float) -> ParticleEnsemble:
    """
    Advances the ensemble by one velocity Verlet step.

    Raises:
        DomainError: if dt is zero
    """
    if dt == 0:
        raise DomainError("Time step must be nonzero")
    half = ens.velocities + 0.5 * dt * particle_force(ens)
    moved = ens.moved(ens.positions + dt * half, half)
    return moved.moved(moved.positions, half + 0.5 * dt * particle_force(moved))


def newton_energy(ens: ParticleEnsemble) -> float:
    """Computes ½Σ w|v|² + ½∫(K * ρ)ρ dx with the deposited density."""
    kinetic = 0.5 * float(np.sum(ens.weights * np.sum(ens.velocities**2, axis=1)))
    if ens.kernel.is_free:
        return kinetic
    density = deposit_density(ens)
    potential = mean_field_potential(ens.kernel, density)
    return kinetic + 0.5 * float(np.sum(potential * density)) * ens.grid.cell_volume


def total_momentum(ens: ParticleEnsemble) -> np.ndarray:
    return np.sum(ens.weights[:, None] * ens.velocities, axis=0)


class NewtonEvolver(_BaseEvolver[ParticleEnsemble]):
    """Velocity Verlet evolution of a particle ensemble."""

    label = "NEWTON"

    def __init__(self, dt: float, t_end: float, snapshots: int = 10):
        super().__init__(dt, t_end, snapshots)

    def step(self, state: ParticleEnsemble, dt: float) -> ParticleEnsemble:
        return newton_step(state, dt)

    def check(self, state: ParticleEnsemble, t: float) -> None:
        if not np.all(np.isfinite(state.velocities)):
            raise DomainError(f"Particle velocities diverged at t={t:.6g}")


def newton_evolve(
    ens: ParticleEnsemble,
    dt: float,
    t_end: float,
    snapshots: int = 10,
    observers: Sequence[Observer] = (),
) -> Trajectory[ParticleEnsemble]:
    return NewtonEvolver(dt, t_end, snapshots).evolve(ens, observers)


def sample_particles(
    f: PhaseField, n: int, rng: np.random.Generator, kernel: InteractionKernel
) -> ParticleEnsemble:
    """
    Draws n particles i.i.d. from the phase profile f.

    Nodes are drawn with probability proportional to max(f, 0) and each
    particle is jittered uniformly within its phase cell.
    """
    phase = f.grid
    d = phase.d
    mass = np.clip(f.values, 0.0, None).ravel()
    nodes = rng.choice(mass.size, size=n, p=mass / mass.sum())
    x, v = phase.phase_coordinates()
    positions = x.reshape(d, -1)[:, nodes].T
    velocities = v.reshape(d, -1)[:, nodes].T
    positions = positions + phase.spatial.spacing * rng.uniform(-0.5, 0.5, (n, d))
    velocities = velocities + phase.velocity_spacing * rng.uniform(-0.5, 0.5, (n, d))
    return ParticleEnsemble(positions, velocities, kernel)


def quadrature_particles(
    f: PhaseField, kernel: InteractionKernel, threshold: float = 1e-14
) -> ParticleEnsemble:
    """
    One particle per phase node carrying weight f·cell volume.

    Nodes at or below `threshold`·max f are dropped, negative ones included,
    so the ensemble reproduces f exactly only where f is nonnegative.
    """
    phase = f.grid
    d = phase.d
    values = f.values.ravel()
    keep = values > threshold * float(np.max(values))
    x, v = phase.phase_coordinates()
    weights = values[keep] / float(np.sum(values[keep]))
    return ParticleEnsemble(
        x.reshape(d, -1)[:, keep].T, v.reshape(d, -1)[:, keep].T, kernel, weights
    )


def empirical_density(ens: ParticleEnsemble, f: PhaseField) -> np.ndarray:
    """Cloud-in-cell phase-space density of the ensemble on f's phase grid."""
    phase = f.grid
    cells = np.hstack(
        [
            ens.positions / phase.spatial.spacing,
            (ens.velocities + phase.v_max) / phase.velocity_spacing,
        ]
    )
    return _deposit(cells, ens.weights, phase.shape) / phase.cell_volume


def empirical_vs_vlasov(
    ens_traj: Trajectory[ParticleEnsemble],
    f_traj: Trajectory[PhaseField],
    bandwidth: float = 1.0,
) -> np.ndarray:
    """
    L¹ distance between the Gaussian-smoothed empirical phase density and
    the equally smoothed Vlasov solution at every snapshot.

    Args:
        ens_traj: particle trajectory
        f_traj: Vlasov trajectory with the same snapshot times
        bandwidth: smoothing standard deviation in grid cells

    Raises:
        ContractError: if snapshot times differ by more than 1e-12
    """
    if len(ens_traj) != len(f_traj) or any(
        abs(s - t) > 1e-12 for s, t in zip(ens_traj.times, f_traj.times)
    ):
        raise ContractError("Particle and Vlasov snapshots are not aligned")
    out = []
    for ens, f in zip(ens_traj.states, f_traj.states):
        empirical = ndimage.gaussian_filter(
            empirical_density(ens, f), bandwidth, mode="wrap"
        )
        smooth = ndimage.gaussian_filter(f.values, bandwidth, mode="wrap")
        out.append(float(np.sum(np.abs(empirical - smooth)) * f.grid.cell_volume))
    return np.array(out)
