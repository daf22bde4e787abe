"""This module contains the time-dependent Hartree-Fock flow

    iħ ∂_t ρ = [-(ħ²/2)Δ + K*ρ(x) - X_ρ, ρ]

for `DensityMatrix` states, its Hartree truncation, and a mode-basis
variant used by the lattice and doubled-Fock models.
"""

from dataclasses import dataclass
import logging
from typing import Optional, Sequence

import numpy as np
from scipy import linalg

from fermion_limits._evolvers import Observer, Trajectory, _BaseEvolver
from fermion_limits.density import DensityMatrix, spatial_density
from fermion_limits.errors import DomainError, NumericalError
from fermion_limits.interaction import InteractionKernel, mean_field_potential
from fermion_limits.spectral import apply_multiplier

logger = logging.getLogger(__name__)


@dataclass
class HFConfig:
    """
    Settings of a Hartree-Fock evolution.

    `kinetic_prefactor` multiplies -ħ²Δ and is ½ unless the unscaled
    kinetic convention is requested. `accuracy_safety` scales the advisory
    step-size guard dt ≤ ½ħh²·safety.
    """

    kernel: InteractionKernel
    dt: float
    t_end: float = 0.0
    exchange_on: bool = True
    kinetic_prefactor: float = 0.5
    snapshots: int = 10
    accuracy_safety: float = 1.0

    def __post_init__(self) -> None:
        if self.dt <= 0:
            raise DomainError(f"Time step must be positive, got {self.dt}")
        if self.t_end < 0:
            raise DomainError(f"Final time must be nonnegative, got {self.t_end}")
        if self.kinetic_prefactor <= 0:
            raise DomainError(
                f"Kinetic prefactor must be positive, got {self.kinetic_prefactor}"
            )


def _axes(rho: DensityMatrix) -> tuple[tuple[int, ...], tuple[int, ...]]:
    d = rho.grid.d
    return tuple(range(d)), tuple(range(d, 2 * d))


def _kinetic_symbol(rho: DensityMatrix, kinetic_prefactor: float) -> np.ndarray:
    return kinetic_prefactor * rho.hbar**2 * rho.grid.squared_wavenumbers()


def exchange_operator(kernel: InteractionKernel, rho: DensityMatrix) -> np.ndarray:
    """
    Computes the exchange kernel X(x, y) = ħ^d K(x - y) ρ(x, y).

    Args:
        kernel: interaction kernel on the state's grid
        rho: state

    Returns:
        complex array of shape (n^d, n^d)
    """
    return rho.scale * kernel.pair_matrix() * rho.kernel


def _potential(kernel: InteractionKernel, rho: DensityMatrix) -> np.ndarray:
    if kernel.is_free:
        return np.zeros(rho.grid.size)
    return mean_field_potential(kernel, spatial_density(rho)).ravel()


def _kinetic_flow(rho: DensityMatrix, tau: float, kinetic_prefactor: float) -> np.ndarray:
    grid = rho.grid
    phase = np.exp(-1j * tau * _kinetic_symbol(rho, kinetic_prefactor) / rho.hbar)
    x_axes, y_axes = _axes(rho)
    shaped = rho.kernel.reshape(grid.shape * 2)
    shaped = apply_multiplier(shaped, phase, x_axes)
    shaped = apply_multiplier(shaped, phase.conj(), y_axes)
    return shaped.reshape(rho.kernel.shape)


def _potential_flow(
    rho: DensityMatrix,
    source: DensityMatrix,
    tau: float,
    kernel: InteractionKernel,
    exchange_on: bool,
) -> np.ndarray:
    """Conjugates rho by exp(-iτ(V - X)/ħ) with V and X frozen at `source`."""
    potential = _potential(kernel, source)
    if not exchange_on or kernel.is_free:
        phase = np.exp(-1j * tau * potential / rho.hbar)
        return phase[:, None] * rho.kernel * phase.conj()[None, :]
    hamiltonian = np.diag(potential) - exchange_operator(kernel, source) * (
        rho.grid.cell_volume
    )
    hamiltonian = 0.5 * (hamiltonian + hamiltonian.conj().T)
    try:
        energies, vectors = linalg.eigh(hamiltonian)
    except linalg.LinAlgError as exc:
        logger.error(f"(hbar={rho.hbar}) eigensolver failed in potential step: {exc}")
        raise NumericalError(f"Eigensolver failed in potential step: {exc}") from exc
    propagator = (vectors * np.exp(-1j * tau * energies / rho.hbar)) @ vectors.conj().T
    return propagator @ rho.kernel @ propagator.conj().T


def hf_step(
    rho: DensityMatrix, config: HFConfig, dt: Optional[float] = None
) -> DensityMatrix:
    """
    Advances a state by one Strang step.

    Half a kinetic conjugation, a full potential conjugation with the
    Hamiltonian frozen at a predicted midpoint state, and another half
    kinetic conjugation. Every stage is unitary, so the spectrum is kept.

    Args:
        rho: state
        config: evolution settings
        dt: step overriding `config.dt`; may be negative

    Returns:
        `DensityMatrix` after one step
    """
    dt = config.dt if dt is None else dt
    prefactor = config.kinetic_prefactor
    first = rho.with_kernel(_kinetic_flow(rho, dt / 2, prefactor))
    midpoint = first.with_kernel(
        _potential_flow(first, first, dt / 2, config.kernel, config.exchange_on)
    )
    second = first.with_kernel(
        _potential_flow(first, midpoint, dt, config.kernel, config.exchange_on)
    )
    kernel = _kinetic_flow(second, dt / 2, prefactor)
    return rho.with_kernel(0.5 * (kernel + kernel.conj().T))


def hf_rhs(rho: DensityMatrix, config: HFConfig) -> np.ndarray:
    """
    Computes the right side [H_ρ, ρ]/(iħ) as an operator kernel.

    Args:
        rho: state (need not be valid)
        config: evolution settings

    Returns:
        complex array of shape (n^d, n^d)
    """
    grid = rho.grid
    x_axes, y_axes = _axes(rho)
    symbol = _kinetic_symbol(rho, config.kinetic_prefactor)
    shaped = rho.kernel.reshape(grid.shape * 2)
    kinetic = apply_multiplier(shaped, symbol, x_axes) - apply_multiplier(
        shaped, symbol, y_axes
    )
    commutator = kinetic.reshape(rho.kernel.shape)
    if not config.kernel.is_free:
        potential = _potential(config.kernel, rho)
        commutator = commutator + (potential[:, None] - potential[None, :]) * rho.kernel
        if config.exchange_on:
            exchange = exchange_operator(config.kernel, rho)
            commutator = commutator - grid.cell_volume * (
                exchange @ rho.kernel - rho.kernel @ exchange
            )
    return commutator / (1j * rho.hbar)


def rk4_reference_step(
    rho: DensityMatrix, config: HFConfig, substeps: int = 100, dt: Optional[float] = None
) -> DensityMatrix:
    """
    Advances a state by one step using the classic four-stage explicit
    integrator on `hf_rhs` with `substeps` substeps. Used as a reference.
    """
    dt = config.dt if dt is None else dt
    h = dt / substeps
    kernel = rho.kernel

    def rhs(k: np.ndarray) -> np.ndarray:
        return hf_rhs(rho.with_kernel(k), config)

    for _ in range(substeps):
        k1 = rhs(kernel)
        k2 = rhs(kernel + 0.5 * h * k1)
        k3 = rhs(kernel + 0.5 * h * k2)
        k4 = rhs(kernel + h * k3)
        kernel = kernel + (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4)
    return rho.with_kernel(kernel)


def hf_energy(
    rho: DensityMatrix,
    kernel: InteractionKernel,
    exchange_on: bool = True,
    kinetic_prefactor: float = 0.5,
) -> float:
    """
    Computes the Hartree-Fock energy

        E = ħ^d tr(Tρ) + ½∫Vρ dx - ½ħ^{2d}∬K(x-y)|ρ(x, y)|² dx dy.

    The exchange term is dropped when `exchange_on` is False.
    """
    grid = rho.grid
    x_axes, _ = _axes(rho)
    symbol = _kinetic_symbol(rho, kinetic_prefactor)
    shaped = rho.kernel.reshape(grid.shape * 2)
    applied = apply_multiplier(shaped, symbol, x_axes).reshape(rho.kernel.shape)
    energy = rho.scale * float(np.trace(applied).real) * grid.cell_volume
    if kernel.is_free:
        return energy
    density = spatial_density(rho)
    potential = mean_field_potential(kernel, density)
    energy += 0.5 * float(np.sum(potential * density)) * grid.cell_volume
    if exchange_on:
        energy -= (
            0.5
            * rho.scale**2
            * float(np.sum(kernel.pair_matrix() * np.abs(rho.kernel) ** 2))
            * grid.cell_volume**2
        )
    return energy


class HartreeFockEvolver(_BaseEvolver[DensityMatrix]):
    """Strang-split Hartree-Fock evolution validated at every snapshot."""

    def __init__(self, config: HFConfig):
        super().__init__(config.dt, config.t_end, config.snapshots)
        self.config = config
        self.label = "HF" if config.exchange_on else "HARTREE"

    def step(self, state: DensityMatrix, dt: float) -> DensityMatrix:
        return hf_step(state, self.config, dt)

    def check(self, state: DensityMatrix, t: float) -> None:
        state.validate()


def hf_evolve(
    rho: DensityMatrix, config: HFConfig, observers: Sequence[Observer] = ()
) -> Trajectory[DensityMatrix]:
    """
    Evolves a state to `config.t_end` and records snapshots.

    Args:
        rho: valid initial state
        config: evolution settings
        observers: callables (t, state) -> dict run at every snapshot

    Returns:
        `Trajectory` of validated `DensityMatrix` snapshots

    Raises:
        StateValidationError: if a snapshot fails validation
        ObserverError: if an observer fails
    """
    guard = 0.5 * rho.hbar * rho.grid.spacing**2 * config.accuracy_safety
    if config.dt > guard:
        logger.warning(
            f"(hbar={rho.hbar}) dt={config.dt:.3e} exceeds the accuracy guard "
            f"{guard:.3e}; monitor the energy drift"
        )
    return HartreeFockEvolver(config).evolve(rho.validate(), observers)


def _mode_propagator(hamiltonian: np.ndarray, tau: float, hbar: float) -> np.ndarray:
    energies, vectors = linalg.eigh(0.5 * (hamiltonian + hamiltonian.conj().T))
    return (vectors * np.exp(-1j * tau * energies / hbar)) @ vectors.conj().T


def mode_hamiltonian(
    gamma: np.ndarray,
    one_body: np.ndarray,
    pair: np.ndarray,
    coupling: float,
    exchange_on: bool = True,
) -> np.ndarray:
    """
    Builds h(γ) = h₁ + c·(diag(W·diag γ) - W∘γ) for a density-density
    interaction c·Σ_{x<y} W(x, y) n_x n_y, with γ(x, y) = ⟨a†_y a_x⟩.
    """
    occupations = np.real(np.diag(gamma))
    hamiltonian = one_body + coupling * np.diag(pair @ occupations)
    if exchange_on:
        hamiltonian = hamiltonian - coupling * pair * gamma
    return hamiltonian


def mode_hf_evolve(
    gamma: np.ndarray,
    one_body: np.ndarray,
    pair: np.ndarray,
    coupling: float,
    hbar: float,
    t: float,
    n_steps: int,
    exchange_on: bool = True,
) -> np.ndarray:
    """
    Evolves a one-particle density matrix over a finite set of modes by
    iħ∂_t γ = [h(γ), γ] with exponential midpoint steps.

    Args:
        gamma: initial one-particle density matrix, shape (m, m)
        one_body: one-body Hamiltonian, shape (m, m)
        pair: symmetric pair weights W with zero diagonal
        coupling: prefactor c of the interaction
        hbar: semiclassical parameter
        t: final time
        n_steps: number of steps
        exchange_on: keep the exchange term

    Returns:
        γ(t), shape (m, m)
    """
    gamma = np.array(gamma, dtype=complex)
    if n_steps < 1 or t == 0:
        return gamma
    dt = t / n_steps
    for _ in range(n_steps):
        half = _mode_propagator(
            mode_hamiltonian(gamma, one_body, pair, coupling, exchange_on), dt / 2, hbar
        )
        midpoint = half @ gamma @ half.conj().T
        full = _mode_propagator(
            mode_hamiltonian(midpoint, one_body, pair, coupling, exchange_on), dt, hbar
        )
        gamma = full @ gamma @ full.conj().T
        gamma = 0.5 * (gamma + gamma.conj().T)
    return gamma
