"""This module contains one-particle density operators on a spatial grid,
their builders, and the semiclassical Schatten and Sobolev norms.

Operator kernels carry continuum semantics: a `DensityMatrix` stores the
kernel ρ(x, y) at grid nodes, and the matrix acting on grid vectors is
ρ(x, y)·h^d so that sums approximate integrals. Traces, products and
norms all go through that spacing-weighted matrix.
"""

from dataclasses import dataclass, field
import itertools
import logging
from typing import Optional, Sequence

import numpy as np
from scipy import linalg

from fermion_limits.errors import (
    ContractError,
    DomainError,
    NumericalError,
    StateValidationError,
)
from fermion_limits.spectral import SpatialGrid, apply_multiplier, gradient_multipliers

logger = logging.getLogger(__name__)


class DensityMatrix:
    """
    A one-particle density operator with attached semiclassical parameter ħ.

    Valid states are Hermitian, satisfy 0 ≤ ρ ≤ 1 and ħ^d tr ρ = 1. The
    check runs in `validate`, which every builder calls.
    """

    def __init__(self, grid: SpatialGrid, hbar: float, kernel: np.ndarray):
        """Initializes density matrix instance.

        Args:
            grid: grid the operator acts on
            hbar: semiclassical parameter
            kernel: complex array of shape (n^d, n^d) with ρ(x_i, x_j)

        Raises:
            ContractError: if the kernel does not match the grid
        """
        kernel = np.asarray(kernel, dtype=complex)
        if kernel.shape != (grid.size, grid.size):
            raise ContractError(
                f"Kernel of shape {kernel.shape} does not match grid of size "
                f"{grid.size}"
            )
        if hbar <= 0:
            raise DomainError(f"hbar must be positive, got {hbar}")
        self.grid = grid
        self.hbar = float(hbar)
        self.kernel = kernel
        self._eigenvalues: Optional[np.ndarray] = None

    def __repr__(self) -> str:
        return f"DensityMatrix(hbar={self.hbar}, grid={self.grid!r})"

    @property
    def operator(self) -> np.ndarray:
        """Spacing-weighted matrix acting on grid vectors."""
        return self.kernel * self.grid.cell_volume

    @property
    def scale(self) -> float:
        """ħ^d, the inverse particle number."""
        return self.hbar**self.grid.d

    def trace(self) -> float:
        return float(np.trace(self.operator).real)

    def normalized_trace(self) -> float:
        """ħ^d tr ρ, equal to 1 for valid states."""
        return self.scale * self.trace()

    def eigenvalues(self) -> np.ndarray:
        """Eigenvalues of the Hermitian part of the operator, ascending."""
        if self._eigenvalues is None:
            op = self.operator
            try:
                self._eigenvalues = linalg.eigvalsh(0.5 * (op + op.conj().T))
            except linalg.LinAlgError as exc:
                logger.error(f"(hbar={self.hbar}) eigensolver failed: {exc}")
                raise NumericalError(f"Eigensolver failed: {exc}") from exc
        return self._eigenvalues

    def hermiticity_residue(self) -> float:
        return float(np.max(np.abs(self.kernel - self.kernel.conj().T)))

    def validate(self) -> "DensityMatrix":
        """
        Checks Hermiticity, the fermionic bound 0 ≤ ρ ≤ 1 and ħ^d tr ρ = 1.

        Returns:
            the validated state, for chaining

        Raises:
            StateValidationError: if an invariant fails
        """
        tolerance = 1e-12 * max(1.0, float(np.max(np.abs(self.kernel))))
        residue = self.hermiticity_residue()
        if residue > tolerance:
            logger.error(f"(hbar={self.hbar}) hermiticity residue {residue:.3e}")
            raise StateValidationError(
                f"Density matrix is not Hermitian: residue {residue:.3e}"
            )
        spectrum = self.eigenvalues()
        if spectrum[0] < -1e-10 or spectrum[-1] > 1 + 1e-10:
            logger.error(
                f"(hbar={self.hbar}) spectrum [{spectrum[0]:.3e}, "
                f"{spectrum[-1]:.12g}] outside [0, 1]"
            )
            raise StateValidationError(
                f"Spectrum [{spectrum[0]:.3e}, {spectrum[-1]:.12g}] violates 0 ≤ ρ ≤ 1"
            )
        normalization = self.normalized_trace()
        if abs(normalization - 1.0) > 1e-8:
            logger.error(f"(hbar={self.hbar}) normalized trace {normalization:.12g}")
            raise StateValidationError(
                f"Normalized trace must be 1, got {normalization:.12g}"
            )
        return self

    def with_kernel(self, kernel: np.ndarray) -> "DensityMatrix":
        """Returns a state on the same grid and ħ with a new kernel."""
        return DensityMatrix(self.grid, self.hbar, kernel)


@dataclass
class SemiclassicalNorms:
    """Rescaled Schatten and Sobolev norms of a density operator."""

    p: float
    weight_order: int
    weighted: float
    gradient_x: float
    gradient_v: float
    combined: float = field(init=False)

    def __post_init__(self) -> None:
        parts = [self.weighted, self.gradient_x, self.gradient_v]
        if np.isinf(self.p):
            self.combined = max(parts)
        else:
            self.combined = float(sum(v**self.p for v in parts) ** (1 / self.p))


@dataclass
class RegularityEntry:
    """Norm of one iterated quantum gradient ∇_x^i ∇_ξ^j ρ."""

    order_x: int
    order_v: int
    value: float
    verified: bool


def from_slater(
    orbitals: Sequence[np.ndarray], hbar: float, grid: SpatialGrid
) -> DensityMatrix:
    """
    Builds the projector onto the span of orthonormal orbitals.

    Args:
        orbitals: complex grid functions, orthonormal in Σ f̄ g h^d
        hbar: semiclassical parameter; the orbital count must be round(ħ^{-d})
        grid: grid the orbitals live on

    Returns:
        validated `DensityMatrix` with ρ² = ρ

    Raises:
        StateValidationError: if the orbitals are not orthonormal or their
            count does not match ħ
    """
    phi = np.stack([np.asarray(f, dtype=complex).reshape(-1) for f in orbitals], axis=1)
    if phi.shape[0] != grid.size:
        raise ContractError(f"Orbitals of length {phi.shape[0]} do not match the grid")
    expected = round(hbar ** (-grid.d))
    if phi.shape[1] != expected:
        logger.error(f"(hbar={hbar}) got {phi.shape[1]} orbitals, need {expected}")
        raise StateValidationError(
            f"Slater state at hbar={hbar} needs {expected} orbitals, got {phi.shape[1]}"
        )
    gram = phi.conj().T @ phi * grid.cell_volume
    deviation = float(np.max(np.abs(gram - np.eye(phi.shape[1]))))
    if deviation > 1e-10:
        logger.error(f"(hbar={hbar}) orbitals deviate from orthonormal by {deviation:.3e}")
        raise StateValidationError(
            f"Orbitals are not orthonormal: Gram deviation {deviation:.3e}"
        )
    return DensityMatrix(grid, hbar, phi @ phi.conj().T).validate()


def plane_wave_orbitals(grid: SpatialGrid, count: int) -> list[np.ndarray]:
    """
    Returns the `count` lowest plane waves e^{ik·x}/L^{d/2}.

    Modes are ordered by |q|², ties broken with positive components first,
    so odd counts in d = 1 give the symmetric set {0, ±1, ..., ±(count-1)/2}.
    """
    q = np.round(np.fft.fftfreq(grid.n) * grid.n).astype(int)
    modes = list(itertools.product(q, repeat=grid.d))
    modes.sort(key=lambda m: (sum(c * c for c in m), tuple(-c for c in m)))
    x = grid.coordinates()
    norm = grid.length ** (-grid.d / 2)
    orbitals = []
    for mode in modes[:count]:
        phase = sum(2 * np.pi * c * x[i] / grid.length for i, c in enumerate(mode))
        orbitals.append(norm * np.exp(1j * phase))
    return orbitals


def gaussian_orbital(
    grid: SpatialGrid,
    center: Sequence[float],
    width: float,
    velocity: Sequence[float] = (),
    hbar: float = 1.0,
) -> np.ndarray:
    """Returns a grid-normalized Gaussian wave packet with optional momentum v/ħ."""
    x = grid.coordinates()
    center = np.broadcast_to(np.asarray(center, dtype=float), (grid.d,))
    velocity = np.asarray(velocity, dtype=float)
    velocity = np.broadcast_to(velocity if velocity.size else 0.0, (grid.d,))
    offset = np.stack(
        [grid.periodic_offset(x[i] - center[i]) for i in range(grid.d)]
    )
    phase = sum(velocity[i] * offset[i] for i in range(grid.d)) / hbar
    psi = np.exp(-np.sum(offset**2, axis=0) / (4 * width**2) + 1j * phase)
    return psi / np.sqrt(np.sum(np.abs(psi) ** 2) * grid.cell_volume)


def from_phase_symbol(f, clip: bool = True) -> DensityMatrix:
    """
    Builds a mixed state as the Weyl quantization of a phase-space profile.

    Args:
        f: `PhaseField` with ∫f dx dv = 1 within 1e-6
        clip: project the spectrum onto [0, 1] when it leaves it by more than
            1e-10, then restore the normalization

    Returns:
        validated `DensityMatrix`

    Raises:
        StateValidationError: if f is not normalized, or the quantized
            state is invalid and clipping is off
    """
    from fermion_limits.wigner import weyl_quantize

    mass = f.mass()
    if abs(mass - 1.0) > 1e-6:
        logger.error(f"(hbar={f.hbar}) phase profile has mass {mass:.12g}")
        raise StateValidationError(f"Phase profile must integrate to 1, got {mass:.12g}")
    rho = weyl_quantize(f)
    if clip:
        rho = clip_spectrum(rho)
    return rho.validate()


def clip_spectrum(rho: DensityMatrix) -> DensityMatrix:
    """
    Projects the spectrum of a Hermitian state onto [0, 1] and restores
    ħ^d tr ρ = 1. States already within 1e-10 of [0, 1] are only
    symmetrized.
    """
    kernel = 0.5 * (rho.kernel + rho.kernel.conj().T)
    rho = rho.with_kernel(kernel)
    spectrum = rho.eigenvalues()
    if spectrum[0] >= -1e-10 and spectrum[-1] <= 1 + 1e-10:
        if abs(rho.normalized_trace() - 1.0) > 1e-12:
            rho = rho.with_kernel(kernel / rho.normalized_trace())
        return rho
    values, vectors = linalg.eigh(rho.operator)
    clipped = np.clip(values, 0.0, 1.0)
    logger.warning(
        f"(hbar={rho.hbar}) spectrum [{values[0]:.3e}, {values[-1]:.12g}] "
        f"clipped to [0, 1]; moved weight {np.sum(np.abs(values - clipped)):.3e}"
    )
    clipped *= 1.0 / (rho.scale * np.sum(clipped))
    if clipped[-1] > 1.0:
        logger.warning(
            f"(hbar={rho.hbar}) renormalization lifted the top eigenvalue to "
            f"{clipped[-1]:.12g}"
        )
    operator = (vectors * clipped) @ vectors.conj().T
    return rho.with_kernel(operator / rho.grid.cell_volume)


def mixed_gaussian_state(
    grid: SpatialGrid,
    hbar: float,
    center: Optional[Sequence[float]] = None,
    width_x: float = 1.0,
    width_v: float = 1.0,
    velocity: Sequence[float] = (),
) -> DensityMatrix:
    """
    Builds the Weyl quantization of a normalized Gaussian phase profile on
    the Wigner phase grid of (grid, ħ).

    The quantized state satisfies 0 ≤ ρ ≤ 1 without clipping once
    width_x·width_v ≥ 1 - ħ/2 per axis.
    """
    from fermion_limits.spectral import PhaseGrid
    from fermion_limits.wigner import band_limit, gaussian_profile

    phase = PhaseGrid.for_wigner(grid, hbar)
    f = band_limit(gaussian_profile(phase, hbar, center, width_x, width_v, velocity))
    return from_phase_symbol(f)


def spatial_density(rho: DensityMatrix) -> np.ndarray:
    """
    Computes ρ(x) = ħ^d ρ(x, x).

    Returns:
        real density shaped like the grid, integrating to ħ^d tr ρ
    """
    density = rho.scale * np.real(np.diag(rho.kernel)).reshape(rho.grid.shape)
    lowest = float(np.min(density))
    if lowest < -1e-8:
        logger.warning(f"(hbar={rho.hbar}) negative spatial density {lowest:.3e}")
    return density


def operator_norm(
    kernel: np.ndarray, grid: SpatialGrid, hbar: float, p: float
) -> float:
    """
    Computes the rescaled Schatten norm ħ^{d/p} (Σ σ_i^p)^{1/p} of an
    operator kernel.

    Hermitian and anti-Hermitian kernels use an eigendecomposition, other
    kernels a singular value decomposition.

    Args:
        kernel: operator kernel of shape (n^d, n^d)
        grid: grid the operator acts on
        hbar: semiclassical parameter
        p: Schatten order in [1, ∞]

    Returns:
        nonnegative norm

    Raises:
        DomainError: if p < 1
        NumericalError: if the decomposition fails
    """
    if not p >= 1:
        raise DomainError(f"Schatten order must lie in [1, inf], got {p}")
    op = np.asarray(kernel) * grid.cell_volume
    tolerance = 1e-12 * max(1.0, float(np.max(np.abs(op))) if op.size else 0.0)
    try:
        if np.max(np.abs(op - op.conj().T), initial=0.0) <= tolerance:
            singular = np.abs(linalg.eigvalsh(0.5 * (op + op.conj().T)))
        elif np.max(np.abs(op + op.conj().T), initial=0.0) <= tolerance:
            skew = -0.5j * (op - op.conj().T)
            singular = np.abs(linalg.eigvalsh(skew))
        else:
            singular = linalg.svd(op, compute_uv=False)
    except (linalg.LinAlgError, ValueError) as exc:
        logger.error(f"(hbar={hbar}) norm decomposition failed: {exc}")
        raise NumericalError(f"Decomposition failed: {exc}") from exc
    if np.isinf(p):
        return float(np.max(singular, initial=0.0))
    scale = hbar ** (grid.d / p)
    return float(scale * np.sum(singular**p) ** (1 / p))


def schatten_norm(rho: DensityMatrix, p: float) -> float:
    """Computes ‖ρ‖_{L^p} = ħ^{d/p} ‖ρ‖_{S^p}."""
    return operator_norm(rho.kernel, rho.grid, rho.hbar, p)


def trace_distance(rho1: DensityMatrix, rho2: DensityMatrix) -> float:
    """Computes ‖ρ₁ - ρ₂‖_{L¹}."""
    _check_compatible(rho1, rho2)
    return operator_norm(rho1.kernel - rho2.kernel, rho1.grid, rho1.hbar, 1)


def density_distance(rho1: DensityMatrix, rho2: DensityMatrix) -> float:
    """Computes ‖ρ₁(x) - ρ₂(x)‖_{L¹(dx)}, bounded by `trace_distance` by duality."""
    _check_compatible(rho1, rho2)
    diff = spatial_density(rho1) - spatial_density(rho2)
    return float(np.sum(np.abs(diff)) * rho1.grid.cell_volume)


def _check_compatible(rho1: DensityMatrix, rho2: DensityMatrix) -> None:
    if rho1.grid != rho2.grid or abs(rho1.hbar - rho2.hbar) > 1e-15:
        raise ContractError(
            f"Cannot compare {rho1!r} with {rho2!r}: grids or hbar differ"
        )


def _kernel_axes(grid: SpatialGrid) -> tuple[tuple[int, ...], tuple[int, ...]]:
    d = grid.d
    return tuple(range(d)), tuple(range(d, 2 * d))


def _grad_x(kernel: np.ndarray, grid: SpatialGrid) -> np.ndarray:
    shaped = kernel.reshape(grid.shape * 2)
    x_axes, y_axes = _kernel_axes(grid)
    multipliers = gradient_multipliers(grid)
    out = []
    for i in range(grid.d):
        mult_1d = multipliers[i]
        out.append(
            apply_multiplier(shaped, mult_1d, x_axes)
            + apply_multiplier(shaped, mult_1d, y_axes)
        )
    return np.stack(out).reshape((grid.d,) + kernel.shape)


def _grad_v(kernel: np.ndarray, grid: SpatialGrid, hbar: float) -> np.ndarray:
    return grid.pair_displacements() * kernel[None] / (1j * hbar)


def quantum_gradient_x(rho: DensityMatrix) -> np.ndarray:
    """
    Computes the kernel of [∇, ρ], equal to (∂_x + ∂_y) ρ(x, y).

    Returns:
        array of shape (d, n^d, n^d)
    """
    return _grad_x(rho.kernel, rho.grid)


def quantum_gradient_v(rho: DensityMatrix) -> np.ndarray:
    """
    Computes the kernel of [x/(iħ), ρ], equal to (x - y) ρ(x, y)/(iħ) with
    minimal-image displacements.

    Returns:
        array of shape (d, n^d, n^d)
    """
    return _grad_v(rho.kernel, rho.grid, rho.hbar)


def _momentum_weight(grid: SpatialGrid, hbar: float, weight_order: int) -> np.ndarray:
    return 1.0 + (hbar**2 * grid.squared_wavenumbers()) ** (weight_order / 2)


def _weighted(kernel: np.ndarray, grid: SpatialGrid, weight: np.ndarray) -> np.ndarray:
    _, y_axes = _kernel_axes(grid)
    shaped = kernel.reshape(grid.shape * 2)
    return apply_multiplier(shaped, weight, y_axes).reshape(kernel.shape)


def _check_weight_order(weight_order: int) -> None:
    if weight_order <= 2 or weight_order % 2:
        logger.error(f"(NORMS) weight order {weight_order} rejected")
        raise DomainError(
            f"Weight order must be an even integer above 2, got {weight_order}"
        )


def sobolev_norm(rho: DensityMatrix, p: float, weight_order: int = 4) -> SemiclassicalNorms:
    """
    Computes the weighted semiclassical Sobolev norm of ρ.

    The weight m = 1 + |p̂|^{n_w} with p̂ = -iħ∇ multiplies from the right.
    Gradient terms sum the norms of the d components.

    Args:
        rho: density operator
        p: Schatten order in [1, ∞]
        weight_order: even integer above 2

    Returns:
        `SemiclassicalNorms` with the weighted norm, both gradient terms and
        their p-combination

    Raises:
        DomainError: if the weight order is not an even integer above 2
    """
    _check_weight_order(weight_order)
    grid, hbar = rho.grid, rho.hbar
    weight = _momentum_weight(grid, hbar, weight_order)
    weighted = operator_norm(_weighted(rho.kernel, grid, weight), grid, hbar, p)
    grad_x = sum(
        operator_norm(_weighted(g, grid, weight), grid, hbar, p)
        for g in quantum_gradient_x(rho)
    )
    grad_v = sum(
        operator_norm(_weighted(g, grid, weight), grid, hbar, p)
        for g in quantum_gradient_v(rho)
    )
    return SemiclassicalNorms(
        p=p,
        weight_order=weight_order,
        weighted=weighted,
        gradient_x=float(grad_x),
        gradient_v=float(grad_v),
    )


def regularity_profile(
    rho: DensityMatrix, max_order: int = 2, p: float = 1, weight_order: int = 4
) -> list[RegularityEntry]:
    """
    Measures iterated quantum gradients ∇_x^i ∇_ξ^j ρ for i + j ≤ max_order.

    Each entry sums the weighted L^p norms over all component indices.
    Orders above 2 are computed but flagged as unverified, since spectral
    differentiation beyond second order is too ill-conditioned to trust.

    Returns:
        list of `RegularityEntry`, ordered by total order
    """
    _check_weight_order(weight_order)
    grid, hbar = rho.grid, rho.hbar
    weight = _momentum_weight(grid, hbar, weight_order)
    if max_order > 2:
        logger.warning(
            f"(hbar={hbar}) regularity orders above 2 are reported unverified"
        )
    entries = []
    for total in range(max_order + 1):
        for order_v in range(total + 1):
            order_x = total - order_v
            kernels = [rho.kernel]
            for _ in range(order_x):
                kernels = [g for k in kernels for g in _grad_x(k, grid)]
            for _ in range(order_v):
                kernels = [g for k in kernels for g in _grad_v(k, grid, hbar)]
            value = sum(
                operator_norm(_weighted(k, grid, weight), grid, hbar, p) for k in kernels
            )
            entries.append(RegularityEntry(order_x, order_v, float(value), total <= 2))
    return entries
