"""This module contains phase-space fields, the Wigner transform of operator
kernels and its inverse, the Weyl quantization.

The transform is

    f(x, v) = (2π)^{-d} ∫ e^{-i v·y/ħ} ρ(x + y/2, x - y/2) dy

on the phase grid whose velocities v_k = 2πħk/L match the DFT in the
offset y. A pair of grid nodes (a, b) with signed offset m = a - b has its
midpoint on the grid for even m and half a cell off the grid for odd m.
Odd-offset columns are moved onto the grid by an exact trigonometric
half-cell shift. Offsets of exactly half a period have two midpoints and are
dropped. The round trip is exact on the band-limited subspace returned by
`band_limit`.
"""

import functools
import itertools
import logging
import math
from typing import Optional, Sequence

import numpy as np

from fermion_limits.density import DensityMatrix
from fermion_limits.errors import ContractError, NumericalError, ResolutionError
from fermion_limits.spectral import (
    PhaseGrid,
    SpatialGrid,
    apply_multiplier,
    fourier_shift,
    gradient_multipliers,
)

logger = logging.getLogger(__name__)


class PhaseField:
    """
    A real distribution f(x, v) sampled on a `PhaseGrid`.

    Values are stored with the d position axes first and the d velocity
    axes last.
    """

    def __init__(self, grid: PhaseGrid, hbar: float, values: np.ndarray):
        values = np.asarray(values, dtype=float)
        if values.shape != grid.shape:
            raise ContractError(
                f"Phase values of shape {values.shape} do not match {grid.shape}"
            )
        if not np.all(np.isfinite(values)):
            raise NumericalError("Phase field has non-finite values")
        self.grid = grid
        self.hbar = float(hbar)
        self.values = values

    def __repr__(self) -> str:
        return f"PhaseField(hbar={self.hbar}, grid={self.grid!r})"

    def with_values(self, values: np.ndarray) -> "PhaseField":
        return PhaseField(self.grid, self.hbar, values)

    @property
    def velocity_axes(self) -> tuple[int, ...]:
        d = self.grid.d
        return tuple(range(d, 2 * d))

    def mass(self) -> float:
        """∫ f dx dv."""
        return float(np.sum(self.values) * self.grid.cell_volume)

    def l2_norm(self) -> float:
        """(∫ f² dx dv)^{1/2}."""
        return float(np.sqrt(np.sum(self.values**2) * self.grid.cell_volume))

    def boundary_mass(self, cells: int = 2) -> float:
        """∫ |f| over the velocity cells within `cells` of ±v_max."""
        n_v = self.grid.n_v
        edge = np.zeros(n_v, dtype=bool)
        edge[:cells] = True
        edge[n_v - cells :] = True
        masks = np.meshgrid(*([edge] * self.grid.d), indexing="ij")
        mask = np.logical_or.reduce(masks)
        return float(np.sum(np.abs(self.values[..., mask])) * self.grid.cell_volume)


def gaussian_profile(
    phase: PhaseGrid,
    hbar: float,
    center: Optional[Sequence[float]] = None,
    width_x: float = 1.0,
    width_v: float = 1.0,
    velocity: Sequence[float] = (),
) -> PhaseField:
    """
    Builds a Gaussian phase profile normalized to ∫f dx dv = 1 on the grid.

    Args:
        phase: phase grid
        hbar: semiclassical parameter carried by the field
        center: position of the peak, defaults to the middle of the torus
        width_x: standard deviation in position
        width_v: standard deviation in velocity
        velocity: mean velocity, defaults to 0

    Returns:
        `PhaseField`
    """
    spatial = phase.spatial
    d = phase.d
    if center is None:
        center = [spatial.length / 2] * d
    center = np.broadcast_to(np.asarray(center, dtype=float), (d,))
    mean_v = np.asarray(velocity, dtype=float)
    mean_v = np.broadcast_to(mean_v if mean_v.size else 0.0, (d,))
    x, v = phase.phase_coordinates()
    exponent = np.zeros(phase.shape)
    for i in range(d):
        dx = spatial.periodic_offset(x[i] - center[i])
        exponent -= dx**2 / (2 * width_x**2) + (v[i] - mean_v[i]) ** 2 / (
            2 * width_v**2
        )
    values = np.exp(exponent)
    values /= np.sum(values) * phase.cell_volume
    return PhaseField(phase, hbar, values)


def perturbed_maxwellian(
    phase: PhaseGrid,
    hbar: float,
    amplitude: float = 0.1,
    mode: int = 1,
    width_v: float = 1.0,
) -> PhaseField:
    """
    Builds f = (1 + ε cos(2π·mode·x₁/L)) M(v) with a Maxwellian M of
    standard deviation `width_v`, normalized on the grid.
    """
    spatial = phase.spatial
    x, v = phase.phase_coordinates()
    modulation = 1 + amplitude * np.cos(2 * np.pi * mode * x[0] / spatial.length)
    values = modulation * np.exp(-np.sum(v**2, axis=0) / (2 * width_v**2))
    values /= np.sum(values) * phase.cell_volume
    return PhaseField(phase, hbar, values)


@functools.lru_cache(maxsize=8)
def _pair_indices(grid: SpatialGrid) -> tuple[tuple[np.ndarray, ...], np.ndarray]:
    """
    Index arrays mapping (midpoint c, offset j) to kernel entries (a, b).

    Offsets run in FFT order with signed value m. Even m gives
    a = c + m/2, b = c - m/2; odd m gives a = c + (m+1)/2, b = c - (m-1)/2
    with midpoint c + 1/2.
    """
    n, d = grid.n, grid.d
    c = np.arange(n)
    m = np.round(np.fft.fftfreq(n) * n).astype(int)
    up = (c[:, None] + (-(-m // 2))[None, :]) % n
    down = (c[:, None] - (m // 2)[None, :]) % n
    a_idx, b_idx = [], []
    for i in range(d):
        shape = [1] * (2 * d)
        shape[i] = n
        shape[d + i] = n
        a_idx.append(up.reshape(shape))
        b_idx.append(down.reshape(shape))
    return tuple(a_idx) + tuple(b_idx), m


def _to_pairs(kernel: np.ndarray, grid: SpatialGrid) -> np.ndarray:
    index, _ = _pair_indices(grid)
    return kernel.reshape(grid.shape * 2)[index]


def _from_pairs(pairs: np.ndarray, grid: SpatialGrid) -> np.ndarray:
    index, _ = _pair_indices(grid)
    out = np.empty(grid.shape * 2, dtype=pairs.dtype)
    out[index] = pairs
    return out.reshape(grid.size, grid.size)


def _half_shift(pairs: np.ndarray, grid: SpatialGrid, shift: float) -> np.ndarray:
    _, m = _pair_indices(grid)
    odd = np.flatnonzero(m % 2)
    d = grid.d
    out = pairs.astype(complex, copy=True)
    for i in range(d):
        columns = [slice(None)] * (2 * d)
        columns[d + i] = odd
        columns = tuple(columns)
        out[columns] = fourier_shift(out[columns], shift, axis=i)
    return out


def _zero_antipodal(pairs: np.ndarray, grid: SpatialGrid) -> None:
    d, n = grid.d, grid.n
    for i in range(d):
        columns = [slice(None)] * (2 * d)
        columns[d + i] = n // 2
        pairs[tuple(columns)] = 0


def _check_phase_grid(phase: PhaseGrid, spatial: SpatialGrid, hbar: float) -> None:
    if phase.spatial != spatial:
        raise ContractError(f"Phase grid {phase!r} is not built on {spatial!r}")
    expected = PhaseGrid.for_wigner(spatial, hbar)
    if phase != expected:
        logger.error(
            f"(hbar={hbar}) phase grid n_v={phase.n_v} v_max={phase.v_max} does "
            f"not match the offset transform"
        )
        raise ResolutionError(
            f"Wigner phase grid needs n_v={expected.n_v} and "
            f"v_max={expected.v_max:.12g}, got n_v={phase.n_v} v_max={phase.v_max:.12g}"
        )


def pair_midpoint_values(values: np.ndarray, grid: SpatialGrid) -> np.ndarray:
    """
    Evaluates a real grid function at the minimal-image midpoints of all
    node pairs, using trigonometric interpolation for half-cell points.
    Antipodal pairs get the mean over both of their midpoints, so the
    result is symmetric.

    Returns:
        real array of shape (n^d, n^d), entry (a, b) at (x_a + x_b)/2
    """
    d, n = grid.d, grid.n
    values = np.asarray(values, dtype=float).reshape(grid.shape)
    variants = np.empty((2,) * d + grid.shape)
    for pattern in itertools.product((0, 1), repeat=d):
        shifted = values.astype(complex)
        for axis, odd in enumerate(pattern):
            if odd:
                shifted = fourier_shift(shifted, 0.5, axis=axis)
        variants[pattern] = shifted.real
    _, m = _pair_indices(grid)
    parity = m % 2
    index = []
    for i in range(d):
        shape = [1] * (2 * d)
        shape[d + i] = n
        index.append(parity.reshape(shape))
    for i in range(d):
        shape = [1] * (2 * d)
        shape[i] = n
        index.append(np.arange(n).reshape(shape))
    pairs = np.array(np.broadcast_to(variants[tuple(index)], grid.shape * 2))
    if n % 2 == 0:
        # antipodal pairs have two midpoints, c and c + L/2; take their mean
        for i in range(d):
            column = [slice(None)] * (2 * d)
            column[d + i] = n // 2
            column = tuple(column)
            opposite = np.roll(pairs[column], n // 2, axis=i)
            pairs[column] = 0.5 * (pairs[column] + opposite)
    return _from_pairs(pairs, grid).real


def wigner_transform(
    rho: DensityMatrix, phase: Optional[PhaseGrid] = None, check_aliasing: bool = True
) -> PhaseField:
    """
    Computes the Wigner transform of an operator kernel.

    Args:
        rho: Hermitian operator kernel
        phase: phase grid, defaults to `PhaseGrid.for_wigner(rho.grid, rho.hbar)`
        check_aliasing: raise when mass reaches the velocity boundary

    Returns:
        real `PhaseField` with ∫f dx dv = ħ^d tr ρ

    Raises:
        ContractError: if the phase grid is built on another spatial grid
        ResolutionError: if the velocity grid does not match the transform, or
            more than 1e-6 of |f| lies within 2 cells of ±v_max
        NumericalError: if the transform is not real (non-Hermitian input)
    """
    grid = rho.grid
    if phase is None:
        phase = PhaseGrid.for_wigner(grid, rho.hbar)
    _check_phase_grid(phase, grid, rho.hbar)
    d = grid.d
    v_axes = tuple(range(d, 2 * d))
    pairs = _half_shift(_to_pairs(rho.kernel, grid), grid, -0.5)
    _zero_antipodal(pairs, grid)
    spectrum = np.fft.fftshift(np.fft.fftn(pairs, axes=v_axes), axes=v_axes)
    spectrum *= (grid.spacing / (2 * math.pi)) ** d
    scale = max(1.0, float(np.max(np.abs(spectrum.real))))
    residue = float(np.max(np.abs(spectrum.imag)))
    if residue > 1e-8 * scale:
        logger.error(f"(hbar={rho.hbar}) Wigner transform imaginary residue {residue:.3e}")
        raise NumericalError(
            f"Wigner transform has imaginary residue {residue:.3e}; kernel not Hermitian"
        )
    if residue > 1e-10 * scale:
        logger.warning(f"(hbar={rho.hbar}) Wigner imaginary residue {residue:.3e} dropped")
    f = PhaseField(phase, rho.hbar, spectrum.real)
    if check_aliasing:
        edge = f.boundary_mass()
        if edge > 1e-6:
            logger.error(f"(hbar={rho.hbar}) velocity boundary mass {edge:.3e}")
            raise ResolutionError(
                f"Wigner transform aliases: boundary mass {edge:.3e} exceeds 1e-6"
            )
    return f


def weyl_quantize(f: PhaseField) -> DensityMatrix:
    """
    Computes the Weyl quantization of a phase-space field.

    The result is Hermitian for every real f, and equals the quantization of
    `band_limit(f)`.

    Args:
        f: real field on the Wigner phase grid of its spatial grid and ħ

    Returns:
        `DensityMatrix` (not validated; f need not be a state)

    Raises:
        ResolutionError: if the phase grid does not match the transform
    """
    phase = f.grid
    grid = phase.spatial
    _check_phase_grid(phase, grid, f.hbar)
    d = grid.d
    v_axes = f.velocity_axes
    pairs = np.fft.ifftn(np.fft.ifftshift(f.values, axes=v_axes), axes=v_axes)
    pairs *= (2 * math.pi / grid.spacing) ** d
    _zero_antipodal(pairs, grid)
    kernel = _from_pairs(_half_shift(pairs, grid, 0.5), grid)
    kernel = 0.5 * (kernel + kernel.conj().T)
    return DensityMatrix(grid, f.hbar, kernel)


def band_limit(f: PhaseField) -> PhaseField:
    """
    Projects a field onto the subspace where the Wigner/Weyl round trip is
    exact.

    Removes the velocity-alternating component (offset of half a period)
    and, for odd offsets, the position Nyquist mode.
    """
    grid = f.grid.spatial
    v_axes = f.velocity_axes
    pairs = np.fft.ifftn(np.fft.ifftshift(f.values, axes=v_axes), axes=v_axes)
    _zero_antipodal(pairs, grid)
    pairs = _half_shift(_half_shift(pairs, grid, 0.5), grid, -0.5)
    values = np.fft.fftshift(np.fft.fftn(pairs, axes=v_axes), axes=v_axes).real
    return f.with_values(values)


def phase_l2_norm(f: PhaseField) -> float:
    """
    Computes the phase-space L² norm in the frequency variable ξ = v/2π,
    (2π)^{d/2} ‖f‖_{L²(dx dv)}, in which Weyl quantization is an isometry
    onto the rescaled Hilbert-Schmidt norm ħ^{d/2}‖ρ‖_{S²}.
    """
    return (2 * math.pi) ** (f.grid.d / 2) * f.l2_norm()


def wigner_commutator_check(f: PhaseField, kinetic_prefactor: float = 0.5) -> float:
    """
    Compares the Wigner transform of [T, Q(f)]/(iħ), with
    T = -(kinetic_prefactor·ħ²)Δ, against the classical transport
    -2·kinetic_prefactor·v·∇_x f.

    Returns:
        max-norm residue relative to the max norm of the transport term
    """
    rho = weyl_quantize(f)
    grid, hbar = rho.grid, rho.hbar
    d = grid.d
    symbol = kinetic_prefactor * hbar**2 * grid.squared_wavenumbers()
    shaped = rho.kernel.reshape(grid.shape * 2)
    x_axes, y_axes = tuple(range(d)), tuple(range(d, 2 * d))
    commutator = (
        apply_multiplier(shaped, symbol, x_axes) - apply_multiplier(shaped, symbol, y_axes)
    ) / (1j * hbar)
    g = wigner_transform(
        rho.with_kernel(commutator.reshape(rho.kernel.shape)), check_aliasing=False
    )
    _, v = f.grid.phase_coordinates()
    transport = np.zeros(f.grid.shape)
    for i, mult in enumerate(gradient_multipliers(grid)):
        derivative = apply_multiplier(f.values, mult, x_axes).real
        transport -= 2 * kinetic_prefactor * v[i] * derivative
    scale = max(float(np.max(np.abs(transport))), 1e-300)
    return float(np.max(np.abs(g.values - transport)) / scale)
