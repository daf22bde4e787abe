"""This module contains periodic grids and the Fourier layer shared by all solvers.

All transforms use the unitary DFT convention (`norm="ortho"`). Fourier
multipliers are stored as samples of the continuum Fourier transform
K̂(k) = ∫ K(x) e^{-ik·x} dx at the lattice wavevectors, so that applying a
multiplier m through `convolve_periodic` computes the circular convolution
Σ_y K(x - y) f(y) h^d. A multiplier identically equal to one is the identity.
"""

import logging
import math

import numpy as np

from fermion_limits.errors import ContractError, NumericalError

logger = logging.getLogger(__name__)


class SpatialGrid:
    """
    A uniform periodic grid on the torus [0, L)^d.

    Points are x_j = j·L/n per axis. Grids used by the continuum solvers
    require n ≥ 8 and n a power of two. Lattice grids built with
    `SpatialGrid.lattice` lift that restriction for few-site models.
    """

    def __init__(self, d: int, n: int, length: float, lattice: bool = False):
        """Initializes grid instance.

        Args:
            d: spatial dimension, 1 or 2
            n: points per axis
            length: period length per axis
            lattice: if True, accept any n ≥ 1

        Raises:
            ContractError: if the parameters do not describe a supported grid
        """
        if d not in (1, 2):
            raise ContractError(f"Grid dimension must be 1 or 2, got {d}")
        if length <= 0:
            raise ContractError(f"Grid length must be positive, got {length}")
        if lattice:
            if n < 1:
                raise ContractError(f"Lattice needs at least one site, got {n}")
        elif n < 8 or n & (n - 1):
            raise ContractError(
                f"Grid size must be a power of two and at least 8, got {n}"
            )
        self.d = int(d)
        self.n = int(n)
        self.length = float(length)
        self.is_lattice = lattice

    @classmethod
    def lattice(cls, m: int, length: float = 1.0) -> "SpatialGrid":
        """Creates a one-dimensional lattice of `m` sites with period `length`."""
        return cls(d=1, n=m, length=length, lattice=True)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SpatialGrid):
            return NotImplemented
        return (self.d, self.n, self.length) == (other.d, other.n, other.length)

    def __hash__(self) -> int:
        return hash((self.d, self.n, self.length))

    def __repr__(self) -> str:
        return f"SpatialGrid(d={self.d}, n={self.n}, length={self.length})"

    @property
    def spacing(self) -> float:
        return self.length / self.n

    @property
    def cell_volume(self) -> float:
        return self.spacing**self.d

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.d

    @property
    def size(self) -> int:
        return self.n**self.d

    @property
    def points(self) -> np.ndarray:
        """Grid nodes along one axis."""
        return np.arange(self.n) * self.spacing

    def coordinates(self) -> np.ndarray:
        """Returns the node coordinates as an array of shape (d, n, ..., n)."""
        axes = np.meshgrid(*([self.points] * self.d), indexing="ij")
        return np.stack(axes)

    def flat_coordinates(self) -> np.ndarray:
        """Returns the node coordinates as an array of shape (n^d, d)."""
        return self.coordinates().reshape(self.d, -1).T

    def wavenumbers(self) -> np.ndarray:
        """Angular wavenumbers k_q = 2πq/L along one axis, in FFT order."""
        return 2 * np.pi * np.fft.fftfreq(self.n, d=self.spacing)

    def wavevectors(self) -> np.ndarray:
        """Returns the wavevectors as an array of shape (d, n, ..., n)."""
        axes = np.meshgrid(*([self.wavenumbers()] * self.d), indexing="ij")
        return np.stack(axes)

    def squared_wavenumbers(self) -> np.ndarray:
        return np.sum(self.wavevectors() ** 2, axis=0)

    def periodic_offset(self, displacement: np.ndarray) -> np.ndarray:
        """Wraps displacements into [-L/2, L/2), keeping the antipode at -L/2."""
        half = self.length / 2
        return np.mod(displacement + half, self.length) - half

    def minimal_image(self, displacement: np.ndarray) -> np.ndarray:
        """
        Maps displacements to their minimal periodic image in [-L/2, L/2).

        The antipodal displacement L/2 has two images of equal length and
        is mapped to zero, which keeps the map odd.

        Args:
            displacement: array of displacements along one axis

        Returns:
            array of minimal-image displacements
        """
        wrapped = displacement - self.length * np.round(displacement / self.length)
        antipodal = np.isclose(np.abs(wrapped), self.length / 2, rtol=0, atol=1e-12)
        return np.where(antipodal, 0.0, wrapped)

    def pair_displacements(self) -> np.ndarray:
        """
        Minimal-image displacements x - y between all pairs of nodes.

        Returns:
            array of shape (d, n^d, n^d)
        """
        flat = self.flat_coordinates()
        diff = flat[:, None, :] - flat[None, :, :]
        return np.moveaxis(self.minimal_image(diff), -1, 0)

    def distances(self) -> np.ndarray:
        """Minimal-image distance from the origin node to every node."""
        offsets = self.coordinates()
        wrapped = offsets - self.length * np.round(offsets / self.length)
        return np.sqrt(np.sum(wrapped**2, axis=0))


class PhaseGrid:
    """
    A periodic position-velocity grid.

    Velocities are v_k = -v_max + k·(2 v_max / n_v), k = 0..n_v-1 per axis.
    """

    def __init__(self, spatial: SpatialGrid, n_v: int, v_max: float):
        if n_v < 8:
            raise ContractError(f"Velocity grid needs at least 8 points, got {n_v}")
        if v_max <= 0:
            raise ContractError(f"Velocity half-width must be positive, got {v_max}")
        self.spatial = spatial
        self.n_v = int(n_v)
        self.v_max = float(v_max)

    @classmethod
    def for_wigner(cls, spatial: SpatialGrid, hbar: float) -> "PhaseGrid":
        """
        Creates the phase grid whose velocities match the offset DFT used by
        the Wigner transform: v_k = 2πħk/L with n_v = n.

        Args:
            spatial: position grid
            hbar: semiclassical parameter

        Returns:
            `PhaseGrid` with v_max = πħn/L
        """
        return cls(spatial, spatial.n, math.pi * hbar * spatial.n / spatial.length)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PhaseGrid):
            return NotImplemented
        return (self.spatial, self.n_v) == (other.spatial, other.n_v) and math.isclose(
            self.v_max, other.v_max, rel_tol=1e-12
        )

    def __hash__(self) -> int:
        return hash((self.spatial, self.n_v, round(self.v_max, 10)))

    def __repr__(self) -> str:
        return f"PhaseGrid({self.spatial!r}, n_v={self.n_v}, v_max={self.v_max})"

    @property
    def d(self) -> int:
        return self.spatial.d

    @property
    def velocity_spacing(self) -> float:
        return 2 * self.v_max / self.n_v

    @property
    def velocities(self) -> np.ndarray:
        return -self.v_max + np.arange(self.n_v) * self.velocity_spacing

    @property
    def shape(self) -> tuple[int, ...]:
        return self.spatial.shape + (self.n_v,) * self.d

    @property
    def cell_volume(self) -> float:
        return self.spatial.cell_volume * self.velocity_spacing**self.d

    def velocity_coordinates(self) -> np.ndarray:
        """Returns the velocity coordinates as an array of shape (d, n_v, ..., n_v)."""
        axes = np.meshgrid(*([self.velocities] * self.d), indexing="ij")
        return np.stack(axes)

    def phase_coordinates(self) -> tuple[np.ndarray, np.ndarray]:
        """
        Returns positions and velocities broadcast over the full phase grid,
        each as an array of shape (d, *self.shape).
        """
        d = self.d
        x = self.spatial.coordinates().reshape((d,) + self.spatial.shape + (1,) * d)
        v = self.velocity_coordinates().reshape((d,) + (1,) * d + (self.n_v,) * d)
        return (
            np.broadcast_to(x, (d,) + self.shape),
            np.broadcast_to(v, (d,) + self.shape),
        )


def _check_shape(values: np.ndarray, grid: SpatialGrid) -> np.ndarray:
    values = np.asarray(values)
    if values.shape == grid.shape:
        return values
    if values.size == grid.size and values.ndim == 1:
        return values.reshape(grid.shape)
    raise ContractError(
        f"Field of shape {values.shape} does not match grid shape {grid.shape}"
    )


def forward_transform(field: np.ndarray, grid: SpatialGrid) -> np.ndarray:
    """
    Computes unitary discrete Fourier coefficients of a grid field.

    Args:
        field: values on the grid, either shaped like the grid or flat
        grid: grid the field lives on

    Returns:
        complex coefficients in FFT order, shaped like the grid

    Raises:
        ContractError: if the field does not match the grid
    """
    field = _check_shape(field, grid)
    return np.fft.fftn(field, norm="ortho")


def inverse_transform(coeffs: np.ndarray, grid: SpatialGrid) -> np.ndarray:
    """Inverse of `forward_transform`."""
    coeffs = _check_shape(coeffs, grid)
    return np.fft.ifftn(coeffs, norm="ortho")


def convolve_periodic(
    f: np.ndarray, multiplier: np.ndarray, grid: SpatialGrid
) -> np.ndarray:
    """
    Computes the circular convolution K * f of a real field with a real even
    kernel given by its Fourier multiplier.

    Args:
        f: real values on the grid
        multiplier: continuum Fourier transform of the kernel at the lattice
            wavevectors, FFT order
        grid: grid both live on

    Returns:
        real values of K * f on the grid

    Raises:
        ContractError: if sizes do not match
        NumericalError: if the result has an imaginary residue above 1e-8
    """
    f = _check_shape(f, grid)
    multiplier = _check_shape(multiplier, grid)
    out = np.fft.ifftn(multiplier * np.fft.fftn(f, norm="ortho"), norm="ortho")
    residue = float(np.max(np.abs(out.imag))) if out.size else 0.0
    scale = max(1.0, float(np.max(np.abs(out.real))) if out.size else 0.0)
    if residue > 1e-8 * scale:
        logger.error(f"(convolution) imaginary residue {residue:.3e} above tolerance")
        raise NumericalError(
            f"Convolution left an imaginary residue of {residue:.3e}; "
            "the multiplier is not the transform of a real even kernel"
        )
    return out.real


def gradient_multipliers(grid: SpatialGrid) -> np.ndarray:
    """
    Returns the per-axis derivative multipliers ik with the Nyquist mode
    zeroed, as an array of shape (d, n, ..., n).
    """
    k = grid.wavenumbers()
    if grid.n % 2 == 0:
        k[grid.n // 2] = 0.0
    axes = np.meshgrid(*([k] * grid.d), indexing="ij")
    return 1j * np.stack(axes)


def spectral_gradient(f: np.ndarray, grid: SpatialGrid) -> np.ndarray:
    """
    Differentiates a periodic field spectrally along every axis.

    Args:
        f: real values on the grid
        grid: grid the field lives on

    Returns:
        array of shape (d, n, ..., n) holding ∂f/∂x_i
    """
    f = _check_shape(f, grid)
    coeffs = np.fft.fftn(f, norm="ortho")
    return np.stack(
        [
            np.fft.ifftn(mult * coeffs, norm="ortho").real
            for mult in gradient_multipliers(grid)
        ]
    )


def apply_multiplier(
    values: np.ndarray, multiplier: np.ndarray, axes: tuple[int, ...]
) -> np.ndarray:
    """
    Applies a Fourier multiplier along selected axes of an array.

    This is how operators diagonal in momentum act on one argument of an
    operator kernel ρ(x, y).

    Args:
        values: complex array
        multiplier: multiplier in FFT order, with one axis per entry of `axes`
        axes: axes of `values` the multiplier acts along

    Returns:
        transformed complex array, same shape as `values`
    """
    axes = tuple(ax % values.ndim for ax in axes)
    last = tuple(range(values.ndim - len(axes), values.ndim))
    moved = np.moveaxis(values, axes, last)
    out = np.fft.ifftn(
        multiplier * np.fft.fftn(moved, axes=last, norm="ortho"),
        axes=last,
        norm="ortho",
    )
    return np.moveaxis(out, last, axes)


def fourier_shift(values: np.ndarray, shift: float, axis: int) -> np.ndarray:
    """
    Translates sampled periodic data by a fraction of a cell.

    Returns the trigonometric interpolant evaluated at index j + shift. The
    Nyquist mode is translated as the real cosine cos(π(j + shift)).

    Args:
        values: array sampled on a periodic grid along `axis`
        shift: translation in cells
        axis: axis to translate along

    Returns:
        complex array of translated values
    """
    n = values.shape[axis]
    q = np.fft.fftfreq(n) * n
    phase = np.exp(2j * np.pi * q * shift / n)
    if n % 2 == 0:
        phase[n // 2] = math.cos(math.pi * shift)
    shape = [1] * values.ndim
    shape[axis] = n
    coeffs = np.fft.fft(values, axis=axis)
    return np.fft.ifft(coeffs * phase.reshape(shape), axis=axis)
