"""This module contains exact N-fermion dynamics on a small periodic lattice.

States are amplitude vectors over the N-particle sector of the occupation
basis. A basis state is a bitmask s with bit x set when site x is occupied,
and stands for a†_{x₁}···a†_{x_N}|0⟩ with x₁ < ··· < x_N. Sectors are sorted
by bitmask value and indexed by binary search.
"""

from dataclasses import dataclass
import itertools
import logging
import math
from typing import Optional, Sequence, Union

import numpy as np
from scipy import linalg, sparse

from fermion_limits.density import DensityMatrix, trace_distance
from fermion_limits.errors import (
    CapacityError,
    ContractError,
    NumericalError,
    StateValidationError,
)
from fermion_limits.hartree_fock import mode_hf_evolve
from fermion_limits.interaction import InteractionKernel, build_kernel
from fermion_limits.spectral import SpatialGrid

logger = logging.getLogger(__name__)

MAX_SITES = 24
MAX_SECTOR = 2_000_000
DENSE_LIMIT = 2000


def popcount(values: np.ndarray) -> np.ndarray:
    """Number of set bits of each entry of an integer array."""
    values = np.asarray(values, dtype=np.int64)
    count = np.zeros(values.shape, dtype=np.int64)
    while np.any(values):
        count += values & 1
        values = values >> 1
    return count


def sector_basis(m: int, n_particles: int) -> np.ndarray:
    """
    Sorted bitmasks of all N-subsets of m sites.

    Raises:
        CapacityError: if the sector has more than 2·10⁶ states
    """
    if not 0 <= n_particles <= m:
        raise ContractError(f"Cannot place {n_particles} particles on {m} sites")
    dimension = math.comb(m, n_particles)
    if dimension > MAX_SECTOR:
        logger.error(f"(NBODY) sector m={m} N={n_particles} has {dimension} states")
        raise CapacityError(
            f"Sector dimension binomial({m}, {n_particles}) = {dimension} exceeds "
            f"{MAX_SECTOR}"
        )
    basis = np.fromiter(
        (sum(1 << x for x in occ) for occ in itertools.combinations(range(m), n_particles)),
        dtype=np.int64,
        count=dimension,
    )
    return np.sort(basis)


def _between(x: int, y: int) -> int:
    low, high = min(x, y), max(x, y)
    return ((1 << high) - 1) ^ ((1 << (low + 1)) - 1) if high > low else 0


def _lookup(basis: np.ndarray, states: np.ndarray) -> np.ndarray:
    return np.searchsorted(basis, states)


def annihilate(
    vector: np.ndarray, basis: np.ndarray, target: np.ndarray, x: int
) -> np.ndarray:
    """
    Applies a_x to a vector over `basis`, returning a vector over `target`
    (the sector with one particle less).
    """
    bit = 1 << x
    occupied = (basis & bit) != 0
    states = basis[occupied]
    sign = 1 - 2 * (popcount(states & (bit - 1)) & 1)
    out = np.zeros(target.size, dtype=complex)
    out[_lookup(target, states ^ bit)] = sign * vector[occupied]
    return out


class LatticeModel:
    """
    A periodic one-dimensional lattice of m sites with the N-particle
    Hamiltonian

        H = Σ_{x,y} T(x, y) a†_x a_y + (c/N) Σ_{x<y} W(x, y) n_x n_y,

    T the periodic second difference realizing -(ħ²/2)Δ with ħ = 1/N, and
    W(x, y) the kernel at minimal-image distance.
    """

    def __init__(
        self,
        m: int,
        kernel: Optional[InteractionKernel] = None,
        length: float = 1.0,
        coupling: float = 1.0,
    ):
        """Initializes lattice model instance.

        Args:
            m: number of sites, at most 24
            kernel: interaction kernel on `SpatialGrid.lattice(m, length)`,
                None for free fermions
            length: period of the lattice
            coupling: strength c multiplying the interaction

        Raises:
            CapacityError: if m exceeds 24
            ContractError: if the kernel lives on another grid
        """
        if m > MAX_SITES:
            raise CapacityError(f"Lattice models support at most {MAX_SITES} sites, got {m}")
        self.m = int(m)
        self.grid = SpatialGrid.lattice(m, length)
        if kernel is not None and kernel.grid != self.grid:
            raise ContractError(f"Kernel grid {kernel.grid!r} is not {self.grid!r}")
        self.kernel = kernel
        self.coupling = float(coupling)

    @classmethod
    def with_power_law(
        cls,
        m: int,
        sign: str = "repulsive",
        a: float = 0.3,
        R: float = 0.0,
        length: float = 1.0,
        coupling: float = 1.0,
    ) -> "LatticeModel":
        """Creates a model with the kernel ±|x|^{-a} cut off at R."""
        grid = SpatialGrid.lattice(m, length)
        return cls(m, build_kernel(grid, sign, a, R), length, coupling)

    def __repr__(self) -> str:
        return f"LatticeModel(m={self.m}, coupling={self.coupling}, grid={self.grid!r})"

    def one_body(self, hbar: float) -> np.ndarray:
        """-(ħ²/2)Δ as the periodic second difference."""
        m, h = self.m, self.grid.spacing
        matrix = np.zeros((m, m))
        for x in range(m):
            matrix[x, x] += 2.0
            matrix[x, (x + 1) % m] -= 1.0
            matrix[x, (x - 1) % m] -= 1.0
        return hbar**2 / (2 * h**2) * matrix

    def pair(self) -> np.ndarray:
        """Pair weights W(x, y) with zero diagonal."""
        if self.kernel is None:
            return np.zeros((self.m, self.m))
        weights = np.array(self.kernel.pair_matrix(), dtype=float)
        np.fill_diagonal(weights, 0.0)
        return weights

    def trap(self, strength: float) -> np.ndarray:
        """Harmonic trap strength·(x - L/2)² centred on the lattice."""
        offset = self.grid.points - self.grid.length / 2
        return strength * np.diag(offset**2)


@dataclass(eq=False)
class FermionState:
    """An N-fermion pure state over the sorted occupation basis."""

    model: LatticeModel
    n_particles: int
    amplitudes: np.ndarray

    def __post_init__(self) -> None:
        self.amplitudes = np.asarray(self.amplitudes, dtype=complex)
        self.basis = sector_basis(self.model.m, self.n_particles)
        if self.amplitudes.shape != self.basis.shape:
            raise ContractError(
                f"Amplitudes of shape {self.amplitudes.shape} do not match sector "
                f"of dimension {self.basis.size}"
            )
        norm = float(np.linalg.norm(self.amplitudes))
        if abs(norm - 1.0) > 1e-12:
            logger.error(f"(NBODY) state norm {norm:.15g}")
            raise StateValidationError(f"State must have unit norm, got {norm:.15g}")

    @property
    def hbar(self) -> float:
        return 1.0 / self.n_particles

    def with_amplitudes(self, amplitudes: np.ndarray) -> "FermionState":
        return FermionState(self.model, self.n_particles, amplitudes)


def build_hamiltonian(model: LatticeModel, n_particles: int) -> sparse.csr_matrix:
    """
    Assembles the N-particle Hamiltonian in the occupation basis.

    Args:
        model: lattice model
        n_particles: particle number N, also fixing ħ = 1/N

    Returns:
        sparse Hermitian matrix of size binomial(m, N)

    Raises:
        CapacityError: if the sector exceeds 2·10⁶ states
    """
    basis = sector_basis(model.m, n_particles)
    hbar = 1.0 / n_particles
    one_body = model.one_body(hbar)
    pair = model.pair()
    occupation = np.stack([(basis >> x) & 1 for x in range(model.m)]).astype(float)
    diagonal = np.diag(one_body) @ occupation
    diagonal += (
        model.coupling
        / n_particles
        * 0.5
        * np.einsum("xs,xy,ys->s", occupation, pair, occupation)
    )
    rows, cols, data = [np.arange(basis.size)], [np.arange(basis.size)], [diagonal]
    for x, y in itertools.permutations(range(model.m), 2):
        amplitude = one_body[x, y]
        if amplitude == 0:
            continue
        source = ((basis >> y) & 1 == 1) & ((basis >> x) & 1 == 0)
        states = basis[source]
        sign = 1 - 2 * (popcount(states & _between(x, y)) & 1)
        rows.append(_lookup(basis, states ^ (1 << x) ^ (1 << y)))
        cols.append(np.flatnonzero(source))
        data.append(amplitude * sign)
    matrix = sparse.coo_matrix(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
        shape=(basis.size, basis.size),
    ).tocsr()
    matrix.sum_duplicates()
    logger.debug(
        f"(NBODY) Hamiltonian m={model.m} N={n_particles} dim={basis.size} "
        f"nnz={matrix.nnz}"
    )
    return matrix


def _lanczos_step(
    H: sparse.spmatrix, vector: np.ndarray, tau: float, hbar: float, krylov_dim: int
) -> tuple[np.ndarray, float]:
    """
    One Lanczos approximation of exp(-iτH/ħ)·vector with full
    reorthogonalization.

    Returns:
        tuple of (propagated vector, error estimate)
    """
    norm = float(np.linalg.norm(vector))
    basis = np.zeros((krylov_dim + 1, vector.size), dtype=complex)
    alpha = np.zeros(krylov_dim)
    beta = np.zeros(krylov_dim)
    basis[0] = vector / norm
    size = krylov_dim
    for j in range(krylov_dim):
        w = H @ basis[j]
        alpha[j] = float(np.vdot(basis[j], w).real)
        w = w - basis[: j + 1].T @ (basis[: j + 1].conj() @ w)
        w = w - basis[: j + 1].T @ (basis[: j + 1].conj() @ w)
        beta[j] = float(np.linalg.norm(w))
        if beta[j] < 1e-14 * max(1.0, abs(alpha[j])):
            size = j + 1
            break
        basis[j + 1] = w / beta[j]
    theta, vectors = linalg.eigh_tridiagonal(alpha[:size], beta[: size - 1])
    coefficients = vectors @ (np.exp(-1j * tau * theta / hbar) * vectors[0].conj())
    error = norm * beta[size - 1] * abs(coefficients[-1]) if size == krylov_dim else 0.0
    return norm * (coefficients @ basis[:size]), error


def _krylov_propagate(
    H: sparse.spmatrix,
    vector: np.ndarray,
    t: float,
    hbar: float,
    tol: float,
    krylov_dim: int = 30,
) -> np.ndarray:
    remaining, step = t, t
    for _ in range(10_000):
        if abs(remaining) <= 1e-15 * max(1.0, abs(t)):
            return vector
        step = math.copysign(min(abs(step), abs(remaining)), t)
        for _ in range(60):
            candidate, error = _lanczos_step(H, vector, step, hbar, krylov_dim)
            if error <= tol * abs(step) / max(abs(t), 1e-300):
                break
            step /= 2
        else:
            logger.error(f"(KRYLOV) no convergence, residual estimate {error:.3e}")
            raise NumericalError(
                f"Krylov propagation did not converge: residual estimate {error:.3e}"
            )
        vector = candidate
        remaining -= step
        step *= 2
    raise NumericalError("Krylov propagation exceeded the substep limit")


def propagate(
    state: FermionState,
    H: sparse.spmatrix,
    t: float,
    method: str = "auto",
    tol: float = 1e-12,
) -> FermionState:
    """
    Computes exp(-iHt/ħ)·state with ħ = 1/N.

    Args:
        state: initial state
        H: Hamiltonian of the state's sector
        t: time, may be negative
        method: "dense" (eigendecomposition), "krylov", or "auto" which uses
            dense below dimension 2000
        tol: Krylov error tolerance over the whole interval

    Returns:
        propagated `FermionState`

    Raises:
        NumericalError: if the Krylov iteration does not converge
    """
    if t == 0:
        return state.with_amplitudes(state.amplitudes.copy())
    dimension = state.amplitudes.size
    match method:
        case "auto":
            method = "dense" if dimension < DENSE_LIMIT else "krylov"
        case "dense" | "krylov":
            pass
        case _:
            raise ValueError(f"Unknown propagation method: {method!r}")
    if method == "dense":
        energies, vectors = linalg.eigh(H.toarray() if sparse.issparse(H) else H)
        phases = np.exp(-1j * t * energies / state.hbar)
        amplitudes = vectors @ (phases * (vectors.conj().T @ state.amplitudes))
    else:
        amplitudes = _krylov_propagate(H, state.amplitudes, t, state.hbar, tol)
    amplitudes /= np.linalg.norm(amplitudes)
    return state.with_amplitudes(amplitudes)


def slater_state(model: LatticeModel, orbitals: np.ndarray) -> FermionState:
    """
    Builds the Slater determinant of orthonormal orbitals.

    Args:
        model: lattice model
        orbitals: array of shape (m, N) with orthonormal columns

    Returns:
        `FermionState` with amplitude det(Φ[occupied sites, :]) per basis state

    Raises:
        StateValidationError: if the orbitals are not orthonormal
    """
    orbitals = np.asarray(orbitals, dtype=complex)
    n_particles = orbitals.shape[1]
    overlap = orbitals.conj().T @ orbitals
    if np.max(np.abs(overlap - np.eye(n_particles))) > 1e-10:
        raise StateValidationError("Slater orbitals must be orthonormal")
    basis = sector_basis(model.m, n_particles)
    occupied = np.array(
        [[x for x in range(model.m) if s >> x & 1] for s in basis], dtype=int
    ).reshape(basis.size, n_particles)
    amplitudes = np.linalg.det(orbitals[occupied])
    return FermionState(model, n_particles, amplitudes / np.linalg.norm(amplitudes))


def trapped_orbitals(model: LatticeModel, n_particles: int, trap: float = 1.0) -> np.ndarray:
    """Lowest N eigenvectors of the one-body Hamiltonian plus a harmonic trap."""
    hamiltonian = model.one_body(1.0 / n_particles) + model.trap(trap)
    _, vectors = linalg.eigh(hamiltonian)
    return vectors[:, :n_particles].astype(complex)


def one_rdm_matrix(state: FermionState) -> np.ndarray:
    """γ(x, y) = ⟨a†_y a_x⟩ as an (m, m) matrix with trace N."""
    m, basis, psi = state.model.m, state.basis, state.amplitudes
    gamma = np.zeros((m, m), dtype=complex)
    for x in range(m):
        for y in range(m):
            source = (basis >> x) & 1 == 1
            if x != y:
                source &= (basis >> y) & 1 == 0
            states = basis[source]
            target = states ^ (1 << x) ^ (1 << y) if x != y else states
            sign = 1 - 2 * (popcount(states & _between(x, y)) & 1)
            gamma[x, y] = np.sum(
                psi[_lookup(basis, target)].conj() * sign * psi[source]
            )
    return gamma


def one_rdm(state: FermionState) -> DensityMatrix:
    """
    One-particle reduced density of a state as a `DensityMatrix` on the
    lattice grid with ħ = 1/N, so that ħ·tr = 1.
    """
    gamma = one_rdm_matrix(state)
    grid = state.model.grid
    return DensityMatrix(grid, state.hbar, gamma / grid.spacing)


def k_rdm(state: FermionState, k: int) -> np.ndarray:
    """
    k-particle reduced density ⟨a†_{y₁}···a†_{y_k} a_{x_k}···a_{x₁}⟩.

    Returns:
        array of shape (m,)*2k indexed (x₁..x_k, y₁..y_k)

    Raises:
        CapacityError: if the dense tensor would exceed 2·10⁷ entries
    """
    m, n_particles = state.model.m, state.n_particles
    if not 1 <= k <= n_particles:
        raise ContractError(f"k must lie in [1, {n_particles}], got {k}")
    if m ** (2 * k) > 20_000_000:
        raise CapacityError(f"{k}-RDM on {m} sites has {m ** (2 * k)} entries")
    sectors = [sector_basis(m, n_particles - j) for j in range(k + 1)]
    rows = []
    for sites in itertools.product(range(m), repeat=k):
        vector = state.amplitudes
        for j, x in enumerate(sites):
            vector = annihilate(vector, sectors[j], sectors[j + 1], x)
        rows.append(vector)
    reduced = np.array(rows)
    return (reduced @ reduced.conj().T).reshape((m,) * (2 * k))


def _permutation_sign(perm: Sequence[int]) -> int:
    inversions = sum(
        1 for i in range(len(perm)) for j in range(i + 1, len(perm)) if perm[i] > perm[j]
    )
    return -1 if inversions % 2 else 1


def wick_tensor(gamma: np.ndarray, k: int) -> np.ndarray:
    """Σ_π sgn(π) Π_j γ(x_j, y_{π(j)}) as an array of shape (m,)*2k."""
    letters = "abcdefghijklmnop"
    xs, ys = letters[:k], letters[k : 2 * k]
    out = np.zeros(gamma.shape * k, dtype=complex)
    for perm in itertools.permutations(range(k)):
        subscripts = ",".join(xs[j] + ys[perm[j]] for j in range(k))
        out += _permutation_sign(perm) * np.einsum(
            f"{subscripts}->{xs}{ys}", *([gamma] * k)
        )
    return out


def wick_residual(gamma: np.ndarray, gamma_k: np.ndarray) -> float:
    """Max deviation of a k-RDM from the Wick determinant of γ."""
    k = gamma_k.ndim // 2
    return float(np.max(np.abs(gamma_k - wick_tensor(gamma, k))))


def energy(state: FermionState, H: sparse.spmatrix) -> float:
    return float(np.vdot(state.amplitudes, H @ state.amplitudes).real)


def ensemble_one_rdm(
    states: Sequence[FermionState], weights: Sequence[float]
) -> DensityMatrix:
    """
    One-particle density of the mixture Σ w_i |ψ_i⟩⟨ψ_i|.

    Raises:
        ContractError: if the weights are not a probability vector or the
            states have different particle numbers
    """
    weights = np.asarray(weights, dtype=float)
    if len(states) != weights.size or len(states) == 0:
        raise ContractError(f"{len(states)} states but {weights.size} weights")
    if np.any(weights < 0) or abs(float(np.sum(weights)) - 1.0) > 1e-12:
        raise ContractError("Ensemble weights must be nonnegative and sum to 1")
    if len({s.n_particles for s in states}) != 1:
        raise ContractError("Ensemble states must have the same particle number")
    kernel = sum(w * one_rdm(s).kernel for w, s in zip(weights, states))
    return DensityMatrix(states[0].model.grid, states[0].hbar, kernel)


def nbody_vs_hf(
    model: LatticeModel,
    n_values: Sequence[int],
    t: Union[float, Sequence[float]],
    trap: float = 1.0,
    n_steps: int = 200,
) -> list[dict]:
    """
    Compares exact and Hartree-Fock dynamics from the same Slater data.

    For each N the lowest N trapped orbitals define the initial state, the
    trap is released, and both flows run under the untrapped Hamiltonian.

    Args:
        model: lattice model
        n_values: particle numbers
        t: report time or times
        trap: strength of the preparation trap
        n_steps: Hartree-Fock steps per unit time

    Returns:
        rows with keys N, t and distance (‖γ_N(t) - γ_HF(t)‖_{L¹})
    """
    times = [float(t)] if np.isscalar(t) else [float(s) for s in t]
    rows = []
    for n_particles in n_values:
        orbitals = trapped_orbitals(model, n_particles, trap)
        psi0 = slater_state(model, orbitals)
        H = build_hamiltonian(model, n_particles)
        hbar = 1.0 / n_particles
        gamma0 = orbitals @ orbitals.conj().T
        for s in times:
            exact = one_rdm(propagate(psi0, H, s))
            gamma = mode_hf_evolve(
                gamma0,
                model.one_body(hbar),
                model.pair(),
                model.coupling / n_particles,
                hbar,
                s,
                max(1, int(math.ceil(n_steps * abs(s)))),
            )
            mean_field = DensityMatrix(model.grid, hbar, gamma / model.grid.spacing)
            distance = trace_distance(exact, mean_field)
            logger.debug(f"(NBODY) N={n_particles} t={s} distance {distance:.6e}")
            rows.append({"N": n_particles, "t": s, "distance": distance})
    return rows
