"""This module contains a finite-dimensional doubled Fock space: left and
right copies of m fermionic modes, the Araki-Wyss purification of quasi-free
mixed states, the Bogoliubov rotation that maps it to the vacuum, and the
fluctuation-number diagnostic.

Mode k of the 2m-mode Jordan-Wigner chain is bit k of the basis index. Left
modes are 0..m-1 and right modes are m..2m-1, so
a_k|s⟩ = (-1)^{#occupied modes below k}|s - 2^k⟩.
"""

from dataclasses import dataclass
import logging
from typing import Optional

import numpy as np
from scipy import linalg, sparse
from scipy.sparse.linalg import expm_multiply

from fermion_limits.errors import CapacityError, DomainError, NumericalError
from fermion_limits.hartree_fock import mode_hf_evolve
from fermion_limits.nbody import popcount

logger = logging.getLogger(__name__)

MAX_MODES = 7
MAX_DYNAMIC_MODES = 6


def jordan_wigner_operators(n_modes: int) -> list[sparse.csr_matrix]:
    """
    Sparse annihilation operators a_0..a_{n-1} on the 2^n-dimensional Fock
    space, with the parity string over lower modes.
    """
    states = np.arange(2**n_modes, dtype=np.int64)
    operators = []
    for k in range(n_modes):
        bit = 1 << k
        source = states[(states & bit) != 0]
        sign = 1.0 - 2.0 * (popcount(source & (bit - 1)) & 1)
        operators.append(
            sparse.csr_matrix(
                (sign.astype(complex), (source ^ bit, source)),
                shape=(2**n_modes, 2**n_modes),
            )
        )
    return operators


class ModeSystem:
    """
    Operators of the doubled Fock space over m modes.

    The canonical anticommutation relations are checked at construction.
    """

    def __init__(self, m: int):
        """Initializes mode system instance.

        Args:
            m: single-particle modes per side, at most 7

        Raises:
            CapacityError: if m exceeds 7
            NumericalError: if the constructed operators violate the CAR
        """
        if m > MAX_MODES or m < 1:
            logger.error(f"(FOCK) m={m} outside [1, {MAX_MODES}]")
            raise CapacityError(
                f"Doubled Fock space supports 1 to {MAX_MODES} modes, got {m}"
            )
        self.m = int(m)
        self.dimension = 4**m
        self.operators = jordan_wigner_operators(2 * m)
        self.identity = sparse.identity(self.dimension, dtype=complex, format="csr")
        self._check_car()
        logger.debug(f"(FOCK) doubled space m={m} dim={self.dimension}")

    def __repr__(self) -> str:
        return f"ModeSystem(m={self.m})"

    def _check_car(self) -> None:
        for i, a_i in enumerate(self.operators):
            for j, a_j in enumerate(self.operators):
                anti = a_i @ a_j.getH() + a_j.getH() @ a_i
                if i == j:
                    anti = anti - self.identity
                pair = a_i @ a_j + a_j @ a_i
                residue = max(
                    abs(anti).max() if anti.nnz else 0.0,
                    abs(pair).max() if pair.nnz else 0.0,
                )
                if residue > 1e-13:
                    raise NumericalError(
                        f"CAR violated between modes {i} and {j}: {residue:.3e}"
                    )

    def annihilator(self, x: int, side: str) -> sparse.csr_matrix:
        match side:
            case "left":
                return self.operators[x]
            case "right":
                return self.operators[self.m + x]
            case _:
                raise ValueError(f"Unknown side: {side!r}")

    def creator(self, x: int, side: str) -> sparse.csr_matrix:
        return self.annihilator(x, side).getH().tocsr()

    def vacuum(self) -> np.ndarray:
        vector = np.zeros(self.dimension, dtype=complex)
        vector[0] = 1.0
        return vector


def second_quantize(system: ModeSystem, J: np.ndarray, side: str) -> sparse.csr_matrix:
    """dΓ_side(J) = Σ J(x, y) a†_{x,side} a_{y,side}."""
    J = np.asarray(J, dtype=complex)
    out = sparse.csr_matrix((system.dimension, system.dimension), dtype=complex)
    for x in range(system.m):
        for y in range(system.m):
            if J[x, y] != 0:
                out = out + J[x, y] * (
                    system.creator(x, side) @ system.annihilator(y, side)
                )
    return out.tocsr()


def number_operator(system: ModeSystem, side: str) -> sparse.csr_matrix:
    return second_quantize(system, np.eye(system.m), side)


def pairing_charge(system: ModeSystem) -> sparse.csr_matrix:
    """𝒩_l - 𝒩_r, which annihilates every paired state."""
    return number_operator(system, "left") - number_operator(system, "right")


def _eigensystem(op: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    op = np.asarray(op, dtype=complex)
    if np.max(np.abs(op - op.conj().T)) > 1e-10:
        raise DomainError("One-particle operator must be Hermitian")
    values, vectors = linalg.eigh(0.5 * (op + op.conj().T))
    if values[0] < -1e-10 or values[-1] > 1 + 1e-10:
        logger.error(f"(FOCK) spectrum [{values[0]:.3e}, {values[-1]:.12g}]")
        raise DomainError(
            f"Spectrum [{values[0]:.3e}, {values[-1]:.12g}] violates 0 ≤ op ≤ 1"
        )
    return np.clip(values, 0.0, 1.0), vectors


def _pair_creators(
    system: ModeSystem, vectors: np.ndarray
) -> list[tuple[sparse.csr_matrix, sparse.csr_matrix]]:
    """b†_{l,j} = Σ U(x, j) a†_{l,x} and b†_{r,j} = -Σ conj U(x, j) a†_{r,x}."""
    pairs = []
    for j in range(system.m):
        left = sum(vectors[x, j] * system.creator(x, "left") for x in range(system.m))
        right = -sum(
            np.conj(vectors[x, j]) * system.creator(x, "right") for x in range(system.m)
        )
        pairs.append((sparse.csr_matrix(left), sparse.csr_matrix(right)))
    return pairs


def araki_wyss(system: ModeSystem, op: np.ndarray) -> np.ndarray:
    """
    Purifies the quasi-free state with one-particle density `op` into
    Φ = Π_j (√(1-λ_j) + √λ_j b†_{l,j} b†_{r,j}) Ω.

    Args:
        system: doubled mode system
        op: Hermitian m×m matrix with spectrum in [0, 1]

    Returns:
        unit vector whose left one-particle density ⟨a†_{l,y} a_{l,x}⟩ is op

    Raises:
        DomainError: if op is not Hermitian or its spectrum leaves [0, 1]
    """
    values, vectors = _eigensystem(op)
    phi = system.vacuum()
    for lam, (left, right) in zip(values, _pair_creators(system, vectors)):
        phi = np.sqrt(1 - lam) * phi + np.sqrt(lam) * (left @ (right @ phi))
    return phi


def bogoliubov_rotation(system: ModeSystem, op: np.ndarray) -> sparse.csr_matrix:
    """
    Builds the unitary R = exp(Σ_j θ_j G_j), G_j = b†_{l,j}b†_{r,j} - b_{r,j}b_{l,j},
    θ_j = arcsin √λ_j, with RΩ = araki_wyss(op).

    Each G_j rotates the pair plane of mode j, so exp(θG) = I + sin θ·G +
    (1 - cos θ)·G².
    """
    values, vectors = _eigensystem(op)
    rotation = system.identity
    for lam, (left, right) in zip(values, _pair_creators(system, vectors)):
        if lam == 0:
            continue
        raise_pair = left @ right
        generator = (raise_pair - raise_pair.getH()).tocsr()
        theta = np.arcsin(np.sqrt(lam))
        factor = (
            system.identity
            + np.sin(theta) * generator
            + (1 - np.cos(theta)) * (generator @ generator)
        )
        rotation = (rotation @ factor).tocsr()
    return rotation


def conjugation_residual(
    system: ModeSystem, op: np.ndarray, vector: np.ndarray, side: str = "left"
) -> float:
    """
    Largest deviation, on a test vector, of R†a_{x,side}R from the Bogoliubov
    relation the rotation of `bogoliubov_rotation` implements:

        R†a_{l,x}R = Σ_j U(x, j)(cos θ_j b_{l,j} + sin θ_j b†_{r,j})
        R†a_{r,x}R = -Σ_j conj U(x, j)(cos θ_j b_{r,j} - sin θ_j b†_{l,j})

    Args:
        system: doubled mode system
        op: one-particle density defining R
        vector: state the operators are applied to
        side: "left" or "right"

    Raises:
        ValueError: if side is neither "left" nor "right"
    """
    values, vectors = _eigensystem(op)
    rotation = bogoliubov_rotation(system, op)
    pairs = _pair_creators(system, vectors)
    theta = np.arcsin(np.sqrt(values))
    match side:
        case "left":
            mixed = [
                np.cos(theta[j]) * (left.getH() @ vector)
                + np.sin(theta[j]) * (right @ vector)
                for j, (left, right) in enumerate(pairs)
            ]
            coefficients = vectors
        case "right":
            mixed = [
                np.cos(theta[j]) * (right.getH() @ vector)
                - np.sin(theta[j]) * (left @ vector)
                for j, (left, right) in enumerate(pairs)
            ]
            coefficients = -np.conj(vectors)
        case _:
            raise ValueError(f"Unknown side: {side!r}")
    moved = rotation @ vector
    worst = 0.0
    for x in range(system.m):
        lhs = rotation.getH() @ (system.annihilator(x, side) @ moved)
        rhs = sum(coefficients[x, j] * mixed[j] for j in range(system.m))
        worst = max(worst, float(np.max(np.abs(lhs - rhs))))
    return worst


def left_rdm(system: ModeSystem, vector: np.ndarray) -> np.ndarray:
    """γ(x, y) = ⟨a†_{l,y} a_{l,x}⟩."""
    m = system.m
    reduced = np.array([system.annihilator(x, "left") @ vector for x in range(m)])
    return reduced @ reduced.conj().T


def left_two_rdm(system: ModeSystem, vector: np.ndarray) -> np.ndarray:
    """Γ(x₁, x₂, y₁, y₂) = ⟨a†_{l,y₁} a†_{l,y₂} a_{l,x₂} a_{l,x₁}⟩."""
    m = system.m
    reduced = np.array(
        [
            system.annihilator(x2, "left") @ (system.annihilator(x1, "left") @ vector)
            for x1 in range(m)
            for x2 in range(m)
        ]
    )
    return (reduced @ reduced.conj().T).reshape(m, m, m, m)


def interaction_operator(
    system: ModeSystem, pair: np.ndarray, coupling: float, side: str
) -> sparse.csr_matrix:
    """c·Σ_{x<y} W(x, y) n_{x,side} n_{y,side}."""
    numbers = [
        system.creator(x, side) @ system.annihilator(x, side) for x in range(system.m)
    ]
    out = sparse.csr_matrix((system.dimension, system.dimension), dtype=complex)
    for x in range(system.m):
        for y in range(x + 1, system.m):
            if pair[x, y] != 0:
                out = out + coupling * pair[x, y] * (numbers[x] @ numbers[y])
    return out.tocsr()


def liouvillian(
    system: ModeSystem, one_body: np.ndarray, pair: np.ndarray, coupling: float
) -> sparse.csr_matrix:
    """L = H_l - H̄_r, generating the Liouville-von Neumann flow on purifications."""
    left = second_quantize(system, one_body, "left") + interaction_operator(
        system, pair, coupling, "left"
    )
    right = second_quantize(system, np.conj(one_body), "right") + interaction_operator(
        system, pair, coupling, "right"
    )
    return (left - right).tocsr()


@dataclass
class FluctuationRecord:
    """Diagnostic comparing exact and Hartree-Fock one-particle densities."""

    t: float
    particles: float
    fluctuation: float
    fluctuation_plus_one: float
    trace_distance: float
    lhs: float
    rhs: float
    ratio: Optional[float]


def fluctuation_number(
    system: ModeSystem,
    one_body: np.ndarray,
    pair: np.ndarray,
    coupling: float,
    hbar: float,
    op_init: np.ndarray,
    t: float,
    n_steps: int = 200,
) -> FluctuationRecord:
    """
    Measures the fluctuation number of the exact evolution around the
    Hartree-Fock quasi-free state.

    Evolves Φ(t) = exp(-iLt/ħ)·araki_wyss(op_init) and op(t) by the mode
    Hartree-Fock flow, forms Ψ = R†_{op(t)} Φ(t) and reports ⟨Ψ|𝒩|Ψ⟩ with
    𝒩 = 𝒩_l + 𝒩_r, the trace distance between the exact left density and
    op(t), and both sides of the bound ‖op_N(t) - op(t)‖₁/N ≤ ⟨𝒩 + 1⟩/√N
    with unit constant.

    Raises:
        CapacityError: if m exceeds 6
    """
    if system.m > MAX_DYNAMIC_MODES:
        raise CapacityError(
            f"Fluctuation dynamics supports at most {MAX_DYNAMIC_MODES} modes, "
            f"got {system.m}"
        )
    phi = araki_wyss(system, op_init)
    if t != 0:
        generator = liouvillian(system, one_body, pair, coupling)
        phi = expm_multiply(-1j * t / hbar * generator, phi)
    op_t = mode_hf_evolve(op_init, one_body, pair, coupling, hbar, t, n_steps)
    op_t = 0.5 * (op_t + op_t.conj().T)
    values, vectors = linalg.eigh(op_t)
    op_t = (vectors * np.clip(values, 0.0, 1.0)) @ vectors.conj().T
    psi = bogoliubov_rotation(system, op_t).getH() @ phi
    total = number_operator(system, "left") + number_operator(system, "right")
    fluctuation = float(np.vdot(psi, total @ psi).real)
    exact = left_rdm(system, phi)
    difference = exact - op_t
    raw = float(np.sum(np.abs(linalg.eigvalsh(0.5 * (difference + difference.conj().T)))))
    particles = float(np.trace(op_init).real)
    lhs = raw / particles if particles > 0 else 0.0
    rhs = (fluctuation + 1) / np.sqrt(particles) if particles > 0 else float("inf")
    ratio = rhs / lhs if lhs > 0 else None
    logger.debug(
        f"(FOCK) t={t} fluctuation {fluctuation:.6e} distance {raw:.6e} ratio {ratio}"
    )
    return FluctuationRecord(
        t=t,
        particles=particles,
        fluctuation=fluctuation,
        fluctuation_plus_one=fluctuation + 1,
        trace_distance=raw,
        lhs=lhs,
        rhs=rhs,
        ratio=ratio,
    )
