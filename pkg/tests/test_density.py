import numpy as np
import pytest

from fermion_limits.density import (
    DensityMatrix,
    SemiclassicalNorms,
    clip_spectrum,
    density_distance,
    from_phase_symbol,
    from_slater,
    gaussian_orbital,
    mixed_gaussian_state,
    operator_norm,
    plane_wave_orbitals,
    quantum_gradient_v,
    quantum_gradient_x,
    regularity_profile,
    schatten_norm,
    sobolev_norm,
    spatial_density,
    trace_distance,
)
from fermion_limits.errors import ContractError, DomainError, StateValidationError


class TestDensityMatrix:
    """Test DensityMatrix invariants."""

    def test_DensityMatrix_shape_mismatch(self, grid):
        with pytest.raises(ContractError) as exc:
            DensityMatrix(grid, 0.25, np.zeros((3, 3)))
        assert "does not match grid" in str(exc.value)

    def test_DensityMatrix_hbar(self, grid):
        with pytest.raises(DomainError):
            DensityMatrix(grid, 0.0, np.zeros((grid.size, grid.size)))

    def test_validate_slater(self, slater_rho, hbar):
        assert slater_rho.trace() == pytest.approx(4.0)
        assert slater_rho.normalized_trace() == pytest.approx(1.0)
        assert slater_rho.scale == hbar
        op = slater_rho.operator
        np.testing.assert_allclose(op @ op, op, atol=1e-12)
        spectrum = slater_rho.eigenvalues()
        np.testing.assert_allclose(spectrum[-4:], 1.0, atol=1e-12)
        np.testing.assert_allclose(spectrum[:-4], 0.0, atol=1e-12)

    def test_validate_not_hermitian(self, slater_rho):
        kernel = slater_rho.kernel.copy()
        kernel[0, 1] += 0.1
        with pytest.raises(StateValidationError) as exc:
            slater_rho.with_kernel(kernel).validate()
        assert "not Hermitian" in str(exc.value)

    def test_validate_spectrum(self, slater_rho, caplog):
        with pytest.raises(StateValidationError) as exc:
            slater_rho.with_kernel(2 * slater_rho.kernel).validate()
        assert "violates 0 ≤ ρ ≤ 1" in str(exc.value)
        assert "outside [0, 1]" in caplog.text

    def test_validate_trace(self, slater_rho):
        with pytest.raises(StateValidationError) as exc:
            slater_rho.with_kernel(0.5 * slater_rho.kernel).validate()
        assert "Normalized trace must be 1" in str(exc.value)


class TestBuilders:
    """Test state builders."""

    def test_plane_wave_orbitals_order(self, grid):
        orbitals = plane_wave_orbitals(grid, 3)
        x = grid.points
        np.testing.assert_allclose(orbitals[0], grid.length**-0.5)
        np.testing.assert_allclose(
            orbitals[1], np.exp(2j * np.pi * x / grid.length) / grid.length**0.5
        )
        np.testing.assert_allclose(
            orbitals[2], np.exp(-2j * np.pi * x / grid.length) / grid.length**0.5
        )

    def test_from_slater_count(self, grid):
        with pytest.raises(StateValidationError) as exc:
            from_slater(plane_wave_orbitals(grid, 3), 0.25, grid)
        assert "needs 4 orbitals, got 3" in str(exc.value)

    def test_from_slater_not_orthonormal(self, grid):
        orbitals = plane_wave_orbitals(grid, 4)
        orbitals[3] = orbitals[0]
        with pytest.raises(StateValidationError) as exc:
            from_slater(orbitals, 0.25, grid)
        assert "not orthonormal" in str(exc.value)

    def test_from_slater_wrong_length(self, grid):
        with pytest.raises(ContractError):
            from_slater([np.ones(10)], 1.0, grid)

    def test_gaussian_orbital_normalized(self, grid):
        psi = gaussian_orbital(grid, [1.0], 0.5, velocity=[0.5], hbar=0.25)
        assert np.sum(np.abs(psi) ** 2) * grid.cell_volume == pytest.approx(1.0)
        assert np.argmax(np.abs(psi)) == round(1.0 / grid.spacing)

    def test_gaussian_orbital_centered(self, grid):
        psi = gaussian_orbital(grid, [grid.length / 2], 1.0)
        ratio = np.abs(psi[0]) ** 2 / np.abs(psi[grid.n // 2]) ** 2
        assert ratio < 1e-8
        assert np.argmax(np.abs(psi)) == grid.n // 2

    def test_from_phase_symbol(self, mixed_state, hbar):
        spectrum = mixed_state.eigenvalues()
        assert spectrum[0] >= -1e-10
        assert spectrum[-1] <= 1 + 1e-10
        assert mixed_state.normalized_trace() == pytest.approx(1.0, abs=1e-10)
        assert mixed_state.hbar == hbar

    def test_from_phase_symbol_unnormalized(self, gaussian_f):
        with pytest.raises(StateValidationError) as exc:
            from_phase_symbol(gaussian_f.with_values(2 * gaussian_f.values))
        assert "must integrate to 1" in str(exc.value)

    def test_mixed_gaussian_state(self, grid, hbar, mixed_state):
        rho = mixed_gaussian_state(grid, hbar, None, 1.5, 0.7)
        np.testing.assert_allclose(rho.kernel, mixed_state.kernel, atol=1e-12)

    def test_clip_spectrum(self, slater_rho, caplog):
        clipped = clip_spectrum(slater_rho.with_kernel(1.2 * slater_rho.kernel))
        clipped.validate()
        np.testing.assert_allclose(clipped.kernel, slater_rho.kernel, atol=1e-10)
        assert "clipped to [0, 1]" in caplog.text

    def test_clip_spectrum_within_bounds(self, mixed_state, caplog):
        clip_spectrum(mixed_state)
        assert "clipped" not in caplog.text


class TestNorms:
    """Test densities, distances and semiclassical norms."""

    def test_spatial_density_uniform(self, slater_rho, grid):
        density = spatial_density(slater_rho)
        np.testing.assert_allclose(density, 1 / grid.length, atol=1e-12)
        assert np.sum(density) * grid.cell_volume == pytest.approx(1.0)

    @pytest.mark.parametrize("p", [1, 2, 3, np.inf])
    def test_schatten_norm_projector(self, slater_rho, p):
        assert schatten_norm(slater_rho, p) == pytest.approx(1.0)

    def test_operator_norm_order(self, slater_rho, grid):
        with pytest.raises(DomainError):
            operator_norm(slater_rho.kernel, grid, 0.25, 0.5)

    def test_operator_norm_anti_hermitian(self, slater_rho, grid):
        value = operator_norm(1j * slater_rho.kernel, grid, 0.25, 1)
        assert value == pytest.approx(1.0)

    def test_operator_norm_general(self, grid, rng):
        kernel = rng.standard_normal((grid.size, grid.size))
        singular = np.linalg.svd(kernel * grid.cell_volume, compute_uv=False)
        assert operator_norm(kernel, grid, 0.25, 1) == pytest.approx(0.25 * singular.sum())

    def test_trace_distance(self, slater_rho, mixed_state):
        assert trace_distance(slater_rho, slater_rho) == pytest.approx(0.0, abs=1e-12)
        distance = trace_distance(slater_rho, mixed_state)
        assert 0 < distance <= 2 + 1e-10
        assert density_distance(slater_rho, mixed_state) <= distance + 1e-12

    def test_trace_distance_incompatible(self, slater_rho, grid):
        other = from_slater(plane_wave_orbitals(grid, 2), 0.5, grid)
        with pytest.raises(ContractError) as exc:
            trace_distance(slater_rho, other)
        assert "grids or hbar differ" in str(exc.value)

    def test_quantum_gradients_translation_invariant(self, slater_rho, grid):
        grad_x = quantum_gradient_x(slater_rho)
        assert grad_x.shape == (1, grid.size, grid.size)
        np.testing.assert_allclose(grad_x, 0.0, atol=1e-10)
        grad_v = quantum_gradient_v(slater_rho)
        np.testing.assert_allclose(np.diag(grad_v[0]), 0.0)
        assert np.max(np.abs(grad_v)) > 0

    def test_sobolev_norm(self, mixed_state):
        norms = sobolev_norm(mixed_state, 1)
        assert isinstance(norms, SemiclassicalNorms)
        assert norms.weighted >= 1.0 - 1e-10
        assert norms.combined == pytest.approx(
            norms.weighted + norms.gradient_x + norms.gradient_v
        )
        sup = sobolev_norm(mixed_state, np.inf)
        assert sup.combined == max(sup.weighted, sup.gradient_x, sup.gradient_v)

    @pytest.mark.parametrize("order", [2, 3, 5])
    def test_sobolev_norm_weight_order(self, mixed_state, order):
        with pytest.raises(DomainError) as exc:
            sobolev_norm(mixed_state, 1, weight_order=order)
        assert "even integer above 2" in str(exc.value)

    def test_regularity_profile(self, slater_rho):
        entries = regularity_profile(slater_rho)
        assert [(e.order_x, e.order_v) for e in entries] == [
            (0, 0),
            (1, 0),
            (0, 1),
            (2, 0),
            (1, 1),
            (0, 2),
        ]
        assert all(e.verified for e in entries)
        assert entries[1].value == pytest.approx(0.0, abs=1e-8)
        assert entries[2].value > 0

    def test_regularity_profile_unverified(self, slater_rho, caplog):
        entries = regularity_profile(slater_rho, max_order=3)
        assert len(entries) == 10
        assert not entries[-1].verified
        assert "reported unverified" in caplog.text
