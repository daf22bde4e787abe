import numpy as np
import pytest

from fermion_limits.errors import DomainError, ResolutionError
from fermion_limits.vlasov import (
    VlasovConfig,
    boundary_mass,
    l2_norm,
    vlasov_density,
    vlasov_energy,
    vlasov_evolve,
    vlasov_mass,
    vlasov_step,
)
from fermion_limits.wigner import PhaseField, gaussian_profile, perturbed_maxwellian


class TestVlasovConfig:
    """Test VlasovConfig validation."""

    @pytest.mark.parametrize("dt, t_end", [(0.0, 1.0), (0.1, -0.5)])
    def test_VlasovConfig_invalid(self, kernel, dt, t_end):
        with pytest.raises(DomainError):
            VlasovConfig(kernel, dt, t_end)


class TestDiagnostics:
    """Test marginals and conserved quantities of phase fields."""

    def test_vlasov_density(self, gaussian_f, grid):
        density = vlasov_density(gaussian_f)
        assert density.shape == grid.shape
        assert np.sum(density) * grid.cell_volume == pytest.approx(1.0)
        assert vlasov_mass(gaussian_f) == pytest.approx(1.0)

    def test_vlasov_energy_free(self, phase, free_kernel):
        f = gaussian_profile(phase, 0.25, None, 1.5, 0.7)
        assert vlasov_energy(f, free_kernel) == pytest.approx(0.5 * 0.7**2, rel=1e-6)

    def test_vlasov_energy_interacting(self, gaussian_f, kernel, free_kernel):
        assert vlasov_energy(gaussian_f, kernel) > vlasov_energy(gaussian_f, free_kernel)

    def test_boundary_and_l2(self, gaussian_f):
        assert boundary_mass(gaussian_f) < 1e-6
        assert l2_norm(gaussian_f) == pytest.approx(gaussian_f.l2_norm())


class TestVlasovStep:
    """Test the semi-Lagrangian step."""

    def test_vlasov_step_cfl(self, gaussian_f, kernel):
        with pytest.raises(DomainError) as exc:
            vlasov_step(gaussian_f, VlasovConfig(kernel, 2.0))
        assert "violates dt·v_max ≤ L/2" in str(exc.value)

    def test_vlasov_step_homogeneous_free(self, phase, free_kernel):
        f = perturbed_maxwellian(phase, 0.25, amplitude=0.0, width_v=0.7)
        stepped = vlasov_step(f, VlasovConfig(free_kernel, 0.05))
        np.testing.assert_allclose(stepped.values, f.values, atol=1e-12)

    def test_vlasov_step_free_transport(self, phase, free_kernel):
        f = gaussian_profile(phase, 0.25, None, 1.5, 0.7)
        t = 0.5
        stepped = vlasov_step(f, VlasovConfig(free_kernel, t))
        x, v = phase.phase_coordinates()
        center = phase.spatial.length / 2
        dx = phase.spatial.periodic_offset(x[0] - v[0] * t - center)
        expected = np.exp(-(dx**2) / (2 * 1.5**2) - v[0] ** 2 / (2 * 0.7**2))
        expected *= f.values.max() / expected.max()
        assert np.max(np.abs(stepped.values - expected)) < 1e-3 * f.values.max()

    def test_vlasov_step_undershoot(self, phase, free_kernel, caplog):
        values = np.zeros(phase.shape)
        values[10, 40] = 1 / phase.cell_volume
        f = PhaseField(phase, 0.25, values)
        stepped = vlasov_step(f, VlasovConfig(free_kernel, 0.1))
        assert stepped.values.min() < -1e-6
        assert "interpolation undershoot" in caplog.text
        clipped = vlasov_step(f, VlasovConfig(free_kernel, 0.1, clip_negative=True))
        assert clipped.values.min() >= 0.0


class TestVlasovEvolve:
    """Test Vlasov trajectories."""

    def test_vlasov_evolve_conserves_mass(self, gaussian_f, kernel):
        config = VlasovConfig(kernel, 0.05, 0.5, snapshots=5)
        trajectory = vlasov_evolve(
            gaussian_f,
            config,
            observers=[
                lambda t, f: {"mass": vlasov_mass(f), "energy": vlasov_energy(f, kernel)}
            ],
        )
        assert len(trajectory) == 6
        np.testing.assert_allclose(trajectory.series("mass"), 1.0, atol=1e-12)
        energy = trajectory.series("energy")
        assert np.max(np.abs(energy - energy[0])) < 1e-3 * abs(energy[0])

    def test_vlasov_evolve_boundary_mass(self, phase, kernel, caplog):
        values = np.zeros(phase.shape)
        values[:, 0] = 1.0
        f = PhaseField(phase, 0.25, values / (np.sum(values) * phase.cell_volume))
        with pytest.raises(ResolutionError) as exc:
            vlasov_evolve(f, VlasovConfig(kernel, 0.05, 0.0))
        assert "boundary mass" in str(exc.value)
        assert "(VLASOV) boundary mass" in caplog.text
