import numpy as np
import pytest
from scipy import linalg

from fermion_limits.density import trace_distance
from fermion_limits.errors import DomainError, ObserverError
from fermion_limits.hartree_fock import (
    HFConfig,
    HartreeFockEvolver,
    exchange_operator,
    hf_energy,
    hf_evolve,
    hf_rhs,
    hf_step,
    mode_hamiltonian,
    mode_hf_evolve,
    rk4_reference_step,
)


class TestHFConfig:
    """Test HFConfig validation."""

    @pytest.mark.parametrize(
        "dt, t_end, prefactor", [(0.0, 1.0, 0.5), (0.1, -1.0, 0.5), (0.1, 1.0, 0.0)]
    )
    def test_HFConfig_invalid(self, kernel, dt, t_end, prefactor):
        with pytest.raises(DomainError):
            HFConfig(kernel, dt, t_end, kinetic_prefactor=prefactor)

    def test_HFConfig_defaults(self, kernel):
        config = HFConfig(kernel, 0.01)
        assert config.exchange_on
        assert config.kinetic_prefactor == 0.5
        assert HartreeFockEvolver(config).label == "HF"
        config.exchange_on = False
        assert HartreeFockEvolver(config).label == "HARTREE"


class TestHFStep:
    """Test the split-step Hartree-Fock flow."""

    def test_hf_step_keeps_spectrum(self, mixed_state, kernel):
        stepped = hf_step(mixed_state, HFConfig(kernel, 0.01))
        np.testing.assert_allclose(
            stepped.eigenvalues(), mixed_state.eigenvalues(), atol=1e-10
        )
        assert stepped.hermiticity_residue() == 0.0

    @pytest.mark.parametrize("exchange_on", [True, False])
    def test_hf_step_stationary_plane_waves(self, slater_rho, kernel, exchange_on):
        stepped = hf_step(slater_rho, HFConfig(kernel, 0.01, exchange_on=exchange_on))
        np.testing.assert_allclose(stepped.kernel, slater_rho.kernel, atol=1e-10)
        rhs = hf_rhs(slater_rho, HFConfig(kernel, 0.01, exchange_on=exchange_on))
        np.testing.assert_allclose(rhs, 0.0, atol=1e-8)

    def test_hf_step_matches_reference(self, mixed_state, kernel):
        config = HFConfig(kernel, 0.001)
        split = hf_step(mixed_state, config)
        reference = rk4_reference_step(mixed_state, config, substeps=20)
        moved = trace_distance(split, mixed_state)
        assert trace_distance(split, reference) < 1e-5
        assert moved > 20 * trace_distance(split, reference)

    def test_hf_step_reversible(self, mixed_state, kernel):
        config = HFConfig(kernel, 0.002)
        there = hf_step(mixed_state, config)
        back = hf_step(there, config, dt=-0.002)
        assert trace_distance(back, mixed_state) < 1e-10

    def test_exchange_operator_hermitian(self, mixed_state, kernel):
        exchange = exchange_operator(kernel, mixed_state)
        np.testing.assert_allclose(exchange, exchange.conj().T, atol=1e-12)


class TestHFEnergy:
    """Test the Hartree-Fock energy functional."""

    def test_hf_energy_free_plane_waves(self, slater_rho, free_kernel):
        assert hf_energy(slater_rho, free_kernel) == pytest.approx(0.01171875)

    def test_hf_energy_kinetic_prefactor(self, slater_rho, free_kernel):
        assert hf_energy(slater_rho, free_kernel, kinetic_prefactor=1.0) == pytest.approx(
            2 * 0.01171875
        )

    def test_hf_energy_exchange_lowers(self, mixed_state, kernel):
        hartree = hf_energy(mixed_state, kernel, exchange_on=False)
        assert hf_energy(mixed_state, kernel) < hartree

    def test_hf_evolve_conserves_energy(self, mixed_state, kernel):
        config = HFConfig(kernel, 0.001, 0.02, snapshots=4)
        trajectory = hf_evolve(
            mixed_state,
            config,
            observers=[lambda t, rho: {"energy": hf_energy(rho, kernel)}],
        )
        energy = trajectory.series("energy")
        assert len(energy) == 5
        assert np.max(np.abs(energy - energy[0])) < 1e-4
        assert trajectory.final.normalized_trace() == pytest.approx(1.0, abs=1e-10)


class TestHFEvolve:
    """Test Hartree-Fock trajectories."""

    def test_hf_evolve_accuracy_guard(self, slater_rho, kernel, caplog):
        hf_evolve(slater_rho, HFConfig(kernel, 0.01, 0.01))
        assert "exceeds the accuracy guard" in caplog.text

    def test_hf_evolve_zero_time(self, mixed_state, kernel):
        trajectory = hf_evolve(mixed_state, HFConfig(kernel, 0.001, 0.0))
        assert trajectory.times == [0.0]
        assert trajectory.final is mixed_state

    def test_hf_evolve_observer_error(self, slater_rho, kernel):
        def failing(t, rho):
            raise ValueError("no energy")

        with pytest.raises(ObserverError) as exc:
            hf_evolve(slater_rho, HFConfig(kernel, 0.001, 0.002), observers=[failing])
        assert "failed at t=0" in str(exc.value)


class TestModeHF:
    """Test the mode-basis Hartree-Fock flow."""

    @pytest.fixture
    def lattice(self):
        m = 4
        one_body = -np.eye(m, k=1) - np.eye(m, k=-1)
        one_body[0, -1] = one_body[-1, 0] = -1.0
        pair = np.ones((m, m)) - np.eye(m)
        gamma = np.zeros((m, m), dtype=complex)
        gamma[0, 0] = gamma[1, 1] = 1.0
        return one_body, pair, gamma

    def test_mode_hamiltonian(self, lattice):
        one_body, pair, gamma = lattice
        hartree = mode_hamiltonian(gamma, one_body, pair, 0.5, exchange_on=False)
        np.testing.assert_allclose(np.diag(hartree), [0.5, 0.5, 1.0, 1.0])
        full = mode_hamiltonian(gamma, one_body, pair, 0.5)
        np.testing.assert_allclose(full - hartree, -0.5 * pair * gamma)

    def test_mode_hf_evolve_zero_time(self, lattice):
        one_body, pair, gamma = lattice
        out = mode_hf_evolve(gamma, one_body, pair, 0.5, 1.0, 0.0, 10)
        np.testing.assert_allclose(out, gamma)
        assert out is not gamma

    def test_mode_hf_evolve_free(self, lattice):
        one_body, pair, gamma = lattice
        out = mode_hf_evolve(gamma, one_body, pair, 0.0, 1.0, 0.7, 5)
        propagator = linalg.expm(-0.7j * one_body)
        np.testing.assert_allclose(out, propagator @ gamma @ propagator.conj().T, atol=1e-12)

    def test_mode_hf_evolve_projector(self, lattice):
        one_body, pair, gamma = lattice
        out = mode_hf_evolve(gamma, one_body, pair, 0.8, 0.5, 1.0, 50)
        np.testing.assert_allclose(out @ out, out, atol=1e-10)
        assert np.trace(out).real == pytest.approx(2.0)
