import math

import numpy as np
import pytest
import yaml

from fermion_limits.density import from_phase_symbol, from_slater, plane_wave_orbitals
from fermion_limits.interaction import InteractionKernel, build_kernel
from fermion_limits.spectral import PhaseGrid, SpatialGrid
from fermion_limits.wigner import band_limit, gaussian_profile


@pytest.fixture(autouse=True)
def set_caplog_level(caplog):
    caplog.set_level("DEBUG")


@pytest.fixture
def grid():
    return SpatialGrid(d=1, n=64, length=4 * math.pi)


@pytest.fixture
def small_grid():
    return SpatialGrid(d=1, n=32, length=4 * math.pi)


@pytest.fixture
def hbar():
    return 0.25


@pytest.fixture
def kernel(grid):
    return build_kernel(grid, "repulsive", 0.3, 0.05)


@pytest.fixture
def free_kernel(grid):
    return InteractionKernel.free(grid)


@pytest.fixture
def phase(grid, hbar):
    return PhaseGrid.for_wigner(grid, hbar)


@pytest.fixture
def gaussian_f(phase, hbar):
    return band_limit(gaussian_profile(phase, hbar, None, 1.5, 0.7))


@pytest.fixture
def mixed_state(gaussian_f):
    return from_phase_symbol(gaussian_f)


@pytest.fixture
def slater_rho(grid, hbar):
    return from_slater(plane_wave_orbitals(grid, 4), hbar, grid)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def write_config(tmp_path):
    """Writes a configuration mapping (or raw text) to a YAML file."""

    def _write(content, name="experiment.yaml"):
        path = tmp_path / name
        if isinstance(content, str):
            path.write_text(content, encoding="utf-8")
        else:
            path.write_text(yaml.safe_dump(content), encoding="utf-8")
        return str(path)

    return _write


@pytest.fixture
def quick_hf_config(tmp_path):
    return {
        "kind": "hf-run",
        "output": str(tmp_path / "out"),
        "grid": {"n": 32},
        "hbar": 0.25,
        "dt": 0.005,
        "t_end": 0.02,
        "snapshots": 2,
    }
