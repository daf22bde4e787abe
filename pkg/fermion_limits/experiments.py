"""This module contains one runner per experiment kind. Each runner takes a
resolved `ExperimentConfig`, builds the states it names, runs the solvers and
returns a `RunResult` with the CSV tables, the summary and the measurements
acceptance bands are checked against.
"""

from dataclasses import dataclass, field
import logging
from typing import Any, Optional, Sequence

import numpy as np

from fermion_limits.comparison import (
    SweepSettings,
    density_distance_series,
    duhamel_check,
    exchange_magnitude_series,
    phase_distance_series,
    remainder_norm,
    run_rate_study,
    trace_distance_series,
)
from fermion_limits.config import ExperimentConfig
from fermion_limits.density import (
    DensityMatrix,
    from_phase_symbol,
    from_slater,
    operator_norm,
    plane_wave_orbitals,
    spatial_density,
)
from fermion_limits.errors import ConfigError
from fermion_limits.fock import (
    ModeSystem,
    araki_wyss,
    bogoliubov_rotation,
    conjugation_residual,
    fluctuation_number,
    left_rdm,
    left_two_rdm,
    pairing_charge,
)
from fermion_limits.hartree_fock import HFConfig, hf_energy, hf_evolve
from fermion_limits.interaction import InteractionKernel, build_kernel
from fermion_limits.nbody import (
    LatticeModel,
    k_rdm,
    nbody_vs_hf,
    one_rdm_matrix,
    slater_state,
    wick_residual,
)
from fermion_limits.newton import (
    empirical_vs_vlasov,
    newton_energy,
    newton_evolve,
    quadrature_particles,
    sample_particles,
    total_momentum,
)
from fermion_limits.spectral import PhaseGrid, SpatialGrid
from fermion_limits.vlasov import VlasovConfig, vlasov_energy, vlasov_evolve
from fermion_limits.wigner import (
    PhaseField,
    band_limit,
    gaussian_profile,
    perturbed_maxwellian,
    phase_l2_norm,
    weyl_quantize,
    wigner_commutator_check,
    wigner_transform,
)

logger = logging.getLogger(__name__)

L2_TRIALS = 20


@dataclass
class RunResult:
    """Tables, summary and measurements of one experiment run."""

    kind: str
    tables: dict[str, dict[str, list]] = field(default_factory=dict)
    summary: dict[str, Any] = field(default_factory=dict)
    measurements: dict[str, Any] = field(default_factory=dict)


def build_grid(config: ExperimentConfig) -> SpatialGrid:
    grid = config["grid"]
    return SpatialGrid(grid["d"], grid["n"], grid["length"])


def build_interaction(config: ExperimentConfig, grid: SpatialGrid) -> InteractionKernel:
    kernel = config["kernel"]
    if kernel["sign"] == "free":
        return InteractionKernel.free(grid)
    return build_kernel(grid, kernel["sign"], kernel["a"], kernel["R"], kernel["verify"])


def _center(config: ExperimentConfig, d: int) -> Optional[list[float]]:
    center = config["initial"]["center"]
    return None if center is None else [center] * d


def initial_state(config: ExperimentConfig, grid: SpatialGrid, hbar: float) -> DensityMatrix:
    """
    Builds the initial density matrix named by `initial.state`.

    Slater states fill the round(ħ^{-d}) lowest plane waves; the other kinds
    are the Weyl quantization of `initial_profile`.
    """
    if config["initial"]["state"] == "slater-planewaves":
        count = round(hbar ** (-grid.d))
        if count > grid.size:
            raise ConfigError(
                f"hbar={hbar} needs {count} orbitals but the grid has {grid.size} points"
            )
        return from_slater(plane_wave_orbitals(grid, count), hbar, grid)
    return from_phase_symbol(initial_profile(config, PhaseGrid.for_wigner(grid, hbar), hbar))


def initial_profile(config: ExperimentConfig, phase: PhaseGrid, hbar: float) -> PhaseField:
    """Builds the band-limited phase profile named by `initial.state`."""
    initial = config["initial"]
    d = phase.d
    match initial["state"]:
        case "gaussian-mixed":
            f = gaussian_profile(
                phase,
                hbar,
                _center(config, d),
                initial["width_x"],
                initial["width_v"],
                [initial["velocity"]] * d,
            )
        case "phase-profile":
            f = perturbed_maxwellian(
                phase, hbar, initial["amplitude"], initial["mode"], initial["width_v"]
            )
        case "slater-planewaves":
            return wigner_transform(initial_state(config, phase.spatial, hbar), phase)
        case _:
            raise ConfigError(f"Unknown initial state {initial['state']!r}")
    return band_limit(f)


def drift(values: Sequence[float], t_end: float) -> float:
    """max_t |q(t) - q(0)|, per unit time when t_end > 0."""
    values = np.asarray(values, dtype=float)
    change = float(np.max(np.abs(values - values[0])))
    return change / t_end if t_end > 0 else change


def _strictly_decreasing(values: Sequence[float]) -> bool:
    return all(b < a for a, b in zip(values, values[1:]))


def _hf_config(config: ExperimentConfig, kernel: InteractionKernel, exchange: bool) -> HFConfig:
    return HFConfig(
        kernel,
        config["dt"],
        config["t_end"],
        exchange_on=exchange,
        kinetic_prefactor=config["kinetic_prefactor"],
        snapshots=config["snapshots"],
    )


def _vlasov_config(config: ExperimentConfig, kernel: InteractionKernel) -> VlasovConfig:
    return VlasovConfig(kernel, config["dt"], config["t_end"], config["snapshots"])


def run_hf(config: ExperimentConfig) -> RunResult:
    """Evolves one state by Hartree-Fock and monitors the normalization chain."""
    grid = build_grid(config)
    hbar = config["hbar"]
    kernel = build_interaction(config, grid)
    exchange = config["exchange"]
    prefactor = config["kinetic_prefactor"]

    def monitor(t: float, rho: DensityMatrix) -> dict:
        return {
            "trace": rho.normalized_trace(),
            "density_mass": float(np.sum(spatial_density(rho)) * grid.cell_volume),
            "phase_mass": wigner_transform(rho, check_aliasing=False).mass(),
            "energy": hf_energy(rho, kernel, exchange, prefactor),
            "hermiticity": rho.hermiticity_residue(),
        }

    trajectory = hf_evolve(
        initial_state(config, grid, hbar), _hf_config(config, kernel, exchange), [monitor]
    )
    table = {"t": trajectory.times}
    for key in ("trace", "density_mass", "phase_mass", "energy", "hermiticity"):
        table[key] = trajectory.series(key).tolist()
    errors = {
        key: float(np.max(np.abs(trajectory.series(key) - 1.0)))
        for key in ("trace", "density_mass", "phase_mass")
    }
    measurements = {
        "energy_drift": drift(table["energy"], config["t_end"]),
        "trace_error": errors["trace"],
        "density_mass_error": errors["density_mass"],
        "phase_mass_error": errors["phase_mass"],
        "normalization_error": max(errors.values()),
    }
    summary = {
        "hbar": hbar,
        "initial_energy": table["energy"][0],
        "final_energy": table["energy"][-1],
        "snapshots": len(trajectory),
    }
    return RunResult("hf-run", {"hf_series.csv": table}, summary, measurements)


def run_vlasov(config: ExperimentConfig) -> RunResult:
    """Evolves one phase profile by Vlasov and monitors its invariants."""
    grid = build_grid(config)
    hbar = config["hbar"]
    kernel = build_interaction(config, grid)

    def monitor(t: float, f: PhaseField) -> dict:
        return {
            "mass": f.mass(),
            "energy": vlasov_energy(f, kernel),
            "l2": f.l2_norm(),
            "boundary_mass": f.boundary_mass(),
        }

    f0 = initial_profile(config, PhaseGrid.for_wigner(grid, hbar), hbar)
    trajectory = vlasov_evolve(f0, _vlasov_config(config, kernel), [monitor])
    table = {"t": trajectory.times}
    for key in ("mass", "energy", "l2", "boundary_mass"):
        table[key] = trajectory.series(key).tolist()
    t_end = config["t_end"]
    measurements = {
        "mass_drift": drift(table["mass"], t_end),
        "energy_drift": drift(table["energy"], t_end),
        "l2_drift": drift(table["l2"], t_end),
        "max_boundary_mass": max(table["boundary_mass"]),
    }
    summary = {"hbar": hbar, "initial_mass": table["mass"][0], "snapshots": len(trajectory)}
    return RunResult("vlasov-run", {"vlasov_series.csv": table}, summary, measurements)


def wigner_diagnostics(f: PhaseField, rng: np.random.Generator, trials: int = L2_TRIALS) -> dict:
    """
    Round-trip error ‖f - W(Q(f))‖_∞ of a band-limited profile and the
    largest |‖Q(g)‖_{L²} - ‖g‖_{L²}| over random band-limited fields g.
    """
    grid, hbar = f.grid.spatial, f.hbar
    back = wigner_transform(weyl_quantize(f), f.grid, check_aliasing=False)
    roundtrip = float(np.max(np.abs(back.values - f.values)))
    identity = 0.0
    for _ in range(trials):
        g = band_limit(f.with_values(rng.standard_normal(f.grid.shape)))
        quantized = weyl_quantize(g)
        gap = abs(operator_norm(quantized.kernel, grid, hbar, 2) - phase_l2_norm(g))
        identity = max(identity, gap)
    logger.debug(f"(hbar={hbar}) round trip {roundtrip:.3e}, L2 identity {identity:.3e}")
    return {"roundtrip_error": roundtrip, "l2_identity_error": identity}


def run_compare(config: ExperimentConfig) -> RunResult:
    """Runs Hartree-Fock and Vlasov from matching data and compares them."""
    grid = build_grid(config)
    hbar = config["hbar"]
    kernel = build_interaction(config, grid)
    phase = PhaseGrid.for_wigner(grid, hbar)
    if config["initial"]["state"] == "slater-planewaves":
        rho0 = initial_state(config, grid, hbar)
        f0 = wigner_transform(rho0, phase)
    else:
        f0 = initial_profile(config, phase, hbar)
        rho0 = from_phase_symbol(f0)
    hf = hf_evolve(rho0, _hf_config(config, kernel, config["exchange"]))
    vlasov = vlasov_evolve(f0, _vlasov_config(config, kernel))
    table = {
        "t": hf.times,
        "distance_L1": trace_distance_series(hf, vlasov).tolist(),
        "density_L1": density_distance_series(hf, vlasov).tolist(),
        "distance_L2_phase": phase_distance_series(hf, vlasov).tolist(),
    }
    if kernel.is_free:
        table["B_L1"] = [0.0] * len(hf)
        table["exchange_L1"] = [0.0] * len(hf)
        duhamel = None
    else:
        table["B_L1"] = [remainder_norm(f, kernel) for f in vlasov.states]
        table["exchange_L1"] = exchange_magnitude_series(hf, kernel).tolist()
        duhamel = duhamel_check(hf, vlasov, kernel, config["exchange"]) if len(hf) > 1 else None
    rng = np.random.default_rng(config["seed"])
    measurements = {
        "max_distance": max(table["distance_L1"]),
        "final_distance": table["distance_L1"][-1],
        "max_density_distance": max(table["density_L1"]),
        **wigner_diagnostics(f0, rng),
        "commutator_check": wigner_commutator_check(f0, config["kinetic_prefactor"]),
        "duhamel_holds": None if duhamel is None else duhamel["holds"],
    }
    summary = {"hbar": hbar, "duhamel": duhamel, "snapshots": len(hf)}
    return RunResult("compare", {"compare.csv": table}, summary, measurements)


def sweep_settings(config: ExperimentConfig) -> SweepSettings:
    initial, kernel = config["initial"], config["kernel"]
    return SweepSettings(
        length=config["grid"]["length"],
        cells_per_hbar=config["sweep"]["cells_per_hbar"],
        sign=kernel["sign"],
        a=kernel["a"],
        R=kernel["R"],
        dt=config["dt"],
        t_end=config["t_end"],
        snapshots=config["snapshots"],
        width_x=initial["width_x"],
        width_v=initial["width_v"],
        center=initial["center"],
        velocity=initial["velocity"],
        kinetic_prefactor=config["kinetic_prefactor"],
        commutator_points=config["sweep"]["commutator_points"],
        verify_kernel=kernel["verify"],
    )


def run_rate_sweep(config: ExperimentConfig) -> RunResult:
    """
    Runs the ħ sweep and fits the scaling of the distance, the remainder and
    the commutator estimate. At t_end = 0 the distance is not fitted.
    """
    if config["initial"]["state"] != "gaussian-mixed":
        logger.warning(
            f"(RATE-SWEEP) initial state {config['initial']['state']!r} ignored; "
            "sweeps start from the Gaussian profile"
        )
    study = run_rate_study(config["hbar_values"], sweep_settings(config), config["jobs"])
    members = study["members"]
    series = {
        key: []
        for key in (
            "hbar",
            "t",
            "distance_L1",
            "distance_L2_phase",
            "density_L1",
            "B_L1",
            "exchange_L1",
        )
    }
    for member in members:
        for j, t in enumerate(member["t"]):
            series["hbar"].append(member["hbar"])
            series["t"].append(t)
            for key in ("distance_L1", "distance_L2_phase", "density_L1", "B_L1", "exchange_L1"):
                series[key].append(member[key][j])
    fits = {"remainder": study["remainder"], "commutator": study["commutator"]}
    if config["t_end"] > 0:
        fits["distance"] = study["distance"]
    fit_table = {"quantity": [], "slope": [], "residual": [], "intercept": [], "excluded": []}
    for name in sorted(fits):
        fit = fits[name]
        fit_table["quantity"].append(name)
        fit_table["slope"].append(fit.fitted_slope)
        fit_table["residual"].append(fit.fit_residual)
        fit_table["intercept"].append(fit.intercept)
        fit_table["excluded"].append(len(fit.excluded))
    final_distance = members[-1]["distance_L1"][-1]
    duhamel = [m["duhamel"]["holds"] for m in members if m["duhamel"] is not None]
    measurements = {
        "distance_slope": fits["distance"].fitted_slope if "distance" in fits else None,
        "remainder_slope": fits["remainder"].fitted_slope,
        "commutator_slope": fits["commutator"].fitted_slope,
        "exchange_monotone": _strictly_decreasing(study["exchange_max"]),
        "hartree_ratio": (
            study["hartree_vs_hf"][-1] / final_distance if final_distance > 0 else None
        ),
        "duhamel_holds": all(duhamel) if duhamel else None,
    }
    summary = {
        "hbar_values": [m["hbar"] for m in members],
        "fits": fits,
        "exchange_max": study["exchange_max"],
        "hartree_vs_hf": study["hartree_vs_hf"],
        "commutator_L1": [m["commutator_L1"] for m in members],
        "duhamel": [m["duhamel"] for m in members],
    }
    tables = {"rate_series.csv": series, "rate_fits.csv": fit_table}
    return RunResult("rate-sweep", tables, summary, measurements)


def lattice_model(config: ExperimentConfig, m: int, coupling: float) -> LatticeModel:
    kernel = config["kernel"]
    if kernel["sign"] == "free":
        return LatticeModel(m, coupling=coupling)
    return LatticeModel.with_power_law(m, kernel["sign"], kernel["a"], kernel["R"], coupling=coupling)


def run_nbody(config: ExperimentConfig) -> RunResult:
    """Compares exact lattice dynamics with lattice Hartree-Fock for several N."""
    settings = config["nbody"]
    model = lattice_model(config, settings["m"], settings["coupling"])
    t = settings["t"]
    count = config["snapshots"]
    times = [0.0] + ([t * (j + 1) / count for j in range(count)] if t > 0 else [])
    rows = nbody_vs_hf(model, settings["n_values"], times, settings["trap"], settings["n_steps"])
    table = {key: [row[key] for row in rows] for key in ("N", "t", "distance")}
    final = {row["N"]: row["distance"] for row in rows if row["t"] == times[-1]}
    ordered = [final[n] for n in sorted(final)]
    measurements = {
        "nbody_monotone": _strictly_decreasing(ordered),
        "final_distance_max": max(ordered),
    }
    summary = {"m": settings["m"], "final_distance": final}
    return RunResult("nbody", {"nbody.csv": table}, summary, measurements)


def random_density(rng: np.random.Generator, m: int) -> np.ndarray:
    """A random one-particle density U diag(λ) U† with λ uniform in [0, 1]."""
    gaussian = rng.standard_normal((m, m)) + 1j * rng.standard_normal((m, m))
    unitary, upper = np.linalg.qr(gaussian)
    unitary = unitary * (np.diag(upper) / np.abs(np.diag(upper)))
    return (unitary * rng.uniform(0.0, 1.0, m)) @ unitary.conj().T


def _unit_vector(rng: np.random.Generator, size: int) -> np.ndarray:
    vector = rng.standard_normal(size) + 1j * rng.standard_normal(size)
    return vector / np.linalg.norm(vector)


def _slater_wick(rng: np.random.Generator, m: int) -> float:
    """Wick residual of the 2-RDM of a random Slater state on m ≥ 2 sites."""
    n_particles = max(2, m // 2)
    orbitals, _ = np.linalg.qr(
        rng.standard_normal((m, n_particles)) + 1j * rng.standard_normal((m, n_particles))
    )
    state = slater_state(LatticeModel(m), orbitals)
    return wick_residual(one_rdm_matrix(state), k_rdm(state, 2))


def run_fock_verify(config: ExperimentConfig) -> RunResult:
    """
    Checks the Araki-Wyss purification and its Bogoliubov rotation on random
    one-particle densities, the Wick rule, and the fluctuation diagnostic.
    """
    settings = config["fock"]
    rng = np.random.default_rng(config["seed"])
    checks: dict[str, list] = {
        key: []
        for key in (
            "m",
            "trial",
            "rdm_error",
            "vacuum_error",
            "conjugation_error",
            "unitarity_error",
            "pairing_error",
            "wick_quasi_free",
            "wick_entangled",
        )
    }
    fluctuations: dict[str, list] = {
        key: []
        for key in ("m", "trial", "t", "particles", "fluctuation", "trace_distance", "lhs", "rhs")
    }
    slater = []
    for m in settings["m_values"]:
        system = ModeSystem(m)
        charge = pairing_charge(system)
        coupling = settings["coupling"] if settings["interacting"] else 0.0
        model = lattice_model(config, m, coupling) if m > 1 else LatticeModel(m)
        one_body, pair = model.one_body(1.0), model.pair()
        for trial in range(settings["trials"]):
            op = random_density(rng, m)
            phi = araki_wyss(system, op)
            rotation = bogoliubov_rotation(system, op)
            vector = _unit_vector(rng, system.dimension)
            entangled = _unit_vector(rng, system.dimension)
            checks["m"].append(m)
            checks["trial"].append(trial)
            checks["rdm_error"].append(float(np.max(np.abs(left_rdm(system, phi) - op))))
            checks["vacuum_error"].append(float(np.linalg.norm(rotation @ system.vacuum() - phi)))
            checks["conjugation_error"].append(
                max(
                    conjugation_residual(system, op, vector, side)
                    for side in ("left", "right")
                )
            )
            checks["unitarity_error"].append(
                float(np.linalg.norm(rotation.getH() @ (rotation @ vector) - vector))
            )
            checks["pairing_error"].append(float(np.linalg.norm(charge @ phi)))
            checks["wick_quasi_free"].append(
                wick_residual(left_rdm(system, phi), left_two_rdm(system, phi))
                if m > 1
                else 0.0
            )
            checks["wick_entangled"].append(
                wick_residual(left_rdm(system, entangled), left_two_rdm(system, entangled))
                if m > 1
                else float("nan")
            )
            times = [0.0] + ([settings["t"]] if settings["t"] > 0 else [])
            for t in times:
                record = fluctuation_number(
                    system, one_body, pair, coupling, 1.0, op, t, settings["n_steps"]
                )
                fluctuations["m"].append(m)
                fluctuations["trial"].append(trial)
                for key in ("t", "particles", "fluctuation", "trace_distance", "lhs", "rhs"):
                    fluctuations[key].append(getattr(record, key))
        if m > 1:
            slater.append(_slater_wick(rng, m))
    initial = [
        v for t, v in zip(fluctuations["t"], fluctuations["fluctuation"]) if t == 0
    ]
    later = [
        v for t, v in zip(fluctuations["t"], fluctuations["trace_distance"]) if t > 0
    ]
    entangled = [v for v in checks["wick_entangled"] if np.isfinite(v)]
    measurements = {
        "rdm_error": max(checks["rdm_error"]),
        "vacuum_error": max(checks["vacuum_error"]),
        "conjugation_error": max(checks["conjugation_error"]),
        "unitarity_error": max(checks["unitarity_error"]),
        "pairing_error": max(checks["pairing_error"]),
        "wick_quasi_free": max(checks["wick_quasi_free"]),
        "wick_slater": max(slater) if slater else None,
        "wick_entangled_min": min(entangled) if entangled else None,
        "fluctuation_initial": max(abs(v) for v in initial),
        "free_flow_distance": (
            max(later) if later and not settings["interacting"] else None
        ),
    }
    summary = {"m_values": settings["m_values"], "trials": settings["trials"]}
    tables = {"fock_checks.csv": checks, "fock_fluctuation.csv": fluctuations}
    return RunResult("fock-verify", tables, summary, measurements)


def run_newton(config: ExperimentConfig) -> RunResult:
    """Runs the particle system and the Vlasov solver from the same profile."""
    grid = build_grid(config)
    hbar = config["hbar"]
    kernel = build_interaction(config, grid)
    settings = config["newton"]
    f0 = initial_profile(config, PhaseGrid.for_wigner(grid, hbar), hbar)
    match settings["init"]:
        case "sample":
            rng = np.random.default_rng(config["seed"])
            ensemble = sample_particles(f0, settings["particles"], rng, kernel)
        case "quadrature":
            ensemble = quadrature_particles(f0, kernel)
        case _:
            raise ConfigError(f"Unknown particle initialization {settings['init']!r}")

    def monitor(t: float, ens) -> dict:
        return {"energy": newton_energy(ens), "momentum": float(total_momentum(ens)[0])}

    particles = newton_evolve(
        ensemble, config["dt"], config["t_end"], config["snapshots"], [monitor]
    )
    vlasov = vlasov_evolve(f0, _vlasov_config(config, kernel))
    table = {
        "t": particles.times,
        "energy": particles.series("energy").tolist(),
        "momentum": particles.series("momentum").tolist(),
        "distance": empirical_vs_vlasov(particles, vlasov, settings["bandwidth"]).tolist(),
    }
    t_end = config["t_end"]
    measurements = {
        "energy_drift": drift(table["energy"], t_end),
        "momentum_drift": drift(table["momentum"], t_end),
        "final_distance": table["distance"][-1],
    }
    summary = {"particles": len(ensemble), "init": settings["init"], "snapshots": len(particles)}
    return RunResult("newton", {"newton.csv": table}, summary, measurements)


def evaluate_acceptance(bands: dict, measurements: dict) -> dict:
    """
    Checks measurements against acceptance bands.

    A band is [low, high] (inclusive) or a boolean the measurement must
    equal. Missing measurements (None) fail their band.
    """
    verdicts = {}
    for name, band in sorted(bands.items()):
        value = measurements.get(name)
        match band:
            case bool():
                passed = value is not None and bool(value) == band
            case [low, high]:
                passed = value is not None and low <= value <= high
            case _:
                raise ConfigError(f"Acceptance band {name!r} is malformed: {band!r}")
        verdicts[name] = {"value": value, "band": band, "passed": passed}
        if not passed:
            logger.warning(f"(ACCEPTANCE) {name}={value} outside {band}")
    return verdicts
