"""End-to-end runs shared by the command line and the acceptance tests."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .circuits import Circuit, Compilation, Verification, compile_circuit, ghz_circuit, ghz_state, verify_compilation
from .molecule import Molecule, tce_preset
from .pulse import NoiseConfig, apply_sequence, total_duration
from .readout import DEFAULT_DWELL_S, DEFAULT_SAMPLES, Calibration, calibrate
from .thermal import (
    ExtractionError,
    ExtractionReport,
    UnitarityDiagnostic,
    extract_pseudo_pure,
    thermal_deviation,
    unitarity_diagnostic,
)
from .tomography import (
    Acquisition,
    MeasurementMatrix,
    Reconstruction,
    TomographyPlan,
    assemble_measurement_matrix,
    default_plan,
    fidelity,
    max_entry_error,
    mermin_correlators,
    reconstruct,
    simulate_observations,
)

#: coupling variants of the tce preset
COUPLING_VARIANTS = ("secular", "full")


def tce_variant(coupling: str = "secular") -> Molecule:
    """The tce preset, with the carbon pair either weak-coupled (``secular``) or isotropic (``full``)."""
    if coupling == "secular":
        return tce_preset().with_coupling_form("secular-zz")
    if coupling == "full":
        return tce_preset()
    raise ValueError(f"unknown coupling variant {coupling!r}")


def ground_projector(dim: int) -> np.ndarray:
    rho = np.zeros((dim, dim), dtype=complex)
    rho[0, 0] = 1.0
    return rho


@dataclass(frozen=True)
class GhzRun:
    circuit: Circuit
    compilation: Compilation
    verification: Verification
    thermal: np.ndarray
    final: np.ndarray
    diagnostic: UnitarityDiagnostic
    extraction: ExtractionReport | None
    extraction_error: str | None
    extracted_fidelity: float | None
    fidelity: float
    mermin: dict
    pure_final: np.ndarray
    duration_s: float


def run_ghz(
    m: Molecule,
    noise: NoiseConfig | None = None,
    star: bool = False,
    verify_threshold: float = 1e-8,
    compilation: Compilation | None = None,
) -> GhzRun:
    """Prepare GHZ from the thermal state and from ``|0...0>``.

    The thermal run feeds the eigenvalue diagnostic and the pseudo-pure
    extraction. The pure-input run gives the state fidelity and the Mermin
    correlators. Phase damping that treats ``|0...0>`` and ``|1...1>`` alike
    leaves the extracted eigenvector unchanged, so only the pure-input fidelity
    sees the noise.
    """
    circuit = ghz_circuit(star=star)
    comp = compilation or compile_circuit(circuit, m)
    ver = verify_compilation(circuit, comp.sequence, m, threshold=verify_threshold)
    rho_in = thermal_deviation(m).matrix
    rho_out = apply_sequence(rho_in, comp.sequence, m, noise)
    target = ghz_state(m.n_spins)
    try:
        extraction, error = extract_pseudo_pure(rho_out, rho_in), None
    except ExtractionError as exc:
        extraction, error = None, str(exc)
    pure = apply_sequence(ground_projector(m.dim), comp.sequence, m, noise)
    return GhzRun(
        circuit=circuit,
        compilation=comp,
        verification=ver,
        thermal=rho_in,
        final=rho_out,
        diagnostic=unitarity_diagnostic(rho_in, rho_out),
        extraction=extraction,
        extraction_error=error,
        extracted_fidelity=None if extraction is None else fidelity(extraction.extracted_state, target),
        fidelity=fidelity(pure, target),
        mermin=mermin_correlators(pure),
        pure_final=pure,
        duration_s=total_duration(comp.sequence),
    )


@dataclass
class TomographySetup:
    """Calibrated peaks, reading plan and measurement matrix for one molecule."""

    molecule: Molecule
    calibrations: dict[str, Calibration]
    acquisition: Acquisition
    plan: TomographyPlan
    matrix: MeasurementMatrix

    @property
    def peak_heights(self) -> dict[str, float]:
        return {c: cal.peak_height for c, cal in self.calibrations.items()}


def setup_tomography(
    m: Molecule,
    dwell_s: float = DEFAULT_DWELL_S,
    n_samples: int = DEFAULT_SAMPLES,
) -> TomographySetup:
    cals = {c: calibrate(m, c, dwell_s, n_samples) for c in ("H", "C") if m.channel_spins(c)}
    peaks = {c: cal.peaks for c, cal in cals.items()}
    acq = Acquisition(m, peaks, dwell_s, n_samples)
    plan = default_plan(m, peaks, acquisition=acq)
    mm = assemble_measurement_matrix(plan, m, peaks, acq)
    return TomographySetup(m, cals, acq, plan, mm)


def noise_levels(setup: TomographySetup, fraction: float) -> dict[str, float]:
    """Per-channel noise standard deviation (per real component) as a fraction of
    the channel's calibration peak height."""
    return {c: fraction * h for c, h in setup.peak_heights.items()}


@dataclass(frozen=True)
class TomographyRun:
    truth: np.ndarray
    reconstruction: Reconstruction
    spectra: list
    max_error: float
    relative_error: float


def tomography_round_trip(
    setup: TomographySetup,
    rho: np.ndarray,
    noise_fraction: float = 0.0,
    rng: np.random.Generator | None = None,
) -> TomographyRun:
    sigma = noise_levels(setup, noise_fraction) if noise_fraction > 0 else None
    obs, spectra = simulate_observations(rho, setup.plan, setup.acquisition, sigma, rng)
    rec = reconstruct(obs, setup.matrix)
    return TomographyRun(
        truth=np.asarray(rho),
        reconstruction=rec,
        spectra=spectra,
        max_error=max_entry_error(rec.rho, rho),
        relative_error=max_entry_error(rec.rho, rho, relative=True),
    )


def random_deviation(rng: np.random.Generator, dim: int, frobenius: float = 1.0) -> np.ndarray:
    """Random traceless Hermitian matrix with the given Frobenius norm."""
    a = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    h = a + a.conj().T
    h -= np.trace(h) / dim * np.eye(dim)
    return h * (frobenius / np.linalg.norm(h))
