"""Reading-pulse tomography of deviation matrices and GHZ diagnostics."""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .molecule import CHANNELS, Molecule
from .pulse import HardPulse, PulseSequence, sequence_propagator
from .qops import pauli_string
from .readout import ChannelReadout, Deconvolver, PeakModel

PLAN_SIZE = 12
READING_CHOICES = ("I", "X", "Y")
MERMIN_STRINGS = ("XXX", "XYY", "YXY", "YYX")


class TomographyError(ValueError):
    pass


def pauli_basis(n_spins: int) -> tuple[list[str], np.ndarray]:
    """Unit-norm Pauli products, lexicographic in ``I < X < Y < Z``, identity excluded."""
    labels = ["".join(p) for p in itertools.product("IXYZ", repeat=n_spins)][1:]
    norm = np.sqrt(2.0**n_spins)
    return labels, np.array([pauli_string(s) / norm for s in labels])


def basis_coefficients(rho: np.ndarray, basis: np.ndarray) -> np.ndarray:
    """``tr(B_j rho)``; real for Hermitian ``rho``."""
    return np.einsum("jab,ba->j", basis, rho)


def from_coefficients(coeffs: np.ndarray, basis: np.ndarray) -> np.ndarray:
    return np.tensordot(coeffs, basis, axes=1)


@dataclass(frozen=True)
class PlanEntry:
    reading_pulses: PulseSequence
    channels: tuple[str, ...] = CHANNELS

    def __post_init__(self):
        for e in self.reading_pulses:
            if not isinstance(e, HardPulse):
                raise TomographyError("reading sequences may only contain pulses")
        for c in self.channels:
            if c not in CHANNELS:
                raise TomographyError(f"unknown channel {c!r}")

    @property
    def label(self) -> str:
        parts = [f"{p.target}:{p.axis}{round(np.degrees(p.angle_rad))}" for p in self.reading_pulses]
        return ",".join(parts) or "none"

    def to_dict(self) -> dict:
        return {"reading_pulses": self.reading_pulses.to_list(), "channels": list(self.channels)}


@dataclass(frozen=True)
class TomographyPlan:
    entries: tuple[PlanEntry, ...]

    def __len__(self):
        return len(self.entries)

    @property
    def n_acquisitions(self) -> int:
        return sum(len(e.channels) for e in self.entries)

    def to_list(self) -> list[dict]:
        return [e.to_dict() for e in self.entries]


def reading_entry(m: Molecule, choice: Sequence[str]) -> PlanEntry:
    """Per-spin choice of identity, 90x or 90y, as simultaneous hard pulses."""
    pulses = []
    for spin, c in zip(m.spins, choice):
        if c == "X":
            pulses.append(HardPulse(spin.label, "+x", np.pi / 2))
        elif c == "Y":
            pulses.append(HardPulse(spin.label, "+y", np.pi / 2))
        elif c != "I":
            raise TomographyError(f"unknown reading choice {c!r}")
    return PlanEntry(PulseSequence(tuple(pulses)))


def candidate_pool(m: Molecule) -> list[PlanEntry]:
    return [reading_entry(m, c) for c in itertools.product(READING_CHOICES, repeat=m.n_spins)]


@dataclass(frozen=True)
class MeasurementMatrix:
    matrix: np.ndarray  # (rows, 4^n - 1) complex
    labels: tuple[str, ...]
    basis: np.ndarray
    row_index: tuple[tuple[int, str, int], ...]  # (entry, channel, peak)

    @property
    def shape(self) -> tuple[int, int]:
        return self.matrix.shape

    @property
    def real_form(self) -> np.ndarray:
        return np.vstack([self.matrix.real, self.matrix.imag])

    @property
    def rank(self) -> int:
        return real_rank(self.matrix)

    @property
    def condition_number(self) -> float:
        sv = np.linalg.svd(self.real_form, compute_uv=False)
        return float(sv[0] / sv[-1]) if sv[-1] > 0 else float("inf")

    def entry_rows(self, entry: int) -> np.ndarray:
        return np.array([i for i, r in enumerate(self.row_index) if r[0] == entry])


def real_rank(a: np.ndarray, rtol: float = 1e-9) -> int:
    """Rank of a complex map acting on real coefficient vectors."""
    stacked = np.vstack([a.real, a.imag])
    if stacked.size == 0:
        return 0
    sv = np.linalg.svd(stacked, compute_uv=False)
    return int(np.sum(sv > rtol * sv[0])) if sv[0] > 0 else 0


class Acquisition:
    """Reads out batches of states through one plan entry on all its channels.

    Every step (reading pulses, FID synthesis, Fourier transform,
    deconvolution) is linear in the state, so the same object builds the
    measurement matrix and simulates observations.
    """

    def __init__(
        self,
        m: Molecule,
        peaks: Mapping[str, Sequence[PeakModel]],
        dwell_s: float | None = None,
        n_samples: int | None = None,
    ):
        from .readout import DEFAULT_DWELL_S, DEFAULT_SAMPLES

        self.m = m
        self.dwell_s = DEFAULT_DWELL_S if dwell_s is None else dwell_s
        self.n_samples = DEFAULT_SAMPLES if n_samples is None else n_samples
        self.readouts: dict[str, ChannelReadout] = {}
        self.deconvolvers: dict[str, Deconvolver] = {}
        for ch in CHANNELS:
            if ch in peaks and m.channel_spins(ch):
                r = ChannelReadout(m, ch, self.dwell_s, self.n_samples)
                self.readouts[ch] = r
                self.deconvolvers[ch] = Deconvolver(r.freqs_hz, peaks[ch])

    def channels(self, entry: PlanEntry) -> list[str]:
        missing = [c for c in entry.channels if c not in self.readouts and self.m.channel_spins(c)]
        if missing:
            raise TomographyError(f"no calibration peaks for channel(s) {missing}")
        return [c for c in entry.channels if c in self.readouts]

    def rotate(self, entry: PlanEntry, rhos: np.ndarray) -> np.ndarray:
        u = sequence_propagator(entry.reading_pulses, self.m)
        return np.einsum("ab,nbc,dc->nad", u, rhos, u.conj())

    def spectra(self, entry: PlanEntry, rhos: np.ndarray) -> dict[str, np.ndarray]:
        rotated = self.rotate(entry, np.asarray(rhos, dtype=complex))
        return {c: self.readouts[c].spectra(rotated) for c in self.channels(entry)}

    def coefficients(self, channel: str, spectra: np.ndarray) -> np.ndarray:
        return self.deconvolvers[channel](spectra).coefficients


def assemble_measurement_matrix(
    plan: TomographyPlan,
    m: Molecule,
    peaks: Mapping[str, Sequence[PeakModel]],
    acquisition: Acquisition | None = None,
) -> MeasurementMatrix:
    """Column j holds the deconvolved line intensities produced by basis operator j."""
    acq = acquisition or Acquisition(m, peaks)
    labels, basis = pauli_basis(m.n_spins)
    blocks, rows = [], []
    for i, entry in enumerate(plan.entries):
        specs = acq.spectra(entry, basis)
        for ch in acq.channels(entry):
            c = acq.coefficients(ch, specs[ch])  # (63, peaks)
            blocks.append(c.T)
            rows.extend((i, ch, p) for p in range(c.shape[1]))
    matrix = np.vstack(blocks) if blocks else np.zeros((0, len(labels)), dtype=complex)
    return MeasurementMatrix(matrix, tuple(labels), basis, tuple(rows))


def default_plan(
    m: Molecule,
    peaks: Mapping[str, Sequence[PeakModel]],
    size: int = PLAN_SIZE,
    acquisition: Acquisition | None = None,
) -> TomographyPlan:
    """Greedy rank-maximising choice of reading pulses, padded to ``size`` entries.

    Candidates are the ``3^n`` per-spin combinations of identity, 90x and 90y,
    visited in ``itertools.product`` order; ties keep the earliest candidate.
    Padding also follows pool order.
    """
    acq = acquisition or Acquisition(m, peaks)
    pool = candidate_pool(m)
    blocks = [assemble_measurement_matrix(TomographyPlan((e,)), m, peaks, acq).matrix for e in pool]
    target = 4**m.n_spins - 1
    chosen: list[int] = []
    current = np.zeros((0, target), dtype=complex)
    rank = 0
    while rank < target and len(chosen) < size:
        best, best_rank = None, rank
        for i, b in enumerate(blocks):
            if i in chosen:
                continue
            r = real_rank(np.vstack([current, b]))
            if r > best_rank:
                best, best_rank = i, r
        if best is None:
            break
        chosen.append(best)
        current = np.vstack([current, blocks[best]])
        rank = best_rank
    if rank < target:
        raise TomographyError(
            f"{size} reading-pulse sets reach rank {rank}, need {target} for this molecule"
        )
    for i in range(len(pool)):
        if len(chosen) >= size:
            break
        if i not in chosen:
            chosen.append(i)
    return TomographyPlan(tuple(pool[i] for i in chosen))


@dataclass(frozen=True)
class Reconstruction:
    rho: np.ndarray
    coefficients: np.ndarray
    anti_hermitian_residual: float
    residual_norm: float
    acquisition_residuals: tuple[float, ...]


def reconstruct(observed: np.ndarray, mm: MeasurementMatrix) -> Reconstruction:
    """Least-squares deviation matrix from stacked line intensities.

    The basis coefficients of a Hermitian matrix are real, so the complex
    observations are split into real and imaginary rows and solved for real
    coefficients. The rebuilt matrix is Hermitised anyway and the discarded
    anti-Hermitian part reported.
    """
    observed = np.asarray(observed, dtype=complex)
    if observed.shape != (mm.shape[0],):
        raise TomographyError(f"{observed.shape[0] if observed.ndim else 0} observations for {mm.shape[0]} rows")
    coeffs = np.linalg.lstsq(mm.real_form, np.concatenate([observed.real, observed.imag]), rcond=None)[0]
    raw = from_coefficients(coeffs.astype(complex), mm.basis)
    rho = 0.5 * (raw + raw.conj().T)
    resid = observed - mm.matrix @ coeffs
    n_entries = 1 + max((r[0] for r in mm.row_index), default=-1)
    per_entry = tuple(float(np.linalg.norm(resid[mm.entry_rows(i)])) for i in range(n_entries))
    return Reconstruction(
        rho=rho,
        coefficients=basis_coefficients(rho, mm.basis).real,
        anti_hermitian_residual=float(np.linalg.norm(0.5 * (raw - raw.conj().T))),
        residual_norm=float(np.linalg.norm(resid)),
        acquisition_residuals=per_entry,
    )


def simulate_observations(
    rho: np.ndarray,
    plan: TomographyPlan,
    acq: Acquisition,
    noise_sigma: Mapping[str, float] | None = None,
    rng: np.random.Generator | None = None,
) -> tuple[np.ndarray, list[tuple[int, str, np.ndarray]]]:
    """Observed line intensities for ``rho``, plus the (possibly noisy) spectra.

    With ``noise_sigma`` each spectral point gets independent complex Gaussian
    noise of that standard deviation per component.
    """
    if noise_sigma and rng is None:
        raise TomographyError("noisy observations need a random generator")
    obs, spectra = [], []
    for i, entry in enumerate(plan.entries):
        specs = acq.spectra(entry, np.asarray(rho)[None])
        for ch in acq.channels(entry):
            s = specs[ch][0]
            if noise_sigma and noise_sigma.get(ch, 0.0) > 0:
                sigma = noise_sigma[ch]
                s = s + sigma * (rng.standard_normal(s.shape) + 1j * rng.standard_normal(s.shape))
            spectra.append((i, ch, s))
            obs.append(acq.coefficients(ch, s))
    return np.concatenate(obs), spectra


def max_entry_error(rho: np.ndarray, reference: np.ndarray, relative: bool = False) -> float:
    err = float(np.max(np.abs(rho - reference)))
    return err / float(np.max(np.abs(reference))) if relative else err


def fidelity(rho: np.ndarray, target: np.ndarray) -> float:
    """``<target| rho |target>`` for a normalised pure target."""
    rho = np.asarray(rho, dtype=complex)
    target = np.asarray(target, dtype=complex).ravel()
    if rho.shape != (target.size, target.size):
        raise TomographyError(f"state of shape {rho.shape} vs target of length {target.size}")
    if abs(np.vdot(target, target) - 1) > 1e-9:
        raise TomographyError("target state is not normalised")
    if abs(np.trace(rho) - 1) > 1e-6:
        warnings.warn(f"density matrix trace is {np.trace(rho).real:.6g}, not 1", stacklevel=2)
    f = np.vdot(target, rho @ target)
    if abs(f.imag) > 1e-9 * max(1.0, abs(f.real)):
        raise TomographyError(f"fidelity has imaginary part {f.imag:.3e}; is rho Hermitian?")
    return float(f.real)


def mermin_correlators(rho: np.ndarray) -> dict[str, float]:
    rho = np.asarray(rho, dtype=complex)
    if rho.shape != (8, 8):
        raise TomographyError(f"Mermin correlators need a 3-spin state, got shape {rho.shape}")
    return {s.lower(): float(np.trace(rho @ pauli_string(s)).real) for s in MERMIN_STRINGS}
