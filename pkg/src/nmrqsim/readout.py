"""Free-induction decays, spectra, Lorentzian calibration and deconvolution.

Signal convention: a spin with offset ``delta`` prepared along +x gives
``s(t) = exp(+2 pi i delta t) exp(-t/T2*)``, i.e. a positive offset shows up as
a positive-frequency line. With ``H = -pi delta Z`` this fixes the detection
operator to ``X - iY = 2|1><0|`` per spin.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .molecule import CHANNELS, Molecule, effective_hamiltonian
from .pulse import HardPulse, PulseSequence, apply_sequence
from .qops import embed_single, hermitian_eig, pauli
from .thermal import thermal_deviation

DEFAULT_DWELL_S = 5e-4
DEFAULT_SAMPLES = 4096


class ReadoutError(ValueError):
    pass


@dataclass(frozen=True)
class Fid:
    channel: str
    dwell_s: float
    samples: np.ndarray

    def __post_init__(self):
        if self.dwell_s <= 0:
            raise ReadoutError("dwell must be positive")
        if len(self.samples) < 2:
            raise ReadoutError("an FID needs at least two samples")

    @property
    def times(self) -> np.ndarray:
        return np.arange(len(self.samples)) * self.dwell_s


@dataclass(frozen=True)
class Spectrum:
    freqs_hz: np.ndarray
    amps: np.ndarray
    channel: str = ""

    @property
    def spacing_hz(self) -> float:
        return float(self.freqs_hz[1] - self.freqs_hz[0])


@dataclass(frozen=True)
class PeakModel:
    center_hz: float
    decay_rate_per_s: float
    amplitude: float = 1.0
    phase_rad: float = 0.0

    def __post_init__(self):
        if not self.decay_rate_per_s > 0:
            raise ReadoutError(f"decay rate must be positive, got {self.decay_rate_per_s}")

    @property
    def t2star_s(self) -> float:
        return 1.0 / self.decay_rate_per_s


def detection_operator(m: Molecule, channel: str) -> list[tuple[int, np.ndarray]]:
    """Per-spin receiver operators ``X_k - i Y_k`` for the spins on ``channel``."""
    if channel not in CHANNELS:
        raise ReadoutError(f"unknown channel {channel!r}")
    spins = m.channel_spins(channel)
    if not spins:
        raise ReadoutError(f"molecule has no spins on channel {channel!r}")
    lowering = pauli("X") - 1j * pauli("Y")
    return [(k, embed_single(lowering, k, m.n_spins)) for k in spins]


class ChannelReadout:
    """Linear map from density matrices to the FID of one receiver channel.

    Each sample is a closed-form sum of damped exponentials over pairs of
    ``H_eff`` eigenstates, so many states can be read out with one matrix
    product.
    """

    def __init__(self, m: Molecule, channel: str, dwell_s: float = DEFAULT_DWELL_S,
                 n_samples: int = DEFAULT_SAMPLES):
        if n_samples < 2:
            raise ReadoutError("need at least two samples")
        self.m = m
        self.channel = channel
        self.dwell_s = float(dwell_s)
        self.n_samples = int(n_samples)
        self.energies, self.basis = hermitian_eig(effective_hamiltonian(m))
        t = np.arange(self.n_samples) * self.dwell_s
        # rho~_{mn} evolves as exp(-i (E_m - E_n) t)
        omega = (self.energies[:, None] - self.energies[None, :]).ravel()
        detectors, kernels = [], []
        for k, op in detection_operator(m, channel):
            op_t = self.basis.conj().T @ op @ self.basis
            detectors.append(op_t.T.ravel())
            decay = 1.0 / m.spins[k].t2star_s
            kernels.append(np.exp(np.outer(-1j * omega, t) - decay * t[None, :]))
        self._detectors = np.array(detectors)  # (spins, d*d)
        self._kernel = np.concatenate(kernels)  # (spins*d*d, n)

    def fids(self, rhos: np.ndarray) -> np.ndarray:
        rhos = np.asarray(rhos, dtype=complex)
        single = rhos.ndim == 2
        if single:
            rhos = rhos[None]
        d = self.m.dim
        if rhos.shape[1:] != (d, d):
            raise ReadoutError(f"states have shape {rhos.shape[1:]}, expected {(d, d)}")
        rt = np.einsum("ai,nij,jb->nab", self.basis.conj().T, rhos, self.basis).reshape(len(rhos), -1)
        weights = (rt[:, None, :] * self._detectors[None]).reshape(len(rhos), -1)
        out = weights @ self._kernel
        return out[0] if single else out

    def fid(self, rho: np.ndarray) -> Fid:
        return Fid(self.channel, self.dwell_s, self.fids(rho))

    def spectra(self, rhos: np.ndarray) -> np.ndarray:
        return _transform(self.fids(rhos), self.dwell_s)

    @property
    def freqs_hz(self) -> np.ndarray:
        return spectrum_grid(self.n_samples, self.dwell_s)


def synthesize_fid(
    rho: np.ndarray,
    m: Molecule,
    channel: str,
    duration_s: float | None = None,
    dwell_s: float = DEFAULT_DWELL_S,
) -> Fid:
    """FID of ``rho`` on ``channel``, sampled at ``t_j = j*dwell`` up to ``duration_s``."""
    if duration_s is None:
        n = DEFAULT_SAMPLES
    else:
        if duration_s < dwell_s:
            raise ReadoutError("duration shorter than one dwell")
        n = max(2, int(round(duration_s / dwell_s)))
    return ChannelReadout(m, channel, dwell_s, n).fid(rho)


def spectrum_grid(n_samples: int, dwell_s: float) -> np.ndarray:
    return np.fft.fftshift(np.fft.fftfreq(n_samples, dwell_s))


def _transform(samples: np.ndarray, dwell_s: float) -> np.ndarray:
    s = np.array(samples, dtype=complex, copy=True)
    s[..., 0] *= 0.5
    return np.fft.fftshift(np.fft.fft(s, axis=-1), axes=-1) * dwell_s


def fourier(f: Fid) -> Spectrum:
    """Half-point-corrected DFT on the centred frequency grid.

    Scaled by the dwell time so that ``exp(2 pi i d t - lam t)`` becomes the
    complex Lorentzian ``1 / (lam + 2 pi i (f - d))``.
    """
    return Spectrum(spectrum_grid(len(f.samples), f.dwell_s), _transform(f.samples, f.dwell_s), f.channel)


def lorentzian(freq_hz, p: PeakModel):
    freq_hz = np.asarray(freq_hz, dtype=float)
    return p.amplitude * np.exp(1j * p.phase_rad) / (
        p.decay_rate_per_s + 2j * np.pi * (freq_hz - p.center_hz)
    )


def model_spectrum(freq_hz, peaks: Sequence[PeakModel]) -> np.ndarray:
    freq_hz = np.asarray(freq_hz, dtype=float)
    out = np.zeros(freq_hz.shape, dtype=complex)
    for p in peaks:
        out += lorentzian(freq_hz, p)
    return out


# --------------------------------------------------------------------------
# calibration fit


@dataclass(frozen=True)
class FitResult:
    peaks: tuple[PeakModel, ...]
    residual_norm: float
    iterations: int
    converged: bool
    diverged: bool = False


def _pack(peaks: Sequence[PeakModel]) -> np.ndarray:
    return np.array([[p.center_hz, p.decay_rate_per_s, p.amplitude, p.phase_rad] for p in peaks]).ravel()


def _unpack(x: np.ndarray) -> list[PeakModel]:
    out = []
    for c, lam, a, ph in x.reshape(-1, 4):
        if a < 0:
            a, ph = -a, ph + np.pi
        ph = float(np.angle(np.exp(1j * ph)))
        out.append(PeakModel(float(c), float(abs(lam)), float(a), ph))
    return out


def _model_from_params(freqs: np.ndarray, x: np.ndarray) -> np.ndarray:
    p = x.reshape(-1, 4)
    num = p[:, 2] * np.exp(1j * p[:, 3])
    den = np.abs(p[:, 1])[:, None] + 2j * np.pi * (freqs[None, :] - p[:, 0][:, None])
    return (num[:, None] / den).sum(axis=0)


def fit_calibration(
    spec: Spectrum,
    guesses: Sequence[PeakModel],
    max_iter: int = 500,
    rel_tol: float = 1e-10,
) -> FitResult:
    """Least-squares refinement of all peak parameters at once.

    Levenberg-Marquardt with central-difference derivatives. Stops when an
    accepted step lowers the objective by less than ``rel_tol`` (relative),
    after ``max_iter`` iterations, or when ten damped steps in a row fail to
    lower it, in which case the best parameters so far come back flagged
    ``diverged``.
    """
    if not guesses:
        raise ReadoutError("at least one peak guess is required")
    lo, hi = spec.freqs_hz[0], spec.freqs_hz[-1]
    for g in guesses:
        if not lo <= g.center_hz <= hi:
            raise ReadoutError(f"guess at {g.center_hz} Hz lies outside the spectral window")
    freqs = np.asarray(spec.freqs_hz, dtype=float)
    data = np.asarray(spec.amps, dtype=complex)

    def residual(x):
        r = data - _model_from_params(freqs, x)
        return np.concatenate([r.real, r.imag])

    x = _pack(guesses)
    r = residual(x)
    f = float(r @ r)
    scale_floor = 1e-30 + 1e-24 * float(np.vdot(data, data).real)
    if f <= scale_floor:
        return FitResult(tuple(_unpack(x)), float(np.sqrt(f)), 0, True)

    # finite-difference steps per parameter kind: Hz, 1/s, amplitude, rad
    kind_step = np.array([1e-6, 1e-6, 1e-7, 1e-7])
    mu = 1e-3
    converged = diverged = False
    it = 0
    for it in range(1, max_iter + 1):
        h = kind_step[np.arange(x.size) % 4] * np.maximum(1.0, np.abs(x))
        jac = np.empty((r.size, x.size))
        for i in range(x.size):
            dx = np.zeros_like(x)
            dx[i] = h[i]
            jac[:, i] = (residual(x + dx) - residual(x - dx)) / (2 * h[i])
        a = jac.T @ jac
        g = jac.T @ r
        diag = np.diag(a).copy()
        diag[diag == 0] = 1.0
        failures = 0
        while True:
            try:
                step = np.linalg.solve(a + mu * np.diag(diag), -g)
            except np.linalg.LinAlgError:
                step = np.linalg.lstsq(a + mu * np.diag(diag), -g, rcond=None)[0]
            x_new = x + step
            r_new = residual(x_new)
            f_new = float(r_new @ r_new)
            if f_new < f:
                mu = max(mu / 3, 1e-12)
                break
            mu *= 2
            failures += 1
            if failures >= 10:
                diverged = True
                break
        if diverged:
            break
        decrease = (f - f_new) / f
        x, r, f = x_new, r_new, f_new
        if decrease < rel_tol or f <= scale_floor:
            converged = True
            break
    return FitResult(tuple(_unpack(x)), float(np.sqrt(f)), it, converged, diverged)


# --------------------------------------------------------------------------
# deconvolution


@dataclass(frozen=True)
class Deconvolution:
    coefficients: np.ndarray
    residual_norm: np.ndarray | float
    condition_number: float


def peak_basis(freqs_hz: np.ndarray, peaks: Sequence[PeakModel]) -> np.ndarray:
    """Unit-amplitude, zero-phase Lorentzians at the calibrated lines, one per column."""
    if not peaks:
        raise ReadoutError("deconvolution needs at least one peak")
    return np.stack(
        [lorentzian(freqs_hz, PeakModel(p.center_hz, p.decay_rate_per_s)) for p in peaks], axis=1
    )


class Deconvolver:
    """Least-squares projection of spectra onto a fixed set of calibrated lines."""

    #: design matrices worse than this are rejected as rank deficient
    MAX_CONDITION = 1e10

    def __init__(self, freqs_hz: np.ndarray, peaks: Sequence[PeakModel]):
        self.peaks = tuple(peaks)
        self.basis = peak_basis(freqs_hz, self.peaks)
        sv = np.linalg.svd(self.basis, compute_uv=False)
        self.condition_number = float(sv[0] / sv[-1]) if sv[-1] > 0 else np.inf
        if not self.condition_number < self.MAX_CONDITION:
            raise ReadoutError(
                f"peak basis is rank deficient (condition number {self.condition_number:.3e})"
            )
        self._pinv = np.linalg.pinv(self.basis)

    def __call__(self, amps: np.ndarray) -> Deconvolution:
        amps = np.asarray(amps, dtype=complex)
        coeffs = amps @ self._pinv.T
        resid = amps - coeffs @ self.basis.T
        return Deconvolution(coeffs, np.linalg.norm(resid, axis=-1), self.condition_number)


def deconvolve(spec: Spectrum, peaks: Sequence[PeakModel]) -> Deconvolution:
    """Complex intensity of each calibrated line: ``|c|`` is the size, ``arg c`` the phase."""
    return Deconvolver(spec.freqs_hz, peaks)(spec.amps)


# --------------------------------------------------------------------------
# line prediction and calibration experiments


def predicted_peaks(
    m: Molecule,
    channel: str,
    rel_threshold: float = 1e-3,
    merge_hz: float = 1e-3,
    dwell_s: float = DEFAULT_DWELL_S,
) -> list[PeakModel]:
    """Lines the channel can show: eigenvalue differences of ``H_eff`` with a
    non-negligible detection matrix element, sorted by frequency.

    Each line gets the T2* of the spin that dominates its matrix element.
    """
    energies, basis = hermitian_eig(effective_hamiltonian(m))
    nyquist = 0.5 / dwell_s
    lines: list[tuple[float, float, float]] = []  # freq, weight, decay
    per_spin = []
    for k, op in detection_operator(m, channel):
        per_spin.append((k, np.abs(basis.conj().T @ op @ basis)))
    biggest = max(float(w.max()) for _, w in per_spin)
    d = len(energies)
    for a in range(d):
        for b in range(d):
            weights = [(w[b, a], k) for k, w in per_spin]
            total = sum(x for x, _ in weights)
            if total < rel_threshold * biggest:
                continue
            freq = -(energies[a] - energies[b]) / (2 * np.pi)
            if abs(freq) >= nyquist:
                continue
            k_dom = max(weights)[1]
            lines.append((freq, total, 1.0 / m.spins[k_dom].t2star_s))
    lines.sort()
    merged: list[list[float]] = []
    for freq, w, lam in lines:
        if merged and abs(freq - merged[-1][0]) < merge_hz:
            merged[-1][1] += w
            continue
        merged.append([freq, w, lam])
    return [PeakModel(f, lam) for f, _, lam in merged]


def calibration_state(m: Molecule, channel: str) -> np.ndarray:
    """Thermal deviation matrix after a pi/2 (+y) pulse on the channel."""
    seq = PulseSequence((HardPulse(channel, "+y", np.pi / 2),))
    return apply_sequence(thermal_deviation(m).matrix, seq, m)


#: lines weaker than this fraction of the strongest calibration line are not
#: fitted (their position and width are unidentifiable) and keep the predicted values
MIN_FIT_FRACTION = 0.01


@dataclass(frozen=True)
class Calibration:
    channel: str
    spectrum: Spectrum
    fit: FitResult
    peaks: tuple[PeakModel, ...]
    intensities: np.ndarray

    @property
    def peak_height(self) -> float:
        return float(np.max(np.abs(self.spectrum.amps)))


def calibrate(
    m: Molecule,
    channel: str,
    dwell_s: float = DEFAULT_DWELL_S,
    n_samples: int = DEFAULT_SAMPLES,
    guesses: Sequence[PeakModel] | None = None,
) -> Calibration:
    """Fit line positions and widths on a synthetic calibration spectrum.

    Guesses default to the predicted lines with amplitudes and phases seeded
    by a linear deconvolution. Lines too weak to identify are carried along
    with their predicted parameters.
    """
    readout = ChannelReadout(m, channel, dwell_s, n_samples)
    spec = Spectrum(readout.freqs_hz, readout.spectra(calibration_state(m, channel)), channel)
    fixed: list[PeakModel] = []
    if guesses is None:
        lines = predicted_peaks(m, channel, dwell_s=dwell_s)
        c = deconvolve(spec, lines).coefficients
        strong = np.abs(c) >= MIN_FIT_FRACTION * np.max(np.abs(c))
        guesses = [
            PeakModel(p.center_hz, p.decay_rate_per_s, float(abs(ci)), float(np.angle(ci)))
            for p, ci, keep in zip(lines, c, strong) if keep
        ]
        fixed = [p for p, keep in zip(lines, strong) if not keep]
    fit = fit_calibration(spec, guesses)
    peaks = tuple(sorted(fit.peaks + tuple(fixed), key=lambda p: p.center_hz))
    intensities = deconvolve(spec, peaks).coefficients
    return Calibration(channel, spec, fit, peaks, intensities)


# --------------------------------------------------------------------------
# files


def peaks_to_json(peaks: Sequence[PeakModel]) -> str:
    return json.dumps([asdict(p) for p in peaks], indent=2) + "\n"


def peaks_from_json(text: str) -> list[PeakModel]:
    items = json.loads(text)
    if not isinstance(items, list):
        raise ReadoutError("peak file must hold a JSON list")
    try:
        return [PeakModel(**p) for p in items]
    except TypeError as exc:
        raise ReadoutError(f"malformed peak entry: {exc}") from exc


def sidecar_path(path: Path) -> Path:
    return Path(path).with_suffix(".json")


def write_signal_csv(path: Path, values: np.ndarray, meta: dict) -> None:
    """``index,value_re,value_im`` rows plus a JSON sidecar with the metadata."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "value_re", "value_im"])
        for i, v in enumerate(values):
            w.writerow([i, repr(float(v.real)), repr(float(v.imag))])
    sidecar_path(path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def read_signal_csv(path: Path) -> tuple[np.ndarray, dict]:
    path = Path(path)
    values = []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["index", "value_re", "value_im"]:
            raise ReadoutError(f"{path}:1: expected header 'index,value_re,value_im'")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                idx, re_, im_ = row
                if int(idx) != len(values):
                    raise ValueError(f"index {idx} out of sequence")
                values.append(complex(float(re_), float(im_)))
            except ValueError as exc:
                raise ReadoutError(f"{path}:{lineno}: {exc}") from None
    side = sidecar_path(path)
    meta = json.loads(side.read_text()) if side.exists() else {}
    return np.array(values, dtype=complex), meta


def write_spectrum(path: Path, spec: Spectrum) -> None:
    meta = {
        "kind": "spectrum",
        "channel": spec.channel,
        "n": len(spec.amps),
        "f0_hz": float(spec.freqs_hz[0]),
        "df_hz": spec.spacing_hz,
    }
    write_signal_csv(path, spec.amps, meta)


def read_spectrum(path: Path) -> Spectrum:
    values, meta = read_signal_csv(path)
    if len(values) < 2:
        raise ReadoutError(f"{path}: a spectrum needs at least two points")
    try:
        if "dwell_s" in meta:
            freqs = spectrum_grid(len(values), float(meta["dwell_s"]))
        else:
            freqs = float(meta["f0_hz"]) + float(meta["df_hz"]) * np.arange(len(values))
    except KeyError as exc:
        raise ReadoutError(f"{sidecar_path(path)}: missing frequency grid field {exc}") from None
    return Spectrum(freqs, values, meta.get("channel", ""))


def write_fid(path: Path, f: Fid) -> None:
    write_signal_csv(path, f.samples, {"kind": "fid", "channel": f.channel, "dwell_s": f.dwell_s})


def read_fid(path: Path) -> Fid:
    values, meta = read_signal_csv(path)
    if "dwell_s" not in meta:
        raise ReadoutError(f"{sidecar_path(path)}: missing dwell_s")
    return Fid(meta.get("channel", ""), float(meta["dwell_s"]), values)
