import json

import numpy as np
import pytest

from nmrqsim.molecule import Molecule, Spin, effective_hamiltonian, tce_preset
from nmrqsim.qops import hermitian_eig
from nmrqsim.readout import (
    ChannelReadout,
    Deconvolver,
    Fid,
    PeakModel,
    ReadoutError,
    Spectrum,
    calibrate,
    calibration_state,
    deconvolve,
    fit_calibration,
    fourier,
    lorentzian,
    model_spectrum,
    peaks_from_json,
    peaks_to_json,
    predicted_peaks,
    read_fid,
    read_signal_csv,
    read_spectrum,
    spectrum_grid,
    synthesize_fid,
    write_fid,
    write_spectrum,
)

DWELL = 5e-4
N = 4096


def one_spin(offset, t2star=0.3):
    return Molecule((Spin("A", "H", offset, 5.0, 1.0, t2star),))


def exp_fid(freq, lam, n=N, dwell=DWELL, amp=1.0, phase=0.0):
    t = np.arange(n) * dwell
    return Fid("H", dwell, amp * np.exp(1j * phase) * np.exp(2j * np.pi * freq * t - lam * t))


def local_maxima(freqs, amps, rel=0.05):
    a = np.abs(amps)
    idx = [i for i in range(1, len(a) - 1) if a[i] >= a[i - 1] and a[i] > a[i + 1] and a[i] > rel * a.max()]
    return freqs[idx]


def test_single_spin_signal_convention():
    m = one_spin(37.0, 0.3)
    plus = 0.5 * np.ones((2, 2), dtype=complex)
    f = synthesize_fid(plus, m, "H", duration_s=0.5, dwell_s=1e-3)
    t = f.times
    assert len(f.samples) == 500
    assert np.max(abs(f.samples - np.exp(2j * np.pi * 37.0 * t) * np.exp(-t / 0.3))) < 1e-12


def test_positive_offset_gives_positive_line():
    m = one_spin(120.0)
    spec = fourier(synthesize_fid(0.5 * np.ones((2, 2)), m, "H"))
    assert spec.freqs_hz[np.argmax(abs(spec.amps))] == pytest.approx(120.0, abs=spec.spacing_hz)


def test_diagonal_state_is_silent():
    m = tce_preset()
    rho = np.diag(np.arange(8.0)).astype(complex)
    for ch in "HC":
        assert np.max(abs(synthesize_fid(rho, m, ch).samples)) < 1e-12


def test_fid_is_linear(rng):
    m = tce_preset()
    r = ChannelReadout(m, "C")
    a, b = (rng.standard_normal((8, 8)) + 1j * rng.standard_normal((8, 8)) for _ in range(2))
    lhs = r.fids(2.5 * a - 1.5j * b)
    rhs = 2.5 * r.fids(a) - 1.5j * r.fids(b)
    assert np.max(abs(lhs - rhs)) < 1e-12 * max(1, np.max(abs(lhs)))


def test_fid_errors():
    with pytest.raises(ReadoutError):
        synthesize_fid(np.eye(8), tce_preset(), "N")
    with pytest.raises(ReadoutError):
        synthesize_fid(np.eye(8), tce_preset(), "H", duration_s=1e-4)
    with pytest.raises(ReadoutError):
        Fid("H", 0.0, np.zeros(4))


def test_h_channel_lines_weak_coupling(tce_weak):
    r = ChannelReadout(tce_weak, "H")
    spec = r.spectra(calibration_state(tce_weak, "H"))
    found = local_maxima(r.freqs_hz, spec)
    assert len(found) == 4
    expected = [-106.5, -96.5, 96.5, 106.5]
    assert np.max(abs(np.sort(found) - expected)) <= 1 / (N * DWELL)


def test_lines_match_eigenvalue_differences(tce_full):
    energies = hermitian_eig(effective_hamiltonian(tce_full)).eigenvalues
    diffs = np.abs(np.subtract.outer(energies, energies).ravel()) / (2 * np.pi)
    for ch in "HC":
        r = ChannelReadout(tce_full, ch)
        found = local_maxima(r.freqs_hz, r.spectra(calibration_state(tce_full, ch)))
        assert len(found) > 0
        for f in found:
            assert np.min(abs(diffs - abs(f))) <= 1 / (N * DWELL)


def test_zero_signal_zero_spectrum():
    spec = fourier(Fid("H", DWELL, np.zeros(64, dtype=complex)))
    assert not np.any(spec.amps)
    assert len(spec.freqs_hz) == 64


def test_parseval_with_half_point():
    f = exp_fid(100.0, 4.0)
    spec = fourier(f)
    weighted = f.samples.copy()
    weighted[0] *= 0.5
    lhs = np.sum(abs(weighted) ** 2) * f.dwell_s
    rhs = np.sum(abs(spec.amps) ** 2) * spec.spacing_hz
    assert lhs == pytest.approx(rhs, rel=1e-9)


def test_grid_properties():
    g = spectrum_grid(N, DWELL)
    assert np.all(np.diff(g) > 0)
    assert np.allclose(np.diff(g), 1 / (N * DWELL))
    assert 0.0 in g


def test_exponential_peak_position():
    spec = fourier(exp_fid(100.0, 4.0))
    assert abs(spec.freqs_hz[np.argmax(abs(spec.amps))] - 100.0) <= spec.spacing_hz


def transform_deviation(n, dwell, lam=4.0, freq=50.0):
    spec = fourier(exp_fid(freq, lam, n=n, dwell=dwell))
    return np.max(abs(spec.amps - lorentzian(spec.freqs_hz, PeakModel(freq, lam))))


def test_transform_converges_to_lorentzian_under_dwell_refinement():
    # fixed 8.192 s record, so truncation is negligible and only sampling error remains
    devs = [transform_deviation(16384 * k, DWELL / k) for k in (1, 2, 4)]
    for a, b in zip(devs, devs[1:]):
        assert a / b == pytest.approx(2.0, rel=0.2)


def test_longer_record_never_worsens_transform():
    devs = [transform_deviation(n, DWELL) for n in (2048, 4096, 8192)]
    assert devs[0] > devs[1] >= devs[2] - 1e-12
    assert devs[-1] < 1e-3


def test_lorentzian_shape():
    p = PeakModel(10.0, 5.0, 2.0, 0.3)
    assert lorentzian(10.0, p) == pytest.approx(2.0 * np.exp(0.3j) / 5.0)
    hwhm = p.decay_rate_per_s / (2 * np.pi)
    assert abs(lorentzian(10.0 + hwhm, p)) ** 2 == pytest.approx(abs(lorentzian(10.0, p)) ** 2 / 2)
    assert (1 / 0.23) / (2 * np.pi) == pytest.approx(0.692, abs=1e-3)
    with pytest.raises(ReadoutError):
        PeakModel(0.0, 0.0)


def test_fit_single_peak_recovery():
    truth = PeakModel(73.3, 1 / 0.23, 3.0, 0.4)
    spec = fourier(exp_fid(truth.center_hz, truth.decay_rate_per_s, amp=3.0, phase=0.4))
    guess = PeakModel(75.2, truth.decay_rate_per_s * 1.2, 2.0, 0.0)
    res = fit_calibration(spec, [guess])
    p = res.peaks[0]
    assert res.converged and not res.diverged
    assert abs(p.center_hz - truth.center_hz) < 0.01
    assert p.decay_rate_per_s == pytest.approx(truth.decay_rate_per_s, rel=1e-3)


def test_fit_exact_guess_takes_no_iterations():
    truth = [PeakModel(-20.0, 3.0, 1.0, 0.2), PeakModel(40.0, 2.0, 0.5, -1.0)]
    freqs = spectrum_grid(N, DWELL)
    spec = Spectrum(freqs, model_spectrum(freqs, truth))
    res = fit_calibration(spec, truth)
    assert res.iterations == 0 and res.residual_norm < 1e-12
    assert res.peaks == tuple(truth)


def test_fit_not_worse_than_truth():
    truth = PeakModel(12.0, 2.5, 1.0, 0.0)
    spec = fourier(exp_fid(truth.center_hz, truth.decay_rate_per_s))
    res = fit_calibration(spec, [PeakModel(12.5, 3.0, 0.8, 0.1)])
    truth_resid = np.linalg.norm(spec.amps - lorentzian(spec.freqs_hz, truth))
    assert res.residual_norm <= truth_resid + 1e-10


def test_fit_guards():
    spec = fourier(exp_fid(10.0, 2.0))
    with pytest.raises(ReadoutError):
        fit_calibration(spec, [])
    with pytest.raises(ReadoutError):
        fit_calibration(spec, [PeakModel(5000.0, 2.0)])


@pytest.mark.parametrize("channel, spins", [("H", [0]), ("C", [1, 2])])
def test_calibration_recovers_t2star(tce_weak, channel, spins):
    cal = calibrate(tce_weak, channel)
    assert cal.fit.converged
    for p in cal.peaks:
        k = min(spins, key=lambda s: abs(p.decay_rate_per_s - 1 / tce_weak.spins[s].t2star_s))
        assert p.t2star_s == pytest.approx(tce_weak.spins[k].t2star_s, rel=0.01)


def test_predicted_peaks(tce_weak):
    h = predicted_peaks(tce_weak, "H")
    assert [p.center_hz for p in h] == pytest.approx([-106.5, -96.5, 96.5, 106.5])
    c = predicted_peaks(tce_weak, "C")
    assert [p.center_hz for p in c] == pytest.approx([-477.5, -375.5, -274.5, -172.5, 269, 279, 371, 381])
    assert {round(p.t2star_s, 2) for p in c} == {0.41, 0.23}


def test_deconvolve_exact():
    freqs = spectrum_grid(N, DWELL)
    p1, p2 = PeakModel(-30.0, 3.0), PeakModel(45.0, 2.0)
    amps = 2.0 * np.exp(1j * np.pi / 4) * lorentzian(freqs, p1) + 0.5 * lorentzian(freqs, p2)
    d = deconvolve(Spectrum(freqs, amps), [p1, p2])
    assert np.max(abs(d.coefficients - [2.0 * np.exp(1j * np.pi / 4), 0.5])) < 1e-9
    assert d.residual_norm < 1e-9 and np.isfinite(d.condition_number)


def test_deconvolve_with_noise():
    rng = np.random.default_rng(7)
    freqs = spectrum_grid(N, DWELL)
    peaks = [PeakModel(-30.0, 3.0), PeakModel(45.0, 2.0)]
    truth = np.array([2.0, 0.5j])
    clean = sum(c * lorentzian(freqs, p) for c, p in zip(truth, peaks))
    height = np.max(abs(clean))
    dec = Deconvolver(freqs, peaks)
    errs = []
    for _ in range(100):
        noise = 0.005 * height / np.sqrt(2) * (rng.standard_normal(N) + 1j * rng.standard_normal(N))
        errs.append(abs(dec(clean + noise).coefficients - truth) / abs(truth))
    assert np.all(np.mean(errs, axis=0) < 0.01)


def test_deconvolve_rank_deficient():
    freqs = spectrum_grid(N, DWELL)
    p = PeakModel(10.0, 2.0)
    with pytest.raises(ReadoutError, match="condition number"):
        deconvolve(Spectrum(freqs, lorentzian(freqs, p)), [p, p])
    with pytest.raises(ReadoutError):
        deconvolve(Spectrum(freqs, lorentzian(freqs, p)), [])


def test_empty_region_only_noise():
    rng = np.random.default_rng(3)
    freqs = spectrum_grid(N, DWELL)
    p = PeakModel(10.0, 2.0)
    noise = 1e-3 * (rng.standard_normal(N) + 1j * rng.standard_normal(N))
    d = deconvolve(Spectrum(freqs, lorentzian(freqs, p) + noise), [p])
    assert d.residual_norm == pytest.approx(np.linalg.norm(noise), rel=0.05)


def test_spectrum_csv_round_trip(tmp_path):
    spec = fourier(exp_fid(10.0, 2.0, n=64))
    write_spectrum(tmp_path / "s.csv", spec)
    again = read_spectrum(tmp_path / "s.csv")
    assert np.array_equal(again.amps, spec.amps)
    assert np.allclose(again.freqs_hz, spec.freqs_hz)
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0] == "index,value_re,value_im" and lines[1].startswith("0,")
    assert json.loads((tmp_path / "s.json").read_text())["n"] == 64


def test_fid_csv_round_trip(tmp_path):
    f = exp_fid(10.0, 2.0, n=32)
    write_fid(tmp_path / "f.csv", f)
    again = read_fid(tmp_path / "f.csv")
    assert np.array_equal(again.samples, f.samples) and again.dwell_s == f.dwell_s


def test_malformed_csv_reports_line(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("index,value_re,value_im\n0,1.0,0.0\n1,abc,0.0\n")
    with pytest.raises(ReadoutError, match=":3:"):
        read_signal_csv(path)
    path.write_text("i,re\n")
    with pytest.raises(ReadoutError, match=":1:"):
        read_signal_csv(path)


def test_peaks_json_round_trip():
    peaks = [PeakModel(1.0, 2.0, 3.0, 0.5)]
    assert peaks_from_json(peaks_to_json(peaks)) == peaks
    with pytest.raises(ReadoutError):
        peaks_from_json('{"center_hz": 1}')
