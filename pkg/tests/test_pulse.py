import numpy as np
import pytest

from nmrqsim.molecule import Coupling, Molecule, Spin, tce_preset
from nmrqsim.pulse import (
    Delay,
    HardPulse,
    NoiseConfig,
    PulseError,
    PulseSequence,
    apply_sequence,
    element_propagator,
    sequence_propagator,
    total_duration,
)
from nmrqsim.qops import expm_hermitian, hermitian_eig, pauli


def ket_projector(bits: str) -> np.ndarray:
    v = np.zeros(2 ** len(bits))
    v[int(bits, 2)] = 1
    return np.outer(v, v).astype(complex)


def single(offset=0.0, t2=0.5):
    return Molecule((Spin("A", "H", offset, 5.0, t2, t2),))


def pair(j=100.0):
    spins = (Spin("A", "H", 0.0, 5.0, 1.0, 0.5), Spin("B", "C", 0.0, 5.0, 1.0, 0.5))
    return Molecule(spins, (Coupling("A", "B", j),))


def test_element_validation():
    with pytest.raises(PulseError):
        HardPulse("H", "z", 1.0)
    with pytest.raises(PulseError):
        HardPulse("H", "+x", 7.0)
    with pytest.raises(PulseError):
        Delay(0.0)
    with pytest.raises(PulseError):
        element_propagator(HardPulse("N", "+x", 1.0), tce_preset())


def test_pi_pulse_flips_proton():
    m = tce_preset()
    u = element_propagator(HardPulse("H", "+x", np.pi), m)
    out = u @ ket_projector("000") @ u.conj().T
    assert np.allclose(out, ket_projector("100"), atol=1e-12)


def test_channel_pulse_hits_both_carbons():
    m = tce_preset()
    u = element_propagator(HardPulse("C", "+y", np.pi / 2), m)
    ry = expm_hermitian(np.pi / 4 * pauli("Y"), 1)
    assert np.allclose(u, np.kron(np.eye(2), np.kron(ry, ry)), atol=1e-12)


def test_negative_axis_is_inverse():
    m = single()
    a = element_propagator(HardPulse("A", "+x", 0.4), m)
    b = element_propagator(HardPulse("A", "-x", 0.4), m)
    assert np.allclose(a @ b, np.eye(2))


def test_coupling_delay_is_zz_quarter_turn():
    j = 100.0
    u = element_propagator(Delay(1 / (2 * j)), pair(j))
    zz = np.kron(pauli("Z"), pauli("Z"))
    assert np.allclose(u, expm_hermitian(np.pi / 4 * zz, 1), atol=1e-12)


def test_sequence_propagator_order_and_identity():
    m = single()
    assert np.allclose(sequence_propagator(PulseSequence(), m), np.eye(2))
    half = HardPulse("A", "+x", np.pi / 2)
    full = element_propagator(HardPulse("A", "+x", np.pi), m)
    assert np.max(abs(sequence_propagator(PulseSequence((half, half)), m) - full)) < 1e-12
    # first element acts first
    seq = PulseSequence((HardPulse("A", "+x", np.pi / 2), HardPulse("A", "+y", np.pi / 2)))
    ux = element_propagator(seq.elements[0], m)
    uy = element_propagator(seq.elements[1], m)
    assert np.allclose(sequence_propagator(seq, m), uy @ ux)


def test_total_duration():
    assert total_duration(PulseSequence()) == 0
    s = PulseSequence((Delay(2.46e-3), HardPulse("H", "+x", 1.0), Delay(2.45e-3)))
    assert total_duration(s) == pytest.approx(4.91e-3)


def test_sequence_json_round_trip():
    s = PulseSequence((HardPulse("C1", "-y", 0.25), Delay(1e-3)))
    assert PulseSequence.from_json(s.to_json()) == s
    assert s.to_list()[1] == {"delay": {"duration_s": 1e-3}}
    with pytest.raises(PulseError):
        PulseSequence.from_list([{"wait": {}}])


def test_dephasing_leaves_diagonal_states():
    rho = np.diag([0.7, 0.3]).astype(complex)
    out = apply_sequence(rho, PulseSequence((Delay(0.1),)), single(), NoiseConfig(True))
    assert np.allclose(out, rho)


def test_dephasing_single_spin_rate():
    t2, t = 0.5, 0.2
    plus = 0.5 * np.ones((2, 2), dtype=complex)
    out = apply_sequence(plus, PulseSequence((Delay(t),)), single(t2=t2), NoiseConfig(True))
    assert out[0, 1] == pytest.approx(0.5 * np.exp(-t / t2), abs=1e-12)


def test_ghz_coherence_damps_with_all_three_rates():
    m = tce_preset().without_couplings()
    m = Molecule(tuple(Spin(s.label, s.channel, 0.0, s.t1_s, s.t2_s, s.t2star_s) for s in m.spins))
    rho = np.zeros((8, 8), dtype=complex)
    rho[0, 7] = rho[7, 0] = 0.5
    t = 1e-3
    out = apply_sequence(rho, PulseSequence((Delay(t),)), m, NoiseConfig(True))
    rate = sum(1 / s.t2_s for s in m.spins)
    assert out[0, 7] == pytest.approx(0.5 * np.exp(-t * rate), abs=1e-14)
    out_star = apply_sequence(rho, PulseSequence((Delay(t),)), m, NoiseConfig(True, "t2star", 2.0))
    rate_star = 2 * sum(1 / s.t2star_s for s in m.spins)
    assert out_star[0, 7] == pytest.approx(0.5 * np.exp(-t * rate_star), abs=1e-14)


def test_apply_sequence_dimension_check():
    with pytest.raises(PulseError):
        apply_sequence(np.eye(4), PulseSequence(), single())


def test_noiseless_preserves_spectrum(rng):
    m = tce_preset()
    a = rng.standard_normal((8, 8)) + 1j * rng.standard_normal((8, 8))
    rho = a + a.conj().T
    s = PulseSequence((HardPulse("H", "+y", 0.7), Delay(3e-3), HardPulse("C", "-x", 1.1), Delay(1e-3)))
    out = apply_sequence(rho, s, m)
    assert abs(np.trace(out) - np.trace(rho)) < 1e-12
    assert np.allclose(hermitian_eig(out).eigenvalues, hermitian_eig(rho).eigenvalues, atol=1e-9)
