import numpy as np
import pytest

from nmrqsim.qops import (
    NotHermitianError,
    NotUnitaryError,
    conjugate,
    distance_up_to_phase,
    embed_single,
    expm_hermitian,
    from_json_dict,
    hermitian_eig,
    is_unitary,
    pauli,
    pauli_string,
    tensor,
    to_json_dict,
)


def random_hermitian(rng, d):
    a = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
    return a + a.conj().T


def random_unitary(rng, d):
    q, r = np.linalg.qr(rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d)))
    return q * (np.diag(r) / abs(np.diag(r)))


def test_pauli_algebra():
    x, y, z = pauli("X"), pauli("Y"), pauli("Z")
    assert np.array_equal(z, np.diag([1, -1]))
    assert np.allclose(x @ x, np.eye(2))
    assert np.allclose(x @ y - y @ x, 2j * z)
    for p in (x, y, z):
        assert abs(np.trace(p)) == 0


def test_pauli_rejects_unknown_axis():
    with pytest.raises(ValueError):
        pauli("W")


def test_tensor_basic():
    assert np.array_equal(tensor(np.eye(2), np.eye(2)), np.eye(4))
    assert np.array_equal(np.diag(tensor(pauli("Z"), pauli("Z"))).real, [1, -1, -1, 1])
    assert tensor(np.eye(2), np.eye(4)).shape == (8, 8)


def test_tensor_matches_kron(rng):
    a = rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2))
    b = rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4))
    t = tensor(a, b)
    for i, j, k, l in [(0, 1, 2, 3), (1, 0, 3, 3), (1, 1, 0, 2)]:
        assert t[i * 4 + k, j * 4 + l] == a[i, j] * b[k, l]
    assert np.array_equal(t, np.kron(a, b))


def test_embed_single():
    z = pauli("Z")
    assert np.array_equal(embed_single(z, 0, 3), np.kron(z, np.eye(4)))
    assert np.array_equal(np.diag(embed_single(z, 2, 3)).real, [1, -1, 1, -1, 1, -1, 1, -1])
    assert np.trace(embed_single(pauli("X"), 1, 3)) == 0
    with pytest.raises(IndexError):
        embed_single(z, 3, 3)


def test_pauli_string():
    assert np.array_equal(pauli_string("XYZ"), np.kron(np.kron(pauli("X"), pauli("Y")), pauli("Z")))


def test_hermitian_eig_orders_descending():
    vals, _ = hermitian_eig(np.diag([3.0, 1.0, 2.0]))
    assert np.allclose(vals, [3, 2, 1])


def test_hermitian_eig_thermal_integers():
    rho = 4 * (4 * embed_single(pauli("Z"), 0, 3) + embed_single(pauli("Z"), 1, 3) + embed_single(pauli("Z"), 2, 3))
    vals, vecs = hermitian_eig(rho)
    assert np.allclose(vals, [24, 16, 16, 8, -8, -16, -16, -24], atol=1e-9)
    # degenerate cluster ordered by first nonzero component index
    assert np.argmax(abs(vecs[:, 1])) < np.argmax(abs(vecs[:, 2]))


def test_hermitian_eig_projector():
    psi = np.zeros(8)
    psi[0] = psi[7] = 2**-0.5
    vals, _ = hermitian_eig(np.outer(psi, psi))
    assert np.allclose(vals, [1] + [0] * 7, atol=1e-12)


def test_hermitian_eig_reconstruction_and_phase(rng):
    for d in (2, 4, 8, 16):
        m = random_hermitian(rng, d)
        vals, vecs = hermitian_eig(m)
        assert np.max(abs(vecs @ np.diag(vals) @ vecs.conj().T - m)) < 1e-9 * np.max(abs(m))
        assert np.max(abs(m @ vecs - vecs * vals)) < 1e-10 * np.linalg.norm(m, 2)
        assert is_unitary(vecs)
        for j in range(d):
            k = np.flatnonzero(abs(vecs[:, j]) > 1e-9)[0]
            assert vecs[k, j].real > 0 and abs(vecs[k, j].imag) < 1e-12


def test_hermitian_eig_rejects_non_hermitian():
    with pytest.raises(NotHermitianError, match="max"):
        hermitian_eig(np.array([[0, 1], [0, 0]], dtype=complex))


def test_expm_hermitian():
    h = np.diag([1.0, -2.0]) + 0.3 * pauli("X")
    assert np.allclose(expm_hermitian(h, 0), np.eye(2))
    assert np.max(abs(expm_hermitian(np.pi / 2 * pauli("X"), 1) + 1j * pauli("X"))) < 1e-12
    assert np.allclose(expm_hermitian(h, 0.3) @ expm_hermitian(h, 0.5), expm_hermitian(h, 0.8), atol=1e-10)


def test_conjugate(rng):
    rho = random_hermitian(rng, 8)
    u = random_unitary(rng, 8)
    assert np.allclose(conjugate(rho, np.eye(8)), rho)
    out = conjugate(rho, u)
    assert abs(np.trace(out) - np.trace(rho)) < 1e-12
    assert np.allclose(hermitian_eig(out).eigenvalues, hermitian_eig(rho).eigenvalues, atol=1e-10)
    zero = np.diag([1.0, 0.0]).astype(complex)
    assert np.allclose(conjugate(zero, pauli("X")), np.diag([0, 1]))
    with pytest.raises(ValueError):
        conjugate(rho, np.eye(4))


def test_distance_up_to_phase(rng):
    u = random_unitary(rng, 4)
    assert distance_up_to_phase(u, u) < 1e-12
    assert distance_up_to_phase(u, np.exp(1j * np.pi / 3) * u) < 1e-12
    assert distance_up_to_phase(np.eye(2), pauli("X")) >= 1


def test_distance_local_z_removes_input_phases(rng):
    u = random_unitary(rng, 8)
    rz = np.diag(np.exp(-0.5j * np.array([1, -1]) * 0.7))
    local = np.kron(np.kron(rz, np.eye(2)), np.diag(np.exp(-0.5j * np.array([1, -1]) * -1.1)))
    v = u @ local
    assert distance_up_to_phase(u, v) > 0.1
    assert distance_up_to_phase(u, v, "global-and-local-z") < 1e-7


def test_distance_rejects_non_unitary():
    with pytest.raises(NotUnitaryError):
        distance_up_to_phase(np.eye(2), 2 * np.eye(2))


def test_matrix_json_round_trip(rng):
    m = random_hermitian(rng, 4)
    d = to_json_dict(m)
    assert d["dim"] == 4 and len(d["re"]) == 16
    assert d["re"][1] == m[0, 1].real
    assert np.array_equal(from_json_dict(d), m)
    with pytest.raises(ValueError):
        from_json_dict({"dim": 3, "re": [0] * 4, "im": [0] * 4})
