"""Dense complex linear algebra for small spin systems.

Matrices are plain ``numpy`` arrays of dtype ``complex128``. Tensor-factor
order follows the molecule's spin order, index 0 being the leftmost factor,
so that basis state ``|b0 b1 b2>`` sits at row ``b0*4 + b1*2 + b2``.
"""

from __future__ import annotations

import functools
from typing import Literal, NamedTuple

import numpy as np
from scipy.optimize import minimize

from . import constants as tol

_PAULI = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}


class EigenSystem(NamedTuple):
    """Eigenvalues sorted descending, eigenvectors as matching columns."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray


class NotHermitianError(ValueError):
    pass


class NotUnitaryError(ValueError):
    pass


def pauli(axis: str) -> np.ndarray:
    """Return the 2x2 identity or Pauli matrix for ``axis`` in ``IXYZ``."""
    try:
        return _PAULI[axis.upper()].copy()
    except KeyError:
        raise ValueError(f"unknown Pauli axis {axis!r}") from None


def tensor(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Kronecker product of two square matrices."""
    (p, q), (r, s) = a.shape, b.shape
    return (a[:, None, :, None] * b[None, :, None, :]).reshape(p * r, q * s)


def tensor_all(ops) -> np.ndarray:
    return functools.reduce(tensor, ops, np.ones((1, 1), dtype=complex))


def embed_single(op: np.ndarray, spin_index: int, n_spins: int) -> np.ndarray:
    """Place a one-spin operator at ``spin_index`` with identities elsewhere."""
    if not 0 <= spin_index < n_spins:
        raise IndexError(f"spin index {spin_index} out of range for {n_spins} spins")
    left = np.eye(2**spin_index)
    right = np.eye(2 ** (n_spins - spin_index - 1))
    return np.kron(np.kron(left, op), right).astype(complex)


def pauli_string(labels: str) -> np.ndarray:
    """Tensor product of Pauli matrices, e.g. ``pauli_string("XYY")``."""
    return tensor_all(pauli(c) for c in labels)


def max_abs(m: np.ndarray) -> float:
    return float(np.max(np.abs(m))) if m.size else 0.0


def hermiticity_error(m: np.ndarray) -> float:
    return max_abs(m - m.conj().T)


def unitarity_error(u: np.ndarray) -> float:
    return max_abs(u.conj().T @ u - np.eye(u.shape[0]))


def is_hermitian(m: np.ndarray, atol: float = tol.HERMITIAN) -> bool:
    return hermiticity_error(m) <= atol


def is_unitary(u: np.ndarray, atol: float = tol.UNITARY) -> bool:
    return u.ndim == 2 and u.shape[0] == u.shape[1] and unitarity_error(u) < atol


def _check_square(m: np.ndarray) -> None:
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {m.shape}")


def _first_nonzero(v: np.ndarray) -> int:
    idx = np.flatnonzero(np.abs(v) > tol.ZERO_COMPONENT)
    return int(idx[0]) if idx.size else 0


def hermitian_eig(m: np.ndarray) -> EigenSystem:
    """Diagonalize a Hermitian matrix.

    Eigenvalues come back in descending order. Inside a degenerate cluster the
    eigenvectors are ordered by descending magnitude of their first nonzero
    component, ties broken by that component's index, and every eigenvector is
    phased so that its first nonzero component is real and positive.
    """
    m = np.asarray(m, dtype=complex)
    _check_square(m)
    asym = hermiticity_error(m)
    scale = max(1.0, max_abs(m))
    if asym > tol.HERMITIAN_INPUT * scale:
        raise NotHermitianError(f"matrix is not Hermitian: max |M - M^dag| = {asym:.3e}")
    h = 0.5 * (m + m.conj().T)
    vals, vecs = np.linalg.eigh(h)
    vals = vals[::-1].copy()
    vecs = vecs[:, ::-1].copy()

    for j in range(vecs.shape[1]):
        k = _first_nonzero(vecs[:, j])
        ph = vecs[k, j] / abs(vecs[k, j]) if abs(vecs[k, j]) > 0 else 1.0
        vecs[:, j] /= ph

    cluster_tol = tol.DEGENERACY * scale
    order = []
    start = 0
    n = len(vals)
    while start < n:
        stop = start + 1
        while stop < n and vals[start] - vals[stop] < cluster_tol:
            stop += 1
        block = list(range(start, stop))
        if len(block) > 1:
            def key(j):
                k = _first_nonzero(vecs[:, j])
                return (-round(abs(vecs[k, j]), 9), k)

            block.sort(key=key)
        order.extend(block)
        start = stop
    return EigenSystem(vals[order], vecs[:, order])


def expm_hermitian(h: np.ndarray, t: float = 1.0) -> np.ndarray:
    """Return ``exp(-i h t)`` built from the eigendecomposition of ``h``."""
    vals, vecs = hermitian_eig(h)
    return (vecs * np.exp(-1j * vals * t)) @ vecs.conj().T


def conjugate(rho: np.ndarray, u: np.ndarray) -> np.ndarray:
    """``U rho U^dag``."""
    if rho.shape != u.shape:
        raise ValueError(f"dimension mismatch: rho {rho.shape} vs U {u.shape}")
    return u @ rho @ u.conj().T


def _z_phase_signs(n_spins: int) -> np.ndarray:
    # row b, column k: +1 if bit k of basis state b is 0 else -1
    bits = (np.arange(2**n_spins)[:, None] >> np.arange(n_spins - 1, -1, -1)) & 1
    return 1 - 2 * bits


def distance_up_to_phase(
    u: np.ndarray,
    v: np.ndarray,
    mode: Literal["global-only", "global-and-local-z"] = "global-only",
) -> float:
    """Max-entry distance between two unitaries modulo irrelevant phases.

    ``global-only`` aligns the global phase on the largest-magnitude entry of
    ``v``. ``global-and-local-z`` additionally allows a product of per-spin
    z-rotations applied *before* ``v`` (i.e. on the input side), which is the
    freedom that cannot be seen when the unitary acts on ``|0...0>``.
    """
    u = np.asarray(u, dtype=complex)
    v = np.asarray(v, dtype=complex)
    if u.shape != v.shape:
        raise ValueError(f"dimension mismatch: {u.shape} vs {v.shape}")
    for name, w in (("u", u), ("v", v)):
        if not is_unitary(w, atol=1e-6):
            raise NotUnitaryError(f"{name} is not unitary (error {unitarity_error(w):.2e})")

    def global_aligned(a, b):
        i = np.unravel_index(np.argmax(np.abs(b)), b.shape)
        phase = np.angle(a[i]) - np.angle(b[i])
        return max_abs(a - np.exp(1j * phase) * b)

    d_global = global_aligned(u, v)
    if mode == "global-only":
        return d_global
    if mode != "global-and-local-z":
        raise ValueError(f"unknown mode {mode!r}")

    dim = u.shape[0]
    n = int(round(np.log2(dim)))
    signs = _z_phase_signs(n)

    def applied(angles):
        # diag of prod_k Rz_k(angle_k): exp(-i angle_k s_k / 2)
        return v * np.exp(-0.5j * signs @ angles)[None, :]

    def smooth(angles):
        return dim - abs(np.trace(u.conj().T @ applied(angles)))

    # initial guess: per-column phase offsets fitted linearly onto the spin signs
    col_overlap = np.einsum("ij,ij->j", u.conj(), v)
    weights = np.abs(col_overlap)
    col_phase = -np.angle(col_overlap)
    design = np.hstack([np.ones((dim, 1)), -0.5 * signs])
    sw = np.sqrt(weights + 1e-12)[:, None]
    guess = np.linalg.lstsq(design * sw, col_phase * sw[:, 0], rcond=None)[0][1:]
    best = d_global
    for start in (np.zeros(n), np.mod(guess + np.pi, 2 * np.pi) - np.pi):
        res = minimize(smooth, start, method="BFGS", options={"gtol": 1e-12})
        best = min(best, global_aligned(u, applied(res.x)))
    return best


def to_json_dict(m: np.ndarray) -> dict:
    """Serialize a square complex matrix as ``{"dim", "re", "im"}`` (row-major)."""
    m = np.asarray(m, dtype=complex)
    _check_square(m)
    return {
        "dim": int(m.shape[0]),
        "re": [float(x) for x in m.real.ravel()],
        "im": [float(x) for x in m.imag.ravel()],
    }


def from_json_dict(d: dict) -> np.ndarray:
    n = int(d["dim"])
    re = np.asarray(d["re"], dtype=float)
    im = np.asarray(d["im"], dtype=float)
    if re.size != n * n or im.size != n * n:
        raise ValueError(f"matrix payload has {re.size}/{im.size} entries, expected {n * n}")
    return (re + 1j * im).reshape(n, n)
