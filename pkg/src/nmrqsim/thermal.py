"""Thermal deviation matrices and pseudo-pure state extraction.

The extraction works on a full tomographic reconstruction: a near-unitary
preparation keeps the eigenvalue structure of the thermal input, so the
output eigenvector holding the same eigenvalue rank as ``|0...0>`` did in the
input is the image of ``|0...0>``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np

from . import constants as tol
from .molecule import Molecule
from .qops import embed_single, from_json_dict, hermitian_eig, pauli, to_json_dict

#: integer stand-ins for the gyromagnetic ratios, gamma_H / gamma_C ~ 3.98
CHANNEL_WEIGHTS = {"H": 4.0, "C": 1.0}


class ExtractionError(ValueError):
    pass


@dataclass(frozen=True)
class DeviationMatrix:
    matrix: np.ndarray
    weights: tuple[float, ...]
    scale: float = 1.0


def thermal_deviation(
    m: Molecule,
    weights: Sequence[float] | None = None,
    scale: float = 4.0,
) -> DeviationMatrix:
    """``scale * sum_k weight_k Z_k``; default weights are 4 per proton, 1 per carbon."""
    if weights is None:
        weights = [CHANNEL_WEIGHTS[s.channel] for s in m.spins]
    weights = tuple(float(w) for w in weights)
    if len(weights) != m.n_spins:
        raise ValueError(f"{len(weights)} weights given for {m.n_spins} spins")
    z = pauli("Z")
    rho = sum(w * embed_single(z, k, m.n_spins) for k, w in enumerate(weights))
    return DeviationMatrix(scale * rho, weights, float(scale))


def pseudo_pure(p: float, n_spins: int) -> np.ndarray:
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"polarization p={p} outside [0, 1]")
    dim = 2**n_spins
    rho = (1 - p) / dim * np.eye(dim, dtype=complex)
    rho[0, 0] += p
    return rho


def _as_matrix(rho) -> np.ndarray:
    return rho.matrix if isinstance(rho, DeviationMatrix) else np.asarray(rho, dtype=complex)


@dataclass(frozen=True)
class UnitarityDiagnostic:
    eigs_in: np.ndarray
    eigs_out: np.ndarray
    max_abs_mismatch: float

    @property
    def slot_mismatch(self) -> np.ndarray:
        return np.abs(self.eigs_in - self.eigs_out)

    def to_dict(self) -> dict:
        return {
            "eigs_in": self.eigs_in.tolist(),
            "eigs_out": self.eigs_out.tolist(),
            "max_abs_mismatch": self.max_abs_mismatch,
        }


def compare_spectra(eigs_in: Sequence[float], eigs_out: Sequence[float]) -> UnitarityDiagnostic:
    """Slot-wise comparison of two eigenvalue lists after sorting both descending."""
    a = np.sort(np.asarray(eigs_in, dtype=float))[::-1]
    b = np.sort(np.asarray(eigs_out, dtype=float))[::-1]
    if a.shape != b.shape:
        raise ValueError(f"eigenvalue lists differ in length: {a.size} vs {b.size}")
    return UnitarityDiagnostic(a, b, float(np.max(np.abs(a - b))))


def unitarity_diagnostic(rho_in, rho_out) -> UnitarityDiagnostic:
    a, b = _as_matrix(rho_in), _as_matrix(rho_out)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return compare_spectra(hermitian_eig(a).eigenvalues, hermitian_eig(b).eigenvalues)


@dataclass(frozen=True)
class ExtractionReport:
    input_eigenvalues: np.ndarray
    reference_eigenvalues: np.ndarray
    max_mismatch: float
    selected_rank: int
    selected_eigenvalue: float
    extracted_state: np.ndarray

    @property
    def state_vector(self) -> np.ndarray:
        vals, vecs = hermitian_eig(self.extracted_state)
        return vecs[:, 0]

    def to_dict(self) -> dict:
        return {
            "input_eigenvalues": self.input_eigenvalues.tolist(),
            "reference_eigenvalues": self.reference_eigenvalues.tolist(),
            "max_mismatch": self.max_mismatch,
            "selected_rank": self.selected_rank,
            "selected_eigenvalue": self.selected_eigenvalue,
            "extracted_state": to_json_dict(self.extracted_state),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExtractionReport":
        return cls(
            np.asarray(d["input_eigenvalues"]),
            np.asarray(d["reference_eigenvalues"]),
            float(d["max_mismatch"]),
            int(d["selected_rank"]),
            float(d["selected_eigenvalue"]),
            from_json_dict(d["extracted_state"]),
        )


def ground_rank(rho_ref) -> int:
    """Rank (descending order) of the eigenvalue carried by ``|0...0>``."""
    _, vecs = hermitian_eig(_as_matrix(rho_ref))
    return int(np.argmax(np.abs(vecs[0, :])))


def _gap(vals: np.ndarray, rank: int) -> float:
    neighbours = [vals[r] for r in (rank - 1, rank + 1) if 0 <= r < len(vals)]
    return min(abs(vals[rank] - x) for x in neighbours) if neighbours else np.inf


def extract_pseudo_pure(
    rho_out,
    rho_ref,
    selector: Literal["match-ground-rank", "largest", "smallest"] = "match-ground-rank",
) -> ExtractionReport:
    """Pick the output eigenvector that carries the ``|0...0>`` population.

    ``match-ground-rank`` follows ``|0...0>`` through whatever sign convention
    the reference uses; ``largest``/``smallest`` force the extreme eigenvalues.
    Refuses when the tracked eigenvalue is not isolated: degenerate in the
    reference, or closer to a neighbour in the output than ten times its own
    drift from the reference.
    """
    out = _as_matrix(rho_out)
    ref = _as_matrix(rho_ref)
    if out.shape != ref.shape:
        raise ValueError(f"dimension mismatch: {out.shape} vs {ref.shape}")
    ref_vals = hermitian_eig(ref).eigenvalues
    out_vals, out_vecs = hermitian_eig(out)
    if selector == "match-ground-rank":
        rank = ground_rank(ref)
    elif selector == "largest":
        rank = 0
    elif selector == "smallest":
        rank = len(ref_vals) - 1
    else:
        raise ValueError(f"unknown selector {selector!r}")

    scale = max(1.0, float(np.max(np.abs(ref_vals))))
    ref_gap = _gap(ref_vals, rank)
    if ref_gap < tol.DEGENERACY * scale:
        raise ExtractionError(
            f"reference eigenvalue {ref_vals[rank]:.6g} at rank {rank} is degenerate (gap {ref_gap:.2e})"
        )
    drift = abs(out_vals[rank] - ref_vals[rank])
    out_gap = _gap(out_vals, rank)
    if out_gap < 10 * drift or out_gap < tol.DEGENERACY * scale:
        raise ExtractionError(
            f"output eigenvalue at rank {rank} is not isolated: gap {out_gap:.3g} vs drift {drift:.3g}"
        )
    v = out_vecs[:, rank]
    return ExtractionReport(
        input_eigenvalues=out_vals,
        reference_eigenvalues=ref_vals,
        max_mismatch=float(np.max(np.abs(out_vals - ref_vals))),
        selected_rank=rank,
        selected_eigenvalue=float(out_vals[rank]),
        extracted_state=np.outer(v, v.conj()),
    )
