"""Spin systems and their rotating-frame Hamiltonians.

Frequencies are stored in Hz. They are turned into angular units only when
the Hamiltonian is built, with the convention

    H = sum_k -pi*offset_k Z_k
        + sum_secular   (pi J / 2) Z_a Z_b
        + sum_isotropic (pi J / 2) (X_a X_b + Y_a Y_b + Z_a Z_b)

so that ``exp(-i H t)`` is the free-evolution propagator for ``t`` in seconds.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from typing import Literal

import numpy as np

from .qops import embed_single, pauli

CHANNELS = ("H", "C")
COUPLING_FORMS = ("secular-zz", "isotropic")
MAX_SPINS = 4


class MoleculeError(ValueError):
    pass


@dataclass(frozen=True)
class Spin:
    label: str
    channel: Literal["H", "C"]
    offset_hz: float
    t1_s: float
    t2_s: float
    t2star_s: float

    def __post_init__(self):
        if self.channel not in CHANNELS:
            raise MoleculeError(f"spin {self.label!r}: unknown channel {self.channel!r}")
        if min(self.t1_s, self.t2_s, self.t2star_s) <= 0:
            raise MoleculeError(f"spin {self.label!r}: relaxation times must be positive")
        if self.t2_s > 2 * self.t1_s:
            raise MoleculeError(f"spin {self.label!r}: T2 exceeds 2*T1")
        # T2* <= T2 is deliberately not enforced: fitted T2* values carry error
        # bars and the measured carbon values sit slightly above T2.


@dataclass(frozen=True)
class Coupling:
    a: str
    b: str
    j_hz: float
    form: Literal["secular-zz", "isotropic"] = "secular-zz"

    def __post_init__(self):
        if self.a == self.b:
            raise MoleculeError(f"coupling of spin {self.a!r} with itself")
        if self.form not in COUPLING_FORMS:
            raise MoleculeError(f"unknown coupling form {self.form!r}")


@dataclass(frozen=True)
class Molecule:
    spins: tuple[Spin, ...]
    couplings: tuple[Coupling, ...] = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "spins", tuple(self.spins))
        object.__setattr__(self, "couplings", tuple(self.couplings))
        if not 1 <= len(self.spins) <= MAX_SPINS:
            raise MoleculeError(f"molecule must have 1..{MAX_SPINS} spins")
        labels = [s.label for s in self.spins]
        if len(set(labels)) != len(labels):
            raise MoleculeError(f"duplicate spin labels in {labels}")
        seen = set()
        for c in self.couplings:
            for lab in (c.a, c.b):
                if lab not in labels:
                    raise MoleculeError(f"coupling references unknown spin {lab!r}")
            pair = frozenset((c.a, c.b))
            if pair in seen:
                raise MoleculeError(f"pair {sorted(pair)} coupled twice")
            seen.add(pair)

    @property
    def n_spins(self) -> int:
        return len(self.spins)

    @property
    def dim(self) -> int:
        return 2**self.n_spins

    @property
    def labels(self) -> list[str]:
        return [s.label for s in self.spins]

    def index(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise MoleculeError(f"unknown spin {label!r}") from None

    def channel_spins(self, channel: str) -> list[int]:
        return [i for i, s in enumerate(self.spins) if s.channel == channel]

    def coupling(self, i: int, j: int) -> Coupling | None:
        pair = {self.spins[i].label, self.spins[j].label}
        for c in self.couplings:
            if {c.a, c.b} == pair:
                return c
        return None

    def j_hz(self, i: int, j: int) -> float:
        c = self.coupling(i, j)
        return 0.0 if c is None else c.j_hz

    def with_coupling_form(self, form: str, pair: tuple[str, str] | None = None) -> "Molecule":
        """Copy with the form of one coupling (or all, if ``pair`` is None) replaced."""
        couplings = []
        for c in self.couplings:
            if pair is None or {c.a, c.b} == set(pair):
                c = replace(c, form=form)
            couplings.append(c)
        return replace(self, couplings=tuple(couplings))

    def without_couplings(self) -> "Molecule":
        return replace(self, couplings=())

    def to_dict(self) -> dict:
        return {
            "spins": [asdict(s) for s in self.spins],
            "couplings": [asdict(c) for c in self.couplings],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Molecule":
        try:
            spins = [Spin(**s) for s in d["spins"]]
            couplings = [Coupling(**c) for c in d.get("couplings", [])]
        except (KeyError, TypeError) as exc:
            raise MoleculeError(f"malformed molecule description: {exc}") from exc
        return cls(tuple(spins), tuple(couplings))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "Molecule":
        return cls.from_dict(json.loads(text))


def tce_preset() -> Molecule:
    """Trichloroethylene, 13C-labelled at both carbons: spins (H, C1, C2).

    The carbon channel reference sits midway between the two carbons, so the
    650 Hz shift becomes offsets of -325 Hz (C1) and +325 Hz (C2).
    """
    spins = (
        Spin("H", "H", 0.0, t1_s=7.0, t2_s=3.0, t2star_s=0.51),
        Spin("C1", "C", -325.0, t1_s=30.0, t2_s=0.4, t2star_s=0.41),
        Spin("C2", "C", 325.0, t1_s=30.0, t2_s=0.2, t2star_s=0.23),
    )
    couplings = (
        Coupling("H", "C1", 203.0, "secular-zz"),
        Coupling("C1", "C2", 102.0, "isotropic"),
        Coupling("H", "C2", 10.0, "secular-zz"),
    )
    return Molecule(spins, couplings)


def effective_hamiltonian(m: Molecule) -> np.ndarray:
    """Time-independent rotating-frame Hamiltonian in rad/s."""
    n = m.n_spins
    x = [embed_single(pauli("X"), k, n) for k in range(n)]
    y = [embed_single(pauli("Y"), k, n) for k in range(n)]
    z = [embed_single(pauli("Z"), k, n) for k in range(n)]
    h = np.zeros((m.dim, m.dim), dtype=complex)
    for k, s in enumerate(m.spins):
        h += -np.pi * s.offset_hz * z[k]
    for c in m.couplings:
        a, b = m.index(c.a), m.index(c.b)
        term = z[a] @ z[b]
        if c.form == "isotropic":
            term = term + x[a] @ x[b] + y[a] @ y[b]
        h += 0.5 * np.pi * c.j_hz * term
    return h
