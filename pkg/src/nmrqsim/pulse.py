"""Pulse-sequence representation and execution.

A sequence is an ordered list of instantaneous hard pulses and free-evolution
delays. The first element acts first on the state, so the sequence
propagator is ``U_n ... U_2 U_1``.
"""

from __future__ import annotations

import functools
import json
from dataclasses import dataclass
from typing import Literal, Union

import numpy as np

from .molecule import CHANNELS, Molecule, effective_hamiltonian
from .qops import hermitian_eig, pauli, tensor_all

AXES = {"+x": ("X", 1.0), "-x": ("X", -1.0), "+y": ("Y", 1.0), "-y": ("Y", -1.0)}


class PulseError(ValueError):
    pass


@dataclass(frozen=True)
class HardPulse:
    target: str
    axis: Literal["+x", "-x", "+y", "-y"]
    angle_rad: float

    def __post_init__(self):
        if self.axis not in AXES:
            raise PulseError(f"unknown pulse axis {self.axis!r}")
        if not -2 * np.pi < self.angle_rad <= 2 * np.pi:
            raise PulseError(f"pulse angle {self.angle_rad} outside (-2pi, 2pi]")


@dataclass(frozen=True)
class Delay:
    duration_s: float

    def __post_init__(self):
        if not self.duration_s > 0:
            raise PulseError(f"delay must be positive, got {self.duration_s}")


PulseElement = Union[HardPulse, Delay]


@dataclass(frozen=True)
class PulseSequence:
    elements: tuple[PulseElement, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "elements", tuple(self.elements))

    def __iter__(self):
        return iter(self.elements)

    def __len__(self):
        return len(self.elements)

    def __add__(self, other: "PulseSequence") -> "PulseSequence":
        return PulseSequence(self.elements + tuple(other.elements))

    def to_list(self) -> list[dict]:
        out = []
        for e in self.elements:
            if isinstance(e, HardPulse):
                out.append({"pulse": {"target": e.target, "axis": e.axis, "angle_rad": e.angle_rad}})
            else:
                out.append({"delay": {"duration_s": e.duration_s}})
        return out

    @classmethod
    def from_list(cls, items: list[dict]) -> "PulseSequence":
        elements = []
        for i, item in enumerate(items):
            if "pulse" in item:
                elements.append(HardPulse(**item["pulse"]))
            elif "delay" in item:
                elements.append(Delay(**item["delay"]))
            else:
                raise PulseError(f"element {i}: expected 'pulse' or 'delay', got {sorted(item)}")
        return cls(tuple(elements))

    def to_json(self) -> str:
        return json.dumps(self.to_list(), indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "PulseSequence":
        return cls.from_list(json.loads(text))


@dataclass(frozen=True)
class NoiseConfig:
    """Phase damping applied after every delay.

    ``rate_scale`` multiplies every dephasing rate 1/T2, which gives a single
    knob for sweeping the noise strength.
    """

    enabled: bool = False
    t2_source: Literal["t2", "t2star"] = "t2"
    rate_scale: float = 1.0


def resolve_target(target: str, m: Molecule) -> list[int]:
    """Spins hit by a pulse on ``target``: a spin label, else a whole channel."""
    if target in m.labels:
        return [m.index(target)]
    if target in CHANNELS:
        spins = m.channel_spins(target)
        if spins:
            return spins
    raise PulseError(f"pulse target {target!r} matches no spin or channel of the molecule")


@functools.lru_cache(maxsize=4096)
def _rotation(spins: tuple[int, ...], axis: str, angle: float, n: int) -> np.ndarray:
    name, sign = AXES[axis]
    single = np.cos(angle / 2) * np.eye(2) - 1j * sign * np.sin(angle / 2) * pauli(name)
    u = tensor_all(single if k in spins else np.eye(2) for k in range(n))
    u.setflags(write=False)
    return u


class _FreeEvolution:
    """exp(-i H t) for many t from a single diagonalization of H."""

    def __init__(self, m: Molecule):
        self.vals, self.vecs = hermitian_eig(effective_hamiltonian(m))

    def __call__(self, t: float) -> np.ndarray:
        return (self.vecs * np.exp(-1j * self.vals * t)) @ self.vecs.conj().T


@functools.lru_cache(maxsize=64)
def _free_evolution(m: Molecule) -> _FreeEvolution:
    return _FreeEvolution(m)


def element_propagator(e: PulseElement, m: Molecule, _free: _FreeEvolution | None = None) -> np.ndarray:
    if isinstance(e, HardPulse):
        return _rotation(tuple(resolve_target(e.target, m)), e.axis, e.angle_rad, m.n_spins)
    free = _free_evolution(m) if _free is None else _free
    return free(e.duration_s)


def sequence_propagator(s: PulseSequence, m: Molecule) -> np.ndarray:
    free = _free_evolution(m)
    u = np.eye(m.dim, dtype=complex)
    for e in s:
        u = element_propagator(e, m, free) @ u
    return u


def total_duration(s: PulseSequence) -> float:
    return float(sum(e.duration_s for e in s if isinstance(e, Delay)))


def _differing_bits(n: int) -> np.ndarray:
    # [k, r, c] = 1 where bit k of row index r differs from bit k of column index c
    idx = np.arange(2**n)
    bits = (idx[None, :] >> np.arange(n - 1, -1, -1)[:, None]) & 1
    return (bits[:, :, None] != bits[:, None, :]).astype(float)


def dephasing_factors(m: Molecule, duration_s: float, noise: NoiseConfig) -> np.ndarray:
    """Element-wise multipliers of the phase-damping channel for one delay."""
    attr = "t2star_s" if noise.t2_source == "t2star" else "t2_s"
    rates = noise.rate_scale * np.array([1.0 / getattr(s, attr) for s in m.spins])
    exponent = np.tensordot(rates, _differing_bits(m.n_spins), axes=1)
    return np.exp(-duration_s * exponent)


def apply_sequence(
    rho: np.ndarray,
    s: PulseSequence,
    m: Molecule,
    noise: NoiseConfig | None = None,
) -> np.ndarray:
    """Run ``s`` on ``rho``; with noise, each delay is followed by phase damping."""
    rho = np.asarray(rho, dtype=complex)
    if rho.shape != (m.dim, m.dim):
        raise PulseError(f"state has shape {rho.shape}, molecule needs {(m.dim, m.dim)}")
    if noise is None or not noise.enabled:
        u = sequence_propagator(s, m)
        return u @ rho @ u.conj().T
    free = _free_evolution(m)
    for e in s:
        u = element_propagator(e, m, free)
        rho = u @ rho @ u.conj().T
        if isinstance(e, Delay):
            rho = rho * dephasing_factors(m, e.duration_s, noise)
    return rho
