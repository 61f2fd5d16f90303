"""Composite Hilbert space of two three-level emitters, each in its own cavity.

Every arm carries a matter factor with levels ``UP``, ``DOWN`` and ``E``
(``UP``/``DOWN`` are the logical |0>/|1>) and a truncated cavity mode with
photon numbers ``0..n_max``.  Basis labels ``(q_A, p_A, q_B, p_B)`` are
ordered lexicographically with ``q_A`` varying slowest::

    index = ((q_A * (n_max + 1) + p_A) * 3 + q_B) * (n_max + 1) + p_B

All operators are dense ``numpy`` arrays; at ``n_max <= 2`` the space has at
most 81 states.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterator

import numpy as np


class Level(enum.IntEnum):
    UP = 0
    DOWN = 1
    E = 2


class Arm(str, enum.Enum):
    A = "A"
    B = "B"


@dataclass(frozen=True)
class SpaceConfig:
    n_max: int = 1
    leak_tolerance: float = 1e-10

    def __post_init__(self):
        if int(self.n_max) != self.n_max or self.n_max < 1:
            raise ValueError(f"n_max must be an integer >= 1, got {self.n_max}")
        if not self.leak_tolerance > 0:
            raise ValueError("leak_tolerance must be positive")


@dataclass(frozen=True, order=True)
class BasisLabel:
    q_a: Level
    p_a: int
    q_b: Level
    p_b: int

    def __str__(self):
        return f"|{self.q_a.name},{self.p_a};{self.q_b.name},{self.p_b}>"

    def excitations(self) -> int:
        """Number of excitations (|e> populations plus photons) on both arms."""
        return int(self.q_a == Level.E) + self.p_a + int(self.q_b == Level.E) + self.p_b


class FockSpace:
    """Basis enumeration and operator factory for a given :class:`SpaceConfig`."""

    def __init__(self, config: SpaceConfig = SpaceConfig()):
        self.config = config
        self.n_photon = config.n_max + 1
        self.arm_dim = 3 * self.n_photon
        self.dim = self.arm_dim**2
        self.labels = tuple(
            BasisLabel(Level(qa), pa, Level(qb), pb)
            for qa in range(3)
            for pa in range(self.n_photon)
            for qb in range(3)
            for pb in range(self.n_photon)
        )
        self._index = {lab: i for i, lab in enumerate(self.labels)}

    def __repr__(self):
        return f"FockSpace(n_max={self.config.n_max}, dim={self.dim})"

    def index(self, q_a, p_a, q_b, p_b) -> int:
        lab = BasisLabel(Level(q_a), int(p_a), Level(q_b), int(p_b))
        try:
            return self._index[lab]
        except KeyError:
            raise ValueError(f"label {lab} outside truncation n_max={self.config.n_max}") from None

    def label(self, i: int) -> BasisLabel:
        return self.labels[i]

    # -- operators ---------------------------------------------------------

    def identity(self) -> np.ndarray:
        return np.eye(self.dim, dtype=complex)

    def _embed(self, arm, matter: np.ndarray, photon: np.ndarray) -> np.ndarray:
        local = np.kron(matter, photon)
        other = np.eye(self.arm_dim)
        if Arm(arm) is Arm.A:
            return np.kron(local, other).astype(complex)
        return np.kron(other, local).astype(complex)

    def annihilation(self, arm) -> np.ndarray:
        lower = np.diag(np.sqrt(np.arange(1, self.n_photon)), k=1)
        return self._embed(arm, np.eye(3), lower)

    def number(self, arm) -> np.ndarray:
        c = self.annihilation(arm)
        return c.conj().T @ c

    def atomic_transition(self, arm, frm, to) -> np.ndarray:
        """``|to><frm|`` on the matter factor of ``arm``."""
        m = np.zeros((3, 3))
        m[Level(to), Level(frm)] = 1.0
        return self._embed(arm, m, np.eye(self.n_photon))

    def matter_operator(self, arm, matrix) -> np.ndarray:
        """Embed a 3x3 matter-level operator acting on ``arm``."""
        matrix = np.asarray(matrix)
        if matrix.shape != (3, 3):
            raise ValueError("matter operator must be 3x3")
        return self._embed(arm, matrix, np.eye(self.n_photon))

    # -- states --------------------------------------------------------------

    def basis_state(self, q_a, p_a, q_b, p_b) -> "PureState":
        amps = np.zeros(self.dim, dtype=complex)
        amps[self.index(q_a, p_a, q_b, p_b)] = 1.0
        return PureState(amps, self.config)

    def product_state(self, matter_a, matter_b) -> "PureState":
        """Product of two matter states (length-3 amplitude vectors) with empty cavities."""
        vac = np.zeros(self.n_photon)
        vac[0] = 1.0
        a = np.kron(np.asarray(matter_a, dtype=complex), vac)
        b = np.kron(np.asarray(matter_b, dtype=complex), vac)
        return PureState(np.kron(a, b), self.config)

    def photon_number_weight(self, rho_or_psi, p: int) -> float:
        """Population with at least one arm holding exactly ``p`` photons."""
        mask = np.array([lab.p_a == p or lab.p_b == p for lab in self.labels])
        x = np.asarray(rho_or_psi)
        if x.ndim == 1:
            return float(np.sum(np.abs(x[mask]) ** 2))
        return float(np.real(np.trace(x[np.ix_(mask, mask)])))


@lru_cache(maxsize=None)
def build_space(config: SpaceConfig = SpaceConfig()) -> FockSpace:
    return FockSpace(config)


def annihilation(arm, config: SpaceConfig = SpaceConfig()) -> np.ndarray:
    return build_space(config).annihilation(arm)


def atomic_transition(arm, frm, to, config: SpaceConfig = SpaceConfig()) -> np.ndarray:
    return build_space(config).atomic_transition(arm, frm, to)


class PureState:
    """Amplitude vector over the composite basis; never normalized implicitly."""

    __slots__ = ("amplitudes", "config")

    def __init__(self, amplitudes, config: SpaceConfig = SpaceConfig()):
        amps = np.array(amplitudes, dtype=complex)
        space = build_space(config)
        if amps.shape != (space.dim,):
            raise ValueError(f"expected {space.dim} amplitudes, got shape {amps.shape}")
        if not np.all(np.isfinite(amps)):
            raise ValueError("amplitudes must be finite")
        amps.setflags(write=False)
        self.amplitudes = amps
        self.config = config

    @property
    def space(self) -> FockSpace:
        return build_space(self.config)

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def normalized(self) -> "PureState":
        n = self.norm
        if n == 0:
            raise ZeroDivisionError("cannot normalize the zero vector")
        return PureState(self.amplitudes / n, self.config)

    def __add__(self, other: "PureState") -> "PureState":
        _check_same(self, other)
        return PureState(self.amplitudes + other.amplitudes, self.config)

    def __sub__(self, other: "PureState") -> "PureState":
        _check_same(self, other)
        return PureState(self.amplitudes - other.amplitudes, self.config)

    def __mul__(self, scalar) -> "PureState":
        return PureState(self.amplitudes * scalar, self.config)

    __rmul__ = __mul__

    def __iter__(self) -> Iterator[complex]:
        return iter(self.amplitudes)

    def density_matrix(self) -> np.ndarray:
        return np.outer(self.amplitudes, self.amplitudes.conj())

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    def to_dict(self) -> dict:
        return {
            "space": {"n_max": self.config.n_max, "leak_tolerance": self.config.leak_tolerance},
            "amplitudes": [[float(a.real), float(a.imag)] for a in self.amplitudes],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PureState":
        config = SpaceConfig(**data["space"])
        amps = [complex(re, im) for re, im in data["amplitudes"]]
        return cls(amps, config)

    @classmethod
    def from_json(cls, text: str) -> "PureState":
        return cls.from_dict(json.loads(text))

    def __repr__(self):
        return f"PureState(norm={self.norm:.6g}, n_max={self.config.n_max})"


def _check_same(a: PureState, b: PureState):
    if a.config.n_max != b.config.n_max:
        raise ValueError("states live in different truncations")


def apply(op: np.ndarray, state: PureState) -> PureState:
    op = np.asarray(op)
    if op.shape != (state.amplitudes.size,) * 2:
        raise ValueError(f"operator shape {op.shape} does not match state dimension {state.amplitudes.size}")
    return PureState(op @ state.amplitudes, state.config)


def inner(a: PureState, b: PureState) -> complex:
    """<a|b>."""
    if a.amplitudes.shape != b.amplitudes.shape:
        raise ValueError("dimension mismatch")
    return complex(np.vdot(a.amplitudes, b.amplitudes))


def is_hermitian(op: np.ndarray, atol: float = 1e-12) -> bool:
    return bool(np.allclose(op, op.conj().T, atol=atol, rtol=0))


def reduce_to_qubits(rho: np.ndarray, config: SpaceConfig = SpaceConfig()) -> np.ndarray:
    """Trace out both cavities and keep the ``{UP, DOWN}`` block of each emitter.

    Returns a 4x4 matrix over ``|q_A q_B>`` with ``UP -> 0`` and ``DOWN -> 1``.
    Population left in ``|e>`` is dropped, so the trace can fall below one.
    """
    n = config.n_max + 1
    r = np.asarray(rho).reshape(3, n, 3, n, 3, n, 3, n)
    # sum over p_A = p_A', p_B = p_B'
    r = np.einsum("aibjcidj->abcd", r)
    return r[:2, :2, :2, :2].reshape(4, 4)
