"""Conditional evolution, jump channels, exact round enumeration and Monte Carlo.

Two routes compute the statistics of one detection round:

* :func:`enumerate_round` propagates one unnormalized density matrix per
  detector-report class (nothing / D+ only / D- only / both).  A click in D+
  moves weight from a class without D+ into the class with it; clicks in a
  detector that already fired keep the class (non-resolving detectors).  This
  is the click-time integral over all jump records, done exactly with matrix
  exponentials instead of quadrature.
* :class:`TrajectorySampler` unravels the same dynamics into seeded jump
  trajectories.

Both watch the detectors over ``[0, t_wait]`` and then let the system relax
unobserved for ``t_relax``.  Rates are in units where the reference cavity
decay is 1.
"""

from __future__ import annotations

import enum
import logging
import math
from collections import deque
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
from scipy.sparse.linalg import expm_multiply

from .fockspace import Arm, Level, PureState, SpaceConfig, build_space

log = logging.getLogger(__name__)

RNG_NAME = "numpy.random.PCG64 via numpy.random.default_rng(seed)"


class TruncationError(RuntimeError):
    """Population reached the photon-number cutoff."""


@dataclass(frozen=True)
class SystemParams:
    g_a: float
    g_b: float
    kappa_a: float
    kappa_b: float
    gamma_a: float = 0.0
    gamma_b: float = 0.0

    def __post_init__(self):
        for name in ("g_a", "g_b", "kappa_a", "kappa_b", "gamma_a", "gamma_b"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ValueError(f"{name} must be a finite rate >= 0, got {v}")
        if not (self.kappa_a > 0 and self.kappa_b > 0):
            raise ValueError("cavity decay rates kappa_a, kappa_b must be > 0")

    @classmethod
    def symmetric(cls, g: float = 0.3, kappa: float = 1.0, gamma: float = 0.0) -> "SystemParams":
        return cls(g, g, kappa, kappa, gamma, gamma)

    def swapped(self) -> "SystemParams":
        return SystemParams(self.g_b, self.g_a, self.kappa_b, self.kappa_a, self.gamma_b, self.gamma_a)

    def arm(self, arm) -> tuple[float, float, float]:
        if Arm(arm) is Arm.A:
            return self.g_a, self.kappa_a, self.gamma_a
        return self.g_b, self.kappa_b, self.gamma_b


@dataclass(frozen=True)
class DetectorModel:
    eta: float = 1.0
    dark_rate: float = 0.0
    resolves_photon_number: bool = False

    def __post_init__(self):
        if not 0 <= self.eta <= 1:
            raise ValueError(f"detector efficiency eta must lie in [0, 1], got {self.eta}")
        if not (math.isfinite(self.dark_rate) and self.dark_rate >= 0):
            raise ValueError("dark_rate must be >= 0")
        if self.resolves_photon_number:
            raise NotImplementedError("photon-number-resolving detectors are not modelled")

    def dark_click_probability(self, t_wait: float) -> float:
        """Chance of at least one dark count in one detector during the window."""
        return -math.expm1(-self.dark_rate * t_wait)


class Channel(str, enum.Enum):
    DETECT_PLUS = "DETECT_PLUS"
    DETECT_MINUS = "DETECT_MINUS"
    LOSS_A = "LOSS_A"
    LOSS_B = "LOSS_B"
    SPONT_A = "SPONT_A"
    SPONT_B = "SPONT_B"


DETECTOR_CHANNELS = (Channel.DETECT_PLUS, Channel.DETECT_MINUS)


class Herald(enum.IntFlag):
    """Which detectors reported a click during the watch window."""

    NONE = 0
    PLUS = 1
    MINUS = 2
    BOTH = 3

    @property
    def label(self) -> str:
        return {0: "none", 1: "+", 2: "-", 3: "both"}[int(self)]

    @property
    def single(self) -> bool:
        return self in (Herald.PLUS, Herald.MINUS)

    @property
    def sign(self) -> int:
        if not self.single:
            raise ValueError(f"{self!r} does not herald a single detector")
        return 1 if self is Herald.PLUS else -1


_CHANNEL_BIT = {Channel.DETECT_PLUS: Herald.PLUS, Channel.DETECT_MINUS: Herald.MINUS}


@dataclass(frozen=True)
class JumpChannel:
    label: Channel
    operator: np.ndarray = field(repr=False)


@dataclass(frozen=True)
class ClickEvent:
    time: float
    channel: Channel
    dark: bool = False


@dataclass(frozen=True)
class ClickRecord:
    events: tuple[ClickEvent, ...] = ()

    @property
    def herald(self) -> Herald:
        h = Herald.NONE
        for ev in self.events:
            h |= _CHANNEL_BIT[ev.channel]
        return h

    def to_dict(self) -> dict:
        return {"events": [{"time": e.time, "channel": e.channel.value, "dark": e.dark} for e in self.events]}


@dataclass(frozen=True)
class Branch:
    """One detector-report class of a round.

    ``state`` is the normalized density matrix after relaxation (``None``
    when the class has zero probability).  ``residual`` is the population
    still excited or holding photons at the end of the round.
    """

    herald: Herald
    probability: float
    state: np.ndarray | None = field(repr=False)
    residual: float = 0.0
    dark_contaminated: bool = False

    def to_dict(self) -> dict:
        return {
            "herald": self.herald.label,
            "dark_contaminated": self.dark_contaminated,
            "probability": self.probability,
            "residual": self.residual,
        }


# -- operators ----------------------------------------------------------------


def effective_hamiltonian(params: SystemParams, config: SpaceConfig = SpaceConfig()) -> np.ndarray:
    """Non-Hermitian no-jump Hamiltonian.

    ``sum_i (g_i/2)(|down><e|_i c_i^dag + h.c.) - i kappa_i c_i^dag c_i - i (gamma_i/2)|e><e|_i``
    """
    space = build_space(config)
    h = np.zeros((space.dim, space.dim), dtype=complex)
    for arm in Arm:
        g, kappa, gamma = params.arm(arm)
        c = space.annihilation(arm)
        lower = space.atomic_transition(arm, Level.E, Level.DOWN)
        coupling = lower @ c.conj().T
        h += 0.5 * g * (coupling + coupling.conj().T)
        h -= 1j * kappa * (c.conj().T @ c)
        h -= 0.5j * gamma * space.atomic_transition(arm, Level.E, Level.E)
    return h


def jump_channels(
    params: SystemParams, detectors: DetectorModel = DetectorModel(), config: SpaceConfig = SpaceConfig()
) -> list[JumpChannel]:
    space = build_space(config)
    eta = detectors.eta
    ca, cb = space.annihilation(Arm.A), space.annihilation(Arm.B)
    wa = math.sqrt(2 * params.kappa_a * eta) * ca
    wb = math.sqrt(2 * params.kappa_b * eta) * cb
    return [
        JumpChannel(Channel.DETECT_PLUS, (wa + wb) / math.sqrt(2)),
        JumpChannel(Channel.DETECT_MINUS, (wa - wb) / math.sqrt(2)),
        JumpChannel(Channel.LOSS_A, math.sqrt(2 * params.kappa_a * (1 - eta)) * ca),
        JumpChannel(Channel.LOSS_B, math.sqrt(2 * params.kappa_b * (1 - eta)) * cb),
        JumpChannel(
            Channel.SPONT_A, math.sqrt(params.gamma_a) * space.atomic_transition(Arm.A, Level.E, Level.DOWN)
        ),
        JumpChannel(
            Channel.SPONT_B, math.sqrt(params.gamma_b) * space.atomic_transition(Arm.B, Level.E, Level.DOWN)
        ),
    ]


def no_jump_propagate(state: PureState, params: SystemParams, t: float) -> PureState:
    """``exp(-i H_eff t) |state>``, left unnormalized (its squared norm is the no-jump probability)."""
    if t < 0:
        raise ValueError("propagation time must be >= 0")
    h = effective_hamiltonian(params, state.config)
    return PureState(la.expm(-1j * t * h) @ state.amplitudes, state.config)


def slow_rate(params: SystemParams) -> float:
    """Slowest population decay rate of a single excited emitter, over both arms."""
    from .analytic import single_arm_eigenvalues

    rates = []
    for arm in Arm:
        lam = single_arm_eigenvalues(*params.arm(arm))
        rates.append(2 * float(np.min(-lam.imag)))
    return min(rates)


def default_windows(params: SystemParams, wait: float = 5.0, relax: float = 10.0) -> tuple[float, float]:
    """``(t_wait, t_relax)`` as multiples of the slowest decay time."""
    s = slow_rate(params)
    if s <= 0:
        raise ValueError("no decay channel: emitters never relax (g = 0 or all rates zero)")
    return wait / s, relax / s


# -- exact enumeration ------------------------------------------------------------


def _excitations(config: SpaceConfig) -> np.ndarray:
    return np.array([lab.excitations() for lab in build_space(config).labels])


def reachable_subspace(operators: Sequence[np.ndarray], seeds) -> tuple[int, ...]:
    """Basis indices reachable from ``seeds`` through nonzero matrix elements."""
    adjacency = np.zeros_like(np.abs(operators[0]), dtype=bool)
    for op in operators:
        nz = np.abs(op) > 0
        adjacency |= nz | nz.T
    seen = set(int(s) for s in seeds)
    queue = deque(seen)
    while queue:
        x = queue.popleft()
        for y in np.flatnonzero(adjacency[:, x]):
            if int(y) not in seen:
                seen.add(int(y))
                queue.append(int(y))
    return tuple(sorted(seen))


def _ground_seeds(config: SpaceConfig) -> list[int]:
    space = build_space(config)
    return [i for i, lab in enumerate(space.labels) if lab.p_a == 0 and lab.p_b == 0]


def _superop_left_right(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix of ``rho -> a rho b`` on row-major ``vec(rho)``."""
    return np.kron(a, b.T)


class _ExactRound:
    """Class-resolved propagation for one parameter set and window pair.

    The weight of all records whose clicks fall only in a detector set S
    evolves under the no-jump part plus the jump terms of S; the four report
    classes follow by inclusion-exclusion.  The generators also conserve the
    excitation difference between the ket and bra side of a coherence, so
    they split into blocks and only non-negative differences are propagated
    (the rest follow by Hermiticity).
    """

    def __init__(self, params, detectors, config, t_wait, t_relax):
        self.params = params
        self.detectors = detectors
        self.config = config
        self.t_wait = t_wait
        self.t_relax = t_relax
        self.h = effective_hamiltonian(params, config)
        self.channels = jump_channels(params, detectors, config)
        self.n_exc = _excitations(config)

    def _operators(self):
        return [self.h] + [ch.operator for ch in self.channels]

    @lru_cache(maxsize=8)
    def _blocks(self, subspace: tuple[int, ...], max_delta: int):
        idx = np.array(subspace)
        n = idx.size
        h = self.h[np.ix_(idx, idx)]
        eye = np.eye(n)
        l0 = -1j * _superop_left_right(h, eye) + 1j * _superop_left_right(eye, h.conj().T)
        jumps = {}
        for ch in self.channels:
            op = ch.operator[np.ix_(idx, idx)]
            jumps[ch.label] = _superop_left_right(op, op.conj().T)
        unobs = sum(jumps[c] for c in (Channel.LOSS_A, Channel.LOSS_B, Channel.SPONT_A, Channel.SPONT_B))
        jp, jm = jumps[Channel.DETECT_PLUS], jumps[Channel.DETECT_MINUS]
        relax = l0 + unobs + jp + jm
        base = l0 + unobs

        exc = self.n_exc[idx]
        delta = (exc[:, None] - exc[None, :]).ravel()
        # generators for "clicks allowed only in detectors of S", S = {}, {+}, {-}, {+,-}
        allowed = (base, base + jp, base + jm, relax)
        blocks = {}
        for d in range(0, min(int(delta.max()), max_delta) + 1):
            sel = np.flatnonzero(delta == d)
            if sel.size == 0:
                continue
            ix = np.ix_(sel, sel)
            watch = np.stack([la.expm(self.t_wait * g[ix]) for g in allowed])
            blocks[d] = (sel, watch, la.expm(self.t_relax * relax[ix]))
        return blocks

    def run(self, rho0: np.ndarray, support_tol: float = 1e-15, coherences: bool = True):
        """Propagate ``rho0``; returns ``{Herald: rho_unnormalized}`` and dropped weight.

        With ``coherences=False`` only elements between states of equal
        excitation number are kept, which is all that populations and the
        reduced qubit state depend on.
        """
        pops = np.real(np.diag(rho0))
        total = float(pops.sum())
        seeds = set(_ground_seeds(self.config)) | set(np.flatnonzero(pops > support_tol * total))
        sub = reachable_subspace(self._operators(), seeds)
        idx = np.array(sub)
        dropped = total - float(pops[idx].sum())
        n = idx.size
        rho_r = rho0[np.ix_(idx, idx)].ravel()
        out = np.zeros((4, n * n), dtype=complex)
        end_of_watch = np.zeros((4, n * n), dtype=complex)
        for sel, p_watch, p_relax in self._blocks(sub, 10**6 if coherences else 0).values():
            u = p_watch @ rho_r[sel]
            # inclusion-exclusion over the allowed-detector sets
            end_of_watch[0, sel] = u[0]
            end_of_watch[1, sel] = u[1] - u[0]
            end_of_watch[2, sel] = u[2] - u[0]
            end_of_watch[3, sel] = u[3] - u[1] - u[2] + u[0]
            out[:, sel] = end_of_watch[:, sel] @ p_relax.T
        exc = self.n_exc[idx]
        neg = (exc[:, None] - exc[None, :]) < 0
        result = {}
        for c in range(4):
            for arr in (out, end_of_watch):
                m = arr[c].reshape(n, n)
                m[neg] = m.T.conj()[neg]
            full = np.zeros_like(rho0, dtype=complex)
            full[np.ix_(idx, idx)] = out[c].reshape(n, n)
            result[Herald(c)] = full
        self._check_truncation(idx, end_of_watch, out)
        return result, dropped

    def _check_truncation(self, idx, *snapshots):
        n_max = self.config.n_max
        if n_max < 2:
            return
        space = build_space(self.config)
        top = np.array([space.labels[i].p_a == n_max or space.labels[i].p_b == n_max for i in idx])
        if not top.any():
            return
        n = idx.size
        for snap in snapshots:
            for c in range(4):
                w = float(np.real(np.diag(snap[c].reshape(n, n))[top].sum()))
                if w > self.config.leak_tolerance:
                    raise TruncationError(f"weight {w:.3g} reached photon number n_max={n_max}")


@lru_cache(maxsize=64)
def _exact_round(params, detectors, config, t_wait, t_relax) -> _ExactRound:
    return _ExactRound(params, detectors, config, t_wait, t_relax)


def _full_space_generators(params, detectors, config):
    """Sparse watch/relax generators over the whole space (no subspace or block reduction)."""
    h = sp.csr_matrix(effective_hamiltonian(params, config))
    chans = {ch.label: sp.csr_matrix(ch.operator) for ch in jump_channels(params, detectors, config)}
    d = h.shape[0]
    eye = sp.identity(d, format="csr")

    def lr(a, b):
        return sp.kron(a, b.T, format="csr")

    l0 = -1j * lr(h, eye) + 1j * lr(eye, h.conj().T)
    jump = {k: lr(v, v.conj().T) for k, v in chans.items()}
    base = l0 + jump[Channel.LOSS_A] + jump[Channel.LOSS_B] + jump[Channel.SPONT_A] + jump[Channel.SPONT_B]
    jp, jm = jump[Channel.DETECT_PLUS], jump[Channel.DETECT_MINUS]
    watch = sp.bmat(
        [
            [base, None, None, None],
            [jp, base + jp, None, None],
            [jm, None, base + jm, None],
            [None, jm, jp, base + jp + jm],
        ],
        format="csr",
    )
    return watch, (base + jp + jm).tocsr()


def _run_full_space(rho0, params, detectors, config, t_wait, t_relax):
    watch, relax = _full_space_generators(params, detectors, config)
    d = rho0.shape[0]
    v = np.zeros(4 * d * d, dtype=complex)
    v[: d * d] = rho0.ravel()
    w = expm_multiply(watch * t_wait, v)
    space = build_space(config)
    n_max = config.n_max
    top = np.array([lab.p_a == n_max or lab.p_b == n_max for lab in space.labels])
    result = {}
    for c in range(4):
        mid = w[c * d * d : (c + 1) * d * d]
        fin = expm_multiply(relax * t_relax, mid)
        for snap in (mid, fin):
            if n_max >= 2:
                weight = float(np.real(np.diag(snap.reshape(d, d))[top].sum()))
                if weight > config.leak_tolerance:
                    raise TruncationError(f"weight {weight:.3g} reached photon number n_max={n_max}")
        result[Herald(c)] = fin.reshape(d, d)
    return result, 0.0


def _as_density(initial) -> tuple[np.ndarray, SpaceConfig]:
    if isinstance(initial, PureState):
        return initial.density_matrix(), initial.config
    rho, config = initial
    return np.asarray(rho, dtype=complex), config


def _residual(rho: np.ndarray, config: SpaceConfig) -> float:
    space = build_space(config)
    mask = np.array([lab.excitations() > 0 for lab in space.labels])
    return float(np.real(np.trace(rho[np.ix_(mask, mask)])))


def propagate_classes(
    initial,
    params: SystemParams,
    detectors: DetectorModel,
    t_wait: float,
    t_relax: float,
    restrict: bool = True,
    coherences: bool = True,
) -> dict[Herald, np.ndarray]:
    """Unnormalized relaxed density matrix for each physical detector-report class.

    ``initial`` is a :class:`PureState` or a ``(rho, SpaceConfig)`` pair.
    ``restrict=False`` skips the reachable-subspace/block reduction and uses
    sparse Krylov propagation over the whole space.  ``coherences=False``
    drops coherences between different excitation numbers (restricted mode
    only); probabilities and reduced qubit states are unaffected.
    """
    if t_wait < 0 or t_relax < 0:
        raise ValueError("window lengths must be >= 0")
    rho0, config = _as_density(initial)
    if restrict:
        engine = _exact_round(params, detectors, config, float(t_wait), float(t_relax))
        classes, dropped = engine.run(rho0, coherences=coherences)
        if dropped > 0:
            log.debug("dropped %.3g population below the support tolerance", dropped)
    else:
        classes, _ = _run_full_space(rho0, params, detectors, config, t_wait, t_relax)
    return classes


def merge_dark_counts(classes: dict[Herald, np.ndarray], p_dark: float) -> dict[tuple[Herald, bool], np.ndarray]:
    """Superimpose independent dark clicks (probability ``p_dark`` per detector).

    Keys are ``(observed herald, contaminated)`` where ``contaminated`` means
    a dark click lit a detector that had no photon click.
    """
    out: dict[tuple[Herald, bool], np.ndarray] = {}
    for phys, rho in classes.items():
        for dark in Herald:
            n_dark = bin(int(dark)).count("1")
            weight = p_dark**n_dark * (1 - p_dark) ** (2 - n_dark)
            if weight == 0:
                continue
            key = (phys | dark, bool(dark & ~phys))
            out[key] = out.get(key, 0) + weight * rho
    return out


def enumerate_round(
    initial,
    params: SystemParams,
    detectors: DetectorModel = DetectorModel(),
    t_wait: float | None = None,
    t_relax: float | None = None,
    restrict: bool = True,
    coherences: bool = True,
) -> list[Branch]:
    """All detector-report branches of one round with exact probabilities.

    Without dark counts there are four branches (none, D+, D-, both).  With
    ``detectors.dark_rate > 0`` each branch is further split by whether a dark
    click changed what the detectors report.
    """
    if t_wait is None or t_relax is None:
        dw, dr = default_windows(params)
        t_wait = dw if t_wait is None else t_wait
        t_relax = dr if t_relax is None else t_relax
    rho0, config = _as_density(initial)
    norm = float(np.real(np.trace(rho0)))
    if abs(norm - 1) > 1e-9:
        raise ValueError(f"initial state must be normalized (trace {norm})")
    classes = propagate_classes((rho0, config), params, detectors, t_wait, t_relax, restrict=restrict, coherences=coherences)
    if detectors.dark_rate > 0:
        keyed = merge_dark_counts(classes, detectors.dark_click_probability(t_wait))
    else:
        keyed = {(h, False): rho for h, rho in classes.items()}
    branches = []
    for (h, dark), rho in sorted(keyed.items(), key=lambda kv: (int(kv[0][0]), kv[0][1])):
        rho = 0.5 * (rho + rho.conj().T)  # remove rounding asymmetry before normalizing
        p = float(np.real(np.trace(rho)))
        if p > 1e-300:
            state = rho / p
            resid = _residual(state, config)
        else:
            state, resid = None, 0.0
        branches.append(Branch(h, max(p, 0.0), state, resid, dark))
    return branches


def propagate_unobserved(rho: np.ndarray, params: SystemParams, t: float, config: SpaceConfig = SpaceConfig()):
    """Lindblad evolution with every channel traced over (nobody looks)."""
    classes = propagate_classes((rho, config), params, DetectorModel(), 0.0, t)
    return classes[Herald.NONE]


def conditional_click_state(
    initial: PureState,
    params: SystemParams,
    t1: float,
    channel: Channel = Channel.DETECT_PLUS,
    detectors: DetectorModel = DetectorModel(),
    t_relax: float | None = None,
) -> tuple[PureState, np.ndarray]:
    """State right after a click at ``t1`` and after subsequent unobserved relaxation.

    Returns the unnormalized post-jump ket (``L |psi_nojump(t1)>``) and the
    normalized relaxed density matrix.
    """
    if t_relax is None:
        t_relax = 60.0 / slow_rate(params)
    psi = no_jump_propagate(initial, params, t1)
    op = next(ch.operator for ch in jump_channels(params, detectors, initial.config) if ch.label == channel)
    jumped = PureState(op @ psi.amplitudes, initial.config)
    rho = jumped.density_matrix()
    rho = rho / np.real(np.trace(rho))
    return jumped, propagate_unobserved(rho, params, t_relax, initial.config)


def cavity_extraction_probability(params: SystemParams, arm=Arm.A, t: float | None = None) -> float:
    """Probability that an excited emitter's photon leaves through its cavity output."""
    config = SpaceConfig()
    space = build_space(config)
    if Arm(arm) is Arm.A:
        start = space.basis_state(Level.E, 0, Level.UP, 0)
    else:
        start = space.basis_state(Level.UP, 0, Level.E, 0)
    if t is None:
        t = 60.0 / slow_rate(params)
    classes = propagate_classes(start, params, DetectorModel(eta=1.0), t, 0.0)
    return float(np.real(np.trace(classes[Herald.PLUS] + classes[Herald.MINUS] + classes[Herald.BOTH])))


# -- Monte Carlo ---------------------------------------------------------------------


class _NoJumpPropagator:
    """Batched ``exp(-i H t)`` on a subspace, by eigendecomposition when well conditioned."""

    def __init__(self, h: np.ndarray):
        self.h = h
        lam, v = la.eig(h)
        cond = np.linalg.cond(v)
        self.use_eig = bool(np.isfinite(cond) and cond < 1e8)
        if self.use_eig:
            self.lam = lam
            self.v = v
            self.v_inv_t = la.inv(v).T
            self.v_t = v.T

    def prepare(self, psi: np.ndarray):
        return psi @ self.v_inv_t if self.use_eig else psi

    def at(self, handle: np.ndarray, tau: np.ndarray) -> np.ndarray:
        if self.use_eig:
            return (handle * np.exp(-1j * np.outer(tau, self.lam))) @ self.v_t
        out = np.empty_like(handle)
        for i, (row, t) in enumerate(zip(handle, tau)):
            out[i] = la.expm(-1j * t * self.h) @ row
        return out


@dataclass
class RoundSamples:
    """Outcome of a batch of sampled rounds (one row per trajectory)."""

    herald: np.ndarray  # physical clicks, Herald bits
    dark: np.ndarray  # dark clicks, Herald bits
    states: np.ndarray  # (n, dim) normalized kets after relaxation
    event_traj: np.ndarray
    event_time: np.ndarray
    event_channel: np.ndarray  # index into Channel order
    event_dark: np.ndarray

    @property
    def observed(self) -> np.ndarray:
        return self.herald | self.dark

    @property
    def contaminated(self) -> np.ndarray:
        return (self.dark & ~self.herald & 3) != 0

    def record(self, i: int) -> ClickRecord:
        sel = np.flatnonzero(self.event_traj == i)
        chans = list(Channel)
        events = sorted(
            (ClickEvent(float(self.event_time[k]), chans[int(self.event_channel[k])], bool(self.event_dark[k])) for k in sel),
            key=lambda e: (e.time, e.channel.value),
        )
        return ClickRecord(tuple(events))


class TrajectorySampler:
    """Vectorized jump unraveling of one detection round.

    Each trajectory draws a uniform ``r`` and jumps when its no-jump norm
    squared falls to ``r``; the channel is then chosen with weights
    ``<psi|L_c^dag L_c|psi>``.  Jumps before ``t_wait`` in a detector channel
    are recorded; everything later is unrecorded relaxation.
    """

    def __init__(self, params: SystemParams, detectors: DetectorModel = DetectorModel(), config: SpaceConfig = SpaceConfig()):
        self.params = params
        self.detectors = detectors
        self.config = config
        self.dim = build_space(config).dim
        self.h = effective_hamiltonian(params, config)
        self.channels = jump_channels(params, detectors, config)
        self._cache: dict[tuple[int, ...], tuple] = {}

    def _restricted(self, sub: tuple[int, ...]):
        if sub not in self._cache:
            idx = np.array(sub)
            h = self.h[np.ix_(idx, idx)]
            ops = np.stack([ch.operator[np.ix_(idx, idx)] for ch in self.channels])
            rate = 1j * (h - h.conj().T)
            self._cache[sub] = (idx, _NoJumpPropagator(h), ops, rate)
        return self._cache[sub]

    def run(self, psi0: np.ndarray, t_wait: float, t_relax: float, rng: np.random.Generator) -> RoundSamples:
        psi0 = np.atleast_2d(np.asarray(psi0, dtype=complex))
        n = psi0.shape[0]
        support = np.flatnonzero(np.any(np.abs(psi0) > 0, axis=0))
        sub = reachable_subspace([self.h] + [ch.operator for ch in self.channels], support)
        idx, prop, ops, rate = self._restricted(sub)
        psi = psi0[:, idx]
        psi = psi / np.linalg.norm(psi, axis=1, keepdims=True)
        t_end = t_wait + t_relax

        herald = np.zeros(n, dtype=np.int64)
        t0 = np.zeros(n)
        active = np.arange(n)
        ev_traj, ev_time, ev_chan = [], [], []
        while active.size:
            r = rng.random(active.size)
            handle = prop.prepare(psi[active])
            tau_max = t_end - t0[active]
            end = prop.at(handle, tau_max)
            n_end = np.sum(np.abs(end) ** 2, axis=1)
            jumps = n_end < r
            done = active[~jumps]
            psi[done] = end[~jumps] / np.sqrt(n_end[~jumps])[:, None]
            if not jumps.any():
                break
            j_act = active[jumps]
            h_j = handle[jumps]
            tau, psi_t = self._solve_jump_times(prop, h_j, r[jumps], tau_max[jumps], rate)
            weights = np.abs(np.einsum("kij,nj->nki", ops, psi_t)) ** 2
            weights = weights.sum(axis=2)
            cum = np.cumsum(weights, axis=1)
            u = rng.random(j_act.size) * cum[:, -1]
            choice = np.minimum((cum < u[:, None]).sum(axis=1), len(self.channels) - 1)
            new = np.einsum("nij,nj->ni", ops[choice], psi_t)
            psi[j_act] = new / np.linalg.norm(new, axis=1, keepdims=True)
            t_new = t0[j_act] + tau
            t0[j_act] = t_new
            for k, ch in enumerate(DETECTOR_CHANNELS):
                hit = (choice == k) & (t_new <= t_wait)
                herald[j_act[hit]] |= int(_CHANNEL_BIT[ch])
                ev_traj.append(j_act[hit])
                ev_time.append(t_new[hit])
                ev_chan.append(np.full(int(hit.sum()), k))
            active = j_act

        dark = np.zeros(n, dtype=np.int64)
        ev_dark = [np.zeros(sum(a.size for a in ev_traj), dtype=bool)]
        if self.detectors.dark_rate > 0:
            counts = rng.poisson(self.detectors.dark_rate * t_wait, size=(n, 2))
            for k in range(2):
                has = counts[:, k] > 0
                dark[has] |= 1 << k
                reps = np.repeat(np.arange(n), counts[:, k])
                ev_traj.append(reps)
                ev_time.append(rng.random(reps.size) * t_wait)
                ev_chan.append(np.full(reps.size, k))
                ev_dark.append(np.ones(reps.size, dtype=bool))

        states = np.zeros((n, self.dim), dtype=complex)
        states[:, idx] = psi
        cat = lambda parts, dt: np.concatenate(parts).astype(dt) if parts else np.zeros(0, dt)  # noqa: E731
        return RoundSamples(
            herald=herald,
            dark=dark,
            states=states,
            event_traj=cat(ev_traj, np.int64),
            event_time=cat(ev_time, float),
            event_channel=cat(ev_chan, np.int64),
            event_dark=cat(ev_dark, bool),
        )

    @staticmethod
    def _solve_jump_times(prop, handle, r, tau_max, rate, max_iter=200):
        """Safeguarded Newton for ``|psi(tau)|^2 = r`` on ``[0, tau_max]``."""
        lo = np.zeros_like(r)
        hi = tau_max.copy()
        tau = 0.5 * hi
        psi_t = prop.at(handle, tau)
        todo = np.ones(r.size, dtype=bool)
        for _ in range(max_iter):
            ix = np.flatnonzero(todo)
            if ix.size == 0:
                break
            p = psi_t[ix]
            f = np.sum(np.abs(p) ** 2, axis=1) - r[ix]
            above = f > 0
            lo[ix] = np.where(above, tau[ix], lo[ix])
            hi[ix] = np.where(above, hi[ix], tau[ix])
            deriv = -np.real(np.einsum("ni,ij,nj->n", p.conj(), rate, p))
            with np.errstate(divide="ignore", invalid="ignore"):
                newton = tau[ix] - f / deriv
            ok = (deriv < 0) & (newton > lo[ix]) & (newton < hi[ix])
            nxt = np.where(ok, newton, 0.5 * (lo[ix] + hi[ix]))
            step = np.abs(nxt - tau[ix])
            tau[ix] = nxt
            fin = (step <= 1e-13 * (1 + nxt)) | (np.abs(f) < 1e-15) | (hi[ix] - lo[ix] <= 1e-13 * (1 + hi[ix]))
            psi_t[ix] = prop.at(handle[ix], nxt)
            todo[ix[fin]] = False
        return tau, psi_t


def sample_round(
    initial,
    params: SystemParams,
    detectors: DetectorModel = DetectorModel(),
    t_wait: float | None = None,
    t_relax: float | None = None,
    n: int = 1,
    rng_seed: int = 0,
) -> RoundSamples:
    """Sample ``n`` independent rounds starting from the same ket."""
    if t_wait is None or t_relax is None:
        dw, dr = default_windows(params)
        t_wait = dw if t_wait is None else t_wait
        t_relax = dr if t_relax is None else t_relax
    psi = initial.amplitudes if isinstance(initial, PureState) else np.asarray(initial)
    config = initial.config if isinstance(initial, PureState) else SpaceConfig()
    sampler = TrajectorySampler(params, detectors, config)
    rng = np.random.default_rng(rng_seed)
    return sampler.run(np.repeat(psi[None, :], n, axis=0), t_wait, t_relax, rng)


def sample_trajectory(
    initial: PureState,
    params: SystemParams,
    detectors: DetectorModel = DetectorModel(),
    t_wait: float | None = None,
    t_relax: float | None = None,
    rng_seed: int = 0,
) -> tuple[ClickRecord, PureState]:
    """One seeded trajectory through a round: its click record and final normalized ket."""
    out = sample_round(initial, params, detectors, t_wait, t_relax, n=1, rng_seed=rng_seed)
    return out.record(0), PureState(out.states[0], initial.config)
