"""The double-heralded entangling operation (EO) as an executable state machine.

One attempt runs

1. both emitters prepared in their initial qubit states (default ``|+>``),
2. pi-pulses ``|down> <-> |e>`` on both arms,
3. round 1: watch both detectors for ``t_wait`` and relax for ``t_relax``,
4. X-flips on both qubits and pi-pulses again,
5. round 2, identical to round 1.

The attempt is heralded when each round shows exactly one detector firing.
Same detector in both rounds leaves ``(|down,up> + |up,down>)/sqrt(2)``,
different detectors the minus combination.

``run_eo_exact`` enumerates every outcome class with its probability and
conditional two-qubit state; ``run_eo_sampled`` draws single attempts from
seeded trajectories.
"""

from __future__ import annotations

import csv
import enum
import io
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .analytic import bell_state
from .fockspace import Arm, Level, SpaceConfig, build_space, reduce_to_qubits
from .trajectories import (
    DetectorModel,
    Herald,
    SystemParams,
    TrajectorySampler,
    enumerate_round,
    slow_rate,
)

log = logging.getLogger(__name__)

PLUS = (1 / math.sqrt(2), 1 / math.sqrt(2))
E_LEAK_WARN = 1e-6
RESIDUAL_WARN = 1e-6

# windows (in units of 1/Gamma_slow) long enough that the unfinished-emission
# tail is below 1e-9 of the success probability
CONVERGED_WAIT = 40.0
CONVERGED_RELAX = 40.0


class FailureCause(str, enum.Enum):
    NO_CLICK_R1 = "NO_CLICK_R1"
    TWO_CLICKS_R1 = "TWO_CLICKS_R1"
    NO_CLICK_R2 = "NO_CLICK_R2"
    TWO_CLICKS_R2 = "TWO_CLICKS_R2"
    DARK_CONTAMINATED = "DARK_CONTAMINATED"


PATTERNS = ((1, 1), (1, -1), (-1, 1), (-1, -1))


def pattern_label(pattern) -> str:
    return "".join("+" if s > 0 else "-" for s in pattern)


@dataclass(frozen=True)
class ProtocolConfig:
    """Everything one EO attempt depends on.

    ``t_wait``/``t_relax`` default to 5 and 10 slow decay times.  Use
    :meth:`converged` for windows long enough to reproduce infinite-time
    probabilities to ~1e-9.
    """

    params: SystemParams = field(default_factory=SystemParams.symmetric)
    detectors: DetectorModel = field(default_factory=DetectorModel)
    t_wait: float | None = None
    t_relax: float | None = None
    initial_qubit_states: tuple = (PLUS, PLUS)
    space: SpaceConfig = field(default_factory=SpaceConfig)

    def __post_init__(self):
        for name in ("t_wait", "t_relax"):
            v = getattr(self, name)
            if v is not None and not (math.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be a positive duration, got {v}")
        states = tuple(tuple(complex(x) for x in s) for s in self.initial_qubit_states)
        if len(states) != 2 or any(len(s) != 2 for s in states):
            raise ValueError("initial_qubit_states must hold two 2-component qubit states")
        for s in states:
            if abs(sum(abs(x) ** 2 for x in s) - 1) > 1e-9:
                raise ValueError("initial qubit states must be normalized")
        object.__setattr__(self, "initial_qubit_states", states)

    @classmethod
    def converged(cls, params=None, detectors=None, **kw) -> "ProtocolConfig":
        params = params or SystemParams.symmetric()
        s = slow_rate(params)
        return cls(
            params=params,
            detectors=detectors or DetectorModel(),
            t_wait=CONVERGED_WAIT / s,
            t_relax=CONVERGED_RELAX / s,
            **kw,
        )

    def windows(self) -> tuple[float, float]:
        s = slow_rate(self.params)
        t_wait = self.t_wait if self.t_wait is not None else 5.0 / s
        t_relax = self.t_relax if self.t_relax is not None else 10.0 / s
        return t_wait, t_relax

    def to_dict(self) -> dict:
        t_wait, t_relax = self.windows()
        p = self.params
        return {
            "g_a": p.g_a,
            "g_b": p.g_b,
            "kappa_a": p.kappa_a,
            "kappa_b": p.kappa_b,
            "gamma_a": p.gamma_a,
            "gamma_b": p.gamma_b,
            "eta": self.detectors.eta,
            "dark_rate": self.detectors.dark_rate,
            "t_wait": t_wait,
            "t_relax": t_relax,
            "n_max": self.space.n_max,
            "initial_qubit_states": [[[z.real, z.imag] for z in s] for s in self.initial_qubit_states],
        }


@dataclass(frozen=True)
class EoResult:
    """One outcome class (exact mode) or one attempt (sampled mode).

    ``success`` is the herald: one click in each round.  A heralded attempt
    in which a dark count changed what a detector reported keeps
    ``success=True`` but carries ``cause=DARK_CONTAMINATED``.  ``fidelity``
    is measured against the Bell state selected by ``sign`` and is ``None``
    when there is no herald.
    """

    success: bool
    pattern: tuple[int, int] | None
    cause: FailureCause | None
    final_state: np.ndarray = field(repr=False)
    fidelity: float | None
    probability: float | None = None
    sign: int | None = None
    seed: int | None = None

    @property
    def label(self) -> str:
        if self.pattern is not None and self.cause is None:
            return pattern_label(self.pattern)
        if self.pattern is not None:
            return f"{pattern_label(self.pattern)}:{self.cause.value}"
        return self.cause.value

    def to_dict(self) -> dict:
        return {
            "success": self.success,
            "pattern": pattern_label(self.pattern) if self.pattern else None,
            "cause": self.cause.value if self.cause else None,
            "probability": self.probability,
            "fidelity": self.fidelity,
            "sign": self.sign,
            "seed": self.seed,
            "final_state": [[[float(z.real), float(z.imag)] for z in row] for row in self.final_state],
        }


# -- local operations ---------------------------------------------------------


def _swap(a: Level, b: Level) -> np.ndarray:
    m = np.eye(3)
    m[[a, b]] = m[[b, a]]
    return m


def pi_pulse(arm, config: SpaceConfig = SpaceConfig()) -> np.ndarray:
    """Instantaneous pi-pulse on ``arm``: ``|down> <-> |e>`` with real +1 phases, ``|up>`` fixed.

    With this phase convention the pulse is its own inverse.
    """
    return build_space(config).matter_operator(arm, _swap(Level.DOWN, Level.E))


def x_flip(arm, config: SpaceConfig = SpaceConfig()) -> np.ndarray:
    """Qubit flip ``|up> <-> |down>`` on ``arm``, ``|e>`` untouched."""
    return build_space(config).matter_operator(arm, _swap(Level.UP, Level.DOWN))


def _both(make, config) -> np.ndarray:
    return make(Arm.A, config) @ make(Arm.B, config)


def excited_population(rho_or_psi, config: SpaceConfig, batch: bool = False) -> float:
    """Population with either emitter in ``|e>``; for a batch of kets, the largest one."""
    space = build_space(config)
    mask = np.array([lab.q_a == Level.E or lab.q_b == Level.E for lab in space.labels])
    x = np.asarray(rho_or_psi)
    if batch:
        return float(np.max(np.sum(np.abs(x[:, mask]) ** 2, axis=1)))
    if x.ndim == 1:
        return float(np.sum(np.abs(x[mask]) ** 2))
    return float(np.real(np.trace(x[np.ix_(mask, mask)])))


def flip_and_reexcite(rho: np.ndarray, config: SpaceConfig) -> np.ndarray:
    """X-flip both qubits then pi-pulse both arms (step between the rounds)."""
    e_pop = excited_population(rho, config) / max(float(np.real(np.trace(rho))), 1e-300)
    if e_pop > E_LEAK_WARN:
        log.warning("X flip applied with excited-state population %.3g; t_relax may be too short", e_pop)
    u = _both(pi_pulse, config) @ _both(x_flip, config)
    return u @ rho @ u.conj().T


def initial_state(config: ProtocolConfig) -> np.ndarray:
    """Ket after preparation and the first pi-pulses."""
    space = build_space(config.space)
    qa, qb = config.initial_qubit_states
    ket = space.product_state([qa[0], qa[1], 0], [qb[0], qb[1], 0]).amplitudes
    return _both(pi_pulse, config.space) @ ket


def second_round(rho_after_round1: np.ndarray, config: ProtocolConfig, coherences: bool = False):
    """Run steps iv-v on a (normalized) post-round-1 state; returns the round-2 branches."""
    t_wait, t_relax = config.windows()
    rho = flip_and_reexcite(rho_after_round1, config.space)
    return enumerate_round(
        (rho, config.space), config.params, config.detectors, t_wait, t_relax, coherences=coherences
    )


def _qubit_state(rho: np.ndarray, config: SpaceConfig) -> tuple[np.ndarray, float]:
    """Normalized 4x4 qubit state and the population outside the qubit block."""
    q = reduce_to_qubits(rho, config)
    tr = float(np.real(np.trace(q)))
    total = float(np.real(np.trace(rho)))
    leak = total - tr
    if total > 0 and leak / total > RESIDUAL_WARN:
        log.warning("residual excitation %.3g outside the qubit subspace after relaxation", leak / total)
    return (q / tr if tr > 0 else q), leak


def bell_fidelity(q: np.ndarray, sign: int) -> float:
    psi = bell_state(sign)
    return float(np.clip(np.real(psi.conj() @ q @ psi), 0.0, 1.0))


def run_eo_exact(config: ProtocolConfig) -> list[EoResult]:
    """Every outcome class of one attempt with its exact probability and state.

    Heralded classes are keyed by click pattern (and dark contamination);
    failures by cause.  Probabilities sum to one.
    """
    t_wait, t_relax = config.windows()
    space = config.space
    psi0 = initial_state(config)
    rho0 = np.outer(psi0, psi0.conj())
    round1 = enumerate_round((rho0, space), config.params, config.detectors, t_wait, t_relax)

    acc: dict[tuple, np.ndarray] = {}
    prob: dict[tuple, float] = {}

    def add(key, p, state):
        q = reduce_to_qubits(state, space) * p
        acc[key] = acc.get(key, 0) + q
        prob[key] = prob.get(key, 0.0) + p

    for b1 in round1:
        if b1.probability == 0:
            continue
        if b1.herald is Herald.NONE:
            add((FailureCause.NO_CLICK_R1,), b1.probability, b1.state)
            continue
        if b1.herald is Herald.BOTH:
            add((FailureCause.TWO_CLICKS_R1,), b1.probability, b1.state)
            continue
        for b2 in second_round(b1.state, config):
            p = b1.probability * b2.probability
            if p == 0:
                continue
            if b2.herald is Herald.NONE:
                add((FailureCause.NO_CLICK_R2,), p, b2.state)
            elif b2.herald is Herald.BOTH:
                add((FailureCause.TWO_CLICKS_R2,), p, b2.state)
            else:
                dirty = b1.dark_contaminated or b2.dark_contaminated
                add(("ok", b1.herald.sign, b2.herald.sign, dirty), p, b2.state)

    results = []
    for key in sorted(acc, key=_result_order):
        p = prob[key]
        q = acc[key] / p
        q = q / np.real(np.trace(q))
        if key[0] == "ok":
            _, s1, s2, dirty = key
            sign = s1 * s2
            results.append(
                EoResult(
                    True,
                    (s1, s2),
                    FailureCause.DARK_CONTAMINATED if dirty else None,
                    q,
                    bell_fidelity(q, sign),
                    p,
                    sign,
                )
            )
        else:
            results.append(EoResult(False, None, key[0], q, None, p))
    total = sum(r.probability for r in results)
    if abs(total - 1) > 1e-9:
        log.warning("outcome probabilities sum to %.12f", total)
    return results


def _result_order(key):
    if key[0] == "ok":
        return (0, PATTERNS.index((key[1], key[2])), key[3])
    return (1, list(FailureCause).index(key[0]), False)


@dataclass(frozen=True)
class EoSummary:
    p_success: float
    fidelity: float | None
    p_pattern: dict
    p_cause: dict

    def as_row(self) -> dict:
        row = {"p_success": self.p_success, "fidelity": self.fidelity}
        for pat in PATTERNS:
            row[f"p_{pattern_label(pat).replace('+', 'p').replace('-', 'm')}"] = self.p_pattern[pat]
        for cause in FailureCause:
            row[f"p_{cause.value.lower()}"] = self.p_cause[cause]
        return row


def summarize(results: Sequence[EoResult]) -> EoSummary:
    """Success probability, post-selected fidelity and breakdowns of an exact result list."""
    p_pattern = {pat: 0.0 for pat in PATTERNS}
    p_cause = {c: 0.0 for c in FailureCause}
    p_succ = 0.0
    f_acc = 0.0
    for r in results:
        if r.success:
            p_succ += r.probability
            f_acc += r.probability * r.fidelity
            p_pattern[r.pattern] += r.probability
        if r.cause is not None:
            p_cause[r.cause] += r.probability
    fid = f_acc / p_succ if p_succ > 0 else None
    return EoSummary(p_succ, fid, p_pattern, p_cause)


# -- sampled mode -----------------------------------------------------------------


@dataclass
class EoSamples:
    """Vectorized record of ``n`` sampled attempts."""

    seed: int
    success: np.ndarray
    cause: np.ndarray  # index into FailureCause, -1 when clean success
    pattern: np.ndarray  # (n, 2) detector signs, 0 where a round did not herald
    final_states: np.ndarray  # (n, 4, 4)
    fidelity: np.ndarray  # nan for failures

    def __len__(self):
        return self.success.size

    def result(self, i: int) -> EoResult:
        c = int(self.cause[i])
        cause = list(FailureCause)[c] if c >= 0 else None
        if self.success[i]:
            pat = (int(self.pattern[i, 0]), int(self.pattern[i, 1]))
            sign = pat[0] * pat[1]
            return EoResult(True, pat, cause, self.final_states[i], float(self.fidelity[i]), None, sign, self.seed)
        return EoResult(False, None, cause, self.final_states[i], None, None, None, self.seed)

    def class_counts(self) -> dict[str, int]:
        """Counts keyed like :attr:`EoResult.label`."""
        out: dict[str, int] = {}
        for i in range(len(self)):
            lab = self._label(i)
            out[lab] = out.get(lab, 0) + 1
        return out

    def _label(self, i):
        c = int(self.cause[i])
        if self.success[i]:
            pat = pattern_label(self.pattern[i])
            return pat if c < 0 else f"{pat}:{FailureCause.DARK_CONTAMINATED.value}"
        return list(FailureCause)[c].value


def _reduce_kets(psi: np.ndarray, config: SpaceConfig) -> np.ndarray:
    n = config.n_max + 1
    x = psi.reshape(-1, 3, n, 3, n)[:, :2, :, :2, :]
    q = np.einsum("kaibj,kcidj->kabcd", x, x.conj()).reshape(-1, 4, 4)
    tr = np.real(np.einsum("kii->k", q))
    return q / np.where(tr > 0, tr, 1.0)[:, None, None]


def sample_eo(config: ProtocolConfig, n: int, rng_seed: int = 0) -> EoSamples:
    """Sample ``n`` independent attempts from one seeded generator.

    Round 1 is drawn for the whole batch, then round 2 for the heralded
    subset, all from ``numpy.random.default_rng(rng_seed)``.
    """
    if n < 1:
        raise ValueError("need at least one attempt")
    t_wait, t_relax = config.windows()
    space = config.space
    rng = np.random.default_rng(rng_seed)
    sampler = TrajectorySampler(config.params, config.detectors, space)
    psi0 = np.repeat(initial_state(config)[None, :], n, axis=0)

    r1 = sampler.run(psi0, t_wait, t_relax, rng)
    obs1 = r1.observed
    cause = np.full(n, -1)
    causes = list(FailureCause)
    cause[obs1 == int(Herald.NONE)] = causes.index(FailureCause.NO_CLICK_R1)
    cause[obs1 == int(Herald.BOTH)] = causes.index(FailureCause.TWO_CLICKS_R1)
    go = np.flatnonzero((obs1 == int(Herald.PLUS)) | (obs1 == int(Herald.MINUS)))
    final = r1.states.copy()
    pattern = np.zeros((n, 2), dtype=int)
    pattern[go, 0] = np.where(obs1[go] == int(Herald.PLUS), 1, -1)
    dirty = r1.contaminated.copy()

    if go.size:
        u = _both(pi_pulse, space) @ _both(x_flip, space)
        start = r1.states[go]
        e_pop = excited_population(start, space, batch=True)
        if e_pop > E_LEAK_WARN:
            log.warning("X flip applied with excited-state population %.3g", e_pop)
        r2 = sampler.run(start @ u.T, t_wait, t_relax, rng)
        final[go] = r2.states
        obs2 = r2.observed
        cause[go[obs2 == int(Herald.NONE)]] = causes.index(FailureCause.NO_CLICK_R2)
        cause[go[obs2 == int(Herald.BOTH)]] = causes.index(FailureCause.TWO_CLICKS_R2)
        single = (obs2 == int(Herald.PLUS)) | (obs2 == int(Herald.MINUS))
        pattern[go[single], 1] = np.where(obs2[single] == int(Herald.PLUS), 1, -1)
        dirty[go] |= r2.contaminated

    success = (pattern[:, 0] != 0) & (pattern[:, 1] != 0)
    pattern[~success] = 0
    cause[success & dirty] = causes.index(FailureCause.DARK_CONTAMINATED)
    states = _reduce_kets(final, space)
    fid = np.full(n, np.nan)
    for sign in (1, -1):
        sel = success & (pattern[:, 0] * pattern[:, 1] == sign)
        psi = bell_state(sign)
        fid[sel] = np.real(np.einsum("i,kij,j->k", psi.conj(), states[sel], psi))
    return EoSamples(rng_seed, success, cause, pattern, states, np.clip(fid, 0, 1))


def run_eo_sampled(config: ProtocolConfig, rng_seed: int = 0) -> EoResult:
    """One sampled attempt, reproducible per seed."""
    return sample_eo(config, 1, rng_seed).result(0)


# -- sweeps -------------------------------------------------------------------------

SWEEP_AXES = ("eta", "gamma", "kappa_ratio", "g_ratio")
SWEEP_COLUMNS = (
    "series",
    "axis",
    "value",
    "p_success",
    "fidelity",
    "p_pp",
    "p_pm",
    "p_mp",
    "p_mm",
    "p_no_click_r1",
    "p_two_clicks_r1",
    "p_no_click_r2",
    "p_two_clicks_r2",
    "p_dark_contaminated",
    "t_wait",
    "t_relax",
)


def config_at(axis: str, value: float, base: ProtocolConfig) -> ProtocolConfig:
    """``base`` with one sweep parameter replaced.

    ``gamma`` sets both free-space rates (absolute units); ``kappa_ratio``
    sets ``kappa_A = x kappa_B`` and ``g_ratio`` sets ``g_A = x g_B``.
    """
    p = base.params
    if axis == "eta":
        return replace(base, detectors=replace(base.detectors, eta=value))
    if axis == "gamma":
        return replace(base, params=replace(p, gamma_a=value, gamma_b=value))
    if axis == "kappa_ratio":
        return replace(base, params=replace(p, kappa_a=value * p.kappa_b))
    if axis == "g_ratio":
        return replace(base, params=replace(p, g_a=value * p.g_b))
    raise ValueError(f"unknown sweep axis {axis!r}; expected one of {SWEEP_AXES}")


def _sweep_point(args) -> dict:
    axis, value, base, series = args
    cfg = config_at(axis, value, base)
    row = {"series": series, "axis": axis, "value": value}
    row.update(summarize(run_eo_exact(cfg)).as_row())
    row["t_wait"], row["t_relax"] = cfg.windows()
    return row


def fidelity_sweep(
    axis: str, grid: Sequence[float], base: ProtocolConfig, jobs: int = 1, series: str = ""
) -> list[dict]:
    """Success probability and post-selected fidelity along one parameter axis.

    Rows follow ``grid`` order regardless of ``jobs``.  Windows left unset in
    ``base`` are resolved per grid point.  ``series`` labels the rows (used
    when several sweeps share one table).
    """
    if axis not in SWEEP_AXES:
        raise ValueError(f"unknown sweep axis {axis!r}; expected one of {SWEEP_AXES}")
    grid = list(grid)
    if not grid:
        raise ValueError("sweep grid must not be empty")
    for v in grid:
        config_at(axis, float(v), base)  # validate before computing anything
    tasks = [(axis, float(v), base, series) for v in grid]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_sweep_point, tasks))
    return [_sweep_point(t) for t in tasks]


def sweep_to_csv(rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=SWEEP_COLUMNS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: _csv_cell(r[k]) for k in SWEEP_COLUMNS})
    return buf.getvalue()


def _csv_cell(x):
    if x is None:
        return ""
    if isinstance(x, str):
        return x
    return repr(float(x))
