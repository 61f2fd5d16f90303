"""Monte Carlo of cluster-growth strategies driven by the EO success probability.

The EO is reduced to a Bernoulli draw with success probability ``p``:

* extending a chain by one qubit succeeds with ``p``; on failure the chain
  is discarded and rebuilt from a single qubit (or, with
  ``keep_remnant=True``, kept at one qubit shorter, floor 1);
* joining an ``m``-chain onto a long chain adds ``m - 1`` qubits with
  probability ``p`` and removes one otherwise.

Only EO attempts count as cost; fresh ``|+>`` qubits are tallied separately.

Random streams: trials are processed in fixed blocks of ``BLOCK`` trials.
Block ``i`` draws from ``numpy.random.default_rng(SeedSequence(seed).spawn(n)[i])``,
so results depend only on ``(seed, trials)`` and not on ``jobs``.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import analytic
from .analytic import GrowthConditionError

BLOCK = 1 << 16
RECIPES = ("sequential", "pairwise")


@dataclass(frozen=True)
class GrowthStrategy:
    """``SEQUENTIAL`` builds one chain qubit by qubit; ``DIVIDE_CONQUER`` joins short ``m``-chains."""

    kind: str = "DIVIDE_CONQUER"
    m: int = 4
    recipe: str = "sequential"
    recycling: bool = False
    keep_remnant: bool = False

    def __post_init__(self):
        if self.kind not in ("SEQUENTIAL", "DIVIDE_CONQUER"):
            raise ValueError(f"unknown strategy kind {self.kind!r}")
        if self.m < 2:
            raise ValueError("chain length m must be >= 2")
        if self.recipe not in RECIPES:
            raise ValueError(f"unknown chain recipe {self.recipe!r}; expected one of {RECIPES}")
        if self.recycling:
            raise NotImplementedError("recycling strategies are not modelled")

    def pair_lengths(self) -> tuple[int, int]:
        """Lengths of the two chains joined by the pairwise recipe (``n1 + n2 - 1 = m``)."""
        n1 = (self.m + 2) // 2
        return n1, self.m + 1 - n1


@dataclass(frozen=True)
class CostReport:
    strategy: str
    p: float
    m: int
    trials: int
    mean: float
    stderr: float
    analytic: float | None
    rel_dev: float | None
    seed: int
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class GrowthEvent:
    cycle: int
    kind: str  # "extend", "join", "restart", "build"
    success: bool
    length: int
    eo_count: int


@dataclass(frozen=True)
class GrowthTrace:
    eo_attempts: int
    qubits_consumed: int
    final_length: int
    makespan: int
    events: tuple = ()

    def to_jsonl(self) -> str:
        return "\n".join(json.dumps(asdict(e)) for e in self.events)


def _check_p(p: float):
    if not (0 < p <= 1):
        raise ValueError(f"EO success probability must lie in (0, 1], got {p}")


def _block_rngs(seed: int, trials: int) -> list[tuple[np.random.Generator, int]]:
    n_blocks = max(1, math.ceil(trials / BLOCK))
    seqs = np.random.SeedSequence(seed).spawn(n_blocks)
    sizes = [min(BLOCK, trials - i * BLOCK) for i in range(n_blocks)]
    return [(np.random.default_rng(s), n) for s, n in zip(seqs, sizes)]


def _run_blocks(fn, seed: int, trials: int, jobs: int, *args) -> list:
    blocks = [(seed, i, trials) + args for i in range(max(1, math.ceil(trials / BLOCK)))]
    if jobs > 1 and len(blocks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fn, blocks))
    return [fn(b) for b in blocks]


def _rng_for(seed, i, trials):
    return _block_rngs(seed, trials)[i]


# -- vectorized building blocks ---------------------------------------------------------------


def _grow(rng, start: np.ndarray, target: int, p: float, keep_remnant: bool):
    """Grow chains from ``start`` lengths to ``target``; returns (EO counts, qubits prepared)."""
    length = start.astype(np.int64).copy()
    eo = np.zeros(length.size, dtype=np.int64)
    qubits = np.zeros(length.size, dtype=np.int64)
    active = np.flatnonzero(length < target)
    while active.size:
        ok = rng.random(active.size) < p
        eo[active] += 1
        qubits[active] += 1
        if keep_remnant:
            length[active] = np.where(ok, length[active] + 1, np.maximum(length[active] - 1, 1))
        else:
            restart = active[~ok]
            length[restart] = 1
            qubits[restart] += 1
            length[active[ok]] += 1
        active = active[length[active] < target]
    return eo, qubits


def _grow_from_scratch(rng, n: int, target: int, p: float):
    """Same process as ``_grow`` from length 1 with discard, sampled per try.

    A try is a run of extensions from a single qubit that ends at the first
    failure or at ``target``.  The number of tries is geometric with
    ``q = p**(target-1)``; a failed try that stops at its ``j``-th EO has
    ``P(j) ~ p**(j-1) (1-p)``, drawn by inverse CDF.
    """
    k = target - 1
    if k <= 0:
        return np.zeros(n, dtype=np.int64), np.zeros(n, dtype=np.int64)
    if p == 1:
        return np.full(n, k, dtype=np.int64), np.full(n, k, dtype=np.int64)
    tries = rng.geometric(p**k, size=n)
    failed = tries - 1
    owner = np.repeat(np.arange(n), failed)
    u = rng.random(owner.size)
    # smallest j with (1 - p**j) >= u (1 - p**k)
    j = np.ceil(np.log1p(-u * -np.expm1(k * math.log(p))) / math.log(p))
    j = np.clip(j, 1, k).astype(np.int64)
    eo = k + np.bincount(owner, weights=j, minlength=n).astype(np.int64)
    # one new qubit per EO plus a fresh start qubit per restart
    return eo, eo + failed


def _build(rng, n: int, strategy: GrowthStrategy, p: float):
    """EO cost (and qubits) of producing ``n`` m-chains with the strategy's recipe."""
    if strategy.recipe == "sequential":
        if not strategy.keep_remnant:
            return _grow_from_scratch(rng, n, strategy.m, p)
        return _grow(rng, np.ones(n), strategy.m, p, strategy.keep_remnant)
    n1, n2 = strategy.pair_lengths()
    # join attempts until the two halves fuse; every attempt needs both halves (re)built
    attempts = rng.geometric(p, size=n)
    owner = np.repeat(np.arange(n), attempts)
    first = np.ones(owner.size, dtype=bool)
    first[1:] = owner[1:] != owner[:-1]
    eo = np.zeros(n, dtype=np.int64)
    qubits = np.zeros(n, dtype=np.int64)
    for size in (n1, n2):
        if strategy.keep_remnant:
            start = np.where(first, 1, max(size - 1, 1))
            e, q = _grow(rng, start, size, p, True)
        else:
            e, q = _grow_from_scratch(rng, owner.size, size, p)
        eo += np.bincount(owner, weights=e, minlength=n).astype(np.int64)
        fresh = np.where(first | (not strategy.keep_remnant), 1, 0)
        qubits += np.bincount(owner, weights=q + fresh, minlength=n).astype(np.int64)
    return eo + attempts, qubits


def _sequential_block(args):
    seed, i, trials, m, p, keep_remnant = args
    rng, n = _rng_for(seed, i, trials)
    eo, qubits = _grow(rng, np.ones(n), m, p, keep_remnant)
    return eo, qubits + 1


def _join_block(args):
    seed, i, trials, strategy, p = args
    rng, n = _rng_for(seed, i, trials)
    build_eo, qubits = _build(rng, n, strategy, p)
    ok = rng.random(n) < p
    gain = np.where(ok, strategy.m - 1, -1)
    return build_eo + 1, gain, qubits


# -- analytic references ---------------------------------------------------------------------


def sequential_cost(m: int, p: float, keep_remnant: bool = False) -> float:
    """Expected EOs to grow an ``m``-chain from one qubit."""
    if not keep_remnant:
        return analytic.chain_cost_no_recycling(m, p)
    # p T_k = 1 + (1 - p) T_{k-1}, T_0 = 0, with T_k the cost of k -> k+1
    t, total = 0.0, 0.0
    for _ in range(1, m):
        t = (1 + (1 - p) * t) / p
        total += t
    return total


def build_cost(strategy: GrowthStrategy, p: float) -> float | None:
    """Expected EOs to produce one m-chain (closed form where available)."""
    if strategy.recipe == "sequential":
        return sequential_cost(strategy.m, p, strategy.keep_remnant)
    if strategy.keep_remnant:
        return None
    n1, n2 = strategy.pair_lengths()
    return (analytic.chain_cost_no_recycling(n1, p) + analytic.chain_cost_no_recycling(n2, p) + 1) / p


def join_cost_per_qubit(strategy: GrowthStrategy, p: float) -> float | None:
    gain = p * strategy.m - 1
    if gain <= 0:
        raise GrowthConditionError(
            f"m={strategy.m} with p={p}: short chains should satisfy m > 1/p for the cluster to grow"
        )
    b = build_cost(strategy, p)
    return None if b is None else (b + 1) / gain


def _report(strategy_name, p, m, samples, analytic_value, seed, extra) -> CostReport:
    mean = float(np.mean(samples))
    se = float(np.std(samples, ddof=1) / math.sqrt(samples.size)) if samples.size > 1 else 0.0
    rel = None if not analytic_value else (mean - analytic_value) / analytic_value
    return CostReport(strategy_name, p, m, int(samples.size), mean, se, analytic_value, rel, seed, extra)


# -- public simulations -------------------------------------------------------------------------


def simulate_sequential(
    m_target: int, p: float, trials: int = 10_000, seed: int = 0, keep_remnant: bool = False, jobs: int = 1
) -> CostReport:
    """Mean EO count to grow an ``m_target``-chain one qubit at a time."""
    _check_p(p)
    if m_target < 1:
        raise ValueError("target length must be >= 1")
    if trials < 1:
        raise ValueError("need at least one trial")
    parts = _run_blocks(_sequential_block, seed, trials, jobs, m_target, p, keep_remnant)
    eo = np.concatenate([e for e, _ in parts])
    qubits = np.concatenate([q for _, q in parts])
    name = "sequential" + ("+remnant" if keep_remnant else "")
    extra = {"mean_qubits_prepared": float(qubits.mean())}
    return _report(name, p, m_target, eo.astype(float), sequential_cost(m_target, p, keep_remnant), seed, extra)


def simulate_join_growth(
    strategy: GrowthStrategy, p: float, joins: int = 10_000, seed: int = 0, jobs: int = 1
) -> CostReport:
    """EOs per net qubit when a long chain grows by joining freshly built m-chains.

    Every join costs the EOs spent building its m-chain plus one; it adds
    ``m - 1`` qubits or removes one.  The reported mean is the ratio of total
    EOs to total length gained, with a delta-method standard error.
    """
    _check_p(p)
    if strategy.kind != "DIVIDE_CONQUER":
        raise ValueError("simulate_join_growth needs a DIVIDE_CONQUER strategy")
    if p * strategy.m <= 1:
        raise GrowthConditionError(
            f"m={strategy.m} with p={p}: short chains should satisfy m > 1/p for the cluster to grow"
        )
    if joins < 2:
        raise ValueError("need at least two joins")
    parts = _run_blocks(_join_block, seed, joins, jobs, strategy, p)
    cost = np.concatenate([c for c, _, _ in parts]).astype(float)
    gain = np.concatenate([g for _, g, _ in parts]).astype(float)
    qubits = np.concatenate([q for _, _, q in parts]).astype(float)
    ratio = cost.sum() / gain.sum()
    resid = cost - ratio * gain
    se = float(np.std(resid, ddof=1) / math.sqrt(joins) / gain.mean())
    ref = join_cost_per_qubit(strategy, p)
    extra = {
        "mean_gain": float(gain.mean()),
        "gain_stderr": float(np.std(gain, ddof=1) / math.sqrt(joins)),
        "expected_gain": p * strategy.m - 1,
        "mean_build_eo": float(cost.mean() - 1),
        "expected_build_eo": build_cost(strategy, p),
        "qubits_prepared_per_join": float(qubits.mean()),
    }
    name = f"join-{strategy.recipe}" + ("+remnant" if strategy.keep_remnant else "")
    rel = None if ref is None else (ratio - ref) / ref
    return CostReport(name, p, strategy.m, joins, float(ratio), se, ref, rel, seed, extra)


@dataclass(frozen=True)
class JoinLengthReport:
    mean: float
    stderr: float
    expected: float
    trials: int


def empirical_join_length(N: int, m: int, p: float, trials: int = 10_000, seed: int = 0) -> JoinLengthReport:
    """Mean chain length after a single join attempt of an m-chain onto an N-chain."""
    if N < 1 or m < 2:
        raise ValueError("need N >= 1 and m >= 2")
    if not 0 <= p <= 1:
        raise ValueError("p must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    ok = rng.random(trials) < p
    lengths = np.where(ok, N + m - 1, N - 1).astype(float)
    se = float(np.std(lengths, ddof=1) / math.sqrt(trials)) if trials > 1 else 0.0
    return JoinLengthReport(float(lengths.mean()), se, p * (N + m - 1) + (1 - p) * (N - 1), trials)


def threshold_scan(p_grid: Sequence[float]) -> list[dict]:
    """Smallest useful short-chain length and the C4/C5 costs for each ``p``."""
    rows = []
    for p in p_grid:
        _check_p(p)
        row = {"p": p, "minimal_m": analytic.minimal_chain_length(p)}
        for strat in ("C4", "C5"):
            try:
                row[strat] = analytic.cost_per_qubit(strat, p)
            except GrowthConditionError:
                row[strat] = None
        finite = {k: row[k] for k in ("C4", "C5") if row[k] is not None}
        row["cheapest"] = min(finite, key=finite.get) if finite else None
        rows.append(row)
    return rows


# -- single traced runs ----------------------------------------------------------------------------


def trace_sequential(m_target: int, p: float, seed: int = 0, keep_remnant: bool = False) -> GrowthTrace:
    """One chain grown qubit by qubit, with an event per EO attempt (one clock cycle each)."""
    _check_p(p)
    rng = np.random.default_rng(seed)
    length, eo, qubits, events = 1, 0, 1, []
    while length < m_target:
        ok = bool(rng.random() < p)
        eo += 1
        qubits += 1
        if ok:
            length += 1
        elif keep_remnant:
            length = max(length - 1, 1)
        else:
            length = 1
            qubits += 1
        events.append(GrowthEvent(eo, "extend", ok, length, eo))
    return GrowthTrace(eo, qubits, length, eo, tuple(events))


def trace_join_growth(strategy: GrowthStrategy, p: float, target_length: int, seed: int = 0) -> GrowthTrace:
    """Grow one long chain to ``target_length`` by joins.

    Makespan assumes one chain factory per join, all starting at cycle 0:
    join ``i`` happens one cycle after both the previous join and its own
    m-chain are done.
    """
    _check_p(p)
    if p * strategy.m <= 1:
        raise GrowthConditionError(f"m={strategy.m} with p={p}: need m > 1/p")
    rng = np.random.default_rng(seed)
    length, eo, qubits, clock, events = 0, 0, 0, 0, []
    while length < target_length:
        b_eo, b_q = _build(rng, 1, strategy, p)
        b_eo, b_q = int(b_eo[0]), int(b_q[0])
        eo += b_eo
        qubits += b_q
        if length == 0:
            length = strategy.m
            clock = max(clock, b_eo)
            events.append(GrowthEvent(clock, "build", True, length, eo))
            continue
        ok = bool(rng.random() < p)
        eo += 1
        length = length + strategy.m - 1 if ok else length - 1
        clock = max(clock, b_eo) + 1
        events.append(GrowthEvent(clock, "join", ok, length, eo))
    return GrowthTrace(eo, qubits, length, clock, tuple(events))


def physical_success_probability(config) -> float:
    """EO success probability from the exact protocol enumeration for a ``ProtocolConfig``."""
    from .protocol import run_eo_exact, summarize

    return summarize(run_eo_exact(config)).p_success
