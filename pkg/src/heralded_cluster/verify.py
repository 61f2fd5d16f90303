"""Cross-oracle checks: closed forms vs numerics, sampling vs enumeration, graphs vs dense vectors.

Each check returns a :class:`Check`; :func:`run_checks` collects them for the
``verify`` command.  Every check looks its dependencies up through module
attributes so that a deliberately corrupted function is noticed.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from . import analytic, graphstate, growth, protocol, trajectories
from .fockspace import Level, SpaceConfig, build_space


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0


def _timed(name, fn) -> Check:
    t0 = time.perf_counter()
    try:
        ok, detail = fn()
    except Exception as exc:  # a crashing check is a failing check
        ok, detail = False, f"raised {type(exc).__name__}: {exc}"
    return Check(name, bool(ok), detail, time.perf_counter() - t0)


def single_arm_amplitudes(g: float, kappa: float, times) -> tuple[np.ndarray, np.ndarray]:
    """``(<e,0|psi(t)>, <down,1|psi(t)>)`` for arm A started in ``|e,0>`` (arm B idle)."""
    params = trajectories.SystemParams(g, g, kappa, kappa)
    space = build_space(SpaceConfig())
    start = space.basis_state(Level.E, 0, Level.UP, 0)
    i_e = space.index(Level.E, 0, Level.UP, 0)
    i_c = space.index(Level.DOWN, 1, Level.UP, 0)
    e, c = [], []
    for t in times:
        psi = trajectories.no_jump_propagate(start, params, float(t)).amplitudes
        e.append(psi[i_e])
        c.append(psi[i_c])
    return np.array(e), np.array(c)


def check_closed_forms(pairs=((0.3, 1.0), (0.5, 1.0), (0.9, 1.0)), points: int = 41, tol: float = 1e-8):
    worst = 0.0
    for g, kappa in pairs:
        rates = analytic.decay_rates(g, kappa)
        ts = np.linspace(0, 10 / rates.gamma_slow, points)
        e, c = single_arm_amplitudes(g, kappa, ts)
        a = np.array([analytic.cavity_amplitude(t, g, kappa) for t in ts])
        b = np.array([analytic.beta(t, g, kappa) for t in ts])
        worst = max(worst, np.max(np.abs(c - a)), np.max(np.abs(e - b)))
        lam = analytic.single_arm_eigenvalues(g, kappa)
        numeric = np.sort(-2 * lam.imag)
        worst = max(worst, abs(numeric[0] - rates.gamma_slow), abs(numeric[1] - rates.gamma_fast))
    return worst < tol, f"max deviation {worst:.2e} (tol {tol:g})"


def check_completeness(n: int = 5, seed: int = 0):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n):
        g = rng.uniform(0, 1, 2)
        k = rng.uniform(0.1, 2, 2)
        gam = rng.uniform(0, 0.5, 2)
        params = trajectories.SystemParams(g[0], g[1], k[0], k[1], gam[0], gam[1])
        det = trajectories.DetectorModel(eta=float(rng.uniform()))
        h = trajectories.effective_hamiltonian(params)
        s = sum(ch.operator.conj().T @ ch.operator for ch in trajectories.jump_channels(params, det))
        worst = max(worst, float(np.max(np.abs(1j * (h - h.conj().T) - s))))
    return worst < 1e-12, f"max |i(H-H^dag) - sum L^dag L| = {worst:.1e}"


def check_branch_sums(seed: int = 1):
    rng = np.random.default_rng(seed)
    space = build_space(SpaceConfig())
    worst = 0.0
    for _ in range(3):
        qa = rng.normal(size=3) + 1j * rng.normal(size=3)
        qb = rng.normal(size=3) + 1j * rng.normal(size=3)
        psi = space.product_state(qa / np.linalg.norm(qa), qb / np.linalg.norm(qb))
        params = trajectories.SystemParams(*rng.uniform(0.1, 0.6, 2), *rng.uniform(0.8, 1.2, 2), *rng.uniform(0, 0.05, 2))
        det = trajectories.DetectorModel(eta=float(rng.uniform(0.3, 1)), dark_rate=float(rng.uniform(0, 1e-3)))
        br = trajectories.enumerate_round(psi, params, det)
        worst = max(worst, abs(sum(b.probability for b in br) - 1))
    return worst < 1e-9, f"max |sum p - 1| = {worst:.1e}"


def check_ideal_eo():
    res = protocol.run_eo_exact(protocol.ProtocolConfig.converged())
    s = protocol.summarize(res)
    pat = max(abs(v - 0.125) for v in s.p_pattern.values())
    ok = abs(s.p_success - 0.5) < 1e-6 and pat < 1e-6 and 1 - s.fidelity < 1e-9
    return ok, f"p={s.p_success:.9f}, max |p_pattern - 1/8|={pat:.1e}, 1-F={1 - s.fidelity:.1e}"


def check_mc_round(n: int, seed: int = 7):
    params = trajectories.SystemParams.symmetric()
    space = build_space(SpaceConfig())
    plus_e = np.array([1, 0, 1]) / math.sqrt(2)
    psi = space.product_state(plus_e, plus_e)
    t_wait, t_relax = trajectories.default_windows(params)
    exact = {b.herald: b.probability for b in trajectories.enumerate_round(psi, params, trajectories.DetectorModel(), t_wait, t_relax)}
    s = trajectories.sample_round(psi, params, trajectories.DetectorModel(), t_wait, t_relax, n=n, rng_seed=seed)
    worst = 0.0
    for h, p in exact.items():
        f = float(np.mean(s.herald == int(h)))
        sigma = math.sqrt(max(p * (1 - p), 1e-300) / n)
        z = abs(f - p) / sigma if p > 0 else (0.0 if f == 0 else math.inf)
        worst = max(worst, z)
    return worst < 3, f"{n} trajectories, worst deviation {worst:.2f} sigma"


def check_mc_eo(n: int, seed: int = 11):
    cfg = protocol.ProtocolConfig()
    exact = {r.label: r.probability for r in protocol.run_eo_exact(cfg)}
    counts = protocol.sample_eo(cfg, n, seed).class_counts()
    worst = 0.0
    for lab in set(exact) | set(counts):
        p = exact.get(lab, 0.0)
        f = counts.get(lab, 0) / n
        sigma = math.sqrt(max(p * (1 - p), 1e-300) / n)
        worst = max(worst, abs(f - p) / sigma if p > 0 else (0.0 if f == 0 else math.inf))
    return worst < 3, f"{n} attempts, worst class deviation {worst:.2f} sigma"


def random_graph_program(rng: np.random.Generator, max_ops: int = 6, max_qubits: int = 10) -> graphstate.GraphState:
    """Random sequence of extend / shrink / join operations on small chains."""
    fresh = iter(range(100, 10_000))
    st = graphstate.linear_chain(int(rng.integers(1, 4)))
    for _ in range(int(rng.integers(1, max_ops + 1))):
        if not st.vertices:
            break
        ends = [v for v in st.vertices if st.degree(v) == 1] or list(st.vertices)
        end = ends[int(rng.integers(len(ends)))]
        kind = rng.choice(["extend", "extend_fail", "shrink", "join", "join_fail"])
        extendable = len(st) == 1 or st.degree(end) == 1
        if kind == "extend" and extendable and len(st) < max_qubits:
            sign = int(rng.choice([1, -1]))
            st = graphstate.extend_chain(st, next(fresh), graphstate.EoOutcome(True, sign), end=end)
        elif kind == "extend_fail":
            st = graphstate.shrink_on_failure(
                st, end, int(rng.integers(2)), bool(rng.integers(2)), partner=next(fresh), partner_result=int(rng.integers(2))
            )
        elif kind == "shrink":
            st = st.measure_z(end, int(rng.integers(2)))
        elif kind in ("join", "join_fail") and len(st) + 2 <= max_qubits:
            other = graphstate.linear_chain(2, 100 * next(fresh))
            b1 = other.vertices[-1]
            st = st.union(other)
            if kind == "join":
                sign = int(rng.choice([1, -1]))
                st = graphstate.join(st, end, b1, graphstate.EoOutcome(True, sign), int(rng.choice([1, -1])))
            else:
                fail = (int(rng.integers(2)), int(rng.integers(2)))
                st = graphstate.join(st, end, b1, graphstate.EoOutcome(False), fail_results=fail, flipped=bool(rng.integers(2)))
    return st


def check_graph_vs_dense(n: int, seed: int = 3):
    rng = np.random.default_rng(seed)
    worst = 1.0
    for _ in range(n):
        st = random_graph_program(rng)
        worst = min(worst, graphstate.verify_dense(st))
    return worst > 1 - 1e-10, f"{n} random programs, min overlap {worst:.12f}"


def check_costs():
    c4 = analytic.cost_per_qubit("C4", 0.85**2 / 2)
    c5 = analytic.cost_per_qubit("C5", 0.70**2 / 2)
    rec = max(
        abs(analytic.chain_cost_no_recycling(m, p) - (analytic.chain_cost_no_recycling(m - 1, p) + 1) / p)
        for m in range(2, 9)
        for p in (0.2, 0.5, 0.9)
    )
    ok = abs(c4 - 73.4) <= 0.1 and abs(c5 - 775) <= 1 and rec < 1e-9
    return ok, f"C4={c4:.3f}, C5={c5:.2f}, recursion residual {rec:.1e}"


def check_growth_mc(trials: int, seed: int = 5):
    r = growth.simulate_sequential(4, 0.5, trials, seed)
    return abs(r.mean - 14) / 14 < 0.01, f"sequential m=4 p=1/2: {r.mean:.3f} +/- {r.stderr:.3f} (expected 14)"


def run_checks(level: str = "fast") -> list[Check]:
    if level not in ("fast", "full"):
        raise ValueError("level must be 'fast' or 'full'")
    full = level == "full"
    checks = [
        ("closed forms vs matrix exponential", check_closed_forms),
        ("jump-channel completeness", check_completeness),
        ("branch probabilities sum to one", check_branch_sums),
        ("ideal EO: p=1/2, patterns 1/8, F=1", check_ideal_eo),
        ("trajectories vs enumeration (round)", lambda: check_mc_round(100_000 if full else 4000)),
        ("graph bookkeeping vs dense replay", lambda: check_graph_vs_dense(200 if full else 40)),
        ("cost formulas C4, C5, N_EO recursion", check_costs),
        ("sequential growth Monte Carlo", lambda: check_growth_mc(100_000 if full else 20_000)),
    ]
    if full:
        checks.append(("trajectories vs enumeration (full EO)", lambda: check_mc_eo(100_000)))
    return [_timed(name, fn) for name, fn in checks]
