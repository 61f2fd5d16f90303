"""Closed-form rates, emission envelopes, success probabilities and cost formulas.

Conventions: the cavity field decays at ``kappa`` (photon leakage ``2*kappa``),
and ``g`` is the Jaynes-Cummings coupling entering the Hamiltonian as
``(g/2)(|down><e| c^dag + h.c.)``.  An emitter starting in ``|e>`` with an
empty cavity (and no free-space emission) then evolves as::

    |e,0>  ->  beta(t) |e,0> + 2*alpha(t) |down,1>

i.e. ``alpha`` is *half* the cavity-photon amplitude.  That factor of two is
what makes the post-click state come out with the coefficients
``alpha, alpha*beta, 2*alpha**2`` on its three components.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass

import numpy as np

CRITICAL_RTOL = 1e-12


class GrowthConditionError(ValueError):
    """Raised when a join strategy cannot grow a cluster on average."""


@dataclass(frozen=True)
class IdealRates:
    gamma_fast: float
    gamma_slow: float
    critically_damped: bool


@dataclass(frozen=True)
class NoiseEstimates:
    t_c: float
    t_d: float
    m: int
    epsilon: float
    p_dc: float
    t_wait: float


def decay_rates(g: float, kappa: float) -> IdealRates:
    """Fast and slow decay rates ``kappa +/- sqrt(kappa**2 - g**2)``."""
    if g < 0 or kappa <= 0:
        raise ValueError("need g >= 0 and kappa > 0")
    if kappa < g * (1 - CRITICAL_RTOL):
        raise ValueError(
            f"kappa={kappa} < g={g}: underdamped regime has no real decay rates; "
            "use the numerical propagation instead"
        )
    root = math.sqrt(max(kappa * kappa - g * g, 0.0))
    critical = abs(kappa - g) <= CRITICAL_RTOL * kappa
    if critical:
        root = 0.0
    # kappa - root loses digits when g << kappa; g**2/(kappa + root) does not
    slow = g * g / (kappa + root) if kappa + root > 0 else 0.0
    return IdealRates(gamma_fast=kappa + root, gamma_slow=slow, critically_damped=critical)


def _overdamped_root(g: float, kappa: float) -> float:
    if not kappa > g:
        raise ValueError(
            f"closed-form envelopes need kappa > g strictly (got g={g}, kappa={kappa}); "
            "the degenerate point needs the limit form or numerics"
        )
    return math.sqrt(kappa * kappa - g * g)


def alpha(t: float, g: float, kappa: float) -> complex:
    """Half the cavity-photon amplitude of a single emitter started in ``|e,0>``."""
    root = _overdamped_root(g, kappa)
    rates = decay_rates(g, kappa)
    return -1j * g / (4 * root) * (math.exp(-rates.gamma_slow * t / 2) - math.exp(-rates.gamma_fast * t / 2))


def beta(t: float, g: float, kappa: float) -> float:
    """Amplitude left on ``|e,0>`` at time ``t``."""
    root = _overdamped_root(g, kappa)
    rates = decay_rates(g, kappa)
    return 0.5 * (1 + kappa / root) * math.exp(-rates.gamma_slow * t / 2) + 0.5 * (
        1 - kappa / root
    ) * math.exp(-rates.gamma_fast * t / 2)


def cavity_amplitude(t: float, g: float, kappa: float) -> complex:
    return 2 * alpha(t, g, kappa)


def ideal_success_probability(eta: float, p_cav: float = 1.0) -> float:
    """Double-herald success probability ``(eta * p_cav)**2 / 2``.

    ``p_cav`` is the chance an excited emitter's photon leaves through the
    cavity output rather than into free space (1 when there is no free-space
    emission).
    """
    if not (0 <= eta <= 1 and 0 <= p_cav <= 1):
        raise ValueError("eta and p_cav must lie in [0, 1]")
    return (eta * p_cav) ** 2 / 2


def post_click_normalization(t1: float, g: float, kappa: float) -> float:
    """Squared norm of the post-click state divided by ``|alpha|**2``.

    The three components carry amplitudes ``alpha``, ``alpha*beta`` and
    ``2*alpha**2`` (the last one spread over two orthonormal kets with
    ``1/sqrt(2)``), so the ratio is ``1 + |beta|**2 + 4|alpha|**2``.
    """
    a = alpha(t1, g, kappa)
    b = beta(t1, g, kappa)
    return 1 + abs(b) ** 2 + 4 * abs(a) ** 2


def printed_normalization(t1: float, g: float, kappa: float) -> float:
    """``1 + |beta|**2 + |alpha|**2``; kept only to document the discrepancy."""
    return 1 + abs(beta(t1, g, kappa)) ** 2 + abs(alpha(t1, g, kappa)) ** 2


def bell_state(sign: int) -> np.ndarray:
    """``(|down,up> + sign |up,down>)/sqrt(2)`` over ``|q_A q_B>`` with up=0, down=1."""
    if sign not in (1, -1):
        raise ValueError("sign must be +1 or -1")
    v = np.zeros(4, dtype=complex)
    v[0b10] = 1 / math.sqrt(2)
    v[0b01] = sign / math.sqrt(2)
    return v


def relaxed_round1_state(t1: float, g: float, kappa: float, sign: int = 1) -> np.ndarray:
    """Two-qubit state after a round-1 click at ``t1`` followed by full relaxation.

    ``rho = |Psi><Psi| / N + (1 - 1/N) |down,down><down,down|`` with
    ``N = post_click_normalization(t1, g, kappa)``.
    """
    n = post_click_normalization(t1, g, kappa)
    psi = bell_state(sign)
    rho = np.outer(psi, psi.conj()) / n
    rho[0b11, 0b11] += 1 - 1 / n
    return rho


def chain_cost_no_recycling(m: int, p: float) -> float:
    """Expected EOs to grow an ``m``-chain when every failure restarts from scratch.

    ``sum_{i=1}^{m-1} p**-i``; satisfies ``N(m) = (N(m-1) + 1)/p`` with ``N(1) = 0``.
    """
    if not 0 < p <= 1:
        raise ValueError("success probability must lie in (0, 1]; p = 0 never finishes")
    if m < 1:
        raise ValueError("chain length must be >= 1")
    return math.fsum(p ** (-i) for i in range(1, m))


def printed_chain_cost(m: int, p: float) -> float:
    """The closed form ``p**(1-m) (1 - p**(m-2)) / (1 - p)``, kept for comparison only.

    It disagrees with the defining sum (e.g. it gives 0 at ``m = 2``), so
    nothing in the package relies on it.
    """
    return p ** (1 - m) * (1 - p ** (m - 2)) / (1 - p)


def five_chain_cost_pairwise(p: float) -> float:
    """Expected EOs for a 5-chain built by joining two 3-chains, restarting on failure."""
    return (2 * chain_cost_no_recycling(3, p) + 1) / p


def minimal_chain_length(p: float) -> int:
    """Smallest ``m`` with ``p*m > 1``."""
    if not 0 < p <= 1:
        raise ValueError("p must lie in (0, 1]")
    m = int(math.floor(1 / p)) + 1
    while p * (m - 1) > 1:
        m -= 1
    while p * m <= 1:
        m += 1
    return max(m, 2)


def cost_per_qubit(strategy: str, p: float) -> float:
    """Expected EOs per qubit added to a long chain with the C4 or C5 recipe."""
    strategy = strategy.upper()
    if strategy not in ("C4", "C5"):
        raise ValueError(f"unknown strategy {strategy!r}; expected 'C4' or 'C5'")
    if not 0 < p <= 1:
        raise ValueError("p must lie in (0, 1]")
    m = 4 if strategy == "C4" else 5
    gain = p * m - 1
    if gain <= 0:
        raise GrowthConditionError(
            f"{strategy} needs p > 1/{m} (got p={p}): short chains of length m "
            "should satisfy m > 1/p for the cluster to grow on average"
        )
    if strategy == "C4":
        build = chain_cost_no_recycling(4, p)
    else:
        build = five_chain_cost_pairwise(p)
    return (build + 1) / gain


def clock_time(gamma_slow: float) -> float:
    return 10.0 / gamma_slow


def error_budget(params, detectors, t_d: float, m: int, t_wait: float | None = None) -> NoiseEstimates:
    """Order-of-magnitude spin-decoherence and dark-count error estimates.

    ``params`` provides ``g_a``/``kappa_a`` (arms assumed identical) and
    ``detectors.dark_rate`` the dark-count rate, all in one consistent unit
    system.  ``t_wait`` defaults to three slow decay times.
    """
    if not t_d > 0:
        raise ValueError("decoherence time must be positive")
    rates = decay_rates(params.g_a, params.kappa_a)
    t_c = clock_time(rates.gamma_slow)
    if t_wait is None:
        t_wait = 3.0 / rates.gamma_slow
    epsilon = 0.0 if math.isinf(t_d) else (m / 2) * t_c / t_d
    p_dc = min(1.0, detectors.dark_rate * t_wait)
    return NoiseEstimates(t_c=t_c, t_d=t_d, m=m, epsilon=epsilon, p_dc=p_dc, t_wait=t_wait)


def single_arm_eigenvalues(g: float, kappa: float, gamma: float = 0.0) -> np.ndarray:
    """Eigenvalues of the one-excitation block ``[[-i gamma/2, g/2], [g/2, -i kappa]]``."""
    tr = -0.5j * gamma - 1j * kappa
    det = (-0.5j * gamma) * (-1j * kappa) - g * g / 4
    disc = cmath.sqrt(tr * tr - 4 * det)
    return np.array([(tr + disc) / 2, (tr - disc) / 2])
