import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from heralded_cluster import analytic, verify
from heralded_cluster.analytic import GrowthConditionError
from heralded_cluster.trajectories import DetectorModel, SystemParams


def test_decay_rates_reference_values():
    # kappa +/- sqrt(kappa^2 - g^2) at g = 0.3, kappa = 1
    r = analytic.decay_rates(0.3, 1.0)
    assert r.gamma_fast == pytest.approx(1.95394, abs=1e-5)
    assert r.gamma_slow == pytest.approx(0.04606, abs=1e-5)
    assert not r.critically_damped


def test_slow_rate_keeps_precision_at_weak_coupling():
    r = analytic.decay_rates(1e-6, 1.0)
    assert r.gamma_slow == pytest.approx(5e-13, rel=1e-9)


def test_underdamped_rejected():
    with pytest.raises(ValueError, match="underdamped"):
        analytic.decay_rates(1.2, 1.0)
    with pytest.raises(ValueError):
        analytic.alpha(1.0, 1.0, 1.0)  # the closed forms divide by sqrt(kappa^2 - g^2)


def test_critical_damping_flag():
    r = analytic.decay_rates(1.0, 1.0)
    assert r.critically_damped and r.gamma_fast == r.gamma_slow == 1.0


@given(st.floats(0.05, 0.9), st.floats(0.0, 40.0))
def test_closed_forms_match_propagation(g, t_scaled):
    t = t_scaled / analytic.decay_rates(g, 1.0).gamma_slow
    e, c = verify.single_arm_amplitudes(g, 1.0, [t])
    assert abs(e[0] - analytic.beta(t, g, 1.0)) < 1e-8
    assert abs(c[0] - analytic.cavity_amplitude(t, g, 1.0)) < 1e-8


@given(st.floats(0.01, 0.99), st.floats(0.0, 0.5))
def test_eigenvalues_match_rates(g, gamma):
    lam = analytic.single_arm_eigenvalues(g, 1.0, gamma)
    block = np.array([[-0.5j * gamma, g / 2], [g / 2, -1j]])
    ref = np.linalg.eigvals(block)
    # same multiset of eigenvalues
    assert np.max(np.min(np.abs(lam[:, None] - ref[None, :]), axis=1)) < 1e-12
    assert np.max(np.min(np.abs(ref[:, None] - lam[None, :]), axis=1)) < 1e-12
    if gamma == 0:
        r = analytic.decay_rates(g, 1.0)
        assert np.allclose(np.sort(-2 * lam.imag), [r.gamma_slow, r.gamma_fast])


def test_alpha_starts_and_ends_at_zero():
    assert analytic.alpha(0.0, 0.3, 1.0) == 0
    assert analytic.beta(0.0, 0.3, 1.0) == pytest.approx(1.0)
    assert abs(analytic.alpha(2000.0, 0.3, 1.0)) < 1e-15


@given(st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_ideal_success_probability(eta, p_cav):
    assert analytic.ideal_success_probability(eta, p_cav) == pytest.approx((eta * p_cav) ** 2 / 2)


def test_ideal_success_anchor():
    assert analytic.ideal_success_probability(1.0) == 0.5


def test_bad_efficiency():
    with pytest.raises(ValueError):
        analytic.ideal_success_probability(1.5)


def test_normalization_forms_differ():
    g, k, t = 0.3, 1.0, 10.0
    a, b = analytic.alpha(t, g, k), analytic.beta(t, g, k)
    # squared norm of alpha|Psi> + alpha*beta|.> + 2 alpha^2 |.>, each ket normalized
    direct = (abs(a) ** 2 + abs(a * b) ** 2 + abs(2 * a * a) ** 2) / abs(a) ** 2
    assert analytic.post_click_normalization(t, g, k) == pytest.approx(direct, rel=1e-14)
    assert analytic.printed_normalization(t, g, k) < analytic.post_click_normalization(t, g, k)


@pytest.mark.parametrize("sign", [1, -1])
def test_bell_state(sign):
    v = analytic.bell_state(sign)
    assert np.isclose(np.linalg.norm(v), 1)
    assert v[0b10] == pytest.approx(1 / math.sqrt(2))
    assert v[0b01] == pytest.approx(sign / math.sqrt(2))


def test_relaxed_state_is_a_density_matrix():
    rho = analytic.relaxed_round1_state(5.0, 0.3, 1.0, -1)
    assert np.trace(rho) == pytest.approx(1)
    assert np.all(np.linalg.eigvalsh(rho) > -1e-15)


@given(st.integers(2, 12), st.floats(0.05, 1.0))
def test_chain_cost_recursion(m, p):
    lhs = analytic.chain_cost_no_recycling(m, p)
    rhs = (analytic.chain_cost_no_recycling(m - 1, p) + 1) / p
    assert lhs == pytest.approx(rhs, rel=1e-12)


def test_chain_cost_small_cases():
    assert analytic.chain_cost_no_recycling(1, 0.3) == 0
    assert analytic.chain_cost_no_recycling(2, 0.5) == 2
    assert analytic.chain_cost_no_recycling(4, 0.5) == 14
    assert analytic.chain_cost_no_recycling(7, 1.0) == 6


def test_printed_closed_form_disagrees_for_short_chains():
    p = 0.5
    assert analytic.printed_chain_cost(2, p) == 0
    assert analytic.printed_chain_cost(2, p) != analytic.chain_cost_no_recycling(2, p)
    assert analytic.printed_chain_cost(3, p) != pytest.approx(analytic.chain_cost_no_recycling(3, p))


def test_chain_cost_rejects_p_zero():
    with pytest.raises(ValueError):
        analytic.chain_cost_no_recycling(3, 0.0)


def test_cost_per_qubit_anchors():
    assert analytic.cost_per_qubit("C4", 0.85**2 / 2) == pytest.approx(73.4, abs=0.1)
    assert analytic.cost_per_qubit("C5", 0.70**2 / 2) == pytest.approx(775, abs=1)
    p = 0.245
    assert analytic.five_chain_cost_pairwise(p) == pytest.approx((2 * (1 / p + 1 / p**2) + 1) / p)


def test_growth_condition_is_named():
    with pytest.raises(GrowthConditionError, match="m > 1/p"):
        analytic.cost_per_qubit("C4", 0.2)
    assert issubclass(GrowthConditionError, ValueError)


@given(st.floats(0.02, 1.0))
def test_minimal_chain_length(p):
    m = analytic.minimal_chain_length(p)
    assert p * m > 1 or m == 2
    assert m == 2 or p * (m - 1) <= 1


def test_error_budget_dimensionless_nv():
    # g = kappa = 1, gamma = g/100, t_d = 32 us * 4e9 /s, dark rate 500/s / 4e9
    params = SystemParams.symmetric(1.0, 1.0, 0.01)
    est = analytic.error_budget(params, DetectorModel(dark_rate=500 / 4e9), 32e-6 * 4e9, 8)
    assert est.t_c == pytest.approx(10.0)
    assert est.epsilon == pytest.approx(3.125e-4)
    assert est.p_dc == pytest.approx(3.75e-7)


def test_error_budget_infinite_coherence():
    est = analytic.error_budget(SystemParams.symmetric(), DetectorModel(), math.inf, 4)
    assert est.epsilon == 0
