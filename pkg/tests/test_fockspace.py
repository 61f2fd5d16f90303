import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from heralded_cluster.fockspace import (
    Arm,
    BasisLabel,
    Level,
    PureState,
    SpaceConfig,
    annihilation,
    apply,
    atomic_transition,
    build_space,
    inner,
    is_hermitian,
    reduce_to_qubits,
)

levels = st.sampled_from(list(Level))


@pytest.mark.parametrize("n_max", [1, 2, 3])
def test_dimension(n_max):
    assert build_space(SpaceConfig(n_max=n_max)).dim == 9 * (n_max + 1) ** 2


@pytest.mark.parametrize("bad", [0, -1, 1.5])
def test_bad_cutoff(bad):
    with pytest.raises(ValueError):
        SpaceConfig(n_max=bad)


@given(levels, st.integers(0, 2), levels, st.integers(0, 2))
def test_index_label_roundtrip(qa, pa, qb, pb):
    space = build_space(SpaceConfig(n_max=2))
    i = space.index(qa, pa, qb, pb)
    assert space.label(i) == BasisLabel(qa, pa, qb, pb)
    assert space.basis_state(qa, pa, qb, pb).amplitudes[i] == 1


def test_ordering_qa_slowest():
    space = build_space(SpaceConfig(n_max=1))
    assert space.index(Level.UP, 0, Level.UP, 1) == 1
    assert space.index(Level.UP, 0, Level.DOWN, 0) == 2
    assert space.index(Level.UP, 1, Level.UP, 0) == 6
    assert space.index(Level.DOWN, 0, Level.UP, 0) == 12


def test_excitation_count():
    assert BasisLabel(Level.E, 1, Level.DOWN, 1).excitations() == 3
    assert BasisLabel(Level.UP, 0, Level.DOWN, 0).excitations() == 0


@pytest.mark.parametrize("arm", list(Arm))
def test_annihilation_ladder(arm):
    cfg = SpaceConfig(n_max=3)
    space = build_space(cfg)
    a = annihilation(arm, cfg)
    for n in range(1, 4):
        pa, pb = (n, 0) if arm is Arm.A else (0, n)
        qa, qb = (n - 1, 0) if arm is Arm.A else (0, n - 1)
        out = apply(a, space.basis_state(Level.DOWN, pa, Level.UP, pb))
        assert np.isclose(inner(space.basis_state(Level.DOWN, qa, Level.UP, qb), out), np.sqrt(n))
    # [a, a^dag] = 1 away from the cutoff
    comm = a @ a.conj().T - a.conj().T @ a
    number = space.number(arm)
    below = np.real(np.diag(number)) < 2.5
    assert np.allclose(np.diag(comm)[below], 1)
    assert is_hermitian(number)


def test_atomic_transition_is_ket_bra():
    cfg = SpaceConfig()
    space = build_space(cfg)
    op = atomic_transition(Arm.B, Level.E, Level.DOWN, cfg)
    out = apply(op, space.basis_state(Level.UP, 1, Level.E, 0))
    assert np.isclose(inner(space.basis_state(Level.UP, 1, Level.DOWN, 0), out), 1)
    assert np.allclose(apply(op, space.basis_state(Level.UP, 0, Level.DOWN, 0)).amplitudes, 0)


def test_product_state_reduces_to_qubit_product():
    space = build_space(SpaceConfig())
    a = np.array([0.6, 0.8j, 0])
    b = np.array([1, 1, 0]) / np.sqrt(2)
    rho = space.product_state(a, b).density_matrix()
    q = reduce_to_qubits(rho)
    expected = np.kron(np.outer(a[:2], a[:2].conj()), np.outer(b[:2], b[:2].conj()))
    assert np.allclose(q, expected)


def test_reduce_drops_excited_population():
    space = build_space(SpaceConfig())
    rho = space.basis_state(Level.E, 0, Level.UP, 0).density_matrix()
    assert np.trace(reduce_to_qubits(rho)) == 0


complex_vec = st.lists(st.tuples(st.floats(-1, 1), st.floats(-1, 1)), min_size=36, max_size=36)


@given(complex_vec)
def test_purestate_json_roundtrip(pairs):
    psi = PureState([complex(a, b) for a, b in pairs])
    back = PureState.from_json(psi.to_json())
    assert np.array_equal(back.amplitudes, psi.amplitudes)
    assert json.loads(psi.to_json())["space"]["n_max"] == 1


def test_purestate_is_immutable_and_checked():
    psi = build_space(SpaceConfig()).basis_state(Level.UP, 0, Level.UP, 0)
    with pytest.raises(ValueError):
        psi.amplitudes[0] = 2
    with pytest.raises(ValueError):
        PureState(np.zeros(5))
    with pytest.raises(ValueError):
        PureState(np.full(36, np.nan))
    with pytest.raises(ZeroDivisionError):
        PureState(np.zeros(36)).normalized()
