import itertools
import math
from functools import reduce

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from heralded_cluster import graphstate as G
from heralded_cluster import protocol as P
from heralded_cluster import verify
from heralded_cluster.graphstate import Clifford, EoOutcome

OK = {1: EoOutcome(True, 1), -1: EoOutcome(True, -1)}
FAIL = EoOutcome(False)
words = st.text(alphabet="XZHS", min_size=0, max_size=12)


def stabilized(state):
    return all(abs(v - 1) < 1e-10 for v in G.stabilizer_expectations(state).values())


def chain_formula(n):
    """(|0>_1 + |1>_1 Z_2)(|0>_2 + |1>_2 Z_3)...(|0>_N + |1>_N), built right to left."""
    zero, one = np.array([1, 0], complex), np.array([0, 1], complex)
    z = np.diag([1, -1]).astype(complex)
    psi = zero + one  # qubit N
    for _ in range(n - 1):
        # prepend a qubit k: |0>_k psi + |1>_k Z_{k+1} psi
        z_next = np.kron(z, np.eye(psi.size // 2))
        psi = np.concatenate([psi, z_next @ psi])
    return psi / np.linalg.norm(psi)


# -- Clifford frames ---------------------------------------------------------------------


def test_group_has_24_elements():
    assert len(G._group()) == 24
    assert Clifford.from_word("H").name == "H"
    assert Clifford.from_word("HH").is_identity
    assert Clifford.from_word("SSSS").is_identity


@given(words)
def test_word_reduction_is_confluent(word):
    left = reduce(lambda acc, ch: acc @ Clifford.from_word(ch), word, G.IDENTITY)
    right = reduce(lambda acc, ch: Clifford.from_word(ch) @ acc, reversed(word), G.IDENTITY)
    assert left == right == Clifford.from_word(word)
    for cut in range(len(word) + 1):
        assert Clifford.from_word(word[:cut]) @ Clifford.from_word(word[cut:]) == left


@given(words)
def test_inverse_and_key_parse(word):
    c = Clifford.from_word(word)
    assert (c @ c.inverse()).is_identity
    assert Clifford.parse(c.key) == c
    # the matrix conjugates X and Z as its key says (up to global phase)
    u = c.matrix
    x, z = G._PAULI["X"], G._PAULI["Z"]
    assert G._signed_pauli(u @ x @ u.conj().T) == c.key[:2]
    assert G._signed_pauli(u @ z @ u.conj().T) == c.key[2:]


def test_z_flip():
    assert Clifford.from_word("X").z_flip() == 1
    assert Clifford.from_word("Z").z_flip() == 0
    assert Clifford.from_word("H").z_flip() is None
    with pytest.raises(ValueError):
        Clifford("+X+X")
    with pytest.raises(ValueError):
        Clifford.from_word("HQ")


# -- chains ---------------------------------------------------------------------------------


@pytest.mark.parametrize("n", [1, 2, 3, 5, 8])
def test_linear_chain_matches_formula(n):
    chain = G.linear_chain(n)
    assert chain.is_chain()
    dense = G.dense_expand(chain)
    assert abs(np.vdot(dense.amplitudes, chain_formula(n))) == pytest.approx(1, abs=1e-12)


@pytest.mark.parametrize("sign", [1, -1])
@pytest.mark.parametrize("n", [1, 2, 4])
def test_extend_success(sign, n):
    chain = G.linear_chain(n)
    end = chain.chain_order()[-1]
    out = G.extend_chain(chain, 99, OK[sign])
    assert len(out) == n + 1 and out.is_chain()
    assert out.chain_order()[-1] == 99 and 99 in out.neighbors(end)
    assert G.verify_dense(out) == pytest.approx(1, abs=1e-10)
    assert stabilized(out)


@pytest.mark.parametrize("result,flipped,partner_result", list(itertools.product([0, 1], [False, True], [0, 1])))
def test_extend_failure_every_branch(result, flipped, partner_result):
    chain = G.linear_chain(4)
    out = G.shrink_on_failure(chain, 3, result, flipped, partner=99, partner_result=partner_result)
    assert len(out) == 3 and out.is_chain() and 99 not in out.vertices
    assert G.verify_dense(out) == pytest.approx(1, abs=1e-10)
    assert stabilized(out)


def test_extend_rejects_failure_outcome():
    with pytest.raises(ValueError):
        G.extend_chain(G.linear_chain(2), 5, FAIL)
    with pytest.raises(ValueError):
        EoOutcome(True)
    with pytest.raises(ValueError):
        G.extend_chain(G.linear_chain(3), 9, OK[1], end=1)


@pytest.mark.parametrize("sign,b1", list(itertools.product([1, -1], [1, -1])))
@pytest.mark.parametrize("n,m", [(1, 2), (3, 4), (4, 3)])
def test_join_success(sign, b1, n, m):
    a = G.linear_chain(n)
    b = G.linear_chain(m, 100)
    out = G.join_chains(a, b, OK[sign], b1)
    assert len(out) == n + m - 1 and out.is_chain()
    b_order = b.chain_order()[::-1]  # B1 is the end we joined on
    assert out.chain_order() in (a.chain_order() + b_order[1:], (a.chain_order() + b_order[1:])[::-1])
    assert G.verify_dense(out) == pytest.approx(1, abs=1e-10)
    assert stabilized(out)


@pytest.mark.parametrize("results,flipped", list(itertools.product(itertools.product([0, 1], [0, 1]), [False, True])))
def test_join_failure_every_branch(results, flipped):
    out = G.join_chains(G.linear_chain(3), G.linear_chain(4, 100), FAIL, fail_results=results, flipped=flipped)
    assert len(out) == 5
    assert G.verify_dense(out) == pytest.approx(1, abs=1e-10)
    assert stabilized(out)


def test_join_preconditions():
    a = G.linear_chain(3)
    with pytest.raises(ValueError):
        G.join_chains(a, G.linear_chain(1, 50), OK[1])
    with pytest.raises(ValueError):
        G.join(a, 0, 2, OK[1])
    with pytest.raises(ValueError):
        a.union(G.linear_chain(2, 1))


@settings(max_examples=250)
@given(st.integers(0, 2**32 - 1))
def test_random_programs_match_dense_replay(seed):
    state = verify.random_graph_program(np.random.default_rng(seed), max_ops=8, max_qubits=10)
    assert len(state) <= 10
    assert G.verify_dense(state) >= 1 - 1e-10
    assert stabilized(state)


def test_random_programs_are_not_trivial():
    rng = np.random.default_rng(0)
    sizes = [len(verify.random_graph_program(rng, max_ops=8)) for _ in range(200)]
    assert max(sizes) >= 7 and np.mean(sizes) > 2


# -- EO map vs physics -----------------------------------------------------------------------


def test_eo_kraus_matches_physical_protocol():
    a = np.array([0.6, 0.8])
    b = np.array([0.8, -0.6j])
    cfg = P.ProtocolConfig.converged(initial_qubit_states=(tuple(a), tuple(b)))
    for r in P.run_eo_exact(cfg):
        if not r.success:
            continue
        # |01> -> |10>, |10> -> s|01>
        v = np.zeros(4, complex)
        v[0b10] = a[0] * b[1]
        v[0b01] = r.sign * a[1] * b[0]
        v /= np.linalg.norm(v)
        assert np.real(v.conj() @ r.final_state @ v) == pytest.approx(1, abs=1e-9)


# -- I-clusters ---------------------------------------------------------------------------


def test_I_cluster_shape():
    ic = G.make_I_cluster()
    assert len(ic.state) == 6
    assert sorted(ic.state.degree(v) for v in ic.state.vertices) == [1, 1, 1, 1, 3, 3]
    assert ic.stem in ic.state.edges or tuple(reversed(ic.stem)) in ic.state.edges


def test_cross_link_success():
    ra, rb = G.linear_chain(2, 0), G.linear_chain(2, 10)
    ic = G.make_I_cluster(start=100, left=2, right=2, bottom_left=2, bottom_right=2)
    out = G.attach_cross_link(ra, rb, ic, [OK[1], OK[-1]], (1, -1))
    assert ra.chain_order()[-1] in out.vertices
    # rails now connected through the stem
    assert rb.chain_order()[0] in out.component(ra.chain_order()[0])
    assert G.verify_dense(out) == pytest.approx(1, abs=1e-10)
    assert stabilized(out)


@pytest.mark.parametrize("first,second", [(FAIL, OK[1]), (OK[-1], FAIL), (FAIL, FAIL)])
def test_cross_link_failures(first, second):
    ra, rb = G.linear_chain(3, 0), G.linear_chain(3, 10)
    ic = G.make_I_cluster(start=100)
    out = G.attach_cross_link(ra, rb, ic, [first, second], fail_results=((1, 0), (0, 1)))
    assert G.verify_dense(out) == pytest.approx(1, abs=1e-10)
    assert stabilized(out)
    assert 10 not in out.component(0)


# -- serialization ----------------------------------------------------------------------------


def test_json_roundtrip_keeps_state():
    st_ = G.extend_chain(G.linear_chain(3), 7, OK[-1])
    back = G.from_json(G.to_json(st_))
    assert back.edges == st_.edges and dict(back.frames) == dict(st_.frames)
    assert G.dense_expand(back).overlap(G.dense_expand(st_)) == pytest.approx(1)
    assert G.verify_dense(back) == pytest.approx(1)


def test_dense_cap():
    with pytest.raises(ValueError):
        G.dense_expand(G.linear_chain(G.MAX_DENSE_QUBITS + 1))
    assert math.isclose(np.linalg.norm(G.dense_expand(G.linear_chain(G.MAX_DENSE_QUBITS)).amplitudes), 1)
