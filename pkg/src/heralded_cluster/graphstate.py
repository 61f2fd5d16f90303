"""Cluster states as graphs with local Clifford frames, grown with the EO.

A :class:`GraphState` stands for ``(prod_v U_v) |G>`` where ``|G>`` is the
graph state ``prod_{(u,v) in E} CZ_uv |+>^n`` and each ``U_v`` is a
single-qubit Clifford (the frame).  Qubit ``|0>`` is the emitter's ``|up>``
and ``|1>`` its ``|down>``.

The EO enters only through its two-qubit Kraus action.  On a heralded
success with sign ``s`` it maps ``|01> -> |10>`` and ``|10> -> s |01>``
(arm A first) and kills ``|00>``, ``|11>``.  A failure is diagonal in the
computational basis, followed by ``X (x) X`` if the second round was
reached, and the two qubits are then measured out.

Every operation also appends to ``history`` the physical steps it stands
for (preparations, gates, EO Kraus maps, measurements).  :func:`replay`
executes that history on a plain state vector, which is how the frame
bookkeeping is checked against brute force.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Hashable, Iterable, Sequence

import numpy as np

MAX_DENSE_QUBITS = 12

# -- single-qubit Cliffords --------------------------------------------------------

_PAULI = {
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}
_GATES = {
    "I": np.eye(2, dtype=complex),
    **_PAULI,
    "H": np.array([[1, 1], [1, -1]], dtype=complex) / math.sqrt(2),
    "S": np.array([[1, 0], [0, 1j]], dtype=complex),
}


def _signed_pauli(m: np.ndarray) -> str:
    for name, p in _PAULI.items():
        for sign, s in (("+", 1), ("-", -1)):
            if np.allclose(m, s * p, atol=1e-9):
                return sign + name
    raise ValueError("matrix is not a Clifford (conjugation leaves the Pauli group)")


def _key(u: np.ndarray) -> str:
    ud = u.conj().T
    return _signed_pauli(u @ _PAULI["X"] @ ud) + _signed_pauli(u @ _PAULI["Z"] @ ud)


@lru_cache(maxsize=None)
def _group() -> dict[str, np.ndarray]:
    """The 24 single-qubit Cliffords modulo phase, keyed by the images of X and Z."""
    found = {_key(_GATES["I"]): _GATES["I"]}
    frontier = [_GATES["I"]]
    while frontier:
        nxt = []
        for u in frontier:
            for g in (_GATES["H"], _GATES["S"]):
                v = g @ u
                k = _key(v)
                if k not in found:
                    found[k] = v
                    nxt.append(v)
        frontier = nxt
    return found


_NAMED_WORDS = ("I", "X", "Y", "Z", "H", "S", "HX", "HZ", "SH", "HS")


@lru_cache(maxsize=None)
def _names() -> dict[str, str]:
    out = {}
    for w in _NAMED_WORDS:
        u = _GATES["I"]
        for ch in w:
            u = u @ _GATES[ch]
        out.setdefault(_key(u), w)
    return out


@dataclass(frozen=True)
class Clifford:
    """Single-qubit Clifford up to global phase.

    ``key`` lists the conjugation images of X and Z, e.g. ``"+Z+X"`` for the
    Hadamard.  Words such as ``"HX"`` read as matrix products (the rightmost
    letter acts first).
    """

    key: str = "+X+Z"

    def __post_init__(self):
        if self.key not in _group():
            raise ValueError(f"not a canonical Clifford label: {self.key!r}")

    @classmethod
    def from_matrix(cls, u) -> "Clifford":
        return cls(_key(np.asarray(u, dtype=complex)))

    @classmethod
    def from_word(cls, word: str) -> "Clifford":
        u = _GATES["I"]
        for ch in word.replace(" ", "").replace("*", ""):
            if ch not in _GATES:
                raise ValueError(f"unknown gate letter {ch!r} in word {word!r}")
            u = u @ _GATES[ch]
        return cls.from_matrix(u)

    @classmethod
    def parse(cls, text: str) -> "Clifford":
        return cls(text) if text in _group() else cls.from_word(text)

    @property
    def matrix(self) -> np.ndarray:
        return _group()[self.key]

    @property
    def name(self) -> str:
        return _names().get(self.key, self.key)

    def __matmul__(self, other: "Clifford") -> "Clifford":
        return Clifford.from_matrix(self.matrix @ other.matrix)

    def inverse(self) -> "Clifford":
        return Clifford.from_matrix(self.matrix.conj().T)

    @property
    def is_identity(self) -> bool:
        return self.key == "+X+Z"

    def z_flip(self) -> int | None:
        """1 if ``U Z U^dag = -Z``, 0 if ``+Z``, ``None`` when Z is not preserved."""
        img = self.key[2:]
        if img == "+Z":
            return 0
        if img == "-Z":
            return 1
        return None

    def __str__(self):
        return self.name


IDENTITY = Clifford()

# corrections after a heralded extension, keyed by the EO sign: (new qubit, old end)
EXTEND_FRAMES = {1: (Clifford.from_word("H"), Clifford.from_word("X")), -1: (Clifford.from_word("HX"), Clifford.from_word("X"))}
# frame left on A1 after a join, keyed by (EO sign) * (B1 result)
JOIN_FRAMES = {1: IDENTITY, -1: Clifford.from_word("Z")}


# -- graph state ------------------------------------------------------------------------


@dataclass(frozen=True)
class EoOutcome:
    success: bool
    sign: int | None = None

    def __post_init__(self):
        if self.success and self.sign not in (1, -1):
            raise ValueError("a successful EO needs sign +1 or -1")
        if not self.success and self.sign is not None:
            raise ValueError("sign is only defined on success")


def _edge(u, v) -> tuple:
    if u == v:
        raise ValueError("self-loops are not allowed")
    return (u, v) if _sort_key(u) <= _sort_key(v) else (v, u)


def _sort_key(v):
    return (0, v, "") if isinstance(v, int) else (1, 0, str(v))


@dataclass(frozen=True)
class GraphState:
    """Immutable graph state with a Clifford frame and a physical-operation log."""

    vertices: tuple = ()
    edges: frozenset = frozenset()
    frames: tuple = ()  # (vertex, Clifford) pairs for non-identity frames
    history: tuple = field(default=(), compare=False, repr=False)

    def __post_init__(self):
        vs = set(self.vertices)
        if len(vs) != len(self.vertices):
            raise ValueError("duplicate vertex ids")
        for u, v in self.edges:
            if u == v or u not in vs or v not in vs:
                raise ValueError(f"bad edge {(u, v)}")
        for v, _ in self.frames:
            if v not in vs:
                raise ValueError(f"frame on unknown vertex {v!r}")

    # -- construction --------------------------------------------------------------

    @classmethod
    def from_graph(cls, vertices: Sequence[Hashable], edges: Iterable[tuple] = ()) -> "GraphState":
        vertices = tuple(vertices)
        es = frozenset(_edge(u, v) for u, v in edges)
        return cls(vertices, es, (), (("graph", vertices, tuple(sorted(es, key=lambda e: (_sort_key(e[0]), _sort_key(e[1]))))),))

    @classmethod
    def empty(cls) -> "GraphState":
        """The zero-length cluster left when the last qubit is measured out."""
        return cls()

    # -- queries -----------------------------------------------------------------------

    def __len__(self):
        return len(self.vertices)

    def frame(self, v) -> Clifford:
        return dict(self.frames).get(v, IDENTITY)

    def neighbors(self, v) -> set:
        return {b if a == v else a for a, b in self.edges if v in (a, b)}

    def degree(self, v) -> int:
        return len(self.neighbors(v))

    def component(self, v) -> set:
        seen, todo = {v}, [v]
        while todo:
            x = todo.pop()
            for y in self.neighbors(x) - seen:
                seen.add(y)
                todo.append(y)
        return seen

    def is_chain(self) -> bool:
        n = len(self.vertices)
        if n <= 1:
            return True
        if len(self.edges) != n - 1 or len(self.component(self.vertices[0])) != n:
            return False
        return all(self.degree(v) <= 2 for v in self.vertices)

    def chain_order(self) -> tuple:
        """Vertices along the path, starting from the end listed first in ``vertices``."""
        if not self.is_chain():
            raise ValueError("graph is not a linear chain")
        if len(self.vertices) <= 1:
            return self.vertices
        ends = [v for v in self.vertices if self.degree(v) == 1]
        order, prev = [ends[0]], None
        while len(order) < len(self.vertices):
            nxt = [w for w in self.neighbors(order[-1]) if w != prev]
            prev = order[-1]
            order.append(nxt[0])
        return tuple(order)

    def ends(self) -> tuple:
        order = self.chain_order()
        return (order[0], order[-1]) if order else ()

    # -- primitive updates (all log their physical meaning) ------------------------------

    def _with(self, vertices=None, edges=None, frames=None, log=()) -> "GraphState":
        frames = {} if frames is None else frames
        vertices = self.vertices if vertices is None else tuple(vertices)
        fr = tuple((v, frames[v]) for v in vertices if v in frames and not frames[v].is_identity)
        return GraphState(vertices, self.edges if edges is None else frozenset(edges), fr, self.history + tuple(log))

    def _frames(self) -> dict:
        return dict(self.frames)

    def prepare(self, v) -> "GraphState":
        """Add a fresh ``|+>`` qubit."""
        if v in self.vertices:
            raise ValueError(f"vertex {v!r} already present")
        return self._with(self.vertices + (v,), self.edges, self._frames(), [("prep", v)])

    def apply_gate(self, v, gate) -> "GraphState":
        """Physically apply a Clifford to ``v``; only the frame changes."""
        g = gate if isinstance(gate, Clifford) else Clifford.parse(gate)
        fr = self._frames()
        fr[v] = g @ fr.get(v, IDENTITY)
        return self._with(None, None, fr, [("gate", v, g.key)])

    def flush(self, v) -> "GraphState":
        """Undo the frame of ``v`` with a physical gate so that it holds bare ``|G>``."""
        f = self.frame(v)
        return self if f.is_identity else self.apply_gate(v, f.inverse())

    def union(self, other: "GraphState") -> "GraphState":
        if set(self.vertices) & set(other.vertices):
            raise ValueError("graphs share vertex ids")
        fr = self._frames()
        fr.update(other._frames())
        return GraphState(
            self.vertices + other.vertices,
            self.edges | other.edges,
            tuple((v, fr[v]) for v in self.vertices + other.vertices if v in fr),
            self.history + other.history,
        )

    def measure_z(self, v, result: int, flipped: bool = False) -> "GraphState":
        """Measure ``v`` in the computational basis and drop it.

        ``result`` is the physical outcome (0 for ``|up>``).  ``flipped`` says
        an ``X`` was applied to the qubit after the last frame update (the
        EO's inter-round flip on a failed attempt).
        """
        if result not in (0, 1):
            raise ValueError("Z result must be 0 or 1")
        st = self
        if self.frame(v).z_flip() is None:
            st = st.flush(v)
        logical = result ^ st.frame(v).z_flip() ^ int(flipped)
        fr = st._frames()
        fr.pop(v, None)
        for n in st.neighbors(v):
            if logical:
                fr[n] = fr.get(n, IDENTITY) @ Clifford("-X+Z")
        edges = {e for e in st.edges if v not in e}
        verts = [w for w in st.vertices if w != v]
        return st._with(verts, edges, fr, [("measure_z", v, result)])

    def _eo_failure(self, a, b, results: tuple[int, int], flipped: bool) -> "GraphState":
        st = self
        fa, fb = st.frame(a).z_flip(), st.frame(b).z_flip()
        if fa is None:
            st, fa = st.flush(a), 0
        if fb is None:
            st, fb = st.flush(b), 0
        k = int(flipped)
        xa, xb = results[0] ^ k, results[1] ^ k
        st = st._with(None, None, st._frames(), [("eo_fail", a, b, k, xa, xb)])
        return st.measure_z(a, results[0], flipped).measure_z(b, results[1], flipped)


def linear_chain(n: int, start: int = 0) -> GraphState:
    ids = list(range(start, start + n))
    return GraphState.from_graph(ids, zip(ids, ids[1:]))


# -- recipes -----------------------------------------------------------------------------


def _chain_end(chain: GraphState, end) -> object:
    if end is None:
        if not chain.vertices:
            raise ValueError("empty cluster has no end")
        return chain.chain_order()[-1]
    if len(chain.vertices) > 1 and chain.degree(end) != 1:
        raise ValueError(f"{end!r} is not an end of the chain")
    return end


def _place_after(order: tuple, end, new) -> tuple:
    if order and order[0] == end and len(order) > 1:
        return (new,) + order
    return order + (new,)


def extend_chain(chain: GraphState, new_qubit, outcome: EoOutcome, end=None) -> GraphState:
    """Attach a fresh ``|+>`` qubit to a chain end through a heralded EO.

    The EO runs with the new qubit on arm A and the end on arm B.  Afterwards
    the pair is a two-qubit parity code; the frame update ``H_new X_end``
    (``X_new H_new X_end`` for sign -1, i.e. ``HX`` on the new qubit) turns
    it into the longer chain.
    """
    if not outcome.success:
        raise ValueError("extend_chain needs a successful EO; use shrink_on_failure for failures")
    st = chain.prepare(new_qubit)
    if not chain.vertices:
        raise ValueError("cannot extend an empty cluster; start from a single |+> qubit")
    end = _chain_end(chain, end)
    st = st.flush(end)
    st = st._with(None, None, st._frames(), [("eo", new_qubit, end, outcome.sign)])
    f_new, f_end = EXTEND_FRAMES[outcome.sign]
    fr = st._frames()
    fr[new_qubit] = f_new
    fr[end] = f_end
    order = _place_after(chain.vertices if not chain.is_chain() else chain.chain_order(), end, new_qubit)
    return st._with(order, st.edges | {_edge(new_qubit, end)}, fr)


def shrink_on_failure(
    chain: GraphState,
    lost_qubit,
    result: int = 0,
    flipped: bool = False,
    partner=None,
    partner_result: int = 0,
) -> GraphState:
    """Measure out the chain qubit of a failed EO.

    ``result`` is the physical Z outcome of ``lost_qubit``.  ``partner`` is
    the other EO qubit (a fresh qubit that is discarded, or another chain's
    end); it is prepared first if absent and measured out as well.  The
    remaining qubits form the shorter chain, with a Z frame on the new end
    when the logical outcome was 1.
    """
    if lost_qubit not in chain.vertices:
        raise ValueError(f"{lost_qubit!r} is not in the chain")
    if partner is None:
        return chain.measure_z(lost_qubit, result, flipped)
    st = chain if partner in chain.vertices else chain.prepare(partner)
    return st._eo_failure(partner, lost_qubit, (partner_result, result), flipped)


def join(
    state: GraphState,
    a1,
    b1,
    outcome: EoOutcome,
    b1_result: int = 1,
    fail_results: tuple[int, int] = (0, 0),
    flipped: bool = False,
) -> GraphState:
    """Fuse two separate clusters at ``a1`` and ``b1``.

    ``X`` on ``a1``, the EO (``a1`` on arm A), then ``b1`` measured in the
    ``|+>/|->`` basis (``b1_result`` = +1/-1).  On success ``a1`` inherits
    the neighbours of ``b1``.  On failure both qubits are measured in the
    computational basis with physical results ``fail_results``.
    """
    if a1 not in state.vertices or b1 not in state.vertices:
        raise ValueError("join qubits must both be present")
    if b1 in state.component(a1):
        raise ValueError("join qubits must belong to different clusters")
    st = state.flush(a1).flush(b1).apply_gate(a1, "X")
    if not outcome.success:
        return st._eo_failure(a1, b1, fail_results, flipped)
    if b1_result not in (1, -1):
        raise ValueError("b1_result must be +1 or -1")
    nb = st.neighbors(b1)
    st = st._with(None, None, st._frames(), [("eo", a1, b1, outcome.sign), ("measure_x", b1, b1_result)])
    fr = st._frames()
    fr[a1] = JOIN_FRAMES[outcome.sign * b1_result]
    fr.pop(b1, None)
    edges = {e for e in st.edges if b1 not in e} | {_edge(a1, n) for n in nb}
    verts = [v for v in st.vertices if v != b1]
    return st._with(verts, edges, fr)


def join_chains(
    a: GraphState,
    b: GraphState,
    outcome: EoOutcome,
    b1_result: int = 1,
    a_end=None,
    b_end=None,
    fail_results: tuple[int, int] = (0, 0),
    flipped: bool = False,
) -> GraphState:
    """Join chain ``a`` (end ``A1``) to chain ``b`` (end ``B1``).

    Success gives one chain of length ``N + m - 1`` ordered ``A_N..A_1,
    B_2..B_m``.  Failure measures out both ``A1`` and ``B1`` and returns
    the two shortened chains side by side.
    """
    if len(b) < 2:
        raise ValueError("the second chain needs at least 2 qubits (B1 is consumed)")
    if not a.vertices:
        raise ValueError("first chain is empty")
    a1 = _chain_end(a, a_end)
    b1 = _chain_end(b, b_end)
    a_order = a.chain_order()
    if a_order[0] == a1 and len(a_order) > 1:
        a_order = a_order[::-1]
    b_order = b.chain_order()
    if b_order[-1] == b1:
        b_order = b_order[::-1]
    st = join(a.union(b), a1, b1, outcome, b1_result, fail_results, flipped)
    if outcome.success:
        return st._with(a_order + b_order[1:], st.edges, st._frames())
    keep = [v for v in a_order + b_order if v in st.vertices]
    return st._with(keep, st.edges, st._frames())


# -- I-shaped clusters for 2D lattices ------------------------------------------------------


@dataclass(frozen=True)
class ICluster:
    """Vertex roles of an I-shaped cluster."""

    state: GraphState
    top_left: object
    top_right: object
    bottom_left: object
    bottom_right: object
    stem: tuple


def make_I_cluster(left: int = 1, right: int = 1, start: int = 0, bottom_left: int | None = None, bottom_right: int | None = None) -> ICluster:
    """Two horizontal bars whose middle qubits are linked by a vertical edge.

    Each bar is ``left`` arm qubits, a junction, and ``right`` arm qubits;
    the bars' junctions share the stem edge.  The four outermost qubits are
    the terminals that get joined onto rails.
    """
    bottom_left = left if bottom_left is None else bottom_left
    bottom_right = right if bottom_right is None else bottom_right
    if min(left, right, bottom_left, bottom_right) < 1:
        raise ValueError("arm lengths must be >= 1")
    ids = itertools.count(start)
    verts, edges = [], []

    def bar(n_left, n_right):
        arm_l = [next(ids) for _ in range(n_left)]
        junction = next(ids)
        arm_r = [next(ids) for _ in range(n_right)]
        line = arm_l + [junction] + arm_r
        verts.extend(line)
        edges.extend(zip(line, line[1:]))
        return line[0], junction, line[-1]

    tl, jt, tr = bar(left, right)
    bl, jb, br = bar(bottom_left, bottom_right)
    edges.append((jt, jb))
    return ICluster(GraphState.from_graph(verts, edges), tl, tr, bl, br, (jt, jb))


def attach_cross_link(
    rail_a: GraphState,
    rail_b: GraphState,
    i_cluster: ICluster,
    outcomes: Sequence[EoOutcome],
    b1_results: Sequence[int] = (1, 1),
    fail_results: Sequence[tuple[int, int]] = ((0, 0), (0, 0)),
    rail_ends: Sequence | None = None,
) -> GraphState:
    """Join the end of ``rail_a`` to the I-cluster's top-left terminal, then
    the end of ``rail_b`` to its bottom-left terminal.

    When both joins succeed the rails are linked through the I-cluster's
    stem.  A failed join shortens the rail by one and strips that terminal.
    """
    if len(outcomes) != 2:
        raise ValueError("need one EO outcome per join")
    ends = rail_ends or (None, None)
    a1 = _chain_end(rail_a, ends[0])
    b1 = _chain_end(rail_b, ends[1])
    st = rail_a.union(rail_b).union(i_cluster.state)
    st = join(st, a1, i_cluster.top_left, outcomes[0], b1_results[0], tuple(fail_results[0]))
    st = join(st, b1, i_cluster.bottom_left, outcomes[1], b1_results[1], tuple(fail_results[1]))
    return st


# -- dense verification ---------------------------------------------------------------------


@dataclass(frozen=True)
class DenseQubitState:
    """Amplitudes over ``qubits`` (first qubit is the most significant bit)."""

    qubits: tuple
    amplitudes: np.ndarray = field(repr=False)

    def overlap(self, other: "DenseQubitState") -> float:
        """``|<self|other>|`` after aligning qubit order; global phase ignored."""
        if set(self.qubits) != set(other.qubits):
            raise ValueError("states live on different qubits")
        b = _permute(other.amplitudes, other.qubits, self.qubits)
        return float(abs(np.vdot(self.amplitudes, b)))

    def to_dict(self) -> dict:
        return {
            "qubits": list(self.qubits),
            "amplitudes": [[float(z.real), float(z.imag)] for z in self.amplitudes],
        }


def _permute(amps, order, target):
    n = len(order)
    if n == 0:
        return amps
    t = amps.reshape((2,) * n)
    t = np.transpose(t, [order.index(q) for q in target])
    return t.reshape(-1)


def _apply_1q(t: np.ndarray, u: np.ndarray, axis: int) -> np.ndarray:
    return np.moveaxis(np.tensordot(u, t, axes=([1], [axis])), 0, axis)


def _graph_amplitudes(vertices, edges) -> np.ndarray:
    n = len(vertices)
    if n > MAX_DENSE_QUBITS:
        raise ValueError(f"dense expansion is capped at {MAX_DENSE_QUBITS} qubits (got {n})")
    if n == 0:
        return np.ones(1, dtype=complex)
    pos = {v: i for i, v in enumerate(vertices)}
    bits = (np.arange(2**n)[:, None] >> (n - 1 - np.arange(n))[None, :]) & 1
    phase = np.zeros(2**n, dtype=int)
    for u, v in edges:
        phase += bits[:, pos[u]] * bits[:, pos[v]]
    return ((-1.0) ** phase).astype(complex) / math.sqrt(2**n)


def dense_expand(state: GraphState) -> DenseQubitState:
    """State vector of ``(prod U_v)|G>`` in ``state.vertices`` order."""
    amps = _graph_amplitudes(state.vertices, state.edges)
    n = len(state.vertices)
    if n:
        t = amps.reshape((2,) * n)
        for i, v in enumerate(state.vertices):
            f = state.frame(v)
            if not f.is_identity:
                t = _apply_1q(t, f.matrix, i)
        amps = t.reshape(-1)
    return DenseQubitState(tuple(state.vertices), amps / np.linalg.norm(amps))


def stabilizer_expectations(state: GraphState, dense: DenseQubitState | None = None) -> dict:
    """``<K_v>`` for the frame-conjugated generators ``U X_v prod_{n~v} Z_n U^dag``."""
    dense = dense or dense_expand(state)
    n = len(state.vertices)
    t = _permute(dense.amplitudes, dense.qubits, tuple(state.vertices)).reshape((2,) * n)
    for i, v in enumerate(state.vertices):
        f = state.frame(v)
        if not f.is_identity:
            t = _apply_1q(t, f.matrix.conj().T, i)
    pos = {v: i for i, v in enumerate(state.vertices)}
    out = {}
    for v in state.vertices:
        k = _apply_1q(t, _PAULI["X"], pos[v])
        for w in state.neighbors(v):
            k = _apply_1q(k, _PAULI["Z"], pos[w])
        out[v] = float(np.real(np.vdot(t.reshape(-1), k.reshape(-1))))
    return out


_EO_MAP = {
    # |q_A q_B> -> (amplitude, |q_A q_B>) on a heralded success with sign s
    (0, 1): lambda s: (1.0, (1, 0)),
    (1, 0): lambda s: (float(s), (0, 1)),
}


def replay(history: Sequence[tuple]) -> DenseQubitState:
    """Execute a physical-operation log on a state vector (no frame tracking).

    Branch probabilities are not tracked; each projection renormalizes, and
    a projection onto a zero-amplitude branch raises.
    """
    qubits: list = []
    t = np.ones((), dtype=complex)

    def renorm(x):
        nrm = np.linalg.norm(x)
        if nrm < 1e-12:
            raise ValueError("history selects a zero-probability branch")
        return x / nrm

    for op in history:
        kind = op[0]
        if kind == "graph":
            _, verts, edges = op
            g = _graph_amplitudes(verts, edges).reshape((2,) * len(verts)) if verts else np.ones(())
            t = np.tensordot(t, g, axes=0)
            qubits.extend(verts)
        elif kind == "prep":
            t = np.tensordot(t, np.ones(2, dtype=complex) / math.sqrt(2), axes=0)
            qubits.append(op[1])
        elif kind == "gate":
            t = _apply_1q(t, Clifford(op[2]).matrix, qubits.index(op[1]))
        elif kind == "eo":
            _, a, b, s = op
            ia, ib = qubits.index(a), qubits.index(b)
            t = np.moveaxis(t, (ia, ib), (0, 1))
            new = np.zeros_like(t)
            for src, f in _EO_MAP.items():
                amp, dst = f(s)
                new[dst] += amp * t[src]
            t = renorm(np.moveaxis(new, (0, 1), (ia, ib)))
        elif kind == "eo_fail":
            _, a, b, k, xa, xb = op
            ia, ib = qubits.index(a), qubits.index(b)
            t = np.moveaxis(t, (ia, ib), (0, 1))
            new = np.zeros_like(t)
            new[xa ^ k, xb ^ k] = t[xa, xb]
            t = renorm(np.moveaxis(new, (0, 1), (ia, ib)))
        elif kind in ("measure_z", "measure_x"):
            _, v, r = op
            i = qubits.index(v)
            if kind == "measure_z":
                bra = np.eye(2)[r]
            else:
                bra = np.array([1, r]) / math.sqrt(2)
            t = renorm(np.tensordot(bra.astype(complex).conj(), t, axes=([0], [i])))
            qubits.pop(i)
        else:
            raise ValueError(f"unknown history entry {op!r}")
        if len(qubits) > MAX_DENSE_QUBITS + 2:
            raise ValueError("history exceeds the dense replay size cap")
    return DenseQubitState(tuple(qubits), t.reshape(-1))


def verify_dense(state: GraphState) -> float:
    """Overlap between the tracked state and the literal replay of its history."""
    return dense_expand(state).overlap(replay(state.history))


# -- serialization --------------------------------------------------------------------------


def to_dict(state: GraphState) -> dict:
    return {
        "vertices": list(state.vertices),
        "edges": [list(e) for e in sorted(state.edges, key=lambda e: (_sort_key(e[0]), _sort_key(e[1])))],
        "frame": [[v, f.key] for v, f in state.frames],
    }


def from_dict(data: dict) -> GraphState:
    verts = tuple(data["vertices"])
    edges = frozenset(_edge(u, v) for u, v in data["edges"])
    frames = tuple((v, Clifford(k)) for v, k in data.get("frame", []))
    return GraphState(verts, edges, frames, (("graph", verts, tuple(edges)),) + tuple(
        ("gate", v, f.key) for v, f in frames
    ))


def to_json(state: GraphState) -> str:
    return json.dumps(to_dict(state))


def from_json(text: str) -> GraphState:
    return from_dict(json.loads(text))
