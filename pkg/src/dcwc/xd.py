"""Multi-party channels over a graph where every vertex pays along at most one edge.

A state fixes the graph, the initial funds and a sequence number, all signed
by every funded vertex at setup. Payments are cumulative commitments: vertex
``u`` signs the total it has paid to its successor so far. Settlement pays each
vertex as much of its commitment as it can actually fund, which is the unique
maximum of the settlement LP and also the greatest fixpoint of

    f_v = min(commit_v, i0_v + sum of f_u over edges u -> v).

The feasible region is closed under vertex-wise max, so that optimum is
unique and the fixpoint iteration from ``f = commit`` reaches it.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Iterable, Mapping

from . import kernels
from .crypto import KeyPair, PublicKey, Signature, encode_fields, keygen, sign, verify
from .errors import (
    DecreasingCommitment,
    InsolventPayment,
    InvalidGraph,
    MixedChannelStates,
    SetupIncomplete,
    Unprovable,
)

SETUP_TAG = b"dcwc/xd-setup"
COMMIT_TAG = b"dcwc/xd-commit"
CLOSE_TAG = b"dcwc/xd-close"


@dataclass(frozen=True)
class XdGraph:
    vertices: frozenset[PublicKey]
    edges: frozenset[tuple[PublicKey, PublicKey]]

    def __post_init__(self):
        seen: set[PublicKey] = set()
        for u, v in self.edges:
            if u not in self.vertices or v not in self.vertices:
                raise InvalidGraph(f"edge {u.short()}->{v.short()} leaves the vertex set")
            if u == v:
                raise InvalidGraph(f"self loop at {u.short()}")
            if u in seen:
                raise InvalidGraph(f"vertex {u.short()} has two outgoing edges")
            seen.add(u)

    @classmethod
    def build(cls, vertices: Iterable[PublicKey], edges: Iterable[tuple[PublicKey, PublicKey]]) -> "XdGraph":
        return cls(frozenset(vertices), frozenset(edges))

    def successor(self, v: PublicKey) -> PublicKey | None:
        for a, b in self.edges:
            if a == v:
                return b
        return None

    def predecessors(self, v: PublicKey) -> list[PublicKey]:
        return sorted(a for a, b in self.edges if b == v)

    def ordered(self) -> list[PublicKey]:
        return sorted(self.vertices)

    def encode(self) -> bytes:
        verts = b"".join(encode_fields(v) for v in self.ordered())
        edges = b"".join(encode_fields(u, v) for u, v in sorted(self.edges))
        return encode_fields(verts, edges)


@dataclass(frozen=True)
class Commitment:
    vertex: PublicKey
    amount: int
    signature: Signature

    def valid_for(self, channel_id: str) -> bool:
        return self.amount >= 0 and verify(self.vertex, commitment_bytes(channel_id, self.vertex, self.amount), self.signature)


def commitment_bytes(channel_id: str, vertex: PublicKey, amount: int) -> bytes:
    return encode_fields(COMMIT_TAG, channel_id, vertex, amount)


def sign_commitment(channel_id: str, keys: KeyPair, amount: int) -> Commitment:
    return Commitment(keys.public, amount, sign(keys, commitment_bytes(channel_id, keys.public, amount)))


def _initial_bytes(initial: Mapping[PublicKey, int]) -> bytes:
    return b"".join(encode_fields(v, initial[v]) for v in sorted(initial))


def setup_bytes(channel_id: str, graph: XdGraph, initial: Mapping[PublicKey, int], seq: int) -> bytes:
    """Canonical (G, I, k) encoding every funded vertex signs at setup."""
    return encode_fields(SETUP_TAG, channel_id, graph.encode(), _initial_bytes(initial), seq)


@dataclass(frozen=True)
class XdState:
    channel_id: str
    graph: XdGraph
    initial: tuple[tuple[PublicKey, int], ...]
    seq: int
    setup_sigs: tuple[tuple[PublicKey, Signature], ...]
    commitments: tuple[tuple[PublicKey, Commitment], ...] = ()

    @property
    def funds(self) -> dict[PublicKey, int]:
        return dict(self.initial)

    @property
    def committed(self) -> dict[PublicKey, Commitment]:
        return dict(self.commitments)

    def commit_of(self, v: PublicKey) -> int:
        c = self.committed.get(v)
        return c.amount if c else 0

    @property
    def funding_total(self) -> int:
        return sum(f for _, f in self.initial)

    def with_commitment(self, c: Commitment) -> "XdState":
        table = self.committed
        table[c.vertex] = c
        return XdState(self.channel_id, self.graph, self.initial, self.seq, self.setup_sigs, tuple(sorted(table.items())))

    def header(self) -> tuple:
        return (self.channel_id, self.graph, self.initial, self.seq, self.setup_sigs)

    def to_bytes(self) -> bytes:
        sigs = b"".join(encode_fields(v, s) for v, s in self.setup_sigs)
        commits = b"".join(encode_fields(v, c.amount, c.signature) for v, c in self.commitments)
        return encode_fields(setup_bytes(self.channel_id, self.graph, self.funds, self.seq), sigs, commits)

    def to_json(self, names: Mapping[PublicKey, str] | None = None) -> dict:
        name = (lambda pk: names.get(pk, pk.hex())) if names else (lambda pk: pk.hex())
        return {
            "channel": self.channel_id,
            "seq": self.seq,
            "vertices": [name(v) for v in self.graph.ordered()],
            "edges": [[name(u), name(v)] for u, v in sorted(self.graph.edges)],
            "initial": {name(v): f for v, f in self.initial},
            "commitments": {name(v): c.amount for v, c in self.commitments},
        }


def sign_setup(channel_id: str, graph: XdGraph, initial: Mapping[PublicKey, int], seq: int, keys: KeyPair) -> Signature:
    return sign(keys, setup_bytes(channel_id, graph, initial, seq))


def open_xd(
    channel_id: str,
    graph: XdGraph,
    initial: Mapping[PublicKey, int],
    setup_sigs: Mapping[PublicKey, Signature],
    seq: int = 0,
) -> XdState:
    """Validate the setup and return the state with no commitments."""
    for v, f in initial.items():
        if v not in graph.vertices:
            raise InvalidGraph(f"funded vertex {v.short()} is not in the graph")
        if f < 0:
            raise SetupIncomplete(f"negative initial funds for {v.short()}")
    initial = {v: initial.get(v, 0) for v in graph.vertices}
    message = setup_bytes(channel_id, graph, initial, seq)
    for v in sorted(initial):
        sig = setup_sigs.get(v)
        if sig is None or not verify(v, message, sig):
            raise SetupIncomplete(f"missing or invalid setup signature from {v.short()}")
    return XdState(
        channel_id,
        graph,
        tuple(sorted(initial.items())),
        seq,
        tuple(sorted((v, setup_sigs[v]) for v in initial)),
    )


def open_signed(channel_id: str, graph: XdGraph, initial: Mapping[PublicKey, int], keys: Iterable[KeyPair], seq: int = 0) -> XdState:
    full = {v: initial.get(v, 0) for v in graph.vertices}
    sigs = {k.public: sign_setup(channel_id, graph, full, seq, k) for k in keys}
    return open_xd(channel_id, graph, full, sigs, seq)


# -- settlement -------------------------------------------------------------


@dataclass(frozen=True)
class Settlement:
    flows: dict[PublicKey, int]
    balances: dict[PublicKey, int]
    sweeps: int

    def objective(self) -> int:
        return sum(self.flows.values())


def _arrays(state: XdState, override: Commitment | None = None):
    order = state.graph.ordered()
    index = {v: i for i, v in enumerate(order)}
    funds = state.funds
    committed = state.committed
    if override is not None:
        committed[override.vertex] = override
    succ, init, commit = [], [], []
    for v in order:
        nxt = state.graph.successor(v)
        succ.append(index[nxt] if nxt is not None else -1)
        init.append(funds.get(v, 0))
        c = committed.get(v)
        commit.append(c.amount if c is not None and nxt is not None else 0)
    return order, succ, init, commit


def settle(state: XdState) -> Settlement:
    return _settle_arrays(*_arrays(state))


def _settle_arrays(order, succ, init, commit) -> Settlement:
    flows, sweeps = kernels.greatest_fixpoint(succ, init, commit)
    incoming = [0] * len(order)
    for u, s in enumerate(succ):
        if s >= 0:
            incoming[s] += flows[u]
    balances = {v: init[i] + incoming[i] - flows[i] for i, v in enumerate(order)}
    return Settlement({v: flows[i] for i, v in enumerate(order)}, balances, sweeps)


# -- payments and proofs ----------------------------------------------------


@dataclass(frozen=True)
class ProofChain:
    """Commitments and initial entries that, on their own, fund ``amount`` at ``vertex``."""

    vertex: PublicKey
    amount: int
    commitments: tuple[Commitment, ...]
    initial: tuple[tuple[PublicKey, int], ...]

    def members(self) -> set[PublicKey]:
        return {c.vertex for c in self.commitments} | {v for v, _ in self.initial}


def _available(state: XdState, settlement: Settlement, v: PublicKey) -> int:
    pred = state.graph.predecessors(v)
    return state.funds.get(v, 0) + sum(settlement.flows[u] for u in pred)


def prove_funds(state: XdState, vertex: PublicKey, amount: int) -> ProofChain:
    """Collect the commitments (and the funds behind them) that certify ``amount`` at ``vertex``.

    Walks predecessors carrying positive settled flow, each vertex at most once.
    On a cycle back to ``vertex`` its own commitment joins the chain, since the
    flow returning to it depends on what it paid out.
    """
    s = settle(state)
    if _available(state, s, vertex) < amount:
        raise Unprovable(f"{vertex.short()} can certify only {_available(state, s, vertex)} of {amount}")
    funds = state.funds
    committed = state.committed
    visited = {vertex}
    stack = [vertex]
    commits: dict[PublicKey, Commitment] = {}
    initial: list[tuple[PublicKey, int]] = []
    while stack:
        v = stack.pop()
        if funds.get(v, 0) > 0:
            initial.append((v, funds[v]))
        for u in state.graph.predecessors(v):
            if s.flows[u] > 0 and u not in commits:
                commits[u] = committed[u]
            if s.flows[u] > 0 and u not in visited:
                visited.add(u)
                stack.append(u)
    return ProofChain(vertex, amount, tuple(c for _, c in sorted(commits.items())), tuple(sorted(initial)))


def verify_proof(state: XdState, proof: ProofChain) -> bool:
    """Check the chain in isolation: signatures, then the fixpoint on its own members."""
    if not all(c.valid_for(state.channel_id) for c in proof.commitments):
        return False
    funds = state.funds
    if any(funds.get(v, 0) != f for v, f in proof.initial):
        return False
    members = proof.members() | {proof.vertex}
    order = sorted(members)
    index = {v: i for i, v in enumerate(order)}
    commits = {c.vertex: c.amount for c in proof.commitments}
    succ, init, cap = [], [], []
    for v in order:
        nxt = state.graph.successor(v)
        succ.append(index[nxt] if nxt in index else -1)
        init.append(dict(proof.initial).get(v, 0))
        cap.append(commits.get(v, 0) if nxt in index else 0)
    flows, _ = kernels.greatest_fixpoint(succ, init, cap)
    target = index[proof.vertex]
    got = init[target] + sum(flows[u] for u, s in enumerate(succ) if s == target)
    return got >= proof.amount


def pay(state: XdState, payer: KeyPair, new_total: int) -> tuple[XdState, Commitment, ProofChain]:
    """Raise the payer's cumulative commitment and return the proof that it is funded."""
    v = payer.public
    if state.graph.successor(v) is None:
        raise InsolventPayment(f"{v.short()} has no outgoing edge")
    current = state.commit_of(v)
    if new_total < current:
        raise DecreasingCommitment(f"{v.short()} already committed {current}, cannot lower to {new_total}")
    if new_total == current and v in state.committed:
        c = state.committed[v]
    else:
        c = sign_commitment(state.channel_id, payer, new_total)
    tentative = _settle_arrays(*_arrays(state, c))
    if tentative.flows[v] < new_total:
        raise InsolventPayment(f"{v.short()} can fund only {tentative.flows[v]} of {new_total}")
    updated = state.with_commitment(c)
    try:
        proof = prove_funds(updated, v, new_total)
    except Unprovable as exc:  # pragma: no cover - guarded by the fixpoint above
        raise InsolventPayment(str(exc)) from exc
    return updated, c, proof


def merge_states(states: Iterable[XdState]) -> XdState:
    """Keep only the highest sequence number, then take each vertex's largest commitment."""
    states = list(states)
    if not states:
        raise MixedChannelStates("nothing to merge")
    top = max(s.seq for s in states)
    live = [s for s in states if s.seq == top]
    header = live[0].header()
    if any(s.header() != header for s in live):
        raise MixedChannelStates("states disagree on graph, funds, sequence number or setup signatures")
    best: dict[PublicKey, Commitment] = {}
    for s in live:
        for v, c in s.commitments:
            if not c.valid_for(s.channel_id):
                continue
            if v not in best or c.amount > best[v].amount:
                best[v] = c
    first = live[0]
    return XdState(first.channel_id, first.graph, first.initial, first.seq, first.setup_sigs, tuple(sorted(best.items())))


def close_bytes(channel_id: str, balances: Mapping[PublicKey, int], seq: int) -> bytes:
    return encode_fields(CLOSE_TAG, channel_id, _initial_bytes(balances), seq)


def close_cooperative(state: XdState, signatures: Mapping[PublicKey, Signature]) -> XdState:
    """Replace the state by one without edges or commitments whose funds are the settled balances."""
    final = settle(state).balances
    message = close_bytes(state.channel_id, final, state.seq)
    for v in state.graph.ordered():
        sig = signatures.get(v)
        if sig is None or not verify(v, message, sig):
            raise SetupIncomplete(f"close refused: no valid signature from {v.short()}")
    bare = XdGraph(state.graph.vertices, frozenset())
    return XdState(
        state.channel_id,
        bare,
        tuple(sorted(final.items())),
        state.seq,
        tuple(sorted(signatures.items())),
    )


def sign_close(state: XdState, keys: KeyPair) -> Signature:
    return sign(keys, close_bytes(state.channel_id, settle(state).balances, state.seq))


# -- fixtures ---------------------------------------------------------------


@dataclass
class XdFixture:
    state: XdState
    keys: dict[str, KeyPair]
    names: dict[PublicKey, str] = field(default_factory=dict)

    def pk(self, name: str) -> PublicKey:
        return self.keys[name].public

    def by_name(self, table: Mapping[PublicKey, int]) -> dict[str, int]:
        return {self.names[v]: x for v, x in table.items()}


def build_fixture(
    channel_id: str,
    vertices: Iterable[str],
    edges: Iterable[tuple[str, str]],
    initial: Mapping[str, int],
    payments: Iterable[tuple[str, int]] = (),
    seed: int = 0,
) -> XdFixture:
    """Named vertices, keys derived from ``seed``; ``payments`` are applied in order through :func:`pay`."""
    names = list(vertices)
    keys = {n: keygen(_name_seed(seed, n)) for n in names}
    graph = XdGraph.build((keys[n].public for n in names), ((keys[a].public, keys[b].public) for a, b in edges))
    state = open_signed(channel_id, graph, {keys[n].public: initial.get(n, 0) for n in names}, keys.values())
    for who, total in payments:
        state, _, _ = pay(state, keys[who], total)
    return XdFixture(state, keys, {k.public: n for n, k in keys.items()})


def _name_seed(seed: int, name: str) -> int:
    return int.from_bytes(hashlib.sha256(f"{seed}/xd/{name}".encode()).digest()[:8], "big")


def example1(seed: int = 0) -> XdFixture:
    """Two clients pay a supermarket, which passes most of it on to the tax office."""
    return build_fixture(
        "example1",
        ["c0", "c1", "s", "t"],
        [("c0", "s"), ("c1", "s"), ("s", "t")],
        {"c0": 5, "c1": 5, "s": 0, "t": 0},
        [("c0", 5), ("c1", 5), ("s", 8)],
        seed,
    )
