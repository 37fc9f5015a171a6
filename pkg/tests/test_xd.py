import random
from dataclasses import replace

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dcwc import kernels
from dcwc.crypto import keygen
from dcwc.channel import ChannelParams, make_update, new_channel
from dcwc.errors import (
    DecreasingCommitment,
    InsolventPayment,
    InsufficientFunds,
    InvalidGraph,
    MixedChannelStates,
    SetupIncomplete,
    Unprovable,
)
from dcwc.xd import (
    XdGraph,
    build_fixture,
    close_cooperative,
    example1,
    merge_states,
    open_signed,
    open_xd,
    pay,
    prove_funds,
    settle,
    sign_close,
    sign_commitment,
    sign_setup,
    verify_proof,
)

from xd_oracle import brute_force, feasible, grid_size, lp_flows


def _cycle(fund_a=10, fund_b=10, payments=()):
    return build_fixture("ab", ["A", "B"], [("A", "B"), ("B", "A")], {"A": fund_a, "B": fund_b}, payments)


# -- graph and opening -------------------------------------------------------


def test_two_party_cycle_opens():
    fx = _cycle()
    assert fx.state.funding_total == 20 and fx.state.seq == 0 and fx.state.commitments == ()


def test_two_outgoing_edges_rejected():
    a, b, c = (keygen(i).public for i in range(3))
    with pytest.raises(InvalidGraph):
        XdGraph.build([a, b, c], [(a, b), (a, c)])
    with pytest.raises(InvalidGraph):
        XdGraph.build([a, b], [(a, a)])
    with pytest.raises(InvalidGraph):
        XdGraph.build([a], [(a, b)])


def test_open_requires_every_signature(scheme):
    ks = [keygen(i) for i in range(3)]
    g = XdGraph.build([k.public for k in ks], [(ks[0].public, ks[1].public)])
    initial = {ks[0].public: 5, ks[1].public: 0, ks[2].public: 1}
    sigs = {k.public: sign_setup("x", g, initial, 0, k) for k in ks}
    assert open_xd("x", g, initial, sigs).funding_total == 6
    with pytest.raises(SetupIncomplete):
        open_xd("x", g, initial, {v: s for v, s in sigs.items() if v != ks[2].public})
    bad = dict(sigs)
    bad[ks[1].public] = sign_setup("x", g, initial, 1, ks[1])
    with pytest.raises(SetupIncomplete):
        open_xd("x", g, initial, bad)


def test_empty_settle_is_identity():
    fx = _cycle(4, 9)
    s = settle(fx.state)
    assert set(s.flows.values()) == {0}
    assert fx.by_name(s.balances) == {"A": 4, "B": 9}


# -- payments ----------------------------------------------------------------


def test_pay_from_initial_funds():
    fx = build_fixture("u", ["u", "v"], [("u", "v")], {"u": 10, "v": 0})
    state, c, proof = pay(fx.state, fx.keys["u"], 7)
    assert c.amount == 7 and proof.commitments == () and fx.by_name(dict(proof.initial)) == {"u": 10}
    with pytest.raises(DecreasingCommitment):
        pay(state, fx.keys["u"], 6)
    with pytest.raises(InsolventPayment):
        pay(state, fx.keys["u"], 11)
    with pytest.raises(InsolventPayment):
        pay(state, fx.keys["v"], 1)


def test_supermarket_proof_chain():
    fx = example1()
    commits = fx.state.committed
    s, t = fx.pk("s"), fx.pk("t")
    proof = prove_funds(fx.state, s, 8)
    assert {fx.names[c.vertex] for c in proof.commitments} == {"c0", "c1"}
    assert verify_proof(fx.state, proof)
    assert commits[s].amount == 8


def test_path_proof_includes_upstream_funding():
    fx = build_fixture("p", ["c", "s", "t"], [("c", "s"), ("s", "t")], {"c": 5}, [("c", 5)])
    proof = prove_funds(fx.state, fx.pk("s"), 5)
    assert [fx.names[c.vertex] for c in proof.commitments] == ["c"]
    assert fx.by_name(dict(proof.initial)) == {"c": 5}


def test_prove_isolated_and_unprovable():
    fx = build_fixture("i", ["x", "y"], [], {"x": 10})
    proof = prove_funds(fx.state, fx.pk("x"), 10)
    assert proof.commitments == () and fx.by_name(dict(proof.initial)) == {"x": 10}
    with pytest.raises(Unprovable):
        prove_funds(fx.state, fx.pk("x"), 11)


def test_forged_proof_fails_verification():
    fx = example1()
    proof = prove_funds(fx.state, fx.pk("s"), 8)
    raised = replace(proof, amount=11)
    assert not verify_proof(fx.state, raised)
    stolen = replace(proof, commitments=(replace(proof.commitments[0], amount=50),) + proof.commitments[1:])
    assert not verify_proof(fx.state, stolen)


def test_proof_terminates_on_cycles():
    fx = _cycle(3, 3, [("A", 3), ("B", 4), ("A", 5)])
    proof = prove_funds(fx.state, fx.pk("A"), 7)
    assert verify_proof(fx.state, proof)


# -- settlement --------------------------------------------------------------


def test_cycle_settle_traditional():
    fx = _cycle(10, 10, [("A", 3)])
    s = settle(fx.state)
    assert fx.by_name(s.flows) == {"A": 3, "B": 0}
    assert fx.by_name(s.balances) == {"A": 7, "B": 13}


def test_example1_settle():
    fx = example1()
    s = settle(fx.state)
    assert fx.by_name(s.flows) == {"c0": 5, "c1": 5, "s": 8, "t": 0}
    assert fx.by_name(s.balances) == {"c0": 0, "c1": 0, "s": 2, "t": 8}


def test_unfunded_cycle_conjures_nothing():
    """Commitments that only fund each other: the LP optimum moves both round, balances stay zero."""
    fx = _cycle(0, 0)
    state = fx.state
    for name in ("A", "B"):
        state = state.with_commitment(sign_commitment("ab", fx.keys[name], 100))
    s = settle(state)
    assert lp_flows([1, 0], [0, 0], [100, 100]) == [100, 100]
    assert fx.by_name(s.flows) == {"A": 100, "B": 100}
    assert fx.by_name(s.balances) == {"A": 0, "B": 0}


def _random_instance(rng):
    n = rng.randint(1, 6)
    succ = []
    for v in range(n):
        targets = [u for u in range(n) if u != v]
        succ.append(rng.choice(targets) if targets and rng.random() < 0.8 else -1)
    init = [rng.randint(0, 20) for _ in range(n)]
    commit = [rng.randint(0, 20) if succ[v] >= 0 else 0 for v in range(n)]
    return succ, init, commit


def _state_for(succ, init, commit, seed):
    names = [f"v{i}" for i in range(len(succ))]
    edges = [(names[v], names[s]) for v, s in enumerate(succ) if s >= 0]
    fx = build_fixture(f"r{seed}", names, edges, dict(zip(names, init)), seed=seed)
    state = fx.state
    for v, c in enumerate(commit):
        if c:
            state = state.with_commitment(sign_commitment(state.channel_id, fx.keys[names[v]], c))
    return fx, state, names


def test_random_fixpoint_equals_oracles():
    rng = random.Random(2024)
    brute_checked = 0
    for seed in range(500):
        succ, init, commit = _random_instance(rng)
        fx, state, names = _state_for(succ, init, commit, seed)
        s = settle(state)
        flows = [s.flows[fx.pk(n)] for n in names]
        assert flows == lp_flows(succ, init, commit)
        if grid_size(commit) <= 20_000:
            assert flows == brute_force(succ, init, commit)
            brute_checked += 1
        balances = [s.balances[fx.pk(n)] for n in names]
        assert sum(balances) == sum(init)
        assert min(balances) >= 0
        assert feasible(succ, init, commit, flows)
    assert brute_checked >= 100


def test_iteration_monotone_and_bounded():
    rng = random.Random(7)
    for _ in range(200):
        succ, init, commit = _random_instance(rng)
        n = len(succ)
        flows, trace = list(commit), [list(commit)]
        while True:
            incoming = [0] * n
            for u, s in enumerate(succ):
                if s >= 0:
                    incoming[s] += flows[u]
            nxt = [min(commit[v], init[v] + incoming[v]) for v in range(n)]
            if nxt == flows:
                break
            assert all(a <= b for a, b in zip(nxt, flows))
            flows = nxt
            trace.append(flows)
        final, sweeps = kernels.greatest_fixpoint(succ, init, commit)
        assert list(final) == flows
        assert sweeps <= n * max(commit + [1]) + 1


# -- merge -------------------------------------------------------------------


def test_merge_takes_max():
    fx = _cycle(10, 10)
    s3 = fx.state.with_commitment(sign_commitment("ab", fx.keys["A"], 3))
    s5 = fx.state.with_commitment(sign_commitment("ab", fx.keys["A"], 5))
    merged = merge_states([s3, s5])
    assert merged.commit_of(fx.pk("A")) == 5
    assert merge_states([s5, s5]) == s5


def test_merge_keeps_only_latest_seq():
    fx = _cycle(10, 10)
    later = open_signed("ab", fx.state.graph, fx.state.funds, fx.keys.values(), seq=2)
    old = fx.state.with_commitment(sign_commitment("ab", fx.keys["A"], 9))
    new = later.with_commitment(sign_commitment("ab", fx.keys["A"], 2))
    merged = merge_states([old, new])
    assert merged.seq == 2 and merged.commit_of(fx.pk("A")) == 2


def test_merge_mixed_headers_refused():
    a, b = _cycle(10, 10), _cycle(5, 15)
    with pytest.raises(MixedChannelStates):
        merge_states([a.state, b.state])
    with pytest.raises(MixedChannelStates):
        merge_states([])


def test_merge_drops_invalid_commitments():
    fx = _cycle(10, 10)
    forged = replace(sign_commitment("ab", fx.keys["A"], 3), amount=9)
    merged = merge_states([fx.state.with_commitment(forged)])
    assert merged.commit_of(fx.pk("A")) == 0


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 12), st.integers(0, 12)), min_size=1, max_size=4))
def test_merge_dominance(commit_pairs):
    fx = _cycle(6, 6)
    states = []
    for ca, cb in commit_pairs:
        s = fx.state
        s = s.with_commitment(sign_commitment("ab", fx.keys["A"], ca))
        s = s.with_commitment(sign_commitment("ab", fx.keys["B"], cb))
        states.append(s)
    merged = settle(merge_states(states))
    for s in states:
        single = settle(s)
        assert all(merged.flows[v] >= single.flows[v] for v in single.flows)


# -- close -------------------------------------------------------------------


def test_close_after_example1():
    fx = example1()
    sigs = {k.public: sign_close(fx.state, k) for k in fx.keys.values()}
    closed = close_cooperative(fx.state, sigs)
    assert closed.graph.edges == frozenset() and closed.commitments == ()
    assert fx.by_name(closed.funds) == {"c0": 0, "c1": 0, "s": 2, "t": 8}
    assert closed.seq == fx.state.seq


def test_close_untouched():
    fx = _cycle(4, 6)
    sigs = {k.public: sign_close(fx.state, k) for k in fx.keys.values()}
    assert fx.by_name(close_cooperative(fx.state, sigs).funds) == {"A": 4, "B": 6}


def test_close_missing_signature_refused():
    fx = example1()
    sigs = {k.public: sign_close(fx.state, k) for n, k in fx.keys.items() if n != "t"}
    with pytest.raises(SetupIncomplete):
        close_cooperative(fx.state, sigs)


def test_serialization_stable():
    a, b = example1(), example1()
    assert a.state.to_bytes() == b.state.to_bytes()
    js = a.state.to_json(a.names)
    assert js["commitments"] == {"c0": 5, "c1": 5, "s": 8}
    assert sorted(js["edges"]) == [["c0", "s"], ["c1", "s"], ["s", "t"]]


# -- two-party equivalence ---------------------------------------------------


def test_cycle_reproduces_two_party_channel():
    rng = random.Random(11)
    for trial in range(100):
        fa, fb = rng.randint(0, 15), rng.randint(0, 15)
        if fa + fb == 0:
            fb = 1
        a, b = keygen(1000 + 2 * trial), keygen(1001 + 2 * trial)
        params = ChannelParams("ab", a.public, b.public, fa, fb, 0, 1, 1, 1, 5)
        _, update = new_channel(params, a, b)
        fx = _cycle(fa, fb)
        state, paid = fx.state, {"A": 0, "B": 0}
        for _ in range(rng.randint(0, 12)):
            delta = rng.randint(-8, 8)
            payer = "A" if delta >= 0 else "B"
            try:
                nxt = make_update(params, update, delta, a, b)
            except InsufficientFunds:
                with pytest.raises(InsolventPayment):
                    pay(state, fx.keys[payer], paid[payer] + abs(delta))
                continue
            update = nxt
            paid[payer] += abs(delta)
            state, _, _ = pay(state, fx.keys[payer], paid[payer])
        final = fx.by_name(settle(state).balances)
        assert (final["A"], final["B"]) == (update.balance_a, update.balance_b)


def test_random_proofs_verify():
    rng = random.Random(99)
    for seed in range(150):
        succ, init, commit = _random_instance(rng)
        fx, state, names = _state_for(succ, init, commit, 10_000 + seed)
        s = settle(state)
        for i, n in enumerate(names):
            v = fx.pk(n)
            available = s.balances[v] + s.flows[v]
            proof = prove_funds(state, v, available)
            assert verify_proof(state, proof)
            with pytest.raises(Unprovable):
                prove_funds(state, v, available + 1)
