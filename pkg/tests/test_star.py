import itertools
import json
from pathlib import Path

import pytest

from dcwc.channel import ChannelParams, make_update, new_channel
from dcwc.crypto import keygen, sign
from dcwc.errors import InvalidParams, InvalidTimelock, RemainderTooSmall
from dcwc.star import (
    ELSE_BRANCH,
    IF_BRANCH,
    OP_CHECKSEQUENCEVERIFY,
    OP_ELSE,
    OP_ENDIF,
    OP_IF,
    Op,
    Script,
    StarLedger,
    StarWatchState,
    build_invalidation,
    claim_tx,
    compile_script,
    disclose_star,
    earliest_age,
    eval_script,
    forward_with_claim,
    pay_to_key,
    sender_sweep,
    settle_star,
)

GOLDEN = json.loads((Path(__file__).parent / "data" / "golden_scripts.json").read_text())
SIGHASH = b"\x42" * 32


def test_golden_vectors():
    w, b = bytes.fromhex(GOLDEN["keys"]["w"]), bytes.fromhex(GOLDEN["keys"]["b"])
    for vec in GOLDEN["vectors"]:
        script = compile_script(w, b, vec["b"]) if vec["template"] == "compile" else pay_to_key(w)
        assert script.to_bytes().hex() == vec["hex"], vec["name"]
        assert Script.from_bytes(bytes.fromhex(vec["hex"])) == script


def test_template_shape():
    s = compile_script(keygen(1).public, keygen(2).public, 6)
    assert s.balanced()
    codes = [op.code for op in s.ops]
    assert codes[0] == OP_IF and codes[-1] == OP_ENDIF
    assert codes.count(OP_CHECKSEQUENCEVERIFY) == 1
    assert codes.index(OP_CHECKSEQUENCEVERIFY) < codes.index(OP_ELSE)
    assert str(s).startswith("OP_IF <00000006> OP_CHECKSEQUENCEVERIFY")


def test_unbalanced_detected():
    assert not Script((Op(OP_IF),)).balanced()
    assert not Script((Op(OP_ELSE), Op(OP_ENDIF))).balanced()
    assert not Script((Op(OP_IF), Op(OP_ELSE), Op(OP_ELSE), Op(OP_ENDIF))).balanced()


def test_decode_errors():
    with pytest.raises(ValueError):
        Script.from_bytes(b"\x99")
    with pytest.raises(ValueError):
        Script.from_bytes(b"\x01\x05ab")


@pytest.mark.parametrize("b", [0, -3])
def test_nonpositive_timelock(b):
    with pytest.raises(InvalidTimelock):
        compile_script(keygen(1).public, keygen(2).public, b)


def test_eval_examples(scheme):
    w, b = keygen(1), keygen(2)
    s = compile_script(w.public, b.public, 6)
    sig_w, sig_b = sign(w, SIGHASH).data, sign(b, SIGHASH).data
    assert not eval_script(s, (sig_w, IF_BRANCH), SIGHASH, 5)
    assert eval_script(s, (sig_w, IF_BRANCH), SIGHASH, 6)
    assert eval_script(s, (sig_b, ELSE_BRANCH), SIGHASH, 0)
    assert not eval_script(s, (sig_b, IF_BRANCH), SIGHASH, 100)
    assert not eval_script(s, (sig_w, ELSE_BRANCH), SIGHASH, 100)
    assert not eval_script(s, (sig_w, IF_BRANCH), b"\x00" * 32, 6)


@pytest.mark.parametrize("witness", [(), (b"",), ("text", 3), (b"x" * 32, b"\x01", b"extra")])
def test_malformed_witness_false(witness):
    s = compile_script(keygen(1).public, keygen(2).public, 6)
    assert eval_script(s, witness, SIGHASH, 10) is False


def test_if_branch_sound_exhaustive(scheme):
    """Before age b nothing satisfies the IF branch: every key, selector and signature combination."""
    w, b, x = keygen(1), keygen(2), keygen(3)
    s = compile_script(w.public, b.public, 6)
    sigs = [sign(k, SIGHASH).data for k in (w, b, x)] + [b"", b"\x00" * 32, b"\x00" * 64]
    selectors = [IF_BRANCH, b"\x02", b"\x00\x01", b"\xff" * 4]
    for age in range(6):
        for sig, sel in itertools.product(sigs, selectors):
            assert not eval_script(s, (sig, sel), SIGHASH, age)
    # at or after b only W's signature opens it
    for age in (6, 7, 50):
        for sig, sel in itertools.product(sigs, selectors):
            assert eval_script(s, (sig, sel), SIGHASH, age) == (sig == sigs[0])


def test_pay_to_key(scheme):
    w = keygen(5)
    assert eval_script(pay_to_key(w.public), (sign(w, SIGHASH).data,), SIGHASH, 0)
    assert not eval_script(pay_to_key(w.public), (sign(keygen(6), SIGHASH).data,), SIGHASH, 0)


# -- transactions ------------------------------------------------------------


@pytest.fixture
def star(scheme):
    a, b = keygen(10), keygen(11)
    hops = [keygen(20 + i) for i in range(3)]
    params = ChannelParams("s", a.public, b.public, 10, 10, 0, 1, 1, 1, 30)
    _, revoked = new_channel(params, a, b)
    return params, a, b, hops, revoked


def _chain(star, remainder=4, claims=(1, 1, 1), b=6):
    params, a, bb, hops, revoked = star
    inv = build_invalidation(revoked, a.public, bb, remainder, params.settlement_timelock_t)
    held = {bb.public: disclose_star(inv, bb)}
    msg, sender = held[bb.public], bb
    for claim, nxt in zip(claims, hops):
        msg = forward_with_claim(msg, sender, nxt.public, claim, b)
        held[nxt.public] = msg
        sender = nxt
    keys = {k.public: k for k in [bb, *hops]}
    return inv, held, keys


def test_invalidation_split(star):
    inv, _, _ = _chain(star)
    assert [o.amount for o in inv.tx.outputs] == [16, 4]
    assert inv.open_amount == 4 and inv.revoked_seq == 0


def test_invalidation_remainder_bounds(star):
    params, a, b, _, revoked = star
    with pytest.raises(InvalidParams):
        build_invalidation(revoked, a.public, b, 21, 30)


def test_zero_remainder_cannot_forward(star):
    params, a, b, hops, revoked = star
    inv = build_invalidation(revoked, a.public, b, 0, 30)
    with pytest.raises(RemainderTooSmall):
        forward_with_claim(disclose_star(inv, b), b, hops[0].public, 0, 6)


def test_forward_example(star):
    params, a, b, hops, revoked = star
    inv = build_invalidation(revoked, a.public, b, 4, 30)
    m = forward_with_claim(disclose_star(inv, b), b, hops[0].public, 2, 6, min_remainder=1)
    tx = m.chain[-1]
    assert [o.amount for o in tx.outputs] == [2, 2]
    assert tx.outputs[1].script == compile_script(hops[0].public, b.public, 6)
    assert tx.outputs[0].script == pay_to_key(b.public)
    assert m.holder == hops[0].public and m.open_amount == 2


def test_forward_remainder_too_small(star):
    params, a, b, hops, revoked = star
    inv = build_invalidation(revoked, a.public, b, 2, 30)
    with pytest.raises(RemainderTooSmall):
        forward_with_claim(disclose_star(inv, b), b, hops[0].public, 2, 6, min_remainder=1)


def test_forward_only_by_holder(star):
    inv, held, _ = _chain(star)
    _, a, b, hops, _ = star
    with pytest.raises(InvalidParams):
        forward_with_claim(held[b.public], hops[0], hops[1].public, 1, 6)


def test_earliest_ages(star):
    inv, held, _ = _chain(star)
    _, a, b, hops, _ = star
    assert [earliest_age(held[k.public]) for k in [b, *hops]] == [0, 6, 12, 18]


def _ledger_with_invalidation(star, inv, h0=10):
    from dcwc.star import settlement_tx

    params, a, b, hops, revoked = star
    ledger = StarLedger()
    ledger.place(settlement_tx(revoked, a.public, b.public, 30), h0)
    assert ledger.accept(inv.tx, h0)
    return ledger


def test_three_hop_timelock_ordering(star):
    """Hop k's own spend fails 6k-1 blocks after the invalidation and succeeds at 6k."""
    inv, held, keys = _chain(star)
    _, a, b, hops, _ = star
    h0 = 10
    for k, hop in enumerate(hops, start=1):
        ledger = _ledger_with_invalidation(star, inv, h0)
        msg = held[hop.public]
        for j, tx in enumerate(msg.chain):
            at = h0 + 6 * j
            if j:
                assert ledger.check(tx, at - 1) == "relative timelock not met"
            assert ledger.accept(tx, at)
        claim = claim_tx(msg, hop)
        assert ledger.check(claim, h0 + 6 * k - 1) is not None
        assert ledger.accept(claim, h0 + 6 * k)
        assert ledger.balances()[hop.public.data] == msg.open_amount


def test_sender_keeps_else_path(star):
    """W1 never claims; B can still sweep the forwarded remainder back later."""
    inv, held, keys = _chain(star)
    _, a, b, hops, _ = star
    ledger = _ledger_with_invalidation(star, inv)
    fwd = held[hops[0].public].chain[0]
    assert ledger.accept(fwd, 10)
    assert ledger.accept(sender_sweep(fwd, 1, b), 40)
    assert ledger.balances()[b.public.data] == 20


def test_sweep_by_wrong_key_fails(star):
    inv, held, keys = _chain(star)
    _, a, b, hops, _ = star
    ledger = _ledger_with_invalidation(star, inv)
    fwd = held[hops[0].public].chain[0]
    ledger.accept(fwd, 10)
    assert ledger.check(sender_sweep(fwd, 1, hops[1]), 40) == "script failed"


def test_ledger_rejects_double_spend_and_inflation(star):
    inv, held, keys = _chain(star)
    _, a, b, hops, _ = star
    ledger = _ledger_with_invalidation(star, inv)
    assert ledger.check(inv.tx, 10) == "already confirmed"
    c1 = claim_tx(held[b.public], b)
    assert ledger.accept(c1, 10)
    assert ledger.check(held[hops[0].public].chain[0], 10) == "missing or spent input"


def test_value_conservation_per_tx(star):
    inv, held, keys = _chain(star)
    for m in held.values():
        for tx in m.chain:
            assert tx.value_out <= 4


def test_watch_state_one_per_revocation(star):
    params, a, b, hops, first = star
    second = make_update(params, first, 2, a, b)
    third = make_update(params, second, 2, a, b)
    st = StarWatchState(hops[0].public)
    for update in (first, second):
        inv = build_invalidation(update, a.public, b, 4, 30)
        deep = forward_with_claim(forward_with_claim(disclose_star(inv, b), b, hops[1].public, 1, 6),
                                  hops[1], hops[0].public, 1, 6)
        shallow = forward_with_claim(disclose_star(inv, b), b, hops[0].public, 1, 6)
        assert st.store(deep)
        assert st.store(shallow)
        assert not st.store(deep)
    assert st.size("s") == 2 <= third.seq
    assert st.for_settlement("s", 1).hops == 1
    assert st.for_settlement("s", 2) is None
    assert not st.store(disclose_star(build_invalidation(third, a.public, b, 4, 30), b))


# -- settlement --------------------------------------------------------------


def _settle(star, online, **kw):
    params, a, b, hops, revoked = star
    inv, held, keys = _chain(star, **kw)
    names = {b.public: "B", a.public: "A", **{k.public: f"W{i}" for i, k in enumerate(hops, 1)}}
    on = {k.public for k in [a, b, *hops] if names[k.public] in online}
    out = settle_star(revoked, a, b, held, keys, on, 30)
    pay = {names[k]: v for k, v in out.payouts.items() if v}
    assert sum(out.payouts.values()) + out.unclaimed + out.fees == 20
    return out, pay, names


def test_settle_beneficiary_online(star):
    out, pay, names = _settle(star, {"A", "B"})
    assert out.invalidated and pay == {"B": 20}


def test_settle_first_watchtower(star):
    out, pay, names = _settle(star, {"A", "W1"})
    assert out.invalidated and names[out.winner] == "W1"
    assert pay == {"B": 17, "W1": 3}
    claim_heights = [h for h, _, label in out.events if label.startswith("claim")]
    assert claim_heights == [1 + 6]


def test_settle_third_watchtower(star):
    out, pay, names = _settle(star, {"W3"})
    assert pay == {"B": 17, "W1": 1, "W2": 1, "W3": 1}
    assert [h for h, _, label in out.events if label.startswith("claim")] == [1 + 18]


def test_settle_priority_goes_to_earliest(star):
    for online in ({"W1", "W2", "W3"}, {"W2", "W3"}):
        out, pay, names = _settle(star, online)
        assert names[out.winner] == min(online)


def test_settle_all_offline_stands(star):
    out, pay, names = _settle(star, {"A"})
    assert not out.invalidated and out.winner is None
    assert pay == {"A": 10, "B": 10}


def test_settle_nobody_online(star):
    out, pay, names = _settle(star, set())
    assert not out.invalidated
    assert pay == {"B": 10} and out.unclaimed == 10
