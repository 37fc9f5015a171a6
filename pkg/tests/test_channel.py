import pytest

from dcwc.channel import (
    ChannelParams,
    SettlementTx,
    UpdateTx,
    WatchMessage,
    WatchtowerState,
    make_update,
    new_channel,
    store_best,
    update_is_valid,
)
from dcwc.crypto import keygen
from dcwc.errors import InsufficientFunds, InvalidParams


def test_updates_are_valid_and_sequential(channel):
    params, a, b, updates = channel
    assert [u.seq for u in updates] == [0, 1, 2]
    assert [(u.balance_a, u.balance_b) for u in updates] == [(10, 10), (7, 13), (5, 15)]
    assert all(update_is_valid(u, params) for u in updates)


def test_update_needs_both_signatures(channel):
    params, a, b, updates = channel
    half = UpdateTx("c0", 3, 5, 15).signed(a, a)
    assert not update_is_valid(half, params)


def test_update_must_conserve_and_match_channel(channel):
    params, a, b, _ = channel
    assert not update_is_valid(UpdateTx("c0", 1, 9, 9).signed(a, b), params)
    assert not update_is_valid(UpdateTx("c9", 1, 10, 10).signed(a, b), params)
    assert not update_is_valid(UpdateTx("c0", -1, 10, 10).signed(a, b), params)


def test_overdraft_refused(channel):
    params, a, b, updates = channel
    with pytest.raises(InsufficientFunds):
        make_update(params, updates[-1], 6, a, b)
    with pytest.raises(InsufficientFunds):
        make_update(params, updates[-1], -16, a, b)


@pytest.mark.parametrize(
    "change",
    [dict(fund_a=-1), dict(rho=-1), dict(fund_a=0, fund_b=0), dict(fanout_n=0), dict(rounds_l=0),
     dict(settlement_timelock_t=2)],
)
def test_params_validation(parties, change):
    a, b = parties
    fields = dict(channel_id="c", party_a=a.public, party_b=b.public, fund_a=1, fund_b=1, rho=1,
                  fanout_n=2, rounds_l=2, blocks_per_round_b=1, settlement_timelock_t=3)
    fields.update(change)
    with pytest.raises(InvalidParams):
        ChannelParams(**fields).validate()


def test_new_channel_checks_keys(parties):
    a, b = parties
    params = ChannelParams("c", a.public, b.public, 1, 1, 1, 1, 1, 1, 5)
    with pytest.raises(InvalidParams):
        new_channel(params, b, a)


def test_wrapping_records_path(channel):
    params, a, b, updates = channel
    w1, w2 = keygen(11), keygen(12)
    m = WatchMessage(updates[1]).wrap(b, 1, w1.public).wrap(w1, 2, w2.public)
    assert m.depth == 2
    assert m.id_path == (1, 2)
    assert m.holder == w2.public
    assert m.signers() == (b.public, w1.public)
    assert m.recipients() == (w1.public, w2.public)
    assert m.inner_bytes(0) == updates[1].to_bytes()


def test_store_best_prefers_fresh_then_shallow(channel):
    params, a, b, updates = channel
    w, x = keygen(11), keygen(12)
    st = WatchtowerState(w)
    deep = WatchMessage(updates[1]).wrap(b, 1, x.public).wrap(x, 1, w.public)
    shallow = WatchMessage(updates[1]).wrap(b, 2, w.public)
    newer_deep = WatchMessage(updates[2]).wrap(b, 1, x.public).wrap(x, 2, w.public)
    store_best(st, deep, params)
    assert st.held("c0") is deep
    store_best(st, shallow, params)
    assert st.held("c0") is shallow
    store_best(st, newer_deep, params)
    assert st.held("c0") is newer_deep
    store_best(st, shallow, params)
    assert st.held("c0") is newer_deep


def test_store_ignores_foreign_and_forged(channel):
    params, a, b, updates = channel
    w, x = keygen(11), keygen(12)
    st = WatchtowerState(w)
    store_best(st, WatchMessage(updates[1]).wrap(b, 1, x.public), params)
    forged = WatchMessage(updates[1]).wrap(x, 1, w.public)  # innermost signer is no party
    store_best(st, forged, params)
    assert st.held("c0") is None


def test_settlement_digest_depends_on_publisher(channel):
    params, a, b, updates = channel
    assert SettlementTx(updates[0], a.public).digest() != SettlementTx(updates[0], b.public).digest()
