"""Linear simulated blockchain with miner-side proof-of-fraud validation."""
from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from typing import Iterable

from .channel import ChannelParams, SettlementTx, update_is_valid
from .crypto import PublicKey
from .errors import FeeExceedsPool
from .protocol import (
    VALID,
    PofSubmission,
    envelope_links,
    Reason,
    Verdict,
    plaintext_path,
    reject,
    submission_signature_ok,
    verify_envelope_chain,
)

WATCHTOWER_SHARE = "watchtower-share"
MINER_FEE = "miner-fee"
PARTY_REFUND = "party-refund"
PARTY_PAYOUT = "party-payout"


@dataclass(frozen=True)
class Entry:
    kind: str  # funding | settlement | pof
    channel_id: str
    digest: bytes
    item: object = field(compare=False, repr=False, default=None)


@dataclass
class Block:
    height: int
    entries: tuple[Entry, ...] = ()
    rejected: list[tuple[bytes, Reason]] = field(default_factory=list)

    def pof(self, channel_id: str) -> PofSubmission | None:
        for e in self.entries:
            if e.kind == "pof" and e.channel_id == channel_id:
                return e.item
        return None


@dataclass(frozen=True)
class PayoffRecord:
    recipient: PublicKey
    amount: int
    source: str
    role: str


@dataclass
class Outcome:
    channel_id: str
    fraud_proven: bool
    settlement_seq: int
    proof_round: int | None
    payouts: list[PayoffRecord]
    flags: list[str] = field(default_factory=list)

    def amount_to(self, pk: PublicKey) -> int:
        return sum(p.amount for p in self.payouts if p.recipient == pk)


class SimChain:
    """Append-only chain; heights start at 0 and every mined block takes the next one."""

    def __init__(self, seed: int, miner: PublicKey | None = None):
        self.blocks: list[Block] = []
        self.mempool: list = []
        self.rng = random.Random(f"{seed}/miner")
        self.miner = miner if miner is not None else PublicKey(b"\x00" * 32)
        self.channels: dict[str, ChannelParams] = {}
        self.settlements: dict[str, SettlementTx] = {}
        self.proofs: dict[str, tuple[PofSubmission, int]] = {}
        self.seen_paths: dict[tuple, bytes] = {}
        self.finalized: dict[str, Outcome] = {}

    @property
    def height(self) -> int:
        """Height the next mined block will get."""
        return len(self.blocks)

    def fund(self, params: ChannelParams) -> None:
        self.mempool.append(("funding", params))

    def publish_settlement(self, settlement: SettlementTx) -> None:
        self.mempool.append(("settlement", settlement))

    def submit(self, sub: PofSubmission) -> Verdict:
        """Network-level relay: discard plaintext that disagrees with the envelope."""
        if sub.plaintext_path != plaintext_path(sub.message):
            return reject(Reason.PLAINTEXT_MISMATCH)
        self.mempool.append(("pof", sub))
        return VALID

    def has_proof(self, channel_id: str) -> bool:
        return channel_id in self.proofs

    def rounds_elapsed(self, channel_id: str, height: int | None = None) -> int | None:
        s = self.settlements.get(channel_id)
        if s is None:
            return None
        h = self.height if height is None else height
        return (h - s.published_height) // self.channels[channel_id].blocks_per_round_b

    def mine(self, prefer: PublicKey | None = None) -> Block:
        return mine_block(self, prefer=prefer)

    def dump_lines(self) -> list[str]:
        lines = []
        for b in self.blocks:
            entries = [{"kind": e.kind, "channel": e.channel_id, "digest": e.digest.hex()} for e in b.entries]
            lines.append(json.dumps({"height": b.height, "entries": entries}, separators=(",", ":")))
        return lines


def _path_key(sub: PofSubmission) -> tuple:
    return (sub.channel_id, sub.level, sub.message.seq, sub.message.id_path)


def _rounds(height: int, settlement: SettlementTx, params: ChannelParams) -> int:
    return (height - settlement.published_height) // params.blocks_per_round_b


# The seven miner checks, each on its own so a rejection can be traced to exactly one.


def check_unproven(sub, chain, params, height, peers=()) -> Reason | None:
    """(1) No proof of fraud for this channel yet."""
    if chain.has_proof(sub.channel_id) or sub.channel_id in chain.finalized:
        return Reason.ALREADY_PROVEN
    return None


def check_payload(sub, chain, params, height, peers=()) -> Reason | None:
    """(2) The payload is an update generated by the channel protocol."""
    return None if update_is_valid(sub.message.payload, params) else Reason.PAYLOAD_INVALID


def check_newer(sub, chain, params, height, peers=()) -> Reason | None:
    """(3) The payload supersedes the published settlement."""
    return None if sub.message.seq > chain.settlements[sub.channel_id].seq else Reason.NOT_NEWER


def check_id_range(sub, chain, params, height, peers=()) -> Reason | None:
    """(4) Every hop id lies in 1..N."""
    if any(not 1 <= hop <= params.fanout_n for hop in sub.message.id_path):
        return Reason.ID_OUT_OF_RANGE
    return None


def check_unique_path(sub, chain, params, height, peers=()) -> Reason | None:
    """(5) No other message for the same update on the same level and id path, on chain or among valid peers."""
    key = _path_key(sub)
    seen = chain.seen_paths.get(key)
    if seen is not None and seen != sub.message.digest:
        return Reason.DUPLICATE_ID
    for other in peers:
        if other is sub or _path_key(other) != key or other.message.digest == sub.message.digest:
            continue
        if _base_checks(other, chain, params, height):
            return Reason.DUPLICATE_ID
    return None


def check_round(sub, chain, params, height, peers=()) -> Reason | None:
    """(6) Signature count equals the rounds passed since the settlement, within l."""
    rounds = _rounds(height, chain.settlements[sub.channel_id], params)
    if rounds > params.rounds_l:
        return Reason.WINDOW_CLOSED
    return None if sub.level == rounds else Reason.ROUND_MISMATCH


def check_linkage(sub, chain, params, height, peers=()) -> Reason | None:
    """(7) Each hop key signs the next layer, ending with the submitter's own signature."""
    if not envelope_links(sub.message, params):
        return Reason.CHAIN_LINK_BROKEN
    if sub.submitter != sub.message.holder or not submission_signature_ok(sub):
        return Reason.CHAIN_LINK_BROKEN
    return None


CHECKS = {
    1: check_unproven,
    2: check_payload,
    3: check_newer,
    4: check_id_range,
    5: check_unique_path,
    6: check_round,
    7: check_linkage,
}


def failed_checks(
    sub: PofSubmission,
    chain: SimChain,
    params: ChannelParams,
    peers: Iterable[PofSubmission] = (),
    height: int | None = None,
) -> list[int]:
    """Numbers of every check ``sub`` fails, each evaluated independently of the others."""
    h = chain.height if height is None else height
    peers = list(peers)
    return [n for n, check in CHECKS.items() if check(sub, chain, params, h, peers) is not None]


def _preconditions(sub: PofSubmission, chain: SimChain) -> Verdict:
    if sub.channel_id not in chain.settlements:
        return reject(Reason.NO_SETTLEMENT)
    if sub.plaintext_path != plaintext_path(sub.message):
        return reject(Reason.PLAINTEXT_MISMATCH)
    return VALID


_BASE_ORDER = (check_unproven, check_payload, check_newer, check_id_range, check_round)


def _base_checks(sub: PofSubmission, chain: SimChain, params: ChannelParams, height: int) -> Verdict:
    """Every check except the duplicate filter, first failure wins."""
    pre = _preconditions(sub, chain)
    if not pre:
        return pre
    for check in _BASE_ORDER:
        reason = check(sub, chain, params, height)
        if reason is not None:
            return reject(reason)
    # full envelope verdict is memoized per message, so the common path stays cheap
    if not verify_envelope_chain(sub.message, params):
        return reject(Reason.CHAIN_LINK_BROKEN)
    if sub.submitter != sub.message.holder or not submission_signature_ok(sub):
        return reject(Reason.CHAIN_LINK_BROKEN)
    return VALID


def validate_pof(
    sub: PofSubmission,
    chain: SimChain,
    params: ChannelParams,
    peers: Iterable[PofSubmission] = (),
    height: int | None = None,
) -> Verdict:
    """Miner-side validity of one submission against the chain and its mempool peers.

    Duplicate detection (same level, same id path, different message) counts
    only peers that pass every other check, and rejects all parties to the
    clash, not just the later arrival.
    """
    h = chain.height if height is None else height
    base = _base_checks(sub, chain, params, h)
    if not base:
        return base
    reason = check_unique_path(sub, chain, params, h, list(peers))
    return reject(reason) if reason is not None else VALID


def mine_block(
    chain: SimChain,
    registry: dict[str, ChannelParams] | None = None,
    prefer: PublicKey | None = None,
) -> Block:
    """Mine the next block: fundings, settlements and one uniform valid proof per channel.

    ``prefer`` models a mining watchtower that includes its own valid proof
    when it has one instead of drawing uniformly.
    """
    if registry:
        for cid, p in registry.items():
            chain.channels.setdefault(cid, p)
    height = chain.height
    block = Block(height)
    entries: list[Entry] = []
    pofs: dict[str, list[PofSubmission]] = {}
    for kind, item in chain.mempool:
        if kind == "funding":
            chain.channels[item.channel_id] = item
            entries.append(Entry("funding", item.channel_id, item.funding_digest(), item))
        elif kind == "settlement":
            params = chain.channels.get(item.channel_id)
            if (
                params is None
                or item.channel_id in chain.settlements
                or item.publisher not in params.parties()
                or not update_is_valid(item.update, params)
            ):
                block.rejected.append((item.digest(), Reason.PAYLOAD_INVALID))
                continue
            placed = SettlementTx(item.update, item.publisher, height)
            chain.settlements[item.channel_id] = placed
            entries.append(Entry("settlement", item.channel_id, placed.digest(), placed))
        else:
            pofs.setdefault(item.channel_id, []).append(item)
    chain.mempool = []

    for cid in sorted(pofs):
        params = chain.channels.get(cid)
        subs = _dedupe(pofs[cid])
        if params is None:
            block.rejected.extend((s.digest, Reason.UNKNOWN_CHANNEL) for s in subs)
            continue
        otherwise_valid = []
        for s in subs:
            v = _base_checks(s, chain, params, height)
            if v:
                otherwise_valid.append(s)
            else:
                block.rejected.append((s.digest, v.reason))
        valid = []
        for s in otherwise_valid:
            v = validate_pof(s, chain, params, otherwise_valid, height)
            if v:
                valid.append(s)
            else:
                block.rejected.append((s.digest, v.reason))
        for s in otherwise_valid:
            chain.seen_paths.setdefault(_path_key(s), s.message.digest)
        if not valid:
            continue
        valid.sort(key=lambda s: s.digest)
        own = [s for s in valid if prefer is not None and s.submitter == prefer]
        chosen = own[0] if own else valid[chain.rng.randrange(len(valid))]
        chain.proofs[cid] = (chosen, height)
        entries.append(Entry("pof", cid, chosen.digest, chosen))
    block.entries = tuple(entries)
    chain.blocks.append(block)
    return block


def _dedupe(subs: list[PofSubmission]) -> list[PofSubmission]:
    seen, out = set(), []
    for s in subs:
        if s.digest not in seen:
            seen.add(s.digest)
            out.append(s)
    return out


def distribute_payoff(
    pof: PofSubmission,
    params: ChannelParams,
    fee: int,
    *,
    honest: PublicKey,
    miner: PublicKey,
) -> list[PayoffRecord]:
    """Split the cheater's reserve: equal floor shares per path watchtower, fee, residue."""
    rho = params.rho
    if fee >= rho:
        raise FeeExceedsPool(f"fee {fee} leaves nothing of the reserve {rho}")
    path = pof.message.recipients()
    share = (rho - fee) // len(path)
    records = [PayoffRecord(w, share, params.channel_id, WATCHTOWER_SHARE) for w in path]
    records.append(PayoffRecord(miner, fee, params.channel_id, MINER_FEE))
    residue = rho - fee - share * len(path)
    if residue:
        records.append(PayoffRecord(honest, residue, params.channel_id, PARTY_REFUND))
    return records


def finalize_channel(chain: SimChain, params: ChannelParams) -> Outcome:
    """Close the channel once a proof is in or the l-round window has passed."""
    cid = params.channel_id
    if cid in chain.finalized:
        return chain.finalized[cid]
    settlement = chain.settlements.get(cid)
    if settlement is None:
        raise ValueError(f"channel {cid} has no settlement on chain")
    cheater = settlement.publisher
    if cid in chain.proofs:
        pof, height = chain.proofs[cid]
        honest = params.counterparty(cheater)
        payouts = [
            PayoffRecord(honest, params.total, cid, PARTY_PAYOUT),
            PayoffRecord(honest, params.rho, cid, PARTY_REFUND),
        ]
        flags = []
        try:
            payouts += distribute_payoff(pof, params, params.pof_fee, honest=honest, miner=chain.miner)
        except FeeExceedsPool:
            flags.append("FeeExceedsPool")
            fee = min(params.pof_fee, params.rho)
            payouts.append(PayoffRecord(chain.miner, fee, cid, MINER_FEE))
            if params.rho - fee:
                payouts.append(PayoffRecord(honest, params.rho - fee, cid, PARTY_REFUND))
        rounds = (height - settlement.published_height) // params.blocks_per_round_b
        outcome = Outcome(cid, True, settlement.seq, rounds, payouts, flags)
    else:
        if chain.rounds_elapsed(cid) <= params.rounds_l:
            raise ValueError(f"channel {cid} is still inside its commit window")
        u = settlement.update
        payouts = [
            PayoffRecord(params.party_a, u.balance_a, cid, PARTY_PAYOUT),
            PayoffRecord(params.party_b, u.balance_b, cid, PARTY_PAYOUT),
            PayoffRecord(params.party_a, params.rho, cid, PARTY_REFUND),
            PayoffRecord(params.party_b, params.rho, cid, PARTY_REFUND),
        ]
        outcome = Outcome(cid, False, settlement.seq, None, payouts)
    chain.finalized[cid] = outcome
    return outcome
