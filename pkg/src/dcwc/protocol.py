"""Disclose & Cascade message fan-out and the watch-and-commit schedule."""
from __future__ import annotations

import enum
import random
from dataclasses import dataclass, field
from functools import cached_property
from typing import NamedTuple, Sequence

from .channel import (
    ChannelParams,
    SettlementTx,
    UpdateTx,
    WatchMessage,
    WatchtowerState,
    envelope_signing_bytes,
    update_is_valid,
)
from .crypto import KeyPair, PublicKey, Signature, digest, encode_fields, sign, verify


class Reason(str, enum.Enum):
    OK = "Ok"
    EMPTY_MESSAGE = "EmptyMessage"
    PAYLOAD_INVALID = "PayloadInvalid"
    ID_OUT_OF_RANGE = "IdOutOfRange"
    CHAIN_LINK_BROKEN = "ChainLinkBroken"
    INNERMOST_NOT_PARTY = "InnermostNotParty"
    BAD_SIGNATURE = "BadSignature"
    NOT_ADDRESSED = "NotAddressed"
    # miner-side checks
    NO_SETTLEMENT = "NoSettlement"
    PLAINTEXT_MISMATCH = "PlaintextMismatch"
    ALREADY_PROVEN = "AlreadyProven"
    NOT_NEWER = "NotNewer"
    DUPLICATE_ID = "DuplicateId"
    ROUND_MISMATCH = "RoundMismatch"
    WINDOW_CLOSED = "WindowClosed"
    UNKNOWN_CHANNEL = "UnknownChannel"


class Verdict(NamedTuple):
    ok: bool
    reason: Reason

    def __bool__(self) -> bool:
        return self.ok


VALID = Verdict(True, Reason.OK)


def reject(reason: Reason) -> Verdict:
    return Verdict(False, reason)


class FanOut(list):
    """List of emitted messages; ``degenerate`` is set when fewer than N neighbours existed."""

    degenerate: bool = False


@dataclass
class Topology:
    """Seeded neighbour discovery over a fixed watchtower population.

    With ``identity_reuse`` a sender's neighbours are the first entries of a
    per-sender shuffle of all other watchtowers, so one watchtower may sit at
    several tree positions. Without it every tree position maps to its own
    watchtower (breadth-first rank through one seeded permutation); forged
    extra recipients come from the watchtowers left over after the tree.
    """

    watchtowers: list[KeyPair]
    seed: int
    fanout_n: int
    rounds_l: int
    identity_reuse: bool = False
    _order: list[KeyPair] = field(init=False, repr=False)
    _by_pk: dict[PublicKey, KeyPair] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        order = sorted(self.watchtowers, key=lambda k: k.public)
        random.Random(f"{self.seed}/topology").shuffle(order)
        self._order = order
        self._by_pk = {k.public: k for k in self.watchtowers}

    @property
    def tree_size(self) -> int:
        return sum(self.fanout_n**d for d in range(1, self.rounds_l + 1))

    def keys_of(self, pk: PublicKey) -> KeyPair | None:
        return self._by_pk.get(pk)

    def _tree_index(self, path: tuple[int, ...]) -> int:
        n = self.fanout_n
        offset = sum(n**d for d in range(1, len(path)))
        rank = 0
        for hop in path:
            rank = rank * n + (hop - 1)
        return offset + rank

    def recipients(self, sender: PublicKey, prefix: tuple[int, ...], count: int) -> list[KeyPair]:
        """Up to ``count`` distinct neighbours for the fan-out below ``prefix``."""
        if self.identity_reuse:
            pool = sorted((k for k in self.watchtowers if k.public != sender), key=lambda k: k.public)
            random.Random(f"{self.seed}/neighbours/{sender.hex()}").shuffle(pool)
            return pool[:count]
        chosen: list[KeyPair] = []
        for hop in range(1, min(count, self.fanout_n) + 1):
            idx = self._tree_index(prefix + (hop,))
            if idx < len(self._order) and len(prefix) < self.rounds_l:
                chosen.append(self._order[idx])
        spare = self._order[self.tree_size:]
        for extra in range(max(0, count - self.fanout_n)):
            if extra < len(spare):
                chosen.append(spare[extra])
        return [k for k in chosen if k.public != sender]


def _fan(
    keys: KeyPair,
    inner: WatchMessage,
    topology: Topology,
    params: ChannelParams,
    extra_ids: Sequence[int],
) -> FanOut:
    n = params.fanout_n
    hop_ids = list(range(1, n + 1)) + list(extra_ids)
    neighbours = topology.recipients(keys.public, inner.id_path, len(hop_ids))
    out = FanOut(inner.wrap(keys, hop_id, w.public) for hop_id, w in zip(hop_ids, neighbours))
    out.degenerate = len(neighbours) < len(hop_ids)
    return out


def disclose(
    party: KeyPair,
    update: UpdateTx,
    topology: Topology,
    params: ChannelParams,
    extra_ids: Sequence[int] = (),
) -> FanOut:
    """Send the fresh update to N neighbours, hop ids 1..N, depth 1."""
    if not update_is_valid(update, params) or party.public not in params.parties():
        return FanOut()
    return _fan(party, WatchMessage(update), topology, params, extra_ids)


def cascade(
    receiver: KeyPair,
    incoming: WatchMessage,
    topology: Topology,
    params: ChannelParams,
    extra_ids: Sequence[int] = (),
) -> FanOut:
    """Re-wrap a received message to N new neighbours unless depth would exceed l."""
    if incoming.depth + 1 > params.rounds_l:
        return FanOut()
    if not incoming.layers or incoming.holder != receiver.public:
        return FanOut()
    if not verify_envelope_chain(incoming, params):
        return FanOut()
    return _fan(receiver, incoming, topology, params, extra_ids)


def verify_envelope_chain(m: WatchMessage, params: ChannelParams) -> Verdict:
    """All structural and signature checks of a watch message; first failure wins."""
    memo = m.__dict__.setdefault("_verdicts", {})
    verdict = memo.get(params)
    if verdict is None:
        verdict = memo[params] = _check_envelopes(m, params)
    return verdict


def _check_envelopes(m: WatchMessage, params: ChannelParams) -> Verdict:
    if not m.layers:
        return reject(Reason.EMPTY_MESSAGE)
    if not update_is_valid(m.payload, params):
        return reject(Reason.PAYLOAD_INVALID)
    for layer in m.layers:
        if not 1 <= layer.hop_id <= params.fanout_n:
            return reject(Reason.ID_OUT_OF_RANGE)
    return envelope_links(m, params)


def envelope_links(m: WatchMessage, params: ChannelParams) -> Verdict:
    """Key linkage alone: each layer signed by the previous recipient, innermost by a party."""
    if not m.layers:
        return reject(Reason.EMPTY_MESSAGE)
    for inner, outer in zip(m.layers, m.layers[1:]):
        if outer.signer != inner.recipient:
            return reject(Reason.CHAIN_LINK_BROKEN)
    if m.layers[0].signer not in params.parties():
        return reject(Reason.INNERMOST_NOT_PARTY)
    for k, layer in enumerate(m.layers):
        signed = envelope_signing_bytes(layer.hop_id, layer.recipient, m.inner_bytes(k))
        if not verify(layer.signer, signed, layer.signature):
            return reject(Reason.BAD_SIGNATURE)
    return VALID


# -- phase 2 ----------------------------------------------------------------


PlainPath = tuple[tuple[int, PublicKey], ...]


def plaintext_path(m: WatchMessage) -> PlainPath:
    path = m.__dict__.get("_plain")
    if path is None:
        path = m.__dict__["_plain"] = tuple((layer.hop_id, layer.recipient) for layer in reversed(m.layers))
    return path


@dataclass(frozen=True)
class PofSubmission:
    message: WatchMessage
    plaintext_path: PlainPath
    submitter: PublicKey
    submit_height: int
    signature: Signature | None = None

    @property
    def channel_id(self) -> str:
        return self.message.payload.channel_id

    @property
    def level(self) -> int:
        return self.message.depth

    def signing_bytes(self) -> bytes:
        return self._signing_bytes

    @cached_property
    def _signing_bytes(self) -> bytes:
        path = b"".join(encode_fields(hop, pk) for hop, pk in self.plaintext_path)
        return encode_fields(b"dcwc/pof", self.message.digest, path, self.submit_height)

    @cached_property
    def digest(self) -> bytes:
        return digest(encode_fields(self.signing_bytes(), self.submitter, self.signature))


def make_submission(keys: KeyPair, m: WatchMessage, height: int) -> PofSubmission:
    sub = PofSubmission(m, plaintext_path(m), keys.public, height)
    return PofSubmission(m, sub.plaintext_path, keys.public, height, sign(keys, sub.signing_bytes()))


def submission_signature_ok(sub: PofSubmission) -> bool:
    return verify(sub.submitter, sub.signing_bytes(), sub.signature)


@dataclass(frozen=True)
class ScheduledCommit:
    channel_id: str
    height: int
    message: WatchMessage


def on_settlement(
    state: WatchtowerState, settlement: SettlementTx, params: ChannelParams
) -> ScheduledCommit | None:
    """Schedule a proof d_m rounds after the settlement if the stored update is newer."""
    stored = state.held(settlement.channel_id)
    if stored is None or stored.seq <= settlement.seq:
        return None
    height = settlement.published_height + stored.depth * params.blocks_per_round_b
    return ScheduledCommit(settlement.channel_id, height, stored)


def build_submission(state: WatchtowerState, channel_id: str, height: int) -> PofSubmission:
    """Sign the stored message for submission together with its plaintext path."""
    return make_submission(state.identity, state.slots[channel_id], height)
