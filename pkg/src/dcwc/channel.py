"""Two-party channel objects and the nested watch-message envelope."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import cached_property

from .crypto import KeyPair, PublicKey, Signature, digest, encode_fields, sign, verify
from .errors import InsufficientFunds, InvalidParams

UPDATE_TAG = b"dcwc/update"
ENVELOPE_TAG = b"dcwc/envelope"


@dataclass(frozen=True)
class ChannelParams:
    channel_id: str
    party_a: PublicKey
    party_b: PublicKey
    fund_a: int
    fund_b: int
    rho: int
    fanout_n: int
    rounds_l: int
    blocks_per_round_b: int
    settlement_timelock_t: int
    pof_fee: int = 0

    @property
    def total(self) -> int:
        return self.fund_a + self.fund_b

    def parties(self) -> tuple[PublicKey, PublicKey]:
        return (self.party_a, self.party_b)

    def counterparty(self, pk: PublicKey) -> PublicKey:
        if pk == self.party_a:
            return self.party_b
        if pk == self.party_b:
            return self.party_a
        raise ValueError(f"{pk!r} is not a party of channel {self.channel_id}")

    def funding_digest(self) -> bytes:
        """Commitment to every field of the opening transaction."""
        return digest(encode_fields(b"dcwc/funding", self.channel_id, self.party_a, self.party_b, self.fund_a,
                                    self.fund_b, self.rho, self.fanout_n, self.rounds_l, self.blocks_per_round_b,
                                    self.settlement_timelock_t, self.pof_fee))

    def validate(self) -> None:
        for name in ("fund_a", "fund_b", "rho", "pof_fee"):
            if getattr(self, name) < 0:
                raise InvalidParams(f"{name} must be non-negative")
        if self.total <= 0:
            raise InvalidParams("channel must hold a positive total")
        for name in ("fanout_n", "rounds_l", "blocks_per_round_b", "settlement_timelock_t"):
            if getattr(self, name) < 1:
                raise InvalidParams(f"{name} must be positive")
        if self.rounds_l * self.blocks_per_round_b >= self.settlement_timelock_t:
            raise InvalidParams(
                f"commit phase l*b = {self.rounds_l * self.blocks_per_round_b} "
                f"must end before the settlement timelock t = {self.settlement_timelock_t}"
            )
        if self.party_a == self.party_b:
            raise InvalidParams("channel parties must differ")


@dataclass(frozen=True)
class UpdateTx:
    channel_id: str
    seq: int
    balance_a: int
    balance_b: int
    sig_a: Signature | None = None
    sig_b: Signature | None = None

    @cached_property
    def _body(self) -> bytes:
        return encode_fields(UPDATE_TAG, self.channel_id, self.seq, self.balance_a, self.balance_b)

    @cached_property
    def _full(self) -> bytes:
        return encode_fields(self._body, self.sig_a, self.sig_b)

    def body(self) -> bytes:
        return self._body

    def to_bytes(self) -> bytes:
        return self._full

    def signed(self, keys_a: KeyPair, keys_b: KeyPair) -> "UpdateTx":
        body = self.body()
        return replace(self, sig_a=sign(keys_a, body), sig_b=sign(keys_b, body))


def update_is_valid(update: UpdateTx, params: ChannelParams) -> bool:
    """Generated according to the channel protocol: right channel, conserved, dually signed."""
    if update.channel_id != params.channel_id or update.seq < 0:
        return False
    if update.balance_a < 0 or update.balance_b < 0:
        return False
    if update.balance_a + update.balance_b != params.total:
        return False
    body = update.body()
    return verify(params.party_a, body, update.sig_a) and verify(params.party_b, body, update.sig_b)


def new_channel(params: ChannelParams, keys_a: KeyPair, keys_b: KeyPair) -> tuple[ChannelParams, UpdateTx]:
    params.validate()
    if keys_a.public != params.party_a or keys_b.public != params.party_b:
        raise InvalidParams("signing keys do not match the channel parties")
    first = UpdateTx(params.channel_id, 0, params.fund_a, params.fund_b).signed(keys_a, keys_b)
    return params, first


def make_update(
    params: ChannelParams, prev: UpdateTx, delta: int, keys_a: KeyPair, keys_b: KeyPair
) -> UpdateTx:
    """Next state after moving ``delta`` coins from A to B (negative moves B to A)."""
    balance_a = prev.balance_a - delta
    balance_b = prev.balance_b + delta
    if balance_a < 0 or balance_b < 0:
        payer = "A" if delta > 0 else "B"
        raise InsufficientFunds(f"party {payer} cannot pay {abs(delta)} from ({prev.balance_a}, {prev.balance_b})")
    return UpdateTx(params.channel_id, prev.seq + 1, balance_a, balance_b).signed(keys_a, keys_b)


@dataclass(frozen=True)
class SettlementTx:
    update: UpdateTx
    publisher: PublicKey
    published_height: int = -1

    @property
    def seq(self) -> int:
        return self.update.seq

    @property
    def channel_id(self) -> str:
        return self.update.channel_id

    @cached_property
    def _digest(self) -> bytes:
        return digest(encode_fields(b"dcwc/settle", self.update.to_bytes(), self.publisher))

    def digest(self) -> bytes:
        return self._digest


@dataclass(frozen=True)
class Envelope:
    hop_id: int
    recipient: PublicKey
    signer: PublicKey
    signature: Signature


def envelope_signing_bytes(hop_id: int, recipient: PublicKey, inner: bytes) -> bytes:
    return encode_fields(ENVELOPE_TAG, hop_id, recipient, inner)


@dataclass(frozen=True)
class WatchMessage:
    """An update transaction wrapped in one signed envelope per hop, innermost first."""

    payload: UpdateTx
    layers: tuple[Envelope, ...] = ()

    @property
    def depth(self) -> int:
        return len(self.layers)

    @property
    def outer(self) -> Envelope:
        return self.layers[-1]

    @property
    def holder(self) -> PublicKey:
        return self.layers[-1].recipient

    @cached_property
    def id_path(self) -> tuple[int, ...]:
        return tuple(layer.hop_id for layer in self.layers)

    @property
    def seq(self) -> int:
        return self.payload.seq

    @cached_property
    def _layer_bytes(self) -> tuple[bytes, ...]:
        out = [self.payload.to_bytes()]
        for layer in self.layers:
            out.append(encode_fields(layer.hop_id, layer.recipient, layer.signer, layer.signature, out[-1]))
        return tuple(out)

    def inner_bytes(self, k: int) -> bytes:
        """Bytes wrapped by layer ``k`` (0 = payload)."""
        return self._layer_bytes[k]

    def to_bytes(self) -> bytes:
        return self._layer_bytes[-1]

    @cached_property
    def digest(self) -> bytes:
        return digest(self.to_bytes())

    def wrap(self, keys: KeyPair, hop_id: int, recipient: PublicKey) -> "WatchMessage":
        sig = sign(keys, envelope_signing_bytes(hop_id, recipient, self.to_bytes()))
        env = Envelope(hop_id, recipient, keys.public, sig)
        return WatchMessage(self.payload, self.layers + (env,))

    def signers(self) -> tuple[PublicKey, ...]:
        return tuple(layer.signer for layer in self.layers)

    def recipients(self) -> tuple[PublicKey, ...]:
        return tuple(layer.recipient for layer in self.layers)


def _better(candidate: WatchMessage, current: WatchMessage | None) -> bool:
    if current is None:
        return True
    if candidate.seq != current.seq:
        return candidate.seq > current.seq
    return candidate.depth < current.depth


@dataclass
class WatchtowerState:
    """One stored message per watched channel, the freshest seen."""

    identity: KeyPair
    slots: dict[str, WatchMessage] = field(default_factory=dict)

    @property
    def public(self) -> PublicKey:
        return self.identity.public

    def held(self, channel_id: str) -> WatchMessage | None:
        return self.slots.get(channel_id)


def store_best(state: WatchtowerState, m: WatchMessage, params: ChannelParams) -> WatchtowerState:
    """Keep ``m`` if it beats the stored message (higher seq, then smaller depth).

    Malformed messages and messages addressed to someone else are ignored.
    """
    from .protocol import verify_envelope_chain

    if not m.layers or m.holder != state.public:
        return state
    if not verify_envelope_chain(m, params):
        return state
    if _better(m, state.slots.get(params.channel_id)):
        state.slots[params.channel_id] = m
    return state
