"""Lightning-style variant: invalidation transactions forwarded behind relative timelocks.

Transactions live in a tiny UTXO model. Every output is guarded by a script
over six opcodes; an input carries a relative timelock (blocks since its parent
confirmed) and a witness stack. Rounds are not scheduled explicitly: a
watchtower ``k`` hops from the beneficiary can only act after ``k`` stacked
timelocks have expired, which is what gives each sender first claim.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .channel import UpdateTx
from .crypto import SIGNATURE_LENGTH, KeyPair, PublicKey, Signature, digest, encode_fields, sign, verify
from .errors import InvalidParams, InvalidTimelock, RemainderTooSmall

OP_PUSH = 0x01
OP_IF = 0x63
OP_ELSE = 0x67
OP_ENDIF = 0x68
OP_CHECKSEQUENCEVERIFY = 0xB2
OP_CHECKSIG = 0xAC

OPCODE_NAMES = {
    OP_PUSH: "PUSH",
    OP_IF: "OP_IF",
    OP_ELSE: "OP_ELSE",
    OP_ENDIF: "OP_ENDIF",
    OP_CHECKSEQUENCEVERIFY: "OP_CHECKSEQUENCEVERIFY",
    OP_CHECKSIG: "OP_CHECKSIG",
}

IF_BRANCH = b"\x01"
ELSE_BRANCH = b""


@dataclass(frozen=True)
class Op:
    code: int
    data: bytes = b""

    def __str__(self) -> str:
        if self.code == OP_PUSH:
            return f"<{self.data.hex()}>"
        return OPCODE_NAMES[self.code]


@dataclass(frozen=True)
class Script:
    ops: tuple[Op, ...]

    def to_bytes(self) -> bytes:
        out = bytearray()
        for op in self.ops:
            out.append(op.code)
            if op.code == OP_PUSH:
                if len(op.data) > 255:
                    raise ValueError("push longer than 255 bytes")
                out.append(len(op.data))
                out += op.data
        return bytes(out)

    @classmethod
    def from_bytes(cls, raw: bytes) -> "Script":
        ops, i = [], 0
        while i < len(raw):
            code = raw[i]
            if code not in OPCODE_NAMES:
                raise ValueError(f"unknown opcode 0x{code:02x} at offset {i}")
            if code == OP_PUSH:
                if i + 1 >= len(raw):
                    raise ValueError("truncated push")
                n = raw[i + 1]
                data = raw[i + 2 : i + 2 + n]
                if len(data) != n:
                    raise ValueError("truncated push")
                ops.append(Op(OP_PUSH, data))
                i += 2 + n
            else:
                ops.append(Op(code))
                i += 1
        return cls(tuple(ops))

    def __str__(self) -> str:
        return " ".join(str(op) for op in self.ops)

    def balanced(self) -> bool:
        depth, seen_else = 0, []
        for op in self.ops:
            if op.code == OP_IF:
                depth += 1
                seen_else.append(False)
            elif op.code == OP_ELSE:
                if not depth or seen_else[-1]:
                    return False
                seen_else[-1] = True
            elif op.code == OP_ENDIF:
                if not depth:
                    return False
                depth -= 1
                seen_else.pop()
        return depth == 0


def _key_bytes(pk) -> bytes:
    return pk.data if isinstance(pk, PublicKey) else bytes(pk)


def compile_script(w_pk, b_pk, b: int) -> Script:
    """IF: ``b`` blocks CSV then W's signature. ELSE: B's signature at any age."""
    if b <= 0:
        raise InvalidTimelock(f"relative timelock must be positive, got {b}")
    return Script(
        (
            Op(OP_IF),
            Op(OP_PUSH, b.to_bytes(4, "big")),
            Op(OP_CHECKSEQUENCEVERIFY),
            Op(OP_PUSH, _key_bytes(w_pk)),
            Op(OP_CHECKSIG),
            Op(OP_ELSE),
            Op(OP_PUSH, _key_bytes(b_pk)),
            Op(OP_CHECKSIG),
            Op(OP_ENDIF),
        )
    )


def pay_to_key(pk) -> Script:
    return Script((Op(OP_PUSH, _key_bytes(pk)), Op(OP_CHECKSIG)))


def _scheme_for(sig: bytes) -> str | None:
    for name, length in SIGNATURE_LENGTH.items():
        if len(sig) == length:
            return name
    return None


def eval_script(script: Script, witness: Sequence[bytes], sighash: bytes, age: int) -> bool:
    """Run ``script`` over the witness stack; true iff it ends with a single true value.

    ``witness`` is pushed bottom-first, so ``(signature, selector)`` leaves the
    branch selector on top for OP_IF. The CSV argument is popped after the
    check. Anything malformed evaluates to false rather than raising.
    """
    try:
        stack = [bytes(x) for x in witness]
    except TypeError:
        return False
    exec_stack: list[bool] = []
    for op in script.ops:
        running = all(exec_stack)
        if op.code == OP_IF:
            if running:
                if not stack:
                    return False
                cond = stack.pop()
                exec_stack.append(any(cond))
            else:
                exec_stack.append(False)
            continue
        if op.code == OP_ELSE:
            if not exec_stack:
                return False
            exec_stack[-1] = not exec_stack[-1] and all(exec_stack[:-1])
            continue
        if op.code == OP_ENDIF:
            if not exec_stack:
                return False
            exec_stack.pop()
            continue
        if not running:
            continue
        if op.code == OP_PUSH:
            stack.append(op.data)
        elif op.code == OP_CHECKSEQUENCEVERIFY:
            if not stack:
                return False
            needed = int.from_bytes(stack.pop(), "big")
            if age < needed:
                return False
        elif op.code == OP_CHECKSIG:
            if len(stack) < 2:
                return False
            pk, sig = stack.pop(), stack.pop()
            scheme = _scheme_for(sig)
            ok = scheme is not None and verify(PublicKey(pk, scheme), sighash, Signature(sig))
            stack.append(b"\x01" if ok else b"")
        else:
            return False
    if exec_stack:
        return False
    return len(stack) == 1 and any(stack[0])


# -- transactions -----------------------------------------------------------


@dataclass(frozen=True)
class TxIn:
    prev_txid: bytes
    index: int
    sequence: int = 0  # relative timelock in blocks
    witness: tuple[bytes, ...] = ()

    @property
    def outpoint(self) -> tuple[bytes, int]:
        return (self.prev_txid, self.index)


@dataclass(frozen=True)
class TxOut:
    amount: int
    script: Script


@dataclass(frozen=True)
class StarTx:
    inputs: tuple[TxIn, ...]
    outputs: tuple[TxOut, ...]
    label: str = field(default="", compare=False)

    def __post_init__(self):
        if any(i.sequence < 0 for i in self.inputs):
            raise InvalidTimelock("negative relative timelock")
        if any(o.amount < 0 for o in self.outputs):
            raise InvalidParams("negative output amount")

    def sighash(self) -> bytes:
        """Digest over every input outpoint and timelock and every output, witnesses excluded."""
        ins = b"".join(encode_fields(i.prev_txid, i.index, i.sequence) for i in self.inputs)
        outs = b"".join(encode_fields(o.amount, o.script.to_bytes()) for o in self.outputs)
        return digest(encode_fields(b"dcwc*/tx", ins, outs))

    @property
    def txid(self) -> bytes:
        return self.sighash()

    def with_witness(self, index: int, witness: Sequence[bytes]) -> "StarTx":
        ins = list(self.inputs)
        ins[index] = TxIn(ins[index].prev_txid, ins[index].index, ins[index].sequence, tuple(witness))
        return StarTx(tuple(ins), self.outputs, self.label)

    @property
    def value_out(self) -> int:
        return sum(o.amount for o in self.outputs)


def _signed(tx: StarTx, plans: Sequence[tuple[KeyPair, bytes | None]]) -> StarTx:
    """Attach one signature per input; ``selector`` None means a pay-to-key spend."""
    sighash = tx.sighash()
    for k, (keys, selector) in enumerate(plans):
        sig = sign(keys, sighash).data
        tx = tx.with_witness(k, (sig,) if selector is None else (sig, selector))
    return tx


def settlement_tx(
    update: UpdateTx, publisher: PublicKey, beneficiary: PublicKey, timelock: int, publisher_is_a: bool = True
) -> StarTx:
    """A party's on-chain copy of ``update``: its own output waits ``timelock``, the other is immediate.

    The publisher's output carries the revocation branch: the counterparty may
    take it at once with the invalidation transaction.
    """
    if timelock <= 0:
        raise InvalidTimelock(f"settlement timelock must be positive, got {timelock}")
    own, other = (update.balance_a, update.balance_b) if publisher_is_a else (update.balance_b, update.balance_a)
    return StarTx(
        (TxIn(digest(b"dcwc*/funding/" + update.channel_id.encode()), 0),),
        (
            TxOut(own, compile_script(publisher, beneficiary, timelock)),
            TxOut(other, pay_to_key(beneficiary)),
        ),
        label=f"settlement seq={update.seq}",
    )


@dataclass(frozen=True)
class InvalidationTx:
    tx: StarTx
    revoked_seq: int
    channel_id: str
    settlement_txid: bytes
    beneficiary: PublicKey

    @property
    def open_amount(self) -> int:
        return self.tx.outputs[1].amount

    @property
    def txid(self) -> bytes:
        return self.tx.txid


def build_invalidation(
    update: UpdateTx,
    publisher: PublicKey,
    beneficiary: KeyPair,
    remainder: int,
    timelock: int,
    publisher_is_a: bool = True,
) -> InvalidationTx:
    """Spend both outputs of the revoked state: most to the beneficiary, ``remainder`` left open.

    The open output is guarded by the beneficiary's key; forwarding it to a
    watchtower means signing a child that re-locks part of it to that watchtower.
    """
    settle = settlement_tx(update, publisher, beneficiary.public, timelock, publisher_is_a)
    total = settle.value_out
    if not 0 <= remainder <= total:
        raise InvalidParams(f"remainder {remainder} outside 0..{total}")
    tx = StarTx(
        (TxIn(settle.txid, 0), TxIn(settle.txid, 1)),
        (TxOut(total - remainder, pay_to_key(beneficiary.public)), TxOut(remainder, pay_to_key(beneficiary.public))),
        label=f"invalidation seq={update.seq}",
    )
    tx = _signed(tx, [(beneficiary, ELSE_BRANCH), (beneficiary, None)])
    return InvalidationTx(tx, update.seq, update.channel_id, settle.txid, beneficiary.public)


@dataclass(frozen=True)
class StarMessage:
    """What a watchtower holds: the invalidation tx and the forwarded chain ending at it."""

    invalidation: InvalidationTx
    chain: tuple[StarTx, ...]
    holder: PublicKey
    senders: tuple[PublicKey, ...]  # senders[k] signed chain[k]; senders[0] is the beneficiary
    timelock_b: int

    @property
    def hops(self) -> int:
        return len(self.chain)

    @property
    def open_outpoint(self) -> tuple[bytes, int]:
        """Output the holder would forward from or claim (the scripted remainder)."""
        if not self.chain:
            return (self.invalidation.txid, 1)
        return (self.chain[-1].txid, 1)

    @property
    def open_amount(self) -> int:
        if not self.chain:
            return self.invalidation.open_amount
        return self.chain[-1].outputs[1].amount


def disclose_star(invalidation: InvalidationTx, beneficiary: KeyPair) -> StarMessage:
    """The beneficiary's own holding: the invalidation with nothing forwarded."""
    return StarMessage(invalidation, (), beneficiary.public, (), 0)


def forward_with_claim(
    message: StarMessage,
    sender: KeyPair,
    recipient: PublicKey,
    claim: int,
    b: int,
    min_remainder: int = 1,
) -> StarMessage:
    """Claim ``claim`` for the sender, re-lock the rest to ``recipient`` behind ``b`` blocks.

    The child spends the sender's open output. When that output is itself
    timelocked to the sender, the child inherits the sender's wait on its input.
    """
    if b <= 0:
        raise InvalidTimelock(f"relative timelock must be positive, got {b}")
    if sender.public != message.holder:
        raise InvalidParams("only the holder can forward its message")
    open_amount = message.open_amount
    if claim < 0 or open_amount - claim < max(min_remainder, 0) or open_amount - claim <= 0:
        raise RemainderTooSmall(f"open output {open_amount} cannot fund claim {claim} plus remainder {min_remainder}")
    txid, index = message.open_outpoint
    sequence = message.timelock_b if message.chain else 0
    tx = StarTx(
        (TxIn(txid, index, sequence),),
        (TxOut(claim, pay_to_key(sender.public)), TxOut(open_amount - claim, compile_script(recipient, sender.public, b))),
        label=f"forward {sender.public.short()}->{recipient.short()}",
    )
    tx = _signed(tx, [(sender, IF_BRANCH if message.chain else None)])
    return StarMessage(
        message.invalidation, message.chain + (tx,), recipient, message.senders + (sender.public,), b
    )


def claim_tx(message: StarMessage, holder: KeyPair) -> StarTx:
    """The holder's direct spend of its open output to itself."""
    txid, index = message.open_outpoint
    sequence = message.timelock_b if message.chain else 0
    tx = StarTx(
        (TxIn(txid, index, sequence),),
        (TxOut(message.open_amount, pay_to_key(holder.public)),),
        label=f"claim {holder.public.short()}",
    )
    return _signed(tx, [(holder, IF_BRANCH if message.chain else None)])


def sender_sweep(parent: StarTx, index: int, keys: KeyPair) -> StarTx:
    """Take a Fig.-3 output back through its ELSE branch, no wait."""
    out = parent.outputs[index]
    tx = StarTx((TxIn(parent.txid, index, 0),), (TxOut(out.amount, pay_to_key(keys.public)),), label="sweep")
    return _signed(tx, [(keys, ELSE_BRANCH)])


# -- watch state ------------------------------------------------------------


@dataclass
class StarWatchState:
    """One held message per revoked update, per channel."""

    identity: PublicKey
    held: dict[str, list[StarMessage]] = field(default_factory=dict)

    def store(self, message: StarMessage) -> bool:
        if message.holder != self.identity:
            return False
        slot = self.held.setdefault(message.invalidation.channel_id, [])
        for i, old in enumerate(slot):
            if old.invalidation.revoked_seq == message.invalidation.revoked_seq:
                if message.hops < old.hops:
                    slot[i] = message
                    return True
                return False
        slot.append(message)
        return True

    def for_settlement(self, channel_id: str, seq: int) -> StarMessage | None:
        for m in self.held.get(channel_id, ()):
            if m.invalidation.revoked_seq == seq:
                return m
        return None

    def size(self, channel_id: str) -> int:
        return len(self.held.get(channel_id, ()))


# -- ledger -----------------------------------------------------------------


@dataclass
class StarLedger:
    """UTXO set over a linear chain. Children may confirm in their parent's block (age 0)."""

    utxos: dict[tuple[bytes, int], tuple[TxOut, int]] = field(default_factory=dict)
    confirmed: dict[bytes, tuple[StarTx, int]] = field(default_factory=dict)
    height: int = 0
    spent_by: dict[tuple[bytes, int], bytes] = field(default_factory=dict)

    def place(self, tx: StarTx, height: int | None = None) -> None:
        """Insert ``tx`` without validation (channel-protocol transactions)."""
        h = self.height if height is None else height
        self.confirmed[tx.txid] = (tx, h)
        for i, out in enumerate(tx.outputs):
            self.utxos[(tx.txid, i)] = (out, h)

    def check(self, tx: StarTx, height: int | None = None) -> str | None:
        """None when ``tx`` is valid at ``height``, otherwise the reason."""
        h = self.height if height is None else height
        if tx.txid in self.confirmed:
            return "already confirmed"
        total_in = 0
        sighash = tx.sighash()
        for inp in tx.inputs:
            found = self.utxos.get(inp.outpoint)
            if found is None:
                return "missing or spent input"
            out, conf = found
            age = h - conf
            if age < inp.sequence:
                return "relative timelock not met"
            if not eval_script(out.script, inp.witness, sighash, age):
                return "script failed"
            total_in += out.amount
        if total_in < tx.value_out:
            return "outputs exceed inputs"
        return None

    def accept(self, tx: StarTx, height: int | None = None) -> bool:
        if self.check(tx, height) is not None:
            return False
        h = self.height if height is None else height
        for inp in tx.inputs:
            del self.utxos[inp.outpoint]
            self.spent_by[inp.outpoint] = tx.txid
        self.place(tx, h)
        return True

    def balances(self) -> dict[bytes, int]:
        """Pay-to-key UTXOs by key; scripted outputs under the key ``b'script'``."""
        out: dict[bytes, int] = {}
        for o, _ in self.utxos.values():
            ops = o.script.ops
            key = ops[0].data if len(ops) == 2 and ops[1].code == OP_CHECKSIG else b"script"
            out[key] = out.get(key, 0) + o.amount
        return out


def earliest_age(message: StarMessage) -> int:
    """Blocks after the invalidation confirms before the holder's own claim is valid."""
    if not message.chain:
        return 0
    return sum(tx.inputs[0].sequence for tx in message.chain) + message.timelock_b


@dataclass
class StarOutcome:
    invalidated: bool
    winner: PublicKey | None
    payouts: dict[PublicKey, int]
    events: list[tuple[int, str, str]]
    fees: int = 0
    unclaimed: int = 0
    ledger: StarLedger | None = None


def settle_star(
    update: UpdateTx,
    publisher: KeyPair,
    beneficiary: KeyPair,
    holders: dict[PublicKey, StarMessage],
    keys: dict[PublicKey, KeyPair],
    online: Iterable[PublicKey],
    timelock: int,
    settle_height: int = 1,
    publisher_is_a: bool = True,
) -> StarOutcome:
    """Play out a fraudulent settlement of ``update`` against online holders, block by block.

    Each block, every online actor (ordered by how many hops it sits from the
    beneficiary) broadcasts what it can: the invalidation, the pre-signed
    forwards leading to its own output, then its claim once the timelock
    allows. Senders sweep Fig.-3 outputs back through the ELSE branch as soon
    as they appear. Conflicting spends go to the first broadcaster.
    """
    online = set(online)
    ledger = StarLedger()
    settle = settlement_tx(update, publisher.public, beneficiary.public, timelock, publisher_is_a)
    ledger.place(settle, settle_height)
    events: list[tuple[int, str, str]] = [(settle_height, publisher.public.short(), "settlement")]
    order = sorted(holders.items(), key=lambda kv: (kv[1].hops, kv[0]))
    longest = max((earliest_age(m) for m in holders.values()), default=0)
    end = settle_height + timelock + longest + 1
    winner: PublicKey | None = None
    for h in range(settle_height, end + 1):
        ledger.height = h
        progressed = True
        while progressed:
            progressed = False
            for pk, msg in order:
                if pk not in online:
                    continue
                me = keys[pk]
                txs = [msg.invalidation.tx, *msg.chain]
                for tx in txs:
                    if tx.txid not in ledger.confirmed and ledger.accept(tx, h):
                        events.append((h, pk.short(), tx.label))
                        progressed = True
                    if tx.txid not in ledger.confirmed:
                        break
                else:
                    claim = claim_tx(msg, me)
                    if ledger.accept(claim, h):
                        events.append((h, pk.short(), claim.label))
                        winner = winner or pk
                        progressed = True
                for parent, index in _sent_outputs(ledger, pk):
                    sweep = sender_sweep(parent, index, me)
                    if ledger.accept(sweep, h):
                        events.append((h, pk.short(), "sweep"))
                        progressed = True
        if publisher.public in online and (settle.txid, 0) in ledger.utxos:
            own = settle.outputs[0].amount
            tx = StarTx((TxIn(settle.txid, 0, timelock),), (TxOut(own, pay_to_key(publisher.public)),), "cheater claim")
            tx = _signed(tx, [(publisher, IF_BRANCH)])
            if ledger.accept(tx, h):
                events.append((h, publisher.public.short(), tx.label))
    invalidations = {m.invalidation.txid for m in holders.values()}
    invalidated = ledger.spent_by.get((settle.txid, 0)) in invalidations
    known = {k.public.data: k.public for k in keys.values()}
    known[publisher.public.data] = publisher.public
    known[beneficiary.public.data] = beneficiary.public
    payouts: dict[PublicKey, int] = {}
    unclaimed = 0
    for raw, amount in ledger.balances().items():
        if raw in known:
            payouts[known[raw]] = payouts.get(known[raw], 0) + amount
        else:
            unclaimed += amount
    fees = settle.value_out - sum(payouts.values()) - unclaimed
    return StarOutcome(invalidated, winner, payouts, events, fees, unclaimed, ledger)


def _sent_outputs(ledger: StarLedger, pk: PublicKey) -> list[tuple[StarTx, int]]:
    """Unspent Fig.-3 outputs whose ELSE key is ``pk``."""
    found = []
    for (txid, index), (out, _) in ledger.utxos.items():
        ops = out.script.ops
        if len(ops) == 9 and ops[6].code == OP_PUSH and ops[6].data == pk.data and txid in ledger.confirmed:
            found.append((ledger.confirmed[txid][0], index))
    return found
