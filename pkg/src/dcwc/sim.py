"""A complete DCWC world: parties, watchtowers, Phase 1 fan-out and Phase 2 trials.

Phase 1 runs once per world with real signatures. Each Phase 2 trial replays
the commit schedule of the surviving watchtowers against a fresh
:class:`~dcwc.chain.SimChain`, so a trial exercises the same validator that a
single scenario run does.
"""
from __future__ import annotations

import enum
import hashlib
from collections import deque
from dataclasses import dataclass, field

from .chain import SimChain, _base_checks, finalize_channel
from .channel import (
    ChannelParams,
    SettlementTx,
    UpdateTx,
    WatchMessage,
    WatchtowerState,
    make_update,
    new_channel,
    store_best,
)
from .crypto import KeyPair, PublicKey, keygen
from .protocol import PofSubmission, Topology, cascade, disclose, make_submission, verify_envelope_chain


def derive_seed(*parts) -> int:
    text = "/".join(str(p) for p in parts).encode()
    return int.from_bytes(hashlib.sha256(text).digest()[:8], "big")


class Kind(str, enum.Enum):
    HONEST = "Honest"
    FORGE_EXTRA = "ForgeExtraMessages"
    DUPLICATE_ID = "DuplicateId"
    EARLY_COMMIT = "EarlyCommit"
    LATE_COMMIT = "LateCommit"
    WITHHOLD_FORWARD = "WithholdForward"
    STORE_STALE = "StoreStaleProof"
    SHORTEN_DEPTH = "ShortenDepthAttempt"


@dataclass(frozen=True)
class StrategyProfile:
    kind: Kind = Kind.HONEST
    amount: int = 0

    @classmethod
    def parse(cls, text: str) -> "StrategyProfile":
        """``"EarlyCommit(1)"`` or ``"Honest"``."""
        text = text.strip()
        if "(" in text:
            name, arg = text[:-1].split("(", 1)
            return cls(Kind(name), int(arg))
        kind = Kind(text)
        default = {Kind.FORGE_EXTRA: 1, Kind.DUPLICATE_ID: 1, Kind.EARLY_COMMIT: 1, Kind.LATE_COMMIT: 1}
        return cls(kind, default.get(kind, 0))

    def __str__(self) -> str:
        if self.kind in (Kind.FORGE_EXTRA, Kind.DUPLICATE_ID, Kind.EARLY_COMMIT, Kind.LATE_COMMIT):
            return f"{self.kind.value}({self.amount})"
        return self.kind.value


HONEST = StrategyProfile()

DEFAULT_STRATEGIES = (
    StrategyProfile(Kind.FORGE_EXTRA, 1),
    StrategyProfile(Kind.DUPLICATE_ID, 1),
    StrategyProfile(Kind.EARLY_COMMIT, 1),
    StrategyProfile(Kind.LATE_COMMIT, 1),
    StrategyProfile(Kind.WITHHOLD_FORWARD),
    StrategyProfile(Kind.STORE_STALE),
    StrategyProfile(Kind.SHORTEN_DEPTH),
)


@dataclass(frozen=True)
class WorldSpec:
    fanout_n: int = 2
    rounds_l: int = 2
    blocks_per_round_b: int = 1
    settlement_timelock_t: int = 10
    fund_a: int = 10
    fund_b: int = 10
    rho: int = 60
    pof_fee: int = 0
    watchtowers: int | None = None  # default: one per tree position
    identity_reuse: bool = False
    deltas: tuple[int, ...] = (3,)
    discloser: str = "payee"  # payee | a | b | both
    cheater: str = "a"
    fraud_seq: int = 0
    settle_height: int = 1
    seed: int = 0
    channel_id: str = "c0"

    @property
    def tree_size(self) -> int:
        return sum(self.fanout_n**d for d in range(1, self.rounds_l + 1))

    @property
    def n_watchtowers(self) -> int:
        return self.watchtowers if self.watchtowers is not None else self.tree_size


@dataclass(frozen=True)
class PlannedSubmission:
    actor: PublicKey
    round: int
    submission: PofSubmission


@dataclass
class TraceSink:
    events: list[dict] = field(default_factory=list)

    def emit(self, height: int, actor: str, kind: str, digest: bytes | None, note: str = "") -> None:
        self.events.append(
            {
                "index": len(self.events),
                "height": height,
                "actor": actor,
                "kind": kind,
                "digest": digest.hex() if digest else None,
                "note": note,
            }
        )


class DcwcWorld:
    """One channel, its watchtower population and everyone's strategy."""

    def __init__(self, spec: WorldSpec, strategies: dict[PublicKey, StrategyProfile] | None = None):
        self.spec = spec
        self.keys_a = keygen(derive_seed(spec.seed, "party", "a"))
        self.keys_b = keygen(derive_seed(spec.seed, "party", "b"))
        self.watchtowers = [keygen(derive_seed(spec.seed, "watchtower", i)) for i in range(spec.n_watchtowers)]
        self.miner = keygen(derive_seed(spec.seed, "miner")).public
        self.names = {self.keys_a.public: "A", self.keys_b.public: "B", self.miner: "miner"}
        self.names.update({w.public: f"W{i}" for i, w in enumerate(self.watchtowers)})
        self.params = ChannelParams(
            spec.channel_id,
            self.keys_a.public,
            self.keys_b.public,
            spec.fund_a,
            spec.fund_b,
            spec.rho,
            spec.fanout_n,
            spec.rounds_l,
            spec.blocks_per_round_b,
            spec.settlement_timelock_t,
            spec.pof_fee,
        )
        self.topology = Topology(self.watchtowers, spec.seed, spec.fanout_n, spec.rounds_l, spec.identity_reuse)
        self.strategies = dict(strategies or {})
        self.setup_trace = TraceSink()
        self.updates = self._negotiate()
        self.received: dict[PublicKey, list[WatchMessage]] = {w.public: [] for w in self.watchtowers}
        self.states = {w.public: WatchtowerState(w) for w in self.watchtowers}
        self.degenerate = False
        for update, discloser in self._disclosures():
            self._phase1(update, discloser)
        self._plans: dict[int, list[PlannedSubmission]] = {}
        self._tables: dict[int, EnumerationTable] = {}

    def name(self, pk: PublicKey) -> str:
        return self.names.get(pk, pk.short())

    def strategy(self, pk: PublicKey) -> StrategyProfile:
        return self.strategies.get(pk, HONEST)

    # -- phase 0 / 1 ----------------------------------------------------

    def _negotiate(self) -> list[UpdateTx]:
        _, first = new_channel(self.params, self.keys_a, self.keys_b)
        updates = [first]
        self.setup_trace.emit(0, "A", "fund", None, f"fund_a={self.spec.fund_a} fund_b={self.spec.fund_b}")
        for delta in self.spec.deltas:
            nxt = make_update(self.params, updates[-1], delta, self.keys_a, self.keys_b)
            updates.append(nxt)
            self.setup_trace.emit(0, "A", "update", None, f"seq={nxt.seq} balances=({nxt.balance_a},{nxt.balance_b})")
        return updates

    def _disclosures(self):
        for prev, update in zip(self.updates, self.updates[1:]):
            delta = prev.balance_a - update.balance_a
            policy = self.spec.discloser
            if policy == "both":
                yield update, self.keys_a
                yield update, self.keys_b
            elif policy == "a":
                yield update, self.keys_a
            elif policy == "b":
                yield update, self.keys_b
            else:
                yield update, (self.keys_a if delta < 0 else self.keys_b)

    def _extra_ids(self, pk: PublicKey) -> tuple[int, ...]:
        s = self.strategy(pk)
        n = self.params.fanout_n
        if s.kind is Kind.FORGE_EXTRA:
            return tuple(range(n + 1, n + 1 + s.amount))
        if s.kind is Kind.DUPLICATE_ID:
            return tuple((i % n) + 1 for i in range(s.amount))
        return ()

    def _phase1(self, update: UpdateTx, discloser: KeyPair) -> None:
        sink = self.setup_trace
        first = disclose(discloser, update, self.topology, self.params)
        self.degenerate |= first.degenerate
        sink.emit(0, self.name(discloser.public), "disclose", None, f"seq={update.seq} fanout={len(first)}")
        queue = deque(first)
        while queue:
            m = queue.popleft()
            holder = self.topology.keys_of(m.holder)
            if holder is None:
                continue
            self.received[holder.public].append(m)
            store_best(self.states[holder.public], m, self.params)
            sink.emit(0, self.name(holder.public), "store", m.digest, f"seq={m.seq} depth={m.depth} path={m.id_path}")
            if m.depth >= self.params.rounds_l or not verify_envelope_chain(m, self.params):
                continue
            if self.strategy(holder.public).kind is Kind.WITHHOLD_FORWARD:
                sink.emit(0, self.name(holder.public), "withhold", m.digest)
                continue
            out = cascade(holder, m, self.topology, self.params, self._extra_ids(holder.public))
            self.degenerate |= out.degenerate
            if out:
                sink.emit(0, self.name(holder.public), "cascade", m.digest, f"fanout={len(out)} depth={m.depth + 1}")
            queue.extend(out)

    # -- phase 2 --------------------------------------------------------

    def stored_message(self, pk: PublicKey) -> WatchMessage | None:
        best = self.states[pk].held(self.params.channel_id)
        if best is None or self.strategy(pk).kind is not Kind.STORE_STALE:
            return best
        stale = [
            m
            for m in self.received[pk]
            if m.seq < best.seq and verify_envelope_chain(m, self.params)
        ]
        if not stale:
            return best
        top = max(m.seq for m in stale)
        return min((m for m in stale if m.seq == top), key=lambda m: m.depth)

    def held_messages(self) -> dict[PublicKey, WatchMessage]:
        out = {}
        for w in self.watchtowers:
            m = self.stored_message(w.public)
            if m is not None:
                out[w.public] = m
        return out

    def settlement(self) -> SettlementTx:
        cheater = self.keys_a if self.spec.cheater == "a" else self.keys_b
        return SettlementTx(self.updates[self.spec.fraud_seq], cheater.public)

    @property
    def settle_height(self) -> int:
        return self.spec.settle_height

    def plan(self) -> list[PlannedSubmission]:
        """What every watchtower would submit, if alive, against the scripted fraud."""
        fraud_seq = self.spec.fraud_seq
        if fraud_seq in self._plans:
            return self._plans[fraud_seq]
        b = self.params.blocks_per_round_b
        plans: list[PlannedSubmission] = []
        for w in self.watchtowers:
            m = self.stored_message(w.public)
            if m is None or m.seq <= fraud_seq:
                continue
            s = self.strategy(w.public)
            rounds = [m.depth]
            messages = [m]
            if s.kind is Kind.EARLY_COMMIT:
                rounds = [max(m.depth - s.amount, 0)]
            elif s.kind is Kind.LATE_COMMIT:
                rounds = [m.depth + s.amount]
            elif s.kind is Kind.SHORTEN_DEPTH and m.depth >= 2:
                forged = WatchMessage(m.payload, m.layers[:-1])
                rounds = [m.depth - 1, m.depth]
                messages = [forged, m]
            for r, msg in zip(rounds, messages):
                sub = make_submission(w, msg, self.settle_height + r * b)
                plans.append(PlannedSubmission(w.public, r, sub))
        self._plans[fraud_seq] = plans
        return plans

    def trial(self, alive: set[PublicKey], seed, sink: TraceSink | None = None):
        """Replay Phase 2 with only ``alive`` watchtowers online; returns the channel outcome."""
        params = self.params
        chain = SimChain(seed, miner=self.miner)
        chain.fund(params)
        chain.mine()
        if sink:
            sink.emit(0, "A", "funding-mined", None, params.channel_id)
        while chain.height < self.settle_height:
            chain.mine()
        chain.publish_settlement(self.settlement())
        chain.mine()
        settlement = chain.settlements[params.channel_id]
        if sink:
            sink.emit(settlement.published_height, self.name(settlement.publisher), "settle", settlement.digest(),
                      f"seq={settlement.seq}")
        schedule: dict[int, list[PlannedSubmission]] = {}
        for p in self.plan():
            if p.actor in alive:
                schedule.setdefault(p.submission.submit_height, []).append(p)
                if sink:
                    sink.emit(settlement.published_height, self.name(p.actor), "schedule", p.submission.digest,
                              f"round={p.round} height={p.submission.submit_height}")
        last = settlement.published_height + (params.rounds_l + 1) * params.blocks_per_round_b
        while chain.height < last and not chain.has_proof(params.channel_id):
            h = chain.height
            for p in schedule.get(h, ()):
                if chain.has_proof(params.channel_id):
                    break
                chain.submit(p.submission)
                if sink:
                    sink.emit(h, self.name(p.actor), "submit", p.submission.digest,
                              f"level={p.submission.level} path={p.submission.message.id_path}")
            block = chain.mine()
            if sink:
                for dig, reason in block.rejected:
                    sink.emit(h, "miner", "reject", dig, reason.value)
                for e in block.entries:
                    if e.kind == "pof":
                        sink.emit(h, "miner", "include", e.digest, f"submitter={self.name(e.item.submitter)}")
        outcome = finalize_channel(chain, params)
        if sink:
            for rec in outcome.payouts:
                sink.emit(chain.height, self.name(rec.recipient), "payout", None, f"{rec.role} {rec.amount}")
            sink.emit(chain.height, "chain", "finalize", None,
                      f"fraud_proven={outcome.fraud_proven} round={outcome.proof_round}")
        return outcome, chain

    # -- exact tables ---------------------------------------------------

    def enumeration_table(self):
        """Statically valid submissions as flat arrays for the failure-enumeration kernel.

        Validity is decided by the miner's own checks (all but the duplicate
        filter, which depends on who is alive) at the planned height.
        """
        cached = self._tables.get(self.spec.fraud_seq)
        if cached is not None:
            return cached
        params = self.params
        probe = SimChain(0, miner=self.miner)
        probe.fund(params)
        probe.mine()
        while probe.height < self.settle_height:
            probe.mine()
        probe.publish_settlement(self.settlement())
        probe.mine()
        index = {w.public: i for i, w in enumerate(self.watchtowers)}
        groups: dict[tuple, int] = {}
        holder, rnd, group, ptr, signers, share = [], [], [], [0], [], []
        entries: list[PlannedSubmission] = []
        seen = set()
        for p in self.plan():
            sub = p.submission
            if sub.digest in seen or p.round > params.rounds_l:
                continue
            if not _base_checks(sub, probe, params, sub.submit_height):
                continue
            seen.add(sub.digest)
            path = sub.message.recipients()
            amount = (params.rho - params.pof_fee) // len(path) if params.pof_fee < params.rho else 0
            holder.append(index[p.actor])
            rnd.append(p.round)
            group.append(groups.setdefault((sub.level, sub.message.seq, sub.message.id_path), len(groups)))
            signers.extend(index[w] for w in path)
            ptr.append(len(signers))
            share.append(float(amount))
            entries.append(p)
        table = EnumerationTable(len(self.watchtowers), params.rounds_l, holder, rnd, group, ptr, signers, share, entries)
        self._tables[self.spec.fraud_seq] = table
        return table


@dataclass
class EnumerationTable:
    n_actors: int
    max_round: int
    holder: list[int]
    round: list[int]
    group: list[int]
    signer_ptr: list[int]
    signer_idx: list[int]
    share: list[float]
    entries: list[PlannedSubmission]
