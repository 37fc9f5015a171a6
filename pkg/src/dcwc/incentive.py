"""Inclusion probabilities, expected watchtower payoffs and the deviation harness."""
from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from . import kernels
from .crypto import PublicKey
from .errors import InvalidParams
from .sim import HONEST, DcwcWorld, Kind, StrategyProfile, WorldSpec, derive_seed

EXACT_LIMIT = 20  # at most 2**20 failure configurations in exact mode
ALPHA_GRID = tuple(round(0.1 * i, 1) for i in range(10))


@dataclass(frozen=True)
class FailureModel:
    alpha: float

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise InvalidParams(f"failure probability {self.alpha} outside [0, 1]")

    def alive(self, rng: random.Random) -> bool:
        return rng.random() >= self.alpha


@dataclass(frozen=True)
class LayerSizes:
    """Number of valid messages at each depth 1..l."""

    sizes: tuple[int, ...]

    @classmethod
    def honest(cls, fanout_n: int, rounds_l: int) -> "LayerSizes":
        return cls(tuple(fanout_n**i for i in range(1, rounds_l + 1)))

    def __len__(self) -> int:
        return len(self.sizes)

    def __getitem__(self, depth: int) -> int:
        """1-based: ``sizes[1]`` is the first layer."""
        return self.sizes[depth - 1]


def _sizes(sizes) -> LayerSizes:
    return sizes if isinstance(sizes, LayerSizes) else LayerSizes(tuple(sizes))


def prob_inclusion(d: int, sizes, alpha: float, l: int) -> float:
    """Probability that one particular depth-``d`` message becomes the proof.

    All holders of shallower messages must have failed, and the message must
    then win the uniform draw among the surviving depth-``d`` holders.
    """
    sizes = _sizes(sizes)
    if d < 1 or d > l or d > len(sizes):
        return 0.0
    size = sizes[d]
    if size == 0:
        return 0.0
    draw = sum(
        (1.0 / size) * (1.0 - alpha) ** k * alpha ** (size - k) * math.comb(size, k)
        for k in range(1, size + 1)
    )
    if d == 1:
        return draw
    before = sum(sizes[j] for j in range(1, d))
    return draw * alpha**before


def expected_payoff(counts: Sequence[int], sizes, alpha: float, rho: float, l: int) -> float:
    """Sum over depths i of |S_W,i| * P[m at depth i] * rho / i.

    ``counts[i-1]`` is how many valid depth-``i`` messages carry the watchtower's signature.
    """
    sizes = _sizes(sizes)
    total = 0.0
    for i, c in enumerate(counts, start=1):
        if c:
            if i <= len(sizes) and c > sizes[i]:
                raise InvalidParams(f"watchtower owns {c} of only {sizes[i]} depth-{i} messages")
            total += c * prob_inclusion(i, sizes, alpha, l) * rho / i
    return total


def enumerate_inclusion(sizes, alpha: float, d: int) -> float:
    """Exact oracle for one depth-``d`` message, summing probability mass over failure subsets.

    Up to 22 holders the subsets are walked literally; beyond that a
    dynamic program folds holders in one at a time, keeping for each partial
    assignment whether a shallower holder survived and how many same-depth
    rivals are alive.
    """
    sizes = _sizes(sizes)
    if d < 1 or d > len(sizes):
        return 0.0
    if sum(sizes.sizes[:d]) <= 22:
        return kernels.subset_inclusion(list(sizes.sizes), alpha, d)
    return _inclusion_dp(sizes, alpha, d)


def _inclusion_dp(sizes: LayerSizes, alpha: float, d: int) -> float:
    live, dead = 1.0 - alpha, alpha
    # state: (shallower survivor seen, rivals alive) -> mass
    states = {(False, 0): 1.0}
    for j in range(1, d):
        for _ in range(sizes[j]):
            nxt: dict = {}
            for (blocked, k), mass in states.items():
                nxt[(True, k)] = nxt.get((True, k), 0.0) + mass * live
                nxt[(blocked, k)] = nxt.get((blocked, k), 0.0) + mass * dead
            states = nxt
    for _ in range(sizes[d] - 1):
        nxt = {}
        for (blocked, k), mass in states.items():
            nxt[(blocked, k + 1)] = nxt.get((blocked, k + 1), 0.0) + mass * live
            nxt[(blocked, k)] = nxt.get((blocked, k), 0.0) + mass * dead
        states = nxt
    return live * math.fsum(mass / (k + 1) for (blocked, k), mass in states.items() if not blocked)


def duplication_threshold(alpha: float) -> bool:
    """Does a duplicated id pair reach the chain more often than an honest pair does?"""
    if not 0.0 <= alpha <= 1.0:
        raise InvalidParams(f"failure probability {alpha} outside [0, 1]")
    return 2 * alpha * (1 - alpha) > (1 - alpha) ** 2


def signed_counts(world: DcwcWorld, pk: PublicKey) -> list[int]:
    """|S_W,i| for every depth: valid schedulable messages whose path includes ``pk``."""
    counts = [0] * world.params.rounds_l
    for p in world.enumeration_table().entries:
        m = p.submission.message
        if pk in m.recipients():
            counts[m.depth - 1] += 1
    return counts


def layer_sizes(world: DcwcWorld) -> LayerSizes:
    counts = [0] * world.params.rounds_l
    for p in world.enumeration_table().entries:
        counts[p.submission.message.depth - 1] += 1
    return LayerSizes(tuple(counts))


# -- Monte Carlo ------------------------------------------------------------


@dataclass
class ActorStats:
    name: str
    mean: float
    stderr: float
    half_width: float
    closed_form: float | None = None

    def as_dict(self) -> dict:
        return {
            "actor": self.name,
            "mean": self.mean,
            "stderr": self.stderr,
            "ci95": self.half_width,
            "closed_form": self.closed_form,
        }


@dataclass
class PayoffReport:
    strategy: str
    alpha: float
    trials: int
    seed: int
    detection_rate: float
    actors: list[ActorStats] = field(default_factory=list)

    def actor(self, name: str) -> ActorStats:
        return next(a for a in self.actors if a.name == name)

    def as_dict(self) -> dict:
        return {
            "strategy": self.strategy,
            "alpha": self.alpha,
            "trials": self.trials,
            "seed": self.seed,
            "detection_rate": self.detection_rate,
            "actors": [a.as_dict() for a in self.actors],
        }


def trial_alive(world: DcwcWorld, alpha: float, seed: int, index: int) -> set[PublicKey]:
    """Independent failure draw for one trial, from its own (seed, index) stream."""
    rng = random.Random(derive_seed(seed, "failures", index))
    return {w.public for w in world.watchtowers if rng.random() >= alpha}


def _run_trials(world: DcwcWorld, alpha: float, seed: int, start: int, stop: int):
    watch = [w.public for w in world.watchtowers]
    sums = [0] * len(watch)
    squares = [0] * len(watch)
    detected = 0
    for i in range(start, stop):
        outcome, _ = world.trial(trial_alive(world, alpha, seed, i), derive_seed(seed, "miner", i))
        if outcome.fraud_proven:
            detected += 1
            for j, pk in enumerate(watch):
                x = outcome.amount_to(pk)
                if x:
                    sums[j] += x
                    squares[j] += x * x
    return sums, squares, detected


def monte_carlo(
    world: DcwcWorld,
    alpha: float,
    trials: int,
    seed: int,
    strategy: StrategyProfile | str = HONEST,
) -> PayoffReport:
    """Full Phase 2 plus chain runs with independent failure draws per trial.

    Payoffs are integers, so the accumulated sums do not depend on trial order.
    """
    if trials < 1:
        raise InvalidParams("at least one trial is required")
    FailureModel(alpha)
    sums, squares, detected = _run_trials(world, alpha, seed, 0, trials)
    closed = closed_form_payoffs(world, alpha)
    actors = []
    for j, w in enumerate(world.watchtowers):
        mean = sums[j] / trials
        var = (squares[j] - trials * mean * mean) / (trials - 1) if trials > 1 else 0.0
        se = math.sqrt(max(var, 0.0) / trials)
        actors.append(ActorStats(world.name(w.public), mean, se, 1.96 * se, closed.get(w.public)))
    return PayoffReport(str(strategy), alpha, trials, seed, detected / trials, actors)


def closed_form_payoffs(world: DcwcWorld, alpha: float) -> dict[PublicKey, float]:
    sizes = layer_sizes(world)
    p = world.params
    return {
        w.public: expected_payoff(signed_counts(world, w.public), sizes, alpha, p.rho - p.pof_fee, p.rounds_l)
        for w in world.watchtowers
    }


# -- exact enumeration ------------------------------------------------------


@dataclass
class ExactResult:
    payoffs: list[float]
    p_none: float
    p_entry: list[float]


def exact_payoffs(world: DcwcWorld, alpha: float) -> ExactResult:
    """Expected payoff of every watchtower over all 2**n failure configurations."""
    t = world.enumeration_table()
    if t.n_actors > EXACT_LIMIT:
        raise InvalidParams(f"{t.n_actors} actors exceed the exact-mode bound of {EXACT_LIMIT}")
    payoffs, p_none, p_entry = kernels.failure_enumeration(
        t.n_actors, alpha, t.holder, t.round, t.group, t.signer_ptr, t.signer_idx, t.share, t.max_round
    )
    return ExactResult(list(payoffs), p_none, list(p_entry))


@dataclass
class DeviationRow:
    strategy: str
    deviator: str
    alpha: float
    honest: float
    deviant: float
    method: str  # exact | monte-carlo
    stderr: float = 0.0
    duplication_regime: bool = False

    @property
    def gain(self) -> float:
        return self.deviant - self.honest

    @property
    def dominates(self) -> bool:
        """Strictly better for the deviator, beyond float noise or three standard errors."""
        if self.method == "exact":
            return self.gain > 1e-9
        return self.gain > 3 * self.stderr

    def as_dict(self) -> dict:
        return {
            "strategy": self.strategy,
            "deviator": self.deviator,
            "alpha": self.alpha,
            "honest": self.honest,
            "deviant": self.deviant,
            "gain": self.gain,
            "method": self.method,
            "stderr": self.stderr,
            "dominates": self.dominates,
            "duplication_regime": self.duplication_regime,
        }


@dataclass
class DominanceReport:
    rows: list[DeviationRow]

    @property
    def falsified(self) -> bool:
        return any(r.dominates for r in self.rows)

    def worst(self) -> DeviationRow | None:
        return max(self.rows, key=lambda r: r.gain, default=None)

    def table(self) -> str:
        head = f"{'strategy':<24}{'deviator':>9}{'alpha':>7}{'honest':>12}{'deviant':>12}{'gain':>12}  flags"
        lines = [head]
        for r in self.rows:
            flags = []
            if r.dominates:
                flags.append("DOMINATES")
            if r.duplication_regime:
                flags.append("dup-regime")
            lines.append(
                f"{r.strategy:<24}{r.deviator:>9}{r.alpha:>7.2f}{r.honest:>12.6f}{r.deviant:>12.6f}"
                f"{r.gain:>12.2e}  {' '.join(flags)}"
            )
        return "\n".join(lines)


def deviation_search(
    spec: WorldSpec,
    strategies: Iterable[StrategyProfile],
    alphas: Sequence[float] = ALPHA_GRID,
    deviators: Sequence[int] | None = None,
    trials: int = 20000,
    seed: int = 0,
) -> DominanceReport:
    """Honest versus each deviation for each deviating watchtower and failure rate.

    Exact when the population fits the enumeration bound, otherwise Monte
    Carlo with common random numbers for the two sides.
    """
    strategies = list(strategies)
    honest_world = DcwcWorld(spec)
    n = len(honest_world.watchtowers)
    exact = n <= EXACT_LIMIT
    positions = list(range(n)) if deviators is None else list(deviators)
    for alpha in alphas:
        FailureModel(alpha)
    deviants = {
        (k, i): DcwcWorld(spec, {honest_world.watchtowers[i].public: s})
        for k, s in enumerate(strategies)
        for i in positions
    }
    rows: list[DeviationRow] = []
    for alpha in alphas:
        base = exact_payoffs(honest_world, alpha).payoffs if exact else None
        base_mc = None if exact else monte_carlo(honest_world, alpha, trials, seed)
        for k, s in enumerate(strategies):
            for i in positions:
                world = deviants[(k, i)]
                name = honest_world.name(honest_world.watchtowers[i].public)
                regime = s.kind is Kind.DUPLICATE_ID and duplication_threshold(alpha)
                if exact:
                    dev = exact_payoffs(world, alpha).payoffs[i]
                    rows.append(DeviationRow(str(s), name, alpha, base[i], dev, "exact", 0.0, regime))
                else:
                    h = base_mc.actors[i]
                    d = monte_carlo(world, alpha, trials, seed, s).actors[i]
                    se = math.hypot(h.stderr, d.stderr)
                    rows.append(DeviationRow(str(s), name, alpha, h.mean, d.mean, "monte-carlo", se, regime))
    return DominanceReport(rows)


__all__ = [
    "ALPHA_GRID",
    "EXACT_LIMIT",
    "FailureModel",
    "LayerSizes",
    "PayoffReport",
    "ActorStats",
    "DeviationRow",
    "DominanceReport",
    "prob_inclusion",
    "expected_payoff",
    "enumerate_inclusion",
    "duplication_threshold",
    "signed_counts",
    "layer_sizes",
    "monte_carlo",
    "closed_form_payoffs",
    "exact_payoffs",
    "deviation_search",
    "trial_alive",
]
