"""JSON scenario files: parsing, validation with line positions, and bundled examples."""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

from .errors import ScenarioError
from .sim import DEFAULT_STRATEGIES, StrategyProfile, WorldSpec

SCHEMA = "dcwc-scenario/1"
MODES = ("dcwc", "dcwc-star", "xd")
BUNDLED = ("fraud-basic", "analyze-default", "deviate-default", "star-basic", "example1-xd")


@dataclass
class StarSpec:
    total_a: int = 10
    total_b: int = 10
    remainder: int = 4
    claims: tuple[int, ...] = (1, 1, 1)
    b: int = 6
    min_remainder: int = 1
    timelock: int = 50
    online: tuple[str, ...] = ()  # among "A", "B", "W1".."Wk"


@dataclass
class XdSpec:
    vertices: tuple[str, ...]
    edges: tuple[tuple[str, str], ...]
    initial: dict[str, int]
    payments: tuple[tuple[str, int], ...] = ()


@dataclass
class Scenario:
    name: str
    mode: str
    seed: int
    trials: int = 1
    alpha: float = 0.0
    world: WorldSpec | None = None
    strategies: dict[int, StrategyProfile] = field(default_factory=dict)
    alphas: tuple[float, ...] = tuple(round(0.1 * i, 1) for i in range(10))
    deviation_strategies: tuple[StrategyProfile, ...] = DEFAULT_STRATEGIES
    deviators: tuple[int, ...] | None = None
    star: StarSpec | None = None
    xd: XdSpec | None = None
    source: str = ""


class _Locator:
    """Best-effort line numbers for keys, found by scanning the raw text."""

    def __init__(self, text: str):
        self.text = text

    def line_of(self, *path: str) -> int | None:
        pos = 0
        for key in path:
            m = re.compile(r'"%s"\s*:' % re.escape(key)).search(self.text, pos)
            if m is None:
                break
            pos = m.start()
        else:
            return self.text.count("\n", 0, pos) + 1
        return None


def _fail(loc: _Locator, message: str, *path: str):
    raise ScenarioError(message, loc.line_of(*path) if path else None)


def _get(obj: dict, key: str, kind, loc: _Locator, path: tuple[str, ...], default: Any = ...):
    if key not in obj:
        if default is ...:
            _fail(loc, f"missing required field {'.'.join(path + (key,))}", *path)
        return default
    value = obj[key]
    kinds = kind if isinstance(kind, tuple) else (kind,)
    if isinstance(value, bool) and bool not in kinds:
        _fail(loc, f"{'.'.join(path + (key,))} must be {kinds[0].__name__}", *path, key)
    if not isinstance(value, kinds):
        _fail(loc, f"{'.'.join(path + (key,))} must be {kinds[0].__name__}", *path, key)
    return value


def parse_scenario(text: str, source: str = "<string>") -> Scenario:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"malformed JSON: {exc.msg}", exc.lineno) from exc
    loc = _Locator(text)
    if not isinstance(raw, dict):
        raise ScenarioError("top level must be an object", 1)
    schema = _get(raw, "schema", str, loc, ())
    if schema != SCHEMA:
        _fail(loc, f"unsupported schema {schema!r}, expected {SCHEMA!r}", "schema")
    mode = _get(raw, "mode", str, loc, ())
    if mode not in MODES:
        _fail(loc, f"mode must be one of {', '.join(MODES)}", "mode")
    seed = _get(raw, "seed", int, loc, ())
    trials = _get(raw, "trials", int, loc, (), 1)
    if trials < 1:
        _fail(loc, "trials must be at least 1", "trials")
    alpha = float(_get(raw, "alpha", (int, float), loc, (), 0.0))
    if not 0.0 <= alpha <= 1.0:
        _fail(loc, "alpha must lie in [0, 1]", "alpha")
    sc = Scenario(_get(raw, "name", str, loc, (), Path(source).stem), mode, seed, trials, alpha, source=source)
    if mode == "dcwc":
        _parse_dcwc(raw, sc, loc)
    elif mode == "dcwc-star":
        _parse_star(raw, sc, loc)
    else:
        _parse_xd(raw, sc, loc)
    return sc


def _parse_dcwc(raw: dict, sc: Scenario, loc: _Locator) -> None:
    ch = _get(raw, "channel", dict, loc, ())
    p = ("channel",)
    topo = _get(raw, "topology", dict, loc, (), {})
    fraud = _get(raw, "fraud", dict, loc, (), {})
    updates = _get(raw, "updates", list, loc, (), [3])
    if not all(isinstance(u, int) and not isinstance(u, bool) for u in updates):
        _fail(loc, "updates must be a list of integer payments (positive: A pays B)", "updates")
    discloser = _get(raw, "discloser", str, loc, (), "payee")
    if discloser not in ("payee", "a", "b", "both"):
        _fail(loc, "discloser must be payee, a, b or both", "discloser")
    publisher = _get(fraud, "publisher", str, loc, ("fraud",), "a")
    if publisher not in ("a", "b"):
        _fail(loc, "fraud.publisher must be a or b", "fraud", "publisher")
    fraud_seq = _get(fraud, "seq", int, loc, ("fraud",), 0)
    if not 0 <= fraud_seq < len(updates):
        _fail(loc, f"fraud.seq must name a superseded update (0..{len(updates) - 1})", "fraud", "seq")
    height = _get(fraud, "height", int, loc, ("fraud",), 1)
    if height < 1:
        _fail(loc, "fraud.height must be at least 1", "fraud", "height")
    spec = WorldSpec(
        fanout_n=_get(ch, "fanout", int, loc, p, 2),
        rounds_l=_get(ch, "rounds", int, loc, p, 2),
        blocks_per_round_b=_get(ch, "blocks_per_round", int, loc, p, 1),
        settlement_timelock_t=_get(ch, "timelock", int, loc, p, 10),
        fund_a=_get(ch, "fund_a", int, loc, p),
        fund_b=_get(ch, "fund_b", int, loc, p),
        rho=_get(ch, "rho", int, loc, p),
        pof_fee=_get(ch, "fee", int, loc, p, 0),
        watchtowers=_get(topo, "watchtowers", int, loc, ("topology",), None),
        identity_reuse=_get(topo, "identity_reuse", bool, loc, ("topology",), False),
        deltas=tuple(updates),
        discloser=discloser,
        cheater=publisher,
        fraud_seq=fraud_seq,
        settle_height=height,
        seed=sc.seed,
        channel_id=_get(ch, "id", str, loc, p, "c0"),
    )
    if spec.fanout_n < 1 or spec.rounds_l < 1:
        _fail(loc, "fanout and rounds must be positive", "channel")
    if spec.rounds_l * spec.blocks_per_round_b >= spec.settlement_timelock_t:
        _fail(loc, "rounds * blocks_per_round must stay below timelock", "channel", "timelock")
    if spec.watchtowers is not None and spec.watchtowers < 1:
        _fail(loc, "topology.watchtowers must be positive", "topology", "watchtowers")
    n = spec.n_watchtowers
    strategies = _get(raw, "strategies", dict, loc, (), {})
    for name, text in strategies.items():
        m = re.fullmatch(r"W(\d+)", name)
        if m is None or int(m.group(1)) >= n:
            _fail(loc, f"strategy target {name!r} is not a watchtower W0..W{n - 1}", "strategies", name)
        sc.strategies[int(m.group(1))] = _strategy(text, loc, ("strategies", name))
    analysis = _get(raw, "analysis", dict, loc, (), {})
    alphas = _get(analysis, "alphas", list, loc, ("analysis",), list(sc.alphas))
    if not all(isinstance(a, (int, float)) and 0 <= a <= 1 for a in alphas):
        _fail(loc, "analysis.alphas must be probabilities", "analysis", "alphas")
    sc.alphas = tuple(float(a) for a in alphas)
    dev = _get(raw, "deviate", dict, loc, (), {})
    names = _get(dev, "strategies", list, loc, ("deviate",), None)
    if names is not None:
        sc.deviation_strategies = tuple(_strategy(t, loc, ("deviate", "strategies")) for t in names)
    deviators = _get(dev, "deviators", list, loc, ("deviate",), None)
    if deviators is not None:
        if not all(isinstance(i, int) and 0 <= i < n for i in deviators):
            _fail(loc, f"deviate.deviators must be watchtower indices below {n}", "deviate", "deviators")
        sc.deviators = tuple(deviators)
    sc.world = spec


def _strategy(text, loc: _Locator, path: tuple[str, ...]) -> StrategyProfile:
    if not isinstance(text, str):
        _fail(loc, f"{'.'.join(path)} must be a strategy name", *path)
    try:
        return StrategyProfile.parse(text)
    except (ValueError, KeyError):
        _fail(loc, f"unknown strategy {text!r}", *path)


def _parse_star(raw: dict, sc: Scenario, loc: _Locator) -> None:
    st = _get(raw, "star", dict, loc, ())
    p = ("star",)
    claims = _get(st, "claims", list, loc, p, [1, 1, 1])
    if not all(isinstance(c, int) and c >= 0 for c in claims):
        _fail(loc, "star.claims must be non-negative integers", "star", "claims")
    online = _get(st, "online", list, loc, p, [])
    hops = len(claims)
    allowed = {"A", "B"} | {f"W{i}" for i in range(1, hops + 1)}
    for who in online:
        if who not in allowed:
            _fail(loc, f"star.online entry {who!r} must be one of {sorted(allowed)}", "star", "online")
    spec = StarSpec(
        total_a=_get(st, "balance_a", int, loc, p, 10),
        total_b=_get(st, "balance_b", int, loc, p, 10),
        remainder=_get(st, "remainder", int, loc, p, 4),
        claims=tuple(claims),
        b=_get(st, "b", int, loc, p, 6),
        min_remainder=_get(st, "min_remainder", int, loc, p, 1),
        timelock=_get(st, "timelock", int, loc, p, 50),
        online=tuple(online),
    )
    if spec.b <= 0 or spec.timelock <= 0:
        _fail(loc, "star.b and star.timelock must be positive", "star")
    if not 0 <= spec.remainder <= spec.total_a + spec.total_b:
        _fail(loc, "star.remainder must lie within the channel total", "star", "remainder")
    sc.star = spec


def _parse_xd(raw: dict, sc: Scenario, loc: _Locator) -> None:
    x = _get(raw, "xd", dict, loc, ())
    p = ("xd",)
    vertices = _get(x, "vertices", list, loc, p)
    if not vertices or not all(isinstance(v, str) for v in vertices) or len(set(vertices)) != len(vertices):
        _fail(loc, "xd.vertices must be distinct names", "xd", "vertices")
    edges = _get(x, "edges", list, loc, p, [])
    for e in edges:
        if not (isinstance(e, list) and len(e) == 2 and all(v in vertices for v in e)):
            _fail(loc, f"xd edge {e!r} must be a pair of known vertices", "xd", "edges")
    initial = _get(x, "initial", dict, loc, p, {})
    for v, f in initial.items():
        if v not in vertices or not isinstance(f, int) or f < 0:
            _fail(loc, f"xd.initial entry {v!r} must be a known vertex with non-negative funds", "xd", "initial")
    payments = _get(x, "payments", list, loc, p, [])
    for pay in payments:
        if not (isinstance(pay, list) and len(pay) == 2 and pay[0] in vertices and isinstance(pay[1], int)):
            _fail(loc, f"xd payment {pay!r} must be [vertex, cumulative total]", "xd", "payments")
    sc.xd = XdSpec(tuple(vertices), tuple(tuple(e) for e in edges), dict(initial), tuple(tuple(q) for q in payments))


def bundled_path(name: str):
    return resources.files("dcwc").joinpath("scenarios", f"{name}.json")


def resolve(path_or_name: str) -> tuple[str, str]:
    """Return (text, source) for a file path or the name of a bundled scenario."""
    p = Path(path_or_name)
    if p.is_file():
        return p.read_text(encoding="utf-8"), str(p)
    name = p.stem if p.suffix == ".json" else path_or_name
    if name in BUNDLED:
        return bundled_path(name).read_text(encoding="utf-8"), f"bundled:{name}"
    raise ScenarioError(f"no scenario file or bundled scenario named {path_or_name!r}")


def load_scenario(path_or_name: str) -> Scenario:
    text, source = resolve(path_or_name)
    return parse_scenario(text, source)
