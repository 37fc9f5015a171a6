"""Command line entry point: ``dcwc run|analyze|deviate|settle-xd|star-demo``."""
from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .crypto import digest, keygen
from .errors import DcwcError, ScenarioError
from .incentive import (
    deviation_search,
    duplication_threshold,
    layer_sizes,
    monte_carlo,
    prob_inclusion,
    signed_counts,
    trial_alive,
    expected_payoff,
)
from .scenario import Scenario, load_scenario
from .sim import DcwcWorld, TraceSink, derive_seed

EXIT_OK, EXIT_USAGE, EXIT_SCENARIO, EXIT_FALSIFIED = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _write(out: Path, name: str, text: str) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    path = out / name
    path.write_text(text, encoding="utf-8")
    return path


def _trace_lines(events: list[dict]) -> str:
    ordered = sorted(enumerate(events), key=lambda p: (p[1]["height"], p[0]))
    lines = []
    for i, (_, e) in enumerate(ordered):
        rec = dict(e)
        rec["index"] = i
        lines.append(json.dumps(rec, sort_keys=True, separators=(",", ":")))
    return "\n".join(lines) + ("\n" if lines else "")


def _apply_overrides(sc: Scenario, args) -> Scenario:
    if args.seed is not None:
        sc.seed = args.seed
        if sc.world is not None:
            sc.world = replace(sc.world, seed=args.seed)
    if args.trials is not None:
        if args.trials < 1:
            raise ScenarioError("--trials must be at least 1")
        sc.trials = args.trials
    return sc


def _world(sc: Scenario) -> DcwcWorld:
    probe = DcwcWorld(sc.world)
    strategies = {probe.watchtowers[i].public: s for i, s in sc.strategies.items()}
    return DcwcWorld(sc.world, strategies) if strategies else probe


def _require(sc: Scenario, mode: str) -> None:
    if sc.mode != mode:
        raise ScenarioError(f"this command needs a {mode} scenario, got mode {sc.mode}")


# -- dcwc run ---------------------------------------------------------------


def run_dcwc(sc: Scenario) -> dict:
    world = _world(sc)
    alive = trial_alive(world, sc.alpha, sc.seed, 0)
    sink = TraceSink()
    outcome, chain = world.trial(alive, derive_seed(sc.seed, "miner", 0), sink)
    events = world.setup_trace.events + sink.events
    params = world.params
    totals: dict[str, int] = {}
    for rec in outcome.payouts:
        totals[world.name(rec.recipient)] = totals.get(world.name(rec.recipient), 0) + rec.amount
    paid = sum(totals.values())
    honest = params.counterparty(world.settlement().publisher)
    report = {
        "scenario": sc.name,
        "mode": sc.mode,
        "seed": sc.seed,
        "alpha": sc.alpha,
        "alive": sorted(world.name(pk) for pk in alive),
        "strategies": {world.name(pk): str(s) for pk, s in sorted(world.strategies.items())},
        "fraud_proven": outcome.fraud_proven,
        "proof_round": outcome.proof_round,
        "settlement_seq": outcome.settlement_seq,
        "honest_party": world.name(honest),
        "honest_award": outcome.amount_to(honest),
        "payouts": [
            {"recipient": world.name(r.recipient), "amount": r.amount, "role": r.role} for r in outcome.payouts
        ],
        "totals": totals,
        "conserved": paid == params.total + 2 * params.rho,
        "flags": outcome.flags,
        "degenerate_topology": world.degenerate,
    }
    if sc.trials > 1:
        report["monte_carlo"] = monte_carlo(world, sc.alpha, sc.trials, sc.seed).as_dict()
    return {"report": report, "trace": events, "chain": chain.dump_lines()}


# -- dcwc-star --------------------------------------------------------------


def run_star(sc: Scenario) -> dict:
    from .channel import ChannelParams, new_channel
    from .star import build_invalidation, disclose_star, forward_with_claim, settle_star

    st = sc.star
    a = keygen(derive_seed(sc.seed, "star", "A"))
    b = keygen(derive_seed(sc.seed, "star", "B"))
    hops = [keygen(derive_seed(sc.seed, "star", f"W{i}")) for i in range(1, len(st.claims) + 1)]
    names = {a.public: "A", b.public: "B"}
    names.update({k.public: f"W{i}" for i, k in enumerate(hops, start=1)})
    params = ChannelParams("star", a.public, b.public, st.total_a, st.total_b, 0, 1, 1, 1, st.timelock)
    _, revoked = new_channel(params, a, b)
    inv = build_invalidation(revoked, a.public, b, st.remainder, st.timelock)
    events = [{"height": 0, "actor": "B", "kind": "invalidation", "digest": inv.txid.hex(),
               "note": f"open output {inv.open_amount}"}]
    held = {b.public: disclose_star(inv, b)}
    sender, msg = b, held[b.public]
    for claim, nxt in zip(st.claims, hops):
        msg = forward_with_claim(msg, sender, nxt.public, claim, st.b, st.min_remainder)
        held[nxt.public] = msg
        events.append({"height": 0, "actor": names[sender.public], "kind": "forward", "digest": msg.chain[-1].txid.hex(),
                       "note": f"to {names[nxt.public]} claim {claim} open {msg.open_amount}"})
        sender = nxt
    keys = {k.public: k for k in [b, *hops]}
    online = {pk for pk, n in names.items() if n in st.online}
    result = settle_star(revoked, a, b, held, keys, online, st.timelock)
    short = {pk.short(): n for pk, n in names.items()}
    for h, actor, label in result.events:
        events.append({"height": h, "actor": short.get(actor, actor), "kind": "tx", "digest": None, "note": label})
    report = {
        "scenario": sc.name,
        "mode": sc.mode,
        "seed": sc.seed,
        "online": sorted(st.online),
        "invalidated": result.invalidated,
        "winner": names.get(result.winner) if result.winner else None,
        "payouts": {names[pk]: amt for pk, amt in sorted(result.payouts.items(), key=lambda kv: names[kv[0]])},
        "unclaimed": result.unclaimed,
        "fees": result.fees,
        "conserved": sum(result.payouts.values()) + result.unclaimed + result.fees == st.total_a + st.total_b,
    }
    confirmed = sorted(result.ledger.confirmed.values(), key=lambda p: p[1])  # stable: acceptance order
    chain = [
        json.dumps({"height": h, "kind": "tx", "label": tx.label, "txid": tx.txid.hex()}, separators=(",", ":"))
        for tx, h in confirmed
    ]
    return {"report": report, "trace": [dict(e, index=i) for i, e in enumerate(events)], "chain": chain}


# -- xd ---------------------------------------------------------------------


def run_xd(sc: Scenario) -> dict:
    from .xd import build_fixture, settle

    x = sc.xd
    fx = build_fixture(sc.name, x.vertices, x.edges, x.initial, x.payments, sc.seed)
    result = settle(fx.state)
    events = [
        {"height": 0, "actor": fx.names[c.vertex], "kind": "commit", "digest": c.signature.data.hex(),
         "note": f"cumulative {c.amount}"}
        for _, c in fx.state.commitments
    ]
    events.append({"height": 1, "actor": "chain", "kind": "settle", "digest": None, "note": f"sweeps={result.sweeps}"})
    report = {
        "scenario": sc.name,
        "mode": sc.mode,
        "seed": sc.seed,
        "flows": dict(sorted(fx.by_name(result.flows).items())),
        "balances": dict(sorted(fx.by_name(result.balances).items())),
        "conserved": sum(result.balances.values()) == fx.state.funding_total,
        "state": fx.state.to_json(fx.names),
    }
    chain = [
        json.dumps({"height": 0, "kind": "xd-funding", "channel": fx.state.channel_id,
                    "amount": fx.state.funding_total}, separators=(",", ":")),
        json.dumps({"height": 1, "kind": "xd-settle", "channel": fx.state.channel_id,
                    "digest": digest(fx.state.to_bytes()).hex()}, separators=(",", ":")),
    ]
    return {"report": report, "trace": [dict(e, index=i) for i, e in enumerate(events)], "chain": chain}


RUNNERS = {"dcwc": run_dcwc, "dcwc-star": run_star, "xd": run_xd}


def _persist(result: dict, out: Path) -> None:
    _write(out, "trace.jsonl", _trace_lines(result["trace"]))
    _write(out, "report.json", _dump_json(result["report"]))
    if result["chain"]:
        _write(out, "chain.jsonl", "\n".join(result["chain"]) + "\n")


def cmd_run(args) -> int:
    sc = _apply_overrides(load_scenario(args.scenario), args)
    result = RUNNERS[sc.mode](sc)
    out = Path(args.out)
    _persist(result, out)
    print(_dump_json(result["report"]), end="")
    return EXIT_OK


# -- analyze ----------------------------------------------------------------


def analyze_rows(sc: Scenario) -> list[dict]:
    world = _world(sc)
    params = world.params
    sizes = layer_sizes(world)
    l = params.rounds_l
    focal = next(w.public for w in world.watchtowers if signed_counts(world, w.public)[0] > 0)
    counts = signed_counts(world, focal)
    rows = []
    for alpha in sc.alphas:
        mc = monte_carlo(world, alpha, sc.trials, derive_seed(sc.seed, "analyze", alpha))
        stats = next(a for a in mc.actors if a.name == world.name(focal))
        closed = expected_payoff(counts, sizes, alpha, params.rho - params.pof_fee, l)
        row = {"alpha": alpha}
        for d in range(1, l + 2):
            row[f"p_d{d}"] = prob_inclusion(d, sizes, alpha, l)
        row.update(
            {
                "watchtower": world.name(focal),
                "closed_form": closed,
                "mc_mean": stats.mean,
                "mc_stderr": stats.stderr,
                "mc_ci95": stats.half_width,
                "within_ci95": abs(stats.mean - closed) <= stats.half_width,
                "within_3se": abs(stats.mean - closed) <= 3 * stats.stderr,
                "detect_closed": 1.0 - alpha ** sum(sizes.sizes),
                "detect_mc": mc.detection_rate,
            }
        )
        rows.append(row)
    return rows


def rows_to_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    writer.writeheader()
    for r in rows:
        writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    return buf.getvalue()


def cmd_analyze(args) -> int:
    sc = _apply_overrides(load_scenario(args.scenario), args)
    _require(sc, "dcwc")
    text = rows_to_csv(analyze_rows(sc))
    _write(Path(args.out), "analyze.csv", text)
    print(text, end="")
    return EXIT_OK


# -- deviate ----------------------------------------------------------------


def cmd_deviate(args) -> int:
    sc = _apply_overrides(load_scenario(args.scenario), args)
    _require(sc, "dcwc")
    report = deviation_search(sc.world, sc.deviation_strategies, sc.alphas, sc.deviators, sc.trials, sc.seed)
    records = []
    for r in report.rows:
        rec = r.as_dict()
        if r.strategy.startswith("DuplicateId"):
            a = r.alpha
            rec["dup_pair_delivery"] = 2 * a * (1 - a)
            rec["honest_pair_delivery"] = (1 - a) ** 2
            rec["duplication_advantage"] = duplication_threshold(a)
        records.append(rec)
    out = Path(args.out)
    _write(out, "deviate.jsonl", "".join(json.dumps(r, sort_keys=True) + "\n" for r in records))
    summary = report.table()
    verdict = "FALSIFIED: a deviation strictly beats honest play" if report.falsified else "honest play weakly dominant"
    _write(out, "deviate.txt", summary + "\n" + verdict + "\n")
    print(summary)
    print(verdict)
    return EXIT_FALSIFIED if report.falsified else EXIT_OK


# -- xd / star shortcuts ----------------------------------------------------


def cmd_settle_xd(args) -> int:
    sc = _apply_overrides(load_scenario(args.scenario), args)
    _require(sc, "xd")
    result = run_xd(sc)
    _persist(result, Path(args.out))
    print(_dump_json({"flows": result["report"]["flows"], "balances": result["report"]["balances"]}), end="")
    return EXIT_OK


def cmd_star_demo(args) -> int:
    sc = _apply_overrides(load_scenario(args.scenario), args)
    _require(sc, "dcwc-star")
    result = run_star(sc)
    _persist(result, Path(args.out))
    for e in result["trace"]:
        print(f"h={e['height']:>3}  {e['actor']:<6} {e['kind']:<13} {e['note']}")
    print(_dump_json(result["report"]), end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dcwc", description="Watchtower incentive simulator")
    parser.add_argument("--version", action="version", version=f"dcwc {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    def common(p, default_scenario=None):
        if default_scenario:
            p.add_argument("scenario", nargs="?", default=default_scenario, help="file or bundled name")
        else:
            p.add_argument("scenario", help="scenario file or bundled name")
        p.add_argument("--seed", type=int, default=None, help="override the scenario seed")
        p.add_argument("--trials", type=int, default=None, help="override the trial count")
        p.add_argument("--out", "-o", default="dcwc-out", help="output directory")

    for name, func, help_text, default in (
        ("run", cmd_run, "run a scenario and write trace, report and chain dump", None),
        ("analyze", cmd_analyze, "closed form against Monte Carlo over an alpha grid", None),
        ("deviate", cmd_deviate, "honest play against each deviation", None),
        ("settle-xd", cmd_settle_xd, "settle an xD-channel scenario", "example1-xd"),
        ("star-demo", cmd_star_demo, "play out a forwarded invalidation chain", "star-basic"),
    ):
        p = sub.add_parser(name, help=help_text)
        common(p, default)
        p.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0) if exc.code in (0, None) else EXIT_USAGE
    try:
        return args.func(args)
    except ScenarioError as exc:
        print(f"dcwc: invalid scenario: {exc}", file=sys.stderr)
        return EXIT_SCENARIO
    except DcwcError as exc:
        print(f"dcwc: invalid scenario: {exc}", file=sys.stderr)
        return EXIT_SCENARIO


if __name__ == "__main__":
    sys.exit(main())
