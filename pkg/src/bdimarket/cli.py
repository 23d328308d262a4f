"""Command line entry point.

    bdimarket run --scenario FILE [--seed N] --out DIR [--no-coordination]
    bdimarket compare --scenario FILE --trials N --out DIR
    bdimarket validate --scenario FILE
    bdimarket report --transcript FILE
    bdimarket serve --scenario FILE [--host H] [--port P] [--auto SECONDS]

Exit status: 0 on success, 1 when the scenario or transcript is invalid,
2 on I/O failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from importlib import resources
from pathlib import Path

from .errors import MarketError, ParseError, ScenarioNotSelfCompeting, ValidationError
from .scenario import Scenario, load_scenario, loads_scenario
from .simulation import (
    aggregate_profiles,
    compare_coordination,
    compute_metrics,
    emit,
    enterprises_from_transcript,
    read_transcript,
    replay_statistics,
    run,
)

EXIT_OK, EXIT_INVALID, EXIT_IO = 0, 1, 2
BUNDLED_PREFIX = "bundled:"


def bundled_scenarios() -> list[str]:
    root = resources.files("bdimarket") / "scenarios"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def resolve_scenario(ref: str) -> Scenario:
    """Load a scenario from a path, or ``bundled:<name>`` for one shipped
    with the package."""
    if ref.startswith(BUNDLED_PREFIX):
        name = ref[len(BUNDLED_PREFIX):]
        res = resources.files("bdimarket") / "scenarios" / f"{name}.json"
        if not res.is_file():
            raise FileNotFoundError(f"no bundled scenario {name!r}; have {', '.join(bundled_scenarios())}")
        return loads_scenario(res.read_text(encoding="utf-8"))
    return load_scenario(ref)


def _table(rows: list[list[str]], header: list[str]) -> str:
    widths = [max(len(str(c)) for c in col) for col in zip(header, *rows)]
    line = lambda cells: "  ".join(str(c).ljust(w) for c, w in zip(cells, widths)).rstrip()
    return "\n".join([line(header), line(["-" * w for w in widths]), *map(line, rows)])


def cmd_run(args) -> int:
    scenario = resolve_scenario(args.scenario)
    result = run(scenario, args.seed, coordination=not args.no_coordination)
    paths = emit(result, args.out)
    m = result.metrics
    print(f"ticks={m['ticks']} sessions={m['sessions']} agreements={m['agreements']} "
          f"terminations={m['terminations']} total_spend={m['total_spend']:.4f}")
    print(f"wrote {paths['events']}")
    return EXIT_OK


def cmd_compare(args) -> int:
    scenario = resolve_scenario(args.scenario)
    cmp = compare_coordination(scenario, args.trials)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "comparison.json").write_text(json.dumps(cmp.to_dict(), sort_keys=True, indent=2) + "\n",
                                         encoding="utf-8")
    le = cmp.wins + cmp.ties
    print(f"trials={len(cmp.trials)} wins={cmp.wins} ties={cmp.ties} losses={cmp.losses} "
          f"coordinated<=uncoordinated={le}")
    return EXIT_OK


def cmd_validate(args) -> int:
    scenario = resolve_scenario(args.scenario)
    print(f"ok: {len(scenario.buyers)} buyers, {len(scenario.sellers)} sellers, "
          f"{len(scenario.enterprises)} enterprises, seed {scenario.seed}")
    return EXIT_OK


def cmd_report(args) -> int:
    events = read_transcript(args.transcript)
    store = replay_statistics(events)
    metrics = compute_metrics(store.records, ticks=max((e["tick"] for e in events), default=-1) + 1,
                              enterprise_of=enterprises_from_transcript(events))
    print(json.dumps(metrics, sort_keys=True, indent=2))
    profiles = aggregate_profiles(store.records)
    rows = [[a, p["negotiations_completed"], p["agreements_reached"],
             f"{p['reputation']:.4f}", f"{p['behavior_index']:.6f}"] for a, p in profiles.items()]
    print(_table(rows, ["agent", "negotiations", "agreements", "reputation R", "behavior B"]))
    return EXIT_OK


def cmd_serve(args) -> int:
    from .gateway import GatewayConfig, serve

    config = GatewayConfig(args.host, args.port, args.scenario,
                           "auto" if args.auto else "manual", args.auto or 0.0)
    server = serve(config, scenario=resolve_scenario(args.scenario))
    host, port = server.server_address[:2]
    print(f"listening on http://{host}:{port}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.shutdown_gateway()
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bdimarket", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one scenario and write transcript and metrics")
    p.add_argument("--scenario", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--no-coordination", action="store_true", help="disable the Alliance Sentry")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("compare", help="paired runs with the Alliance Sentry on and off")
    p.add_argument("--scenario", required=True)
    p.add_argument("--trials", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("validate", help="check a scenario file")
    p.add_argument("--scenario", required=True)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("report", help="aggregate metrics and indices from a transcript")
    p.add_argument("--transcript", required=True)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("serve", help="expose the marketplace over HTTP")
    p.add_argument("--scenario", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8080)
    p.add_argument("--auto", type=float, default=None, metavar="SECONDS",
                   help="advance one tick every SECONDS instead of on POST /tick")
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ParseError, ValidationError, ScenarioNotSelfCompeting) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (OSError, KeyError) as exc:
        # KeyError: a transcript line missing a required field
        kind = "invalid transcript" if isinstance(exc, KeyError) else "I/O"
        print(f"error: {kind}: {exc}", file=sys.stderr)
        return EXIT_INVALID if isinstance(exc, KeyError) else EXIT_IO
    except MarketError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
