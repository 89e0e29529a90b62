"""Command-line harness: run a scenario under a strategy, or sweep a parameter.

Exit codes: 0 success, 1 usage error, 2 scenario/validation error, 3 runtime
invariant failure. The default output directory can be set through the
JOINTLANE_OUT environment variable.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from . import runner
from .control import STRATEGIES, ControlError
from .engine import EngineError
from .metrics import write_combined_summary
from .network import NetworkError
from .scenario import BUNDLED_SCENARIOS, ScenarioError, resolve_scenario


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def build_parser() -> _Parser:
    parser = _Parser(
        prog="jointlane",
        description="Mesoscopic corridor simulator with bus-priority lane coordination",
    )
    parser.add_argument(
        "--scenario", required=True,
        help=f"scenario file path, or a bundled name: {', '.join(BUNDLED_SCENARIOS)}",
    )
    parser.add_argument("--strategy", choices=STRATEGIES, default="proposed")
    parser.add_argument("--seed", type=int, default=1)
    parser.add_argument("--horizon", type=float, default=None,
                        help="injection horizon in seconds (default: scenario meta)")
    parser.add_argument("--out", default=None,
                        help="output directory (default: $JOINTLANE_OUT or ./out)")
    parser.add_argument("--set", dest="sets", action="append", default=[],
                        metavar="KEY=VALUE",
                        help="override a control parameter (w1 w2 w3 lambda gamma T "
                             "theta dT_b dt dt_b dt_sim alpha beta); repeatable")
    parser.add_argument("--sweep", default=None, metavar="KEY=V1,V2,...",
                        help="run once per value of one parameter, shared seed")
    parser.add_argument("--log-events", action="store_true")
    parser.add_argument("--log-decisions", action="store_true")
    parser.add_argument("--log-predictions", action="store_true")
    return parser


def _parse_kv(text: str) -> tuple[str, float]:
    key, sep, value = text.partition("=")
    try:
        if not sep:
            raise ValueError
        return key.strip(), float(value)
    except ValueError:
        print(f"jointlane: error: {text!r} is not KEY=NUMBER", file=sys.stderr)
        raise SystemExit(1) from None


def _base_config(args, overrides, out_dir) -> runner.RunConfig:
    return runner.RunConfig(
        scenario=args.scenario,
        strategy=args.strategy,
        seed=args.seed,
        horizon=args.horizon,
        out_dir=str(out_dir),
        overrides=overrides,
        log_events=args.log_events,
        log_decisions=args.log_decisions,
        log_predictions=args.log_predictions,
    )


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        overrides = dict(_parse_kv(item) for item in args.sets)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 1

    out_root = Path(args.out or os.environ.get("JOINTLANE_OUT", "out"))
    try:
        if args.sweep is None:
            result = runner.run(_base_config(args, overrides, out_root))
            print(
                f"done: strategy={result.strategy} seed={result.seed} "
                f"t_wall={result.wall_time:.2f}s reports in {out_root}"
            )
            return 0
        key, _, value_text = args.sweep.partition("=")
        key = key.strip()
        try:
            values = [float(v) for v in value_text.split(",") if v.strip()]
        except ValueError:
            values = []
        if not values:
            print("jointlane: error: --sweep needs KEY=V1,V2,...", file=sys.stderr)
            return 1
        rows = []
        for value in values:
            config = _base_config(args, {**overrides, key: value},
                                  out_root / f"{key}_{value:g}")
            result = runner.run(config)
            row = dict(result.summary)
            row["sweep_key"] = key
            row["sweep_value"] = value
            rows.append(row)
            print(f"sweep {key}={value:g}: done ({config.out_dir})")
        rows.sort(key=lambda r: r["sweep_value"])
        write_combined_summary(rows, out_root)
        print(f"sweep complete: {len(values)} runs, combined summary in {out_root}")
        return 0
    except ScenarioError as exc:
        print(f"jointlane: scenario error: {exc}", file=sys.stderr)
        return 2
    except (NetworkError, ControlError) as exc:
        print(f"jointlane: validation error: {exc}", file=sys.stderr)
        return 2
    except EngineError as exc:
        print(f"jointlane: runtime invariant violated: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
