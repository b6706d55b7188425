"""Command line entry point.

Exit codes: 0 success (verdict passed or no verdict), 1 verdict failed,
2 configuration problem, 3 completion backend problem.
"""

from __future__ import annotations

import argparse
import sys
from typing import Optional, Sequence

from .errors import BackendError, ConfigError
from .harness import ScenarioConfig, load_scenario, run_experiment


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("scenario", help="path to a scenario yaml file")
    sub.add_argument("--seed", type=int, default=None, help="override the root seed")
    sub.add_argument("--ticks", type=int, default=None, help="override the tick count")
    sub.add_argument("--out", default=None, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="normlab",
        description="simulate populations of pattern-completing actors and "
        "probe them for conventions, sanctions, and norms",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    run_p = subs.add_parser("run", help="execute a scenario's experiment")
    _add_common(run_p)

    probe_p = subs.add_parser("probe", help="run a probe scenario")
    _add_common(probe_p)
    probe_p.add_argument(
        "--grid",
        type=float,
        nargs="+",
        default=None,
        help="replacement fractions for convention probes",
    )

    cons_p = subs.add_parser("consolidate", help="run a consolidation scenario")
    _add_common(cons_p)
    cons_p.add_argument(
        "--passes", type=int, default=None, help="override replay passes"
    )

    val_p = subs.add_parser("validate", help="check a scenario file and exit")
    val_p.add_argument("scenario", help="path to a scenario yaml file")
    return parser


def _load(path: str, expect_kind: Optional[str]) -> ScenarioConfig:
    cfg = load_scenario(path)
    if expect_kind is not None and cfg.kind != expect_kind:
        raise ConfigError(
            f"scenario {cfg.name!r} declares a {cfg.kind!r} experiment; "
            f"use the matching subcommand"
        )
    return cfg


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "validate":
            cfg = load_scenario(args.scenario)
            print(f"ok: {cfg.name} ({cfg.kind})")
            return 0
        if args.command == "probe":
            cfg = _load(args.scenario, "probe")
            result = run_experiment(
                cfg, seed=args.seed, ticks=args.ticks, out_dir=args.out, grid=args.grid
            )
        elif args.command == "consolidate":
            cfg = _load(args.scenario, "consolidation")
            result = run_experiment(
                cfg, seed=args.seed, ticks=args.ticks, out_dir=args.out,
                passes=args.passes,
            )
        else:
            cfg = _load(args.scenario, None)
            kwargs = {"seed": args.seed, "ticks": args.ticks, "out_dir": args.out}
            result = run_experiment(cfg, **kwargs)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except BackendError as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return 3

    for path in result.paths:
        print(f"wrote {path}")
    if result.verdict is None:
        print(f"{result.name}: {result.kind} done")
        return 0
    status = "pass" if result.verdict else "FAIL"
    print(f"{result.name}: {result.kind} verdict {status}")
    return 0 if result.verdict else 1


if __name__ == "__main__":
    sys.exit(main())
