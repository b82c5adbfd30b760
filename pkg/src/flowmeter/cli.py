"""Command-line entry point: ``flowmeter {fig2,fig3,fig4,detect,estimate,validate}``."""

from __future__ import annotations

import argparse
import logging
import sys

from . import harness
from .errors import ConfigError

log = logging.getLogger("flowmeter")

EXIT_OK, EXIT_CONFIG, EXIT_VALIDATION = 0, 1, 2

_RUNNERS = {
    "fig2": harness.run_fig2,
    "fig3": harness.run_fig3,
    "fig4": harness.run_fig4,
    "detect": harness.run_detect,
    "estimate": harness.run_estimate,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="flowmeter", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in list(_RUNNERS) + ["validate"]:
        p = sub.add_parser(name)
        p.add_argument("--config", help="flat key=value configuration file")
        p.add_argument("--seed", type=int, help="base random seed")
        p.add_argument("--out", help="output directory for CSV tables")
        p.add_argument("--trials", type=int, help="Monte Carlo trials (detection and estimation)")
        p.add_argument("--threads", type=int, help="worker threads for independent evaluations")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a configuration key (repeatable)")
        if name == "validate":
            p.add_argument("--quick", action="store_true", help="smaller sample sizes")
    return parser


def _overrides(args: argparse.Namespace) -> dict[str, object]:
    out: dict[str, object] = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v
    if args.seed is not None:
        out["seed"] = args.seed
    if args.out is not None:
        out["out"] = args.out
    if args.threads is not None:
        out["threads"] = args.threads
    if args.trials is not None:
        out["trials"] = args.trials
        out["est_trials"] = args.trials
    return out


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    try:
        cfg = harness.load_config(args.config, _overrides(args))
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG

    if args.command == "validate":
        results = harness.run_validate(cfg.seed, quick=args.quick)
        table = harness.ResultTable(
            "validate", ("check", "passed"), [(k, float(r.passed)) for k, r in enumerate(results)],
            {f"check{k}": f"{r.name}: {r.detail}" for k, r in enumerate(results)},
        )
        harness.write_tables([table], cfg, cfg.out)
        for r in results:
            print(f"{'PASS' if r.passed else 'FAIL'} {r.name}: {r.detail}")
        return EXIT_OK if all(r.passed for r in results) else EXIT_VALIDATION

    try:
        tables = _RUNNERS[args.command](cfg)
    except (ConfigError, ValueError) as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    for path in harness.write_tables(tables, cfg, cfg.out):
        log.info("wrote %s", path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
