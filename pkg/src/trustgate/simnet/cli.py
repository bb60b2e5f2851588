"""Command-line entry point for the experiment harness.

    simnet tamper  [--config FILE] [--out DIR] [--seed N]
    simnet latency [--config FILE] [--out DIR] [--seed N]
    simnet ramp    [--config FILE] [--out DIR] [--seed N]
    simnet sizes   [--out DIR] [--max-n N]

Each run boots its own local fleet on free ports, drives the experiment,
and writes rows.csv, summary.json, and plot.png into the output directory.
"""

from __future__ import annotations

import argparse
import logging
import sys
from typing import List, Optional

from ..configio import load_config_file
from .experiments import (
    ExperimentConfig,
    default_config,
    run_latency_comparison,
    run_load_ramp,
    run_size_report,
    run_tamper_experiment,
)

_RUNNERS = {
    "tamper": run_tamper_experiment,
    "latency": run_latency_comparison,
    "ramp": run_load_ramp,
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="simnet", description="Run local multi-node experiments."
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="experiment", required=True)
    for name, text in (
        ("tamper", "tampering vs honest user, per-request outcomes"),
        ("latency", "end-to-end latency for empty vs full tokens"),
        ("ramp", "probe latency while background users spawn"),
    ):
        cmd = sub.add_parser(name, help=text)
        cmd.add_argument("--config", help="JSON or TOML experiment config overlay")
        cmd.add_argument("--out", default=f"simnet-{name}", help="output directory")
        cmd.add_argument("--seed", type=int, help="override the schedule seed")
    sizes = sub.add_parser("sizes", help="token wire size by algorithm")
    sizes.add_argument("--out", default="simnet-sizes", help="output directory")
    sizes.add_argument("--max-n", type=int, default=100, help="largest attestation count")
    return parser


def _print_highlights(name: str, summary: dict) -> None:
    stats = summary["stats"]
    if name == "tamper":
        observed = summary["observed"]
        groups = stats["groups"]
        print(
            f"tamper: {stats['tamper_denied']} denied, "
            f"honest: {stats['honest_forwarded']} forwarded "
            f"(final score {observed['honest_final_score']}); "
            f"origin contacts during tampering: {observed['origin_contacts_during_tamper']}"
        )
        print(
            f"median latency: deny {1000 * groups['tamper']['median']:.2f} ms, "
            f"forward {1000 * groups['honest']['median']:.2f} ms"
        )
    elif name == "latency":
        groups = stats["groups"]
        print(
            f"median latency: empty token {1000 * groups['zero']['median']:.2f} ms, "
            f"full token {1000 * groups['full']['median']:.2f} ms "
            f"(mean diff {1000 * stats['mean_diff_seconds']:.3f} ms)"
        )
        diff = summary["observed"].get("verify_mean_diff_micros")
        if diff is not None:
            print(f"verification-phase mean difference: {diff:.0f} us")
    elif name == "ramp":
        phases = ", ".join(f"{1000 * seg['mean']:.2f} ms" for seg in stats["segments"])
        print(
            f"{summary['observed']['background_users_spawned']} users spawned; "
            f"probe phases: {phases}; "
            f"monotone non-decreasing: {stats['monotone_segmented']}"
        )
    elif name == "sizes":
        for algorithm, line in sorted(stats.items()):
            print(
                f"{algorithm}: {line['intercept']} bytes + "
                f"{line['slope']} bytes/attestation"
            )


def main(argv: Optional[List[str]] = None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    if args.experiment == "sizes":
        result = run_size_report(max_n=args.max_n, out_dir=args.out)
    else:
        cfg = default_config(args.experiment)
        if args.config:
            cfg = ExperimentConfig.from_dict(load_config_file(args.config), base=cfg)
        if args.seed is not None:
            cfg.seed = args.seed
        try:
            result = _RUNNERS[args.experiment](cfg, out_dir=args.out)
        except RuntimeError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 1
    _print_highlights(args.experiment, result.summary)
    print(f"results in {args.out}/ (rows.csv, summary.json, plot.png)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
