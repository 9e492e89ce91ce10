"""Command-line entry point: ``reciprocity-lab {run,probe,ablate,instability}``."""
from __future__ import annotations

import argparse
import json
import logging
import sys

from .errors import ReciprocityLabError
from .harness import (
    ablation_run,
    influence_probe,
    instability_study,
    load_config,
    niceness_probe,
    run_experiment,
    with_ablation,
)
from .harness.runner import ABLATION_MODES

log = logging.getLogger("reciprocity_lab")


def _progress(row: dict) -> None:
    keys = ("window", "phase", "episodes", "collective_return", "own_coin_fraction",
            "contributions_total", "sustainability", "equality")
    print(" ".join(f"{k}={row[k]:.4g}" if isinstance(row[k], float) else f"{k}={row[k]}"
                   for k in keys if k in row), flush=True)


def _render(frame: str) -> None:
    print(frame + "\n", flush=True)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="reciprocity-lab",
                                     description="Train and analyse innovator/imitator agents on gridworlds.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="train every seed of a config")
    run.add_argument("--config", required=True)
    run.add_argument("--seed", type=int, action="append", help="override the config's seeds (repeatable)")
    run.add_argument("--render", action="store_true", help="print ASCII frames of the first episode")
    run.add_argument("--out", help="run directory (default: the config's output_dir)")

    probe = sub.add_parser("probe", help="analyse a finished run")
    probe_sub = probe.add_subparsers(dest="probe", required=True)
    nice = probe_sub.add_parser("niceness", help="niceness predictions bucketed by coin pickups")
    nice.add_argument("--run", required=True)
    nice.add_argument("--episodes", type=int, default=100)
    nice.add_argument("--seed", type=int)
    infl = probe_sub.add_parser("influence", help="lagged correlation of niceness increments")
    infl.add_argument("--run", required=True)
    infl.add_argument("--max-lag", type=int, default=5)
    infl.add_argument("--stream", choices=("auto", "metric", "network"), default="auto")

    ablate = sub.add_parser("ablate", help="train with one imitation component removed")
    ablate.add_argument("--config", required=True)
    ablate.add_argument("--mode", required=True, choices=ABLATION_MODES)
    ablate.add_argument("--out")

    inst = sub.add_parser("instability", help="continue training copies of a trained innovator")
    inst.add_argument("--checkpoint", required=True)
    inst.add_argument("--config", required=True)
    inst.add_argument("--frozen", action="store_true", help="non-learning copies (control)")
    inst.add_argument("--out")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "run":
            config = load_config(args.config)
            result = run_experiment(config, args.out, seeds=args.seed, progress=_progress,
                                    render=_render if args.render else None)
            print(f"run written to {result.directory}")
        elif args.command == "ablate":
            config = with_ablation(load_config(args.config), args.mode)
            out = args.out or f"{config.output_dir}_{args.mode}"
            result = ablation_run(config, out, progress=_progress)
            print(f"run written to {result.directory}")
        elif args.command == "instability":
            config = load_config(args.config)
            out = args.out or f"{config.output_dir}_instability"
            result = instability_study(args.checkpoint, config, out, frozen=args.frozen, progress=_progress)
            print(f"run written to {result.directory}")
        elif args.probe == "niceness":
            print(json.dumps(niceness_probe(args.run, args.episodes, args.seed), indent=2))
        else:
            print(json.dumps(influence_probe(args.run, args.max_lag, args.stream), indent=2))
    except (ReciprocityLabError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
