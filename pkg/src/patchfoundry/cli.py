"""Command-line entry point.

    patchfoundry synth --out archive/ --cameras 3 --frames 60
    patchfoundry gate --config pipeline.cfg
    patchfoundry cluster|views|register --config pipeline.cfg
    patchfoundry autoflag --config pipeline.cfg
    patchfoundry review-serve --config pipeline.cfg --port 8008
    patchfoundry sample|export|eval|dereg --config pipeline.cfg

Flags given on the command line override the config file.  `--config` is
optional when --input/--out are passed; defaults are the production
constants.
"""

from __future__ import annotations

import argparse
import logging
import sys

from .pipeline.config import PipelineConfig, load_config, save_config
from .pipeline.review import ReviewServer, review_autoflag
from .pipeline.stages import STAGE_ORDER, run_stage
from .pipeline.synth import PROFILES, make_synthetic_cameras


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="pipeline config file (key = value lines)")
    parser.add_argument("--input", help="archive root (overrides config input_root)")
    parser.add_argument("--out", help="output root (overrides config output_root)")
    parser.add_argument("--seed", type=int, help="global seed override")
    parser.add_argument("--jobs", type=int, help="worker threads")
    parser.add_argument("--force", action="store_true",
                        help="redo a completed stage after a config change")


def _resolve_config(args) -> PipelineConfig:
    config = load_config(args.config) if args.config else PipelineConfig()
    if args.input:
        config.input_root = args.input
    if args.out:
        config.output_root = args.out
    if args.seed is not None:
        config.seed = args.seed
    if args.jobs is not None:
        config.jobs = args.jobs
    return config


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="patchfoundry",
        description="Webcam time-lapse archives -> verified corresponding "
                    "patch datasets, with evaluation tools.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    synth = sub.add_parser("synth", help="generate a synthetic camera archive")
    synth.add_argument("--out", required=True, help="archive directory to create")
    synth.add_argument("--cameras", type=int, default=3)
    synth.add_argument("--frames", type=int, default=60)
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument("--size", type=int, default=720)
    synth.add_argument("--profiles",
                       help=f"comma list, one of {'|'.join(PROFILES)} per camera")

    for stage in STAGE_ORDER:
        stage_parser = sub.add_parser(stage, help=f"run the {stage} stage")
        _add_common(stage_parser)

    serve = sub.add_parser("review-serve", help="serve the manual-review API/UI")
    _add_common(serve)
    serve.add_argument("--port", type=int, default=8008)

    autoflag = sub.add_parser("autoflag", help="compute advisory review flags")
    _add_common(autoflag)

    init = sub.add_parser("init-config", help="write a config file with defaults")
    init.add_argument("path")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s")

    if args.command == "synth":
        profiles = args.profiles.split(",") if args.profiles else None
        dirs = make_synthetic_cameras(args.out, args.cameras, args.frames,
                                      seed=args.seed, profiles=profiles,
                                      size=args.size)
        print(f"wrote {len(dirs)} synthetic cameras under {args.out}")
        return 0

    if args.command == "init-config":
        save_config(args.path, PipelineConfig())
        print(f"wrote defaults to {args.path}")
        return 0

    config = _resolve_config(args)
    if args.command in STAGE_ORDER:
        summary = run_stage(args.command, config, force=args.force)
        print(f"{args.command}: {summary}")
        return 0

    if args.command == "autoflag":
        flags = review_autoflag(config)
        for view_id, fl in sorted(flags.items()):
            print(f"{view_id}: {', '.join(fl) if fl else '-'}")
        return 0

    if args.command == "review-serve":
        server = ReviewServer(config, port=args.port)
        print(f"review service on http://127.0.0.1:{server.port} (Ctrl-C stops)")
        try:
            server.serve_forever()
        except KeyboardInterrupt:
            pass
        return 0

    raise AssertionError(f"unhandled command {args.command}")


if __name__ == "__main__":
    sys.exit(main())
