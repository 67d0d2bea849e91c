"""Command line front end.

Three commands:

- ``trackbench generate <gen.json> -o <dir>`` renders synthetic
  sequences to disk, one directory per scene.
- ``trackbench run <spec.json> -o <dir>`` validates an experiment spec
  and runs the full sweep; ``-o`` falls back to the spec's own output
  field.  ``--workers`` falls back to the TRACKBENCH_WORKERS env var,
  then to 1.
- ``trackbench plot <report.json> -o <dir>`` rebuilds the SVG figures
  from an existing report, either a top-level experiment report or a
  single cell report.

Exit codes: 0 on success, 1 when the inputs fail validation, 2 when the
run itself fails.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from .errors import TrackbenchError
from .experiment import (
    parse_generator,
    run_experiment,
    spec_from_payload,
    validate_spec,
)
from .plots import write_figures
from .seeding import derive_seed
from .sequence import save_sequence
from .stats import report_from_payload
from .synth import SequenceConfig, generate

_VALIDATION_EXIT = 1
_RUNTIME_EXIT = 2


def _fail(message: str, code: int) -> int:
    print(f"error: {message}", file=sys.stderr)
    return code


def _load_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise TrackbenchError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise TrackbenchError(f"{path} is not valid JSON: {exc}") from exc


def _cmd_generate(args) -> int:
    try:
        payload = _load_json(args.config)
        if not isinstance(payload, dict):
            raise TrackbenchError("generator config must be a JSON object")
        seed = payload.pop("seed", 0)
        if args.seed is not None:
            seed = args.seed
        if not isinstance(seed, int) or isinstance(seed, bool):
            raise TrackbenchError("seed must be an integer")
        gen = parse_generator(payload)
    except TrackbenchError as exc:
        return _fail(str(exc), _VALIDATION_EXIT)
    try:
        from pathlib import Path

        outdir = Path(args.output)
        for i in range(gen.scenes):
            config = SequenceConfig(
                scene_seed=derive_seed(seed, "scene", i),
                trajectory=gen.trajectory,
                scene_id=f"{gen.prefix}{i:03d}",
                keep_depth=gen.keep_depth,
                cloud_keyframe=gen.cloud_keyframe,
            )
            bundle = generate(config)
            save_sequence(bundle, outdir / bundle.scene_id)
            print(f"wrote {outdir / bundle.scene_id} ({len(bundle.frames)} frames)")
    except Exception as exc:
        return _fail(str(exc), _RUNTIME_EXIT)
    return 0


def _resolve_workers(args) -> int:
    if args.workers is not None:
        workers = args.workers
    else:
        env = os.environ.get("TRACKBENCH_WORKERS", "")
        if env:
            try:
                workers = int(env)
            except ValueError:
                raise TrackbenchError(f"TRACKBENCH_WORKERS is not an integer: {env!r}")
        else:
            workers = 1
    if workers < 1:
        raise TrackbenchError(f"worker count must be >= 1, got {workers}")
    return workers


def _cmd_run(args) -> int:
    try:
        spec = validate_spec(args.spec)
        if args.seed is not None:
            from dataclasses import replace

            spec = replace(spec, seed=args.seed)
        workers = _resolve_workers(args)
        outdir = args.output or spec.output
        if outdir is None:
            raise TrackbenchError("no output directory: pass -o or set output in the spec")
    except TrackbenchError as exc:
        return _fail(str(exc), _VALIDATION_EXIT)
    try:
        aggregates = run_experiment(spec, outdir, workers=workers)
    except Exception as exc:
        return _fail(str(exc), _RUNTIME_EXIT)
    print(f"wrote {outdir}/report.json ({len(aggregates)} aggregates, workers={workers})")
    return 0


def _cmd_plot(args) -> int:
    try:
        payload = _load_json(args.report)
        if isinstance(payload, dict) and "aggregates" in payload:
            reports = [report_from_payload(p) for p in payload["aggregates"]]
        elif isinstance(payload, dict) and "metadata" in payload:
            reports = [report_from_payload(payload)]
        else:
            raise TrackbenchError(f"{args.report} is not a stat report or experiment report")
        if not reports:
            raise TrackbenchError(f"{args.report} holds no reports to plot")
    except TrackbenchError as exc:
        return _fail(str(exc), _VALIDATION_EXIT)
    except (KeyError, TypeError, ValueError) as exc:
        return _fail(f"malformed report {args.report}: {exc!r}", _VALIDATION_EXIT)
    try:
        names = write_figures(reports, args.output)
    except Exception as exc:
        return _fail(str(exc), _RUNTIME_EXIT)
    print(f"wrote {len(names)} figures to {args.output}")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="trackbench",
        description="Feature-track error measurement bench",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="render synthetic sequences to disk")
    gen.add_argument("config", help="generator config JSON")
    gen.add_argument("-o", "--output", required=True, help="output directory")
    gen.add_argument("--seed", type=int, default=None, help="override the config seed")
    gen.set_defaults(func=_cmd_generate)

    run = sub.add_parser("run", help="run a full experiment sweep")
    run.add_argument("spec", help="experiment spec JSON")
    run.add_argument("-o", "--output", default=None, help="output directory")
    run.add_argument("--seed", type=int, default=None, help="override the spec seed")
    run.add_argument(
        "--workers", type=int, default=None,
        help="worker processes (default: TRACKBENCH_WORKERS or 1)",
    )
    run.set_defaults(func=_cmd_run)

    plot = sub.add_parser("plot", help="rebuild figures from a report")
    plot.add_argument("report", help="report.json to plot")
    plot.add_argument("-o", "--output", required=True, help="output directory")
    plot.set_defaults(func=_cmd_plot)
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
