"""Batch experiment orchestration over (scene x tracker x speed) cells.

An experiment spec names its input (a synthetic generator config or a
list of sequence directories), the ground-truth protocol, the tracker
configs and playback speeds to sweep, the rejection percentile, and the
seed.  ``run_experiment`` renders or loads every scene up front, runs
each cell through the full pipeline (subsample, track, anchor, reject,
summarize), then aggregates across scenes per (tracker, speed) and
writes every artifact: per-cell reports, aggregate reports, SVG figures
with CSV backing, and a top-level ``report.json``.

Cells execute in a worker pool when asked; results are reduced by the
parent alone, in a fixed cell order, so the emitted bytes do not depend
on the worker count.  Any cell failure aborts the whole run with the
scene, tracker, and speed in the message; partial statistics are worse
than none.
"""

from __future__ import annotations

import json
import math
import multiprocessing
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .errors import FormatError, MissingStream, ProtocolMismatch
from .groundtruth import GroundTruthTrack, annotate_tracks, percentile_reject
from .plots import write_figures
from .sequence import SequenceBundle, SpeedFactor, apply_speed, load_sequence
from .stats import (
    LifetimeHistogram,
    OutlierRatio,
    StatReport,
    age_stats,
    lifetimes,
    outlier_ratios,
    report_payload,
    timestep_stats,
    write_report,
)
from .seeding import derive_seed
from .synth import SequenceConfig, TrajectorySpec, generate
from .tracking import CORRESPONDENCE, DIFFERENTIAL, TrackerConfig, run_tracker

_PROTOCOLS = ("age", "timestep")
_KINDS = (DIFFERENTIAL, CORRESPONDENCE)


@dataclass(frozen=True)
class GeneratorInput:
    """Synthetic input: ``scenes`` rendered variants of the stock scene."""

    trajectory: TrajectorySpec
    scenes: int = 1
    prefix: str = "synth"
    cloud_keyframe: int | None = None
    keep_depth: bool = True


@dataclass(frozen=True)
class DirectoryInput:
    """On-disk input: one sequence directory per scene."""

    directories: tuple[str, ...]
    motion: str = "unknown"


@dataclass(frozen=True)
class ExperimentSpec:
    input: GeneratorInput | DirectoryInput
    protocol: str = "age"  # age: depth anchors; timestep: keyframe cloud anchors
    trackers: tuple[TrackerConfig, ...] = (
        TrackerConfig(kind=DIFFERENTIAL),
        TrackerConfig(kind=CORRESPONDENCE),
    )
    speeds: tuple[int, ...] = (1,)
    percentile_q: float = 90.0
    min_count: int = 100
    seed: int = 0
    output: str | None = None

    @property
    def anchor_mode(self) -> str:
        return "depth" if self.protocol == "age" else "cloud"


# --- spec parsing ---


def _typed(payload, want, what):
    # bools are ints to isinstance, but never what a numeric field means
    if not isinstance(payload, want) or isinstance(payload, bool):
        names = want.__name__ if isinstance(want, type) else "/".join(t.__name__ for t in want)
        raise FormatError(f"{what} must be {names}, got {type(payload).__name__}")
    return payload


def _known_keys(payload: dict, allowed, what: str) -> None:
    unknown = sorted(set(payload) - set(allowed))
    if unknown:
        raise FormatError(f"{what} has unknown keys: {', '.join(unknown)}")


def parse_trajectory(payload: dict) -> TrajectorySpec:
    _typed(payload, dict, "trajectory")
    _known_keys(
        payload,
        ("kind", "frames", "fps", "baseline", "radius", "arc_degrees", "target", "waypoints"),
        "trajectory",
    )
    if "kind" not in payload or "frames" not in payload:
        raise FormatError("trajectory needs kind and frames")
    kw = {
        "kind": _typed(payload["kind"], str, "trajectory.kind"),
        "frames": _typed(payload["frames"], int, "trajectory.frames"),
    }
    for key in ("fps", "baseline", "radius"):
        if key in payload:
            kw[key] = float(_typed(payload[key], (int, float), f"trajectory.{key}"))
    if "arc_degrees" in payload:
        kw["arc"] = math.radians(
            float(_typed(payload["arc_degrees"], (int, float), "trajectory.arc_degrees"))
        )
    if "target" in payload:
        target = _typed(payload["target"], list, "trajectory.target")
        if len(target) != 3:
            raise FormatError("trajectory.target must have 3 entries")
        kw["target"] = tuple(float(v) for v in target)
    if "waypoints" in payload:
        points = _typed(payload["waypoints"], list, "trajectory.waypoints")
        parsed = []
        for entry in points:
            if not (isinstance(entry, list) and len(entry) == 2):
                raise FormatError("each waypoint must be [position, quaternion]")
            pos, quat = entry
            if len(pos) != 3 or len(quat) != 4:
                raise FormatError("waypoint needs a 3-vector position and 4-vector quaternion")
            parsed.append(
                (np.array([float(v) for v in pos]), np.array([float(v) for v in quat]))
            )
        kw["waypoints"] = tuple(parsed)
    return TrajectorySpec(**kw)


def parse_generator(payload: dict) -> GeneratorInput:
    _typed(payload, dict, "generator input")
    _known_keys(
        payload,
        ("trajectory", "scenes", "prefix", "cloud_keyframe", "keep_depth"),
        "generator input",
    )
    if "trajectory" not in payload:
        raise FormatError("generator input needs a trajectory")
    kw = {"trajectory": parse_trajectory(payload["trajectory"])}
    if "scenes" in payload:
        kw["scenes"] = _typed(payload["scenes"], int, "generator.scenes")
        if kw["scenes"] < 1:
            raise FormatError("generator.scenes must be >= 1")
    if "prefix" in payload:
        kw["prefix"] = _typed(payload["prefix"], str, "generator.prefix")
    if payload.get("cloud_keyframe") is not None:
        kw["cloud_keyframe"] = _typed(payload["cloud_keyframe"], int, "generator.cloud_keyframe")
        if not 0 <= kw["cloud_keyframe"] < kw["trajectory"].frames:
            raise FormatError("generator.cloud_keyframe outside the frame range")
    if "keep_depth" in payload:
        if not isinstance(payload["keep_depth"], bool):
            raise FormatError("generator.keep_depth must be a boolean")
        kw["keep_depth"] = payload["keep_depth"]
    return GeneratorInput(**kw)


def _parse_tracker(entry) -> TrackerConfig:
    if isinstance(entry, str):
        entry = {"kind": entry}
    _typed(entry, dict, "tracker entry")
    if "kind" not in entry:
        raise FormatError("tracker entry needs a kind")
    if entry["kind"] not in _KINDS:
        raise FormatError(f"unknown tracker kind {entry['kind']!r}")
    _known_keys(entry, [f.name for f in fields(TrackerConfig)], "tracker entry")
    try:
        return TrackerConfig(**entry)
    except (TypeError, ValueError) as exc:
        raise FormatError(f"bad tracker config: {exc}") from exc


def spec_from_payload(payload: dict, base_dir: Path | None = None) -> ExperimentSpec:
    """Normalizes a parsed JSON spec into an ExperimentSpec with defaults."""
    _typed(payload, dict, "experiment spec")
    _known_keys(
        payload,
        ("input", "protocol", "trackers", "speeds", "percentile", "min_count", "seed", "output"),
        "experiment spec",
    )
    if "input" not in payload:
        raise FormatError("experiment spec needs an input")
    source = _typed(payload["input"], dict, "input")
    _known_keys(source, ("generator", "directories", "motion"), "input")
    if ("generator" in source) == ("directories" in source):
        raise FormatError("input needs exactly one of generator or directories")
    if "generator" in source:
        spec_input = parse_generator(source["generator"])
    else:
        dirs = _typed(source["directories"], list, "input.directories")
        if not dirs:
            raise FormatError("input.directories is empty")
        base = base_dir or Path(".")
        resolved = tuple(str(base / _typed(d, str, "directory entry")) for d in dirs)
        motion = source.get("motion", "unknown")
        spec_input = DirectoryInput(directories=resolved, motion=_typed(motion, str, "input.motion"))

    kw: dict = {"input": spec_input}
    if "protocol" in payload:
        protocol = _typed(payload["protocol"], str, "protocol")
        if protocol not in _PROTOCOLS:
            raise FormatError(f"protocol must be one of {_PROTOCOLS}, got {protocol!r}")
        kw["protocol"] = protocol
    if "trackers" in payload:
        entries = _typed(payload["trackers"], list, "trackers")
        if not entries:
            raise FormatError("trackers is empty")
        kw["trackers"] = tuple(_parse_tracker(e) for e in entries)
    if "speeds" in payload:
        speeds = _typed(payload["speeds"], list, "speeds")
        if not speeds:
            raise FormatError("speeds is empty")
        for s in speeds:
            if not isinstance(s, int) or isinstance(s, bool) or s < 1:
                raise FormatError(f"speeds entries must be integers >= 1, got {s!r}")
        if len(set(speeds)) != len(speeds):
            raise FormatError("speeds entries must be unique")
        kw["speeds"] = tuple(speeds)
    if "percentile" in payload:
        q = float(_typed(payload["percentile"], (int, float), "percentile"))
        if not 0.0 < q <= 100.0:
            raise FormatError("percentile must be in (0, 100]")
        kw["percentile_q"] = q
    if "min_count" in payload:
        kw["min_count"] = _typed(payload["min_count"], int, "min_count")
        if kw["min_count"] < 1:
            raise FormatError("min_count must be >= 1")
    if "seed" in payload:
        kw["seed"] = _typed(payload["seed"], int, "seed")
    if "output" in payload and payload["output"] is not None:
        out = _typed(payload["output"], str, "output")
        kw["output"] = str((base_dir or Path(".")) / out)
    spec = ExperimentSpec(**kw)
    _check_protocol(spec)
    return spec


def _check_protocol(spec: ExperimentSpec) -> None:
    """Ground truth source and protocol must agree, per input kind."""
    if isinstance(spec.input, GeneratorInput):
        gen = spec.input
        if spec.protocol == "timestep":
            if gen.cloud_keyframe is None:
                raise ProtocolMismatch(
                    "timestep protocol needs a keyframe cloud; set generator.cloud_keyframe"
                )
            bad = [s for s in spec.speeds if gen.cloud_keyframe % s != 0]
            if bad:
                raise ProtocolMismatch(
                    f"cloud keyframe {gen.cloud_keyframe} is dropped at speeds {bad}"
                )
        elif not gen.keep_depth:
            raise ProtocolMismatch("age protocol needs per-frame depth; keep_depth is false")
        return
    for directory in spec.input.directories:
        root = Path(directory)
        n_frames = len(list(root.glob("frames/*.pgm")))
        if n_frames == 0:
            raise MissingStream(f"{root}: no frames/*.pgm")
        if spec.protocol == "timestep":
            if not (root / "cloud.csv").is_file():
                raise ProtocolMismatch(f"{root}: timestep protocol needs cloud.csv")
        else:
            n_depth = len(list(root.glob("depth/*.pfm")))
            if n_depth != n_frames:
                raise ProtocolMismatch(
                    f"{root}: age protocol needs depth for every frame "
                    f"({n_depth} depth rasters, {n_frames} frames)"
                )


def validate_spec(path) -> ExperimentSpec:
    """Parses and validates a JSON experiment spec file."""
    path = Path(path)
    try:
        with open(path) as fh:
            payload = json.load(fh)
    except OSError as exc:
        raise FormatError(f"cannot read spec {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"spec {path} is not valid JSON: {exc}") from exc
    return spec_from_payload(payload, base_dir=path.parent)


def spec_payload(spec: ExperimentSpec) -> dict:
    """Normalized spec echo with every default made explicit."""
    traj_or_dirs: dict
    if isinstance(spec.input, GeneratorInput):
        t = spec.input.trajectory
        traj_or_dirs = {
            "generator": {
                "trajectory": {
                    "kind": t.kind,
                    "frames": t.frames,
                    "fps": float(t.fps),
                    "baseline": float(t.baseline),
                    "radius": float(t.radius),
                    "arc_degrees": float(math.degrees(t.arc)),
                    "target": [float(v) for v in t.target],
                    "waypoints": [
                        [[float(v) for v in pos], [float(v) for v in quat]]
                        for pos, quat in t.waypoints
                    ],
                },
                "scenes": spec.input.scenes,
                "prefix": spec.input.prefix,
                "cloud_keyframe": spec.input.cloud_keyframe,
                "keep_depth": spec.input.keep_depth,
            }
        }
    else:
        traj_or_dirs = {
            "directories": list(spec.input.directories),
            "motion": spec.input.motion,
        }
    return {
        "input": traj_or_dirs,
        "protocol": spec.protocol,
        "trackers": [
            {f.name: getattr(cfg, f.name) for f in fields(TrackerConfig)}
            for cfg in spec.trackers
        ],
        "speeds": list(spec.speeds),
        "percentile": float(spec.percentile_q),
        "min_count": spec.min_count,
        "seed": spec.seed,
        "output": spec.output,
    }


# --- execution ---


@dataclass(frozen=True)
class _Cell:
    index: int
    scene_pos: int
    scene_id: str
    tracker_pos: int
    speed: int


_G: dict = {}


def _init_worker(scenes, trackers, protocol, q, min_count, seed) -> None:
    _G["scenes"] = scenes
    _G["trackers"] = trackers
    _G["protocol"] = protocol
    _G["q"] = q
    _G["min_count"] = min_count
    _G["seed"] = seed


def _run_cell(cell: _Cell):
    cfg: TrackerConfig = _G["trackers"][cell.tracker_pos]
    try:
        bundle: SequenceBundle = _G["scenes"][cell.scene_pos]
        sped = apply_speed(bundle, SpeedFactor(cell.speed))
        seed = derive_seed(_G["seed"], "cell", cell.scene_id, cfg.kind, cell.speed)
        tracks, attributions = run_tracker(sped, cfg, seed=seed)
        anchor = "depth" if _G["protocol"] == "age" else "cloud"
        annotated = annotate_tracks(sped, tracks, anchor=anchor)
        kept = percentile_reject(annotated, _G["q"])
        report = StatReport(
            scene_ids=(cell.scene_id,),
            tracker=cfg.kind,
            motion=bundle.motion,
            speed=cell.speed,
            seed=_G["seed"],
            config_hash=cfg.config_hash(),
            anchor_mode=anchor,
            percentile_q=_G["q"],
            min_count=_G["min_count"],
            timestep=timestep_stats(kept, _G["min_count"]),
            age=age_stats(kept, _G["min_count"]),
            outliers=outlier_ratios(attributions),
            lifetime=lifetimes(tracks),
        )
        return cell.index, report, kept
    except Exception as exc:
        raise RuntimeError(
            f"cell scene={cell.scene_id} tracker={cfg.kind} speed={cell.speed}: {exc}"
        ) from exc


def _load_scenes(spec: ExperimentSpec) -> list[SequenceBundle]:
    if isinstance(spec.input, DirectoryInput):
        return [
            load_sequence(Path(d), motion=spec.input.motion)
            for d in spec.input.directories
        ]
    gen = spec.input
    bundles = []
    for i in range(gen.scenes):
        config = SequenceConfig(
            scene_seed=derive_seed(spec.seed, "scene", i),
            trajectory=gen.trajectory,
            scene_id=f"{gen.prefix}{i:03d}",
            keep_depth=gen.keep_depth,
            cloud_keyframe=gen.cloud_keyframe,
        )
        bundles.append(generate(config))
    return bundles


def _tracker_labels(trackers) -> list[str]:
    seen: dict[str, int] = {}
    labels = []
    for cfg in trackers:
        n = seen.get(cfg.kind, 0)
        seen[cfg.kind] = n + 1
        labels.append(cfg.kind if n == 0 else f"{cfg.kind}-{n + 1}")
    return labels


def _merge_outliers(reports: list[StatReport]) -> list[OutlierRatio]:
    sums: dict[int, list[int]] = {}
    for report in reports:
        for row in report.outliers:
            acc = sums.setdefault(row.frame, [0, 0, 0, 0])
            acc[0] += row.f0
            acc[1] += row.f1
            acc[2] += row.f2
            acc[3] += row.f_prev
    return [OutlierRatio(f, *sums[f]) for f in sorted(sums)]


def _merge_lifetimes(reports: list[StatReport]) -> LifetimeHistogram:
    counts: dict[int, int] = {}
    for report in reports:
        for lifetime, n in report.lifetime.counts.items():
            counts[lifetime] = counts.get(lifetime, 0) + n
    return LifetimeHistogram(dict(sorted(counts.items())))


def run_experiment(
    spec: ExperimentSpec, outdir, workers: int = 1
) -> list[StatReport]:
    """Runs the full sweep and writes every artifact under ``outdir``.

    Returns the aggregate reports, one per (tracker, speed), in sweep
    order.  Output bytes are identical for any worker count.
    """
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    scenes = _load_scenes(spec)
    labels = _tracker_labels(spec.trackers)
    cells = []
    for scene_pos, bundle in enumerate(scenes):
        for tracker_pos in range(len(spec.trackers)):
            for speed in spec.speeds:
                cells.append(
                    _Cell(len(cells), scene_pos, bundle.scene_id, tracker_pos, speed)
                )

    initargs = (
        scenes,
        spec.trackers,
        spec.protocol,
        spec.percentile_q,
        spec.min_count,
        spec.seed,
    )
    if workers <= 1:
        _init_worker(*initargs)
        results = [_run_cell(cell) for cell in cells]
    else:
        with multiprocessing.get_context().Pool(
            processes=workers, initializer=_init_worker, initargs=initargs
        ) as pool:
            results = pool.map(_run_cell, cells, chunksize=1)
    results.sort(key=lambda row: row[0])

    cell_index = []
    for cell, (_, report, kept) in zip(cells, results):
        rel = f"cells/{cell.scene_id}/{labels[cell.tracker_pos]}-s{cell.speed}"
        write_report(report, outdir / rel)
        cell_index.append(
            {
                "scene_id": cell.scene_id,
                "tracker": report.tracker,
                "speed": cell.speed,
                "path": f"{rel}/report.json",
                "tracks": report.lifetime.total,
                "kept": len(kept),
            }
        )

    aggregates = []
    for tracker_pos, cfg in enumerate(spec.trackers):
        for speed in spec.speeds:
            rows = [
                (report, kept)
                for cell, (_, report, kept) in zip(cells, results)
                if cell.tracker_pos == tracker_pos and cell.speed == speed
            ]
            pooled: list[GroundTruthTrack] = [t for _, kept in rows for t in kept]
            cell_reports = [report for report, _ in rows]
            motions = sorted({r.motion for r in cell_reports})
            agg = StatReport(
                scene_ids=tuple(b.scene_id for b in scenes),
                tracker=cfg.kind,
                motion=motions[0] if len(motions) == 1 else "mixed",
                speed=speed,
                seed=spec.seed,
                config_hash=cfg.config_hash(),
                anchor_mode=spec.anchor_mode,
                percentile_q=spec.percentile_q,
                min_count=spec.min_count,
                timestep=timestep_stats(pooled, spec.min_count),
                age=age_stats(pooled, spec.min_count),
                outliers=_merge_outliers(cell_reports),
                lifetime=_merge_lifetimes(cell_reports),
            )
            write_report(agg, outdir / "aggregate" / f"{labels[tracker_pos]}-s{speed}")
            aggregates.append(agg)

    figures = write_figures(aggregates, outdir / "plots")
    payload = {
        "spec": spec_payload(spec),
        "cells": cell_index,
        "aggregates": [report_payload(a) for a in aggregates],
        "figures": figures,
    }
    with open(outdir / "report.json", "w", newline="") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")
    return aggregates
