"""Experiment spec parsing, protocol validation, and the full sweep.

Parsing tests are pure; the end-to-end tests render a deliberately tiny
scene so the whole module stays in the tens of seconds.  Determinism is
checked at the byte level across repeat runs and worker counts, because
the report files are the product and diffs on them must mean something.
"""

import json
from pathlib import Path

import numpy as np
import pytest

from trackbench.errors import FormatError, MissingStream, ProtocolMismatch
from trackbench.experiment import (
    DirectoryInput,
    ExperimentSpec,
    GeneratorInput,
    _merge_lifetimes,
    _merge_outliers,
    _tracker_labels,
    parse_generator,
    parse_trajectory,
    run_experiment,
    spec_from_payload,
    spec_payload,
    validate_spec,
)
from trackbench.stats import (
    LifetimeHistogram,
    OutlierRatio,
    StatReport,
    read_report_json,
)
from trackbench.tracking import CORRESPONDENCE, DIFFERENTIAL, TrackerConfig


def base_payload(**overrides):
    payload = {
        "input": {
            "generator": {
                "trajectory": {"kind": "sideways", "frames": 8, "baseline": 0.3},
            }
        },
    }
    payload.update(overrides)
    return payload


class TestTrajectoryParsing:
    def test_minimal(self):
        t = parse_trajectory({"kind": "fixating", "frames": 12})
        assert t.kind == "fixating" and t.frames == 12

    def test_arc_degrees_converts_to_radians(self):
        t = parse_trajectory({"kind": "fixating", "frames": 4, "arc_degrees": 90})
        assert t.arc == pytest.approx(np.pi / 2)

    def test_waypoints(self):
        t = parse_trajectory(
            {
                "kind": "arvr",
                "frames": 4,
                "waypoints": [[[0, 0, 0], [1, 0, 0, 0]], [[1, 0, 0], [1, 0, 0, 0]]],
            }
        )
        assert len(t.waypoints) == 2
        assert np.array_equal(t.waypoints[1][0], [1.0, 0.0, 0.0])

    def test_missing_kind_rejected(self):
        with pytest.raises(FormatError):
            parse_trajectory({"frames": 4})

    def test_unknown_key_rejected(self):
        with pytest.raises(FormatError, match="unknown keys: wobble"):
            parse_trajectory({"kind": "sideways", "frames": 4, "wobble": 1})

    def test_bad_waypoint_shape_rejected(self):
        with pytest.raises(FormatError):
            parse_trajectory(
                {"kind": "arvr", "frames": 4, "waypoints": [[[0, 0], [1, 0, 0, 0]]]}
            )

    def test_bool_frames_rejected(self):
        with pytest.raises(FormatError):
            parse_trajectory({"kind": "sideways", "frames": True})


class TestGeneratorParsing:
    def test_defaults(self):
        gen = parse_generator({"trajectory": {"kind": "sideways", "frames": 4}})
        assert gen.scenes == 1 and gen.prefix == "synth"
        assert gen.cloud_keyframe is None and gen.keep_depth

    def test_cloud_keyframe_range_checked(self):
        with pytest.raises(FormatError, match="outside the frame range"):
            parse_generator(
                {"trajectory": {"kind": "sideways", "frames": 4}, "cloud_keyframe": 4}
            )

    def test_zero_scenes_rejected(self):
        with pytest.raises(FormatError):
            parse_generator({"trajectory": {"kind": "sideways", "frames": 4}, "scenes": 0})


class TestSpecParsing:
    def test_defaults(self):
        spec = spec_from_payload(base_payload())
        assert spec.protocol == "age" and spec.anchor_mode == "depth"
        assert [c.kind for c in spec.trackers] == [DIFFERENTIAL, CORRESPONDENCE]
        assert spec.speeds == (1,)
        assert spec.percentile_q == 90.0 and spec.min_count == 100
        assert spec.seed == 0 and spec.output is None

    def test_unknown_top_level_key_rejected(self):
        with pytest.raises(FormatError, match="unknown keys"):
            spec_from_payload(base_payload(tolerance=3))

    def test_both_inputs_rejected(self):
        payload = base_payload()
        payload["input"]["directories"] = ["x"]
        with pytest.raises(FormatError, match="exactly one"):
            spec_from_payload(payload)

    def test_neither_input_rejected(self):
        with pytest.raises(FormatError, match="exactly one"):
            spec_from_payload({"input": {}})

    def test_tracker_shorthand_matches_dict_form(self):
        a = spec_from_payload(base_payload(trackers=["differential"]))
        b = spec_from_payload(base_payload(trackers=[{"kind": "differential"}]))
        assert a.trackers == b.trackers == (TrackerConfig(kind=DIFFERENTIAL),)

    def test_tracker_overrides(self):
        spec = spec_from_payload(
            base_payload(trackers=[{"kind": "differential", "window_radius": 7}])
        )
        assert spec.trackers[0].window_radius == 7

    def test_unknown_tracker_kind_rejected(self):
        with pytest.raises(FormatError, match="unknown tracker kind"):
            spec_from_payload(base_payload(trackers=["census"]))

    def test_unknown_tracker_field_rejected(self):
        with pytest.raises(FormatError, match="unknown keys"):
            spec_from_payload(base_payload(trackers=[{"kind": "differential", "win": 3}]))

    @pytest.mark.parametrize("speeds", [[], [0], [2.5], [True], [1, 1]])
    def test_bad_speeds_rejected(self, speeds):
        with pytest.raises(FormatError):
            spec_from_payload(base_payload(speeds=speeds))

    @pytest.mark.parametrize("q", [0, -5, 101])
    def test_bad_percentile_rejected(self, q):
        with pytest.raises(FormatError):
            spec_from_payload(base_payload(percentile=q))

    def test_bad_protocol_rejected(self):
        with pytest.raises(FormatError):
            spec_from_payload(base_payload(protocol="frame"))

    def test_output_resolved_against_base_dir(self):
        spec = spec_from_payload(base_payload(output="out"), base_dir=Path("/tmp/exp"))
        assert spec.output == str(Path("/tmp/exp") / "out")

    def test_normalized_echo_round_trips(self):
        payload = base_payload(
            trackers=[{"kind": "correspondence", "match_threshold": 0.5}],
            speeds=[1, 4],
            percentile=80,
            min_count=7,
            seed=11,
        )
        spec = spec_from_payload(payload)
        again = spec_from_payload(spec_payload(spec))
        assert again == spec


class TestProtocolChecks:
    def test_timestep_needs_cloud_keyframe(self):
        with pytest.raises(ProtocolMismatch, match="keyframe cloud"):
            spec_from_payload(base_payload(protocol="timestep"))

    def test_timestep_keyframe_must_survive_every_speed(self):
        payload = base_payload(protocol="timestep", speeds=[1, 2])
        payload["input"]["generator"]["cloud_keyframe"] = 3
        with pytest.raises(ProtocolMismatch, match="dropped at speeds"):
            spec_from_payload(payload)

    def test_timestep_with_surviving_keyframe_passes(self):
        payload = base_payload(protocol="timestep", speeds=[1, 2])
        payload["input"]["generator"]["cloud_keyframe"] = 4
        spec = spec_from_payload(payload)
        assert spec.anchor_mode == "cloud"

    def test_age_needs_depth(self):
        payload = base_payload()
        payload["input"]["generator"]["keep_depth"] = False
        with pytest.raises(ProtocolMismatch, match="depth"):
            spec_from_payload(payload)

    @staticmethod
    def fake_sequence_dir(root, frames=3, depth=3, cloud=False):
        (root / "frames").mkdir(parents=True)
        for i in range(frames):
            (root / "frames" / f"{i:06d}.pgm").touch()
        if depth:
            (root / "depth").mkdir()
            for i in range(depth):
                (root / "depth" / f"{i:06d}.pfm").touch()
        if cloud:
            (root / "cloud.csv").touch()
        return root

    def test_directory_without_frames_rejected(self, tmp_path):
        (tmp_path / "seq").mkdir()
        payload = {"input": {"directories": ["seq"]}}
        with pytest.raises(MissingStream, match="no frames"):
            spec_from_payload(payload, base_dir=tmp_path)

    def test_directory_age_needs_full_depth(self, tmp_path):
        self.fake_sequence_dir(tmp_path / "seq", frames=3, depth=2)
        payload = {"input": {"directories": ["seq"]}}
        with pytest.raises(ProtocolMismatch, match="depth for every frame"):
            spec_from_payload(payload, base_dir=tmp_path)

    def test_directory_timestep_needs_cloud(self, tmp_path):
        self.fake_sequence_dir(tmp_path / "seq", cloud=False)
        payload = {"input": {"directories": ["seq"]}, "protocol": "timestep"}
        with pytest.raises(ProtocolMismatch, match="cloud.csv"):
            spec_from_payload(payload, base_dir=tmp_path)

    def test_complete_directory_passes(self, tmp_path):
        self.fake_sequence_dir(tmp_path / "seq", cloud=True)
        payload = {"input": {"directories": ["seq"], "motion": "sideways"}}
        spec = spec_from_payload(payload, base_dir=tmp_path)
        assert isinstance(spec.input, DirectoryInput)
        assert spec.input.motion == "sideways"
        assert spec.input.directories == (str(tmp_path / "seq"),)


class TestValidateSpec:
    def test_missing_file(self, tmp_path):
        with pytest.raises(FormatError, match="cannot read"):
            validate_spec(tmp_path / "absent.json")

    def test_invalid_json(self, tmp_path):
        path = tmp_path / "spec.json"
        path.write_text("{nope")
        with pytest.raises(FormatError, match="not valid JSON"):
            validate_spec(path)

    def test_valid_file(self, tmp_path):
        path = tmp_path / "spec.json"
        path.write_text(json.dumps(base_payload(output="out")))
        spec = validate_spec(path)
        assert spec.output == str(tmp_path / "out")


class TestHelpers:
    def test_tracker_labels_dedup(self):
        trackers = (
            TrackerConfig(kind=DIFFERENTIAL),
            TrackerConfig(kind=CORRESPONDENCE),
            TrackerConfig(kind=DIFFERENTIAL, window_radius=7),
        )
        assert _tracker_labels(trackers) == [
            "differential",
            "correspondence",
            "differential-2",
        ]

    def test_merge_outliers_sums_by_frame(self):
        a = make_stub(outliers=[OutlierRatio(1, 10, 2, 3, 12), OutlierRatio(2, 9, 1, 0, 12)])
        b = make_stub(outliers=[OutlierRatio(1, 20, 4, 6, 24)])
        merged = _merge_outliers([a, b])
        assert [(r.frame, r.f0, r.f1, r.f2, r.f_prev) for r in merged] == [
            (1, 30, 6, 9, 36),
            (2, 9, 1, 0, 12),
        ]
        assert merged[0].ratio == pytest.approx(6 / 36)

    def test_merge_lifetimes_sums_counts(self):
        a = make_stub(lifetime=LifetimeHistogram({1: 5, 3: 2}))
        b = make_stub(lifetime=LifetimeHistogram({3: 1, 8: 4}))
        merged = _merge_lifetimes([a, b])
        assert merged.counts == {1: 5, 3: 3, 8: 4}
        assert merged.total == 12


def make_stub(outliers=(), lifetime=None):
    return StatReport(
        scene_ids=("x",),
        tracker="differential",
        motion="sideways",
        speed=1,
        seed=0,
        config_hash="00000000",
        anchor_mode="depth",
        percentile_q=90.0,
        min_count=1,
        timestep=[],
        age=[],
        outliers=list(outliers),
        lifetime=lifetime or LifetimeHistogram({}),
    )


@pytest.fixture(scope="module")
def tiny_spec():
    return spec_from_payload(
        {
            "input": {
                "generator": {
                    "trajectory": {"kind": "sideways", "frames": 8, "baseline": 0.3},
                    "scenes": 1,
                    "prefix": "t",
                }
            },
            "trackers": ["correspondence"],
            "speeds": [1, 2],
            "min_count": 5,
            "seed": 3,
        }
    )


@pytest.fixture(scope="module")
def tiny_run(tiny_spec, tmp_path_factory):
    outdir = tmp_path_factory.mktemp("exp") / "run"
    aggregates = run_experiment(tiny_spec, outdir, workers=1)
    return outdir, aggregates


class TestRunExperiment:
    def test_layout_on_disk(self, tiny_run):
        outdir, aggregates = tiny_run
        assert (outdir / "report.json").is_file()
        for speed in (1, 2):
            assert (outdir / "cells" / "t000" / f"correspondence-s{speed}" / "report.json").is_file()
            assert (outdir / "aggregate" / f"correspondence-s{speed}" / "age_stats.csv").is_file()
        assert list((outdir / "plots").glob("*.svg"))
        assert len(aggregates) == 2

    def test_cell_reports_load_back(self, tiny_run):
        outdir, _ = tiny_run
        report = read_report_json(outdir / "cells" / "t000" / "correspondence-s1" / "report.json")
        assert report.scene_ids == ("t000",)
        assert report.tracker == "correspondence"
        assert report.speed == 1 and report.motion == "sideways"
        assert report.lifetime.total > 0

    def test_single_scene_aggregate_equals_cell(self, tiny_run):
        # pooling one scene must be a no-op on every statistic
        outdir, aggregates = tiny_run
        for speed, agg in zip((1, 2), aggregates):
            cell = read_report_json(
                outdir / "cells" / "t000" / f"correspondence-s{speed}" / "report.json"
            )
            assert agg.lifetime.counts == cell.lifetime.counts
            assert [(r.frame, r.f1) for r in agg.outliers] == [
                (r.frame, r.f1) for r in cell.outliers
            ]
            assert len(agg.age) == len(cell.age)
            for mine, theirs in zip(agg.age, cell.age):
                assert mine.count == theirs.count
                assert np.allclose(mine.nu, theirs.nu)

    def test_top_level_report_structure(self, tiny_run, tiny_spec):
        outdir, _ = tiny_run
        top = json.loads((outdir / "report.json").read_text())
        assert set(top) == {"spec", "cells", "aggregates", "figures"}
        assert top["spec"] == spec_payload(tiny_spec)
        assert [c["speed"] for c in top["cells"]] == [1, 2]
        for entry in top["cells"]:
            assert (outdir / entry["path"]).is_file()
            assert entry["kept"] <= entry["tracks"]
        for name in top["figures"]:
            assert (outdir / "plots" / f"{name}.svg").is_file()

    def test_byte_identical_rerun_with_pool(self, tiny_spec, tiny_run, tmp_path):
        outdir, _ = tiny_run
        again = tmp_path / "again"
        run_experiment(tiny_spec, again, workers=2)
        files = sorted(p.relative_to(outdir) for p in outdir.rglob("*") if p.is_file())
        files_again = sorted(p.relative_to(again) for p in again.rglob("*") if p.is_file())
        assert files == files_again
        for rel in files:
            assert (outdir / rel).read_bytes() == (again / rel).read_bytes(), str(rel)

    def test_seed_changes_report(self, tiny_spec, tiny_run, tmp_path):
        from dataclasses import replace

        outdir, _ = tiny_run
        other = tmp_path / "other"
        run_experiment(replace(tiny_spec, seed=4), other, workers=1)
        assert (outdir / "report.json").read_bytes() != (other / "report.json").read_bytes()


@pytest.fixture(scope="module")
def pooled_run(tmp_path_factory):
    spec = spec_from_payload(
        {
            "input": {
                "generator": {
                    "trajectory": {"kind": "sideways", "frames": 6, "baseline": 0.2},
                    "scenes": 2,
                    "prefix": "p",
                }
            },
            "trackers": ["correspondence"],
            "min_count": 5,
            "seed": 2,
        }
    )
    outdir = tmp_path_factory.mktemp("pool") / "run"
    aggregates = run_experiment(spec, outdir, workers=1)
    return outdir, aggregates


class TestMultiScenePooling:
    def test_aggregate_pools_scene_tracks(self, pooled_run):
        outdir, (agg,) = pooled_run
        assert agg.scene_ids == ("p000", "p001")
        cells = [
            read_report_json(outdir / "cells" / sid / "correspondence-s1" / "report.json")
            for sid in agg.scene_ids
        ]
        assert agg.lifetime.total == sum(c.lifetime.total for c in cells)
        # per-age counts add across scenes; ages are scene-local so every
        # age present in a cell must be present in the aggregate
        agg_counts = {r.age: r.count for r in agg.age}
        for cell in cells:
            for row in cell.age:
                assert agg_counts[row.age] >= row.count

    def test_aggregate_outliers_sum(self, pooled_run):
        outdir, (agg,) = pooled_run
        cells = [
            read_report_json(outdir / "cells" / sid / "correspondence-s1" / "report.json")
            for sid in ("p000", "p001")
        ]
        for frame_row in agg.outliers:
            want = sum(
                r.f1 for c in cells for r in c.outliers if r.frame == frame_row.frame
            )
            assert frame_row.f1 == want


class TestTimestepProtocolRun:
    def test_cloud_anchored_run(self, tmp_path):
        spec = spec_from_payload(
            {
                "input": {
                    "generator": {
                        "trajectory": {"kind": "sideways", "frames": 5, "baseline": 0.2},
                        "cloud_keyframe": 0,
                    }
                },
                "protocol": "timestep",
                "trackers": ["correspondence"],
                "min_count": 3,
                "seed": 1,
            }
        )
        (agg,) = run_experiment(spec, tmp_path / "run", workers=1)
        assert agg.anchor_mode == "cloud"
        assert agg.lifetime.total > 0
        payload = json.loads((tmp_path / "run" / "report.json").read_text())
        assert payload["spec"]["protocol"] == "timestep"
