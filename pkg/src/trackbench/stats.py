"""Moment estimators over track error curves, plus lifetime and outlier summaries.

Errors are conditioned along two different axes.  Timestep statistics pool
errors by absolute frame index, which fits the reference-cloud protocol
where every included track is visible at the keyframe.  Age statistics pool
errors by frames-since-birth across every track in the experiment, which
fits the depth-at-birth protocol where each track carries its own anchor.

Both families report the mean error, the componentwise mean absolute
error, and a second-moment matrix.  The second moment is deliberately NOT
mean-subtracted: it is (1/(n-1)) * sum(e e^T) about zero, so a biased
tracker shows up as a large "covariance" about the origin rather than a
small one about its own drift.  That is the quantity of interest here,
and it differs from textbook covariance whenever the mean is nonzero.

Rows whose sample count falls below a minimum-count cutoff are still
reported but flagged excluded, so plots and downstream comparisons can
drop thinly populated frames or ages without recomputing anything.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .groundtruth import GroundTruthTrack
from .tracking import FeatureTrack, FrameAttribution

DEFAULT_MIN_COUNT = 100  # samples needed before a row counts as populated
LINEAR_MIN_COUNT = 500  # stricter cutoff used for the linear-translation protocol


def error_moments(
    errors: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, np.ndarray | None]:
    """Mean, componentwise absolute mean, and uncentered second moment.

    ``errors`` is (n, 2).  The second moment is sum(e e^T) / (n - 1) about
    zero (no mean subtraction) and is None when n < 2.  It is assembled
    from its three distinct products so symmetry is exact.
    """
    errors = np.asarray(errors, dtype=np.float64)
    mean = errors.mean(axis=0)
    abs_mean = np.abs(errors).mean(axis=0)
    n = len(errors)
    if n < 2:
        return mean, abs_mean, None
    eu = errors[:, 0]
    ev = errors[:, 1]
    cross = float(eu @ ev)
    second = np.array([[float(eu @ eu), cross], [cross, float(ev @ ev)]]) / (n - 1)
    return mean, abs_mean, second


@dataclass(frozen=True, eq=False)
class TimestepStats:
    """Error moments over the tracks observed at one absolute frame."""

    frame: int
    count: int
    mu: np.ndarray
    kappa: np.ndarray
    sigma: np.ndarray | None
    included: bool


@dataclass(frozen=True, eq=False)
class AgeStats:
    """Error moments over all observations made at one track age."""

    age: int
    count: int
    nu: np.ndarray
    eta: np.ndarray
    phi: np.ndarray | None
    included: bool


def _usable_rows(
    tracks: list[GroundTruthTrack], by_age: bool
) -> tuple[np.ndarray, np.ndarray]:
    """Pooled (key, error) rows over all usable observations."""
    keys = []
    errs = []
    for track in tracks:
        idx = np.nonzero(track.usable)[0]
        if len(idx) == 0:
            continue
        keys.append(idx if by_age else idx + track.birth_frame)
        errs.append(track.err[idx])
    if not keys:
        return np.empty(0, dtype=np.int64), np.empty((0, 2))
    return np.concatenate(keys), np.concatenate(errs)


def _grouped_moments(keys: np.ndarray, errs: np.ndarray):
    """Yields (key, count, mean, abs_mean, second) per unique key, ascending."""
    order = np.argsort(keys, kind="stable")
    keys = keys[order]
    errs = errs[order]
    uniq, starts = np.unique(keys, return_index=True)
    bounds = np.append(starts, len(keys))
    for i, key in enumerate(uniq):
        rows = errs[bounds[i] : bounds[i + 1]]
        mean, abs_mean, second = error_moments(rows)
        yield int(key), len(rows), mean, abs_mean, second


def timestep_stats(
    tracks: list[GroundTruthTrack], min_count: int = DEFAULT_MIN_COUNT
) -> list[TimestepStats]:
    """Per-frame error moments pooled over the given tracks.

    Only usable observations contribute (in view, not gated out).  Frames
    with fewer than ``min_count`` samples are flagged excluded; frames
    with a single sample carry no second moment.
    """
    keys, errs = _usable_rows(tracks, by_age=False)
    return [
        TimestepStats(t, n, mean, abs_mean, second, n >= min_count)
        for t, n, mean, abs_mean, second in _grouped_moments(keys, errs)
    ]


def age_stats(
    tracks: list[GroundTruthTrack], min_count: int = DEFAULT_MIN_COUNT
) -> list[AgeStats]:
    """Per-age error moments pooled over all tracks regardless of birth frame.

    Age k collects the error each track made k frames after its own birth,
    so the sample count at age k is the number of tracks that survived at
    least k steps and it can only shrink as k grows.
    """
    keys, errs = _usable_rows(tracks, by_age=True)
    return [
        AgeStats(k, n, mean, abs_mean, second, n >= min_count)
        for k, n, mean, abs_mean, second in _grouped_moments(keys, errs)
    ]


@dataclass(frozen=True)
class OutlierRatio:
    """One frame's attribution counts and its rejected-continuation ratio."""

    frame: int
    f0: int
    f1: int
    f2: int
    f_prev: int

    @property
    def ratio(self) -> float:
        return self.f1 / self.f_prev


def outlier_ratios(attributions: list[FrameAttribution]) -> list[OutlierRatio]:
    """Per-frame rejected fraction f1 / F_prev; frames with no prior features are skipped."""
    return [
        OutlierRatio(a.frame, a.f0, a.f1, a.f2, a.f_prev)
        for a in attributions
        if a.f_prev > 0
    ]


@dataclass(frozen=True)
class LifetimeHistogram:
    """Counts of tracks by lifetime (number of correctly attributed frames)."""

    counts: dict[int, int]

    def __post_init__(self) -> None:
        for lifetime, count in self.counts.items():
            if lifetime < 1 or count < 1:
                raise ValueError(f"bad histogram entry {lifetime}: {count}")

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    def median(self) -> float:
        values = np.repeat(
            sorted(self.counts), [self.counts[k] for k in sorted(self.counts)]
        )
        return float(np.median(values))


def lifetimes(tracks: list[FeatureTrack]) -> LifetimeHistogram:
    """Lifetime histogram over all tracks, survivors at sequence end included."""
    counts: dict[int, int] = {}
    for track in tracks:
        counts[track.lifetime] = counts.get(track.lifetime, 0) + 1
    return LifetimeHistogram(dict(sorted(counts.items())))


@dataclass(frozen=True)
class BoxSummary:
    median: float
    mean: float
    q1: float
    q3: float
    whisker_lo: float
    whisker_hi: float


def summarize_box(values) -> BoxSummary:
    """Tukey box summary: quartiles by linear interpolation (type 7),
    whiskers at the most extreme data points within 1.5 IQR of the box."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        raise ValueError("cannot summarize an empty sample")
    q1, med, q3 = (float(q) for q in np.quantile(arr, [0.25, 0.5, 0.75]))
    reach = 1.5 * (q3 - q1)
    lo = float(arr[arr >= q1 - reach].min())
    hi = float(arr[arr <= q3 + reach].max())
    return BoxSummary(med, float(arr.mean()), q1, q3, lo, hi)


# --- report container and file formats ---


@dataclass(frozen=True, eq=False)
class StatReport:
    """Everything one (motion, tracker, speed) experiment cell produced."""

    scene_ids: tuple[str, ...]
    tracker: str
    motion: str
    speed: int
    seed: int
    config_hash: str
    anchor_mode: str
    percentile_q: float
    min_count: int
    timestep: list[TimestepStats]
    age: list[AgeStats]
    outliers: list[OutlierRatio]
    lifetime: LifetimeHistogram


def _second_cells(second: np.ndarray | None) -> list[str]:
    if second is None:
        return ["", "", ""]
    return [
        repr(float(second[0, 0])),
        repr(float(second[0, 1])),
        repr(float(second[1, 1])),
    ]


_MOMENT_COLUMNS = "count,mu_u,mu_v,kappa_u,kappa_v,sig_uu,sig_uv,sig_vv,included"


def _moment_line(key, count, mean, abs_mean, second, included) -> str:
    cells = [str(key), str(count)]
    cells += [repr(float(v)) for v in (*mean, *abs_mean)]
    cells += _second_cells(second)
    cells.append(str(int(included)))
    return ",".join(cells) + "\n"


def write_timestep_csv(rows: list[TimestepStats], path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("t," + _MOMENT_COLUMNS + "\n")
        for r in rows:
            fh.write(_moment_line(r.frame, r.count, r.mu, r.kappa, r.sigma, r.included))


def write_age_csv(rows: list[AgeStats], path) -> None:
    # same column layout as the timestep file, keyed by age
    with open(path, "w", newline="") as fh:
        fh.write("k," + _MOMENT_COLUMNS + "\n")
        for r in rows:
            fh.write(_moment_line(r.age, r.count, r.nu, r.eta, r.phi, r.included))


def write_outliers_csv(rows: list[OutlierRatio], path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("frame,f0,f1,f2,F_prev,ratio\n")
        for r in rows:
            fh.write(
                f"{r.frame},{r.f0},{r.f1},{r.f2},{r.f_prev},{repr(float(r.ratio))}\n"
            )


def write_lifetimes_csv(hist: LifetimeHistogram, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("lifetime,count\n")
        for lifetime in sorted(hist.counts):
            fh.write(f"{lifetime},{hist.counts[lifetime]}\n")


def _vec(a: np.ndarray) -> list[float]:
    return [float(v) for v in a]


def _mat(a: np.ndarray | None) -> list[list[float]] | None:
    if a is None:
        return None
    return [[float(a[0, 0]), float(a[0, 1])], [float(a[1, 0]), float(a[1, 1])]]


def report_payload(report: StatReport) -> dict:
    """JSON-ready dict; all values plain Python types, deterministic layout."""
    return {
        "metadata": {
            "scene_ids": list(report.scene_ids),
            "tracker": report.tracker,
            "motion": report.motion,
            "speed": report.speed,
            "seed": report.seed,
            "config_hash": report.config_hash,
            "anchor_mode": report.anchor_mode,
            "percentile_q": float(report.percentile_q),
            "min_count": report.min_count,
        },
        "timestep_stats": [
            {
                "t": r.frame,
                "count": r.count,
                "mu": _vec(r.mu),
                "kappa": _vec(r.kappa),
                "sigma": _mat(r.sigma),
                "included": r.included,
            }
            for r in report.timestep
        ],
        "age_stats": [
            {
                "k": r.age,
                "count": r.count,
                "nu": _vec(r.nu),
                "eta": _vec(r.eta),
                "phi": _mat(r.phi),
                "included": r.included,
            }
            for r in report.age
        ],
        "outlier_ratios": [
            {
                "frame": r.frame,
                "f0": r.f0,
                "f1": r.f1,
                "f2": r.f2,
                "f_prev": r.f_prev,
                "ratio": float(r.ratio),
            }
            for r in report.outliers
        ],
        "lifetimes": [[k, report.lifetime.counts[k]] for k in sorted(report.lifetime.counts)],
    }


def write_report_json(report: StatReport, path) -> None:
    with open(path, "w", newline="") as fh:
        json.dump(report_payload(report), fh, sort_keys=True, indent=2)
        fh.write("\n")


def read_report_json(path) -> StatReport:
    with open(path) as fh:
        return report_from_payload(json.load(fh))


def report_from_payload(payload: dict) -> StatReport:
    """Inverse of ``report_payload``; arrays come back as float64."""
    meta = payload["metadata"]

    def arr(v):
        return np.asarray(v, dtype=np.float64)

    def mat(v):
        return None if v is None else np.asarray(v, dtype=np.float64)

    return StatReport(
        scene_ids=tuple(meta["scene_ids"]),
        tracker=meta["tracker"],
        motion=meta["motion"],
        speed=meta["speed"],
        seed=meta["seed"],
        config_hash=meta["config_hash"],
        anchor_mode=meta["anchor_mode"],
        percentile_q=meta["percentile_q"],
        min_count=meta["min_count"],
        timestep=[
            TimestepStats(
                r["t"], r["count"], arr(r["mu"]), arr(r["kappa"]), mat(r["sigma"]), r["included"]
            )
            for r in payload["timestep_stats"]
        ],
        age=[
            AgeStats(
                r["k"], r["count"], arr(r["nu"]), arr(r["eta"]), mat(r["phi"]), r["included"]
            )
            for r in payload["age_stats"]
        ],
        outliers=[
            OutlierRatio(r["frame"], r["f0"], r["f1"], r["f2"], r["f_prev"])
            for r in payload["outlier_ratios"]
        ],
        lifetime=LifetimeHistogram({int(k): int(n) for k, n in payload["lifetimes"]}),
    )


def write_report(report: StatReport, outdir) -> None:
    """Writes report.json plus the four CSV views into ``outdir``."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    write_report_json(report, outdir / "report.json")
    write_timestep_csv(report.timestep, outdir / "timestep_stats.csv")
    write_age_csv(report.age, outdir / "age_stats.csv")
    write_outliers_csv(report.outliers, outdir / "outliers.csv")
    write_lifetimes_csv(report.lifetime, outdir / "lifetimes.csv")
