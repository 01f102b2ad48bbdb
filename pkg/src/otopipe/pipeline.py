"""Frame-preparation pipeline: trim video ends, score, quality-filter, crop.

Stages run in a fixed order (trim -> score -> filter -> crop) and only ever
flip frames from included to excluded, recording the reason. The report's
counts always partition the input frame set; ``run_pipeline`` asserts this
on every run.

Threshold values are deliberately explicit configuration: sensible defaults
are provided but nothing here claims to recover any particular study's
cutoffs, which are camera- and dataset-dependent.
"""

from __future__ import annotations

import os
import shlex
import subprocess
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Literal, Sequence

import numpy as np

from . import imgio
from .errors import DataError, OtopipeError
from .imaging import circular_crop, laplacian_variance, shannon_entropy
from .manifest import DatasetManifest, FrameRecord

REASON_TRIM = "trim"
REASON_QUALITY = "quality"
REASON_UNREADABLE = "unreadable"


@dataclass(frozen=True)
class QualityPolicy:
    """Keep-rule for one score: absolute cutoff or per-video percentile.

    ``absolute``: keep frames with score >= value.
    ``percentile``: keep frames with score >= the value-th percentile of the
    scores within their own video (linear interpolation).
    """

    kind: Literal["absolute", "percentile"]
    value: float

    def __post_init__(self):
        if self.kind not in ("absolute", "percentile"):
            raise DataError(f"unknown policy kind {self.kind!r}")
        if self.kind == "percentile" and not 0.0 <= self.value <= 100.0:
            raise DataError(f"percentile must be in [0, 100], got {self.value}")
        if self.kind == "absolute" and self.value < 0:
            raise DataError(f"absolute threshold must be >= 0, got {self.value}")

    def cutoff(self, scores: Sequence[float]) -> float:
        if self.kind == "absolute":
            return self.value
        return float(np.percentile(np.asarray(scores, dtype=np.float64), self.value))


@dataclass(frozen=True)
class PipelineConfig:
    trim_fraction: float = 0.10
    laplacian: QualityPolicy = QualityPolicy("percentile", 25.0)
    entropy: QualityPolicy = QualityPolicy("percentile", 25.0)
    crop_enabled: bool = True
    fill: int = 0

    def __post_init__(self):
        if not 0.0 <= self.trim_fraction < 0.5:
            raise DataError(f"trim_fraction must be in [0, 0.5), got {self.trim_fraction}")
        if not 0 <= self.fill <= 255:
            raise DataError(f"fill must be in [0, 255], got {self.fill}")


def neutral_config() -> PipelineConfig:
    """Identity configuration: no trim, no thresholds, no crop."""
    return PipelineConfig(
        trim_fraction=0.0,
        laplacian=QualityPolicy("absolute", 0.0),
        entropy=QualityPolicy("absolute", 0.0),
        crop_enabled=False,
    )


@dataclass(frozen=True)
class VideoFilterStats:
    video_id: str
    kept: int
    dropped: int


@dataclass(frozen=True)
class PipelineReport:
    total: int
    kept: int
    dropped_trim: int
    dropped_quality: int
    dropped_unreadable: int
    per_video: tuple[VideoFilterStats, ...] = ()
    warnings: tuple[str, ...] = ()

    def lines(self) -> list[str]:
        out = [
            f"total frames: {self.total}",
            f"kept: {self.kept}",
            f"dropped (trim): {self.dropped_trim}",
            f"dropped (quality): {self.dropped_quality}",
            f"dropped (unreadable): {self.dropped_unreadable}",
        ]
        for s in self.per_video:
            out.append(f"video {s.video_id}: kept {s.kept}, dropped {s.dropped}")
        out.extend(f"warning: {w}" for w in self.warnings)
        return out


def decode_video(
    video_path: str | os.PathLike,
    out_dir: str | os.PathLike,
    command_template: str,
    timeout: float | None = None,
) -> int:
    """Optional hook for turning a video container into frame images.

    The toolkit never decodes video itself; callers supply a decoder command
    template with ``{input}`` and ``{outdir}`` placeholders, e.g.::

        ffmpeg -loglevel error -i {input} {outdir}/%d.png

    The command is run without a shell. Returns the number of frame images
    found under ``out_dir`` afterwards.
    """
    video_path = Path(video_path)
    out_dir = Path(out_dir)
    if not video_path.is_file():
        raise DataError(f"decode_video: {video_path} is not a file")
    out_dir.mkdir(parents=True, exist_ok=True)
    argv = [
        part.format(input=str(video_path), outdir=str(out_dir))
        for part in shlex.split(command_template)
    ]
    try:
        proc = subprocess.run(argv, capture_output=True, text=True, timeout=timeout)
    except (OSError, subprocess.TimeoutExpired) as exc:
        raise DataError(f"decoder command failed to run: {exc}") from exc
    if proc.returncode != 0:
        raise DataError(
            f"decoder command exited {proc.returncode}: {proc.stderr.strip() or argv[0]}"
        )
    from .imgio import IMAGE_EXTENSIONS

    return sum(
        1
        for p in out_dir.iterdir()
        if p.is_file() and p.suffix.lower() in IMAGE_EXTENSIONS
    )


def trim(frame_indices: Sequence[int], trim_fraction: float) -> list[int]:
    """Drop ``floor(n * trim_fraction)`` indices from each end of a sorted list.

    For any fraction < 0.5 the kept count is positive; if a caller passes a
    larger fraction directly, the middle index is kept so a video never
    empties out here.
    """
    indices = list(frame_indices)
    if any(indices[i] > indices[i + 1] for i in range(len(indices) - 1)):
        raise DataError("trim: frame indices must be sorted ascending")
    if trim_fraction < 0:
        raise DataError(f"trim: fraction must be >= 0, got {trim_fraction}")
    n = len(indices)
    if n == 0:
        return []
    # epsilon keeps floor() honest when n * fraction lands a float ulp
    # below the exact integer (e.g. 10 * 0.3)
    k = int(n * trim_fraction + 1e-9)
    if 2 * k >= n:
        return [indices[n // 2]]
    return indices[k : n - k]


def _mark_excluded(frame: FrameRecord, reason: str) -> FrameRecord:
    return replace(frame, included=False, exclude_reason=reason)


def trim_manifest(manifest: DatasetManifest, trim_fraction: float) -> DatasetManifest:
    """Apply :func:`trim` per video, excluding head/tail frames."""
    keep: set[str] = set()
    by_video: dict[str, list[FrameRecord]] = {}
    for f in manifest.frames:
        if f.included:
            by_video.setdefault(f.video_id, []).append(f)
    for video_id, frames in by_video.items():
        indices = sorted(f.frame_index for f in frames)
        for idx in trim(indices, trim_fraction):
            keep.add(f"{video_id}:{idx}")
    new_frames = tuple(
        f if not f.included or f.frame_id in keep else _mark_excluded(f, REASON_TRIM)
        for f in manifest.frames
    )
    return manifest.with_frames(new_frames)


def score_frames(manifest: DatasetManifest, config: PipelineConfig | None = None) -> DatasetManifest:
    """Fill Laplacian-variance and entropy scores for every included frame.

    Scores are computed on the grayscale image before any cropping, so the
    masked border cannot depress the entropy. An unreadable frame is excluded
    with reason "unreadable" rather than aborting the run.
    """
    del config  # scoring itself has no knobs; parameter kept for symmetry
    new_frames: list[FrameRecord] = []
    for f in manifest.frames:
        if not f.included:
            new_frames.append(f)
            continue
        try:
            img = imgio.load_gray(f.path)
            lap = laplacian_variance(img)
            ent = shannon_entropy(img)
        except (OtopipeError, OSError):
            new_frames.append(_mark_excluded(f, REASON_UNREADABLE))
            continue
        new_frames.append(replace(f, laplacian_variance=lap, shannon_entropy=ent))
    return manifest.with_frames(tuple(new_frames))


def filter_frames(
    manifest: DatasetManifest, config: PipelineConfig
) -> tuple[DatasetManifest, tuple[VideoFilterStats, ...], tuple[str, ...]]:
    """Apply both quality policies (conjunction) to scored, included frames.

    Percentile cutoffs are computed within each video's own frames. Returns
    the filtered manifest plus per-video kept/dropped stats and warnings for
    videos left with zero frames.
    """
    by_video: dict[str, list[FrameRecord]] = {}
    for f in manifest.frames:
        if f.included:
            if f.laplacian_variance is None or f.shannon_entropy is None:
                raise DataError(f"filter_frames: frame {f.frame_id} is not scored")
            by_video.setdefault(f.video_id, []).append(f)

    passing: set[str] = set()
    stats: list[VideoFilterStats] = []
    warnings: list[str] = []
    for video_id in sorted(by_video):
        frames = by_video[video_id]
        lap_cut = config.laplacian.cutoff([f.laplacian_variance for f in frames])
        ent_cut = config.entropy.cutoff([f.shannon_entropy for f in frames])
        kept = 0
        for f in frames:
            if f.laplacian_variance >= lap_cut and f.shannon_entropy >= ent_cut:
                passing.add(f.frame_id)
                kept += 1
        stats.append(VideoFilterStats(video_id=video_id, kept=kept, dropped=len(frames) - kept))
        if kept == 0:
            warnings.append(f"video {video_id}: all frames filtered out")

    new_frames = tuple(
        f if not f.included or f.frame_id in passing else _mark_excluded(f, REASON_QUALITY)
        for f in manifest.frames
    )
    return manifest.with_frames(new_frames), tuple(stats), tuple(warnings)


def _crop_outputs(
    manifest: DatasetManifest, config: PipelineConfig, out_dir: Path
) -> DatasetManifest:
    by_video = manifest.video_by_id()
    new_frames: list[FrameRecord] = []
    for f in manifest.frames:
        if not f.included:
            new_frames.append(f)
            continue
        video = by_video[f.video_id]
        rel = Path(video.period) / video.patient / video.video_id / f"{f.frame_index}.pgm"
        target = out_dir / rel
        target.parent.mkdir(parents=True, exist_ok=True)
        try:
            img = imgio.load_gray(f.path)
        except (OtopipeError, OSError):
            new_frames.append(_mark_excluded(f, REASON_UNREADABLE))
            continue
        imgio.write_pnm(target, circular_crop(img, fill=config.fill))
        new_frames.append(replace(f, path=str(target)))
    return manifest.with_frames(tuple(new_frames))


def run_pipeline(
    manifest: DatasetManifest, config: PipelineConfig, out_dir: str | os.PathLike
) -> tuple[DatasetManifest, PipelineReport]:
    """Run trim -> score -> filter -> optional crop over a raw manifest.

    Cropped frames are written under ``out_dir`` mirroring the normative
    layout. The returned report partitions the input exactly:
    kept + dropped_trim + dropped_quality + dropped_unreadable == total.
    """
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        probe = out_dir / ".write-probe"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise DataError(f"output directory {out_dir} is not writable: {exc}") from exc
    if any(not f.included for f in manifest.frames):
        raise DataError("run_pipeline expects a raw manifest with all frames included")

    total = len(manifest.frames)
    staged = trim_manifest(manifest, config.trim_fraction)
    staged = score_frames(staged)
    staged, per_video, warnings = filter_frames(staged, config)
    if config.crop_enabled:
        staged = _crop_outputs(staged, config, out_dir)

    reasons = {}
    for f in staged.frames:
        if not f.included:
            reasons[f.exclude_reason] = reasons.get(f.exclude_reason, 0) + 1
    report = PipelineReport(
        total=total,
        kept=sum(1 for f in staged.frames if f.included),
        dropped_trim=reasons.get(REASON_TRIM, 0),
        dropped_quality=reasons.get(REASON_QUALITY, 0),
        dropped_unreadable=reasons.get(REASON_UNREADABLE, 0),
        per_video=per_video,
        warnings=tuple(warnings),
    )
    conserved = (
        report.kept + report.dropped_trim + report.dropped_quality + report.dropped_unreadable
    )
    assert conserved == report.total, f"frame counts do not partition input: {report}"
    return staged, report
