"""Synthetic video datasets with controllable structure, a nearest-neighbor
probe classifier, and the end-to-end leakage-inflation experiment.

Each frame is built from three seeded Gaussian pixel fields:

    frame = 128 + class_signal * C(class)
                + patient_signal * P(patient)
                + temporal_noise * T(video, frame index)

where T follows an AR(1) walk across frame indices (``temporal_persistence``
close to 1 makes adjacent frames near-duplicates, 0 makes them independent).
Quantized to uint8 and written as PGM files in the normative tree layout, so
the synthetic path exercises exactly the same interfaces as real data.

The probe classifier is 1-NN (configurable k) on 32x32 thumbnails: leakage
inflation is a property of the data and the split, not of any particular
model family, and a nearest-neighbor rule exposes near-duplicate leakage
maximally. That turns the inflated-versus-corrected comparison into an
experiment that runs in seconds.
"""

from __future__ import annotations

import os
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import imgio, rng
from .errors import DataError
from .evaluation import (
    MetricsReport,
    PredictionRow,
    RunSummary,
    evaluate_run,
    summarize_runs,
)
from .imaging import make_thumb
from .manifest import (
    ALL_LABELS,
    DatasetManifest,
    FrameRecord,
    VideoRecord,
)
from .pipeline import PipelineConfig, neutral_config, run_pipeline
from .splitting import (
    GROUPED_PATIENT,
    NAIVE_FRAME,
    SplitAssignment,
    SplitSpec,
    run_series,
)
from .stats import DeltaReport, delta_report

SYNTH_PERIOD = "2024-01"


@dataclass(frozen=True)
class SynthConfig:
    patients_per_class: int = 6
    videos_per_patient: int = 2
    frames_per_video: int = 60
    image_side: int = 64
    class_signal: float = 8.0
    patient_signal: float = 22.0
    temporal_noise: float = 26.0
    temporal_persistence: float = 0.97
    seed: int = 0

    def __post_init__(self):
        if min(self.patients_per_class, self.videos_per_patient, self.frames_per_video) < 1:
            raise DataError("patient/video/frame counts must be >= 1")
        if self.image_side < 8:
            raise DataError(f"image_side must be >= 8, got {self.image_side}")
        for name in ("class_signal", "patient_signal", "temporal_noise"):
            if getattr(self, name) < 0:
                raise DataError(f"{name} must be >= 0")
        if not 0.0 <= self.temporal_persistence <= 1.0:
            raise DataError(
                f"temporal_persistence must be in [0, 1], got {self.temporal_persistence}"
            )

    @property
    def total_frames(self) -> int:
        return (
            len(ALL_LABELS)
            * self.patients_per_class
            * self.videos_per_patient
            * self.frames_per_video
        )


def _gauss_field(seed: int, side: int, count: int = 1) -> np.ndarray:
    gen = np.random.Generator(np.random.PCG64(seed))
    return gen.standard_normal((count, side, side))


def generate(config: SynthConfig, out_dir: str | os.PathLike) -> DatasetManifest:
    """Write the synthetic dataset under ``out_dir`` and return its manifest.

    Layout matches the ingest contract (<period>/<patient>/<video>/<i>.pgm),
    and a ``diagnosis.csv`` table is written next to the tree, so the output
    can be re-ingested through the normal path. Fully deterministic for a
    given config.
    """
    out_dir = Path(out_dir)
    root = out_dir / "frames"
    side = config.image_side
    videos: list[VideoRecord] = []
    frames: list[FrameRecord] = []
    table_lines = ["patient_id,video_id,label"]

    for label in ALL_LABELS:
        class_field = _gauss_field(rng.derive(config.seed, 1, int(label)), side)[0]
        for p in range(config.patients_per_class):
            patient = f"p{int(label)}{p:02d}"
            patient_field = _gauss_field(rng.derive(config.seed, 2, int(label), p), side)[0]
            base = 128.0 + config.class_signal * class_field + config.patient_signal * patient_field
            for v in range(config.videos_per_patient):
                video_id = f"{patient}v{v}"
                table_lines.append(f"{patient},{video_id},{label.canonical_name}")
                video_dir = root / SYNTH_PERIOD / patient / video_id
                video_dir.mkdir(parents=True, exist_ok=True)
                innovations = _gauss_field(
                    rng.derive(config.seed, 3, int(label), p, v),
                    side,
                    config.frames_per_video,
                )
                rho = config.temporal_persistence
                step = 1.0 if rho >= 1.0 else float(np.sqrt(1.0 - rho * rho))
                temporal = innovations[0]
                for k in range(config.frames_per_video):
                    if k > 0:
                        temporal = rho * temporal + step * innovations[k]
                    pixels = base + config.temporal_noise * temporal
                    img = np.clip(np.floor(pixels + 0.5), 0, 255).astype(np.uint8)
                    path = video_dir / f"{k}.pgm"
                    imgio.write_pnm(path, img)
                    frames.append(
                        FrameRecord(video_id=video_id, frame_index=k, path=str(path))
                    )
                videos.append(
                    VideoRecord(
                        video_id=video_id,
                        patient=patient,
                        label=label,
                        period=SYNTH_PERIOD,
                        frame_count=config.frames_per_video,
                        width=side,
                        height=side,
                        fps=30.0,
                    )
                )

    (out_dir / "diagnosis.csv").write_text("\n".join(table_lines) + "\n", encoding="utf-8")
    patient_of = {v.video_id: v.patient for v in videos}
    videos.sort(key=lambda v: (v.patient, v.video_id))
    frames.sort(key=lambda f: (patient_of[f.video_id], f.video_id, f.frame_index))
    return DatasetManifest(videos=tuple(videos), frames=tuple(frames))


def frame_thumbs(manifest: DatasetManifest) -> dict[str, np.ndarray]:
    """32x32 uint8 thumbnails of every included frame, keyed by frame id."""
    return {
        f.frame_id: make_thumb(imgio.load_gray(f.path)) for f in manifest.included_frames()
    }


def knn_probe(
    manifest: DatasetManifest,
    assignment: SplitAssignment,
    k: int = 1,
    thumbs: dict[str, np.ndarray] | None = None,
) -> list[PredictionRow]:
    """Classify every test frame by majority vote of its k nearest train
    frames (Euclidean distance on 32x32 thumbnails).

    Scores are vote fractions. Vote ties break by summed inverse distance,
    then by lowest class ordinal. ``k`` larger than the train side is clamped.
    """
    if k < 1:
        raise DataError(f"k must be >= 1, got {k}")
    if not assignment.train:
        raise DataError("knn probe needs a non-empty train side")
    if thumbs is None:
        thumbs = frame_thumbs(manifest)
    label_of_video = {v.video_id: v.label for v in manifest.videos}
    label_of = {
        f.frame_id: label_of_video[f.video_id] for f in manifest.included_frames()
    }

    train_ids = sorted(assignment.train)
    test_ids = sorted(assignment.test)
    if k > len(train_ids):
        warnings.warn(
            f"k={k} exceeds train size {len(train_ids)}; clamping", stacklevel=2
        )
        k = len(train_ids)

    train_x = np.stack([thumbs[fid].astype(np.float64).ravel() for fid in train_ids])
    test_x = np.stack([thumbs[fid].astype(np.float64).ravel() for fid in test_ids])
    train_labels = np.array([int(label_of[fid]) for fid in train_ids])

    # squared distances via the expansion; clamp tiny negatives from rounding
    d2 = (
        (test_x * test_x).sum(axis=1)[:, None]
        + (train_x * train_x).sum(axis=1)[None, :]
        - 2.0 * test_x @ train_x.T
    )
    np.maximum(d2, 0.0, out=d2)

    rows: list[PredictionRow] = []
    n_classes = len(ALL_LABELS)
    for i, fid in enumerate(test_ids):
        # stable sort so distance ties resolve by train id order, deterministically
        nearest = np.argsort(d2[i], kind="stable")[:k]
        votes = np.zeros(n_classes)
        weight = np.zeros(n_classes)
        for j in nearest:
            c = train_labels[j]
            votes[c] += 1
            weight[c] += 1.0 / (float(np.sqrt(d2[i, j])) + 1e-12)
        best = max(range(n_classes), key=lambda c: (votes[c], weight[c], -c))
        scores = tuple(votes / k)
        rows.append(
            PredictionRow(
                frame_id=fid,
                run_index=assignment.run_index,
                true_label=label_of[fid],
                predicted_label=ALL_LABELS[best],
                scores=scores,  # type: ignore[arg-type]
            )
        )
    return rows


@dataclass(frozen=True)
class StrategyOutcome:
    spec: SplitSpec
    assignments: tuple[SplitAssignment, ...]
    predictions: tuple[PredictionRow, ...]
    reports: tuple[MetricsReport, ...]
    summary: RunSummary


@dataclass(frozen=True)
class ExperimentResult:
    config: SynthConfig
    manifest: DatasetManifest  # post-pipeline manifest the splits were drawn from
    naive: StrategyOutcome
    grouped: StrategyOutcome
    delta: DeltaReport

    @property
    def accuracy_gap(self) -> float:
        """Mean naive accuracy minus mean grouped accuracy."""
        return self.delta.by_metric()["accuracy"].absolute_drop


def _run_strategy(
    manifest: DatasetManifest,
    spec: SplitSpec,
    k: int,
    thumbs: dict[str, np.ndarray],
) -> StrategyOutcome:
    assignments = run_series(manifest, spec)
    predictions: list[PredictionRow] = []
    reports: list[MetricsReport] = []
    for assignment in assignments:
        rows = knn_probe(manifest, assignment, k=k, thumbs=thumbs)
        predictions.extend(rows)
        reports.append(evaluate_run(rows, assignment.run_index))
    return StrategyOutcome(
        spec=spec,
        assignments=tuple(assignments),
        predictions=tuple(predictions),
        reports=tuple(reports),
        summary=summarize_runs(reports),
    )


def inflation_experiment(
    config: SynthConfig,
    out_dir: str | os.PathLike,
    runs: int = 11,
    test_fraction: float = 0.2,
    k: int = 1,
    pipeline_config: PipelineConfig | None = None,
) -> ExperimentResult:
    """Measure how much the frame-level split inflates metrics.

    Runs the full chain - generate, pipeline with neutral thresholds, both
    split strategies for ``runs`` repetitions, probe classifier, metric
    suite - and reports the before/after delta (naive minus grouped).
    """
    out_dir = Path(out_dir)
    manifest = generate(config, out_dir)
    if pipeline_config is None:
        pipeline_config = neutral_config()
    manifest, _report = run_pipeline(manifest, pipeline_config, out_dir / "processed")

    thumbs = frame_thumbs(manifest)
    naive_spec = SplitSpec(
        strategy=NAIVE_FRAME, test_fraction=test_fraction, seed=config.seed, run_count=runs
    )
    grouped_spec = SplitSpec(
        strategy=GROUPED_PATIENT, test_fraction=test_fraction, seed=config.seed, run_count=runs
    )
    naive = _run_strategy(manifest, naive_spec, k, thumbs)
    grouped = _run_strategy(manifest, grouped_spec, k, thumbs)
    delta = delta_report(naive.summary, grouped.summary)
    return ExperimentResult(
        config=config, manifest=manifest, naive=naive, grouped=grouped, delta=delta
    )
