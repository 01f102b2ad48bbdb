"""Train/test split strategies: the leaky frame-level shuffle and the
patient-grouped fix.

``naive-frame`` shuffles individual frames, so consecutive frames of one
video routinely land on both sides of the split - the exact mechanism that
inflates evaluation scores. ``grouped-patient`` shuffles patients and moves
each patient's frames as a block, guaranteeing the train and test patient
sets are disjoint.

Both strategies are pure functions of (manifest, seed, run_index) via the
splitmix64 stream in :mod:`otopipe.rng`, so any assignment can be
regenerated exactly.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from pathlib import Path

from .errors import DataError, FormatError
from .manifest import ClassLabel, DatasetManifest
from .rng import SplitMix64, derive

NAIVE_FRAME = "naive-frame"
GROUPED_PATIENT = "grouped-patient"
STRATEGIES = (NAIVE_FRAME, GROUPED_PATIENT)

# Attempts at re-drawing a grouped split before giving up on class coverage.
MAX_COVERAGE_RETRIES = 100


@dataclass(frozen=True)
class SplitSpec:
    strategy: str = GROUPED_PATIENT
    test_fraction: float = 0.2
    seed: int = 0
    run_count: int = 11

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise DataError(f"unknown split strategy {self.strategy!r}, expected one of {STRATEGIES}")
        if not 0.0 < self.test_fraction < 1.0:
            raise DataError(f"test_fraction must be in (0, 1), got {self.test_fraction}")
        if self.run_count < 1:
            raise DataError(f"run_count must be >= 1, got {self.run_count}")


@dataclass(frozen=True)
class SplitAssignment:
    """One seeded partition of the included frames into train and test."""

    spec: SplitSpec
    run_index: int
    train: frozenset[str]
    test: frozenset[str]

    def side_of(self, frame_id: str) -> str:
        if frame_id in self.train:
            return "train"
        if frame_id in self.test:
            return "test"
        raise DataError(f"frame {frame_id} is not covered by this assignment")


def _rng_for(spec: SplitSpec, run_index: int, attempt: int = 0) -> SplitMix64:
    return SplitMix64(derive(spec.seed, run_index, attempt))


def split_naive_frame(
    manifest: DatasetManifest, spec: SplitSpec, run_index: int
) -> SplitAssignment:
    """Frame-level shuffle: the strategy that leaks.

    Included frames are shuffled by the stream keyed on (seed, run_index);
    the first ``ceil(n * test_fraction)`` go to test, the rest to train.
    """
    frame_ids = [f.frame_id for f in manifest.included_frames()]
    if len(frame_ids) < 2:
        raise DataError(f"naive split needs at least 2 included frames, got {len(frame_ids)}")
    rng = _rng_for(spec, run_index)
    rng.shuffle(frame_ids)
    # epsilon keeps ceil() honest when n * fraction floats an ulp above
    # the exact integer
    n_test = math.ceil(len(frame_ids) * spec.test_fraction - 1e-9)
    return SplitAssignment(
        spec=spec,
        run_index=run_index,
        test=frozenset(frame_ids[:n_test]),
        train=frozenset(frame_ids[n_test:]),
    )


def split_grouped_patient(
    manifest: DatasetManifest, spec: SplitSpec, run_index: int
) -> SplitAssignment:
    """Patient-level split: every patient's frames move as one block.

    Patients are shuffled and assigned to the test side until it first holds
    at least ``test_fraction`` of all included frames (frame-count balance,
    since metric supports are frame-denominated). If some class ends up
    absent from the training side, the draw is repeated with an incremented
    sub-seed, up to a bounded retry budget.
    """
    frames = manifest.included_frames()
    label_of_video = {v.video_id: v.label for v in manifest.videos}
    patient_of_video = {v.video_id: v.patient for v in manifest.videos}
    by_patient: dict[str, list[str]] = {}
    label_of_frame: dict[str, ClassLabel] = {}
    for f in frames:
        patient = patient_of_video.get(f.video_id)
        if patient is None:
            raise DataError(f"frame {f.frame_id} references video missing from manifest")
        by_patient.setdefault(patient, []).append(f.frame_id)
        label_of_frame[f.frame_id] = label_of_video[f.video_id]

    patients = sorted(by_patient)
    if len(patients) < 2:
        raise DataError(f"grouped split needs at least 2 patients, got {len(patients)}")
    total = len(frames)
    target = spec.test_fraction * total - 1e-9  # tolerate float ulp above an exact integer
    all_labels = {label_of_frame[fid] for fid in label_of_frame}

    missing: set[ClassLabel] = set()
    for attempt in range(MAX_COVERAGE_RETRIES):
        order = list(patients)
        _rng_for(spec, run_index, attempt).shuffle(order)
        test: set[str] = set()
        taken = 0
        cut = 0
        for cut, patient in enumerate(order, start=1):
            test.update(by_patient[patient])
            taken += len(by_patient[patient])
            if taken >= target:
                break
        train = {fid for p in order[cut:] for fid in by_patient[p]}
        missing = all_labels - {label_of_frame[fid] for fid in train}
        if not missing:
            return SplitAssignment(
                spec=spec, run_index=run_index, train=frozenset(train), test=frozenset(test)
            )
    names = ", ".join(sorted(label.canonical_name for label in missing))
    raise DataError(
        f"grouped split could not cover class(es) {names} in train after "
        f"{MAX_COVERAGE_RETRIES} attempts (seed={spec.seed}, run={run_index})"
    )


def split(manifest: DatasetManifest, spec: SplitSpec, run_index: int) -> SplitAssignment:
    if spec.strategy == NAIVE_FRAME:
        return split_naive_frame(manifest, spec, run_index)
    return split_grouped_patient(manifest, spec, run_index)


def run_series(manifest: DatasetManifest, spec: SplitSpec) -> list[SplitAssignment]:
    """One assignment per run, run i keyed on run_index=i; each reproducible
    on its own."""
    return [split(manifest, spec, run_index) for run_index in range(spec.run_count)]


def check_partition(manifest: DatasetManifest, assignment: SplitAssignment) -> None:
    """Raise unless train/test are disjoint and exhaust the included frames."""
    included = {f.frame_id for f in manifest.included_frames()}
    overlap = assignment.train & assignment.test
    if overlap:
        raise DataError(f"train and test overlap on {len(overlap)} frames")
    union = assignment.train | assignment.test
    if union != included:
        raise DataError(
            f"assignment covers {len(union)} frames but manifest includes {len(included)}"
        )


def save_assignment(assignment: SplitAssignment, path: str | os.PathLike) -> None:
    """Write one line per frame: (frame_id, run_index, side), tab-delimited."""
    lines = ["frame_id\trun\tside"]
    for side_name, ids in (("train", assignment.train), ("test", assignment.test)):
        for fid in ids:
            lines.append(f"{fid}\t{assignment.run_index}\t{side_name}")
    # canonical order keeps re-runs byte-identical
    body = sorted(lines[1:])
    Path(path).write_text("\n".join([lines[0], *body]) + "\n", encoding="utf-8")


def load_assignment(path: str | os.PathLike, spec: SplitSpec | None = None) -> SplitAssignment:
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != "frame_id\trun\tside":
        raise FormatError(f"{path}: bad split file header", line=1)
    train: set[str] = set()
    test: set[str] = set()
    run_index: int | None = None
    for lineno, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        fields = line.split("\t")
        if len(fields) != 3:
            raise FormatError(f"{path}: expected 3 fields", line=lineno)
        fid, run_text, side = fields
        try:
            run = int(run_text)
        except ValueError:
            raise FormatError(f"{path}: bad run index {run_text!r}", line=lineno) from None
        if run_index is None:
            run_index = run
        elif run != run_index:
            raise FormatError(f"{path}: mixed run indices {run_index} and {run}", line=lineno)
        if side == "train":
            train.add(fid)
        elif side == "test":
            test.add(fid)
        else:
            raise FormatError(f"{path}: unknown side {side!r}", line=lineno)
    if run_index is None:
        raise FormatError(f"{path}: no assignment rows", line=2)
    return SplitAssignment(
        spec=spec if spec is not None else SplitSpec(),
        run_index=run_index,
        train=frozenset(train),
        test=frozenset(test),
    )
