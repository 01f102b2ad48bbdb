"""Leakage detection for a (manifest, split assignment) pair.

Four signals, all computed against the split boundary only (pairs within one
side never count):

* patient overlap - patients with frames on both sides,
* video overlap - videos with frames on both sides,
* adjacency pairs - (test frame, train frame) from the same video whose
  indices differ by at most ``adjacency_window``,
* duplicate pairs - (test frame, train frame) whose fingerprints are within
  ``dup_threshold`` hash bits.

Duplicate search is exact all-pairs up to ``EXACT_LIMIT`` frames; above
that it blocks on the top 16 hash bits, which keeps byte-identical
duplicates (equal hashes) while trading some recall of weaker matches for
tractability.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

from . import imgio
from .errors import DataError, OtopipeError
from .imaging import fingerprint, hamming_bits
from .manifest import DatasetManifest
from .splitting import SplitAssignment

DEFAULT_ADJACENCY_WINDOW = 30  # one second at the camera's 30 fps
DEFAULT_DUP_THRESHOLD = 5
EXACT_LIMIT = 2000


@dataclass(frozen=True)
class LeakageReport:
    patient_overlap: tuple[str, ...]
    video_overlap: tuple[str, ...]
    adjacency_pairs: tuple[tuple[str, str], ...]
    duplicate_pairs: tuple[tuple[str, str, int], ...]
    contamination_rate: float
    duplicates_checked: bool
    n_test: int
    n_train: int

    @property
    def clean(self) -> bool:
        return (
            not self.patient_overlap
            and not self.video_overlap
            and not self.adjacency_pairs
            and not self.duplicate_pairs
        )

    def lines(self) -> list[str]:
        out = [
            f"test frames: {self.n_test}, train frames: {self.n_train}",
            f"patient overlap: {len(self.patient_overlap)}"
            + (f" ({', '.join(self.patient_overlap)})" if self.patient_overlap else ""),
            f"video overlap: {len(self.video_overlap)}"
            + (f" ({', '.join(self.video_overlap)})" if self.video_overlap else ""),
            f"adjacency pairs: {len(self.adjacency_pairs)}",
            "duplicate pairs: "
            + (str(len(self.duplicate_pairs)) if self.duplicates_checked else "skipped"),
            f"contamination rate: {self.contamination_rate:.4f}",
        ]
        return out


def compute_fingerprints(manifest: DatasetManifest) -> dict[str, int]:
    """Fingerprint every included frame; raises if any image is unreadable."""
    bits: dict[str, int] = {}
    for f in manifest.included_frames():
        try:
            bits[f.frame_id] = fingerprint(imgio.load_gray(f.path)).bits
        except (OtopipeError, OSError) as exc:
            raise DataError(f"cannot fingerprint frame {f.frame_id}: {exc}") from exc
    return bits


def _adjacency_pairs(
    manifest: DatasetManifest, assignment: SplitAssignment, window: int
) -> list[tuple[str, str]]:
    by_video: dict[str, list[int]] = {}
    for f in manifest.included_frames():
        by_video.setdefault(f.video_id, []).append(f.frame_index)
    pairs: list[tuple[str, str]] = []
    for video_id in sorted(by_video):
        indices = sorted(by_video[video_id])
        test_idx = [i for i in indices if f"{video_id}:{i}" in assignment.test]
        train_idx = [i for i in indices if f"{video_id}:{i}" in assignment.train]
        if not test_idx or not train_idx:
            continue
        start = 0
        for ti in test_idx:
            while start < len(train_idx) and train_idx[start] < ti - window:
                start += 1
            k = start
            while k < len(train_idx) and train_idx[k] <= ti + window:
                pairs.append((f"{video_id}:{ti}", f"{video_id}:{train_idx[k]}"))
                k += 1
    return pairs


def _duplicate_pairs(
    test_ids: list[str],
    train_ids: list[str],
    bits: Mapping[str, int],
    threshold: int,
) -> list[tuple[str, str, int]]:
    pairs: list[tuple[str, str, int]] = []
    if len(test_ids) + len(train_ids) <= EXACT_LIMIT:
        for t in test_ids:
            tb = bits[t]
            for r in train_ids:
                d = hamming_bits(tb, bits[r])
                if d <= threshold:
                    pairs.append((t, r, d))
        return pairs
    # blocked search: bucket on the top 16 bits
    buckets: dict[int, list[str]] = {}
    for r in train_ids:
        buckets.setdefault(bits[r] >> 48, []).append(r)
    for t in test_ids:
        tb = bits[t]
        for r in buckets.get(tb >> 48, ()):
            d = hamming_bits(tb, bits[r])
            if d <= threshold:
                pairs.append((t, r, d))
    return pairs


def audit_split(
    manifest: DatasetManifest,
    assignment: SplitAssignment,
    adjacency_window: int = DEFAULT_ADJACENCY_WINDOW,
    dup_threshold: int = DEFAULT_DUP_THRESHOLD,
    fingerprints: Mapping[str, int] | None = None,
) -> LeakageReport:
    """Build the full leakage report for one assignment.

    ``fingerprints`` maps frame_id to 64-bit hash values; pass the output of
    :func:`compute_fingerprints`, or None to skip duplicate detection.
    """
    if adjacency_window < 1:
        raise DataError(f"adjacency_window must be >= 1, got {adjacency_window}")
    if not 0 <= dup_threshold <= 64:
        raise DataError(f"dup_threshold must be in [0, 64], got {dup_threshold}")
    included = {f.frame_id for f in manifest.included_frames()}
    if assignment.train | assignment.test != included:
        raise DataError(
            "assignment does not cover exactly the manifest's included frames "
            f"({len(assignment.train | assignment.test)} assigned vs {len(included)} included)"
        )

    patient_of = manifest.patient_of_frame()
    video_of = {f.frame_id: f.video_id for f in manifest.frames}
    test_patients = {patient_of[fid] for fid in assignment.test}
    train_patients = {patient_of[fid] for fid in assignment.train}
    test_videos = {video_of[fid] for fid in assignment.test}
    train_videos = {video_of[fid] for fid in assignment.train}

    adjacency = _adjacency_pairs(manifest, assignment, adjacency_window)

    duplicates: list[tuple[str, str, int]] = []
    checked = fingerprints is not None
    if checked:
        missing = (assignment.train | assignment.test) - set(fingerprints)
        if missing:
            raise DataError(f"fingerprints missing for {len(missing)} assigned frames")
        duplicates = _duplicate_pairs(
            sorted(assignment.test), sorted(assignment.train), fingerprints, dup_threshold
        )

    contaminated = {t for t, _ in adjacency} | {t for t, _, _ in duplicates}
    rate = len(contaminated) / len(assignment.test) if assignment.test else 0.0
    return LeakageReport(
        patient_overlap=tuple(sorted(test_patients & train_patients)),
        video_overlap=tuple(sorted(test_videos & train_videos)),
        adjacency_pairs=tuple(sorted(adjacency)),
        duplicate_pairs=tuple(sorted(duplicates)),
        contamination_rate=rate,
        duplicates_checked=checked,
        n_test=len(assignment.test),
        n_train=len(assignment.train),
    )


@dataclass(frozen=True)
class GatePolicy:
    forbid_patient_overlap: bool = True
    max_contamination: float | None = None


@dataclass(frozen=True)
class GateResult:
    passed: bool
    reasons: tuple[str, ...]


def gate(report: LeakageReport, policy: GatePolicy) -> GateResult:
    """Pass/fail a leakage report against a policy; reasons name each rule hit."""
    reasons: list[str] = []
    if policy.forbid_patient_overlap and report.patient_overlap:
        reasons.append(f"patient overlap: {len(report.patient_overlap)} patients")
    if policy.max_contamination is not None and report.contamination_rate > policy.max_contamination:
        reasons.append(
            f"contamination rate {report.contamination_rate:.4f} exceeds "
            f"limit {policy.max_contamination:.4f}"
        )
    return GateResult(passed=not reasons, reasons=tuple(reasons))
