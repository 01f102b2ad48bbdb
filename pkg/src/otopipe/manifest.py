"""Dataset data model: patients, videos, frames, labels; ingest and storage.

The manifest is the single source of truth the rest of the toolkit operates
on. It is an immutable value: every transformation (scoring, filtering)
builds a new manifest rather than mutating in place, so manifests can be
shared freely across threads.

Serialization is a versioned, line-oriented TSV (header ``otopipe-manifest
v1``) with one record per line and a count trailer, so manifests diff
cleanly and truncation is detectable.
"""

from __future__ import annotations

import csv
import enum
import os
import re
from collections import Counter
from dataclasses import dataclass, replace
from pathlib import Path

from .errors import DataError, FormatError
from .imgio import IMAGE_EXTENSIONS

MANIFEST_HEADER = "otopipe-manifest v1"

DEFAULT_WIDTH = 1280
DEFAULT_HEIGHT = 1024
DEFAULT_FPS = 30.0


class ClassLabel(enum.IntEnum):
    """The four diagnosis classes, in stable serialization order."""

    CHRONIC_OTITIS_MEDIA = 0
    EARWAX = 1
    MYRINGOSCLEROSIS = 2
    NORMAL = 3

    @property
    def canonical_name(self) -> str:
        return _CANONICAL_NAMES[self]

    @classmethod
    def from_string(cls, text: str) -> "ClassLabel":
        """Parse a label, tolerating case, spaces and underscores."""
        key = re.sub(r"[^a-z]", "", text.lower())
        try:
            return _LABEL_ALIASES[key]
        except KeyError:
            raise DataError(f"unknown class label {text!r}") from None


_CANONICAL_NAMES = {
    ClassLabel.CHRONIC_OTITIS_MEDIA: "ChronicOtitisMedia",
    ClassLabel.EARWAX: "Earwax",
    ClassLabel.MYRINGOSCLEROSIS: "Myringosclerosis",
    ClassLabel.NORMAL: "Normal",
}

_LABEL_ALIASES = {
    "chronicotitismedia": ClassLabel.CHRONIC_OTITIS_MEDIA,
    "otitismedia": ClassLabel.CHRONIC_OTITIS_MEDIA,
    "earwax": ClassLabel.EARWAX,
    "wax": ClassLabel.EARWAX,
    "myringosclerosis": ClassLabel.MYRINGOSCLEROSIS,
    "normal": ClassLabel.NORMAL,
}

ALL_LABELS = tuple(ClassLabel)
N_CLASSES = len(ALL_LABELS)


@dataclass(frozen=True)
class VideoRecord:
    """One recorded examination video."""

    video_id: str
    patient: str
    label: ClassLabel
    period: str  # capture year-month, from the folder layout
    frame_count: int
    width: int = DEFAULT_WIDTH
    height: int = DEFAULT_HEIGHT
    fps: float = DEFAULT_FPS


@dataclass(frozen=True)
class FrameRecord:
    """One frame with provenance and quality scores.

    Scores are ``None`` until the frame has been scored; ``included`` tracks
    survival through trimming and quality filtering, with ``exclude_reason``
    naming the stage that dropped the frame.
    """

    video_id: str
    frame_index: int
    path: str
    laplacian_variance: float | None = None
    shannon_entropy: float | None = None
    included: bool = True
    exclude_reason: str | None = None

    @property
    def frame_id(self) -> str:
        return f"{self.video_id}:{self.frame_index}"


@dataclass(frozen=True)
class DatasetManifest:
    """Immutable registry of videos and frames."""

    videos: tuple[VideoRecord, ...] = ()
    frames: tuple[FrameRecord, ...] = ()

    @property
    def label_counts(self) -> dict[ClassLabel, int]:
        """Per-class frame totals (all frames, included or not)."""
        by_video = {v.video_id: v.label for v in self.videos}
        counts: Counter = Counter()
        for f in self.frames:
            label = by_video.get(f.video_id)
            if label is not None:
                counts[label] += 1
        return {label: counts.get(label, 0) for label in ALL_LABELS}

    def video_by_id(self) -> dict[str, VideoRecord]:
        return {v.video_id: v for v in self.videos}

    def included_frames(self) -> tuple[FrameRecord, ...]:
        return tuple(f for f in self.frames if f.included)

    def frames_of_video(self, video_id: str) -> tuple[FrameRecord, ...]:
        return tuple(f for f in self.frames if f.video_id == video_id)

    def patient_of_frame(self) -> dict[str, str]:
        """Map frame_id -> patient id."""
        by_video = {v.video_id: v.patient for v in self.videos}
        return {f.frame_id: by_video[f.video_id] for f in self.frames if f.video_id in by_video}

    def with_frames(self, frames: tuple[FrameRecord, ...]) -> "DatasetManifest":
        return replace(self, frames=tuple(frames))


@dataclass(frozen=True)
class IngestReport:
    """What the tree walk found but could not place in the manifest."""

    orphan_videos: tuple[str, ...] = ()  # video folders with no diagnosis row
    unmatched_rows: tuple[str, ...] = ()  # diagnosis rows with no video folder
    skipped_files: tuple[str, ...] = ()  # files that are not <index>.<ext> frames

    def lines(self) -> list[str]:
        out = []
        for v in self.orphan_videos:
            out.append(f"orphan video (no diagnosis row): {v}")
        for r in self.unmatched_rows:
            out.append(f"diagnosis row with no video folder: {r}")
        for s in self.skipped_files:
            out.append(f"skipped non-frame file: {s}")
        if not out:
            out.append("ingest clean: no orphans, no skipped files")
        return out


@dataclass(frozen=True)
class Violation:
    """One broken rule, naming the offending entity.

    ``severity`` is "error" for invariant violations and "warning" for
    suspicious-but-legal situations (e.g. one patient carrying videos with
    different labels).
    """

    entity: str
    rule: str
    severity: str = "error"

    def __str__(self) -> str:
        return f"[{self.severity}] {self.entity}: {self.rule}"


def read_diagnosis_table(path: str | os.PathLike) -> list[tuple[str, str, ClassLabel]]:
    """Read the delimited diagnosis table: header (patient_id, video_id, label)."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read diagnosis table {path}: {exc}") from exc
    reader = csv.DictReader(text.splitlines())
    required = {"patient_id", "video_id", "label"}
    if reader.fieldnames is None or not required.issubset(reader.fieldnames):
        raise FormatError(
            f"{path}: diagnosis table must have header columns patient_id, video_id, label; "
            f"got {reader.fieldnames}",
            line=1,
        )
    rows = []
    seen: set[str] = set()
    for lineno, row in enumerate(reader, start=2):
        patient = (row["patient_id"] or "").strip()
        video = (row["video_id"] or "").strip()
        raw_label = (row["label"] or "").strip()
        if not patient or not video:
            raise FormatError(f"{path}: empty patient_id or video_id", line=lineno)
        try:
            label = ClassLabel.from_string(raw_label)
        except DataError:
            raise FormatError(
                f"{path}: unknown label {raw_label!r} for video {video!r}", line=lineno
            ) from None
        if video in seen:
            raise FormatError(f"{path}: duplicate diagnosis row for video {video!r}", line=lineno)
        seen.add(video)
        rows.append((patient, video, label))
    return rows


def ingest_tree(
    root: str | os.PathLike, diagnosis_table: str | os.PathLike
) -> tuple[DatasetManifest, IngestReport]:
    """Walk ``<root>/<year-month>/<patient>/<video>/<index>.<ext>`` and join
    the diagnosis table.

    Every readable frame image of a diagnosed video lands in the manifest
    exactly once, unscored and included. Video folders without a diagnosis
    row are excluded from the manifest but reported, never silently dropped.
    Entries are sorted by (patient, video, frame_index), so the same tree
    and table always serialize byte-identically.
    """
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"ingest root {root} is not a readable directory")
    table = {video: (patient, label) for patient, video, label in read_diagnosis_table(diagnosis_table)}

    orphans: list[str] = []
    skipped: list[str] = []
    videos: list[VideoRecord] = []
    frames: list[FrameRecord] = []
    seen_video_ids: set[str] = set()

    for period_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        for patient_dir in sorted(p for p in period_dir.iterdir() if p.is_dir()):
            for video_dir in sorted(p for p in patient_dir.iterdir() if p.is_dir()):
                video_id = video_dir.name
                if video_id in seen_video_ids:
                    raise DataError(f"video id {video_id!r} appears in more than one folder")
                seen_video_ids.add(video_id)
                if video_id not in table:
                    orphans.append(str(video_dir.relative_to(root)))
                    continue
                patient, label = table[video_id]
                if patient != patient_dir.name:
                    raise DataError(
                        f"video {video_id!r}: diagnosis table names patient {patient!r} "
                        f"but folder is under {patient_dir.name!r}"
                    )
                indices: dict[int, Path] = {}
                for entry in sorted(video_dir.iterdir()):
                    if not entry.is_file():
                        skipped.append(str(entry.relative_to(root)))
                        continue
                    if entry.suffix.lower() not in IMAGE_EXTENSIONS or not entry.stem.isdigit():
                        skipped.append(str(entry.relative_to(root)))
                        continue
                    index = int(entry.stem)
                    if index in indices:
                        raise DataError(
                            f"duplicate frame index {index} in video {video_id!r}: "
                            f"{indices[index].name} and {entry.name}"
                        )
                    indices[index] = entry
                frame_count = (max(indices) + 1) if indices else 0
                videos.append(
                    VideoRecord(
                        video_id=video_id,
                        patient=patient,
                        label=label,
                        period=period_dir.name,
                        frame_count=frame_count,
                    )
                )
                for index in sorted(indices):
                    frames.append(
                        FrameRecord(video_id=video_id, frame_index=index, path=str(indices[index]))
                    )

    unmatched = tuple(sorted(v for v in table if v not in seen_video_ids))
    patient_of = {v.video_id: v.patient for v in videos}
    videos.sort(key=lambda v: (v.patient, v.video_id))
    frames.sort(key=lambda f: (patient_of[f.video_id], f.video_id, f.frame_index))
    report = IngestReport(
        orphan_videos=tuple(orphans), unmatched_rows=unmatched, skipped_files=tuple(skipped)
    )
    return DatasetManifest(videos=tuple(videos), frames=tuple(frames)), report


def validate(manifest: DatasetManifest) -> list[Violation]:
    """Check every manifest invariant; never raises.

    Returns no error-severity entries iff all invariants hold. Warnings
    (severity "warning") flag legal-but-suspicious data and do not count
    against well-formedness.
    """
    out: list[Violation] = []
    seen_videos: dict[str, VideoRecord] = {}
    for v in manifest.videos:
        if not v.video_id:
            out.append(Violation(entity="video ''", rule="video_id must be non-empty"))
        if not v.patient:
            out.append(Violation(entity=f"video {v.video_id!r}", rule="patient id must be non-empty"))
        if v.frame_count < 0:
            out.append(
                Violation(entity=f"video {v.video_id!r}", rule=f"frame_count {v.frame_count} < 0")
            )
        if v.video_id in seen_videos:
            out.append(Violation(entity=f"video {v.video_id!r}", rule="duplicate video_id"))
        seen_videos[v.video_id] = v

    seen_frames: set[tuple[str, int]] = set()
    for f in manifest.frames:
        name = f"frame {f.frame_id}"
        video = seen_videos.get(f.video_id)
        if video is None:
            out.append(Violation(entity=name, rule=f"references unknown video {f.video_id!r}"))
        elif not 0 <= f.frame_index < video.frame_count:
            out.append(
                Violation(
                    entity=name,
                    rule=f"frame_index {f.frame_index} outside [0, {video.frame_count})",
                )
            )
        key = (f.video_id, f.frame_index)
        if key in seen_frames:
            out.append(Violation(entity=name, rule="duplicate (video_id, frame_index)"))
        seen_frames.add(key)
        if f.laplacian_variance is not None and f.laplacian_variance < 0:
            out.append(
                Violation(entity=name, rule=f"laplacian_variance {f.laplacian_variance} < 0")
            )
        if f.shannon_entropy is not None and not 0.0 <= f.shannon_entropy <= 8.0:
            out.append(
                Violation(entity=name, rule=f"shannon_entropy {f.shannon_entropy} outside [0, 8]")
            )

    labels_of_patient: dict[str, set[ClassLabel]] = {}
    for v in manifest.videos:
        labels_of_patient.setdefault(v.patient, set()).add(v.label)
    for patient, labels in sorted(labels_of_patient.items()):
        if len(labels) > 1:
            names = ", ".join(sorted(l.canonical_name for l in labels))
            out.append(
                Violation(
                    entity=f"patient {patient!r}",
                    rule=f"videos carry different labels ({names})",
                    severity="warning",
                )
            )
    return out


def invariant_errors(manifest: DatasetManifest) -> list[Violation]:
    """Error-severity violations only; empty iff the manifest is well-formed."""
    return [v for v in validate(manifest) if v.severity == "error"]


def _fmt_float(value: float | None) -> str:
    return "-" if value is None else repr(float(value))


def _parse_float(text: str, *, line: int) -> float | None:
    if text == "-":
        return None
    try:
        return float(text)
    except ValueError:
        raise FormatError(f"bad float field {text!r}", line=line) from None


def _check_field(text: str, what: str) -> str:
    if "\t" in text or "\n" in text or "\r" in text:
        raise DataError(f"{what} contains tab/newline and cannot be serialized: {text!r}")
    return text


def save(manifest: DatasetManifest, path: str | os.PathLike) -> None:
    """Write the manifest in the v1 line format (see module docstring)."""
    lines = [MANIFEST_HEADER]
    for v in manifest.videos:
        lines.append(
            "\t".join(
                (
                    "video",
                    _check_field(v.video_id, "video_id"),
                    _check_field(v.patient, "patient"),
                    v.label.canonical_name,
                    _check_field(v.period, "period"),
                    str(v.frame_count),
                    str(v.width),
                    str(v.height),
                    repr(float(v.fps)),
                )
            )
        )
    for f in manifest.frames:
        lines.append(
            "\t".join(
                (
                    "frame",
                    _check_field(f.video_id, "video_id"),
                    str(f.frame_index),
                    _check_field(f.path, "path"),
                    _fmt_float(f.laplacian_variance),
                    _fmt_float(f.shannon_entropy),
                    "1" if f.included else "0",
                    _check_field(f.exclude_reason, "exclude_reason")
                    if f.exclude_reason is not None
                    else "-",
                )
            )
        )
    lines.append(f"end\t{len(manifest.videos)}\t{len(manifest.frames)}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load(path: str | os.PathLike) -> DatasetManifest:
    """Read a manifest written by :func:`save`; raises FormatError on damage."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read manifest {path}: {exc}") from exc
    text = raw.decode("utf-8")
    lines = text.split("\n")
    offset = 0
    if not lines or lines[0] != MANIFEST_HEADER:
        raise FormatError(
            f"{path}: missing or wrong header, expected {MANIFEST_HEADER!r}", line=1, offset=0
        )
    offset += len(lines[0].encode("utf-8")) + 1

    videos: list[VideoRecord] = []
    frames: list[FrameRecord] = []
    trailer: tuple[int, int] | None = None
    for lineno, line in enumerate(lines[1:], start=2):
        if line == "":
            continue
        if trailer is not None:
            raise FormatError(f"{path}: content after end trailer", line=lineno, offset=offset)
        fields = line.split("\t")
        kind = fields[0]
        if kind == "video":
            if len(fields) != 9:
                raise FormatError(
                    f"{path}: video record needs 9 fields, got {len(fields)}",
                    line=lineno,
                    offset=offset,
                )
            try:
                label = ClassLabel.from_string(fields[3])
            except DataError as exc:
                raise FormatError(f"{path}: {exc}", line=lineno, offset=offset) from None
            try:
                videos.append(
                    VideoRecord(
                        video_id=fields[1],
                        patient=fields[2],
                        label=label,
                        period=fields[4],
                        frame_count=int(fields[5]),
                        width=int(fields[6]),
                        height=int(fields[7]),
                        fps=float(fields[8]),
                    )
                )
            except ValueError as exc:
                raise FormatError(f"{path}: {exc}", line=lineno, offset=offset) from None
        elif kind == "frame":
            if len(fields) != 8:
                raise FormatError(
                    f"{path}: frame record needs 8 fields, got {len(fields)}",
                    line=lineno,
                    offset=offset,
                )
            try:
                index = int(fields[2])
            except ValueError:
                raise FormatError(
                    f"{path}: bad frame_index {fields[2]!r}", line=lineno, offset=offset
                ) from None
            if fields[6] not in ("0", "1"):
                raise FormatError(
                    f"{path}: bad included flag {fields[6]!r}", line=lineno, offset=offset
                )
            frames.append(
                FrameRecord(
                    video_id=fields[1],
                    frame_index=index,
                    path=fields[3],
                    laplacian_variance=_parse_float(fields[4], line=lineno),
                    shannon_entropy=_parse_float(fields[5], line=lineno),
                    included=fields[6] == "1",
                    exclude_reason=None if fields[7] == "-" else fields[7],
                )
            )
        elif kind == "end":
            if len(fields) != 3:
                raise FormatError(f"{path}: bad end trailer", line=lineno, offset=offset)
            trailer = (int(fields[1]), int(fields[2]))
        else:
            raise FormatError(
                f"{path}: unknown record kind {kind!r}", line=lineno, offset=offset
            )
        offset += len(line.encode("utf-8")) + 1

    if trailer is None:
        raise FormatError(f"{path}: file truncated, end trailer missing", offset=len(raw))
    if trailer != (len(videos), len(frames)):
        raise FormatError(
            f"{path}: trailer counts {trailer} do not match records "
            f"({len(videos)} videos, {len(frames)} frames)",
            offset=len(raw),
        )
    return DatasetManifest(videos=tuple(videos), frames=tuple(frames))
