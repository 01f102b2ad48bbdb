import numpy as np
import pytest

from otopipe.manifest import (
    ALL_LABELS,
    ClassLabel,
    DatasetManifest,
    FrameRecord,
    VideoRecord,
)


def build_manifest(layout, period="2024-01", path_prefix="mem"):
    """Manifest from a compact description: [(patient, video, label, n_frames), ...].

    Paths are synthetic; tests that need real pixels write files themselves.
    """
    videos = []
    frames = []
    for patient, video_id, label, n_frames in layout:
        videos.append(
            VideoRecord(
                video_id=video_id,
                patient=patient,
                label=label,
                period=period,
                frame_count=n_frames,
            )
        )
        for i in range(n_frames):
            frames.append(
                FrameRecord(
                    video_id=video_id,
                    frame_index=i,
                    path=f"{path_prefix}/{patient}/{video_id}/{i}.pgm",
                )
            )
    patient_of = {v.video_id: v.patient for v in videos}
    videos.sort(key=lambda v: (v.patient, v.video_id))
    frames.sort(key=lambda f: (patient_of[f.video_id], f.video_id, f.frame_index))
    return DatasetManifest(videos=tuple(videos), frames=tuple(frames))


def random_layout(rng: np.random.Generator, n_patients: int):
    """Patients with unequal video/frame counts and random labels."""
    layout = []
    for p in range(n_patients):
        label = ALL_LABELS[int(rng.integers(0, 4))]
        for v in range(int(rng.integers(1, 4))):
            layout.append((f"p{p:03d}", f"p{p:03d}v{v}", label, int(rng.integers(1, 12))))
    return layout


@pytest.fixture
def rng():
    return np.random.default_rng(20240801)


@pytest.fixture
def small_manifest():
    return build_manifest(
        [
            ("alice", "vidA", ClassLabel.NORMAL, 6),
            ("bob", "vidB", ClassLabel.EARWAX, 4),
            ("carol", "vidC", ClassLabel.CHRONIC_OTITIS_MEDIA, 5),
            ("dave", "vidD", ClassLabel.MYRINGOSCLEROSIS, 5),
        ]
    )
