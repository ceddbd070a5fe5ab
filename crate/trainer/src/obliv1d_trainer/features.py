"""MFCC features: 40 coefficients per frame with librosa defaults, averaged
over time to one vector per clip."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

N_MFCC = 40
LABELS = ["neutral", "calm", "happy", "sad", "angry", "fearful", "disgust", "surprised"]
AUDIO_SUFFIXES = (".wav", ".flac", ".ogg", ".mp3")


def ravdess_label(path: Path):
    """Class index from a RAVDESS file name such as `03-01-05-01-02-01-12.wav`,
    whose third field is the emotion code 01..08; None if it does not parse."""
    parts = path.stem.split("-")
    if len(parts) != 7 or not all(p.isdigit() for p in parts):
        return None
    code = int(parts[2])
    return code - 1 if 1 <= code <= len(LABELS) else None


def clip_features(path) -> np.ndarray:
    import librosa

    y, sr = librosa.load(str(path))
    mfcc = librosa.feature.mfcc(y=y, sr=sr, n_mfcc=N_MFCC)
    return mfcc.mean(axis=1).astype(np.float32)


@dataclass
class FeatureDataset:
    x: np.ndarray  # (n, 40) float32
    y: np.ndarray  # (n,) int64
    files: list[str]
    train_idx: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    test_idx: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    skipped: int = 0

    def split(self, seed: int, test_fraction: float = 0.33) -> None:
        n = len(self.y)
        order = np.random.default_rng(seed).permutation(n)
        n_test = int(round(n * test_fraction))
        self.test_idx = np.sort(order[:n_test])
        self.train_idx = np.sort(order[n_test:])

    def save(self, path) -> None:
        np.savez(path, x=self.x, y=self.y, files=np.array(self.files),
                 train_idx=self.train_idx, test_idx=self.test_idx, skipped=self.skipped)

    @staticmethod
    def load(path) -> "FeatureDataset":
        d = np.load(path)
        return FeatureDataset(d["x"], d["y"], [str(f) for f in d["files"]],
                              d["train_idx"], d["test_idx"], int(d["skipped"]))


def extract_features(audio_dir) -> FeatureDataset:
    """Features for every labelled clip under `audio_dir`, in path order.
    Unreadable or unlabelled files are skipped and counted."""
    xs, ys, files = [], [], []
    skipped = 0
    paths = sorted(p for p in Path(audio_dir).rglob("*") if p.suffix.lower() in AUDIO_SUFFIXES)
    for p in paths:
        label = ravdess_label(p)
        if label is None:
            log.warning("skipping %s: no emotion code in the name", p)
            skipped += 1
            continue
        try:
            v = clip_features(p)
        except Exception as e:  # decoder errors vary by backend
            log.warning("skipping %s: %s", p, e)
            skipped += 1
            continue
        if not np.all(np.isfinite(v)):
            log.warning("skipping %s: non-finite features", p)
            skipped += 1
            continue
        xs.append(v)
        ys.append(label)
        files.append(str(p.relative_to(audio_dir)))
    log.info("extracted %d clips, skipped %d", len(xs), skipped)
    x = np.stack(xs) if xs else np.zeros((0, N_MFCC), dtype=np.float32)
    return FeatureDataset(x, np.asarray(ys, dtype=np.int64), files, skipped=skipped)
