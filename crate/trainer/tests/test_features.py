import numpy as np
import pytest

librosa = pytest.importorskip("librosa")
sf = pytest.importorskip("soundfile")

from obliv1d_trainer.features import FeatureDataset, extract_features, ravdess_label


def _write(path, y, sr=22050):
    sf.write(str(path), y.astype(np.float32), sr)


@pytest.fixture
def clips(tmp_path):
    sr = 22050
    t = np.arange(sr) / sr
    actor = tmp_path / "Actor_01"
    actor.mkdir()
    _write(actor / "03-01-01-01-01-01-01.wav", np.zeros(sr))
    _write(actor / "03-01-05-01-02-01-01.wav", 0.3 * np.sin(2 * np.pi * 220 * t))
    _write(actor / "03-01-08-02-01-02-01.wav", 0.1 * np.sin(2 * np.pi * 440 * t))
    _write(actor / "notes.wav", np.zeros(100))
    (actor / "03-01-03-01-01-01-01.wav").write_bytes(b"not audio")
    return tmp_path


def test_labels_from_names():
    from pathlib import Path

    assert ravdess_label(Path("03-01-05-01-02-01-12.wav")) == 4
    assert ravdess_label(Path("03-01-09-01-02-01-12.wav")) is None
    assert ravdess_label(Path("clip.wav")) is None


def test_extraction(clips, tmp_path):
    ds = extract_features(clips)
    assert ds.x.shape == (3, 40)
    assert ds.y.tolist() == [0, 4, 7]
    assert ds.skipped == 2
    # The silent clip still gives finite features.
    assert np.all(np.isfinite(ds.x))
    again = extract_features(clips)
    assert np.array_equal(ds.x, again.x)

    ds.split(seed=3)
    assert len(ds.test_idx) == 1 and len(ds.train_idx) == 2
    ds.save(tmp_path / "f.npz")
    back = FeatureDataset.load(tmp_path / "f.npz")
    assert np.array_equal(back.x, ds.x) and back.files == ds.files
    assert back.test_idx.tolist() == ds.test_idx.tolist()
