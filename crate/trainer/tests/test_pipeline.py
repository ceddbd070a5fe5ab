"""Train, export and check against the engine. Small sizes only."""

import json

import numpy as np
import pytest

pytest.importorskip("tensorflow")

from obliv1d_trainer import qformat as q, qref
from obliv1d_trainer.features import LABELS
from obliv1d_trainer.model import train_model
from obliv1d_trainer.quantize import ExportError, quantize_model
from obliv1d_trainer.vectors import gen_test_vectors, quantize_inputs


def _data(n, seed):
    rng = np.random.default_rng(seed)
    y = rng.integers(0, 8, size=n)
    centers = rng.normal(0, 20, size=(8, 40))
    x = centers[y] + rng.normal(0, 3, size=(n, 40))
    x[:, 0] -= 300  # the first coefficient sits far from the rest, as in real MFCCs
    return x.astype(np.float32), y


def test_ten_samples_overfit():
    x, y = _data(10, 0)
    _, report = train_model(x, y, seed=1, epochs=150, batch_size=10, lr=1e-3, filters=16)
    assert report["train_accuracy"] >= 0.9


@pytest.fixture(scope="module")
def tiny():
    x, y = _data(120, 2)
    model, report = train_model(x[:80], y[:80], x[80:], y[80:], seed=0, epochs=40,
                                batch_size=16, lr=1e-3, filters=2)
    return model, x, y


def test_two_filter_model_exports_and_the_engine_agrees(tiny, obliv1d, tmp_path):
    model, x, y = tiny
    qm = quantize_model(model, x[:80][:100], "tiny2", LABELS)
    assert all((1 << 30) <= l.requant.m0 < (1 << 31) for l in qm.layers if hasattr(l, "requant"))
    path = tmp_path / "tiny2.qmodel"
    q.save_model(path, qm)

    vec = tmp_path / "tiny2.qtest"
    rate = gen_test_vectors(qm, x[80:], y[80:], vec)
    hits = sum(qref.run(qm, r)[0] == t for r, t in zip(quantize_inputs(qm, x[80:]), y[80:]))
    assert rate == hits / 40

    arch = obliv1d("arch", "--model", path)
    assert arch.returncode == 0, arch.stderr
    kinds = [l["kind"] if isinstance(l, dict) and "kind" in l else l for l in json.loads(arch.stdout)["layers"]]
    assert len(kinds) == 6
    v = obliv1d("verify", "--model", path, "--vectors", vec)
    assert v.returncode == 0, v.stderr + v.stdout
    assert json.loads(v.stdout) == {"cases": 40, "classes_match": 40, "layers_match": 40}

    sim = obliv1d("local-sim", "--scheme", "semi-3pc", "--model", path,
                  "--input", _qvec(tmp_path, qm, x[80]))
    assert sim.returncode == 0, sim.stderr
    assert int(sim.stdout) == qref.run(qm, quantize_inputs(qm, x[80:81])[0])[0]


def _qvec(tmp_path, qm, row):
    p = tmp_path / "x.qvec"
    p.write_text(q.write_input(quantize_inputs(qm, row[None])[0].tolist()))
    return p


def test_export_refuses_unrepresentable_layers(tiny):
    import keras

    model, x, _ = tiny
    big = keras.models.clone_model(model)
    big.set_weights(model.get_weights())
    w, b = big.layers[0].get_weights()
    b[:] = np.abs(w).max() * 10_000_000
    big.layers[0].set_weights([w, b])
    with pytest.raises(ExportError, match="shift|accumulator bound|int32"):
        quantize_model(big, x[:50], "big", LABELS)
