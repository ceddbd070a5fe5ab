"""`obliv1d-train dataset|train|export|vectors`."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .features import LABELS, FeatureDataset, extract_features
from .qformat import load_model, save_model
from .quantize import ExportError, quantize_model
from .vectors import gen_test_vectors

log = logging.getLogger("obliv1d_trainer")

CALIBRATION = 100


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def cmd_dataset(a) -> int:
    ds = extract_features(a.audio)
    ds.split(a.seed)
    ds.save(a.out)
    print(json.dumps({"clips": len(ds.y), "skipped": ds.skipped,
                      "train": len(ds.train_idx), "test": len(ds.test_idx)}))
    return 0


def cmd_train(a) -> int:
    from .model import train_model

    ds = FeatureDataset.load(a.features)
    model, report = train_model(
        ds.x[ds.train_idx], ds.y[ds.train_idx], ds.x[ds.test_idx], ds.y[ds.test_idx],
        seed=a.seed, epochs=a.epochs, batch_size=a.batch_size, lr=a.lr, filters=a.filters,
    )
    model.save(a.out)
    _write_json(Path(str(a.out) + ".json"), report)
    print(json.dumps(report))
    return 0


def cmd_export(a) -> int:
    import keras

    ds = FeatureDataset.load(a.features)
    model = keras.models.load_model(a.keras)
    rng = np.random.default_rng(a.seed)
    train = ds.x[ds.train_idx]
    pick = rng.choice(len(train), size=min(CALIBRATION, len(train)), replace=False)
    try:
        q = quantize_model(model, train[pick], a.name, LABELS, pool_divisor=a.pool_divisor)
    except ExportError as e:
        print(f"export refused: {e}", file=sys.stderr)
        return 3
    save_model(a.out, q)
    from .vectors import quantize_inputs
    from . import qref

    xt, yt = ds.x[ds.test_idx], ds.y[ds.test_idx]
    hits = sum(qref.run(q, row)[0] == int(t) for row, t in zip(quantize_inputs(q, xt), yt))
    meta = {"calibration_vectors": int(len(pick)),
            "quantized_test_accuracy": hits / len(yt) if len(yt) else None}
    _write_json(Path(str(a.out) + ".json"), meta)
    print(json.dumps(meta))
    return 0


def cmd_vectors(a) -> int:
    ds = FeatureDataset.load(a.features)
    q = load_model(a.model)
    rate = gen_test_vectors(q, ds.x[ds.test_idx], ds.y[ds.test_idx], a.out)
    print(json.dumps({"cases": len(ds.test_idx), "class_agreement": rate}))
    return 0


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("OBLIV1D_LOG", "warning").upper(),
                        format="ts=%(created).3f level=%(levelname)s target=%(name)s %(message)s")
    p = argparse.ArgumentParser(prog="obliv1d-train")
    sub = p.add_subparsers(dest="cmd", required=True)

    s = sub.add_parser("dataset", help="extract MFCC features and split")
    s.add_argument("--audio", required=True, type=Path)
    s.add_argument("--out", required=True, type=Path)
    s.add_argument("--seed", type=int, default=0, help="train/test split seed")
    s.set_defaults(run=cmd_dataset)

    s = sub.add_parser("train", help="train the CNN")
    s.add_argument("--features", required=True, type=Path)
    s.add_argument("--out", required=True, type=Path, help="a .keras file")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--epochs", type=int, default=1000)
    s.add_argument("--batch-size", type=int, default=16)
    s.add_argument("--lr", type=float, default=5e-5)
    s.add_argument("--filters", type=int, default=128)
    s.set_defaults(run=cmd_train)

    s = sub.add_parser("export", help="quantize to a .qmodel")
    s.add_argument("--features", required=True, type=Path)
    s.add_argument("--keras", required=True, type=Path)
    s.add_argument("--out", required=True, type=Path)
    s.add_argument("--name", default="ravdess")
    s.add_argument("--pool-divisor", choices=["secret", "public"], default="secret")
    s.add_argument("--seed", type=int, default=0, help="calibration sample seed")
    s.set_defaults(run=cmd_export)

    s = sub.add_parser("vectors", help="golden vectors for the held-out split")
    s.add_argument("--features", required=True, type=Path)
    s.add_argument("--model", required=True, type=Path)
    s.add_argument("--out", required=True, type=Path)
    s.set_defaults(run=cmd_vectors)

    a = p.parse_args(argv)
    return a.run(a)


if __name__ == "__main__":
    sys.exit(main())
