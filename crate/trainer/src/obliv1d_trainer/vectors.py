"""Golden test vectors from the integer reference."""

from __future__ import annotations

import numpy as np

from . import qref
from .qformat import QModel, TestCase, checksum, save_test_vectors
from .quantize import quantize_value


def quantize_inputs(model: QModel, x) -> np.ndarray:
    return quantize_value(np.asarray(x, dtype=np.float64), model.input_qp)


def gen_test_vectors(model: QModel, x, y, out_path) -> float:
    """Write one case per row of `x` and return the class agreement with `y`
    (NaN when empty)."""
    cases = []
    hits = 0
    for row, label in zip(quantize_inputs(model, x).reshape(-1, model.input_len), y):
        cls, outs = qref.run(model, row)
        cases.append(TestCase([int(v) for v in row], cls, outs))
        hits += int(cls == int(label))
    save_test_vectors(out_path, checksum(model), cases)
    return hits / len(cases) if cases else float("nan")
