"""Integer-only reference forward pass, written from docs/formats.md.

Kept independent of the engine's oracle so the two can be checked against
each other on golden vectors.
"""

from __future__ import annotations

import numpy as np

from .qformat import ArgMax, Conv, Dense, Flatten, Pool, QModel

MULT_BITS = 12


def _reduced(m0: int) -> int:
    drop = 31 - MULT_BITS
    return (m0 + (1 << (drop - 1))) >> drop


def requantize(acc: np.ndarray, m0: int, n: int, z_out: int, relu: bool) -> np.ndarray:
    s = MULT_BITS + n
    y = acc.astype(np.int64) * _reduced(m0) + (1 << (s - 1))
    v = (y >> s) + z_out  # arithmetic shift is a floor
    return np.clip(v, z_out if relu else 0, 255)


def conv_acc(x: np.ndarray, w: np.ndarray, bias: np.ndarray, padding: str) -> np.ndarray:
    """`x` is (D, M), `w` is (F, D, L); returns (F, M) accumulators."""
    d, m = x.shape
    f, _, width = w.shape
    left = (width - 1) // 2 if padding == "same_centered" else 0
    xp = np.zeros((d, m + width - 1), dtype=np.int64)
    xp[:, left:left + m] = x
    out = np.tile(bias.astype(np.int64)[:, None], (1, m))
    for l in range(width):
        out += np.einsum("fd,dm->fm", w[:, :, l].astype(np.int64), xp[:, l:l + m])
    return out


def avg_pool(x: np.ndarray, p: int) -> np.ndarray:
    d, m = x.shape
    mo = m // p
    sums = x[:, : mo * p].reshape(d, mo, p).sum(axis=2)
    return (sums + p // 2) // p


def run(model: QModel, inp) -> tuple[int, list[list[int]]]:
    """Class index and every layer's output, flattened channel-major."""
    x = np.asarray(inp, dtype=np.int64).reshape(1, -1)
    if x.shape[1] != model.input_len:
        raise ValueError(f"input has {x.shape[1]} values, model wants {model.input_len}")
    z = model.input_qp.zero_point
    outs: list[list[int]] = []
    for layer in model.layers:
        if isinstance(layer, Conv):
            w = np.asarray(layer.weights, dtype=np.int64).reshape(layer.filters, layer.depth, layer.width)
            acc = conv_acc(x - z, w, np.asarray(layer.bias), layer.padding)
            x = requantize(acc, layer.requant.m0, layer.requant.n, layer.out_qp.zero_point, layer.relu)
            z = layer.out_qp.zero_point
        elif isinstance(layer, Pool):
            x = avg_pool(x, layer.window)
        elif isinstance(layer, Flatten):
            x = x.T.reshape(1, -1)
        elif isinstance(layer, Dense):
            v = x.T.reshape(-1) if x.shape[0] > 1 else x.reshape(-1)
            w = np.asarray(layer.weights, dtype=np.int64).reshape(layer.inputs, layer.outputs)
            acc = (v - z) @ w + np.asarray(layer.bias, dtype=np.int64)
            x = requantize(acc, layer.requant.m0, layer.requant.n, layer.out_qp.zero_point, layer.relu)
            x = x.reshape(1, -1)
            z = layer.out_qp.zero_point
        elif isinstance(layer, ArgMax):
            x = np.array([[int(np.argmax(x.reshape(-1)))]])
        outs.append([int(v) for v in x.reshape(-1)])
    return outs[-1][0], outs
