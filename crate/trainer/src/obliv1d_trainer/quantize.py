"""Post-training int8 quantization of a trained Keras model into a `QModel`.

Per-tensor parameters throughout. Activations are asymmetric uint8 with
ranges taken from a calibration batch; weights are symmetric int8; biases
are int32 at scale `s_in * s_w` with zero-point 0.
"""

from __future__ import annotations

import logging

import numpy as np

from .qformat import ArgMax, Conv, Dense, Flatten, Pool, QModel, QuantParams, Requant

log = logging.getLogger(__name__)

ACC_BOUND = 1 << 26
MAX_SHIFT = 12
# Multipliers at or above 1 are pulled just under it by widening the output range.
MAX_MULTIPLIER = 0.999


class ExportError(ValueError):
    pass


def quantize_value(alpha, qp: QuantParams):
    """Nearest representable value, ties to the smaller real; clamps outside
    the domain."""
    t = np.ceil(np.asarray(alpha, dtype=np.float64) / qp.scale - 0.5) + qp.zero_point
    return np.clip(t, 0, 255).astype(np.int64)


def dequantize_value(a, qp: QuantParams):
    return qp.scale * (np.asarray(a, dtype=np.float64) - qp.zero_point)


def asymmetric(lo: float, hi: float) -> QuantParams:
    lo, hi = min(float(lo), 0.0), max(float(hi), 0.0)
    if hi == lo:
        return QuantParams(1.0, 0)
    scale = (hi - lo) / 255.0
    return QuantParams(scale, int(min(255, max(0, round(-lo / scale)))))


def _weights(w: np.ndarray) -> tuple[QuantParams, np.ndarray]:
    peak = float(np.max(np.abs(w))) if w.size else 0.0
    scale = peak / 127.0 if peak > 0 else 1.0
    return QuantParams(scale, 0), np.clip(np.round(w / scale), -127, 127).astype(np.int64)


def _affine(name, w, b, s_in, out_range):
    """Weight, bias, output and requant parameters for one conv or dense."""
    wqp, wq = _weights(w)
    s_b = s_in * wqp.scale
    bq = np.round(b / s_b).astype(np.int64)
    if np.any(np.abs(bq) >= 1 << 31):
        raise ExportError(f"{name}: bias does not fit int32 at scale {s_b:.3e}")
    oqp = asymmetric(*out_range)
    m = s_in * wqp.scale / oqp.scale
    if m >= MAX_MULTIPLIER:
        lo, hi = min(out_range[0], 0.0), max(out_range[1], 0.0)
        scale = s_in * wqp.scale / MAX_MULTIPLIER
        oqp = QuantParams(scale, int(min(255, max(0, round(-lo / scale)))))
        log.info("%s: widened output scale to keep the multiplier below 1 (range %g..%g)", name, lo, hi)
        m = s_in * wqp.scale / oqp.scale
    rq = Requant.from_real(m)
    if rq.n > MAX_SHIFT:
        raise ExportError(
            f"{name}: multiplier {m:.3e} needs shift {rq.n}, more than {MAX_SHIFT}"
        )
    return wqp, wq, bq, oqp, rq


def _check_acc(name: str, wq: np.ndarray, bq: np.ndarray) -> None:
    """`wq` is (outputs, fan_in)."""
    bound = np.abs(bq) + 255 * np.abs(wq).sum(axis=1)
    worst = int(bound.max())
    if worst >= ACC_BOUND:
        o = int(bound.argmax())
        raise ExportError(
            f"{name}: output {o} can reach {worst}, beyond the accumulator bound 2^26"
        )


def _layer_kind(layer) -> str:
    return type(layer).__name__


def quantize_model(model, calib_x: np.ndarray, name: str, labels: list[str],
                   pool_divisor: str = "secret") -> QModel:
    """Quantize a Sequential Conv1D/AveragePooling1D/Flatten/Dense network.

    `calib_x` is (n, M) real features. Dropout is dropped, softmax becomes
    argmax.
    """
    import keras

    layers = [l for l in model.layers if _layer_kind(l) not in ("Dropout", "InputLayer")]
    calib = np.asarray(calib_x, dtype=np.float32)[..., None]
    probe = keras.Model(inputs=model.inputs, outputs=[l.output for l in layers])
    acts = [np.asarray(a) for a in probe.predict(calib, verbose=0)]

    input_len = calib.shape[1]
    in_qp = asymmetric(calib.min(), calib.max())
    q = QModel(name, 1, list(labels), input_len, in_qp)
    s_in = in_qp.scale
    i = 0
    while i < len(layers):
        l, kind = layers[i], _layer_kind(layers[i])
        nxt = _layer_kind(layers[i + 1]) if i + 1 < len(layers) else None
        act = l.get_config().get("activation", "linear")
        relu = act == "relu" or (nxt == "Activation" and layers[i + 1].get_config()["activation"] == "relu")
        # Range after any fused or following activation.
        out = acts[i + 1] if nxt == "Activation" and relu else acts[i]
        if kind == "Conv1D":
            w, b = l.get_weights()  # (L, D, F), (F,)
            width, d, f = w.shape
            if l.get_config()["strides"] not in ([1], (1,), 1):
                raise ExportError(f"layer {i} ({l.name}): only stride 1 is supported")
            padding = {"same": "same_centered"}.get(l.get_config()["padding"])
            if padding is None:
                raise ExportError(f"layer {i} ({l.name}): padding must be 'same'")
            wqp, wq, bq, oqp, rq = _affine(l.name, w, b, s_in, (out.min(), out.max()))
            wfdl = wq.transpose(2, 1, 0)
            _check_acc(l.name, wfdl.reshape(f, -1), bq)
            q.layers.append(Conv(f, width, d, padding, relu, wqp, oqp, rq,
                                 wfdl.reshape(-1).tolist(), bq.tolist()))
            s_in = oqp.scale
        elif kind == "AveragePooling1D":
            ps = l.get_config()["pool_size"]
            p = ps[0] if isinstance(ps, (list, tuple)) else ps
            q.layers.append(Pool(int(p), pool_divisor))
        elif kind == "Flatten":
            q.layers.append(Flatten())
        elif kind == "Dense":
            w, b = l.get_weights()  # (I, O), (O,)
            wqp, wq, bq, oqp, rq = _affine(l.name, w, b, s_in, (out.min(), out.max()))
            _check_acc(l.name, wq.T, bq)
            q.layers.append(Dense(w.shape[0], w.shape[1], relu, wqp, oqp, rq,
                                  wq.reshape(-1).tolist(), bq.tolist()))
            s_in = oqp.scale
        elif kind == "Activation":
            a = l.get_config()["activation"]
            if a not in ("relu", "softmax", "linear"):
                raise ExportError(f"layer {i} ({l.name}): activation '{a}' is not supported")
        else:
            raise ExportError(f"layer {i} ({l.name}): {kind} is not supported")
        i += 1
    q.layers.append(ArgMax())
    return q
