"""Writers and readers for `.qmodel`, `.qvec` and `.qtest`.

The canonical text must match the engine's writer byte for byte, since the
checksum covers it. See docs/formats.md in the repository root.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from decimal import Decimal
from pathlib import Path
from typing import Union

MODEL_MAGIC = "obliv1d-qmodel"
INPUT_MAGIC = "obliv1d-qvec"
TEST_MAGIC = "obliv1d-qtest"
VERSION = 1


def fmt_float(x: float) -> str:
    """Shortest round-trip decimal, never an exponent, no trailing `.0`."""
    x = float(x)
    if x != x or x in (float("inf"), float("-inf")):
        raise ValueError(f"{x} cannot be written")
    s = repr(x)
    if "e" in s or "E" in s:
        s = format(Decimal(s), "f")
    if "." in s:
        s = s.rstrip("0").rstrip(".")
    return s


@dataclass
class QuantParams:
    scale: float
    zero_point: int


@dataclass
class Requant:
    m0: int
    n: int

    @staticmethod
    def from_real(m: float) -> "Requant":
        """`m = m0 * 2^(-31-n)` with `m0` in `[2^30, 2^31)`."""
        if not 0.0 < m < 1.0:
            raise ValueError(f"multiplier {m} is outside (0, 1)")
        n = 0
        v = m
        while v < 0.5:
            v *= 2.0
            n += 1
        m0 = round(v * 2.0**31)
        if m0 == 1 << 31:
            m0 = 1 << 30
            n -= 1
        return Requant(int(m0), n)

    def real(self) -> float:
        return self.m0 * 2.0 ** (-31 - self.n)


@dataclass
class Conv:
    filters: int
    width: int
    depth: int
    padding: str  # same_centered | trailing
    relu: bool
    weight_qp: QuantParams
    out_qp: QuantParams
    requant: Requant
    weights: list[int]  # index (f*depth + d)*width + l
    bias: list[int]


@dataclass
class Pool:
    window: int
    divisor: str = "secret"  # public | secret


@dataclass
class Flatten:
    pass


@dataclass
class Dense:
    inputs: int
    outputs: int
    relu: bool
    weight_qp: QuantParams
    out_qp: QuantParams
    requant: Requant
    weights: list[int]  # index i*outputs + o
    bias: list[int]


@dataclass
class ArgMax:
    pass


Layer = Union[Conv, Pool, Flatten, Dense, ArgMax]


@dataclass
class QModel:
    name: str
    version: int
    labels: list[str]
    input_len: int
    input_qp: QuantParams
    layers: list[Layer] = field(default_factory=list)


def _join(xs) -> str:
    return " ".join(str(int(x)) for x in xs)


def _qp(key: str, qp: QuantParams) -> str:
    return f"{key} scale={fmt_float(qp.scale)} zero_point={qp.zero_point}\n"


def _bool(b: bool) -> str:
    return "true" if b else "false"


def body(m: QModel) -> str:
    s = f"{MODEL_MAGIC} {VERSION}\n"
    s += f"model name={m.name} version={m.version}\n"
    s += ("labels " + " ".join(m.labels) + "\n") if m.labels else "labels\n"
    s += (
        f"input length={m.input_len} scale={fmt_float(m.input_qp.scale)} "
        f"zero_point={m.input_qp.zero_point}\n"
    )
    for l in m.layers:
        if isinstance(l, Conv):
            s += (
                f"layer conv filters={l.filters} width={l.width} depth={l.depth} "
                f"padding={l.padding} relu={_bool(l.relu)}\n"
            )
            s += _qp("weight_qp", l.weight_qp) + _qp("out_qp", l.out_qp)
            s += f"requant m0={l.requant.m0} n={l.requant.n}\n"
            s += f"weights {l.filters}x{l.depth}x{l.width} {_join(l.weights)}\n"
            s += f"bias {len(l.bias)} {_join(l.bias)}\n"
        elif isinstance(l, Pool):
            s += f"layer pool window={l.window} divisor={l.divisor}\n"
        elif isinstance(l, Flatten):
            s += "layer flatten\n"
        elif isinstance(l, Dense):
            s += f"layer dense inputs={l.inputs} outputs={l.outputs} relu={_bool(l.relu)}\n"
            s += _qp("weight_qp", l.weight_qp) + _qp("out_qp", l.out_qp)
            s += f"requant m0={l.requant.m0} n={l.requant.n}\n"
            s += f"weights {l.inputs}x{l.outputs} {_join(l.weights)}\n"
            s += f"bias {len(l.bias)} {_join(l.bias)}\n"
        elif isinstance(l, ArgMax):
            s += "layer argmax\n"
        else:
            raise TypeError(f"unknown layer {l!r}")
    return s


def checksum(m: QModel) -> str:
    return hashlib.sha256(body(m).encode()).hexdigest()


def write_model(m: QModel) -> str:
    b = body(m)
    return b + f"checksum {hashlib.sha256(b.encode()).hexdigest()}\n"


class FormatError(ValueError):
    pass


def _kv(tokens: list[str], no: int) -> dict[str, str]:
    out = {}
    for t in tokens:
        k, sep, v = t.partition("=")
        if not sep:
            raise FormatError(f"line {no}: expected key=value, got '{t}'")
        out[k] = v
    return out


def _content(text: str):
    for i, line in enumerate(text.splitlines()):
        t = line.split()
        if t and not t[0].startswith("#"):
            yield i + 1, t


def parse_model(text: str) -> QModel:
    """Read a model and check its checksum. Range validation is left to the
    engine, which is the authority on what it accepts."""
    lines = list(_content(text))
    if not lines or lines[0][1] != [MODEL_MAGIC, str(VERSION)]:
        raise FormatError(f"expected '{MODEL_MAGIC} {VERSION}'")
    it = iter(lines[1:])

    def nxt(key: str):
        try:
            no, t = next(it)
        except StopIteration:
            raise FormatError(f"missing '{key}' line") from None
        if t[0] != key:
            raise FormatError(f"line {no}: expected '{key}', got '{t[0]}'")
        return no, t[1:]

    no, t = nxt("model")
    kv = _kv(t, no)
    name, version = kv["name"], int(kv["version"])
    _, labels = nxt("labels")
    no, t = nxt("input")
    kv = _kv(t, no)
    model = QModel(
        name, version, list(labels), int(kv["length"]),
        QuantParams(float(kv["scale"]), int(kv["zero_point"])),
    )

    def qp(key):
        no, t = nxt(key)
        kv = _kv(t, no)
        return QuantParams(float(kv["scale"]), int(kv["zero_point"]))

    def requant():
        no, t = nxt("requant")
        kv = _kv(t, no)
        return Requant(int(kv["m0"]), int(kv["n"]))

    def tensor(key):
        _, t = nxt(key)
        return [int(v) for v in t[1:]]

    stored = None
    for no, t in it:
        if t[0] == "checksum":
            stored = t[1] if len(t) == 2 else ""
            break
        if t[0] != "layer" or len(t) < 2:
            raise FormatError(f"line {no}: expected a layer")
        kind, kv = t[1], _kv(t[2:], no)
        if kind == "conv":
            wq, oq, rq = qp("weight_qp"), qp("out_qp"), requant()
            model.layers.append(Conv(
                int(kv["filters"]), int(kv["width"]), int(kv["depth"]), kv["padding"],
                kv["relu"] == "true", wq, oq, rq, tensor("weights"), tensor("bias"),
            ))
        elif kind == "pool":
            model.layers.append(Pool(int(kv["window"]), kv["divisor"]))
        elif kind == "flatten":
            model.layers.append(Flatten())
        elif kind == "dense":
            wq, oq, rq = qp("weight_qp"), qp("out_qp"), requant()
            model.layers.append(Dense(
                int(kv["inputs"]), int(kv["outputs"]), kv["relu"] == "true",
                wq, oq, rq, tensor("weights"), tensor("bias"),
            ))
        elif kind == "argmax":
            model.layers.append(ArgMax())
        else:
            raise FormatError(f"line {no}: unknown layer kind '{kind}'")
    if stored is None:
        raise FormatError("missing checksum line")
    if stored != checksum(model):
        raise FormatError(f"checksum mismatch: file says {stored}, contents hash to {checksum(model)}")
    return model


def load_model(path) -> QModel:
    return parse_model(Path(path).read_text())


def save_model(path, m: QModel) -> None:
    Path(path).write_text(write_model(m))


def write_input(x) -> str:
    return f"{INPUT_MAGIC} {VERSION}\nvalues {len(x)} {_join(x)}\n"


def parse_input(text: str) -> list[int]:
    lines = list(_content(text))
    if len(lines) != 2 or lines[0][1] != [INPUT_MAGIC, str(VERSION)]:
        raise FormatError(f"expected '{INPUT_MAGIC} {VERSION}' and one values line")
    t = lines[1][1]
    if t[0] != "values" or int(t[1]) != len(t) - 2:
        raise FormatError("bad values line")
    vals = [int(v) for v in t[2:]]
    if any(not 0 <= v <= 255 for v in vals):
        raise FormatError("input values must be uint8")
    return vals


@dataclass
class TestCase:
    input: list[int]
    cls: int
    outputs: list[list[int]]


def write_test_vectors(model_checksum: str, cases: list[TestCase]) -> str:
    s = f"{TEST_MAGIC} {VERSION}\nmodel {model_checksum}\ncases {len(cases)}\n"
    for i, c in enumerate(cases):
        s += f"case {i} class {c.cls} layers {len(c.outputs)}\n"
        s += f"input {len(c.input)} {_join(c.input)}\n"
        for o in c.outputs:
            s += f"output {len(o)} {_join(o)}\n"
    return s


def parse_test_vectors(text: str) -> tuple[str, list[TestCase]]:
    lines = list(_content(text))
    if not lines or lines[0][1] != [TEST_MAGIC, str(VERSION)]:
        raise FormatError(f"expected '{TEST_MAGIC} {VERSION}'")
    model = lines[1][1][1]
    count = int(lines[2][1][1])
    cases: list[TestCase] = []
    i = 3
    while i < len(lines):
        _, h = lines[i]
        n_layers = int(h[5])
        inp = [int(v) for v in lines[i + 1][1][2:]]
        outs = [[int(v) for v in lines[i + 2 + k][1][2:]] for k in range(n_layers)]
        cases.append(TestCase(inp, int(h[3]), outs))
        i += 2 + n_layers
    if len(cases) != count:
        raise FormatError(f"{len(cases)} cases, header says {count}")
    return model, cases


def save_test_vectors(path, model_checksum: str, cases: list[TestCase]) -> None:
    Path(path).write_text(write_test_vectors(model_checksum, cases))
