import numpy as np
import pytest

from obliv1d_trainer.qformat import QuantParams
from obliv1d_trainer.quantize import asymmetric, dequantize_value, quantize_value


def test_nearest_with_ties_to_the_smaller_value():
    qp = QuantParams(0.5, 10)
    assert quantize_value(2.0, qp) == 14
    assert quantize_value(2.25, qp) == 14
    assert quantize_value(2.26, qp) == 15
    assert dequantize_value(14, qp) == 2.0


def test_out_of_domain_values_clamp():
    qp = QuantParams(0.5, 10)
    assert quantize_value(-100.0, qp) == 0
    assert quantize_value(1e6, qp) == 255


def test_asymmetric_range_contains_zero():
    qp = asymmetric(2.0, 10.0)
    assert qp.zero_point == 0
    assert quantize_value(0.0, qp) == 0
    qp = asymmetric(-5.0, 5.0)
    assert 120 <= qp.zero_point <= 135
    assert dequantize_value(quantize_value(0.0, qp), qp) == pytest.approx(0.0, abs=qp.scale / 2)
    assert asymmetric(0.0, 0.0) == QuantParams(1.0, 0)


def test_accumulator_bound():
    from obliv1d_trainer.quantize import ExportError, _check_acc

    w = np.full((2, 100), 127)
    _check_acc("ok", w, np.zeros(2, dtype=np.int64))  # 255*127*100 is well under 2^26
    with pytest.raises(ExportError, match="output 1 .*accumulator bound"):
        _check_acc("big", w, np.array([0, 1 << 26]))
    with pytest.raises(ExportError, match="accumulator bound"):
        _check_acc("wide", np.full((1, 2100), 127), np.zeros(1, dtype=np.int64))
