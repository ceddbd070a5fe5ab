import pytest

from obliv1d_trainer import qformat as q


@pytest.mark.parametrize("x,s", [
    (1.0, "1"), (0.1, "0.1"), (1e-5, "0.00001"), (2.5e-7, "0.00000025"),
    (1e16, "10000000000000000"), (123.456, "123.456"), (0.11666633083825591, "0.11666633083825591"),
])
def test_floats_match_the_engine(x, s):
    assert q.fmt_float(x) == s


def test_committed_model_roundtrips_byte_for_byte(repo):
    text = (repo / "models" / "tiny.qmodel").read_text()
    assert q.write_model(q.parse_model(text)) == text


def test_tampered_model_is_refused(repo):
    text = (repo / "models" / "tiny.qmodel").read_text()
    with pytest.raises(q.FormatError, match="checksum"):
        q.parse_model(text.replace("relu=true", "relu=false", 1))


def test_input_roundtrip():
    x = list(range(0, 240, 6))
    assert q.parse_input(q.write_input(x)) == x
    with pytest.raises(q.FormatError):
        q.parse_input("obliv1d-qvec 1\nvalues 2 1\n")


def test_empty_vectors_are_valid():
    text = q.write_test_vectors("ab" * 32, [])
    assert q.parse_test_vectors(text) == ("ab" * 32, [])


def test_requant_decomposition():
    import random

    rng = random.Random(1)
    for _ in range(10_000):
        m = 2 ** rng.uniform(-12.9, -0.001)
        rq = q.Requant.from_real(m)
        assert (1 << 30) <= rq.m0 < (1 << 31)
        assert abs(rq.real() - m) / m < 2 ** -30
