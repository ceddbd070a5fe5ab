from obliv1d_trainer import qformat as q, qref


def test_reference_reproduces_engine_vectors(repo):
    model = q.load_model(repo / "models" / "tiny.qmodel")
    stored, cases = q.parse_test_vectors((repo / "testdata" / "tiny.qtest").read_text())
    assert stored == q.checksum(model)
    assert len(cases) == 200
    for c in cases:
        cls, outs = qref.run(model, c.input)
        assert cls == c.cls
        assert outs == c.outputs


def test_pool_rounds_half_up_and_drops_the_tail():
    import numpy as np

    x = np.array([[1, 19, 0, 0, 1, 4, 9]])
    assert qref.avg_pool(x, 2).tolist() == [[10, 0, 3]]
