import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import ortho_group

from semtask.errors import DimensionMismatch, InvalidConfig
from semtask.evalkit import (
    ClassifierSpec,
    EmbeddingStore,
    bdcspn_rectify,
    compute_prototypes,
    finetune_fit,
    finetune_fit_predict,
    protonet_predict,
    softmax_xent,
)
from semtask.sampler import TaskSpec


def make_task(support, query, task_id=0):
    classes = tuple(support)
    return TaskSpec(task_id, classes, {c: tuple(support[c]) for c in classes},
                    {c: tuple(query[c]) for c in classes}, 1.0)


def toy_store(vectors: dict, classes: dict):
    ids = list(vectors)
    return EmbeddingStore(ids, [classes[i] for i in ids], [vectors[i] for i in ids])


def test_prototype_single_shot():
    store = toy_store({"s": [1.0, 2.0], "q": [0.0, 0.0]}, {"s": "a", "q": "a"})
    protos = compute_prototypes(store, make_task({"a": ["s"]}, {"a": ["q"]}))
    np.testing.assert_array_equal(protos["a"], [1.0, 2.0])


def test_prototype_mean():
    store = toy_store({"s0": [0, 0], "s1": [2, 2], "q": [0, 0]}, {"s0": "a", "s1": "a", "q": "a"})
    protos = compute_prototypes(store, make_task({"a": ["s0", "s1"]}, {"a": ["q"]}))
    np.testing.assert_array_equal(protos["a"], [1.0, 1.0])


def test_prototype_matches_naive_sum(rng):
    vecs = rng.normal(size=(6, 5)).astype(np.float32)
    store = EmbeddingStore([f"i{k}" for k in range(6)], ["a"] * 6, vecs)
    protos = compute_prototypes(store, make_task({"a": [f"i{k}" for k in range(5)]}, {"a": ["i5"]}))
    naive = [sum(float(vecs[k, d]) for k in range(5)) / 5 for d in range(5)]
    np.testing.assert_allclose(protos["a"], naive, rtol=1e-12)


def test_protonet_examples():
    protos = np.array([[0.0, 0.0], [10.0, 0.0]])
    assert protonet_predict(protos, [[1.0, 0.0]]).tolist() == [[0, 1]]
    assert protonet_predict(protos, [[10.0, 0.0]]).tolist() == [[1, 0]]
    # equidistant: earlier class first
    assert protonet_predict(protos, [[5.0, 3.0]]).tolist() == [[0, 1]]
    with pytest.raises(DimensionMismatch):
        protonet_predict(protos, [[1.0, 2.0, 3.0]])


def test_protonet_accepts_mapping():
    protos = {"x": np.array([0.0]), "y": np.array([4.0])}
    assert protonet_predict(protos, [[3.0]]).tolist() == [[1, 0]]


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_protonet_rigid_motion_invariant(seed):
    rng = np.random.default_rng(seed)
    protos = rng.normal(size=(5, 8))
    queries = rng.normal(size=(30, 8))
    rot = ortho_group.rvs(8, random_state=seed % (2**32 - 1))
    shift = rng.normal(scale=50.0, size=8)
    before = protonet_predict(protos, queries)[:, 0]
    after = protonet_predict(protos @ rot + shift, queries @ rot + shift)[:, 0]
    assert np.array_equal(before, after)


def test_bdcspn_fixed_point():
    protos = np.array([[0.0, 1.0], [4.0, 4.0]])
    out = bdcspn_rectify(protos, protos.repeat(3, axis=0))
    np.testing.assert_allclose(out, protos)


def test_bdcspn_unassigned_prototype_unchanged():
    protos = np.array([[0.0], [10.0], [100.0]])
    out = bdcspn_rectify(protos, [[1.0], [9.0]])
    assert out[2, 0] == 100.0


def test_bdcspn_one_dimensional_by_hand():
    protos = np.array([[0.0], [10.0]])
    out = bdcspn_rectify(protos, [[1.0], [9.0]])
    np.testing.assert_allclose(out[:, 0], [0.5, 9.5], rtol=1e-12)

    # with a soft temperature the query weights differ
    t = 100.0
    w1 = 1 / (1 + math.exp(-(81 - 1) / t))
    w3 = 1 / (1 + math.exp(-(49 - 9) / t))
    m0 = (w1 * 1 + w3 * 3) / (w1 + w3)
    out = bdcspn_rectify(protos, [[1.0], [3.0], [9.0]], temperature=t, shift_weight=0.5)
    assert out[0, 0] == pytest.approx(0.5 * m0, rel=1e-12)
    assert out[1, 0] == pytest.approx(9.5, rel=1e-12)
    out = bdcspn_rectify(protos, [[1.0], [3.0], [9.0]], temperature=t, shift_weight=0.25)
    assert out[0, 0] == pytest.approx(0.25 * m0, rel=1e-12)


def _support_store():
    angles = {"a0": 0.1, "a1": 0.3, "a2": -0.2, "b0": 1.4, "b1": 1.7, "b2": 1.2}
    vecs = {k: [math.cos(v), math.sin(v)] for k, v in angles.items()}
    vecs["qa"] = [1.0, 0.0]
    vecs["qb"] = [0.0, 1.0]
    classes = {k: k[0] if k[0] != "q" else k[1] for k in vecs}
    store = toy_store(vecs, classes)
    task = make_task({"a": ["a0", "a1", "a2"], "b": ["b0", "b1", "b2"]}, {"a": ["qa"], "b": ["qb"]})
    return store, task


def test_finetune_zero_learning_rate_is_uniform():
    store, task = _support_store()
    for steps, lr in [(10, 0.0), (0, 1e-3)]:
        ranking = finetune_fit_predict(store, task, steps=steps, learning_rate=lr)
        assert ranking.tolist() == [[0, 1], [0, 1]]


def _naive_fit(x, y, n, steps, lr):
    """Loop-only reference for full-batch gradient descent."""
    dim = len(x[0])
    w = [[0.0] * dim for _ in range(n)]
    b = [0.0] * n
    for _ in range(steps):
        gw = [[0.0] * dim for _ in range(n)]
        gb = [0.0] * n
        for xi, yi in zip(x, y):
            logits = [sum(w[c][d] * xi[d] for d in range(dim)) + b[c] for c in range(n)]
            top = max(logits)
            exps = [math.exp(v - top) for v in logits]
            total = sum(exps)
            for c in range(n):
                g = exps[c] / total - (1.0 if c == yi else 0.0)
                gb[c] += g / len(x)
                for d in range(dim):
                    gw[c][d] += g * xi[d] / len(x)
        for c in range(n):
            b[c] -= lr * gb[c]
            for d in range(dim):
                w[c][d] -= lr * gw[c][d]
    return np.array(w), np.array(b)


def test_finetune_separable_toy_matches_reference():
    store, task = _support_store()
    from semtask.evalkit.classifiers import support_arrays

    x, y = support_arrays(store, task)
    w, b = finetune_fit(x, y, 2, steps=10, learning_rate=1e-3)
    w_ref, b_ref = _naive_fit(x.tolist(), y.tolist(), 2, 10, 1e-3)
    np.testing.assert_allclose(w, w_ref, rtol=1e-10, atol=1e-15)
    np.testing.assert_allclose(b, b_ref, rtol=1e-10, atol=1e-15)
    pred = np.argmax(x @ w.T + b, axis=1)
    assert np.array_equal(pred, y)
    assert finetune_fit_predict(store, task)[:, 0].tolist() == [0, 1]


def numeric_gradient(f, params, eps=1e-5):
    grad = np.zeros_like(params)
    it = np.nditer(params, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        old = params[idx]
        params[idx] = old + eps
        up = f()
        params[idx] = old - eps
        down = f()
        params[idx] = old
        grad[idx] = (up - down) / (2 * eps)
    return grad


def relative_error(a, b):
    return np.max(np.abs(a - b) / np.maximum(np.abs(a) + np.abs(b), 1e-8))


def test_gradient_matches_finite_differences(rng):
    x = rng.normal(size=(9, 6))
    y = np.repeat(np.arange(3), 3)
    w = rng.normal(scale=0.5, size=(3, 6))
    b = rng.normal(scale=0.5, size=3)
    _, dw, db = softmax_xent(w, b, x, y)
    num_w = numeric_gradient(lambda: softmax_xent(w, b, x, y)[0], w)
    num_b = numeric_gradient(lambda: softmax_xent(w, b, x, y)[0], b)
    assert relative_error(dw, num_w) < 1e-4
    assert relative_error(db, num_b) < 1e-4


def test_loss_value_by_hand():
    x = np.array([[1.0, 0.0]])
    w = np.array([[1.0, 0.0], [0.0, 0.0]])
    loss, _, _ = softmax_xent(w, np.zeros(2), x, np.array([0]))
    assert loss == pytest.approx(math.log(1 + math.exp(-1)), rel=1e-14)


def test_finetune_deterministic():
    store, task = _support_store()
    a = finetune_fit_predict(store, task, steps=25, learning_rate=0.1)
    b = finetune_fit_predict(store, task, steps=25, learning_rate=0.1)
    assert np.array_equal(a, b)


@pytest.mark.parametrize(
    "method,params",
    [
        ("knn", {}),
        ("finetune", {"steps": -1}),
        ("finetune", {"steps": 1.5}),
        ("finetune", {"momentum": 0.9}),
        ("bdcspn", {"temperature": 0.0}),
        ("bdcspn", {"shift_weight": 2.0}),
    ],
)
def test_classifier_spec_validation(method, params):
    with pytest.raises(InvalidConfig):
        ClassifierSpec(method, params)


def test_classifier_spec_defaults():
    assert ClassifierSpec("finetune").hyperparameters == {"steps": 10, "learning_rate": 1e-3}
    assert ClassifierSpec("bdcspn").hyperparameters == {"temperature": 1.0, "shift_weight": 0.5}
