import numpy as np
import pytest

from biglittle.graph import ModelKind, build
from biglittle.nn import (FloatModel, conv1d_bwd, conv1d_fwd, cross_entropy, dense_bwd, dense_fwd, maxpool_bwd,
                          maxpool_fwd)

H = 1e-6
TOL = 1e-4


def rel_err(a, b):
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)


def numeric_grad(f, arr):
    g = np.zeros_like(arr)
    for idx in np.ndindex(arr.shape):
        old = arr[idx]
        arr[idx] = old + H
        fp = f()
        arr[idx] = old - H
        fm = f()
        arr[idx] = old
        g[idx] = (fp - fm) / (2 * H)
    return g


@pytest.mark.parametrize("stride", [1, 2])
@pytest.mark.parametrize("relu", [True, False])
def test_conv_gradients(stride, relu):
    rng = np.random.default_rng(stride + 2 * relu)
    x = rng.normal(size=(1, 4, 2))  # 8 elements
    kernel = rng.normal(size=(3, 2, 2))
    bias = rng.normal(size=2)
    out, _ = conv1d_fwd(x, kernel, bias, stride, relu)
    r = rng.normal(size=out.shape)

    def loss():
        return float((conv1d_fwd(x, kernel, bias, stride, relu)[0] * r).sum())

    _, cache = conv1d_fwd(x, kernel, bias, stride, relu)
    dx, dk, db = conv1d_bwd(r, kernel, cache)
    for analytic, arr in ((dx, x), (dk, kernel), (db, bias)):
        assert rel_err(analytic, numeric_grad(loss, arr)).max() < TOL


def test_maxpool_gradient():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(1, 8, 1))
    r = rng.normal(size=(1, 4, 1))
    _, cache = maxpool_fwd(x)
    dx = maxpool_bwd(r, cache)
    assert rel_err(dx, numeric_grad(lambda: float((maxpool_fwd(x)[0] * r).sum()), x)).max() < TOL


def test_dense_gradients():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(2, 4))  # 8 elements
    kernel = rng.normal(size=(4, 2))
    bias = rng.normal(size=2)
    r = rng.normal(size=(2, 2))

    def loss():
        return float((dense_fwd(x, kernel, bias)[0] * r).sum())

    _, cache = dense_fwd(x, kernel, bias)
    dx, dk, db = dense_bwd(r, kernel, cache)
    for analytic, arr in ((dx, x), (dk, kernel), (db, bias)):
        assert rel_err(analytic, numeric_grad(loss, arr)).max() < TOL


def test_cross_entropy_gradient():
    rng = np.random.default_rng(2)
    logits = rng.normal(size=(4, 2))
    y = np.array([0, 1, 1, 0])
    w = np.array([1.0, 3.0])
    _, g = cross_entropy(logits, y, w)
    assert rel_err(g, numeric_grad(lambda: cross_entropy(logits, y, w)[0], logits)).max() < TOL


@pytest.mark.parametrize("kind", [ModelKind.little(2), ModelKind.dual(), ModelKind.big()])
def test_model_gradients(kind):
    graph = build(kind)
    rng = np.random.default_rng(7)
    model = FloatModel.initialize(graph, 1)
    for p in model.params.values():
        p["bias"][:] = rng.normal(0, 0.1, p["bias"].shape)
    xs = [rng.normal(size=(2,) + s) for _, s in graph.inputs]
    y = rng.integers(0, kind.n_classes, 2)
    _, grads = model.loss_and_grads(xs, y)
    for lname, p in model.params.items():
        for key in ("kernel", "bias"):
            arr = p[key]
            flat = list(np.ndindex(arr.shape))
            picks = [flat[i] for i in rng.choice(len(flat), size=min(8, len(flat)), replace=False)]
            for idx in picks:
                old = arr[idx]
                arr[idx] = old + H
                lp = model.loss_and_grads(xs, y)[0]
                arr[idx] = old - H
                lm = model.loss_and_grads(xs, y)[0]
                arr[idx] = old
                fd = (lp - lm) / (2 * H)
                an = grads[lname][key][idx]
                assert abs(fd - an) <= TOL * max(abs(fd), abs(an), 1e-6), (lname, key, idx, fd, an)


def test_initialize_is_seeded():
    g = build(ModelKind.dual())
    a, b, c = FloatModel.initialize(g, 4), FloatModel.initialize(g, 4), FloatModel.initialize(g, 5)
    assert all(np.array_equal(a.params[k]["kernel"], b.params[k]["kernel"]) for k in a.params)
    assert not np.array_equal(a.params["conv1d"]["kernel"], c.params["conv1d"]["kernel"])


def test_he_uniform_limits():
    m = FloatModel.initialize(build(ModelKind.big()), 0)
    k = m.params["conv1d_3"]["kernel"]
    assert np.abs(k).max() <= np.sqrt(6.0 / (3 * 16))
    assert all(not p["bias"].any() for p in m.params.values())
