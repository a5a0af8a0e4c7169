import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from biglittle.distance import (DistanceTrigger, MahalanobisMetric, SingularCovarianceWarning, euclidean,
                                mahalanobis, manhattan, minkowski, shrink)


def oracle_minkowski(x, y, p):
    return sum(abs(a - b) ** p for a, b in zip(x, y)) ** (1.0 / p)


def oracle_mahalanobis(x, y, cov):
    d = [a - b for a, b in zip(x, y)]
    inv = np.linalg.solve(cov, np.eye(len(d)))
    q = sum(d[i] * inv[i, j] * d[j] for i in range(len(d)) for j in range(len(d)))
    return math.sqrt(q)


def test_examples():
    assert minkowski([1, 2], [3, 5], 1) == 5
    assert minkowski([0, 3], [4, 0], 2) == 5
    for p in (1, 1.5, 2, 3):
        assert minkowski([1, -2, 7], [1, -2, 7], p) == 0


def test_refusals():
    with pytest.raises(ValueError, match="p must be >= 1"):
        minkowski([1], [2], 0.5)
    with pytest.raises(ValueError, match="length mismatch"):
        manhattan([1, 2], [1, 2, 3])
    m = MahalanobisMetric(np.eye(3))
    with pytest.raises(ValueError, match="length mismatch"):
        m.distance(np.zeros(4), np.zeros(4))
    with pytest.raises(ValueError, match="symmetric"):
        MahalanobisMetric(np.array([[1.0, 0.5], [0.0, 1.0]]))
    with pytest.raises(ValueError, match="positive-definite"):
        MahalanobisMetric(np.array([[1.0, 2.0], [2.0, 1.0]]))


def test_1k_random_pairs_against_oracles():
    rng = np.random.default_rng(0)
    a = rng.normal(size=(6, 6))
    cov = a @ a.T + 0.5 * np.eye(6)
    metric = MahalanobisMetric(cov)
    for _ in range(1000):
        x, y = rng.normal(size=6) * 50, rng.normal(size=6) * 50
        for p in (1, 2):
            assert math.isclose(minkowski(x, y, p), oracle_minkowski(x, y, p), rel_tol=1e-9)
        assert math.isclose(mahalanobis(x, y, metric), oracle_mahalanobis(x, y, cov), rel_tol=1e-9)


def test_identity_and_scaled_diagonal_covariance():
    rng = np.random.default_rng(1)
    ident = MahalanobisMetric(np.eye(384))
    four = MahalanobisMetric(np.eye(384) * 4)
    for _ in range(20):
        x, y = rng.integers(-128, 128, 384), rng.integers(-128, 128, 384)
        assert math.isclose(ident.distance(x, y), euclidean(x, y), rel_tol=1e-9)
        assert math.isclose(four.distance(x, y), euclidean(x, y) / 2, rel_tol=1e-9)


vec = st.lists(st.floats(-1e3, 1e3), min_size=5, max_size=5)


@settings(max_examples=200, deadline=None)
@given(vec, vec, vec, st.sampled_from([1, 1.5, 2, 3, math.inf]))
def test_metric_axioms(x, y, z, p):
    dxy, dyx = minkowski(x, y, p), minkowski(y, x, p)
    assert dxy >= 0 and dxy == dyx and minkowski(x, x, p) == 0
    assert minkowski(x, z, p) <= dxy + minkowski(y, z, p) + 1e-9 * (1 + dxy)


@settings(max_examples=100, deadline=None)
@given(vec, vec)
def test_mahalanobis_symmetric_nonnegative(x, y):
    cov = np.diag([1.0, 2.0, 3.0, 4.0, 5.0]) + 0.1
    m = MahalanobisMetric(cov)
    assert m.distance(x, y) >= 0 and math.isclose(m.distance(x, y), m.distance(y, x), rel_tol=1e-12,
                                                    abs_tol=1e-12)
    assert m.distance(x, x) == 0


def test_fit_uses_shrinkage():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(500, 8))
    m = MahalanobisMetric.fit(X)
    assert m.shrinkage == 0.1
    assert np.allclose(m.covariance, shrink(np.cov(X, rowvar=False), 0.1))
    assert np.allclose(m.precision @ m.covariance, np.eye(8), atol=1e-9)


def test_ill_conditioned_covariance_escalates():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(400, 5))
    X = (X - X.mean(0)) / X.std(0, ddof=1)
    X[:, 0] *= np.sqrt(2e11)
    X[:, 2] = X[:, 1]
    # at 0.1 the duplicated pair leaves eigenvalue 0.1 against 2e11: condition 2e12
    with pytest.warns(SingularCovarianceWarning, match="shrinkage 0.1"):
        m = MahalanobisMetric.fit(X)
    assert m.shrinkage == 0.5


def test_two_identical_vectors_fail_cleanly():
    v = np.arange(10.0)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        with pytest.raises(ValueError, match="zero variance"):
            MahalanobisMetric.fit(np.stack([v, v]))
    shrink_steps = [str(w.message) for w in caught if "singular at shrinkage" in str(w.message)]
    assert len(shrink_steps) == 3


def test_serialization_roundtrip():
    rng = np.random.default_rng(4)
    m = MahalanobisMetric.fit(rng.normal(size=(100, 5)))
    back = MahalanobisMetric.from_dict(m.to_dict())
    x, y = rng.normal(size=5), rng.normal(size=5)
    assert back.distance(x, y) == m.distance(x, y)
    assert len(m.to_dict()["covariance"]) == 25


def test_trigger_on_windows():
    rng = np.random.default_rng(5)
    a = rng.integers(-128, 128, (128, 3))
    b = a.copy()
    b[0, 0] += 10
    t = DistanceTrigger("manhattan", threshold=10).fit()
    assert t.distance(a, b) == 10 and not t.wakes(a, b)
    b[0, 1] += 1
    assert t.wakes(a, b)
    flags = t.predict(np.stack([a, a, b]))
    assert flags.tolist() == [True, False, True]
    windows = rng.integers(-128, 128, (600, 128, 3))
    m = DistanceTrigger("mahalanobis", threshold=1.0).fit(windows)
    assert m.mahalanobis_.n_features == 384
    with pytest.raises(ValueError):
        DistanceTrigger("cosine").fit()
    with pytest.raises(ValueError):
        DistanceTrigger("mahalanobis").fit()
