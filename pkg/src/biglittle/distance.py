"""Distances between adjacent stretched windows for the distance wake-up.

Minkowski ``D(x, y) = (sum |x_i - y_i|^p)^(1/p)`` (Manhattan at p=1,
Euclidean at p=2) and a Mahalanobis distance on the difference vector,
``sqrt((x - y)^T S^-1 (x - y))``, with a shrunk training covariance ``S``.
"""

from __future__ import annotations

import warnings

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .data import stretch

MANHATTAN_THRESHOLD = 8000.0
SHRINKAGE_STEPS = (0.1, 0.5, 1.0)
# condition number above which a shrunk covariance is treated as singular
MAX_CONDITION = 1e12


class SingularCovarianceWarning(UserWarning):
    pass


def _pair(x, y):
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise ValueError(f"length mismatch: {x.size} vs {y.size}")
    return x, y


def minkowski(x, y, p: float = 1.0) -> float:
    if not p >= 1:
        raise ValueError(f"Minkowski order p must be >= 1, got {p!r}")
    x, y = _pair(x, y)
    d = np.abs(x - y)
    if p == 1:
        return float(d.sum())
    if np.isinf(p):
        return float(d.max(initial=0.0))
    return float((d ** p).sum() ** (1.0 / p))


def manhattan(x, y) -> float:
    return minkowski(x, y, 1)


def euclidean(x, y) -> float:
    return minkowski(x, y, 2)


def shrink(cov: np.ndarray, lam: float) -> np.ndarray:
    """``(1 - lam) * cov + lam * diag(cov)``."""
    return (1.0 - lam) * cov + lam * np.diag(np.diag(cov))


class MahalanobisMetric:
    """Fitted Mahalanobis metric; holds the shrunk covariance and its inverse."""

    def __init__(self, covariance, shrinkage: float = 0.0):
        cov = np.asarray(covariance, dtype=np.float64)
        if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
            raise ValueError(f"covariance must be square, got shape {cov.shape}")
        if not np.allclose(cov, cov.T, rtol=0, atol=1e-9 * max(1.0, np.abs(cov).max())):
            raise ValueError("covariance is not symmetric")
        try:
            np.linalg.cholesky(cov)
        except np.linalg.LinAlgError:
            raise ValueError("covariance is not positive-definite") from None
        self.covariance = cov
        self.shrinkage = float(shrinkage)
        inv = np.linalg.inv(cov)
        self.precision = 0.5 * (inv + inv.T)

    @property
    def n_features(self) -> int:
        return self.covariance.shape[0]

    @classmethod
    def fit(cls, vectors, shrinkage: float = SHRINKAGE_STEPS[0]) -> "MahalanobisMetric":
        """Covariance of training vectors, shrunk toward its diagonal.

        If the shrunk matrix is singular or badly conditioned the shrinkage
        escalates through 0.1, 0.5, 1.0 (warning each time); if even the
        pure diagonal is singular a ``ValueError`` is raised.
        """
        X = np.asarray(vectors, dtype=np.float64)
        if X.ndim != 2 or X.shape[0] < 2:
            raise ValueError("need at least two training vectors of equal length")
        if X.shape[0] <= X.shape[1]:
            warnings.warn(f"{X.shape[0]} vectors for {X.shape[1]} features; covariance is rank-deficient "
                          "and relies on shrinkage", SingularCovarianceWarning, stacklevel=2)
        cov = np.cov(X, rowvar=False)
        steps = [shrinkage] + [s for s in SHRINKAGE_STEPS if s > shrinkage]
        for lam in steps:
            s = shrink(cov, lam)
            if _well_conditioned(s):
                return cls(s, lam)
            warnings.warn(f"covariance singular at shrinkage {lam}", SingularCovarianceWarning, stacklevel=2)
        raise ValueError("covariance singular even after full shrinkage to the diagonal; "
                         "some features have zero variance in the training set")

    def distance(self, x, y) -> float:
        x, y = _pair(x, y)
        if x.size != self.n_features:
            raise ValueError(f"length mismatch: vectors have {x.size} features, metric has {self.n_features}")
        d = x - y
        q = float(d @ self.precision @ d)
        return float(np.sqrt(max(q, 0.0)))

    def to_dict(self) -> dict:
        return {
            "kind": "mahalanobis",
            "shrinkage": self.shrinkage,
            "n_features": self.n_features,
            "covariance": self.covariance.ravel().tolist(),
        }

    @classmethod
    def from_dict(cls, d) -> "MahalanobisMetric":
        n = int(d["n_features"])
        return cls(np.asarray(d["covariance"], dtype=np.float64).reshape(n, n), d.get("shrinkage", 0.0))


def _well_conditioned(s: np.ndarray) -> bool:
    try:
        np.linalg.cholesky(s)
    except np.linalg.LinAlgError:
        return False
    return np.linalg.cond(s) < MAX_CONDITION


def mahalanobis(x, y, metric: MahalanobisMetric) -> float:
    return metric.distance(x, y)


METRICS = ("manhattan", "euclidean", "mahalanobis")


class DistanceTrigger(BaseEstimator):
    """Wake-up rule comparing adjacent total-acc windows.

    Parameters
    ----------
    metric : {"manhattan", "euclidean", "mahalanobis"}
    threshold : float
        The big model wakes when the distance is strictly greater than this.
    shrinkage : float
        Initial covariance shrinkage for the Mahalanobis metric.
    """

    def __init__(self, metric="manhattan", threshold=MANHATTAN_THRESHOLD, shrinkage=SHRINKAGE_STEPS[0]):
        self.metric = metric
        self.threshold = threshold
        self.shrinkage = shrinkage

    def _validate(self):
        if self.metric not in METRICS:
            raise ValueError(f"metric must be one of {METRICS}, got {self.metric!r}")
        if not self.threshold > 0:
            raise ValueError(f"threshold must be positive, got {self.threshold!r}")

    def fit(self, X=None, y=None):
        """``X``: total-acc windows ``(n, 128, 3)`` or stretched ``(n, 384)``."""
        self._validate()
        self.mahalanobis_ = None
        if self.metric == "mahalanobis":
            if X is None:
                raise ValueError("the Mahalanobis metric needs training windows")
            X = check_array(X, allow_nd=True)
            vectors = stretch(X) if X.ndim == 3 else X
            self.mahalanobis_ = MahalanobisMetric.fit(vectors, self.shrinkage)
        self.fitted_ = True
        return self

    def distance(self, x, y) -> float:
        check_is_fitted(self, "fitted_")
        x, y = stretch(x) if np.ndim(x) == 2 else x, stretch(y) if np.ndim(y) == 2 else y
        if self.metric == "manhattan":
            return manhattan(x, y)
        if self.metric == "euclidean":
            return euclidean(x, y)
        return self.mahalanobis_.distance(x, y)

    def wakes(self, prev, current) -> bool:
        return self.distance(prev, current) > self.threshold

    def predict(self, X):
        """Wake flags for each window against its predecessor; window 0 always wakes."""
        X = np.asarray(X)
        flags = np.ones(len(X), dtype=bool)
        for i in range(1, len(X)):
            flags[i] = self.wakes(X[i - 1], X[i])
        return flags
