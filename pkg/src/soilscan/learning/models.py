"""Base classifiers for the soft-voting ensemble, implemented on numpy.

All models are binary (labels 0/1) and expose ``fit``, ``predict_proba``
(n x 2, columns = P(0), P(1)) and ``predict``. Logistic regression and
the SVM standardize features internally with statistics from ``fit``.
"""

from __future__ import annotations

import math

import numpy as np

from ..errors import ConfigurationError, DegenerateFitError
from . import _kernels


def _check_xy(X, y):
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ValueError("X must be 2-D")
    y = np.asarray(y, dtype=float).ravel()
    if y.size != X.shape[0]:
        raise ValueError("X and y differ in length")
    if y.size == 0:
        raise DegenerateFitError("cannot fit on zero samples")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be 0 or 1")
    return X, y


def _two_column(p1) -> np.ndarray:
    p1 = np.clip(np.asarray(p1, dtype=float), 0.0, 1.0)
    return np.column_stack([1.0 - p1, p1])


class _Scaler:
    def __init__(self, X):
        self.mean = X.mean(axis=0)
        scale = X.std(axis=0)
        scale[scale < 1e-12] = 1.0
        self.scale = scale

    def __call__(self, X):
        return (np.asarray(X, dtype=float) - self.mean) / self.scale


class _Classifier:
    def predict(self, X) -> np.ndarray:
        p = self.predict_proba(X)
        return (p[:, 1] >= p[:, 0]).astype(int)


# --------------------------------------------------------------------------
# logistic regression
# --------------------------------------------------------------------------


def logistic_objective(theta, Xs, y, C):
    """Penalized negative log-likelihood; theta[0] is the unpenalized intercept."""
    z = theta[0] + Xs @ theta[1:]
    return float(np.sum(np.logaddexp(0.0, z) - y * z) + 0.5 / C * theta[1:] @ theta[1:])


def logistic_gradient(theta, Xs, y, C):
    z = theta[0] + Xs @ theta[1:]
    r = 0.5 * (1.0 + np.tanh(0.5 * z)) - y
    g = np.empty_like(theta)
    g[0] = r.sum()
    g[1:] = Xs.T @ r + theta[1:] / C
    return g


class LogisticRegression(_Classifier):
    """L2-penalized logistic regression fitted by damped Newton iterations."""

    def __init__(self, C: float = 1.0, max_iter: int = 1000, tol: float = 1e-8):
        self.C = C
        self.max_iter = max_iter
        self.tol = tol

    def fit(self, X, y):
        X, y = _check_xy(X, y)
        if y.min() == y.max():
            raise DegenerateFitError("logistic regression needs both classes")
        self.scaler_ = _Scaler(X)
        Xs = self.scaler_(X)
        n, p = Xs.shape
        A = np.column_stack([np.ones(n), Xs])
        ridge = np.full(p + 1, 1.0 / self.C)
        ridge[0] = 0.0
        theta = np.zeros(p + 1)
        theta[0] = math.log(y.mean() / (1.0 - y.mean()))
        f = logistic_objective(theta, Xs, y, self.C)
        self.n_iter_ = 0
        for it in range(self.max_iter):
            g = logistic_gradient(theta, Xs, y, self.C)
            z = A @ theta
            w = 0.25 / np.cosh(0.5 * z) ** 2  # p(1-p)
            H = (A * w[:, None]).T @ A + np.diag(ridge)
            H[np.diag_indices_from(H)] += 1e-12
            try:
                step = np.linalg.solve(H, g)
            except np.linalg.LinAlgError:
                step = np.linalg.lstsq(H, g, rcond=None)[0]
            decrement = float(g @ step)  # squared Newton decrement
            if decrement <= self.tol**2 or np.max(np.abs(g)) <= self.tol:
                break
            t = 1.0
            # near the optimum a Newton step changes f by less than its rounding
            slack = 64 * np.finfo(float).eps * (abs(f) + 1.0)
            while t >= 1e-10:
                cand = theta - t * step
                fc = logistic_objective(cand, Xs, y, self.C)
                if fc <= f - 1e-4 * t * decrement + slack:
                    break
                t *= 0.5
            else:
                break  # no further descent at float resolution
            theta, f = cand, fc
            self.n_iter_ = it + 1
        self.theta_ = theta
        return self

    def decision_function(self, X):
        return self.theta_[0] + self.scaler_(X) @ self.theta_[1:]

    def predict_proba(self, X):
        z = self.decision_function(X)
        return _two_column(0.5 * (1.0 + np.tanh(0.5 * z)))

    def to_dict(self):
        return {"model": "logistic", "C": self.C, "intercept": float(self.theta_[0]),
                "coef": self.theta_[1:].tolist(), "mean": self.scaler_.mean.tolist(),
                "scale": self.scaler_.scale.tolist()}


# --------------------------------------------------------------------------
# linear SVM with Platt calibration
# --------------------------------------------------------------------------


def platt_fit(f, y, max_iter: int = 100):
    """Sigmoid ``P(y=1|f) = 1 / (1 + exp(A f + B))`` by Newton's method.

    Uses smoothed targets (N+ + 1)/(N+ + 2) and 1/(N- + 2).
    """
    f = np.asarray(f, dtype=float)
    n_pos = float(y.sum())
    n_neg = float(y.size - n_pos)
    t = np.where(y == 1, (n_pos + 1.0) / (n_pos + 2.0), 1.0 / (n_neg + 2.0))
    A, B = 0.0, math.log((n_neg + 1.0) / (n_pos + 1.0))

    def objective(a, b):
        z = f * a + b
        return float(np.sum(t * z + np.logaddexp(0.0, -z)))

    fval = objective(A, B)
    for _ in range(max_iter):
        z = f * A + B
        p = 0.5 * (1.0 - np.tanh(0.5 * z))  # 1/(1+exp(z))
        q = 1.0 - p
        d2 = p * q
        h11 = 1e-12 + np.sum(f * f * d2)
        h22 = 1e-12 + np.sum(d2)
        h21 = np.sum(f * d2)
        d1 = t - p
        g1 = np.sum(f * d1)
        g2 = np.sum(d1)
        if abs(g1) < 1e-5 and abs(g2) < 1e-5:
            break
        det = h11 * h22 - h21 * h21
        dA = -(h22 * g1 - h21 * g2) / det
        dB = -(-h21 * g1 + h11 * g2) / det
        gd = g1 * dA + g2 * dB
        step = 1.0
        while step >= 1e-10:
            nA, nB = A + step * dA, B + step * dB
            nf = objective(nA, nB)
            if nf < fval + 1e-4 * step * gd:
                A, B, fval = nA, nB, nf
                break
            step *= 0.5
        else:
            break
    return A, B


class LinearSVM(_Classifier):
    """Hinge-loss linear SVM (dual coordinate descent) with Platt probabilities.

    The bias is handled as an extra constant feature. The sigmoid is fitted
    on training-set decision values. Single-class training data yields a
    constant predictor.
    """

    def __init__(self, C: float = 1.0, max_iter: int = 1000, tol: float = 1e-4):
        self.C = C
        self.max_iter = max_iter
        self.tol = tol

    def fit(self, X, y):
        X, y = _check_xy(X, y)
        self.constant_ = None
        if y.min() == y.max():
            self.constant_ = float(y[0])
            return self
        self.scaler_ = _Scaler(X)
        Xb = np.column_stack([self.scaler_(X), np.ones(X.shape[0])])
        ys = np.where(y == 1, 1.0, -1.0)
        order = np.random.default_rng(0).permutation(X.shape[0]).astype(np.int64)
        self.w_, self.n_iter_ = _kernels.svm_dual_cd(np.ascontiguousarray(Xb), ys, float(self.C),
                                                    int(self.max_iter), float(self.tol), order)
        self.platt_ = platt_fit(Xb @ self.w_, y)
        return self

    def decision_function(self, X):
        if self.constant_ is not None:
            return np.full(np.asarray(X).shape[0], 1.0 if self.constant_ else -1.0)
        return self.scaler_(X) @ self.w_[:-1] + self.w_[-1]

    def predict_proba(self, X):
        X = np.asarray(X, dtype=float)
        if self.constant_ is not None:
            return _two_column(np.full(X.shape[0], self.constant_))
        A, B = self.platt_
        z = A * self.decision_function(X) + B
        return _two_column(0.5 * (1.0 - np.tanh(0.5 * z)))

    def to_dict(self):
        if self.constant_ is not None:
            return {"model": "svm", "constant": self.constant_}
        return {"model": "svm", "C": self.C, "coef": self.w_[:-1].tolist(), "intercept": float(self.w_[-1]),
                "platt": list(self.platt_), "mean": self.scaler_.mean.tolist(),
                "scale": self.scaler_.scale.tolist()}


# --------------------------------------------------------------------------
# decision tree
# --------------------------------------------------------------------------


class DecisionTree(_Classifier):
    """Greedy Gini tree; leaves store the training frequency of class 1."""

    def __init__(self, max_depth: int = 4, min_leaf: int = 2):
        self.max_depth = max_depth
        self.min_leaf = min_leaf

    def fit(self, X, y):
        X, y = _check_xy(X, y)
        X = np.ascontiguousarray(X)
        # node arrays: feature, threshold, left, right, p1
        self.feature_, self.threshold_, self.left_, self.right_, self.value_ = [], [], [], [], []
        self._grow(X, y, np.arange(X.shape[0], dtype=np.int64), 0)
        return self

    def _grow(self, X, y, rows, depth) -> int:
        node = len(self.feature_)
        self.feature_.append(-1)
        self.threshold_.append(0.0)
        self.left_.append(-1)
        self.right_.append(-1)
        self.value_.append(float(y[rows].mean()))
        if depth >= self.max_depth or rows.size < 2 * self.min_leaf:
            return node
        f, t, _ = _kernels.best_split(X, y, rows, self.min_leaf)
        if f < 0:
            return node
        go_left = X[rows, f] <= t
        self.feature_[node] = int(f)
        self.threshold_[node] = float(t)
        self.left_[node] = self._grow(X, y, rows[go_left], depth + 1)
        self.right_[node] = self._grow(X, y, rows[~go_left], depth + 1)
        return node

    def apply(self, X) -> np.ndarray:
        """Leaf index reached by each row."""
        X = np.asarray(X, dtype=float)
        node = np.zeros(X.shape[0], dtype=int)
        feature = np.array(self.feature_)
        thr = np.array(self.threshold_)
        left = np.array(self.left_)
        right = np.array(self.right_)
        for _ in range(self.max_depth + 1):
            f = feature[node]
            inner = f >= 0
            if not inner.any():
                break
            idx = np.flatnonzero(inner)
            goes_left = X[idx, f[idx]] <= thr[node[idx]]
            node[idx] = np.where(goes_left, left[node[idx]], right[node[idx]])
        return node

    def predict_proba(self, X):
        return _two_column(np.array(self.value_)[self.apply(X)])

    @property
    def depth(self) -> int:
        def d(i):
            return 0 if self.feature_[i] < 0 else 1 + max(d(self.left_[i]), d(self.right_[i]))
        return d(0)

    def to_dict(self):
        return {"model": "tree", "feature": self.feature_, "threshold": self.threshold_,
                "left": self.left_, "right": self.right_, "p1": self.value_}


# --------------------------------------------------------------------------
# Gaussian naive Bayes
# --------------------------------------------------------------------------


class GaussianNB(_Classifier):
    """Per-class Gaussian likelihoods with a variance floor.

    Each variance gets ``var_floor * max(feature variance)`` added (or
    ``var_floor`` itself when every feature is constant).
    """

    def __init__(self, var_floor: float = 1e-9):
        self.var_floor = var_floor

    def fit(self, X, y):
        X, y = _check_xy(X, y)
        if y.min() == y.max():
            raise DegenerateFitError("naive Bayes needs both classes")
        spread = float(X.var(axis=0).max()) if X.size else 0.0
        eps = self.var_floor * spread if spread > 0 else self.var_floor
        self.theta_ = np.array([X[y == c].mean(axis=0) for c in (0, 1)])
        self.var_ = np.array([X[y == c].var(axis=0) for c in (0, 1)]) + eps
        self.log_prior_ = np.log(np.array([np.mean(y == 0), np.mean(y == 1)]))
        return self

    def joint_log_likelihood(self, X):
        X = np.asarray(X, dtype=float)
        out = np.empty((X.shape[0], 2))
        for c in (0, 1):
            ll = -0.5 * np.sum(np.log(2.0 * np.pi * self.var_[c]))
            ll = ll - 0.5 * np.sum((X - self.theta_[c]) ** 2 / self.var_[c], axis=1)
            out[:, c] = self.log_prior_[c] + ll
        return out

    def predict_proba(self, X):
        jll = self.joint_log_likelihood(X)
        jll -= jll.max(axis=1, keepdims=True)
        p = np.exp(jll)
        p /= p.sum(axis=1, keepdims=True)
        return p

    def to_dict(self):
        return {"model": "naive_bayes", "mean": self.theta_.tolist(), "var": self.var_.tolist(),
                "log_prior": self.log_prior_.tolist()}


MODEL_TYPES = {
    "logistic": LogisticRegression,
    "svm": LinearSVM,
    "tree": DecisionTree,
    "naive_bayes": GaussianNB,
}


def make_model(model_id: str, **params):
    try:
        return MODEL_TYPES[model_id](**params)
    except KeyError:
        raise ConfigurationError(f"unknown base model {model_id!r}; choose from {sorted(MODEL_TYPES)}") from None


def fit_base(model_id: str, X, y, **params):
    """Construct and fit one base model."""
    return make_model(model_id, **params).fit(X, y)
