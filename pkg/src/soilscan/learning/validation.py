"""Labeling, augmentation, repeated leave-one-out evaluation and metrics."""

from __future__ import annotations

import io
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from ..errors import DegenerateFitError, DomainError, FoldError
from .ensemble import EnsembleSpec, SoftVotingEnsemble

SCREENING_THRESHOLD_PPM = 200.0
PROPORTION_TOL = 0.01  # a confusion table summing to 1 within this is read as proportions


def encode_labels(pb_ppm, threshold: float = SCREENING_THRESHOLD_PPM) -> np.ndarray:
    """1 where Pb >= threshold, else 0."""
    pb = np.asarray(pb_ppm, dtype=float)
    if np.any(pb < 0) or np.any(~np.isfinite(pb)):
        raise DomainError("Pb concentrations must be finite and non-negative")
    return (pb >= threshold).astype(int)


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    features: np.ndarray
    labels: np.ndarray
    pb_ppm: np.ndarray
    sample_ids: tuple[str, ...]
    feature_names: tuple[str, ...] = ()
    threshold: float = SCREENING_THRESHOLD_PPM

    def __post_init__(self):
        X = np.asarray(self.features, dtype=float)
        if X.ndim != 2:
            raise DomainError("features must be a 2-D matrix")
        y = np.asarray(self.labels, dtype=int)
        pb = np.asarray(self.pb_ppm, dtype=float)
        ids = tuple(str(i) for i in self.sample_ids)
        if not (X.shape[0] == y.size == pb.size == len(ids)):
            raise DomainError("features, labels, pb_ppm and ids must have one entry per sample")
        if not np.array_equal(y, encode_labels(pb, self.threshold)):
            raise DomainError(f"labels disagree with pb_ppm at the {self.threshold:g} ppm threshold")
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "pb_ppm", pb)
        object.__setattr__(self, "sample_ids", ids)
        object.__setattr__(self, "feature_names", tuple(self.feature_names))

    @classmethod
    def from_ppm(cls, features, pb_ppm, sample_ids=None, feature_names=(), threshold=SCREENING_THRESHOLD_PPM):
        pb = np.asarray(pb_ppm, dtype=float)
        ids = sample_ids if sample_ids is not None else [str(i) for i in range(pb.size)]
        return cls(features, encode_labels(pb, threshold), pb, tuple(ids), tuple(feature_names), threshold)

    def __len__(self):
        return self.labels.size

    def subset(self, rows) -> "LabeledDataset":
        rows = np.asarray(rows)
        return LabeledDataset(self.features[rows], self.labels[rows], self.pb_ppm[rows],
                              tuple(self.sample_ids[i] for i in rows.tolist()), self.feature_names, self.threshold)


# --------------------------------------------------------------------------
# augmentation
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class AugmentationConfig:
    """Up-sampling factor ``r`` with per-copy noise sigma ~ U(0, sigma_max).

    ``space`` selects where noise lands when a featurizer is used:
    ``"raw"`` (spectrum power values, before featurization) or
    ``"feature"`` (after featurization).
    """

    r: int = 200
    sigma_max: float = 3.0
    seed: int = 0
    sigma_floor: float = 1e-12
    space: str = "raw"

    def __post_init__(self):
        if self.r < 1:
            raise DomainError("r must be >= 1")
        if not self.sigma_max > 0:
            raise DomainError("sigma_max must be > 0")
        if self.space not in ("raw", "feature"):
            raise DomainError("space must be 'raw' or 'feature'")

    def to_dict(self) -> dict:
        return {"r": self.r, "sigma_max": self.sigma_max, "seed": self.seed, "space": self.space}


def augment_arrays(X, y, r: int, sigma_max: float, rng: np.random.Generator,
                   sigma_floor: float = 1e-12):
    """Repeat each row ``r`` times (copies adjacent) and add Gaussian noise.

    Each augmented row draws its own sigma from U(0, sigma_max).
    """
    X = np.asarray(X, dtype=float)
    Xu = np.repeat(X, r, axis=0)
    sigma = np.maximum(rng.uniform(0.0, sigma_max, size=Xu.shape[0]), sigma_floor)
    Xu += sigma[:, None] * rng.standard_normal(Xu.shape)
    return Xu, np.repeat(np.asarray(y), r)


def augment(train: LabeledDataset, cfg: AugmentationConfig, rng: np.random.Generator | None = None) -> LabeledDataset:
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    X, y = augment_arrays(train.features, train.labels, cfg.r, cfg.sigma_max, rng, cfg.sigma_floor)
    ids = tuple(f"{sid}#{c}" for sid in train.sample_ids for c in range(cfg.r))
    return LabeledDataset(X, y, np.repeat(train.pb_ppm, cfg.r), ids, train.feature_names, train.threshold)


# --------------------------------------------------------------------------
# metrics
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Metrics:
    accuracy: float
    recall: float


def _cells(confusion) -> tuple[float, float, float, float]:
    if isinstance(confusion, Mapping):
        return tuple(float(confusion[k]) for k in ("TN", "FP", "FN", "TP"))
    c = np.asarray(confusion, dtype=float)
    if c.shape == (2, 2):
        return float(c[0, 0]), float(c[0, 1]), float(c[1, 0]), float(c[1, 1])
    if c.shape == (4,):
        return tuple(c.tolist())
    raise DomainError("confusion must be {TN, FP, FN, TP}, a 2x2 matrix or 4 values")


def report_metrics(confusion) -> Metrics:
    """Accuracy (TP+TN)/total and recall TP/(TP+FN).

    Rows are true labels, columns predictions. A table whose entries already
    sum to 1 within :data:`PROPORTION_TOL` (e.g. a reported table rounded to
    two digits) is taken as proportions with total 1; anything else is
    normalized by its sum. Recall is NaN when no positives exist.
    """
    tn, fp, fn, tp = _cells(confusion)
    if min(tn, fp, fn, tp) < 0:
        raise DomainError("confusion entries must be non-negative")
    s = tn + fp + fn + tp
    if s <= 0:
        raise DomainError("confusion matrix is empty")
    total = 1.0 if abs(s - 1.0) <= PROPORTION_TOL else s
    recall = tp / (tp + fn) if tp + fn > 0 else float("nan")
    return Metrics((tp + tn) / total, recall)


def confusion_counts(labels, preds) -> dict[str, int]:
    labels = np.asarray(labels)
    preds = np.asarray(preds)
    return {
        "TN": int(np.sum((labels == 0) & (preds == 0))),
        "FP": int(np.sum((labels == 0) & (preds == 1))),
        "FN": int(np.sum((labels == 1) & (preds == 0))),
        "TP": int(np.sum((labels == 1) & (preds == 1))),
    }


# --------------------------------------------------------------------------
# leave-one-out
# --------------------------------------------------------------------------


class Featurizer:
    """Interface for per-fold feature transforms (see SpectralFeaturizer)."""

    def fit(self, raw: np.ndarray) -> "Featurizer": ...

    def transform(self, raw: np.ndarray) -> np.ndarray: ...


@dataclass(frozen=True)
class Trial:
    repeat: int
    sample_id: str
    label: int
    prob1: float
    pred: int


@dataclass
class FoldModel:
    ensemble: SoftVotingEnsemble
    featurizer: Featurizer | None
    train_rows: int

    def predict_proba(self, raw_rows) -> np.ndarray:
        X = np.atleast_2d(np.asarray(raw_rows, dtype=float))
        if self.featurizer is not None:
            X = self.featurizer.transform(X)
        return self.ensemble.predict_proba(X)


def trial_seed(seed: int, repeat: int, held_out: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(int(seed), spawn_key=(int(repeat), int(held_out)))


def _noise_factor(W: np.ndarray) -> np.ndarray:
    """L with L @ L.T == W @ W.T, so L @ z has the law of W @ (raw noise)."""
    G = W @ W.T
    try:
        return np.linalg.cholesky(G)
    except np.linalg.LinAlgError:
        vals, vecs = np.linalg.eigh(G)
        return vecs * np.sqrt(np.clip(vals, 0.0, None))


def _augment_through_linear(F, y, W, aug: AugmentationConfig, rng: np.random.Generator):
    """Raw-space augmentation pushed through a linear featurizer.

    Noise sigma * eps on the raw row becomes sigma * W @ eps on the features,
    a Gaussian with covariance sigma^2 W W^T. Drawing it directly from that
    law costs O(features) per row instead of O(raw columns).
    """
    L = _noise_factor(np.asarray(W, dtype=float))
    Fa = np.repeat(np.asarray(F, dtype=float), aug.r, axis=0)
    sigma = np.maximum(rng.uniform(0.0, aug.sigma_max, size=Fa.shape[0]), aug.sigma_floor)
    Fa += sigma[:, None] * (rng.standard_normal(Fa.shape) @ L.T)
    return Fa, np.repeat(np.asarray(y), aug.r)


def train_fold(data: LabeledDataset, held_out: int, spec: EnsembleSpec, aug: AugmentationConfig,
               seed_seq: np.random.SeedSequence,
               featurizer: Callable[[], Featurizer] | None = None) -> FoldModel:
    """Augment and fit on every row except ``held_out``.

    The held-out row is removed before anything else touches the data.
    """
    keep = np.delete(np.arange(len(data)), held_out)
    X_train = data.features[keep]
    y_train = data.labels[keep]
    rng = np.random.default_rng(seed_seq)
    fz = None
    if featurizer is not None:
        fz = featurizer().fit(X_train)
        W = getattr(fz, "W_", None)
        if aug.space == "raw" and W is not None:
            Xa, ya = _augment_through_linear(fz.transform(X_train), y_train, W, aug, rng)
        elif aug.space == "raw":
            Xa, ya = augment_arrays(X_train, y_train, aug.r, aug.sigma_max, rng, aug.sigma_floor)
            Xa = fz.transform(Xa)
        else:
            Xa, ya = augment_arrays(fz.transform(X_train), y_train, aug.r, aug.sigma_max, rng, aug.sigma_floor)
    else:
        Xa, ya = augment_arrays(X_train, y_train, aug.r, aug.sigma_max, rng, aug.sigma_floor)
    ens = SoftVotingEnsemble(spec).fit(Xa, ya)
    return FoldModel(ens, fz, Xa.shape[0])


@dataclass
class EvaluationReport:
    confusion: dict[str, float]
    accuracy: float
    recall: float
    trials: list[Trial]
    config: dict
    train_rows_per_fold: int

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "confusion": self.confusion,
            "accuracy": self.accuracy,
            "recall": self.recall,
            "n_trials": len(self.trials),
            "train_rows_per_fold": self.train_rows_per_fold,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def trials_csv(self) -> str:
        buf = io.StringIO()
        buf.write("repeat,sample_id,label,prob1,pred\n")
        for t in self.trials:
            buf.write(f"{t.repeat},{t.sample_id},{t.label},{t.prob1!r},{t.pred}\n")
        return buf.getvalue()


def loocv_evaluate(data: LabeledDataset, spec: EnsembleSpec = EnsembleSpec(),
                   aug: AugmentationConfig = AugmentationConfig(), k: int = 1, seed: int = 0,
                   featurizer: Callable[[], Featurizer] | None = None, n_jobs: int = 1,
                   extra_config: Mapping | None = None) -> EvaluationReport:
    """Repeat leave-one-out ``k`` times and pool all n*k trials.

    Each trial's randomness comes from ``(seed, repeat, held_out)`` only, so
    ``n_jobs > 1`` gives the same report as sequential execution.
    """
    n = len(data)
    if n < 3:
        raise DomainError("leave-one-out needs at least 3 samples")
    if k < 1:
        raise DomainError("k must be >= 1")

    def run(task):
        rep, i = task
        try:
            fold = train_fold(data, i, spec, aug, trial_seed(seed, rep, i), featurizer)
            p1 = float(fold.predict_proba(data.features[i])[0, 1])
        except (DegenerateFitError, ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
            raise FoldError(rep, data.sample_ids[i], exc) from exc
        pred = int(p1 >= 0.5)
        return Trial(rep, data.sample_ids[i], int(data.labels[i]), p1, pred), fold.train_rows

    tasks = [(rep, i) for rep in range(k) for i in range(n)]
    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(run, tasks))
    else:
        results = [run(t) for t in tasks]
    trials = [t for t, _ in results]
    counts = confusion_counts([t.label for t in trials], [t.pred for t in trials])
    total = float(len(trials))
    confusion = {key: v / total for key, v in counts.items()}
    m = report_metrics(counts)
    config = {"r": aug.r, "k": k, "seed": seed, "sigma_max": aug.sigma_max, "augment_space": aug.space,
              "n": n, "ensemble": spec.to_dict(), "threshold_ppm": data.threshold}
    config.update(extra_config or {})
    return EvaluationReport(confusion, m.accuracy, m.recall, trials, config, results[0][1])


# --------------------------------------------------------------------------
# regression
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class RegressionFit:
    slope: float
    intercept: float
    r2: float


def linear_regression_r2(x, y) -> RegressionFit:
    """Ordinary least squares y = slope * x + intercept, with R^2."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size != y.size:
        raise DomainError("x and y differ in length")
    if x.size < 3:
        raise DomainError("regression needs at least 3 points")
    dx = x - x.mean()
    sxx = float(dx @ dx)
    if sxx <= 1e-300 or np.ptp(x) == 0:
        raise DegenerateFitError("x is constant; slope is undefined")
    slope = float(dx @ (y - y.mean())) / sxx
    intercept = float(y.mean() - slope * x.mean())
    resid = y - (slope * x + intercept)
    ss_res = float(resid @ resid)
    ss_tot = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return RegressionFit(slope, intercept, r2)


def regression_table(features: Mapping[str, Sequence[float]], targets: Mapping[str, Sequence[float]]) -> dict:
    """R^2 for every (target, feature) pair: ``{target: {feature: r2}}``."""
    return {t: {f: linear_regression_r2(fx, ty).r2 for f, fx in features.items()} for t, ty in targets.items()}
