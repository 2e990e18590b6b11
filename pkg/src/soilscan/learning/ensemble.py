"""Soft-voting ensemble over the base classifiers."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from ..errors import ConfigurationError, ContractError
from .models import MODEL_TYPES, make_model

DEFAULT_MODELS = ("logistic", "svm", "tree", "naive_bayes")

DEFAULT_PARAMS: Mapping[str, Mapping] = {
    "logistic": {"C": 1.0, "max_iter": 1000, "tol": 1e-8},
    "svm": {"C": 1.0},
    "tree": {"max_depth": 4, "min_leaf": 2},
    "naive_bayes": {"var_floor": 1e-9},
}


@dataclass(frozen=True)
class EnsembleSpec:
    models: tuple[str, ...] = DEFAULT_MODELS
    params: Mapping[str, Mapping] = field(default_factory=lambda: dict(DEFAULT_PARAMS))

    def __post_init__(self):
        if len(self.models) < 2:
            raise ConfigurationError("an ensemble needs at least two base models")
        unknown = [m for m in self.models if m not in MODEL_TYPES]
        if unknown:
            raise ConfigurationError(f"unknown base models {unknown}")

    def to_dict(self) -> dict:
        return {"models": list(self.models), "params": {m: dict(self.params.get(m, {})) for m in self.models}}


def soft_vote(probas: Sequence[np.ndarray]) -> np.ndarray:
    """Average per-model class-probability arrays (each n x 2)."""
    if not probas:
        raise ContractError("soft vote needs at least one model")
    stack = np.stack([np.atleast_2d(np.asarray(p, dtype=float)) for p in probas])
    sums = stack.sum(axis=2)
    if np.any(np.abs(sums - 1.0) > 1e-6):
        raise ContractError("a model returned class probabilities that do not sum to 1")
    return stack.mean(axis=0)


def vote_label(proba: np.ndarray) -> np.ndarray:
    """Argmax over the averaged probabilities; a 0.5/0.5 tie goes to class 1."""
    proba = np.atleast_2d(proba)
    return (proba[:, 1] >= proba[:, 0]).astype(int)


class SoftVotingEnsemble:
    def __init__(self, spec: EnsembleSpec = EnsembleSpec()):
        self.spec = spec

    def fit(self, X, y) -> "SoftVotingEnsemble":
        self.models_ = [make_model(m, **dict(self.spec.params.get(m, {}))).fit(X, y) for m in self.spec.models]
        return self

    def predict_proba(self, X) -> np.ndarray:
        return soft_vote([m.predict_proba(X) for m in self.models_])

    def predict(self, X) -> np.ndarray:
        return vote_label(self.predict_proba(X))

    def to_dict(self) -> dict:
        return {"spec": self.spec.to_dict(), "models": [m.to_dict() for m in self.models_]}
