"""Shared domain types and numeric primitives."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

LabelSet = frozenset
"""A set of class indices. Ground truth may be empty, predictions never are."""


class UsageError(ValueError):
    """An operation was called with arguments violating its preconditions."""


class DataError(ValueError):
    """Input data is inconsistent with what an operation needs."""


class ConfigError(ValueError):
    """A configuration value or key is invalid."""


class ParseError(ValueError):
    """A file could not be parsed; the message names the location."""


def _frozen_array(values, dtype=np.float64) -> np.ndarray:
    arr = np.array(values, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Instance:
    """One stream item.

    ``truth`` is only ever read by the offline trainer and the evaluator.
    """

    features: np.ndarray
    truth: Optional[frozenset] = None
    sequence_id: int = 0

    def __post_init__(self):
        object.__setattr__(self, "features", _frozen_array(self.features))
        if self.truth is not None:
            object.__setattr__(self, "truth", frozenset(int(c) for c in self.truth))
        if self.sequence_id < 0:
            raise UsageError(f"sequence_id must be non-negative, got {self.sequence_id}")

    def __eq__(self, other):
        if not isinstance(other, Instance):
            return NotImplemented
        return (
            self.sequence_id == other.sequence_id
            and self.truth == other.truth
            and np.array_equal(self.features, other.features)
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class DatasetMeta:
    """Dataset shape plus the per-feature min/max used for scaling.

    With ``scaling=False`` :func:`scale_features` is the identity.
    """

    n_features: int
    n_classes: int
    feature_min: np.ndarray = field(default=None)
    feature_max: np.ndarray = field(default=None)
    scaling: bool = True

    def __post_init__(self):
        if self.n_features < 1 or self.n_classes < 1:
            raise UsageError("n_features and n_classes must be positive")
        lo = np.zeros(self.n_features) if self.feature_min is None else self.feature_min
        hi = np.ones(self.n_features) if self.feature_max is None else self.feature_max
        lo, hi = _frozen_array(lo), _frozen_array(hi)
        if lo.shape != (self.n_features,) or hi.shape != (self.n_features,):
            raise UsageError("feature_min/feature_max must have one entry per feature")
        if np.any(lo > hi):
            raise UsageError("feature_min must not exceed feature_max")
        object.__setattr__(self, "feature_min", lo)
        object.__setattr__(self, "feature_max", hi)

    def __eq__(self, other):
        if not isinstance(other, DatasetMeta):
            return NotImplemented
        return (
            self.n_features == other.n_features
            and self.n_classes == other.n_classes
            and self.scaling == other.scaling
            and np.array_equal(self.feature_min, other.feature_min)
            and np.array_equal(self.feature_max, other.feature_max)
        )

    __hash__ = None

    @classmethod
    def fit(cls, X: np.ndarray, n_classes: int, scaling: bool = True) -> "DatasetMeta":
        """Learn the scaling range from offline feature rows."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[0] == 0:
            raise UsageError("cannot fit scaling on an empty feature matrix")
        return cls(X.shape[1], n_classes, X.min(axis=0), X.max(axis=0), scaling)


@dataclass(frozen=True)
class LabelCardinality:
    z: float
    N: int


def _check_lengths(a: np.ndarray, b: np.ndarray):
    if a.shape != b.shape:
        raise UsageError(f"length mismatch: {a.shape} vs {b.shape}")


def euclidean_distance(a: Sequence[float], b: Sequence[float]) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_lengths(a, b)
    diff = a - b
    return float(math.sqrt(diff.dot(diff)))


def discriminant(x: Sequence[float], m: Sequence[float]) -> float:
    """Neuron output ``exp(-||x - m||)``, a similarity in (0, 1]."""
    return math.exp(-euclidean_distance(x, m))


def batch_label_cardinality(labelsets: Iterable[frozenset]) -> LabelCardinality:
    sizes = [len(y) for y in labelsets]
    if not sizes:
        raise UsageError("label cardinality of an empty sequence is undefined")
    return LabelCardinality(sum(sizes) / len(sizes), len(sizes))


def _scale(X: np.ndarray, meta: DatasetMeta) -> np.ndarray:
    if not meta.scaling:
        return X.copy()
    span = meta.feature_max - meta.feature_min
    live = span > 0
    out = np.where(live, (X - meta.feature_min) / np.where(live, span, 1.0), 0.5)
    return np.clip(out, 0.0, 1.0, out=out)


def scale_features(x: Sequence[float], meta: DatasetMeta) -> np.ndarray:
    """Min-max scale ``x`` into [0, 1] with the offline range.

    Values outside the offline range are clamped; constant features map to 0.5.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (meta.n_features,):
        raise UsageError(f"expected {meta.n_features} features, got shape {x.shape}")
    return _scale(x, meta)


def scale_matrix(X, meta: DatasetMeta) -> np.ndarray:
    """Row-wise :func:`scale_features` for a whole feature matrix."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != meta.n_features:
        raise UsageError(f"expected {meta.n_features} features, got {X.shape[1]}")
    return _scale(X, meta)
