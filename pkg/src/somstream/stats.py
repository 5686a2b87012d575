"""Class co-occurrence statistics, neuron outputs and neuron thresholds.

``T[j, k]`` counts instances labelled with both ``j`` and ``k`` (the diagonal
counts single classes). ``P[j, k]`` holds ``p(y_j | y_k) = T[j, k] / T[k, k]``
off the diagonal and the prior ``p(y_j) = T[j, j] / N`` on it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np

from .core import LabelCardinality, UsageError
from .som import SomGrid, squared_distances

AVG_MODES = ("verbatim", "running_mean")


@dataclass(frozen=True, eq=False)
class CountMatrix:
    t: np.ndarray
    n_total: int

    @property
    def n_classes(self) -> int:
        return self.t.shape[0]

    def __eq__(self, other):
        if not isinstance(other, CountMatrix):
            return NotImplemented
        return self.n_total == other.n_total and np.array_equal(self.t, other.t)

    __hash__ = None


@dataclass(frozen=True, eq=False)
class NeuronStats:
    """Per-neuron average outputs and thresholds of every class map.

    Values of all maps are stored back to back; map ``j`` owns the slice
    ``offsets[j]:offsets[j + 1]``. ``hits`` counts the instances each average
    was taken over and is only consulted in ``running_mean`` mode.
    """

    avg_output: np.ndarray
    threshold: np.ndarray
    hits: np.ndarray
    offsets: tuple

    @property
    def n_maps(self) -> int:
        return len(self.offsets) - 1

    def owner(self) -> np.ndarray:
        sizes = np.diff(self.offsets)
        return np.repeat(np.arange(self.n_maps), sizes)

    def avg(self, j: int) -> np.ndarray:
        return self.avg_output[self.offsets[j]:self.offsets[j + 1]]

    def thr(self, j: int) -> np.ndarray:
        return self.threshold[self.offsets[j]:self.offsets[j + 1]]

    def __eq__(self, other):
        if not isinstance(other, NeuronStats):
            return NotImplemented
        return (
            tuple(self.offsets) == tuple(other.offsets)
            and np.array_equal(self.avg_output, other.avg_output)
            and np.array_equal(self.threshold, other.threshold)
            and np.array_equal(self.hits, other.hits)
        )

    __hash__ = None


def _check_labels(Y: Iterable[int], n: int) -> list[int]:
    labels = sorted(set(int(c) for c in Y))
    for c in labels:
        if not 0 <= c < n:
            raise UsageError(f"class index {c} out of range for {n} classes")
    return labels


def build_counts(labelsets: Sequence[frozenset], n: int) -> CountMatrix:
    t = np.zeros((n, n), dtype=np.int64)
    for Y in labelsets:
        idx = _check_labels(Y, n)
        t[np.ix_(idx, idx)] += 1
    return CountMatrix(t, len(labelsets))


def update_counts(T: CountMatrix, Y: Iterable[int]) -> CountMatrix:
    """Add one label set to ``T``. ``n_total`` is left to the caller's counter."""
    idx = _check_labels(Y, T.n_classes)
    if not idx:
        raise UsageError("cannot count an empty label set")
    t = T.t.copy()
    for a in idx:
        for b in idx:
            t[a, b] += 1
    return CountMatrix(t, T.n_total)


def probabilities_from_counts(T: CountMatrix) -> np.ndarray:
    if T.n_total < 1:
        raise UsageError("probabilities need at least one counted instance")
    t = T.t.astype(np.float64)
    col = np.diag(t).copy()
    P = np.zeros_like(t)
    np.divide(t, col[None, :], out=P, where=col[None, :] > 0)
    np.fill_diagonal(P, col / T.n_total)
    return P


def class_factors(P: np.ndarray) -> np.ndarray:
    """``p(y_j) * prod_{k != j, p(y_k|y_j) > 0} p(y_k|y_j)`` for every class ``j``.

    Zero conditionals are skipped rather than zeroing the whole product.
    """
    cond = P.copy()
    np.fill_diagonal(cond, 1.0)
    cond[cond <= 0] = 1.0
    return np.diag(P) * np.prod(cond, axis=0)


def neuron_threshold(j: int, P: np.ndarray, avg_output: float) -> float:
    """Threshold of a class-``j`` neuron whose average output is ``avg_output``."""
    prod = 1.0
    for k in range(P.shape[0]):
        if k != j and P[k, j] > 0:
            prod *= P[k, j]
    return float(P[j, j] * prod * avg_output)


def average_outputs(grid: SomGrid, X_class) -> tuple[np.ndarray, np.ndarray]:
    """Mean neuron output over the class instances mapped to each neuron.

    Returns ``(avg_output, hits)``; neurons nothing maps to get 0.
    """
    X = np.atleast_2d(np.asarray(X_class, dtype=np.float64))
    if X.shape[0] == 0:
        raise UsageError("average outputs need at least one class instance")
    sq = squared_distances(X, grid.weights)
    bmu = np.argmin(sq, axis=1)
    out = np.exp(-np.sqrt(sq[np.arange(X.shape[0]), bmu]))
    m = len(grid)
    hits = np.bincount(bmu, minlength=m)
    sums = np.bincount(bmu, weights=out, minlength=m)
    avg = np.zeros(m)
    np.divide(sums, hits, out=avg, where=hits > 0)
    return avg, hits.astype(np.int64)


def update_cardinality(z_prev: LabelCardinality, Y: Iterable[int], N: int) -> LabelCardinality:
    if N < 1:
        raise UsageError("N must count the new instance")
    size = len(frozenset(Y))
    return LabelCardinality(((N - 1) * z_prev.z + size) / N, N)


def update_average_output(avg_prev: float, x: np.ndarray, m_b: np.ndarray) -> float:
    """Cumulative update: the new neuron output is added to the running value."""
    diff = np.asarray(x, dtype=np.float64) - m_b
    return avg_prev + math.exp(-math.sqrt(diff.dot(diff)))


def update_average_output_mean(avg_prev: float, hits: int, x: np.ndarray, m_b: np.ndarray) -> float:
    """Running-mean alternative: fold the new output into a mean over ``hits + 1``."""
    diff = np.asarray(x, dtype=np.float64) - m_b
    out = math.exp(-math.sqrt(diff.dot(diff)))
    return (avg_prev * hits + out) / (hits + 1)


def update_thresholds(stats: NeuronStats, P: np.ndarray, owner: np.ndarray | None = None) -> NeuronStats:
    """Recompute every neuron threshold from the current ``P`` and average outputs.

    ``owner`` (map index per neuron) may be passed to skip rebuilding it.
    """
    if owner is None:
        owner = stats.owner()
    return replace(stats, threshold=class_factors(P)[owner] * stats.avg_output)


def build_neuron_stats(avgs: Sequence[np.ndarray], hits: Sequence[np.ndarray], P: np.ndarray) -> NeuronStats:
    offsets = tuple(int(v) for v in np.concatenate([[0], np.cumsum([len(a) for a in avgs])]))
    stats = NeuronStats(
        avg_output=np.concatenate(avgs).astype(np.float64),
        threshold=np.zeros(offsets[-1]),
        hits=np.concatenate(hits).astype(np.int64),
        offsets=offsets,
    )
    return update_thresholds(stats, P)
