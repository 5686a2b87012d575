"""Online phase: label-blind classification and unsupervised adaptation.

Every incoming feature vector is ranked against all class maps, the classes
are ordered by an iterative k-nearest-neuron vote, and the top class plus any
further classes that pass their neuron's Bayes threshold form the prediction.
The predicted classes' winning neurons, the label cardinality, the class
statistics and all thresholds are then updated from the prediction alone.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Iterable, Iterator, Optional

import numpy as np

from .core import Instance, ParseError, UsageError, scale_features
from .offline import Model
from .stats import (
    CountMatrix,
    NeuronStats,
    probabilities_from_counts,
    update_average_output,
    update_average_output_mean,
    update_cardinality,
    update_counts,
    update_thresholds,
)
from .som import nudge

log = logging.getLogger(__name__)

DEFAULT_ETA = 0.05


@dataclass(frozen=True, eq=False)
class RankedNeurons:
    """Distances from one instance to every neuron of every map.

    Neurons of all maps are addressed by a global index (map-major order,
    ``offsets[j]`` is the first neuron of map ``j``). ``order`` lists global
    indices nearest first; exact distance ties keep global index order, so
    they resolve to the lower class and then the lower neuron index.
    """

    order: np.ndarray
    distances: np.ndarray
    owners: np.ndarray
    offsets: np.ndarray
    win_global: np.ndarray
    win_output: np.ndarray

    @property
    def n_classes(self) -> int:
        return len(self.offsets) - 1

    @property
    def win(self) -> np.ndarray:
        """Index of the winning neuron within each class map."""
        return self.win_global - self.offsets[:-1]

    def nr_sort(self, j: int) -> np.ndarray:
        """Neuron indices of map ``j``, nearest first."""
        mine = self.order[self.owners == j]
        return mine - self.offsets[j]


def _rank(W: np.ndarray, owner: np.ndarray, offsets: np.ndarray, x: np.ndarray) -> RankedNeurons:
    diff = W - x
    dist = np.sqrt(np.einsum("ij,ij->i", diff, diff))
    order = np.argsort(dist, kind="stable")
    rank_of = np.empty_like(order)
    rank_of[order] = np.arange(order.size)
    win_global = order[np.minimum.reduceat(rank_of, offsets[:-1])]
    return RankedNeurons(
        order=order,
        distances=dist[order],
        owners=owner[order],
        offsets=offsets,
        win_global=win_global,
        win_output=np.exp(-dist[win_global]),
    )


def _packing(model: Model):
    sizes = model.map_sizes()
    offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
    owner = np.repeat(np.arange(len(sizes)), sizes)
    return offsets, owner


def rank_all_maps(model: Model, x: np.ndarray) -> RankedNeurons:
    """Rank every neuron of every map by distance to the scaled instance ``x``."""
    offsets, owner = _packing(model)
    W = np.concatenate([g.weights for g in model.maps])
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (W.shape[1],):
        raise UsageError(f"expected {W.shape[1]} features, got shape {x.shape}")
    return _rank(W, owner, offsets, x)


def rank_classes_knn(ranked: RankedNeurons, k: int) -> list[int]:
    """Order all classes by repeated k-nearest-neuron majority votes.

    Each round the ``k`` nearest neurons still in play vote for their map; the
    winner is appended and its neurons leave the pool. A tied vote goes to the
    class owning the nearest neuron among the tied ones.
    """
    if k < 1:
        raise UsageError(f"k must be positive, got {k}")
    pool = ranked.owners.tolist()
    ranking = []
    for _ in range(ranked.n_classes - 1):
        votes: dict[int, int] = {}
        for c in pool[:k]:
            votes[c] = votes.get(c, 0) + 1
        top = max(votes.values())
        # pool is nearest first, so the first class reaching the top count owns the nearest neuron
        winner = next(c for c in pool[:k] if votes[c] == top)
        ranking.append(winner)
        pool = [c for c in pool if c != winner]
    if pool:
        ranking.append(pool[0])
    return ranking


def prediction_bound(z: float, n: int) -> int:
    """Maximum number of labels a prediction may carry."""
    return max(1, min(math.ceil(z), n))


def assemble_labels(model: Model, ranked: RankedNeurons, win_classes: list[int]) -> frozenset:
    """Top-ranked class plus every further candidate scoring at least its threshold.

    A candidate's score is its prior times the conditionals of the classes
    already accepted (zero conditionals skipped) times its winning neuron's
    output. Candidates are examined in rank order up to ``ceil(z)`` positions.
    """
    P = model.probs
    thresholds = model.neuron_stats.threshold
    accepted = [win_classes[0]]
    for pos in range(1, prediction_bound(model.cardinality.z, model.n_classes)):
        c = win_classes[pos]
        score = P[c, c]
        for d in accepted:
            cond = P[d, c]
            if cond > 0:
                score *= cond
        score *= ranked.win_output[c]
        if score >= thresholds[ranked.win_global[c]]:
            accepted.append(c)
    return frozenset(accepted)


class OnlineState:
    """Mutable online classifier wrapping a private copy of a trained model.

    The weight matrices of ``self.model.maps`` are views into one packed
    array so ranking costs a single distance computation per instance.

    Parameters
    ----------
    model : Model
        Offline-trained model; it is copied, never modified.
    eta : float
        Learning rate of the winning-neuron update.
    adaptive : bool
        With ``False`` the model is frozen and :meth:`adapt` does nothing.
    keep_log : bool
        Whether :func:`process_stream` retains predictions in ``predictions_log``.
    """

    def __init__(self, model: Model, eta: float = DEFAULT_ETA, adaptive: bool = True, keep_log: bool = True):
        if not 0.0 <= eta < 1.0:
            raise UsageError(f"eta must lie in [0, 1), got {eta}")
        self.model = model.copy()
        self.eta = eta
        self.adaptive = adaptive
        self.keep_log = keep_log
        self.predictions_log: list[tuple[int, frozenset]] = []
        self.rejects = 0
        self._offsets, self._owner = _packing(self.model)
        self._W = np.concatenate([g.weights for g in self.model.maps])
        for j, g in enumerate(self.model.maps):
            g.weights = self._W[self._offsets[j]:self._offsets[j + 1]]

    def rank(self, x: np.ndarray) -> RankedNeurons:
        return _rank(self._W, self._owner, self._offsets, x)

    def scale(self, features) -> np.ndarray:
        return scale_features(features, self.model.meta)

    def predict(self, x: np.ndarray) -> tuple[frozenset, RankedNeurons]:
        ranked = self.rank(x)
        win_classes = rank_classes_knn(ranked, self.model.k)
        return assemble_labels(self.model, ranked, win_classes), ranked

    def adapt(self, x: np.ndarray, Y: frozenset, ranked: Optional[RankedNeurons] = None):
        """Fold one classified instance into the model."""
        if not self.adaptive:
            return
        if not Y:
            raise UsageError("cannot adapt to an empty prediction")
        if ranked is None:
            ranked = self.rank(x)
        model = self.model
        old = model.neuron_stats
        avg = old.avg_output.copy()
        hits = old.hits.copy()
        for c in Y:
            g = ranked.win_global[c]
            if self.eta:
                self._W[g] = nudge(self._W[g], x, self.eta)
            if model.avg_output_mode == "running_mean":
                avg[g] = update_average_output_mean(avg[g], hits[g], x, self._W[g])
            else:
                avg[g] = update_average_output(avg[g], x, self._W[g])
            hits[g] += 1
        # N counts this instance from its arrival on
        N = model.counts.n_total + 1
        model.cardinality = update_cardinality(model.cardinality, Y, N)
        model.counts = CountMatrix(update_counts(model.counts, Y).t, N)
        model.probs = probabilities_from_counts(model.counts)
        model.neuron_stats = update_thresholds(
            NeuronStats(avg, old.threshold, hits, old.offsets), model.probs, self._owner)

    def step(self, features) -> frozenset:
        """Classify one raw feature vector and adapt to the result."""
        x = self.scale(features)
        Y, ranked = self.predict(x)
        self.adapt(x, Y, ranked)
        return Y


def classify(state: OnlineState, x_raw) -> frozenset:
    """Predict labels for one raw instance without adapting the model."""
    features = x_raw.features if isinstance(x_raw, Instance) else x_raw
    return state.predict(state.scale(features))[0]


def adapt(state: OnlineState, x: np.ndarray, Y: frozenset) -> OnlineState:
    state.adapt(np.asarray(x, dtype=np.float64), Y)
    return state


def _valid(features: np.ndarray, n_features: int) -> bool:
    return features.shape == (n_features,) and bool(np.all(np.isfinite(features)))


def iter_predictions(state: OnlineState, stream: Iterable[Instance]) -> Iterator[tuple[int, frozenset]]:
    """Yield ``(sequence_id, prediction)`` as each instance is processed.

    Only features and ids are read from the stream; malformed instances are
    logged, counted in ``state.rejects`` and skipped.
    """
    n_features = state.model.meta.n_features
    for inst in stream:
        sid, features = inst.sequence_id, np.asarray(inst.features, dtype=np.float64)
        if not _valid(features, n_features):
            state.rejects += 1
            log.warning("skipping malformed instance %d (shape %s)", sid, features.shape)
            continue
        Y = state.step(features)
        if state.keep_log:
            state.predictions_log.append((sid, Y))
        yield sid, Y


def process_stream(state: OnlineState, stream: Iterable[Instance]) -> list[tuple[int, frozenset]]:
    """Run the online phase over ``stream`` and return its prediction log."""
    return list(iter_predictions(state, stream))


# -- prediction log files -------------------------------------------------------

LOG_HEADER = "sequence_id\tlabels"


def format_log(entries: Iterable[tuple[int, frozenset]]) -> str:
    """Tab-separated rows of sequence id and comma-joined predicted classes."""
    lines = [LOG_HEADER]
    lines += [f"{sid}\t{','.join(str(c) for c in sorted(Y))}" for sid, Y in entries]
    return "\n".join(lines) + "\n"


def read_log(path) -> list[tuple[int, frozenset]]:
    entries = []
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        if header != LOG_HEADER:
            raise ParseError(f"{path}:1: expected header {LOG_HEADER!r}")
        for lineno, line in enumerate(fh, 2):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            try:
                if len(parts) != 2 or not parts[1]:
                    raise ValueError
                entries.append((int(parts[0]), frozenset(int(c) for c in parts[1].split(","))))
            except ValueError:
                raise ParseError(f"{path}:{lineno}: malformed prediction row {line!r}") from None
    return entries
