"""Offline phase: train one map per class, derive statistics, persist models."""

from __future__ import annotations

import json
import logging
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import (
    ConfigError,
    DataError,
    DatasetMeta,
    Instance,
    LabelCardinality,
    ParseError,
    UsageError,
    batch_label_cardinality,
    scale_matrix,
)
from .som import BatchTrainConfig, SomGrid, batch_train, init_grid, prune
from .stats import (
    AVG_MODES,
    CountMatrix,
    NeuronStats,
    average_outputs,
    build_counts,
    build_neuron_stats,
    probabilities_from_counts,
)

log = logging.getLogger(__name__)

MODEL_FORMAT = "somstream-model"
MODEL_VERSION = 1


class ModelVersionError(ValueError):
    """The model file was written by an incompatible format version."""


@dataclass(eq=False)
class Model:
    """Complete classifier state, mutated in place by the online phase."""

    maps: list
    counts: CountMatrix
    probs: np.ndarray
    cardinality: LabelCardinality
    neuron_stats: NeuronStats
    meta: DatasetMeta
    k: int
    avg_output_mode: str = "verbatim"

    @property
    def n_classes(self) -> int:
        return len(self.maps)

    def map_sizes(self) -> list[int]:
        return [len(g) for g in self.maps]

    def check(self):
        """Raise ``AssertionError`` if any structural invariant is broken."""
        n = self.n_classes
        assert n == self.meta.n_classes
        assert all(len(g) >= 1 for g in self.maps)
        assert self.k >= 1 and self.k % 2 == 1 and self.k <= min(self.map_sizes())
        t = self.counts.t
        assert t.shape == (n, n) and np.array_equal(t, t.T)
        diag = np.diag(t)
        assert np.all(t <= np.minimum(diag[:, None], diag[None, :]))
        assert np.all(diag <= self.counts.n_total)
        assert np.array_equal(self.probs, probabilities_from_counts(self.counts))
        assert np.all((self.probs >= 0) & (self.probs <= 1))
        assert self.cardinality.N == self.counts.n_total
        assert 0 <= self.cardinality.z <= n
        assert tuple(self.neuron_stats.offsets) == tuple(np.concatenate([[0], np.cumsum(self.map_sizes())]))
        assert np.all(np.isfinite(self.neuron_stats.threshold)) and np.all(self.neuron_stats.threshold >= 0)
        assert all(np.all(np.isfinite(g.weights)) for g in self.maps)

    # -- serialization -------------------------------------------------

    def to_dict(self) -> dict:
        ns = self.neuron_stats
        return {
            "format": MODEL_FORMAT,
            "format_version": MODEL_VERSION,
            "meta": {
                "n_features": self.meta.n_features,
                "n_classes": self.meta.n_classes,
                "feature_min": self.meta.feature_min.tolist(),
                "feature_max": self.meta.feature_max.tolist(),
                "scaling": self.meta.scaling,
            },
            "k": self.k,
            "avg_output_mode": self.avg_output_mode,
            "cardinality": {"z": self.cardinality.z, "N": self.cardinality.N},
            "counts": {"t": self.counts.t.tolist(), "n_total": self.counts.n_total},
            "probs": self.probs.tolist(),
            "maps": [
                {
                    "grid_dim": g.grid_dim,
                    "n_neurons": len(g),
                    "weights": g.weights.ravel().tolist(),
                    "positions": g.positions.tolist(),
                    "mapped_count": g.mapped_count.tolist(),
                }
                for g in self.maps
            ],
            "neuron_stats": {
                "offsets": list(ns.offsets),
                "avg_output": ns.avg_output.tolist(),
                "threshold": ns.threshold.tolist(),
                "hits": ns.hits.tolist(),
            },
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Model":
        if doc.get("format") != MODEL_FORMAT:
            raise ParseError(f"not a model document (format={doc.get('format')!r})")
        version = doc.get("format_version")
        if version != MODEL_VERSION:
            raise ModelVersionError(f"model format version {version!r} is not supported (expected {MODEL_VERSION})")
        try:
            m = doc["meta"]
            meta = DatasetMeta(
                m["n_features"], m["n_classes"],
                np.array(m["feature_min"], dtype=np.float64),
                np.array(m["feature_max"], dtype=np.float64),
                bool(m["scaling"]),
            )
            maps = []
            for g in doc["maps"]:
                maps.append(SomGrid(
                    weights=np.array(g["weights"], dtype=np.float64).reshape(g["n_neurons"], meta.n_features),
                    positions=np.array(g["positions"], dtype=np.int64).reshape(g["n_neurons"], 2),
                    mapped_count=np.array(g["mapped_count"], dtype=np.int64),
                    grid_dim=int(g["grid_dim"]),
                ))
            ns = doc["neuron_stats"]
            return cls(
                maps=maps,
                counts=CountMatrix(np.array(doc["counts"]["t"], dtype=np.int64).reshape(meta.n_classes, meta.n_classes),
                                   int(doc["counts"]["n_total"])),
                probs=np.array(doc["probs"], dtype=np.float64).reshape(meta.n_classes, meta.n_classes),
                cardinality=LabelCardinality(float(doc["cardinality"]["z"]), int(doc["cardinality"]["N"])),
                neuron_stats=NeuronStats(
                    avg_output=np.array(ns["avg_output"], dtype=np.float64),
                    threshold=np.array(ns["threshold"], dtype=np.float64),
                    hits=np.array(ns["hits"], dtype=np.int64),
                    offsets=tuple(int(v) for v in ns["offsets"]),
                ),
                meta=meta,
                k=int(doc["k"]),
                avg_output_mode=doc["avg_output_mode"],
            )
        except KeyError as e:
            raise ParseError(f"model document is missing key {e.args[0]!r}") from None
        except (TypeError, ValueError) as e:
            raise ParseError(f"model document has malformed content: {e}") from None

    def copy(self) -> "Model":
        return Model.from_dict(self.to_dict())


def dumps_model(model: Model) -> str:
    return json.dumps(model.to_dict(), indent=1, allow_nan=False) + "\n"


def atomic_write_text(path, text: str):
    """Write ``text`` to ``path`` so that readers never see a partial file."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_model(model: Model, path):
    atomic_write_text(path, dumps_model(model))


def load_model(path) -> Model:
    text = Path(path).read_text(encoding="utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(f"{path}:{e.lineno}:{e.colno}: {e.msg}") from None
    if not isinstance(doc, dict):
        raise ParseError(f"{path}: top level must be an object")
    return Model.from_dict(doc)


def build_class_subsets(dataset: Sequence[Instance], n: int) -> list[np.ndarray]:
    """Split instances by class; a multi-label instance lands in every one of its subsets."""
    members: list[list[int]] = [[] for _ in range(n)]
    for i, inst in enumerate(dataset):
        if not inst.truth:
            raise DataError(f"instance {inst.sequence_id} has no ground-truth labels")
        for c in inst.truth:
            if not 0 <= c < n:
                raise DataError(f"instance {inst.sequence_id} has class {c} outside [0, {n})")
            members[c].append(i)
    n_feat = len(dataset[0].features) if len(dataset) else 0
    return [
        np.array([dataset[i].features for i in idx], dtype=np.float64).reshape(len(idx), n_feat)
        for idx in members
    ]


def knn_size(map_sizes: Sequence[int]) -> int:
    """Smallest map size, made odd by subtracting one, never below one."""
    k = min(map_sizes)
    if k % 2 == 0:
        k -= 1
    return max(k, 1)


def train_offline(
    dataset: Sequence[Instance],
    n_classes: int,
    d: int,
    cfg: BatchTrainConfig = BatchTrainConfig(),
    scaling: bool = True,
    avg_output_mode: str = "verbatim",
) -> Model:
    """Build a complete model from labelled training instances."""
    if avg_output_mode not in AVG_MODES:
        raise ConfigError(f"avg_output_mode must be one of {AVG_MODES}, got {avg_output_mode!r}")
    if d < 1:
        raise UsageError(f"grid dimension must be >= 1, got {d}")
    if not dataset:
        raise DataError("offline training set is empty")
    subsets = build_class_subsets(dataset, n_classes)
    missing = [c for c, X in enumerate(subsets) if len(X) == 0]
    if missing:
        raise ConfigError(f"classes without training instances: {missing}")

    X = np.array([inst.features for inst in dataset], dtype=np.float64)
    meta = DatasetMeta.fit(X, n_classes, scaling)
    truths = [inst.truth for inst in dataset]
    cardinality = batch_label_cardinality(truths)
    counts = build_counts(truths, n_classes)
    probs = probabilities_from_counts(counts)

    maps, avgs, hits = [], [], []
    for c, X_raw in enumerate(subsets):
        Xc = scale_matrix(X_raw, meta)
        grid = init_grid(d, Xc, (cfg.rng_seed, c))
        grid = prune(batch_train(grid, Xc, cfg))
        avg, hit = average_outputs(grid, Xc)
        maps.append(grid)
        avgs.append(avg)
        hits.append(hit)
        log.debug("class %d: %d instances, %d neurons kept", c, len(Xc), len(grid))

    return Model(
        maps=maps,
        counts=counts,
        probs=probs,
        cardinality=cardinality,
        neuron_stats=build_neuron_stats(avgs, hits, probs),
        meta=meta,
        k=knn_size([len(g) for g in maps]),
        avg_output_mode=avg_output_mode,
    )
