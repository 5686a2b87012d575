"""Synthetic drifting streams of overlapping spherical clusters, plus file I/O.

Stream files are comma-separated text with a header: feature columns
``f0..f{m-1}`` followed by 0/1 label indicator columns ``y0..y{n-1}``.
"""

from __future__ import annotations

import csv
import math
import re
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional, Sequence, Union

import numpy as np

from .core import ConfigError, Instance, ParseError, UsageError
from .kvfile import format_kv, parse_kv, read_kv

DRIFT_KINDS = ("none", "displacement", "rotation")


class SplitWarning(UserWarning):
    """Some classes have no instance in the offline training portion."""


@dataclass(frozen=True)
class SphericalStreamConfig:
    n_classes: int
    n_features: int
    cluster_centers: tuple
    cluster_radii: tuple
    stream_length: int
    sd: int = 1000
    drift_kind: str = "none"
    drift_step: float = 0.0
    rng_seed: int = 0

    def __post_init__(self):
        centers = tuple(tuple(float(v) for v in c) for c in self.cluster_centers)
        radii = tuple(float(r) for r in self.cluster_radii)
        object.__setattr__(self, "cluster_centers", centers)
        object.__setattr__(self, "cluster_radii", radii)
        if self.n_classes < 1 or self.n_features < 1:
            raise ConfigError("n_classes and n_features must be positive")
        if len(centers) != self.n_classes or any(len(c) != self.n_features for c in centers):
            raise ConfigError("cluster_centers must hold n_classes vectors of n_features values")
        if len(radii) != self.n_classes or any(not r > 0 for r in radii):
            raise ConfigError("cluster_radii must hold n_classes positive values")
        if self.stream_length < 0:
            raise ConfigError("stream_length must be non-negative")
        if self.drift_kind not in DRIFT_KINDS:
            raise ConfigError(f"drift_kind must be one of {DRIFT_KINDS}, got {self.drift_kind!r}")
        if self.drift_kind != "none":
            if self.sd < 1:
                raise ConfigError("sd must be >= 1 when drift is enabled")
            if not self.drift_step > 0:
                raise ConfigError("drift_step must be positive when drift is enabled")
        if self.drift_kind == "rotation" and self.n_features < 2:
            raise ConfigError("rotation drift needs at least two features")

    def to_text(self) -> str:
        return format_kv({
            "n_classes": self.n_classes,
            "n_features": self.n_features,
            "cluster_centers": "; ".join(" ".join(repr(v) for v in c) for c in self.cluster_centers),
            "cluster_radii": ", ".join(repr(r) for r in self.cluster_radii),
            "stream_length": self.stream_length,
            "sd": self.sd,
            "drift_kind": self.drift_kind,
            "drift_step": repr(self.drift_step),
            "rng_seed": self.rng_seed,
        })

    @classmethod
    def from_mapping(cls, items: dict[str, str]) -> "SphericalStreamConfig":
        known = {f for f in cls.__dataclass_fields__}
        for key in items:
            if key not in known:
                raise ConfigError(f"unknown generator config key {key!r}")
        parsers = {
            "n_classes": int,
            "n_features": int,
            "cluster_centers": lambda v: [[float(t) for t in c.replace(",", " ").split()] for c in v.split(";")],
            "cluster_radii": lambda v: [float(t) for t in v.replace(",", " ").split()],
            "stream_length": int,
            "sd": int,
            "drift_kind": str,
            "drift_step": float,
            "rng_seed": int,
        }
        kwargs = {}
        for key, value in items.items():
            try:
                kwargs[key] = parsers[key](value)
            except ValueError:
                raise ConfigError(f"invalid value for {key!r}: {value!r}") from None
        missing = [k for k in ("n_classes", "n_features", "cluster_centers", "cluster_radii", "stream_length")
                   if k not in kwargs]
        if missing:
            raise ConfigError(f"generator config is missing keys: {missing}")
        return cls(**kwargs)

    @classmethod
    def from_text(cls, text: str) -> "SphericalStreamConfig":
        return cls.from_mapping(parse_kv(text))

    @classmethod
    def load(cls, path) -> "SphericalStreamConfig":
        return cls.from_mapping(read_kv(path))


def overlapping_discs(rng_seed: int = 0, stream_length: int = 20000, drift_kind: str = "rotation",
                    drift_step: Optional[float] = None) -> SphericalStreamConfig:
    """Two overlapping 2-d clusters with label cardinality close to 1.06.

    Centers 0.26 apart with radius 0.15 put about 6% of each ball inside the other.
    """
    if drift_step is None:
        drift_step = {"none": 0.0, "rotation": math.pi / 36, "displacement": 0.015}[drift_kind]
    return SphericalStreamConfig(
        n_classes=2,
        n_features=2,
        cluster_centers=((0.37, 0.5), (0.63, 0.5)),
        cluster_radii=(0.15, 0.15),
        stream_length=stream_length,
        sd=1000,
        drift_kind=drift_kind,
        drift_step=drift_step,
        rng_seed=rng_seed,
    )


class SphericalStream:
    """Re-iterable generator of labelled instances.

    Each iteration restarts from the seed. Every instance is drawn uniformly
    from the ball of a uniformly chosen cluster and labelled with every
    cluster whose ball contains it. After every ``sd`` instances the centers
    drift. ``centers`` holds the centers as left by the last iteration.
    """

    def __init__(self, cfg: SphericalStreamConfig):
        self.cfg = cfg
        self.centers = np.array(cfg.cluster_centers, dtype=np.float64)

    def __len__(self):
        return self.cfg.stream_length

    def _drift(self, centers: np.ndarray, directions: np.ndarray):
        cfg = self.cfg
        if cfg.drift_kind == "displacement":
            centers += cfg.drift_step * directions
        elif cfg.drift_kind == "rotation":
            c, s = math.cos(cfg.drift_step), math.sin(cfg.drift_step)
            x, y = centers[:, 0].copy(), centers[:, 1].copy()
            centers[:, 0] = c * x - s * y
            centers[:, 1] = s * x + c * y

    def __iter__(self) -> Iterator[Instance]:
        cfg = self.cfg
        rng = np.random.default_rng(cfg.rng_seed)
        centers = np.array(cfg.cluster_centers, dtype=np.float64)
        radii = np.array(cfg.cluster_radii)
        directions = rng.normal(size=(cfg.n_classes, cfg.n_features))
        directions /= np.linalg.norm(directions, axis=1, keepdims=True)
        self.centers = centers
        for i in range(cfg.stream_length):
            c = int(rng.integers(cfg.n_classes))
            while True:
                u = rng.normal(size=cfg.n_features)
                u /= np.linalg.norm(u)
                point = centers[c] + radii[c] * rng.random() ** (1.0 / cfg.n_features) * u
                labels = membership(point, centers, radii)
                if c in labels:
                    break
            yield Instance(point, labels, i)
            if cfg.drift_kind != "none" and (i + 1) % cfg.sd == 0:
                self._drift(centers, directions)


def membership(point, centers, radii) -> frozenset:
    """Indices of every ball containing ``point``."""
    dist = np.linalg.norm(np.asarray(centers) - np.asarray(point), axis=1)
    return frozenset(int(j) for j in np.flatnonzero(dist <= np.asarray(radii)))


def generate_spherical(cfg: SphericalStreamConfig) -> SphericalStream:
    return SphericalStream(cfg)


# -- delimited files ----------------------------------------------------------


@dataclass
class StreamData:
    """Instances parsed from a stream file, with their column names."""

    feature_names: list
    label_names: list
    instances: list = field(default_factory=list)

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    @property
    def n_classes(self) -> int:
        return len(self.label_names)

    @property
    def label_frequencies(self) -> np.ndarray:
        """Fraction of instances carrying each label."""
        freq = np.zeros(self.n_classes)
        for inst in self.instances:
            for c in inst.truth or ():
                freq[c] += 1
        return freq / max(len(self.instances), 1)

    @property
    def empty_labels(self) -> list[int]:
        """Labels with no positive instance at all."""
        return [int(j) for j in np.flatnonzero(self.label_frequencies == 0)]


def write_stream(path, instances: Sequence[Instance], n_features: int, n_classes: int):
    header = [f"f{i}" for i in range(n_features)] + [f"y{j}" for j in range(n_classes)]
    lines = [",".join(header)]
    for inst in instances:
        feats = [repr(v) for v in np.asarray(inst.features, dtype=np.float64).tolist()]
        truth = inst.truth or frozenset()
        lines.append(",".join(feats + ["1" if j in truth else "0" for j in range(n_classes)]))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


_FEATURE_COL = re.compile(r"^f\d+$")
_LABEL_COL = re.compile(r"^y\d+$")


def _label_cell(cell: str, where: str) -> bool:
    try:
        value = float(cell)
    except ValueError:
        raise ParseError(f"{where}: label value {cell!r} is not numeric") from None
    if value not in (0.0, 1.0):
        raise ParseError(f"{where}: label value {cell!r} is not 0 or 1")
    return value == 1.0


def load_delimited(
    path,
    feature_columns: Optional[Sequence[str]] = None,
    label_columns: Union[None, int, Sequence[str]] = None,
    delimiter: str = ",",
) -> StreamData:
    """Read a header-bearing delimited file of features and 0/1 label columns.

    By default ``f<i>`` columns are features and ``y<j>`` columns are labels.
    ``label_columns`` may instead name the label columns or give how many
    trailing columns are labels; the remaining columns are then features.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ParseError(f"{path}:1: missing header row") from None

        if isinstance(label_columns, int):
            if not 0 < label_columns < len(header):
                raise UsageError(f"cannot take {label_columns} label columns from {len(header)}")
            labels = header[-label_columns:]
        elif label_columns is not None:
            labels = list(label_columns)
        else:
            labels = [h for h in header if _LABEL_COL.match(h)]
        if feature_columns is not None:
            features = list(feature_columns)
        elif isinstance(label_columns, (int, list, tuple)):
            features = [h for h in header if h not in labels]
        else:
            features = [h for h in header if _FEATURE_COL.match(h)]
        for name in list(features) + list(labels):
            if name not in header:
                raise ParseError(f"{path}:1: column {name!r} not in header")
        if not features or not labels:
            raise ParseError(f"{path}:1: need at least one feature and one label column")
        f_idx = [header.index(h) for h in features]
        y_idx = [header.index(h) for h in labels]

        data = StreamData(features, labels)
        for lineno, row in enumerate(reader, 2):
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(f"{path}:{lineno}: expected {len(header)} cells, got {len(row)}")
            try:
                x = [float(row[i]) for i in f_idx]
            except ValueError:
                bad = next(row[i] for i in f_idx if not _is_float(row[i]))
                raise ParseError(f"{path}:{lineno}: non-numeric feature value {bad!r}") from None
            where = f"{path}:{lineno}"
            truth = frozenset(j for j, i in enumerate(y_idx) if _label_cell(row[i], where))
            data.instances.append(Instance(x, truth, len(data.instances)))
    return data


def _is_float(cell: str) -> bool:
    try:
        float(cell)
    except ValueError:
        return False
    return True


# -- offline split -------------------------------------------------------------


@dataclass
class Split:
    train: list
    stream: list
    missing_classes: list


def split_offline(instances: Sequence[Instance], n_classes: int, fraction: float = 0.10,
                  mode: str = "head") -> Split:
    """Separate the labelled training portion from the evaluation stream.

    ``head`` takes the first ``floor(fraction * len)`` instances. ``stratified``
    picks the same number of instances so that per-class counts stay as even
    as possible, repeatedly taking the earliest unused instance of the class
    with the fewest selections. The stream keeps the original order.
    """
    if not 0.0 < fraction < 1.0:
        raise UsageError(f"fraction must lie in (0, 1), got {fraction}")
    size = int(math.floor(fraction * len(instances)))
    if size < 1:
        raise UsageError(f"a fraction of {fraction} selects no training rows out of {len(instances)}")
    if mode == "head":
        chosen = set(range(size))
    elif mode == "stratified":
        chosen = _stratified(instances, n_classes, size)
    else:
        raise UsageError(f"split mode must be 'head' or 'stratified', got {mode!r}")

    train = [inst for i, inst in enumerate(instances) if i in chosen]
    stream = [inst for i, inst in enumerate(instances) if i not in chosen]
    seen = set()
    for inst in train:
        seen.update(inst.truth or ())
    missing = [c for c in range(n_classes) if c not in seen]
    if missing:
        warnings.warn(f"classes absent from the training portion: {missing}", SplitWarning, stacklevel=2)
    return Split(train, stream, missing)


def _stratified(instances: Sequence[Instance], n_classes: int, size: int) -> set[int]:
    queues = [[] for _ in range(n_classes)]
    for i, inst in enumerate(instances):
        for c in sorted(inst.truth or ()):
            queues[c].append(i)
    heads = [0] * n_classes
    counts = np.zeros(n_classes, dtype=np.int64)
    chosen: set[int] = set()
    while len(chosen) < size:
        for c in range(n_classes):
            q = queues[c]
            while heads[c] < len(q) and q[heads[c]] in chosen:
                heads[c] += 1
        open_classes = [c for c in range(n_classes) if heads[c] < len(queues[c])]
        if not open_classes:
            break
        c = min(open_classes, key=lambda j: (counts[j], j))
        i = queues[c][heads[c]]
        chosen.add(i)
        for j in instances[i].truth:
            counts[j] += 1
    return chosen
