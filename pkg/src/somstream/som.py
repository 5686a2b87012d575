"""Hexagonal self-organizing maps trained with the batch Kohonen rule."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .core import UsageError

MIN_MAPPED = 4
"""Neurons with fewer mapped training instances than this are pruned."""


@dataclass(eq=False)
class SomGrid:
    """Neurons of one class map.

    Attributes
    ----------
    weights : ndarray, shape (n_neurons, n_features)
    positions : ndarray of int, shape (n_neurons, 2)
        Axial hexagonal coordinates ``(q, r)`` of every neuron.
    mapped_count : ndarray of int, shape (n_neurons,)
        Instances assigned to each neuron in the last batch pass.
    grid_dim : int
        Side length ``d`` of the original ``d x d`` lattice.
    """

    weights: np.ndarray
    positions: np.ndarray
    mapped_count: np.ndarray
    grid_dim: int

    def __len__(self):
        return self.weights.shape[0]

    @property
    def n_features(self) -> int:
        return self.weights.shape[1]


@dataclass(frozen=True)
class BatchTrainConfig:
    max_epochs: int = 100
    convergence_tol: float = 1e-6
    # None means ceil(d / 2) for the grid being trained
    initial_radius: Optional[float] = None
    final_radius: float = 0.0
    rng_seed: int = 0

    def __post_init__(self):
        if self.max_epochs < 1:
            raise UsageError("max_epochs must be positive")
        if self.convergence_tol <= 0:
            raise UsageError("convergence_tol must be positive")
        if self.final_radius < 0:
            raise UsageError("final_radius must be non-negative")
        if self.initial_radius is not None and self.initial_radius < self.final_radius:
            raise UsageError("initial_radius must be >= final_radius")


def hex_positions(d: int) -> np.ndarray:
    """Axial coordinates of a ``d x d`` lattice laid out in odd-row offset order."""
    rows, cols = np.divmod(np.arange(d * d), d)
    q = cols - (rows - (rows & 1)) // 2
    return np.stack([q, rows], axis=1).astype(np.int64)


def hex_distance_matrix(positions: np.ndarray) -> np.ndarray:
    dq = positions[:, None, 0] - positions[None, :, 0]
    dr = positions[:, None, 1] - positions[None, :, 1]
    return (np.abs(dq) + np.abs(dr) + np.abs(dq + dr)) // 2


def squared_distances(X: np.ndarray, W: np.ndarray, chunk: int = 4096) -> np.ndarray:
    """Exact pairwise squared distances, shape ``(len(X), len(W))``."""
    out = np.empty((X.shape[0], W.shape[0]))
    for start in range(0, X.shape[0], chunk):
        diff = X[start:start + chunk, None, :] - W[None, :, :]
        np.einsum("ijk,ijk->ij", diff, diff, out=out[start:start + chunk])
    return out


def _as_matrix(X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    return X


def init_grid(d: int, training_instances, rng_seed) -> SomGrid:
    """Seed every neuron with a randomly drawn instance plus ±0.01 uniform noise."""
    if d < 1:
        raise UsageError(f"grid dimension must be >= 1, got {d}")
    X = _as_matrix(training_instances)
    if X.shape[0] == 0:
        raise UsageError("cannot initialize a map without training instances")
    rng = np.random.default_rng(rng_seed)
    picks = rng.integers(0, X.shape[0], size=d * d)
    noise = rng.uniform(-0.01, 0.01, size=(d * d, X.shape[1]))
    return SomGrid(
        weights=X[picks] + noise,
        positions=hex_positions(d),
        mapped_count=np.zeros(d * d, dtype=np.int64),
        grid_dim=d,
    )


def _distances_to(grid: SomGrid, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (grid.n_features,):
        raise UsageError(f"expected {grid.n_features} features, got shape {x.shape}")
    diff = grid.weights - x
    return np.sqrt(np.einsum("ij,ij->i", diff, diff))


def best_matching(grid: SomGrid, x) -> int:
    """Index of the neuron nearest to ``x``; ties go to the lowest index."""
    if len(grid) == 0:
        raise UsageError("empty map")
    return int(np.argmin(_distances_to(grid, x)))


def sort_neurons(grid: SomGrid, x) -> list[tuple[int, float]]:
    """All neurons as ``(index, distance)`` pairs, nearest first."""
    if len(grid) == 0:
        raise UsageError("empty map")
    dist = _distances_to(grid, x)
    order = np.argsort(dist, kind="stable")
    return [(int(i), float(dist[i])) for i in order]


def _assign(X: np.ndarray, W: np.ndarray) -> np.ndarray:
    return np.argmin(squared_distances(X, W), axis=1)


def batch_train(grid: SomGrid, X, cfg: BatchTrainConfig = BatchTrainConfig()) -> SomGrid:
    """Batch Kohonen training with a hard hexagonal neighborhood.

    Each epoch assigns every instance to its best matching neuron and replaces
    each neuron's weight with the mean of the instances assigned anywhere in its
    neighborhood. The radius decays linearly from ``cfg.initial_radius`` to
    ``cfg.final_radius`` over ``cfg.max_epochs``. The displacement stopping test
    only applies once the neighborhood has shrunk to its final extent, since a
    wide neighborhood can be stationary long before the map has unfolded.
    Neurons with an empty neighborhood keep their weight for that epoch.
    """
    X = _as_matrix(X)
    if X.shape[0] == 0:
        raise UsageError("batch training needs at least one instance")
    if X.shape[1] != grid.n_features:
        raise UsageError(f"expected {grid.n_features} features, got {X.shape[1]}")
    m = len(grid)
    W = grid.weights.astype(np.float64, copy=True)
    hex_dist = hex_distance_matrix(grid.positions)
    r0 = math.ceil(grid.grid_dim / 2) if cfg.initial_radius is None else cfg.initial_radius
    r1 = cfg.final_radius
    final_hood = hex_dist <= r1

    for epoch in range(cfg.max_epochs):
        frac = epoch / (cfg.max_epochs - 1) if cfg.max_epochs > 1 else 1.0
        hood = hex_dist <= r0 + (r1 - r0) * frac
        bmu = _assign(X, W)
        counts = np.bincount(bmu, minlength=m).astype(np.float64)
        sums = np.zeros_like(W)
        np.add.at(sums, bmu, X)
        hood_f = hood.astype(np.float64)
        hood_counts = hood_f @ counts
        hood_sums = hood_f @ sums
        filled = hood_counts > 0
        new_W = W.copy()
        new_W[filled] = hood_sums[filled] / hood_counts[filled, None]
        shift = np.sqrt(((new_W - W) ** 2).sum(axis=1)).max()
        W = new_W
        if shift < cfg.convergence_tol and np.array_equal(hood, final_hood):
            break

    mapped = np.bincount(_assign(X, W), minlength=m).astype(np.int64)
    return replace(grid, weights=W, mapped_count=mapped)


def prune(grid: SomGrid, min_mapped: int = MIN_MAPPED) -> SomGrid:
    """Drop neurons with fewer than ``min_mapped`` instances, keeping at least one."""
    keep = grid.mapped_count >= min_mapped
    if not keep.any():
        keep = np.zeros(len(grid), dtype=bool)
        keep[int(np.argmax(grid.mapped_count))] = True
    return SomGrid(
        weights=grid.weights[keep].copy(),
        positions=grid.positions[keep].copy(),
        mapped_count=grid.mapped_count[keep].copy(),
        grid_dim=grid.grid_dim,
    )


def nudge(weight: np.ndarray, x: np.ndarray, eta: float) -> np.ndarray:
    """One online step of ``weight`` toward ``x``."""
    return weight + eta * (x - weight)


def incremental_update(grid: SomGrid, b: int, x, eta: float) -> SomGrid:
    """Return a copy of ``grid`` with neuron ``b`` moved a fraction ``eta`` toward ``x``."""
    if not 0 <= b < len(grid):
        raise UsageError(f"neuron index {b} out of range for a map of {len(grid)}")
    if not 0.0 <= eta <= 1.0:
        raise UsageError(f"learning rate must lie in [0, 1], got {eta}")
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (grid.n_features,):
        raise UsageError(f"expected {grid.n_features} features, got shape {x.shape}")
    W = grid.weights.copy()
    W[b] = nudge(W[b], x, eta)
    return replace(grid, weights=W)


def quantization_error(grid: SomGrid, X) -> float:
    """Summed distance of every instance to its best matching neuron."""
    X = _as_matrix(X)
    return float(np.sqrt(squared_distances(X, grid.weights).min(axis=1)).sum())
