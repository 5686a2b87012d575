import numpy as np
import pytest

from somstream.core import DatasetMeta, Instance, batch_label_cardinality
from somstream.offline import Model, knn_size, train_offline
from somstream.som import BatchTrainConfig, SomGrid, hex_positions
from somstream.stats import build_counts, build_neuron_stats, probabilities_from_counts


def blob_dataset(n_classes=3, n_features=2, n=600, spread=0.06, pair_rate=0.25, seed=0):
    """Gaussian blobs, one per class; a fraction of points also carries the next class."""
    rng = np.random.default_rng(seed)
    centers = rng.uniform(0.2, 0.8, size=(n_classes, n_features))
    out = []
    for i in range(n):
        c = i % n_classes
        x = centers[c] + spread * rng.normal(size=n_features)
        labels = {c}
        if rng.random() < pair_rate:
            labels.add((c + 1) % n_classes)
        out.append(Instance(x, labels, i))
    return out


def make_model(weight_lists, truths=None, avg=None):
    """Hand-built model whose maps hold exactly the given (already scaled) weights."""
    n = len(weight_lists)
    f = len(weight_lists[0][0])
    maps = []
    for ws in weight_lists:
        ws = np.asarray(ws, dtype=np.float64)
        maps.append(SomGrid(ws, hex_positions(3)[: len(ws)], np.full(len(ws), 4), 3))
    truths = truths or [frozenset({j}) for j in range(n)]
    counts = build_counts(truths, n)
    probs = probabilities_from_counts(counts)
    avgs = avg or [np.full(len(ws), 0.5) for ws in weight_lists]
    hits = [np.full(len(a), 4) for a in avgs]
    return Model(
        maps=maps,
        counts=counts,
        probs=probs,
        cardinality=batch_label_cardinality(truths),
        neuron_stats=build_neuron_stats(avgs, hits, probs),
        meta=DatasetMeta(f, n, scaling=False),
        k=knn_size([len(w) for w in weight_lists]),
    )


@pytest.fixture(scope="session")
def blobs():
    return blob_dataset()


@pytest.fixture(scope="session")
def trained(blobs):
    return train_offline(blobs, 3, 3, BatchTrainConfig(rng_seed=1))


def pytest_terminal_summary(terminalreporter):
    import sys

    module = sys.modules.get("test_acceptance")
    results = getattr(module, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for number in sorted(results):
            terminalreporter.write_line(results[number])
