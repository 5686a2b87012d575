import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from somstream.core import Instance, ParseError, UsageError, batch_label_cardinality
from somstream.online import (
    LOG_HEADER,
    OnlineState,
    assemble_labels,
    classify,
    format_log,
    prediction_bound,
    process_stream,
    rank_all_maps,
    rank_classes_knn,
    read_log,
)
from somstream.offline import dumps_model
from somstream.stats import build_counts

from conftest import blob_dataset, make_model


def line_model(distance_lists, **kw):
    """One-feature maps whose neurons sit at the given distances from the origin."""
    return make_model([[[d] for d in ds] for ds in distance_lists], **kw)


def knn_oracle(weight_lists, x, k):
    """Round-by-round vote simulation written independently of the packed ranking."""
    neurons = []
    for c, ws in enumerate(weight_lists):
        for i, w in enumerate(ws):
            neurons.append((math.dist(w, x), c, i))
    neurons.sort()
    remaining = set(range(len(weight_lists)))
    ranking = []
    while len(remaining) > 1:
        pool = [n for n in neurons if n[1] in remaining][:k]
        votes = Counter(n[1] for n in pool)
        top = max(votes.values())
        tied = {c for c, v in votes.items() if v == top}
        winner = min((n for n in pool if n[1] in tied))[1]
        ranking.append(winner)
        remaining.discard(winner)
    return ranking + sorted(remaining)


class TestRanking:
    def test_brute_force(self):
        rng = np.random.default_rng(0)
        weights = [rng.random((s, 3)) for s in (4, 7, 2)]
        model = make_model(weights)
        x = rng.random(3)
        r = rank_all_maps(model, x)
        for j, ws in enumerate(weights):
            d = [math.dist(w, x) for w in ws]
            assert r.nr_sort(j).tolist() == sorted(range(len(d)), key=lambda i: (d[i], i))
            assert r.win[j] == d.index(min(d))
            assert r.win_output[j] == pytest.approx(math.exp(-min(d)), rel=1e-12)
        assert np.all(np.diff(r.distances) >= 0)

    def test_wrong_width(self):
        with pytest.raises(UsageError):
            rank_all_maps(make_model([[[0.0, 0.0]]]), np.zeros(3))

    def test_hand_scenario(self):
        model = line_model([[1, 2, 3, 20, 21], [3.5, 5, 22, 23, 24], [1.5, 2.5, 4, 25, 26]])
        assert model.k == 5
        r = rank_all_maps(model, np.zeros(1))
        assert rank_classes_knn(r, model.k) == [0, 2, 1]

    def test_single_class(self):
        r = rank_all_maps(make_model([[[0.2], [0.4]]]), np.zeros(1))
        assert rank_classes_knn(r, 1) == [0]

    def test_k_one_orders_by_winner_distance(self):
        model = line_model([[3.0], [1.0], [2.0]])
        assert rank_classes_knn(rank_all_maps(model, np.zeros(1)), 1) == [1, 2, 0]

    def test_tie_goes_to_nearest_neuron(self):
        model = line_model([[1.0, 4.0, 9.0], [2.0, 3.0, 9.5]])
        r = rank_all_maps(model, np.zeros(1))
        assert rank_classes_knn(r, 3) == [1, 0]
        assert rank_classes_knn(r, 1) == [0, 1]

    @settings(max_examples=80)
    @given(st.integers(0, 100_000))
    def test_matches_vote_oracle(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 6))
        # integer lattice keeps geometric distance ties exact in floating point
        weights = [rng.integers(0, 6, size=(int(rng.integers(1, 6)), 2)).astype(float) for _ in range(n)]
        model = make_model(weights)
        x = rng.integers(0, 6, size=2).astype(float)
        got = rank_classes_knn(rank_all_maps(model, x), model.k)
        assert sorted(got) == list(range(n))
        assert got == knn_oracle(weights, x, model.k)


class TestPredictionBound:
    @pytest.mark.parametrize("z,n,b", [(1.0, 3, 1), (1.06, 3, 2), (2.0, 3, 2), (7.5, 3, 3), (0.0, 2, 1)])
    def test_values(self, z, n, b):
        assert prediction_bound(z, n) == b


class TestClassify:
    def test_single_label_when_cardinality_one(self):
        model = line_model([[1.0], [1.0000001]])
        state = OnlineState(model)
        assert classify(state, [0.0]) == frozenset({0})

    def paired(self, avg1):
        truths = [frozenset({0}), frozenset({0, 1}), frozenset({1})]
        return line_model([[0.5], [1.0]], truths=truths, avg=[np.array([0.5]), np.array([avg1])])

    def test_score_equal_to_threshold_is_accepted(self):
        model = self.paired(math.exp(-1.0))
        assert classify(OnlineState(model), [0.0]) == frozenset({0, 1})

    def test_score_below_threshold_is_rejected(self):
        model = self.paired(math.exp(-1.0) * (1 + 1e-12))
        assert classify(OnlineState(model), [0.0]) == frozenset({0})

    def test_hand_evaluated_score(self):
        # P11 = 2/3, P[0,1] = 1/2, output exp(-1): score = exp(-1)/3
        truths = [frozenset({0}), frozenset({0, 1}), frozenset({1})]
        model = line_model([[0.5], [1.0]], truths=truths, avg=[np.array([0.5]), np.array([0.4])])
        r = rank_all_maps(model, np.zeros(1))
        score = math.exp(-1) / 3
        thr = model.neuron_stats.threshold[r.win_global[1]]
        assert thr == pytest.approx(2 / 3 * 0.5 * 0.4)
        assert score < thr
        assert assemble_labels(model, r, [0, 1]) == frozenset({0})
        model.neuron_stats.threshold[1] = score * 0.999
        assert assemble_labels(model, r, [0, 1]) == frozenset({0, 1})

    def test_zero_conditional_is_skipped(self):
        truths = [frozenset({0}), frozenset({1}), frozenset({0, 2}), frozenset({1, 2})]
        model = line_model([[0.1], [0.2], [0.3]], truths=truths, avg=[np.full(1, 1e-9)] * 3)
        r = rank_all_maps(model, np.zeros(1))
        assert assemble_labels(model, r, [0, 1, 2]) == frozenset({0, 1})

    def test_bound_limits_candidates(self, trained):
        state = OnlineState(trained)
        X = np.random.default_rng(1).random((200, 2))
        bound = prediction_bound(trained.cardinality.z, 3)
        assert all(1 <= len(classify(state, x)) <= bound for x in X)

    def test_classify_does_not_adapt(self, trained):
        state = OnlineState(trained)
        before = dumps_model(state.model)
        classify(state, Instance([0.5, 0.5], None, 0))
        assert dumps_model(state.model) == before


class TestAdapt:
    def test_zero_rate_keeps_weights(self, trained):
        state = OnlineState(trained, eta=0.0)
        W0 = state._W.copy()
        for x in np.random.default_rng(2).random((50, 2)):
            state.step(x)
        assert np.array_equal(state._W, W0)

    def test_one_step_counters(self, trained):
        state = OnlineState(trained)
        N0, t0 = trained.counts.n_total, trained.counts.t.copy()
        Y = state.step([0.4, 0.6])
        m = state.model
        assert m.counts.n_total == N0 + 1 == m.cardinality.N
        expected = t0.copy()
        for j in Y:
            for k in Y:
                expected[j, k] += 1
        assert np.array_equal(m.counts.t, expected)
        z0 = trained.cardinality.z
        assert m.cardinality.z == pytest.approx((z0 * N0 + len(Y)) / (N0 + 1), rel=1e-12)
        m.check()

    def test_winner_moves_toward_instance(self, trained):
        state = OnlineState(trained)
        x = state.scale([0.4, 0.6])
        Y, r = state.predict(x)
        before = {c: state._W[r.win_global[c]].copy() for c in Y}
        state.adapt(x, Y, r)
        for c in Y:
            np.testing.assert_allclose(state._W[r.win_global[c]], before[c] + 0.05 * (x - before[c]), atol=1e-15)

    def test_maps_view_packed_weights(self, trained):
        state = OnlineState(trained)
        state.step([0.5, 0.5])
        W = np.concatenate([g.weights for g in state.model.maps])
        assert np.array_equal(W, state._W)

    def test_input_model_untouched(self, trained):
        before = dumps_model(trained)
        process_stream(OnlineState(trained), blob_dataset(seed=3, n=100))
        assert dumps_model(trained) == before

    def test_frozen_state_never_changes(self, trained):
        state = OnlineState(trained, adaptive=False)
        before = dumps_model(state.model)
        process_stream(state, blob_dataset(seed=4, n=100))
        assert dumps_model(state.model) == before

    def test_rejects_empty_prediction(self, trained):
        with pytest.raises(UsageError):
            OnlineState(trained).adapt(np.zeros(2), frozenset())

    def test_eta_range(self, trained):
        with pytest.raises(UsageError):
            OnlineState(trained, eta=1.0)

    def test_replay_matches_batch(self, blobs, trained):
        state = OnlineState(trained, eta=0.0)
        stream = blob_dataset(seed=5, n=1000)
        avg0 = trained.neuron_stats.avg_output.copy()
        gains = np.zeros_like(avg0)
        preds = []
        for inst in stream:
            x = state.scale(inst.features)
            Y, r = state.predict(x)
            for c in Y:
                g = r.win_global[c]
                gains[g] += math.exp(-math.dist(x, state._W[g]))
            state.adapt(x, Y, r)
            preds.append(Y)
        m = state.model
        truths = [i.truth for i in blobs]
        assert m.counts == build_counts(truths + preds, 3)
        batch = batch_label_cardinality(truths + preds)
        assert m.cardinality.N == batch.N
        assert m.cardinality.z == pytest.approx(batch.z, abs=1e-9)
        np.testing.assert_allclose(m.neuron_stats.avg_output, avg0 + gains, rtol=1e-10)
        m.check()


class TestStream:
    def test_empty_stream(self, trained):
        state = OnlineState(trained)
        assert process_stream(state, []) == []
        assert dumps_model(state.model) == dumps_model(trained)

    def test_deterministic(self, trained):
        stream = blob_dataset(seed=6, n=300)
        a = process_stream(OnlineState(trained), stream)
        b = process_stream(OnlineState(trained), stream)
        assert a == b and len(a) == 300

    def test_rejects_tally(self, trained):
        stream = [Instance([0.5, 0.5], None, 0), Instance([0.5, np.nan], None, 1),
                  Instance([0.1], None, 2), Instance([0.2, 0.3], None, 3)]
        state = OnlineState(trained)
        log = process_stream(state, stream)
        assert [sid for sid, _ in log] == [0, 3]
        assert state.rejects == 2
        assert state.predictions_log == log

    def test_log_round_trip(self, tmp_path):
        entries = [(0, frozenset({2, 0})), (5, frozenset({1}))]
        text = format_log(entries)
        assert text.splitlines() == [LOG_HEADER, "0\t0,2", "5\t1"]
        path = tmp_path / "log.tsv"
        path.write_text(text)
        assert read_log(path) == entries

    def test_log_parse_error_line(self, tmp_path):
        path = tmp_path / "log.tsv"
        path.write_text(f"{LOG_HEADER}\n0\t1\n1\tx\n")
        with pytest.raises(ParseError, match=":3:"):
            read_log(path)
