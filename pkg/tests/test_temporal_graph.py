import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cawn.temporal_graph import OutOfOrderError, TemporalStore, build_store, intensity, stream_stats

from conftest import random_stream, store_from


def brute_force_probs(times, alpha):
    """p_i = exp(a t_i) / sum_{j <= i} exp(a t_j), computed with a max shift per prefix."""
    out = []
    for i in range(len(times)):
        prefix = np.asarray(times[: i + 1])
        out.append(1.0 / np.sum(np.exp(alpha * (prefix - prefix[-1]))))
    return np.array(out)


def test_first_entry_has_probability_one():
    store = store_from([(1, 2, 7.5)], alpha=3.0)
    assert store.history(1).probs == [1.0]
    assert store.history(2).probs == [1.0]


def test_two_events_ln2():
    store = store_from([(1, 2, 1.0), (1, 3, 2.0)], alpha=math.log(2))
    # exp(2a) / (exp(a) + exp(2a)) = 4 / 6
    assert store.history(1).probs[1] == pytest.approx(2 / 3, rel=1e-12)
    assert store.history(3).probs == [1.0]


@pytest.mark.parametrize("k", [1, 2, 5, 10])
def test_uniform_when_alpha_zero(k):
    events = [(0, i + 1, float(i)) for i in range(k + 1)]
    store = store_from(events, alpha=0.0)
    assert store.history(0).probs[-1] == pytest.approx(1 / (k + 1), rel=1e-15)


def test_rejects_out_of_order_with_index():
    store = store_from([(1, 2, 5.0)])
    with pytest.raises(OutOfOrderError) as err:
        store.record_event(2, 3, 4.0)
    assert err.value.index == 1
    assert len(store) == 1


def test_rejects_self_loop_and_attr_mismatch():
    store = TemporalStore(0.0, attr_dim=2)
    with pytest.raises(ValueError, match="self-loop"):
        store.record_event(1, 1, 0.0, [0, 0])
    with pytest.raises(ValueError, match="dim"):
        store.record_event(1, 2, 0.0, [0.0])
    store.record_event(1, 2, 0.0, [0.5, 1.5])
    np.testing.assert_array_equal(store.attrs(0), [0.5, 1.5])
    with pytest.raises(ValueError):
        TemporalStore(0.0).record_event(1, 2, 0.0, [1.0])


def test_negative_alpha_rejected():
    with pytest.raises(ValueError):
        TemporalStore(-0.1)


def test_probabilities_are_not_rewritten():
    store = store_from([(1, 2, 1.0), (1, 3, 2.0)], alpha=0.5)
    before = list(store.history(1).probs)
    store.record_event(1, 4, 3.0)
    assert store.history(1).probs[:2] == before


def test_neighbors_before_strict_and_latest_first():
    store = store_from([(0, 1, 1.0), (0, 2, 2.0), (0, 3, 3.0)])
    assert [e.t for e in store.neighbors_before(0, 3.0)] == [2.0, 1.0]
    assert list(store.neighbors_before(0, 0.5)) == []
    assert list(store.neighbors_before(99, 10.0)) == []


def test_neighbors_before_ties_reverse_insertion():
    store = store_from([(0, 1, 2.0), (0, 2, 2.0)])
    assert [e.neighbor for e in store.neighbors_before(0, 3.0)] == [2, 1]
    # both tied entries are normalized against everything recorded so far
    assert store.history(0).probs == [1.0, 0.5]


def test_stream_stats_formula():
    store = store_from([(1, 2, 0.0), (1, 2, 100.0)])
    stats = stream_stats(store)
    assert (stats.n_nodes, stats.n_events) == (2, 2)
    assert stats.tau == pytest.approx(0.02)


def test_stream_stats_single_event_has_no_tau():
    assert stream_stats(store_from([(1, 2, 3.0)])).tau is None
    with pytest.raises(ValueError):
        stream_stats(TemporalStore())


def test_intensity_published_dataset_size():
    # 1,899 nodes and 59,835 links over the dataset's span give tau ~ 3.59e-5
    span = 2.0 * 59835 / (1899 * 3.59e-5)
    assert intensity(1899, 59835, span) == pytest.approx(3.59e-5)


def test_large_timestamps_do_not_overflow():
    store = store_from([(0, 1, 1e6), (0, 2, 1e6 + 1), (0, 3, 1e6 + 3)], alpha=1.0)
    p = store.history(0).probs
    assert all(np.isfinite(p))
    np.testing.assert_allclose(p, brute_force_probs([0.0, 1.0, 3.0], 1.0), rtol=1e-12)


@pytest.mark.parametrize("alpha", [0.0, 0.1, 1.0, 5.0])
def test_fuzzed_probabilities_match_brute_force(alpha):
    rng = np.random.default_rng(int(alpha * 10))
    stream = random_stream(rng, n_nodes=20, n_events=2000, t_scale=200.0, ties=alpha == 1.0)
    store = build_store(stream, alpha)
    for w, hist in store.adj.items():
        np.testing.assert_allclose(hist.probs, brute_force_probs(hist.times, alpha), rtol=1e-9)
        # shifted normalizer equals the prefix sum of exp(a (t - t_last))
        t = np.asarray(hist.times)
        assert hist.norm == pytest.approx(np.sum(np.exp(alpha * (t - t[-1]))), rel=1e-9)


@settings(max_examples=60, deadline=None)
@given(
    gaps=st.lists(st.floats(0, 5, allow_nan=False), min_size=1, max_size=30),
    alpha=st.floats(0, 3),
)
def test_property_single_node_history(gaps, alpha):
    times = np.cumsum(gaps)
    store = store_from([(0, i + 1, t) for i, t in enumerate(times)], alpha)
    hist = store.history(0)
    assert hist.probs[0] == 1.0
    assert all(0 < p <= 1 for p in hist.probs)
    np.testing.assert_allclose(hist.probs, brute_force_probs(list(times), alpha), rtol=1e-9)
