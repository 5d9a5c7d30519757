import numpy as np
import pytest

from cawn.data import EventStream
from cawn.temporal_graph import TemporalStore

# node ids of the small worked example used across tests
Y, U, B, A, C, V = 1, 2, 3, 4, 5, 6
TOY_EVENTS = [(Y, U, 0.5), (C, A, 1.0), (Y, B, 1.8), (A, B, 2.0), (U, B, 3.0), (V, Y, 5.0)]


def store_from(events, alpha=0.0):
    store = TemporalStore(alpha)
    for u, v, t in events:
        store.record_event(u, v, t)
    return store


def random_stream(rng, n_nodes, n_events, t_scale=10.0, ties=False):
    """Chronological stream with distinct endpoints; optional timestamp ties."""
    src = rng.integers(0, n_nodes, size=n_events)
    dst = (src + rng.integers(1, n_nodes, size=n_events)) % n_nodes
    if ties:
        t = np.sort(rng.integers(0, max(1, n_events // 3), size=n_events)).astype(float)
    else:
        t = np.sort(rng.uniform(0, t_scale, size=n_events))
    return EventStream(src, dst, t)


@pytest.fixture
def toy_store():
    return store_from(TOY_EVENTS, alpha=1.0)


def exact_neighbor_dist(times, t_p, alpha):
    """Target law over history indices: weight exp(alpha (t - t_p)) for t < t_p."""
    t = np.asarray(times, dtype=float)
    w = np.where(t < t_p, np.exp(alpha * (np.minimum(t, t_p) - t_p)), 0.0)
    return w / w.sum()


def tv_distance(p, q):
    return 0.5 * float(np.abs(np.asarray(p) - np.asarray(q)).sum())


def numeric_grad(f, x, eps=1e-5):
    """Central finite differences of scalar ``f()`` w.r.t. array ``x`` (perturbed in place)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + eps
        hi = f()
        x[i] = old - eps
        lo = f()
        x[i] = old
        g[i] = (hi - lo) / (2 * eps)
    return g


def max_rel_error(a, b, floor=1e-6):
    """Largest elementwise ``|a - b| / max(|a|, |b|, floor)``."""
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor), initial=0.0))


def check_param_grads(loss_fn, params, eps=1e-5):
    """Worst relative error between backprop and finite differences over all parameters."""
    params.zero_grad()
    loss_fn().backward()
    analytic = {k: (np.zeros_like(t.values) if t.grad is None else t.grad.copy()) for k, t in params.items()}
    worst = {}
    for k, t in params.items():
        num = numeric_grad(lambda: loss_fn().item(), t.values, eps)
        worst[k] = max_rel_error(analytic[k], num)
    params.zero_grad()
    return worst
