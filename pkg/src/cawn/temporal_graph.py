"""Append-only temporal adjacency with online acceptance probabilities.

Every recorded link ``({u, v}, t)`` gets one acceptance probability per
endpoint, ``p_{w,t} = exp(a*t) / sum_{t' <= t} exp(a*t')`` over the links
already attached to ``w``. Those values never change afterwards, which is
what lets the sampler draw exponentially time-decayed neighbours by a
short reverse-chronological acceptance loop.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass
from typing import Hashable, Iterator, NamedTuple, Optional, Sequence

import numpy as np

Node = Hashable


class OutOfOrderError(ValueError):
    """Raised when an event is older than the last recorded one."""

    def __init__(self, index: int, t: float, t_last: float):
        super().__init__(f"event #{index} at t={t!r} precedes last recorded t={t_last!r}")
        self.index = index


class Entry(NamedTuple):
    neighbor: Node
    t: float
    p: float
    eid: int


class NodeHistory:
    """Time-sorted link history of one node.

    Parallel lists keep the sampler's inner loop cheap. ``norm`` is the
    shifted normalizer ``sum exp(alpha * (t' - t_last))``.
    """

    __slots__ = ("times", "nbrs", "probs", "eids", "t_last", "norm")

    def __init__(self) -> None:
        self.times: list[float] = []
        self.nbrs: list[Node] = []
        self.probs: list[float] = []
        self.eids: list[int] = []
        self.t_last = 0.0
        self.norm = 0.0

    def __len__(self) -> int:
        return len(self.times)

    def append(self, nbr: Node, t: float, eid: int, alpha: float) -> float:
        if self.times:
            self.norm = self.norm * math.exp(alpha * (self.t_last - t)) + 1.0
        else:
            self.norm = 1.0
        self.t_last = t
        p = 1.0 / self.norm
        self.times.append(t)
        self.nbrs.append(nbr)
        self.probs.append(p)
        self.eids.append(eid)
        return p

    def count_before(self, t: float) -> int:
        """Number of entries with time strictly less than ``t``."""
        return bisect.bisect_left(self.times, t)

    def entry(self, i: int) -> Entry:
        return Entry(self.nbrs[i], self.times[i], self.probs[i], self.eids[i])


@dataclass(frozen=True)
class StreamStats:
    n_nodes: int
    n_events: int
    t_min: float
    t_max: float
    tau: Optional[float]


class TemporalStore:
    """Single-writer event store; read-only once ingestion is over.

    ``alpha`` is fixed for the lifetime of the store because the stored
    probabilities are specific to it.
    """

    def __init__(self, alpha: float = 0.0, attr_dim: int = 0):
        if alpha < 0:
            raise ValueError(f"alpha must be non-negative, got {alpha}")
        self.alpha = float(alpha)
        self.attr_dim = int(attr_dim)
        self.adj: dict[Node, NodeHistory] = {}
        self.src: list[Node] = []
        self.dst: list[Node] = []
        self.times: list[float] = []
        self._attrs: list[np.ndarray] = []

    def __len__(self) -> int:
        return len(self.times)

    @property
    def nodes(self) -> list[Node]:
        return list(self.adj)

    def history(self, w: Node) -> Optional[NodeHistory]:
        return self.adj.get(w)

    def attrs(self, eid: int) -> np.ndarray:
        if self.attr_dim == 0:
            return np.zeros(0)
        return self._attrs[eid]

    def record_event(self, u: Node, v: Node, t: float, attrs: Optional[Sequence[float]] = None) -> int:
        """Append one link and return its event id."""
        t = float(t)
        eid = len(self.times)
        if u == v:
            raise ValueError(f"event #{eid}: self-loop on node {u!r}")
        if self.times and t < self.times[-1]:
            raise OutOfOrderError(eid, t, self.times[-1])
        if self.attr_dim:
            x = np.asarray(attrs if attrs is not None else (), dtype=np.float64).reshape(-1)
            if x.shape[0] != self.attr_dim:
                raise ValueError(f"event #{eid}: attrs have dim {x.shape[0]}, store expects {self.attr_dim}")
            self._attrs.append(x)
        elif attrs is not None and len(attrs):
            raise ValueError(f"event #{eid}: attrs given but store has attr_dim=0")
        for a, b in ((u, v), (v, u)):
            hist = self.adj.get(a)
            if hist is None:
                hist = self.adj[a] = NodeHistory()
            hist.append(b, t, eid, self.alpha)
        self.src.append(u)
        self.dst.append(v)
        self.times.append(t)
        return eid

    def extend(self, stream) -> "TemporalStore":
        """Record every event of an :class:`~cawn.data.EventStream` (or a subset view)."""
        attrs = stream.attrs
        for i in range(len(stream)):
            x = attrs[i] if attrs is not None else None
            self.record_event(stream.src[i].item(), stream.dst[i].item(), stream.t[i].item(), x)
        return self

    def neighbors_before(self, w: Node, t: float) -> Iterator[Entry]:
        """Entries of ``w`` strictly before ``t``, latest first.

        Unknown nodes give an empty iterator; inductive queries hit unseen nodes.
        """
        hist = self.adj.get(w)
        if hist is None:
            return
        for i in range(hist.count_before(t) - 1, -1, -1):
            yield hist.entry(i)


def build_store(stream, alpha: float) -> TemporalStore:
    attr_dim = 0 if stream.attrs is None else stream.attrs.shape[1]
    return TemporalStore(alpha, attr_dim).extend(stream)


def stream_stats(store: TemporalStore) -> StreamStats:
    """Counts and average link-stream intensity ``2|E| / (|V| T)``."""
    if not store.times:
        raise ValueError("stream_stats needs at least one event")
    t_min, t_max = store.times[0], store.times[-1]
    n_nodes, n_events = len(store.adj), len(store.times)
    tau = intensity(n_nodes, n_events, t_max - t_min)
    return StreamStats(n_nodes, n_events, t_min, t_max, tau)


def intensity(n_nodes: int, n_events: int, span: float) -> Optional[float]:
    if span <= 0:
        return None
    return 2.0 * n_events / (n_nodes * span)
