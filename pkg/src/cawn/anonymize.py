"""Set-based relative node identities for pairs of walk sets.

A node ``w`` seen in the walks rooted at ``u`` and ``v`` is replaced by the
unordered pair of its per-position occurrence counts in both sets. The
classic per-walk anonymous-walk labelling is kept for ablations.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass
from typing import Hashable, Optional, Sequence

import numpy as np

from .sampler import PAD, Walk

INF = math.inf


@dataclass(frozen=True)
class RelativeIdentity:
    """Unordered pair of count vectors, stored lexicographically sorted."""

    pair: tuple[tuple[int, ...], tuple[int, ...]]

    @classmethod
    def of(cls, g_u: Sequence[int], g_v: Sequence[int]) -> "RelativeIdentity":
        a, b = tuple(int(x) for x in g_u), tuple(int(x) for x in g_v)
        return cls((a, b) if a <= b else (b, a))

    def as_array(self) -> np.ndarray:
        return np.array(self.pair, dtype=np.float64)


@dataclass(frozen=True)
class AnonymizedWalk:
    identities: tuple[RelativeIdentity, ...]
    times: tuple[float, ...]
    attrs: Optional[tuple] = None

    def __len__(self) -> int:
        return len(self.identities)


def _walk_nodes(walk) -> Sequence[Hashable]:
    return walk.nodes if isinstance(walk, Walk) else walk


def position_counts(walks: Sequence, m: int) -> dict[Hashable, np.ndarray]:
    """``g(w, S)[i]``: how many walks of ``S`` sit on ``w`` at position ``i``.

    Nodes absent from ``S`` are simply missing; use :func:`counts_of` for the
    zero-vector default. The padding node is never counted.
    """
    length = m + 1
    counts: dict[Hashable, np.ndarray] = defaultdict(lambda: np.zeros(length, dtype=np.int64))
    for walk in walks:
        nodes = _walk_nodes(walk)
        if len(nodes) != length:
            raise ValueError(f"walk of length {len(nodes)} in a set of {length}-step walks")
        for i, w in enumerate(nodes):
            if w is not PAD:
                counts[w][i] += 1
    return dict(counts)


def counts_of(counts: dict, w: Hashable, m: int) -> np.ndarray:
    g = counts.get(w)
    return np.zeros(m + 1, dtype=np.int64) if g is None else g


def _walk_length(*walk_sets: Sequence) -> int:
    for walks in walk_sets:
        for walk in walks:
            return len(_walk_nodes(walk))
    raise ValueError("both walk sets are empty")


def compute_icaw(w: Hashable, S_u: Sequence, S_v: Sequence) -> RelativeIdentity:
    m = _walk_length(S_u, S_v) - 1
    g_u = counts_of(position_counts(S_u, m), w, m)
    g_v = counts_of(position_counts(S_v, m), w, m)
    return RelativeIdentity.of(g_u, g_v)


def anonymize_walks(S_u: Sequence, S_v: Sequence) -> list[AnonymizedWalk]:
    """Replace every node of every walk in ``S_u`` then ``S_v`` by its relative identity."""
    m = _walk_length(S_u, S_v) - 1
    c_u, c_v = position_counts(S_u, m), position_counts(S_v, m)
    zero = RelativeIdentity.of([0] * (m + 1), [0] * (m + 1))
    cache: dict = {}
    out = []
    for walk in list(S_u) + list(S_v):
        ids = []
        for w in _walk_nodes(walk):
            if w is PAD:
                ids.append(zero)
                continue
            ident = cache.get(w)
            if ident is None:
                ident = cache[w] = RelativeIdentity.of(counts_of(c_u, w, m), counts_of(c_v, w, m))
            ids.append(ident)
        times = tuple(walk.times) if isinstance(walk, Walk) else ()
        attrs = tuple(walk.attrs) if isinstance(walk, Walk) and walk.attrs is not None else None
        out.append(AnonymizedWalk(tuple(ids), times, attrs))
    return out


def anonymize_aw(nodes: Sequence[Hashable]) -> tuple[int, ...]:
    """Anonymous-walk labels: each node becomes the number of distinct nodes
    seen up to (and including) its first occurrence."""
    if not len(nodes):
        raise ValueError("anonymize_aw needs a nonempty walk")
    first: dict = {}
    out = []
    for w in nodes:
        if w not in first:
            first[w] = len(first) + 1
        out.append(first[w])
    return tuple(out)


def hop_distance(g: Sequence[int]) -> float:
    """Smallest position with a nonzero count, ``inf`` if none."""
    for i, c in enumerate(g):
        if c > 0:
            return i
    return INF


def walk_shape(walk, counts_u: dict, counts_v: dict) -> tuple[tuple[float, float], ...]:
    """Relative coordinates ``(d_u, d_v)`` of every step of ``walk``."""
    nodes = _walk_nodes(walk)
    shape = []
    for w in nodes:
        if w is PAD:
            shape.append((INF, INF))
            continue
        d_u = hop_distance(counts_u.get(w, ()))
        d_v = hop_distance(counts_v.get(w, ()))
        shape.append((d_u, d_v))
    return tuple(shape)


def format_shape(shape) -> str:
    def fmt(d):
        return "inf" if d == INF else str(int(d))

    return " -> ".join(f"({fmt(a)},{fmt(b)})" for a, b in shape)
