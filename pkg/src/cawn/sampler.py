"""Backward-in-time walk extraction with exponential time decay.

A neighbour link at time ``t`` of the current walk tail ``(w_p, t_p)`` is
drawn with probability proportional to ``exp(alpha * (t - t_p))``. The draw
walks the tail's history from the newest link backwards and accepts each
entry with its stored probability, so the expected number of visited
entries stays bounded by ``2 tau / alpha + 1`` on Poisson-like streams.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from math import prod
from typing import Optional, Sequence

import numpy as np

from .temporal_graph import Entry, Node, TemporalStore


class _Sentinel:
    __slots__ = ()

    def __repr__(self) -> str:
        return "PAD"

    def __reduce__(self):
        return "PAD"


PAD = _Sentinel()
"""Padding node for walks that hit an empty history. Never counted."""


def make_rng(seed: int, *key: int) -> random.Random:
    """Independent generator for one ``(seed, key...)`` cell.

    Keys are mixed through :class:`numpy.random.SeedSequence`, so streams for
    different queries/walks do not overlap and can be drawn in any order.
    """
    state = np.random.SeedSequence([int(seed) & 0xFFFFFFFF, *(int(k) & 0xFFFFFFFF for k in key)])
    return random.Random(int.from_bytes(state.generate_state(4, np.uint32).tobytes(), "little"))


@dataclass
class SamplerConfig:
    M: int = 32
    m: int = 2
    alpha: float = 0.0
    branching: Optional[tuple[int, ...]] = None
    seed: int = 0

    def __post_init__(self) -> None:
        if self.M < 1 or self.m < 1:
            raise ValueError(f"need M >= 1 and m >= 1, got M={self.M}, m={self.m}")
        if self.alpha < 0:
            raise ValueError(f"alpha must be non-negative, got {self.alpha}")
        if self.branching is not None:
            self.branching = tuple(int(k) for k in self.branching)
            if len(self.branching) != self.m:
                raise ValueError(f"branching {self.branching} must have m={self.m} levels")
            if prod(self.branching) != self.M or min(self.branching) < 1:
                raise ValueError(f"branching {self.branching} must multiply to M={self.M}")


@dataclass
class SamplerCounter:
    """Tallies sampler calls and acceptance-loop iterations."""

    calls: int = 0
    iterations: int = 0

    @property
    def mean_iterations(self) -> float:
        return self.iterations / self.calls if self.calls else 0.0


@dataclass
class Walk:
    """``m + 1`` (node, time) steps; ``eids[i]`` is the link used to reach step i (-1 for none)."""

    nodes: list
    times: list
    eids: list
    truncated_at: Optional[int] = None
    attrs: Optional[list] = field(default=None, repr=False)

    def __len__(self) -> int:
        return len(self.nodes)

    @property
    def steps(self) -> list[tuple[Node, float]]:
        return list(zip(self.nodes, self.times))


def sample_neighbor(
    store: TemporalStore,
    w_p: Node,
    t_p: float,
    alpha: float,
    rng,
    counter: Optional[SamplerCounter] = None,
) -> Optional[Entry]:
    """Draw one link of ``w_p`` before ``t_p``; ``None`` iff there is none."""
    if alpha != store.alpha:
        raise ValueError(f"store was built with alpha={store.alpha}, sampler asked for {alpha}")
    hist = store.adj.get(w_p)
    if hist is None:
        return None
    i = _accept_index(hist, t_p, rng, counter)
    return None if i < 0 else hist.entry(i)


def _accept_index(hist, t_p: float, rng, counter: Optional[SamplerCounter]) -> int:
    n = hist.count_before(t_p)
    if counter is not None:
        counter.calls += 1
    probs = hist.probs
    draw = rng.random
    for i in range(n - 1, -1, -1):
        if draw() < probs[i]:
            if counter is not None:
                counter.iterations += n - i
            return i
    # unreachable for n > 0: the oldest entry has p = 1
    if counter is not None:
        counter.iterations += n
    return -1


def _new_walk(w0: Node, t0: float) -> Walk:
    return Walk([w0], [t0], [-1])


def _extend(walk: Walk, hist, rng, counter) -> bool:
    if hist is None:
        if counter is not None:
            counter.calls += 1
        return False
    i = _accept_index(hist, walk.times[-1], rng, counter)
    if i < 0:
        return False
    walk.nodes.append(hist.nbrs[i])
    walk.times.append(hist.times[i])
    walk.eids.append(hist.eids[i])
    return True


def _pad(walk: Walk, length: int) -> None:
    if walk.truncated_at is None:
        walk.truncated_at = len(walk.nodes)
    t_last = walk.times[-1]
    while len(walk.nodes) < length:
        walk.nodes.append(PAD)
        walk.times.append(t_last)
        walk.eids.append(-1)


def _attach_attrs(walks: list[Walk], store: TemporalStore) -> None:
    if not store.attr_dim:
        return
    zero = np.zeros(store.attr_dim)
    for walk in walks:
        walk.attrs = [zero if e < 0 else store.attrs(e) for e in walk.eids]


def sample_walks(
    store: TemporalStore,
    w0: Node,
    t0: float,
    config: SamplerConfig,
    rng,
    counter: Optional[SamplerCounter] = None,
) -> list[Walk]:
    """``M`` independent ``m``-step walks rooted at ``(w0, t0)``.

    Dead ends are padded with :data:`PAD` at zero time delta.
    """
    if config.alpha != store.alpha:
        raise ValueError(f"store was built with alpha={store.alpha}, sampler asked for {config.alpha}")
    if config.branching is not None:
        return sample_walks_tree(store, w0, t0, config, rng, counter)
    length = config.m + 1
    walks = [_new_walk(w0, t0) for _ in range(config.M)]
    live = list(walks)
    adj = store.adj
    for _ in range(config.m):
        still = []
        for walk in live:
            hist = adj.get(walk.nodes[-1])
            if _extend(walk, hist, rng, counter):
                still.append(walk)
            else:
                _pad(walk, length)
        live = still
    _attach_attrs(walks, store)
    return walks


def sample_walks_tree(
    store: TemporalStore,
    w0: Node,
    t0: float,
    config: SamplerConfig,
    rng,
    counter: Optional[SamplerCounter] = None,
) -> list[Walk]:
    """Tree-structured extraction: every level-``i`` node draws ``k_i`` children.

    Leaves are read off as ``M = prod(k_i)`` root-to-leaf walks, costing
    ``sum_i k_1...k_i`` neighbour draws instead of ``M * m``.
    """
    if config.branching is None:
        raise ValueError("sample_walks_tree needs config.branching")
    length = config.m + 1
    frontier = [_new_walk(w0, t0)]
    adj = store.adj
    for k in config.branching:
        nxt = []
        for parent in frontier:
            if parent.truncated_at is not None:
                nxt.extend(_clone(parent) for _ in range(k))
                continue
            hist = adj.get(parent.nodes[-1])
            for _ in range(k):
                child = _clone(parent)
                if not _extend(child, hist, rng, counter):
                    # empty history: the whole subtree is padding, one draw suffices
                    _pad(child, length)
                    nxt.extend([child] + [_clone(child) for _ in range(k - 1)])
                    break
                nxt.append(child)
        frontier = nxt
    walks = frontier
    for walk in walks:
        if len(walk.nodes) < length:
            _pad(walk, length)
    _attach_attrs(walks, store)
    return walks


def _clone(walk: Walk) -> Walk:
    return Walk(list(walk.nodes), list(walk.times), list(walk.eids), walk.truncated_at)


def tree_calls(branching: Sequence[int]) -> int:
    """Neighbour draws of a full tree: ``sum_i k_1 * ... * k_i``."""
    total, width = 0, 1
    for k in branching:
        width *= k
        total += width
    return total
