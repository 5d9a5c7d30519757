"""Event streams: loading, synthetic generators and text serialization."""

from __future__ import annotations

import logging
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

log = logging.getLogger(__name__)

JODIE_HEADER = "user_id,item_id,timestamp,state_label,comma_separated_list_of_features"


class DataFormatError(ValueError):
    def __init__(self, path, line: int, msg: str):
        super().__init__(f"{path}:{line}: {msg}")
        self.line = line


@dataclass
class EventStream:
    """Chronological interactions ``(src, dst, t)`` with optional link attributes.

    ``query_mask`` marks events usable as positive prediction targets; the
    synthetic generators set it to the events that follow their ground-truth
    law. ``None`` means every event is a target.
    """

    src: np.ndarray
    dst: np.ndarray
    t: np.ndarray
    attrs: Optional[np.ndarray] = None
    query_mask: Optional[np.ndarray] = None
    n_resorted: int = 0
    n_self_loops: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.src = np.asarray(self.src, dtype=np.int64)
        self.dst = np.asarray(self.dst, dtype=np.int64)
        self.t = np.asarray(self.t, dtype=np.float64)
        if not (len(self.src) == len(self.dst) == len(self.t)):
            raise ValueError("src, dst and t must have equal length")
        if self.attrs is not None:
            a = np.asarray(self.attrs, dtype=np.float64)
            width = a.shape[-1] if a.ndim > 1 else (1 if len(self.t) else 0)
            self.attrs = a.reshape(len(self.t), width)
            if self.attrs.shape[1] == 0:
                self.attrs = None
        if self.query_mask is not None:
            self.query_mask = np.asarray(self.query_mask, dtype=bool)

    def __len__(self) -> int:
        return len(self.t)

    @property
    def attr_dim(self) -> int:
        return 0 if self.attrs is None else self.attrs.shape[1]

    def nodes(self) -> np.ndarray:
        return np.unique(np.concatenate([self.src, self.dst]))

    def is_query(self) -> np.ndarray:
        return np.ones(len(self), dtype=bool) if self.query_mask is None else self.query_mask

    def subset(self, idx) -> "EventStream":
        idx = np.asarray(idx)
        return EventStream(
            self.src[idx],
            self.dst[idx],
            self.t[idx],
            None if self.attrs is None else self.attrs[idx],
            None if self.query_mask is None else self.query_mask[idx],
            meta=dict(self.meta),
        )

    def relabel(self, mapping: dict) -> "EventStream":
        src = np.array([mapping[x] for x in self.src.tolist()], dtype=np.int64)
        dst = np.array([mapping[x] for x in self.dst.tolist()], dtype=np.int64)
        return EventStream(src, dst, self.t.copy(), self.attrs, self.query_mask, meta=dict(self.meta))


def _finalize(src, dst, t, attrs, path, normalize_time: bool = True) -> EventStream:
    src = np.asarray(src, dtype=np.int64)
    dst = np.asarray(dst, dtype=np.int64)
    t = np.asarray(t, dtype=np.float64)
    attrs = None if attrs is None or not len(attrs) or not len(attrs[0]) else np.asarray(attrs, dtype=np.float64)
    loops = src == dst
    n_loops = int(loops.sum())
    if n_loops:
        log.warning("%s: dropped %d self-loop events", path, n_loops)
        keep = ~loops
        src, dst, t = src[keep], dst[keep], t[keep]
        attrs = None if attrs is None else attrs[keep]
    n_resorted = int(np.sum(np.diff(t) < 0)) if len(t) > 1 else 0
    if n_resorted:
        log.warning("%s: %d out-of-order timestamps, sorting", path, n_resorted)
        order = np.argsort(t, kind="stable")
        src, dst, t = src[order], dst[order], t[order]
        attrs = None if attrs is None else attrs[order]
    if normalize_time and len(t):
        t = t - t[0]
    return EventStream(src, dst, t, attrs, n_resorted=n_resorted, n_self_loops=n_loops, meta={"path": str(path)})


def load_jodie_csv(path) -> EventStream:
    """JODIE-format bipartite CSV; item ids are shifted past the largest user id."""
    path = Path(path)
    users, items, times, feats = [], [], [], []
    with open(path) as fh:
        header = fh.readline().strip()
        if header != JODIE_HEADER:
            raise DataFormatError(path, 1, f"expected header {JODIE_HEADER!r}, got {header!r}")
        n_feat = None
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            cols = line.split(",")
            if len(cols) < 3:
                raise DataFormatError(path, lineno, f"expected at least 3 columns, got {len(cols)}")
            try:
                u, i, ts = int(cols[0]), int(cols[1]), float(cols[2])
                f = [float(x) for x in cols[4:]]
            except ValueError as exc:
                raise DataFormatError(path, lineno, str(exc)) from None
            if n_feat is None:
                n_feat = len(f)
            elif len(f) != n_feat:
                raise DataFormatError(path, lineno, f"{len(f)} features, earlier rows have {n_feat}")
            users.append(u)
            items.append(i)
            times.append(ts)
            feats.append(f)
    if not users:
        return EventStream([], [], [], meta={"path": str(path)})
    offset = max(users) + 1
    stream = _finalize(users, np.asarray(items) + offset, times, feats, path)
    stream.meta["item_offset"] = offset
    return stream


_SPLIT = re.compile(r"[,\s]+")


def load_edge_list(path) -> EventStream:
    """Rows ``u v t [attrs...]`` separated by whitespace or commas; ``#`` comments skipped."""
    path = Path(path)
    src, dst, times, feats = [], [], [], []
    n_feat = None
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#") or line.startswith("%"):
                continue
            cols = [c for c in _SPLIT.split(line) if c]
            if len(cols) < 3:
                raise DataFormatError(path, lineno, f"expected 'u v t [attrs...]', got {line!r}")
            try:
                u, v, ts = int(cols[0]), int(cols[1]), float(cols[2])
                f = [float(x) for x in cols[3:]]
            except ValueError as exc:
                raise DataFormatError(path, lineno, str(exc)) from None
            if n_feat is None:
                n_feat = len(f)
            elif len(f) != n_feat:
                raise DataFormatError(path, lineno, f"{len(f)} attributes, earlier rows have {n_feat}")
            src.append(u)
            dst.append(v)
            times.append(ts)
            feats.append(f)
    return _finalize(src, dst, times, feats, path)


def save_edge_list(stream: EventStream, path) -> None:
    with open(path, "w") as fh:
        for i in range(len(stream)):
            row = [str(int(stream.src[i])), str(int(stream.dst[i])), repr(float(stream.t[i]))]
            if stream.attrs is not None:
                row.extend(repr(float(x)) for x in stream.attrs[i])
            fh.write(" ".join(row) + "\n")


def save_jodie_csv(stream: EventStream, path, item_offset: int) -> None:
    with open(path, "w") as fh:
        fh.write(JODIE_HEADER + "\n")
        for i in range(len(stream)):
            row = [str(int(stream.src[i])), str(int(stream.dst[i]) - item_offset), repr(float(stream.t[i])), "0"]
            if stream.attrs is not None:
                row.extend(repr(float(x)) for x in stream.attrs[i])
            fh.write(",".join(row) + "\n")


# synthetic streams


def gen_poisson(n_nodes: int, tau: float, T: float, seed: int = 0) -> EventStream:
    """Aggregate Poisson stream in which every node sees links at rate ``tau``.

    Links arrive at total rate ``tau * n_nodes / 2`` over ``[0, T)`` and get
    two distinct uniformly random endpoints.
    """
    if tau <= 0:
        raise ValueError(f"tau must be positive, got {tau}")
    rng = np.random.default_rng(seed)
    rate = tau * n_nodes / 2.0
    if T <= 0:
        return EventStream([], [], [])
    # draw in chunks until the horizon is passed
    gaps = []
    total = 0.0
    expected = max(16, int(rate * T * 1.1) + 16)
    while total < T:
        chunk = rng.exponential(1.0 / rate, size=expected)
        gaps.append(chunk)
        total += chunk.sum()
    t = np.cumsum(np.concatenate(gaps))
    t = t[t < T]
    n = len(t)
    src = rng.integers(0, n_nodes, size=n)
    dst = (src + rng.integers(1, n_nodes, size=n)) % n_nodes
    return EventStream(src, dst, t, meta={"generator": "poisson", "tau": tau})


def gen_pairwise(seed: int = 0, n_pairs: int = 50, n_rounds: int = 20) -> EventStream:
    """Disjoint node pairs that only ever interact within the pair, all at shared timestamps.

    With 2 pairs and 2 rounds this is the two-pair scenario in which a
    structure-blind encoder confuses ``a`` with ``a'``.
    """
    if n_pairs < 2:
        raise ValueError(f"need at least 2 pairs, got {n_pairs}")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(2 * n_pairs)
    left, right = perm[0::2], perm[1::2]
    round_times = np.concatenate([[0.0], np.cumsum(rng.uniform(0.5, 1.5, size=n_rounds - 1))]) if n_rounds else []
    src, dst, t = [], [], []
    for rt in round_times:
        order = rng.permutation(n_pairs)
        src.extend(left[order])
        dst.extend(right[order])
        t.extend([rt] * n_pairs)
    stream = EventStream(src, dst, t, meta={"generator": "pairwise", "n_pairs": n_pairs})
    stream.meta["pairs"] = list(zip(left.tolist(), right.tolist()))
    return stream


def gen_triadic(
    seed: int = 0,
    n_nodes: int = 100,
    n_rounds: int = 1000,
    p_close: float = 0.5,
    mean_gap: float = 1.0,
) -> EventStream:
    """Stream driven by recency-weighted triadic closure.

    Each round emits one link after an exponential gap. Every new link
    ``u - v`` opens the wedge ``x - u - v``, where ``x`` was the latest
    neighbour of ``u`` before ``v`` (or symmetrically through ``v``). With
    probability ``p_close`` the most recently opened, still open wedge
    closes into ``x - v``; otherwise a random pair with no common neighbour
    links. Closure links are the ground-truth positives (``query_mask``).
    """
    if n_nodes < 3:
        raise ValueError(f"need at least 3 nodes, got {n_nodes}")
    rng = np.random.default_rng(seed)
    nbrs: list[set] = [set() for _ in range(n_nodes)]
    last: list[Optional[int]] = [None] * n_nodes
    open_wedges: list[tuple[int, int]] = []
    src, dst, t, closure = [], [], [], []
    now = 0.0
    for _ in range(n_rounds):
        now += rng.exponential(mean_gap)
        pick = None
        if rng.random() < p_close:
            while open_wedges:
                a, b = open_wedges.pop()
                if b not in nbrs[a]:
                    pick = (a, b)
                    break
        if pick is not None:
            u, v = pick
            is_closure = True
        else:
            for _ in range(100):
                u, v = (int(x) for x in rng.choice(n_nodes, size=2, replace=False))
                if v not in nbrs[u] and not (nbrs[u] & nbrs[v]):
                    break
            # a saturated graph falls back to whatever pair was drawn last
            is_closure = False
        fresh = []
        if last[u] is not None and last[u] != v and v not in nbrs[last[u]]:
            fresh.append((last[u], v))
        if last[v] is not None and last[v] != u and u not in nbrs[last[v]]:
            fresh.append((u, last[v]))
        if fresh:
            open_wedges.append(fresh[int(rng.integers(len(fresh)))])
        nbrs[u].add(v)
        nbrs[v].add(u)
        last[u], last[v] = v, u
        src.append(u)
        dst.append(v)
        t.append(now)
        closure.append(is_closure)
    return EventStream(src, dst, t, query_mask=np.array(closure, dtype=bool), meta={"generator": "triadic"})


# split manifests


def save_manifest(path, ranges: dict[str, tuple[int, int]], masked, header: Optional[dict] = None) -> None:
    """Line-oriented split manifest: ``name<TAB>start<TAB>stop`` rows and one ``masked`` row."""
    import json

    with open(path, "w") as fh:
        if header is not None:
            fh.write("# config: " + json.dumps(header, sort_keys=True) + "\n")
        for name, (a, b) in ranges.items():
            fh.write(f"{name}\t{a}\t{b}\n")
        fh.write("masked\t" + ",".join(str(int(x)) for x in sorted(masked)) + "\n")


def load_manifest(path) -> tuple[dict[str, tuple[int, int]], set[int]]:
    ranges, masked = {}, set()
    with open(path) as fh:
        for line in fh:
            if line.startswith("#") or not line.strip():
                continue
            cols = line.rstrip("\n").split("\t")
            if cols[0] == "masked":
                masked = {int(x) for x in cols[1].split(",") if x} if len(cols) > 1 else set()
            else:
                ranges[cols[0]] = (int(cols[1]), int(cols[2]))
    return ranges, masked


def median_gap(stream: EventStream) -> float:
    gaps = np.diff(stream.t)
    gaps = gaps[gaps > 0]
    return float(np.median(gaps)) if len(gaps) else 1.0


def time_span(stream: EventStream) -> float:
    return float(stream.t[-1] - stream.t[0]) if len(stream) else 0.0


def describe(stream: EventStream) -> dict:
    n_nodes = len(stream.nodes()) if len(stream) else 0
    span = time_span(stream)
    tau = 2.0 * len(stream) / (n_nodes * span) if span > 0 and n_nodes else math.nan
    return {"n_nodes": n_nodes, "n_events": len(stream), "span": span, "tau": tau, "attr_dim": stream.attr_dim}
