"""Chronological splits, inductive masking, negative sampling, training and metrics."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np

from . import encoder as enc
from . import nn
from .data import EventStream, median_gap, time_span
from .encoder import EncoderConfig, WalkBatch
from .sampler import SamplerConfig, make_rng, sample_walks
from .temporal_graph import TemporalStore, build_store

log = logging.getLogger(__name__)

TRAIN, VAL, TEST = 0, 1, 2
CLASSES = ("transductive", "new-old", "new-new")


# metrics


def auc(scores, labels) -> Optional[float]:
    """ROC AUC as ``P(s+ > s-) + P(s+ = s-) / 2`` via mid-ranks; ``None`` for one class."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(bool)
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    order = np.argsort(s, kind="mergesort")
    sorted_s = s[order]
    ranks = np.empty(len(s))
    # mid-ranks over tie groups
    bounds = np.flatnonzero(np.diff(sorted_s)) + 1
    starts = np.concatenate([[0], bounds])
    stops = np.concatenate([bounds, [len(s)]])
    mid = (starts + stops + 1) / 2.0
    ranks[order] = np.repeat(mid, stops - starts)
    u_stat = ranks[y].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u_stat / (n_pos * n_neg))


def ap(scores, labels) -> Optional[float]:
    """Average precision: ``sum_k (R_k - R_{k-1}) P_k`` over descending distinct thresholds."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(bool)
    n_pos = int(y.sum())
    if n_pos == 0:
        return None
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    last = np.r_[np.flatnonzero(np.diff(s)), len(s) - 1]
    tp = np.cumsum(y)[last]
    fp = (last + 1) - tp
    precision = tp / (tp + fp)
    recall = tp / n_pos
    return float(np.sum(np.diff(np.r_[0.0, recall]) * precision))


# splitting


@dataclass
class Split:
    """Event-index sets of a chronological (optionally inductive) split."""

    train: np.ndarray
    val: np.ndarray
    test: np.ndarray
    thresholds: tuple[float, float]
    masked: set = field(default_factory=set)
    test_class: dict = field(default_factory=dict)
    val_class: dict = field(default_factory=dict)

    @property
    def inductive(self) -> bool:
        return bool(self.masked)

    def ranges(self) -> dict[str, tuple[int, int]]:
        def span(idx):
            return (int(idx[0]), int(idx[-1]) + 1) if len(idx) else (0, 0)

        return {"train": span(self.train), "val": span(self.val), "test": span(self.test)}

    def test_indices(self, cls: str) -> np.ndarray:
        if cls == "inductive":
            return np.array([i for i in self.test if self.test_class[int(i)] != "transductive"], dtype=np.int64)
        return np.array([i for i in self.test if self.test_class[int(i)] == cls], dtype=np.int64)


def chronological_split(stream: EventStream, r_train: float = 0.7, r_val: float = 0.85) -> Split:
    """Assign events by ``t < t0 + r * T`` against the two thresholds."""
    if not 0 < r_train < r_val < 1:
        raise ValueError(f"need 0 < r_train < r_val < 1, got {r_train}, {r_val}")
    n = len(stream)
    idx = np.arange(n)
    if n == 0:
        empty = np.zeros(0, dtype=np.int64)
        return Split(empty, empty, empty, (0.0, 0.0))
    t0, span = float(stream.t[0]), time_span(stream)
    if span == 0:
        log.warning("all events share one timestamp; everything goes to train")
        return Split(idx, idx[:0], idx[:0], (t0, t0), test_class={})
    a, b = t0 + r_train * span, t0 + r_val * span
    train = idx[stream.t < a]
    val = idx[(stream.t >= a) & (stream.t < b)]
    test = idx[stream.t >= b]
    for name, part in (("train", train), ("val", val), ("test", test)):
        if not len(part):
            log.warning("chronological split: %s partition is empty", name)
    classes = {int(i): "transductive" for i in test}
    return Split(train, val, test, (a, b), test_class=classes, val_class={int(i): "transductive" for i in val})


def _classify(stream: EventStream, i: int, masked: set) -> str:
    hits = (int(stream.src[i]) in masked) + (int(stream.dst[i]) in masked)
    return ("transductive", "new-old", "new-new")[hits]


def inductive_mask(stream: EventStream, split: Split, fraction: float = 0.1, seed: int = 0) -> Split:
    """Hide a random ``fraction`` of nodes from training.

    Train loses every event touching a masked node; val/test events are
    tagged transductive, new-old or new-new by how many endpoints are masked.
    """
    if fraction <= 0:
        return split
    nodes = stream.nodes()
    rng = np.random.default_rng(seed)
    k = int(round(fraction * len(nodes)))
    masked = {int(x) for x in rng.choice(nodes, size=k, replace=False)} if k else set()
    if not masked:
        return split
    touches = np.array([(int(u) in masked) or (int(v) in masked) for u, v in zip(stream.src, stream.dst)], dtype=bool)
    train = split.train[~touches[split.train]]
    if len(train) == 0:
        raise ValueError(
            f"masking {len(masked)} of {len(nodes)} nodes removes all {len(split.train)} training events"
        )
    return Split(
        train,
        split.val,
        split.test,
        split.thresholds,
        masked,
        {int(i): _classify(stream, int(i), masked) for i in split.test},
        {int(i): _classify(stream, int(i), masked) for i in split.val},
    )


def sample_negatives(src, dst, universe, rng) -> np.ndarray:
    """For each positive ``(u, v)``, a replacement endpoint uniform over ``universe - {u, v}``."""
    universe = np.asarray(universe)
    src, dst = np.asarray(src), np.asarray(dst)
    if len(np.unique(universe)) < 3:
        raise ValueError(f"negative sampling needs at least 3 nodes, universe has {len(np.unique(universe))}")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    out = universe[rng.integers(0, len(universe), size=len(src))]
    bad = (out == src) | (out == dst)
    while bad.any():
        out[bad] = universe[rng.integers(0, len(universe), size=int(bad.sum()))]
        bad = (out == src) | (out == dst)
    return out


# training


@dataclass
class TrainConfig:
    batch_size: int = 32
    lr: float = 1e-4
    max_epochs: int = 50
    patience: int = 3
    seed: int = 0
    restore: str = "best"  # or "third_previous": the epoch `patience` before the stop

    def __post_init__(self) -> None:
        if self.batch_size < 1 or self.max_epochs < 1 or self.patience < 1 or self.lr < 0:
            raise ValueError(f"bad training config: {self}")
        if self.restore not in ("best", "third_previous"):
            raise ValueError(f"restore must be 'best' or 'third_previous', got {self.restore!r}")


class TrainingError(RuntimeError):
    def __init__(self, epoch: int, batch: int, msg: str):
        super().__init__(f"epoch {epoch}, batch {batch}: {msg}")
        self.epoch = epoch
        self.batch = batch


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_auc: Optional[float]
    val_ap: Optional[float]


@dataclass
class TrainResult:
    params: nn.Parameters
    history: list[EpochRecord]
    best_epoch: int
    restored_epoch: int


def query_inputs(
    store: TemporalStore,
    u: int,
    v: int,
    v_neg: Optional[int],
    t: float,
    sampler: SamplerConfig,
    key: tuple,
    d_attr: int,
) -> tuple[WalkBatch, Optional[WalkBatch]]:
    """Inputs for ``(u, v, t)`` and, sharing the walks of ``u``, for ``(u, v_neg, t)``."""
    seed = sampler.seed
    S_u = sample_walks(store, u, t, sampler, make_rng(seed, *key, 0))
    S_v = sample_walks(store, v, t, sampler, make_rng(seed, *key, 1))
    pos = enc.encode_pair(S_u, S_v, d_attr)
    if v_neg is None:
        return pos, None
    S_n = sample_walks(store, v_neg, t, sampler, make_rng(seed, *key, 2))
    return pos, enc.encode_pair(S_u, S_n, d_attr)


@dataclass
class LabelledQueries:
    """Positive and negative inputs for a list of events."""

    events: np.ndarray
    negatives: np.ndarray
    pos: WalkBatch
    neg: WalkBatch

    def __len__(self) -> int:
        return len(self.events)


def build_queries(
    stream: EventStream,
    store: TemporalStore,
    events: np.ndarray,
    universe: np.ndarray,
    sampler: SamplerConfig,
    stage: int,
    d_attr: int,
) -> LabelledQueries:
    events = np.asarray(events, dtype=np.int64)
    rng = np.random.default_rng([sampler.seed, stage, 7])
    negs = sample_negatives(stream.src[events], stream.dst[events], universe, rng)
    pos, neg = [], []
    for e, vn in zip(events.tolist(), negs.tolist()):
        p, n = query_inputs(
            store, int(stream.src[e]), int(stream.dst[e]), vn, float(stream.t[e]), sampler, (stage, e), d_attr
        )
        pos.append(p)
        neg.append(n)
    if not pos:
        raise ValueError("no query events to build")
    return LabelledQueries(events, negs, WalkBatch.stack(pos), WalkBatch.stack(neg))


def score(batch: WalkBatch, params, config: EncoderConfig, chunk: int = 256) -> np.ndarray:
    out = []
    for a in range(0, len(batch), chunk):
        out.append(enc.forward(batch.take(slice(a, a + chunk)), params, config).values)
    return np.concatenate(out) if out else np.zeros(0)


def metrics(queries: LabelledQueries, params, config: EncoderConfig) -> dict:
    s = np.concatenate([score(queries.pos, params, config), score(queries.neg, params, config)])
    y = np.r_[np.ones(len(queries)), np.zeros(len(queries))]
    return {"auc": auc(s, y), "ap": ap(s, y), "n": len(queries)}


def _targets(stream: EventStream, idx: np.ndarray) -> np.ndarray:
    return idx[stream.is_query()[idx]]


def train(
    stream: EventStream,
    split: Split,
    enc_cfg: EncoderConfig,
    sampler: SamplerConfig,
    cfg: TrainConfig,
    on_epoch: Optional[Callable[[EpochRecord], None]] = None,
    params: Optional[nn.Parameters] = None,
) -> TrainResult:
    """Mini-batch BCE + Adam over the training events with early stopping on val AUC.

    Walks and negatives are drawn once per event (seeded), so epochs replay
    the same inputs; masked nodes never enter the training store.
    """
    universe = stream.nodes()
    train_store = build_store(stream.subset(split.train), sampler.alpha)
    full_store = build_store(stream, sampler.alpha)
    d_attr = enc_cfg.d_attr
    train_q = build_queries(stream, train_store, _targets(stream, split.train), universe, sampler, TRAIN, d_attr)
    val_events = _targets(stream, split.val)
    val_q = build_queries(stream, full_store, val_events, universe, sampler, VAL, d_attr) if len(val_events) else None

    if params is None:
        params = enc.init_params(enc_cfg, cfg.seed, time_span(stream), median_gap(stream))
    history: list[EpochRecord] = []
    snapshots: dict[int, dict] = {}
    best_auc, best_epoch = -np.inf, 0
    n = len(train_q)
    for epoch in range(1, cfg.max_epochs + 1):
        drop_rng = np.random.default_rng([cfg.seed, epoch])
        losses = []
        for b, a in enumerate(range(0, n, cfg.batch_size)):
            sl = slice(a, a + cfg.batch_size)
            batch = WalkBatch.stack([train_q.pos.take(sl), train_q.neg.take(sl)])
            k = len(train_q.pos.take(sl))
            labels = np.r_[np.ones(k), np.zeros(k)]
            logits = enc.forward(batch, params, enc_cfg, train=True, rng=drop_rng)
            loss = nn.bce_with_logits(logits, labels)
            value = loss.item()
            if not np.isfinite(value):
                raise TrainingError(epoch, b, f"non-finite loss {value}")
            loss.backward()
            nn.adam_step(params, cfg.lr)
            losses.append(value * 2 * k)
        train_loss = float(np.sum(losses) / (2 * n))
        if val_q is not None:
            m = metrics(val_q, params, enc_cfg)
            val_auc, val_ap = m["auc"], m["ap"]
        else:
            val_auc = val_ap = None
        rec = EpochRecord(epoch, train_loss, val_auc, val_ap)
        history.append(rec)
        if on_epoch is not None:
            on_epoch(rec)
        snapshots[epoch] = params.snapshot()
        for old in [e for e in snapshots if e < epoch - cfg.patience and e != best_epoch]:
            del snapshots[old]
        score_now = -np.inf if val_auc is None else val_auc
        if score_now > best_auc:
            best_auc, best_epoch = score_now, epoch
        elif epoch - best_epoch >= cfg.patience:
            break
    if best_epoch == 0:
        best_epoch = history[-1].epoch
    restored = best_epoch
    if cfg.restore == "third_previous":
        restored = max(1, history[-1].epoch - cfg.patience)
        restored = restored if restored in snapshots else best_epoch
    params.restore(snapshots[restored])
    return TrainResult(params, history, best_epoch, restored)


def evaluate(
    stream: EventStream,
    split: Split,
    params,
    enc_cfg: EncoderConfig,
    sampler: SamplerConfig,
    store: Optional[TemporalStore] = None,
) -> dict[str, dict]:
    """Test metrics per query class (plus ``inductive`` = new-old and new-new pooled)."""
    store = store if store is not None else build_store(stream, sampler.alpha)
    universe = stream.nodes()
    test = _targets(stream, split.test)
    if not len(test):
        return {}
    queries = build_queries(stream, store, test, universe, sampler, TEST, enc_cfg.d_attr)
    s_pos = score(queries.pos, params, enc_cfg)
    s_neg = score(queries.neg, params, enc_cfg)
    cls = np.array([split.test_class.get(int(e), "transductive") for e in queries.events])
    groups = {"all" if split.inductive else "transductive": np.ones(len(cls), dtype=bool)}
    if split.inductive:
        groups["transductive"] = cls == "transductive"
        groups["inductive"] = cls != "transductive"
        groups["new-old"] = cls == "new-old"
        groups["new-new"] = cls == "new-new"
    report = {}
    for name, sel in groups.items():
        if not sel.any():
            continue
        s = np.r_[s_pos[sel], s_neg[sel]]
        y = np.r_[np.ones(sel.sum()), np.zeros(sel.sum())]
        report[name] = {"auc": auc(s, y), "ap": ap(s, y), "n": int(sel.sum())}
    return report


def history_rows(history: list[EpochRecord]) -> list[dict]:
    return [asdict(r) for r in history]
