"""Neural encoder over anonymized walk pairs.

Each walk step becomes ``f1(identity) ++ f2(dt) ++ X``: a shared two-layer
MLP applied to both count vectors and summed, random Fourier features of
the backward time gap, and the link attributes. A recurrent cell reads the
steps root-first; the ``2M`` walk encodings of a query are pooled (mean or
bilinear self-attention) and a two-layer perceptron gives the link logit.

Everything is batched: a :class:`WalkBatch` holds ``Q`` queries with ``2M``
walks of ``L = m + 1`` steps each.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np

from . import nn
from .anonymize import AnonymizedWalk, RelativeIdentity, anonymize_aw, position_counts
from .sampler import PAD, SamplerConfig, make_rng, sample_walks
from .temporal_graph import TemporalStore

AGG_MODES = ("mean", "attention")
IDENTITY_MODES = ("caw", "aw", "none")


@dataclass
class EncoderConfig:
    m: int = 2
    d_count: int = 64
    d_time: int = 64
    d_walk: int = 64
    d_attr: int = 0
    agg: str = "mean"
    dropout: float = 0.1
    identity: str = "caw"  # "aw" swaps f1 for one-hot anonymous-walk labels, "none" drops it
    use_time: bool = True
    cell: str = "gru"
    head: str = "mlp"
    count_activation: str = "relu"

    def __post_init__(self) -> None:
        if self.agg == "attn":
            self.agg = "attention"
        if self.agg not in AGG_MODES:
            raise ValueError(f"agg must be one of {AGG_MODES}, got {self.agg!r}")
        if self.identity not in IDENTITY_MODES:
            raise ValueError(f"identity must be one of {IDENTITY_MODES}, got {self.identity!r}")
        if self.cell not in ("gru", "tanh"):
            raise ValueError(f"cell must be 'gru' or 'tanh', got {self.cell!r}")
        if self.head not in ("mlp", "linear"):
            raise ValueError(f"head must be 'mlp' or 'linear', got {self.head!r}")
        if min(self.m, self.d_count, self.d_time, self.d_walk) < 1 or self.d_attr < 0:
            raise ValueError(f"bad encoder dimensions: {self}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")

    @property
    def steps(self) -> int:
        return self.m + 1

    def step_dim(self) -> int:
        ident = {"caw": self.d_count, "aw": self.steps, "none": 0}[self.identity]
        return ident + (2 * self.d_time if self.use_time else 0) + self.d_attr

    def to_dict(self) -> dict:
        return asdict(self)


def init_params(
    config: EncoderConfig,
    seed: int = 0,
    time_range: Optional[float] = None,
    median_dt: Optional[float] = None,
) -> nn.Parameters:
    """Fresh parameters; weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)).

    Time frequencies are log-spaced from ``1 / time_range`` to
    ``10 / median_dt`` so the Fourier features span the stream's scales.
    """
    rng = np.random.default_rng(seed)
    p = nn.Parameters()
    L, dc, dw = config.steps, config.d_count, config.d_walk
    if config.identity == "caw":
        p.add("f1.W1", nn.uniform_init(rng, L, (L, dc)))
        p.add("f1.b1", nn.uniform_init(rng, L, (dc,)))
        p.add("f1.W2", nn.uniform_init(rng, dc, (dc, dc)))
        p.add("f1.b2", nn.uniform_init(rng, dc, (dc,)))
    if config.use_time:
        lo = 1.0 / time_range if time_range and time_range > 0 else 1e-2
        hi = 10.0 / median_dt if median_dt and median_dt > 0 else 10.0
        if hi <= lo:
            hi = lo * 10.0
        p.add("time.omega", np.geomspace(lo, hi, config.d_time))
    F = config.step_dim()
    gates = ("z", "r", "n") if config.cell == "gru" else ("n",)
    for g in gates:
        p.add(f"rnn.W_{g}", nn.uniform_init(rng, F, (F, dw)))
        p.add(f"rnn.U_{g}", nn.uniform_init(rng, dw, (dw, dw)))
        p.add(f"rnn.b_{g}", nn.uniform_init(rng, dw, (dw,)))
    if config.agg == "attention":
        p.add("attn.Q1", nn.uniform_init(rng, dw, (dw, dw)))
        p.add("attn.Q2", nn.uniform_init(rng, dw, (dw, dw)))
    if config.head == "mlp":
        p.add("head.W1", nn.uniform_init(rng, dw, (dw, dw)))
        p.add("head.b1", nn.uniform_init(rng, dw, (dw,)))
        p.add("head.W2", nn.uniform_init(rng, dw, (dw, 1)))
        p.add("head.b2", nn.uniform_init(rng, dw, (1,)))
    else:
        p.add("head.W2", nn.uniform_init(rng, dw, (dw, 1)))
        p.add("head.b2", nn.uniform_init(rng, dw, (1,)))
    return p


@dataclass
class WalkBatch:
    """Dense inputs for ``Q`` queries of ``W = 2M`` walks with ``L`` steps."""

    counts: np.ndarray  # (Q, W, L, 2, L)
    aw: np.ndarray  # (Q, W, L) anonymous-walk labels, 0 for padding
    dt: np.ndarray  # (Q, W, L)
    attrs: Optional[np.ndarray] = None  # (Q, W, L, d_attr)

    def __len__(self) -> int:
        return self.counts.shape[0]

    @staticmethod
    def stack(parts: Sequence["WalkBatch"]) -> "WalkBatch":
        attrs = None if parts[0].attrs is None else np.concatenate([b.attrs for b in parts])
        return WalkBatch(
            np.concatenate([b.counts for b in parts]),
            np.concatenate([b.aw for b in parts]),
            np.concatenate([b.dt for b in parts]),
            attrs,
        )

    def take(self, idx) -> "WalkBatch":
        return WalkBatch(self.counts[idx], self.aw[idx], self.dt[idx], None if self.attrs is None else self.attrs[idx])


def _canonical_pairs(counts: np.ndarray) -> np.ndarray:
    """Sort each (g_u, g_v) pair lexicographically along axis -2."""
    a, b = counts[..., 0, :], counts[..., 1, :]
    diff = a - b
    nz = diff != 0
    first = np.argmax(nz, axis=-1)[..., None]
    swap = nz.any(axis=-1) & (np.take_along_axis(diff, first, axis=-1)[..., 0] > 0)
    lo = np.where(swap[..., None], b, a)
    hi = np.where(swap[..., None], a, b)
    return np.stack([lo, hi], axis=-2)


def encode_pair(S_u: Sequence, S_v: Sequence, d_attr: int = 0, return_order: bool = False):
    """Anonymize one ``{S_u, S_v}`` pair into a single-query batch.

    Walk rows are put in a canonical order so pooling is bitwise independent
    of which endpoint came first and of the order walks were drawn in.
    With ``return_order`` the row permutation (indices into ``S_u + S_v``)
    is returned alongside the batch.
    """
    walks = list(S_u) + list(S_v)
    L = len(walks[0].nodes)
    m = L - 1
    c_u, c_v = position_counts(S_u, m), position_counts(S_v, m)
    W = len(walks)
    counts = np.zeros((W, L, 2, L))
    aw = np.zeros((W, L))
    dt = np.zeros((W, L))
    attrs = np.zeros((W, L, d_attr)) if d_attr else None
    for r, walk in enumerate(walks):
        nodes, times = walk.nodes, walk.times
        for i, w in enumerate(nodes):
            if w is PAD:
                continue
            g = c_u.get(w)
            if g is not None:
                counts[r, i, 0] = g
            g = c_v.get(w)
            if g is not None:
                counts[r, i, 1] = g
        labels = anonymize_aw(nodes)
        first_pad = walk.truncated_at if walk.truncated_at is not None else L
        aw[r, :first_pad] = labels[:first_pad]
        dt[r, 1:] = np.subtract(times[:-1], times[1:])
        if attrs is not None:
            if walk.attrs is None or np.shape(walk.attrs)[-1] != d_attr:
                got = None if walk.attrs is None else np.shape(walk.attrs)[-1]
                raise ValueError(f"walk attributes have dim {got}, encoder expects d_attr={d_attr}")
            attrs[r] = walk.attrs
    counts = _canonical_pairs(counts)
    key = [counts.reshape(W, -1), aw, dt]
    if attrs is not None:
        key.append(attrs.reshape(W, -1))
    keymat = np.concatenate(key, axis=1)
    order = np.lexsort(keymat.T[::-1])
    batch = WalkBatch(
        counts[order][None],
        aw[order][None],
        dt[order][None],
        None if attrs is None else attrs[order][None],
    )
    return (batch, order) if return_order else batch


def encode_anonymized(walks: Sequence[AnonymizedWalk], d_attr: int = 0) -> WalkBatch:
    """Batch for already anonymized walks (no anonymous-walk labels available)."""
    W, L = len(walks), len(walks[0])
    counts = np.zeros((W, L, 2, L))
    dt = np.zeros((W, L))
    attrs = np.zeros((W, L, d_attr)) if d_attr else None
    for r, walk in enumerate(walks):
        for i, ident in enumerate(walk.identities):
            counts[r, i] = ident.as_array()
        if walk.times:
            dt[r, 1:] = np.subtract(walk.times[:-1], walk.times[1:])
        if attrs is not None:
            if walk.attrs is None or np.shape(walk.attrs)[-1] != d_attr:
                raise ValueError(f"walk attributes do not match d_attr={d_attr}")
            attrs[r] = walk.attrs
    return WalkBatch(counts[None], np.zeros((1, W, L)), dt[None], None if attrs is None else attrs[None])


# layer functions


def encode_time(dt, params: nn.Parameters) -> nn.Tensor:
    """``[cos(w_1 dt), sin(w_1 dt), ..., cos(w_d dt), sin(w_d dt)]``."""
    omega = params["time.omega"]
    dt = np.asarray(dt, dtype=np.float64)
    phase = nn.mul(nn.Tensor(dt[..., None]), omega)
    d = omega.shape[0]
    c = nn.reshape(nn.cos(phase), dt.shape + (d, 1))
    s = nn.reshape(nn.sin(phase), dt.shape + (d, 1))
    return nn.reshape(nn.concat([c, s], axis=-1), dt.shape + (2 * d,))


def _f1(x, params, config: EncoderConfig, train: bool, rng) -> nn.Tensor:
    h = nn.affine(x, params["f1.W1"], params["f1.b1"])
    if config.count_activation == "relu":
        h = nn.relu(h)
    h = nn.dropout(h, config.dropout, rng, train)
    return nn.affine(h, params["f1.W2"], params["f1.b2"])


def encode_counts(identity, params: nn.Parameters, config: EncoderConfig, train: bool = False, rng=None) -> nn.Tensor:
    """``MLP(g_u) + MLP(g_v)`` with one shared MLP.

    ``identity`` is a :class:`RelativeIdentity` or an array ``(..., 2, L)``.
    """
    x = identity.as_array() if isinstance(identity, RelativeIdentity) else np.asarray(identity, dtype=np.float64)
    out = _f1(nn.Tensor(x), params, config, train, rng)
    return nn.sum(out, axis=-2)


def step_features(batch: WalkBatch, params, config: EncoderConfig, train: bool = False, rng=None) -> nn.Tensor:
    parts = []
    if config.identity == "caw":
        parts.append(encode_counts(batch.counts, params, config, train, rng))
    elif config.identity == "aw":
        L = config.steps
        onehot = (batch.aw[..., None] == np.arange(1, L + 1)).astype(np.float64)
        parts.append(nn.Tensor(onehot))
    if config.use_time:
        parts.append(encode_time(batch.dt, params))
    if config.d_attr:
        if batch.attrs is None or batch.attrs.shape[-1] != config.d_attr:
            got = None if batch.attrs is None else batch.attrs.shape[-1]
            raise ValueError(f"walk attributes have dim {got}, encoder expects d_attr={config.d_attr}")
        parts.append(nn.Tensor(batch.attrs))
    if not parts:
        raise ValueError("encoder has no step features enabled")
    return parts[0] if len(parts) == 1 else nn.concat(parts, axis=-1)


def run_rnn(x: nn.Tensor, params, config: EncoderConfig, train: bool = False, rng=None) -> nn.Tensor:
    """Recurrent pass over axis -2 (steps) of ``(N, L, F)``; returns ``(N, d_walk)``."""
    N, L = x.shape[0], x.shape[1]
    w = {k.split(".", 1)[1]: v for k, v in params.items() if k.startswith("rnn.")}
    cell = nn.gru_cell if config.cell == "gru" else nn.tanh_cell
    h = nn.Tensor(np.zeros((N, config.d_walk), dtype=x.values.dtype))
    for i in range(L):
        h = cell(nn.take(x, i, axis=1), h, w)
    return nn.dropout(h, config.dropout, rng, train)


def encode_walks(batch: WalkBatch, params, config: EncoderConfig, train: bool = False, rng=None) -> nn.Tensor:
    """Walk encodings ``(Q, W, d_walk)``."""
    feats = step_features(batch, params, config, train, rng)
    Q, W, L = batch.dt.shape
    flat = nn.reshape(feats, (Q * W, L, feats.shape[-1]))
    return nn.reshape(run_rnn(flat, params, config, train, rng), (Q, W, config.d_walk))


def encode_walk(walk, params, config: EncoderConfig) -> nn.Tensor:
    """Encoding of a single anonymized walk (dropout off)."""
    batch = encode_anonymized([walk], config.d_attr)
    return nn.reshape(encode_walks(batch, params, config), (config.d_walk,))


def aggregate(encodings, params, config: EncoderConfig, train: bool = False, rng=None) -> nn.Tensor:
    """Pool ``(..., W, d)`` walk encodings into ``(..., d)``.

    ``attention``: each walk attends to all walks of its query with scores
    ``e_i^T Q1 e_j`` and values ``e_j Q2``; results are mean-pooled.
    """
    enc = nn.as_tensor(encodings)
    squeeze = enc.ndim == 2
    if squeeze:
        enc = nn.reshape(enc, (1,) + enc.shape)
    if enc.shape[-2] == 0:
        raise ValueError("aggregate needs at least one walk encoding")
    if config.agg == "mean":
        out = nn.mean(enc, axis=-2)
    else:
        scores = nn.matmul(nn.matmul(enc, params["attn.Q1"]), nn.swapaxes(enc, -1, -2))
        weights = nn.dropout(nn.softmax(scores, axis=-1), config.dropout, rng, train)
        values = nn.matmul(enc, params["attn.Q2"])
        out = nn.mean(nn.matmul(weights, values), axis=-2)
    return nn.reshape(out, (out.shape[-1],)) if squeeze else out


def head(pooled: nn.Tensor, params, config: EncoderConfig, train: bool = False, rng=None) -> nn.Tensor:
    """Link logit(s) from pooled encodings ``(..., d)`` -> ``(...)``."""
    h = pooled
    if config.head == "mlp":
        h = nn.relu(nn.affine(h, params["head.W1"], params["head.b1"]))
        h = nn.dropout(h, config.dropout, rng, train)
    out = nn.affine(h, params["head.W2"], params["head.b2"])
    return nn.reshape(out, out.shape[:-1])


def forward(batch: WalkBatch, params, config: EncoderConfig, train: bool = False, rng=None) -> nn.Tensor:
    """Logits ``(Q,)`` for a batch of queries."""
    enc = encode_walks(batch, params, config, train, rng)
    return head(aggregate(enc, params, config, train, rng), params, config, train, rng)


def walk_logits(batch: WalkBatch, params, config: EncoderConfig) -> np.ndarray:
    """Per-walk scores ``head(enc(W_i))``, shape ``(Q, W)``.

    With a linear head and mean pooling these average exactly to the query
    logit; with the MLP head they are the logit each walk would give alone.
    """
    enc = encode_walks(batch, params, config)
    return head(enc, params, config).values


# end-to-end


@dataclass(frozen=True)
class LinkQuery:
    u: object
    v: object
    t: float
    label: Optional[int] = None


def sample_pair(store: TemporalStore, u, v, t: float, sampler: SamplerConfig, rng_u, rng_v, counter=None):
    S_u = sample_walks(store, u, t, sampler, rng_u, counter)
    S_v = sample_walks(store, v, t, sampler, rng_v, counter)
    return S_u, S_v


def query_batch(store: TemporalStore, query: LinkQuery, sampler: SamplerConfig, rngs, d_attr: int = 0) -> WalkBatch:
    S_u, S_v = sample_pair(store, query.u, query.v, query.t, sampler, *rngs)
    return encode_pair(S_u, S_v, d_attr)


def predict_link(
    query: LinkQuery,
    store: TemporalStore,
    params: nn.Parameters,
    config: EncoderConfig,
    sampler: SamplerConfig,
    rng=None,
    rngs=None,
) -> float:
    """Probability that ``{u, v}`` links at ``t``, using only links before ``t``.

    Pass ``rngs=(rng_u, rng_v)`` to control the two walk sets separately;
    otherwise both are drawn from ``rng`` (default keyed by ``sampler.seed``).
    """
    if rngs is None:
        rng = rng if rng is not None else make_rng(sampler.seed)
        rngs = (rng, rng)
    batch = query_batch(store, query, sampler, rngs, config.d_attr)
    logit = forward(batch, params, config).values[0]
    return float(nn._sigmoid(np.array([logit]))[0])
