"""Command line: ``cawn {stats,sample,train,motifs,bench}``.

Every file written starts with a ``# config: {...}`` line holding the fully
resolved run configuration. Exit codes: 0 ok, 1 internal failure, 2 bad input.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
import time
from collections import defaultdict
from dataclasses import asdict
from pathlib import Path
from typing import Optional

import numpy as np

from . import encoder as enc
from . import nn
from .anonymize import anonymize_aw, anonymize_walks, format_shape, position_counts, walk_shape
from .data import (
    DataFormatError,
    EventStream,
    describe,
    gen_pairwise,
    gen_poisson,
    gen_triadic,
    load_edge_list,
    load_jodie_csv,
    load_manifest,
    save_manifest,
)
from .evaluation import (
    Split,
    TrainConfig,
    TrainingError,
    chronological_split,
    evaluate,
    inductive_mask,
    sample_negatives,
    train,
)
from .sampler import PAD, SamplerConfig, SamplerCounter, make_rng, sample_neighbor, sample_walks, tree_calls
from .temporal_graph import TemporalStore, build_store

log = logging.getLogger("cawn")

# Grid-search ranges for the walk sampler per dataset; the middle value is the default.
PRESETS = {
    "reddit": {"M": (32, 64, 128), "alpha": (0.25e-5, 0.5e-5, 1.0e-5, 2.0e-5, 4.0e-5), "m": (1, 2, 3, 4)},
    "wikipedia": {"M": (32, 64, 128), "alpha": (0.25e-6, 0.5e-6, 1.0e-6, 2.0e-6, 4.0e-6), "m": (2, 3, 4)},
    "mooc": {"M": (32, 64, 128), "alpha": (0.25e-6, 0.5e-6, 1.0e-6, 2.0e-6, 4.0e-6), "m": (2, 3, 4, 5)},
    "socialevo": {"M": (32, 64, 128), "alpha": (0.25e-6, 0.5e-6, 1.0e-6, 2.0e-6, 4.0e-6, 8.0e-6), "m": (1, 2, 3)},
    "enron": {"M": (32, 64, 128), "alpha": (0.25e-7, 0.5e-7, 1.0e-7, 2.0e-7, 4.0e-7), "m": (1, 2, 3, 4)},
    "uci": {"M": (32, 64, 128), "alpha": (0.6e-5, 0.8e-5, 1.0e-5, 1.2e-5, 1.4e-5), "m": (1, 2, 3)},
}


def preset_defaults(name: str) -> dict:
    grid = PRESETS[name]
    return {k: v[len(v) // 2] for k, v in grid.items()}


class InputError(Exception):
    """Bad user input; maps to exit code 2."""


def _parse_kv(text: Optional[str]) -> dict:
    out = {}
    if not text:
        return out
    for part in text.split(","):
        if not part:
            continue
        if "=" not in part:
            raise InputError(f"expected key=value in {text!r}")
        k, v = part.split("=", 1)
        out[k.strip()] = float(v) if any(c in v for c in ".eE") else int(v)
    return out


def load_dataset(dataset: Optional[str], fmt: str, seed: int = 0) -> EventStream:
    if fmt.startswith("synthetic:"):
        kind = fmt.split(":", 1)[1]
        kw = _parse_kv(dataset)
        gens = {"pairwise": gen_pairwise, "triadic": gen_triadic}
        kw.setdefault("seed", seed)
        try:
            if kind in gens:
                return gens[kind](**kw)
            if kind == "poisson":
                n, tau, T = int(kw.pop("n_nodes", 100)), float(kw.pop("tau", 0.01)), float(kw.pop("T", 1e4))
                return gen_poisson(n, tau, T, **kw)
        except (TypeError, ValueError) as exc:
            raise InputError(f"bad parameters for synthetic:{kind}: {exc}") from None
        raise InputError(f"unknown synthetic generator {kind!r}")
    if dataset is None:
        raise InputError("--dataset is required")
    path = Path(dataset)
    if not path.exists():
        raise InputError(f"dataset file not found: {path}")
    if fmt in ("jodie", "jodie-csv"):
        return load_jodie_csv(path)
    if fmt in ("edges", "edge-list"):
        return load_edge_list(path)
    raise InputError(f"unknown format {fmt!r}")


def _tree(text: Optional[str]) -> Optional[tuple[int, ...]]:
    if not text:
        return None
    try:
        return tuple(int(k) for k in text.split(","))
    except ValueError:
        raise InputError(f"--tree expects comma-separated integers, got {text!r}") from None


def sampler_from(args) -> SamplerConfig:
    defaults = preset_defaults(args.preset) if getattr(args, "preset", None) else {"M": 32, "m": 2, "alpha": 0.0}
    M = args.M if args.M is not None else defaults["M"]
    m = args.m if args.m is not None else defaults["m"]
    alpha = args.alpha if args.alpha is not None else defaults["alpha"]
    tree = _tree(args.tree)
    if tree is not None:
        m = len(tree)
        M = int(np.prod(tree))
    try:
        return SamplerConfig(M=M, m=m, alpha=alpha, branching=tree, seed=args.seed)
    except ValueError as exc:
        raise InputError(str(exc)) from None


def _header(config: dict) -> str:
    return "# config: " + json.dumps(config, sort_keys=True, default=str) + "\n"


def _write_tsv(path: Path, config: dict, columns: list[str], rows: list) -> None:
    with open(path, "w") as fh:
        fh.write(_header(config))
        fh.write("\t".join(columns) + "\n")
        for row in rows:
            fh.write("\t".join(_fmt(x) for x in row) + "\n")


def _fmt(x) -> str:
    if x is None:
        return "NA"
    if isinstance(x, float):
        return repr(x)
    return str(x)


# commands


def cmd_stats(args) -> int:
    stream = load_dataset(args.dataset, args.format, args.seed)
    info = describe(stream)
    for k, v in info.items():
        print(f"{k}\t{_fmt(v)}")
    return 0


def cmd_sample(args) -> int:
    stream = load_dataset(args.dataset, args.format, args.seed)
    sampler = sampler_from(args)
    store = build_store(stream, sampler.alpha)
    t = args.time if args.time is not None else (float(stream.t[-1]) + 1.0 if len(stream) else 0.0)
    counter = SamplerCounter()
    S_u = sample_walks(store, args.node, t, sampler, make_rng(args.seed, 0), counter)
    S_v = sample_walks(store, args.other, t, sampler, make_rng(args.seed, 1), counter) if args.other is not None else []
    config = {"command": "sample", "node": args.node, "other": args.other, "t": t, "sampler": asdict(sampler)}
    out = open(args.out, "w") if args.out else sys.stdout
    try:
        out.write(_header(config))
        out.write(f"# sampler_calls\t{counter.calls}\n")
        c_u = position_counts(S_u, sampler.m)
        c_v = position_counts(S_v, sampler.m) if S_v else {}
        anon = anonymize_walks(S_u, S_v)
        out.write("set\tindex\twalk\ttimes\tanonymized\tshape\n")
        rows = [("u", i, w) for i, w in enumerate(S_u)] + [("v", i, w) for i, w in enumerate(S_v)]
        for (side, i, w), a in zip(rows, anon):
            nodes = " ".join("PAD" if x is PAD else str(x) for x in w.nodes)
            times = " ".join(repr(float(x)) for x in w.times)
            ids = " ".join("{" + ",".join(str(list(g)) for g in ident.pair) + "}" for ident in a.identities)
            out.write(f"{side}\t{i}\t{nodes}\t{times}\t{ids}\t{format_shape(walk_shape(w, c_u, c_v))}\n")
    finally:
        if out is not sys.stdout:
            out.close()
    return 0


def _encoder_from(args, stream: EventStream, sampler: SamplerConfig) -> enc.EncoderConfig:
    return enc.EncoderConfig(
        m=sampler.m,
        d_count=args.dim,
        d_time=args.dim,
        d_walk=args.dim,
        d_attr=stream.attr_dim,
        agg=args.agg,
        dropout=args.dropout,
        identity=args.identity,
    )


def _split_for(args, stream: EventStream) -> Split:
    split = chronological_split(stream)
    if args.mode == "ind":
        split = inductive_mask(stream, split, args.mask_fraction, args.seed)
    return split


def cmd_train(args) -> int:
    stream = load_dataset(args.dataset, args.format, args.seed)
    sampler = sampler_from(args)
    enc_cfg = _encoder_from(args, stream, sampler)
    tcfg = TrainConfig(batch_size=args.batch_size, lr=args.lr, max_epochs=args.epochs, patience=args.patience, seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    split = _split_for(args, stream)
    config = {
        "command": "train",
        "dataset": args.dataset,
        "format": args.format,
        "mode": args.mode,
        "sampler": asdict(sampler),
        "encoder": enc_cfg.to_dict(),
        "train": asdict(tcfg),
    }
    save_manifest(out / "split.tsv", split.ranges(), split.masked, config)
    rows = []

    def on_epoch(rec):
        rows.append((rec.epoch, rec.train_loss, rec.val_auc, rec.val_ap))
        log.info("epoch %d loss %.4f val_auc %s", rec.epoch, rec.train_loss, rec.val_auc)

    result = train(stream, split, enc_cfg, sampler, tcfg, on_epoch=on_epoch)
    _write_tsv(out / "history.tsv", config, ["epoch", "train_loss", "val_auc", "val_ap"], rows)
    header = dict(config, best_epoch=result.best_epoch, restored_epoch=result.restored_epoch)
    nn.save_checkpoint(out / "checkpoint.npz", result.params, header)
    report = evaluate(stream, split, result.params, enc_cfg, sampler)
    metric_rows = [(cls, m["auc"], m["ap"], m["n"]) for cls, m in report.items()]
    _write_tsv(out / "metrics.tsv", config, ["class", "auc", "ap", "n"], metric_rows)
    for row in metric_rows:
        print("\t".join(_fmt(x) for x in row))
    return 0


def _shape_key(shape) -> str:
    return format_shape(shape)


def cmd_motifs(args) -> int:
    ckpt = Path(args.checkpoint)
    if not ckpt.exists():
        raise InputError(f"checkpoint not found: {ckpt}")
    header, arrays = nn.load_checkpoint(ckpt)
    enc_cfg = enc.EncoderConfig(**header["encoder"])
    if enc_cfg.agg != "mean":
        raise InputError(
            "motif scoring needs a mean-pooling checkpoint: only then does each walk contribute "
            "an additive term to the query logit (attention pooling mixes walks)"
        )
    params = nn.parameters_from(arrays)
    sampler = SamplerConfig(**{k: v for k, v in header["sampler"].items() if k != "branching"},
                            branching=header["sampler"].get("branching"))
    stream = load_dataset(args.dataset or header.get("dataset"), args.format or header["format"], sampler.seed)
    if args.split:
        ranges, _ = load_manifest(args.split)
        a, b = ranges["test"]
        events = np.arange(a, b)
    else:
        events = chronological_split(stream).test
    events = events[stream.is_query()[events]]
    if args.limit:
        events = events[: args.limit]
    store = build_store(stream, sampler.alpha)
    negs = sample_negatives(stream.src[events], stream.dst[events], stream.nodes(), np.random.default_rng(args.seed))
    scores: dict[str, list] = defaultdict(list)
    occ = {1: defaultdict(int), 0: defaultdict(int)}
    totals = {1: 0, 0: 0}
    for k, e in enumerate(events.tolist()):
        u, t = int(stream.src[e]), float(stream.t[e])
        for label, v in ((1, int(stream.dst[e])), (0, int(negs[k]))):
            S_u = sample_walks(store, u, t, sampler, make_rng(sampler.seed, 9, e, 0))
            S_v = sample_walks(store, v, t, sampler, make_rng(sampler.seed, 9, e, 1 + label))
            walks = S_u + S_v
            batch, order = enc.encode_pair(S_u, S_v, enc_cfg.d_attr, return_order=True)
            logits = enc.walk_logits(batch, params, enc_cfg)[0]
            if args.aw:
                shapes = [" -> ".join(map(str, _aw_shape(w))) for w in walks]
            else:
                c_u, c_v = position_counts(S_u, sampler.m), position_counts(S_v, sampler.m)
                shapes = [_shape_key(walk_shape(w, c_u, c_v)) for w in walks]
            for row, src_idx in enumerate(order):
                key = shapes[src_idx]
                scores[key].append(float(logits[row]))
                occ[label][key] += 1
                totals[label] += 1
    table = []
    for key, vals in scores.items():
        table.append(
            (
                key,
                float(np.mean(vals)),
                occ[1][key] / totals[1] if totals[1] else 0.0,
                occ[0][key] / totals[0] if totals[0] else 0.0,
                len(vals),
            )
        )
    table.sort(key=lambda r: (-r[1], r[0]))
    config = {**header, "command": "motifs", "checkpoint": str(ckpt), "aw": bool(args.aw), "n_queries": len(events)}
    cols = ["shape", "mean_logit", "ratio_pos", "ratio_neg", "count"]
    if args.out:
        _write_tsv(Path(args.out), config, cols, table)
    else:
        sys.stdout.write(_header(config))
        print("\t".join(cols))
        for row in table:
            print("\t".join(_fmt(x) for x in row))
    return 0


def _aw_shape(walk) -> tuple:
    labels = anonymize_aw(walk.nodes)
    if walk.truncated_at is not None:
        labels = labels[: walk.truncated_at] + ("-",) * (len(labels) - walk.truncated_at)
    return labels


def linear_fit(x, y) -> tuple[float, float, float]:
    """Least-squares ``y = a x + b``; returns ``(a, b, r2)``."""
    x, y = np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)
    a, b = np.polyfit(x, y, 1)
    resid = y - (a * x + b)
    ss_tot = np.sum((y - y.mean()) ** 2)
    r2 = 1.0 - np.sum(resid**2) / ss_tot if ss_tot > 0 else 1.0
    return float(a), float(b), float(r2)


def bench_iterations(tau: float, alpha: float, n_nodes: int, T: float, calls: int, seed: int) -> dict:
    """Mean acceptance-loop length of neighbour draws at the end of a Poisson stream."""
    stream = gen_poisson(n_nodes, tau, T, seed)
    store = build_store(stream, alpha)
    rng = make_rng(seed, 1)
    pick = np.random.default_rng(seed).integers(0, n_nodes, size=calls)
    counter = SamplerCounter()
    hist_sizes = 0
    t_query = T
    for w in pick.tolist():
        hist = store.history(w)
        if hist is None:
            continue
        hist_sizes += hist.count_before(t_query)
        sample_neighbor(store, w, t_query, alpha, rng, counter)
    mean_hist = hist_sizes / max(counter.calls, 1)
    bound = 2 * tau / alpha + 1 if alpha > 0 else math.inf
    return {
        "tau": tau,
        "alpha": alpha,
        "calls": counter.calls,
        "mean_iterations": counter.mean_iterations,
        "bound": min(bound, mean_hist),
        "bound_2tau_alpha": bound,
        "mean_history": mean_hist,
    }


def bench_runtime(stream: EventStream, sampler: SamplerConfig, checkpoints: int = 50) -> dict:
    """Accumulated walk-sampling time while replaying a stream event by event."""
    store = TemporalStore(sampler.alpha)
    n = len(stream)
    marks = set(np.linspace(0, n, checkpoints + 1, dtype=int)[1:].tolist())
    xs, ys = [], []
    elapsed = 0.0
    src, dst, ts = stream.src.tolist(), stream.dst.tolist(), stream.t.tolist()
    for i in range(n):
        u, v, t = src[i], dst[i], ts[i]
        tick = time.perf_counter()
        sample_walks(store, u, t, sampler, make_rng(sampler.seed, i, 0))
        sample_walks(store, v, t, sampler, make_rng(sampler.seed, i, 1))
        elapsed += time.perf_counter() - tick
        store.record_event(u, v, t)
        if i + 1 in marks:
            xs.append(i + 1)
            ys.append(elapsed)
    a, b, r2 = linear_fit(xs, ys)
    return {"events": xs, "seconds": ys, "slope": a, "intercept": b, "r2": r2}


def cmd_bench(args) -> int:
    alpha = args.tau / args.ratio
    it = bench_iterations(args.tau, alpha, args.n_nodes, args.T, args.calls, args.seed)
    n_events = args.events
    T_rt = 2.0 * n_events / (args.tau * args.n_nodes)
    stream = gen_poisson(args.n_nodes, args.tau, T_rt, args.seed)
    sampler = SamplerConfig(M=args.M or 4, m=args.m or 2, alpha=alpha, seed=args.seed)
    rt = bench_runtime(stream, sampler)
    config = {"command": "bench", "tau": args.tau, "ratio": args.ratio, "n_nodes": args.n_nodes, "T": args.T,
              "calls": args.calls, "sampler": asdict(sampler), "events": len(stream)}
    out = open(args.out, "w") if args.out else sys.stdout
    try:
        out.write(_header(config))
        for k, v in it.items():
            out.write(f"iterations.{k}\t{_fmt(v)}\n")
        out.write(f"runtime.slope\t{_fmt(rt['slope'])}\nruntime.intercept\t{_fmt(rt['intercept'])}\n")
        out.write(f"runtime.r2\t{_fmt(rt['r2'])}\n")
        out.write("events\tseconds\n")
        for x, y in zip(rt["events"], rt["seconds"]):
            out.write(f"{x}\t{y!r}\n")
        if args.tree:
            tree = _tree(args.tree)
            out.write(f"tree.calls\t{tree_calls(tree)}\n")
    finally:
        if out is not sys.stdout:
            out.close()
    return 0


def _sampler_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--M", type=int, default=None, help="walks per endpoint")
    p.add_argument("--m", type=int, default=None, help="walk length")
    p.add_argument("--alpha", type=float, default=None, help="time decay (1/s)")
    p.add_argument("--tree", default=None, help="tree branching k1,k2,... (product must be M)")
    p.add_argument("--preset", choices=sorted(PRESETS), default=None, help="dataset defaults for M, m, alpha")


def _data_args(p: argparse.ArgumentParser, required: bool = True) -> None:
    p.add_argument("--dataset", default=None, help="file path, or key=value params for synthetic formats")
    p.add_argument(
        "--format",
        default="edges" if required else None,
        help="jodie | edges | synthetic:pairwise | synthetic:triadic | synthetic:poisson",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cawn", description=__doc__.splitlines()[0])
    parser.add_argument("--verbose", "-v", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("stats", help="dataset statistics")
    _data_args(p)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("sample", help="dump walks, anonymized walks and shapes")
    _data_args(p)
    _sampler_args(p)
    p.add_argument("--node", type=int, required=True)
    p.add_argument("--other", type=int, default=None, help="second endpoint, for relative identities")
    p.add_argument("--time", type=float, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("train", help="train and evaluate a link predictor")
    _data_args(p)
    _sampler_args(p)
    p.add_argument("--agg", choices=("mean", "attn"), default="mean")
    p.add_argument("--mode", choices=("trans", "ind"), default="trans")
    p.add_argument("--identity", choices=("caw", "aw", "none"), default="caw")
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--dropout", type=float, default=0.1)
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--patience", type=int, default=3)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--mask-fraction", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("motifs", help="per-shape walk scores from a mean-pooling checkpoint")
    p.add_argument("--checkpoint", required=True)
    _data_args(p, required=False)
    p.add_argument("--split", default=None, help="split manifest written by train")
    p.add_argument("--aw", action="store_true", help="group walks by anonymous-walk shape")
    p.add_argument("--limit", type=int, default=0, help="use at most this many test events")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_motifs)

    p = sub.add_parser("bench", help="acceptance-loop iterations and sampling runtime")
    p.add_argument("--tau", type=float, default=0.01)
    p.add_argument("--ratio", type=float, default=5.0, help="tau / alpha")
    p.add_argument("--n-nodes", type=int, default=100)
    p.add_argument("--T", type=float, default=1e5)
    p.add_argument("--calls", type=int, default=100_000)
    p.add_argument("--events", type=int, default=100_000)
    p.add_argument("--M", type=int, default=None)
    p.add_argument("--m", type=int, default=None)
    p.add_argument("--tree", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    stage = args.command
    try:
        return args.func(args)
    except (InputError, DataFormatError, FileNotFoundError) as exc:
        print(f"cawn {stage}: {exc}", file=sys.stderr)
        return 2
    except TrainingError as exc:
        print(f"cawn {stage}: training failed: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001
        print(f"cawn {stage}: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
