"""Command line: primes, ap, sums, split, train, search, eval, regions, plotdata, weights.

Exit status is 0 on success, 2 for bad input or configuration, 3 for
runtime failures.  Every subcommand accepts ``--config FILE`` (JSON or
``key = value`` lines, keys named like the long flags); flags on the
command line win over the file.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import pipeline as P
from .dataset import (
    SplitSpec, bundled, load_catalog, read_ap_cache, read_split_manifest, split_indices, write_ap_cache,
    write_split_manifest,
)
from .errors import (
    ArgumentError, BoundError, CheckpointError, ConfigurationError, FormatError, InputError, MinimalityError,
    MnrankError, ParseError, ShapeError, ValidationError,
)
from .metrics import confusion, mcc, report
from .models import LearnedSum, LearnedSumConfig, SumMlp, SumMlpConfig, hyperparameter_search, load_model
from .models import predict, save_model, weights_report
from .primes import sieve_primes
from .regions import (
    SumPointCloud, fit, fit_axis_thresholds, load_rules, region_grid, save_rules,
    write_cloud_csv, write_grid_csv,
)
from .sums import read_features_csv, write_features_csv

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3
_CONFIG_ERRORS = (
    ArgumentError, BoundError, CheckpointError, ConfigurationError, FormatError, InputError, MinimalityError,
    ParseError, ShapeError, ValidationError, FileNotFoundError, KeyError,
)
DATA_ENV = "MNRANK_DATA_DIR"
BUNDLED = {"sample": "curves_sample.csv", "desk": "curves_desk.csv"}


def _log(msg):
    print(msg, file=sys.stderr, flush=True)


def resolve_input(path) -> Path:
    """Bundled names ('sample', 'desk'), then the path itself, then $MNRANK_DATA_DIR/path."""
    if path in BUNDLED:
        return bundled(BUNDLED[path])
    p = Path(path)
    if not p.exists() and not p.is_absolute() and os.environ.get(DATA_ENV):
        alt = Path(os.environ[DATA_ENV]) / p
        if alt.exists():
            return alt
    if not p.exists():
        raise FileNotFoundError(f"no such file: {path}")
    return p


def _classes(text):
    return tuple(P.parse_int_list(text))


# ------------------------------------------------------------ commands


def cmd_primes(a):
    t = sieve_primes(a.limit)
    print(f"pi({a.limit - 1}) = {len(t)}")
    return EXIT_OK


def cmd_ap(a):
    cat = load_catalog(resolve_input(a.curves), classes=_classes(a.classes))
    t0 = time.perf_counter()
    M = P.compute_ap(cat, a.limit, jobs=a.jobs)
    dt = time.perf_counter() - t0
    write_ap_cache(a.out, M, a.limit)
    _log(f"ap: {len(cat)} curves, {M.shape[1]} primes in {dt:.2f} s ({len(cat) / max(dt, 1e-9):.1f} curves/s)")
    return EXIT_OK


def cmd_sums(a):
    cat = load_catalog(resolve_input(a.curves), classes=_classes(a.classes))
    cache = read_ap_cache(resolve_input(a.cache), catalog=cat)
    bounds = P.parse_int_list(a.bounds)
    t0 = time.perf_counter()
    tab = P.feature_table(cat, cache.values, cache.prime_limit, bounds)
    k = len(bounds)
    write_features_csv(a.out, tab.labels, tab.values[:, 0], tab.ranks, tab.values[:, 1 : 1 + k],
                       tab.values[:, 1 + k :], bounds)
    _log(f"sums: {len(cat)} curves in {time.perf_counter() - t0:.2f} s")
    return EXIT_OK


def _split_spec(a):
    if a.mode == "uniform":
        fr = tuple(float(v) for v in str(a.fractions).split(","))
        return SplitSpec("uniform", fractions=fr, seed=a.seed)
    train_max = P.parse_number(a.train_max)
    test_min = P.parse_number(a.test_min) if a.test_min is not None else train_max
    test_max = P.parse_number(a.test_max)
    return SplitSpec("top_range", train_range=(0, train_max), test_range=(test_min, test_max),
                     val_fraction=a.val_fraction, seed=a.seed)


def _conductors(a):
    if getattr(a, "features", None):
        tab = read_features_csv(resolve_input(a.features))
        return np.rint(10.0 ** tab.values[:, 0]).astype(np.int64), str(a.features)
    cat = load_catalog(resolve_input(a.curves), classes=_classes(a.classes))
    return cat.conductors, str(a.curves)


def _parts(a, n_rows, conductors):
    if a.split:
        parts, _ = read_split_manifest(resolve_input(a.split))
        if any(len(p) and p.max() >= n_rows for p in parts):
            raise ValidationError("split manifest refers to rows beyond the data")
        return parts
    return split_indices(conductors, _split_spec(a))


def cmd_split(a):
    N, src = _conductors(a)
    spec = _split_spec(a)
    parts = split_indices(N, spec)
    write_split_manifest(a.out, spec, parts, source=Path(src).name)
    print(" ".join(f"{k}={len(p)}" for k, p in zip(("train", "validation", "test"), parts)))
    return EXIT_OK


def _mlp_config(a, columns):
    return SumMlpConfig(columns=tuple(columns), hidden_layers=a.layers, hidden_width=a.width,
                        classes=_classes(a.classes), lr=a.lr, weight_decay=a.weight_decay,
                        batch_size=a.batch_size, epochs=a.epochs, seed=a.seed)


def _ls_config(a, prime_limit):
    return LearnedSumConfig(conductor_dependent=a.conductor_dependent, prime_limit=prime_limit,
                            channels=a.channels, head_width=a.head_width, classes=_classes(a.classes),
                            lr=a.max_lr, weight_decay=a.weight_decay, batch_size=a.batch_size,
                            epochs=a.epochs, chunk=a.chunk, seed=a.seed)


def cmd_train(a):
    t0 = time.perf_counter()
    if a.model == "sum-mlp":
        tab = read_features_csv(resolve_input(a.features))
        N = np.rint(10.0 ** tab.values[:, 0]).astype(np.int64)
        parts = _parts(a, len(tab), N)
        cols = P.input_columns(a.inputs.split(","), P.parse_int_list(a.bounds))
        model, res, scores = P.run_sum_mlp(tab, parts, cols, _mlp_config(a, cols), a.log)
    else:
        cat = load_catalog(resolve_input(a.curves), classes=_classes(a.catalog_classes))
        cache = read_ap_cache(resolve_input(a.cache), catalog=cat)
        parts = _parts(a, len(cat), cat.conductors)
        model, res, scores = P.run_learned_sum(cache, cat, parts, _ls_config(a, cache.prime_limit), a.log)
    save_model(model, a.out)
    _log(f"train: {len(res.log)} epochs in {time.perf_counter() - t0:.1f} s, best epoch {res.best_epoch}")
    for k in sorted(scores):
        print(f"{k} MCC = {scores[k]:.6f}")
    return EXIT_OK


def cmd_search(a):
    tab = read_features_csv(resolve_input(a.features))
    N = np.rint(10.0 ** tab.values[:, 0]).astype(np.int64)
    parts = _parts(a, len(tab), N)
    cols = P.input_columns(a.inputs.split(","), P.parse_int_list(a.bounds))
    base = _mlp_config(a, cols)
    tr, va, _ = (P.keep_classes(p, tab.ranks, base.classes) for p in parts)
    space = {"hidden_layers": P.parse_int_list(a.grid_layers), "hidden_width": P.parse_int_list(a.grid_widths),
             "lr": [float(v) for v in a.grid_lr.split(",")],
             "weight_decay": [float(v) for v in a.grid_weight_decay.split(",")]}
    best, trials = hyperparameter_search(space, P.sum_dataset(tab, tr, cols), P.sum_dataset(tab, va, cols),
                                         base, budget=a.budget)
    doc = {"best": {k: getattr(best, k) for k in sorted(space)}, "trials": trials}
    Path(a.out).write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n", encoding="utf-8")
    print(json.dumps(doc["best"], sort_keys=True))
    return EXIT_OK


def cmd_eval(a):
    model = load_model(resolve_input(a.checkpoint))
    classes = model.config.classes
    if isinstance(model, SumMlp):
        tab = read_features_csv(resolve_input(a.features))
        N = np.rint(10.0 ** tab.values[:, 0]).astype(np.int64)
        ranks = tab.ranks
        parts = _parts(a, len(tab), N) if (a.split or a.partition != "all") else None
        idx = _pick(parts, a.partition, len(tab))
        idx = P.keep_classes(idx, ranks, classes)
        try:
            X = tab.select(model.config.columns)[idx]
        except InputError as e:
            raise CheckpointError(str(e)) from None
        pred = predict(model, X)
    else:
        cat = load_catalog(resolve_input(a.curves), classes=_classes(a.catalog_classes))
        cache = read_ap_cache(resolve_input(a.cache), catalog=cat)
        ranks = cat.ranks
        parts = _parts(a, len(cat), cat.conductors) if (a.split or a.partition != "all") else None
        idx = P.keep_classes(_pick(parts, a.partition, len(cat)), ranks, classes)
        d = P.trace_dataset(cache, cat, idx)
        pred = predict(model, d.inputs)
    cm = confusion(ranks[idx], pred, classes)
    value = mcc(cm)
    meta = {"partition": a.partition, "curves": len(idx), "model": model.kind}
    _, text = report(cm, value, meta, a.out)
    print(text, end="")
    return EXIT_OK


def _pick(parts, partition, n):
    if partition == "all":
        return np.arange(n)
    return parts[("train", "validation", "test").index(partition)]


def _cloud(a):
    tab = read_features_csv(resolve_input(a.features))
    idx = P.conductor_window(tab, P.parse_number(a.conductor_min) if a.conductor_min is not None else None,
                             P.parse_number(a.conductor_max) if a.conductor_max is not None else None)
    classes = _classes(a.classes)
    idx = P.keep_classes(idx, tab.ranks, classes)
    if len(idx) == 0:
        raise ConfigurationError("no curves in the conductor window")
    xy = tab.select([a.x, a.y])[idx]
    cloud = SumPointCloud(xy[:, 0], xy[:, 1], tab.ranks[idx], (a.conductor_min, a.conductor_max),
                          [tab.labels[i] for i in idx])
    return tab, idx, cloud, classes


def cmd_regions(a):
    _, _, cloud, _ = _cloud(a)
    present = tuple(sorted(set(cloud.ranks.tolist())))
    rules, value = fit(cloud, present, restarts=a.restarts, seed=a.seed)
    _, y_mcc, _ = fit_axis_thresholds(cloud, present, seed=a.seed)
    save_rules(a.out, rules, {"mcc": value, "y_only_mcc": y_mcc, "curves": len(cloud), "x": a.x, "y": a.y})
    print(f"rectangles MCC = {value:.6f}\ny-only MCC = {y_mcc:.6f}\ncurves = {len(cloud)}")
    return EXIT_OK


PALETTE = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b")


def scatter_svg(cloud: SumPointCloud, grid=None, width=640, height=480, x_label="x", y_label="y") -> str:
    """Dependency-free SVG: one circle per point colored by rank, optional region background."""
    m = 50
    xs = [cloud.x.min(), cloud.x.max()]
    ys = [cloud.y.min(), cloud.y.max()]
    if grid is not None:
        xs = [min(xs[0], grid[0][0]), max(xs[1], grid[0][-1])]
        ys = [min(ys[0], grid[1][0]), max(ys[1], grid[1][-1])]
    dx = (xs[1] - xs[0]) or 1.0
    dy = (ys[1] - ys[0]) or 1.0
    X = lambda v: m + (v - xs[0]) / dx * (width - 2 * m)
    Y = lambda v: height - m - (v - ys[0]) / dy * (height - 2 * m)
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}">', f'<rect width="{width}" height="{height}" fill="white"/>']
    if grid is not None:
        gx, gy, lab = grid
        cw = (width - 2 * m) / len(gx)
        ch = (height - 2 * m) / len(gy)
        for j, yv in enumerate(gy):
            for i, xv in enumerate(gx):
                c = PALETTE[int(lab[j, i]) % len(PALETTE)]
                out.append(f'<rect x="{X(xv) - cw / 2:.2f}" y="{Y(yv) - ch / 2:.2f}" width="{cw:.2f}" '
                           f'height="{ch:.2f}" fill="{c}" fill-opacity="0.15"/>')
    for xv, yv, r in zip(cloud.x, cloud.y, cloud.ranks):
        out.append(f'<circle cx="{X(xv):.2f}" cy="{Y(yv):.2f}" r="2" fill="{PALETTE[int(r) % len(PALETTE)]}"/>')
    out.append(f'<rect x="{m}" y="{m}" width="{width - 2 * m}" height="{height - 2 * m}" fill="none" stroke="black"/>')
    out.append(f'<text x="{width / 2}" y="{height - 12}" text-anchor="middle" font-size="13">{x_label}</text>')
    out.append(f'<text x="14" y="{height / 2}" text-anchor="middle" font-size="13" '
               f'transform="rotate(-90 14 {height / 2})">{y_label}</text>')
    for k, r in enumerate(sorted(set(cloud.ranks.tolist()))):
        out.append(f'<circle cx="{width - m + 10}" cy="{m + 14 * k}" r="4" fill="{PALETTE[r % len(PALETTE)]}"/>')
        out.append(f'<text x="{width - m + 18}" y="{m + 14 * k + 4}" font-size="11">{r}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def cmd_plotdata(a):
    tab, idx, cloud, _ = _cloud(a)
    out = Path(a.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_cloud_csv(out / "scatter.csv", cloud)
    grid = None
    pad_x = 0.05 * (cloud.x.max() - cloud.x.min() or 1.0)
    pad_y = 0.05 * (cloud.y.max() - cloud.y.min() or 1.0)
    xr = (cloud.x.min() - pad_x, cloud.x.max() + pad_x)
    yr = (cloud.y.min() - pad_y, cloud.y.max() + pad_y)
    if a.rules:
        grid = region_grid(load_rules(resolve_input(a.rules)), xr, yr, a.resolution)
        write_grid_csv(out / "grid_rectangles.csv", *grid)
    if a.checkpoint:
        model = load_model(resolve_input(a.checkpoint))
        lg = a.log10n if a.log10n is not None else float(np.median(tab.values[idx, 0]))
        g2 = region_grid(model, xr, yr, a.resolution, log10N=lg, x_col=a.x, y_col=a.y)
        write_grid_csv(out / "grid_network.csv", *g2)
        grid = grid or g2
    (out / "scatter.svg").write_text(scatter_svg(cloud, grid, x_label=a.x, y_label=a.y), encoding="utf-8")
    print(f"plotdata: {len(cloud)} points written to {out}")
    return EXIT_OK


def cmd_weights(a):
    model = load_model(resolve_input(a.checkpoint))
    if not isinstance(model, LearnedSum):
        raise CheckpointError("weights report needs a learned-sum checkpoint")
    W = weights_report(model, a.out, P.parse_int_list(a.decades))
    print(f"weights: {W.shape[0]} decades x {W.shape[1]} primes")
    return EXIT_OK


# -------------------------------------------------------------- parser


def _add_split_flags(p):
    p.add_argument("--split", help="split manifest JSON (otherwise built from the flags below)")
    p.add_argument("--mode", choices=("uniform", "top-range"), default="uniform")
    p.add_argument("--fractions", default="0.6,0.2,0.2")
    p.add_argument("--train-max", default="1e8", help="top-range: training conductors N <= this")
    p.add_argument("--test-min", default=None, help="top-range: test conductors N > this (default train-max)")
    p.add_argument("--test-max", default="1e9")
    p.add_argument("--val-fraction", type=float, default=0.2)


def _add_model_flags(p):
    p.add_argument("--inputs", default="s0,s5", help="sum kinds fed to the MLP")
    p.add_argument("--bounds", default="1000,100000", help="bounds fed to the MLP, or 'all'")
    p.add_argument("--layers", type=int, default=4)
    p.add_argument("--width", type=int, default=128)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--max-lr", type=float, default=1e-4, help="learned-sum one-cycle peak")
    p.add_argument("--weight-decay", type=float, default=0.01)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--classes", default=None)
    p.add_argument("--catalog-classes", default="0-5")
    p.add_argument("--conductor-dependent", action="store_true")
    p.add_argument("--channels", type=int, default=128)
    p.add_argument("--head-width", type=int, default=128)
    p.add_argument("--chunk", type=int, default=4)


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON or key=value file of flag defaults")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--jobs", type=int, default=1)

    ap = argparse.ArgumentParser(prog="mnrank", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    subs = {}

    def add(name, fn, help_):
        p = sub.add_parser(name, parents=[common], help=help_)
        p.set_defaults(func=fn)
        subs[name] = p
        return p

    p = add("primes", cmd_primes, "sieve and report the prime count")
    p.add_argument("--limit", type=int, default=100000)

    p = add("ap", cmd_ap, "Frobenius traces for every curve -> APV1 cache")
    p.add_argument("curves")
    p.add_argument("--limit", type=int, default=100000)
    p.add_argument("--out", required=True)
    p.add_argument("--classes", default="0-5")

    p = add("sums", cmd_sums, "S0/S5 features CSV from a cache")
    p.add_argument("--cache", required=True)
    p.add_argument("--curves", required=True)
    p.add_argument("--bounds", default="all")
    p.add_argument("--out", required=True)
    p.add_argument("--classes", default="0-5")

    p = add("split", cmd_split, "write a train/validation/test manifest")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--curves")
    src.add_argument("--features")
    p.add_argument("--classes", default="0-5")
    p.add_argument("--out", required=True)
    _add_split_flags(p)

    p = add("train", cmd_train, "train a classifier")
    p.add_argument("--model", choices=("sum-mlp", "learned-sum"), default="sum-mlp")
    p.add_argument("--features")
    p.add_argument("--cache")
    p.add_argument("--curves")
    p.add_argument("--out", required=True)
    p.add_argument("--log")
    _add_split_flags(p)
    _add_model_flags(p)

    p = add("search", cmd_search, "hyperparameter grid search for the sum MLP")
    p.add_argument("--features", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--grid-layers", default="3,4")
    p.add_argument("--grid-widths", default="64,128")
    p.add_argument("--grid-lr", default="0.001")
    p.add_argument("--grid-weight-decay", default="0.01")
    p.add_argument("--budget", type=int, default=None, help="cap on training rows per trial")
    _add_split_flags(p)
    _add_model_flags(p)

    p = add("eval", cmd_eval, "confusion matrix and MCC of a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--features")
    p.add_argument("--cache")
    p.add_argument("--curves")
    p.add_argument("--partition", choices=("train", "validation", "test", "all"), default="test")
    p.add_argument("--catalog-classes", default="0-5")
    p.add_argument("--out", default=None, help="prefix for .csv and .txt tables")
    _add_split_flags(p)

    for name, fn, help_ in (("regions", cmd_regions, "fit MCC-optimal rectangles in a sum plane"),
                            ("plotdata", cmd_plotdata, "scatter/grid CSVs and an SVG for one conductor window")):
        p = add(name, fn, help_)
        p.add_argument("--features", required=True)
        p.add_argument("--x", default="s0@1000")
        p.add_argument("--y", default="s0@100000")
        p.add_argument("--conductor-min", default=None)
        p.add_argument("--conductor-max", default=None)
        p.add_argument("--classes", default="0-5")
        if name == "regions":
            p.add_argument("--restarts", type=int, default=8)
            p.add_argument("--out", required=True)
        else:
            p.add_argument("--rules")
            p.add_argument("--checkpoint")
            p.add_argument("--log10n", type=float, default=None, help="log10 N for the network grid")
            p.add_argument("--resolution", type=int, default=100)
            p.add_argument("--out-dir", required=True)

    p = add("weights", cmd_weights, "emitted w_p per conductor decade")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--decades", default="1-9")
    p.add_argument("--out", required=True)
    return ap, subs


def load_config(path) -> dict:
    text = Path(path).read_text(encoding="utf-8")
    if text.lstrip().startswith("{"):
        try:
            return json.loads(text)
        except ValueError as e:
            raise ConfigurationError(f"{path}: {e}") from None
    out = {}
    for ln, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"{path}:{ln}: expected key = value")
        k, v = (s.strip() for s in line.split("=", 1))
        out[k] = v
    return out


def _apply_config(sub, command, path):
    cfg = load_config(resolve_input(path))
    dests = {a.dest: a for a in sub._actions}
    defaults = {}
    for k, v in cfg.items():
        d = k.lstrip("-").replace("-", "_")
        if d not in dests or d in ("config", "func", "help"):
            raise ConfigurationError(f"unknown config key {k!r} for '{command}'")
        act = dests[d]
        if isinstance(act, argparse._StoreTrueAction) and isinstance(v, str):
            v = v.lower() in ("1", "true", "yes", "on")
        elif act.type is not None and isinstance(v, str):
            v = act.type(v)
        defaults[d] = v
    sub.set_defaults(**defaults)
    for act in sub._actions:  # config may satisfy a required flag
        if act.dest in defaults:
            act.required = False
    for grp in sub._mutually_exclusive_groups:
        if any(act.dest in defaults for act in grp._group_actions):
            grp.required = False


def _config_path(argv):
    for i, tok in enumerate(argv):
        if tok == "--config" and i + 1 < len(argv):
            return argv[i + 1]
        if tok.startswith("--config="):
            return tok.split("=", 1)[1]
    return None


def _fill_model_defaults(a):
    if not hasattr(a, "model") and a.command != "search":
        return
    learned = getattr(a, "model", "sum-mlp") == "learned-sum"
    if getattr(a, "batch_size", 0) is None:
        a.batch_size = 256 if learned else 1024
    if getattr(a, "epochs", 0) is None:
        a.epochs = 5 if learned else 50
    if getattr(a, "classes", "") is None:
        a.classes = "0-5" if learned else "0-4"


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser, subs = build_parser()
    try:
        cfg = _config_path(argv)
        command = next((t for t in argv if t in subs), None)
        if cfg and command:
            _apply_config(subs[command], command, cfg)
        try:
            args = parser.parse_args(argv)
        except SystemExit as e:
            return int(e.code or 0)
        if getattr(args, "mode", None) == "top-range":
            args.mode = "top_range"
        _fill_model_defaults(args)
        return args.func(args)
    except _CONFIG_ERRORS as e:
        _log(f"error: {e}")
        return EXIT_CONFIG
    except (MnrankError, OSError, RuntimeError, FloatingPointError, ArithmeticError) as e:
        _log(f"error: {e}")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
