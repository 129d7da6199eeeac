"""Command-line entry point: ``herofilter <subcommand> [flags]``.

Exit codes: 0 success, 1 usage error, 2 runtime error. Settings merge as
built-in defaults < ``--config`` JSON file < explicit flags, and the
merged result is written to ``effective_config.json`` in every output
directory.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import sys
from pathlib import Path

import numpy as np

from .errors import HeroFilterError
from .graph import load_dataset, normalize_adjacency, save_dataset, save_edges
from .heterophily import (
    check_prop1,
    construct_aligning_weights,
    node_heterophily,
    spectral_heterophily,
    theorem_check,
)
from .patcher import load_patches, patch_induced_graph, save_patches
from .spectral import band_filter, eigendecompose, filter_response, low_pass_reference
from .synth import DEFAULT_BANDS, SynthSpec, frequency_response_export, heterophily_sweep, synth_graph, write_sweep_csv
from .training import TrainConfig, build_patcher, evaluate, train


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else None
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def _write_json(path, obj):
    Path(path).write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _load_config(path) -> dict:
    if path is None:
        return {}
    try:
        cfg = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(cfg, dict):
        raise UsageError(f"config {path} must hold a JSON object")
    return cfg


def _merge(defaults: dict, file_cfg: dict, flags: dict) -> dict:
    unknown = set(file_cfg) - set(defaults)
    if unknown:
        raise UsageError(f"unknown config keys: {sorted(unknown)}")
    out = dict(defaults)
    out.update(file_cfg)
    out.update({k: v for k, v in flags.items() if v is not None})
    return out


def _train_config(args, names) -> TrainConfig:
    defaults = TrainConfig().to_dict()
    flags = {k: getattr(args, k, None) for k in names}
    merged = _merge(defaults, _load_config(getattr(args, "config", None)), flags)
    try:
        return TrainConfig.from_dict(merged)
    except (HeroFilterError, TypeError) as exc:
        raise UsageError(f"invalid configuration: {exc}") from exc


def _outdir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _add_train_flags(sp, names):
    opts = {
        "lr": float, "weight_decay": float, "max_epochs": int, "patience": int, "hidden": int,
        "hidden_p": int, "hidden_f": int, "dropout": float, "layers": int, "p": int, "K": int,
        "mode": str, "refresh_interval": int, "aggregation": str, "activation": str,
        "filter": str, "filter_activation": str, "filter_init": float, "band_lo": float,
        "band_hi": float, "c": float, "neumann_K": int, "normalization": str, "eigensolver": str,
    }
    for name in names:
        if name == "seed":
            continue
        flag = "--" + name.replace("_", "-")
        sp.add_argument(flag, dest=name, type=opts[name], default=None)
    sp.add_argument("--residual", dest="residual", action="store_const", const=True, default=None)
    sp.add_argument("--shared-filter", dest="shared_filter", action="store_const", const=True, default=None)


_TRAIN_FLAGS = ["lr", "weight_decay", "max_epochs", "patience", "hidden", "hidden_p", "hidden_f",
                "dropout", "layers", "p", "K", "mode", "refresh_interval", "aggregation",
                "activation", "filter", "filter_activation", "filter_init", "band_lo", "band_hi",
                "c", "neumann_K", "normalization", "eigensolver"]
_TRAIN_MERGE = _TRAIN_FLAGS + ["seed", "residual", "shared_filter"]


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_synth(args) -> int:
    defaults = dataclasses.asdict(SynthSpec())
    flags = {"n": args.n, "num_classes": args.classes, "target_h": args.heterophily,
             "avg_degree": args.avg_degree, "feature_dim": args.feature_dim,
             "feature_noise": args.noise, "seed": args.seed}
    merged = _merge(defaults, _load_config(args.config), flags)
    spec = SynthSpec(**merged)
    g = synth_graph(spec)
    out = _outdir(args.out)
    save_dataset(g, out)
    _write_json(out / "effective_config.json", {"command": "synth", **merged})
    return 0


def cmd_analyze(args) -> int:
    g = load_dataset(args.data)
    h = node_heterophily(g)
    deg = np.bincount(g.edges.reshape(-1), minlength=g.num_nodes)
    result = {
        "num_nodes": g.num_nodes, "num_edges": g.num_edges, "num_classes": g.num_classes,
        "feature_dim": g.feature_dim, "mean_degree": float(deg.mean()),
        "isolated_nodes": int((deg == 0).sum()), "mean_h": float(h.mean()),
        "edge_heterophily": float(np.mean(g.labels[g.edges[:, 0]] != g.labels[g.edges[:, 1]]))
        if g.num_edges else 0.0,
    }
    dec = None
    if not args.no_spectral:
        dec = eigendecompose(normalize_adjacency(g, args.normalization), method=args.eigensolver)
        hh = spectral_heterophily(dec, h)
        lap = dec.laplacian_eigenvalues
        low = lap < 1.0
        energy = hh ** 2
        result.update({
            "eigensolver": dec.method, "jacobi_sweeps": dec.sweeps,
            "laplacian_eigenvalue_range": [float(lap.min()), float(lap.max())],
            "h_hat_norm": float(np.linalg.norm(hh)),
            "h_hat_low_frequency_energy": float(energy[low].sum() / max(energy.sum(), 1e-300)),
        })
    text = json.dumps(_jsonable(result), indent=2, sort_keys=True)
    print(text)
    if args.out:
        out = _outdir(args.out)
        (out / "analysis.json").write_text(text + "\n", encoding="utf-8")
        if dec is not None:
            _write_spectrum(dec, _fixed_filter(args, dec.eigenvalues), out / "spectrum.csv")
        _write_json(out / "effective_config.json", {"command": "analyze", "data": args.data,
                                                    "normalization": args.normalization,
                                                    "eigensolver": args.eigensolver,
                                                    "spectral": not args.no_spectral,
                                                    "filter": args.filter, "band_lo": args.band_lo,
                                                    "band_hi": args.band_hi})
    return 0


def _fixed_filter(args, lam):
    if args.filter == "lowpass":
        return low_pass_reference(lam)
    return band_filter(lam, args.band_lo, args.band_hi)


def _write_spectrum(dec, resp, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("index,lambda_adj,lambda_lap,filter_response\n")
        for i, (lam, lap, r) in enumerate(zip(dec.eigenvalues, dec.laplacian_eigenvalues, resp)):
            fh.write(f"{i},{lam:.17g},{lap:.17g},{r:.17g}\n")


def cmd_patch(args) -> int:
    cfg = _train_config(args, _TRAIN_MERGE)
    if cfg.mode == "static":
        cfg = dataclasses.replace(cfg, mode="spectral")
    g = load_dataset(args.data)
    state = build_patcher(g, cfg)
    out = _outdir(args.out)
    save_patches(state.patches, out / "patches.csv")
    if state.dec is not None:
        lam = state.dec.eigenvalues
        if state.filter is not None:
            resp = filter_response(state.filter, lam)
        elif cfg.filter == "lowpass":
            resp = low_pass_reference(lam)
        else:
            resp = band_filter(lam, cfg.band_lo, cfg.band_hi)
        frequency_response_export(resp, state.dec, out / "frequency_response.csv")
    _write_json(out / "effective_config.json", {"command": "patch", "data": args.data, **cfg.to_dict()})
    return 0


def cmd_export_induced(args) -> int:
    ps = load_patches(args.patches)
    edges = patch_induced_graph(ps)
    out = _outdir(args.out)
    if args.data:
        g = load_dataset(args.data)
        if g.num_nodes != ps.n:
            raise HeroFilterError(f"patches cover {ps.n} nodes, dataset has {g.num_nodes}")
        save_dataset(g.with_edges(edges), out)
    else:
        save_edges(edges, out / "edges.csv")
    _write_json(out / "effective_config.json", {"command": "export-induced", "patches": args.patches,
                                                "data": args.data})
    return 0


def _write_metrics(report, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("epoch,train_loss,val_loss,val_acc\n")
        for e, (tl, vl, va) in enumerate(zip(report.train_loss, report.val_loss, report.val_acc), 1):
            fh.write(f"{e},{tl:.17g},{vl:.17g},{va:.17g}\n")


def cmd_train(args) -> int:
    from .checkpoint import save_checkpoint

    cfg = _train_config(args, _TRAIN_MERGE)
    g = load_dataset(args.data)
    model, report, ps = train(g, cfg)
    out = _outdir(args.out)
    save_checkpoint(out / "model.ckpt", model, ps, meta={"train_config": cfg.to_dict(),
                                                          "best_epoch": report.best_epoch})
    _write_json(out / "report.json", report.to_dict())
    _write_metrics(report, out / "metrics.csv")
    _write_json(out / "effective_config.json", {"command": "train", "data": args.data, **cfg.to_dict()})
    return 0


def cmd_eval(args) -> int:
    from .checkpoint import load_checkpoint

    g = load_dataset(args.data)
    model, ps, _ = load_checkpoint(args.checkpoint)
    if ps is None:
        raise HeroFilterError("checkpoint holds no patch set")
    loss, acc = evaluate(model, g, ps, args.split)
    result = {"split": args.split, "loss": loss, "acc": acc}
    text = json.dumps(_jsonable(result), indent=2, sort_keys=True)
    print(text)
    if args.out:
        out = _outdir(args.out)
        (out / "eval.json").write_text(text + "\n", encoding="utf-8")
        _write_json(out / "effective_config.json", {"command": "eval", "data": args.data,
                                                    "checkpoint": args.checkpoint, "split": args.split})
    return 0


def _report_dict(rep):
    return {"lhs": rep.lhs, "rhs": rep.rhs, "holds": rep.holds,
            "excluded_indices": rep.excluded_indices, "notes": rep.notes, **rep.extras}


def cmd_bounds(args) -> int:
    g = load_dataset(args.data)
    dec = eigendecompose(normalize_adjacency(g, args.normalization), method=args.eigensolver)
    lam = dec.eigenvalues
    gl = _fixed_filter(args, lam)
    h = node_heterophily(g)
    hh = spectral_heterophily(dec, h)
    result = {"filter": args.filter, "mean_h": float(h.mean())}
    rep1 = check_prop1(gl, hh, args.eps)
    result["prop1"] = {**_report_dict(rep1), "excluded": rep1.excluded_indices}

    try:
        f, align = construct_aligning_weights(g.labels, lam, args.K, g.num_classes)
        result["prop2"] = {"order": args.K, "alignment": align}
    except HeroFilterError as exc:
        result["prop2"] = {"order": args.K, "error": f"{type(exc).__name__}: {exc}"}

    # binary reduction: class 0 against the rest, features projected on each class mean
    y0 = (g.labels == 0).astype(np.float64)
    y1 = 1.0 - y0
    x = g.features
    mu0 = x[y0 > 0].mean(axis=0) if y0.any() else np.zeros(g.feature_dim)
    mu1 = x[y1 > 0].mean(axis=0) if y1.any() else np.zeros(g.feature_dim)
    hb = _binary_h(g, y0)
    try:
        rep = theorem_check(gl, dec, x @ mu0, x @ mu1, y0, y1, hb, args.eps)
        result["theorem"] = {**_report_dict(rep), "error": rep.lhs, "bound": rep.rhs}
    except HeroFilterError as exc:
        result["theorem"] = {"error": f"{type(exc).__name__}: {exc}"}

    text = json.dumps(_jsonable(result), indent=2, sort_keys=True)
    print(text)
    if args.out:
        out = _outdir(args.out)
        (out / "bounds.json").write_text(text + "\n", encoding="utf-8")
        _write_json(out / "effective_config.json", {"command": "bounds", "data": args.data,
                                                    "filter": args.filter, "band_lo": args.band_lo,
                                                    "band_hi": args.band_hi, "K": args.K, "eps": args.eps,
                                                    "normalization": args.normalization,
                                                    "eigensolver": args.eigensolver})
    return 0


def _binary_h(g, y0):
    from .graph import Graph

    gb = Graph(g.num_nodes, g.edges, np.zeros((g.num_nodes, 1)), y0.astype(np.int64), {}, 2)
    return node_heterophily(gb)


def _parse_floats(text):
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise UsageError(f"expected comma-separated numbers, got {text!r}") from exc


def _parse_bands(text):
    if text is None:
        return list(DEFAULT_BANDS)
    bands = []
    for part in text.split(","):
        try:
            lo, hi = part.split(":")
            bands.append((float(lo), float(hi)))
        except ValueError as exc:
            raise UsageError(f"bands look like 0:0.4,0.4:0.8,... got {text!r}") from exc
    return bands


def cmd_sweep(args) -> int:
    cfg = _train_config(args, _TRAIN_MERGE)
    spec_defaults = dataclasses.asdict(SynthSpec())
    spec = SynthSpec(**{**spec_defaults, **{k: v for k, v in {
        "n": args.n, "num_classes": args.classes, "avg_degree": args.avg_degree,
        "feature_dim": args.feature_dim, "feature_noise": args.noise}.items() if v is not None}})
    h_values = _parse_floats(args.h_values)
    bands = _parse_bands(args.bands)
    seeds = [int(s) for s in _parse_floats(args.seeds)] if args.seeds else [cfg.seed]
    rows = heterophily_sweep(h_values, bands, spec, cfg, seeds=seeds, jobs=args.jobs)
    out = _outdir(args.out)
    write_sweep_csv(rows, out / "sweep_grid.csv")
    _write_json(out / "effective_config.json", {
        "command": "sweep", "h_values": h_values, "bands": bands, "seeds": seeds,
        "synth": dataclasses.asdict(spec), "train": cfg.to_dict()})
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="herofilter", description="Spectral patching and mixing for node classification.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    sp = sub.add_parser("synth", help="generate a synthetic dataset directory")
    sp.add_argument("--n", type=int)
    sp.add_argument("--classes", type=int)
    sp.add_argument("--heterophily", type=float)
    sp.add_argument("--avg-degree", type=float)
    sp.add_argument("--feature-dim", type=int)
    sp.add_argument("--noise", type=float)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--config")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("analyze", help="heterophily and spectrum summary")
    sp.add_argument("--data", required=True)
    sp.add_argument("--out")
    sp.add_argument("--normalization", default="sym", choices=["sym", "sym_selfloop"])
    sp.add_argument("--eigensolver", default="jacobi", choices=["jacobi", "lapack"])
    sp.add_argument("--no-spectral", action="store_true")
    sp.add_argument("--filter", default="lowpass", choices=["lowpass", "band"],
                    help="response written to spectrum.csv")
    sp.add_argument("--band-lo", type=float, default=0.0)
    sp.add_argument("--band-hi", type=float, default=0.4)
    sp.add_argument("--seed", type=int)
    sp.set_defaults(func=cmd_analyze)

    sp = sub.add_parser("patch", help="compute patches and write patches.csv")
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--config")
    sp.add_argument("--seed", type=int)
    _add_train_flags(sp, _TRAIN_FLAGS)
    sp.set_defaults(func=cmd_patch)

    sp = sub.add_parser("train", help="train a mixer with early stopping")
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--config")
    sp.add_argument("--seed", type=int)
    _add_train_flags(sp, _TRAIN_FLAGS)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="evaluate a checkpoint on one split")
    sp.add_argument("--data", required=True)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--split", default="test", choices=["train", "val", "test"])
    sp.add_argument("--out")
    sp.add_argument("--seed", type=int)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("bounds", help="numerically check the heterophily bounds")
    sp.add_argument("--data", required=True)
    sp.add_argument("--filter", default="lowpass", choices=["lowpass", "band"])
    sp.add_argument("--band-lo", type=float, default=0.0)
    sp.add_argument("--band-hi", type=float, default=0.4)
    sp.add_argument("--K", type=int, default=2)
    sp.add_argument("--eps", type=float, default=1e-9)
    sp.add_argument("--normalization", default="sym", choices=["sym", "sym_selfloop"])
    sp.add_argument("--eigensolver", default="jacobi", choices=["jacobi", "lapack"])
    sp.add_argument("--out")
    sp.add_argument("--seed", type=int)
    sp.set_defaults(func=cmd_bounds)

    sp = sub.add_parser("sweep", help="heterophily x frequency-band accuracy grid")
    sp.add_argument("--h-values", default="0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9")
    sp.add_argument("--bands", help="e.g. 0:0.4,0.4:0.8,0.8:1.2,1.2:1.6,1.6:2")
    sp.add_argument("--seeds", help="comma-separated seeds (default: --seed)")
    sp.add_argument("--n", type=int)
    sp.add_argument("--classes", type=int)
    sp.add_argument("--avg-degree", type=float)
    sp.add_argument("--feature-dim", type=int)
    sp.add_argument("--noise", type=float)
    sp.add_argument("--jobs", type=int, default=1)
    sp.add_argument("--out", required=True)
    sp.add_argument("--config")
    sp.add_argument("--seed", type=int)
    _add_train_flags(sp, _TRAIN_FLAGS)
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("export-induced", help="write the patch-induced graph")
    sp.add_argument("--patches", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--data", help="also copy this dataset with the induced edges")
    sp.set_defaults(func=cmd_export_induced)
    return parser


def run(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return int(args.func(args) or 0)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (HeroFilterError, OSError, ValueError, IndexError, ArithmeticError, KeyError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


def main(argv=None):
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
