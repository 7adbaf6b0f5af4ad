"""Command-line entry point.

Subcommands: gen, preprocess, features, train, eval, grid, report.
Exit codes: 0 success, 2 invalid input or configuration, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .aggregate import AGG_METHODS
from .errors import (
    ConfigurationError,
    DatasetLoadError,
    EcogCritError,
    InsufficientDataError,
    InvalidInputError,
    StageError,
    ValidationError,
)
from .evaluation import wilcoxon_signed_rank
from .features import FEATURE_NAMES, MASK_PRESETS, write_feature_csv
from .graph import trial_connectivity
from .models import KINDS
from .pipeline import (
    FeatureBuilder,
    PipelineConfig,
    load_prepared,
    run_grid,
    run_pipeline,
    train_final,
    version_string,
    write_grid,
)
from .signal import preprocess_recording
from .synthgen import SynthConfig, generate_dataset

log = logging.getLogger("ecogcrit")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 2, 3
_INVALID = (ValidationError, ConfigurationError, InvalidInputError, DatasetLoadError, InsufficientDataError)


def _read_json(path) -> dict:
    path = Path(path)
    try:
        return json.loads(path.read_text())
    except FileNotFoundError as exc:
        raise ConfigurationError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}: invalid JSON ({exc})") from exc


def _pipeline_config(args, extra_keys=("grid",)) -> tuple[PipelineConfig, dict]:
    """Build the run config from --config plus command-line overrides."""
    raw = _read_json(args.config) if args.config else {}
    extras = {k: raw.pop(k) for k in extra_keys if k in raw}
    base = Path(args.config).parent if args.config else None
    cfg = PipelineConfig.from_dict(raw, base=base)
    over = {}
    if args.out is not None:
        over["out"] = args.out
    if args.seed is not None:
        over["seed"] = args.seed
    if args.threads is not None:
        over["threads"] = args.threads
    return (replace(cfg, **over) if over else cfg), extras


# ------------------------------------------------------------ subcommands


def cmd_gen(args) -> int:
    raw = _read_json(args.config) if args.config else {}
    raw = raw.get("synth", raw)
    if args.seed is not None:
        raw["seed"] = args.seed
    try:
        cfg = SynthConfig.from_dict(raw)
    except TypeError as exc:
        raise ConfigurationError(f"invalid generator config: {exc}") from exc
    out = Path(args.out or "dataset")
    generate_dataset(cfg, out, args.threads or 1)
    print(f"wrote synthetic dataset to {out}")
    return EXIT_OK


def cmd_preprocess(args) -> int:
    cfg, _ = _pipeline_config(args)
    ds, prep = load_prepared(cfg)
    n_rows = int(sum(r.size for r in prep.trial_rows))
    print(
        f"{len(ds.subjects)} subjects, {len(prep.keys)} labelled electrodes "
        f"({int(prep.labels.sum())} critical), {n_rows} electrode-trials; cache at {cfg.cache_path}"
    )
    return EXIT_OK


def cmd_features(args) -> int:
    cfg, _ = _pipeline_config(args)
    ds, prep = load_prepared(cfg)
    everyone = list(range(len(prep.keys)))
    builder = FeatureBuilder(prep, cfg.features, cfg.nmf, everyone, cfg.seed)
    X, owner = builder.build(everyone)
    rows = np.concatenate([prep.trial_rows[i] for i in everyone])
    keys = [(prep.keys[o].subject, prep.keys[o].electrode, int(prep.trial_ids[r]), prep.keys[o].label) for o, r in zip(owner, rows)]
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    write_feature_csv(out / "features.csv", X, keys)
    print(f"wrote {X.shape[0]} x {len(FEATURE_NAMES)} features to {out / 'features.csv'}")
    if args.connectivity:
        sid, _, tid = args.connectivity.partition(":")
        subject = ds.subject(sid)
        _dump_connectivity(out, subject, ds.sample_rate, cfg.signal, int(tid or 0))
    return EXIT_OK


def _dump_connectivity(out: Path, subject, fs: float, signal: str, trial_id: int) -> None:
    rows = subject.valid_rows()
    for task, trials in subject.events.items():
        for t in trials:
            if t.trial_id == trial_id:
                ep = preprocess_recording(subject.recordings[task].samples[rows], [t.onset_sample], fs, signal, [t.trial_id])
                W = trial_connectivity(ep[0]).W
                path = out / f"connectivity_{subject.id}_{trial_id}.csv"
                ids = [e.id for e in subject.valid_electrodes]
                lines = ["electrode," + ",".join(str(i) for i in ids)]
                lines += [f"{i}," + ",".join(repr(float(v)) for v in row) for i, row in zip(ids, W)]
                path.write_text("\n".join(lines) + "\n")
                print(f"wrote {path}")
                return
    raise InvalidInputError(f"subject {subject.id} has no trial {trial_id}")


def cmd_train(args) -> int:
    cfg, _ = _pipeline_config(args)
    _, prep = load_prepared(cfg)
    final = train_final(cfg, prep)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    final.classifier.save(out / "stage1")
    sc = final.scaler
    scaler = {"columns": sc.columns.tolist(), "mean": sc.mean.tolist(), "std": sc.std.tolist()}
    (out / "scaler.json").write_text(json.dumps(scaler, indent=1) + "\n")
    if final.builder.nmf_model is not None:
        final.builder.nmf_model.save(out / "nmf")
    if final.aggregator is not None:
        final.aggregator.save(out / "aggregator.npz")
    meta = {"version": version_string(), "config": cfg.to_dict(), "threshold": final.threshold}
    (out / "model.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    print(f"saved models to {out} (threshold {final.threshold:.4f})")
    return EXIT_OK


def _grid_axes(cfg: PipelineConfig, extras: dict, args):
    spec = extras.get("grid", {}) if isinstance(extras.get("grid"), dict) else {}
    masks = args.masks or spec.get("masks") or list(MASK_PRESETS)
    classifiers = args.classifiers or spec.get("classifiers") or list(KINDS)
    aggs = args.aggregations or spec.get("aggregations") or list(AGG_METHODS)
    for c in classifiers:
        if c not in KINDS:
            raise ConfigurationError(f"unknown classifier {c!r}")
    for a in aggs:
        if a not in AGG_METHODS:
            raise ConfigurationError(f"unknown aggregation {a!r}")
    return masks, classifiers, aggs


def cmd_grid(args) -> int:
    cfg, extras = _pipeline_config(args)
    masks, classifiers, aggs = _grid_axes(cfg, extras, args)
    rows = run_grid(cfg, masks, classifiers, aggs)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    write_grid(out / "grid.csv", rows)
    for r in rows:
        print(f"{r['mask']:<22} {r['classifier']:<11} {r['aggregation']:<16} roc={_fmt(r['roc_auc'])} pr={_fmt(r['pr_auc'])}")
    print(f"wrote {len(rows)} rows to {out / 'grid.csv'}")
    return EXIT_OK


def cmd_eval(args) -> int:
    if args.grid:
        return cmd_grid(args)
    cfg, _ = _pipeline_config(args)
    res = run_pipeline(cfg)
    _print_block("pooled", res.summary["pooled"])
    _print_block("fold mean", res.summary["fold_mean"])
    print(f"wrote {res.out_dir / 'summary.json'}")
    return EXIT_OK


def cmd_report(args) -> int:
    summaries = [_read_json(p) for p in args.summaries]
    for path, s in zip(args.summaries, summaries):
        print(path)
        _print_block("  pooled", s["pooled"])
        _print_block("  fold mean", s["fold_mean"])
    result = None
    if len(summaries) == 2:
        a, b = summaries
        fa = {f["fold"]: f[args.metric] for f in a["folds"] if f[args.metric] is not None}
        fb = {f["fold"]: f[args.metric] for f in b["folds"] if f[args.metric] is not None}
        common = sorted(set(fa) & set(fb))
        w = wilcoxon_signed_rank([fa[k] for k in common], [fb[k] for k in common])
        result = {"metric": args.metric, "n_folds": len(common), "statistic": w.statistic, "p_value": w.p_value, "n": w.n, "exact": w.exact}
        print(f"Wilcoxon signed-rank on per-fold {args.metric}: W={w.statistic:g}, p={w.p_value:.4g} (n={w.n}, {'exact' if w.exact else 'normal approx.'})")
    elif len(summaries) > 2:
        raise ConfigurationError("report compares at most two summaries")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        payload = {"summaries": [str(p) for p in args.summaries], "wilcoxon": result}
        (out / "report.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


def _fmt(v) -> str:
    return "  n/a" if v is None else f"{v:.3f}"


def _print_block(title: str, block: dict) -> None:
    keys = ("roc_auc", "pr_auc", "accuracy", "precision", "recall", "f1", "balanced_accuracy")
    print(f"{title}: " + "  ".join(f"{k}={_fmt(block.get(k))}" for k in keys))


# ------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--out", help="output directory (overrides the config)")
    common.add_argument("--seed", type=int, help="master seed (overrides the config)")
    common.add_argument("--threads", type=int, help="worker threads for folds")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    p = argparse.ArgumentParser(prog="ecogcrit", description="Two-stage ECoG language-critical electrode classification.")
    p.add_argument("--version", action="version", version=version_string())
    sub = p.add_subparsers(dest="command", required=True)

    sub.add_parser("gen", parents=[common], help="generate a synthetic dataset").set_defaults(func=cmd_gen)
    sub.add_parser("preprocess", parents=[common], help="preprocess and cache epochs and graph metrics").set_defaults(func=cmd_preprocess)

    f = sub.add_parser("features", parents=[common], help="write the trial feature matrix as CSV")
    f.add_argument("--connectivity", metavar="SUBJECT:TRIAL", help="also dump one trial's connectivity matrix")
    f.set_defaults(func=cmd_features)

    sub.add_parser("train", parents=[common], help="fit and save stage-1 and stage-2 models on all labelled electrodes").set_defaults(func=cmd_train)

    def grid_opts(sp):
        sp.add_argument("--masks", nargs="+", help="feature masks for the grid")
        sp.add_argument("--classifiers", nargs="+", help="classifier kinds for the grid")
        sp.add_argument("--aggregations", nargs="+", help="aggregation methods for the grid")

    e = sub.add_parser("eval", parents=[common], help="cross-validated evaluation of one configuration")
    e.add_argument("--grid", action="store_true", help="expand masks x classifiers x aggregations")
    grid_opts(e)
    e.set_defaults(func=cmd_eval)

    g = sub.add_parser("grid", parents=[common], help="ablation grid written to grid.csv")
    grid_opts(g)
    g.set_defaults(func=cmd_grid)

    r = sub.add_parser("report", parents=[common], help="print summaries; with two, compare per-fold metrics")
    r.add_argument("summaries", nargs="+", help="summary.json files")
    r.add_argument("--metric", default="roc_auc", help="per-fold metric for the paired test")
    r.set_defaults(func=cmd_report)
    return p


def _exit_code(exc: BaseException) -> int:
    cause = exc.cause if isinstance(exc, StageError) else exc
    if isinstance(exc, StageError) and exc.stage != "load":
        return EXIT_RUNTIME
    return EXIT_INVALID if isinstance(cause, _INVALID) else EXIT_RUNTIME


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except EcogCritError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _exit_code(exc)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID if isinstance(exc, (FileNotFoundError, ValueError)) else EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001
        log.exception("unexpected failure")
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
