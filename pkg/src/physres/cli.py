"""``physres`` command-line entry point.

Exit status: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from . import __version__
from .artifact import ArtifactError, load_model, read_artifact, save_model
from .config import ConfigError, RunConfig
from .dataset import features_from_recordings, recording_seed, synthesize_dataset
from .evaluation import (
    EvalError,
    baseline_bnn_compare,
    readout_ablation,
    shift_sweep,
    split_dataset,
    unseen_fault_protocol,
    write_outputs,
)
from .explain import ShapleyError, rank_channels
from .features import FEATURE_NAMES, FeatureError, FeatureMatrix, class_densities, extract_features
from .pipeline import derive_seed, fit_pipeline
from .priors import PriorError
from .readout import ReadoutError, TrainingDiverged
from .reservoir import ReservoirError
from .signals import SignalError, ingest_csv, segment, write_csv

logger = logging.getLogger("physres")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3
LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
MANIFEST = "manifest.json"

# Exception type -> (pipeline stage, exit status)
_STAGES = [
    (ConfigError, "config", EXIT_USAGE),
    (ArtifactError, "artifact", EXIT_DATA),
    (SignalError, "signals", EXIT_DATA),
    (FeatureError, "features", EXIT_DATA),
    (PriorError, "priors", EXIT_DATA),
    (ShapleyError, "rank_channels", EXIT_DATA),
    (EvalError, "eval", EXIT_DATA),
    (TrainingDiverged, "train_bbb", EXIT_NUMERICAL),
    (ReadoutError, "readout", EXIT_NUMERICAL),
    (ReservoirError, "reservoir", EXIT_NUMERICAL),
    (FloatingPointError, "numerics", EXIT_NUMERICAL),
    (OSError, "io", EXIT_DATA),
]


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _held_out(text: str):
    if text.lower() == "none":
        return "none"
    try:
        return int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a fault label or 'none', got {text!r}") from None


def _u64(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an unsigned integer, got {text!r}") from None
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in 64 unsigned bits")
    return v


def _positive(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="run configuration JSON")
    common.add_argument("--seed", type=_u64, help="master seed (overrides config)")
    common.add_argument("--out", help="output directory (overrides config)")
    common.add_argument("--workers", type=_positive, help="prediction worker threads")
    common.add_argument("--mc-samples", type=_positive, help="Monte-Carlo weight samples per window")

    data = _Parser(add_help=False)
    data.add_argument("--data", help="directory written by 'synth' (default: synthesize in memory)")
    data.add_argument("--held-out", type=_held_out, help="fault label excluded from training, or 'none'")
    data.add_argument("--no-shap", action="store_true", help="keep round-robin node allocation")

    p = _Parser(prog="physres", description="Physics-informed reservoir fault classifier.")
    p.add_argument("--version", action="version", version=f"physres {__version__}")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.add_parser("synth", parents=[common], help="write synthetic recordings and a manifest")
    sub.add_parser("train", parents=[common, data], help="fit a model and write the artifact")
    sp = sub.add_parser("predict", parents=[common], help="per-window predictions as JSON lines")
    sp.add_argument("--artifact", required=True)
    sp.add_argument("--input", required=True, help="recording CSV")
    se = sub.add_parser("explain", parents=[common], help="Shapley channel ranking CSV")
    se.add_argument("--artifact", required=True)
    se.add_argument("--data", help="validation recordings directory (default: fresh synthetic data)")
    sub.add_parser("evaluate", parents=[common, data], help="unseen-fault, ablation and baseline reports")
    sub.add_parser("shift-sweep", parents=[common, data], help="accuracy and uncertainty under shift")
    return p


def resolve_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig().validate()
    ev, paths, explain = cfg.eval, cfg.paths, cfg.explain
    if getattr(args, "workers", None):
        ev = replace(ev, workers=args.workers)
    if getattr(args, "mc_samples", None):
        ev = replace(ev, mc_samples=args.mc_samples)
    held = getattr(args, "held_out", None)
    if args.command == "train":
        # Training uses every class unless the flag names one.
        ev = replace(ev, held_out=None if held in (None, "none") else held)
    elif held is not None:
        ev = replace(ev, held_out=None if held == "none" else held)
    if getattr(args, "no_shap", False):
        explain = replace(explain, use_shap=False)
    if args.out:
        paths = replace(paths, out_dir=args.out)
    if getattr(args, "data", None):
        paths = replace(paths, data_dir=args.data)
    seed = cfg.seed if args.seed is None else args.seed
    return cfg.updated(seed=seed, eval=ev, paths=paths, explain=explain)


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.paths.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if not os.access(out, os.W_OK):
        raise OSError(f"output directory {out} is not writable")
    return out


def _echo(cfg: RunConfig) -> dict:
    # Paths are left out so output bytes do not depend on where they are written.
    d = cfg.to_dict()
    d.pop("paths")
    return d


def _comment(cfg: RunConfig) -> str:
    return f"seed={cfg.seed} config={json.dumps(_echo(cfg), sort_keys=True)}"


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


# --------------------------------------------------------------------------
# Data


def _load_recordings(data_dir: Path, classes: Optional[Sequence[int]] = None):
    manifest = data_dir / MANIFEST
    if not manifest.is_file():
        raise SignalError(f"{data_dir}: no {MANIFEST}; run 'physres synth' first")
    try:
        entries = json.loads(manifest.read_text(encoding="utf-8"))["files"]
    except (json.JSONDecodeError, KeyError, TypeError):
        raise SignalError(f"{manifest}: malformed manifest") from None
    recs = []
    for e in entries:
        if classes is not None and int(e["label"]) not in classes:
            continue
        rec = ingest_csv(data_dir / e["file"], e["label"], e["sample_rate_hz"])
        recs.append(replace(rec, load_level=float(e["load"]), seed=int(e["recording_seed"])))
    if not recs:
        raise SignalError(f"{data_dir}: no recordings for classes {list(classes or [])}")
    return recs


def load_dataset(cfg: RunConfig, seed: Optional[int] = None, classes=None) -> FeatureMatrix:
    d = cfg.dataset
    if cfg.paths.data_dir:
        recs = _load_recordings(Path(cfg.paths.data_dir), classes)
    else:
        dcfg = cfg.dataset_config()
        if classes is not None:
            dcfg = replace(dcfg, classes=tuple(c for c in dcfg.classes if c in classes))
        recs = synthesize_dataset(dcfg, cfg.seed if seed is None else seed)
    return features_from_recordings(recs, d.window_len, d.hop, d.windows_per_class)


# --------------------------------------------------------------------------
# Commands


def cmd_synth(cfg: RunConfig) -> int:
    out = _out_dir(cfg)
    dcfg = cfg.dataset_config()
    files = []
    recs = synthesize_dataset(dcfg, cfg.seed)
    per = dcfg.recordings_per_condition()
    i = 0
    for label in dcfg.classes:
        for li, load in enumerate(dcfg.loads):
            for rep in range(per):
                rec = recs[i]
                i += 1
                name = f"label{label}_load{load:g}_rep{rep}_seed{cfg.seed}.csv"
                write_csv(rec, out / name, _comment(cfg))
                files.append(
                    {
                        "file": name,
                        "label": int(label),
                        "load": float(load),
                        "rep": rep,
                        "recording_seed": recording_seed(cfg.seed, label, li, rep),
                        "sample_rate_hz": rec.sample_rate_hz,
                        "sha256": _sha256(out / name),
                    }
                )
    doc = {"seed": cfg.seed, "config": _echo(cfg), "files": files}
    (out / MANIFEST).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    logger.info("wrote %d recordings to %s", len(files), out)
    return EXIT_OK


def _write_rows(path: Path, header: List[str], rows, comment: str) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        fh.write(f"# {comment}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])


def cmd_train(cfg: RunConfig) -> int:
    out = _out_dir(cfg)
    data = load_dataset(cfg)
    held = cfg.eval.held_out
    if held is not None:
        if not np.any(data.labels == held):
            raise EvalError(f"held-out class {held} is not in the dataset")
        data = data.subset(np.flatnonzero(data.labels != held))
    model = fit_pipeline(data, cfg.pipeline_config(), cfg.seed)
    seed = cfg.seed
    extra = {"held_out": held, "window_len": cfg.dataset.window_len, "hop": cfg.dataset.hop}
    save_model(model, out / f"model_{seed}.json", seed, _echo(cfg), extra)
    comment = _comment(cfg)
    _write_rows(out / f"loss_trace_{seed}.csv", ["epoch", "loss"], enumerate(model.loss_trace), comment)

    # Per-weight uncertainty before and after training.
    p, q0, q = model.readout_prior, model.initial_posterior, model.posterior
    mapping = list(model.reservoir_config.node_to_feature)
    rows = []
    for k, c in enumerate(model.classes):
        for n in range(q.mu.shape[1]):
            feat = FEATURE_NAMES[mapping[n]] if n < len(mapping) else "bias"
            rows.append(
                [c, n, feat, p.mean[k, n], float(np.sqrt(p.var[k, n])), q0.sigma[k, n], q.mu[k, n], q.sigma[k, n]]
            )
    _write_rows(
        out / f"weights_{seed}.csv",
        ["class", "node", "feature", "prior_mean", "prior_std", "init_sigma", "mu", "sigma"],
        rows,
        comment,
    )

    Z = FeatureMatrix(model.global_stats.standardize(data.X), data.labels, data.loads, data.names)
    dens = class_densities(Z, cfg.features.density_kind)
    drows = []
    for (label, j), d in sorted(dens.items()):
        m, v = d.moments()
        size = len(d.masses) if d.kind == "histogram" else d.bandwidth
        drows.append([label, FEATURE_NAMES[j], d.kind, d.support[0], d.support[1], size, m, v])
    _write_rows(
        out / f"densities_{seed}.csv",
        ["class", "feature", "kind", "lo", "hi", "bins_or_bandwidth", "density_mean", "density_var"],
        drows,
        comment,
    )
    if model.shapley is not None:
        model.shapley.to_csv(out / f"shapley_{seed}.csv", comment)
    logger.info("trained K=%d N=%d in %.2fs", model.num_classes, model.reservoir_config.num_nodes, model.train_seconds)
    return EXIT_OK


def _artifact_window(doc: dict, cfg: RunConfig):
    extra = doc.get("extra") or {}
    return int(extra.get("window_len", cfg.dataset.window_len)), int(extra.get("hop", cfg.dataset.hop))


def cmd_predict(cfg: RunConfig, artifact: str, input_csv: str, to_file: bool) -> int:
    doc = read_artifact(artifact)
    model = load_model(artifact)
    window_len, hop = _artifact_window(doc, cfg)
    rec = ingest_csv(input_csv, 0, cfg.synth.sample_rate_hz)
    windows = segment(rec, window_len, hop)
    X = np.array([extract_features(w) for w in windows])
    res = model.predict(X, cfg.eval.mc_samples, cfg.seed, cfg.eval.workers)
    labels = model.predicted_labels(res)
    lines = []
    for i, w in enumerate(windows):
        row = {"window": i, "offset": w.offset, "predicted": int(labels[i]), "classes": list(model.classes)}
        row.update(res.row(i))
        row["seed"] = cfg.seed
        row["artifact_checksum"] = doc["checksum"]
        lines.append(json.dumps(row, sort_keys=True))
    text = "\n".join(lines) + "\n"
    if to_file:
        (_out_dir(cfg) / f"predict_{cfg.seed}.jsonl").write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_explain(cfg: RunConfig, artifact: str) -> int:
    model = load_model(artifact)
    out = _out_dir(cfg)
    data = load_dataset(cfg, seed=derive_seed(cfg.seed, "validation"), classes=model.classes)
    report = rank_channels(model, data.X, data.labels)
    report.to_csv(out / f"explain_{cfg.seed}.csv", _comment(cfg))
    logger.info("channel ranking: %s", ", ".join(report.ranked_names()))
    return EXIT_OK


def cmd_evaluate(cfg: RunConfig) -> int:
    out = _out_dir(cfg)
    seed, ev = cfg.seed, cfg.eval
    data = load_dataset(cfg)
    pcfg = cfg.pipeline_config()
    split = split_dataset(data, ev.held_out, seed, ev.test_fraction)
    conf = _echo(cfg)
    if ev.held_out is not None:
        u = unseen_fault_protocol(data, ev.held_out, pcfg, seed, ev.mc_samples, ev.workers, split=split)
        model, seen = u.model, u.seen
        write_outputs(out, "unseen", seed, seen.header(), seen.rows(), u.summary(), conf,
                      timing={"train_seconds": seen.wall_seconds})
    else:
        model = fit_pipeline(split.train, pcfg, seed)
        seen = None
    ab = readout_ablation(data, pcfg, seed, ev.held_out, ev.mc_samples, ev.workers, split=split, model=model)
    if seen is None:
        seen = ab.trained
        write_outputs(out, "seen", seed, seen.header(), seen.rows(), seen.to_dict(), conf)
    arm_rows = [
        ["untrained", ab.untrained.accuracy, ab.mean_total(ab.untrained)],
        ["trained", ab.trained.accuracy, ab.mean_total(ab.trained)],
    ]
    write_outputs(out, "ablation", seed, ["arm", "accuracy", "mean_total"], arm_rows, ab.summary(), conf)
    cmp = baseline_bnn_compare(data, pcfg, seed, ev.held_out, ev.baseline_hidden, ev.mc_samples, split=split)
    cmp_rows = [
        ["proposed", cmp.proposed_parameters, cmp.proposed_accuracy],
        ["baseline", cmp.baseline_parameters, cmp.baseline_accuracy],
    ]
    write_outputs(out, "compare", seed, ["model", "trainable_parameters", "accuracy"], cmp_rows,
                  cmp.summary(), conf, timing=cmp.timing())
    logger.info("seen accuracy %.3f; readout gain %.3f", seen.accuracy, ab.accuracy_gain)
    return EXIT_OK


def cmd_shift_sweep(cfg: RunConfig) -> int:
    out = _out_dir(cfg)
    ev = cfg.eval
    data = load_dataset(cfg)
    split = split_dataset(data, ev.held_out, cfg.seed, ev.test_fraction)
    res = shift_sweep(data, ev.shift_levels, cfg.pipeline_config(), cfg.seed, ev.held_out,
                      ev.mc_samples, ev.workers, split=split)
    write_outputs(out, "shift", cfg.seed, res.header(), res.rows(), res.summary(), _echo(cfg))
    return EXIT_OK


# --------------------------------------------------------------------------


def _setup_logging() -> None:
    name = os.environ.get("PHYSRES_LOG", "error").strip().lower() or "error"
    if name not in LOG_LEVELS:
        raise UsageError(f"PHYSRES_LOG must be one of {', '.join(LOG_LEVELS)}, got {name!r}")
    logging.basicConfig(level=LOG_LEVELS[name], format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def run(argv: Optional[Sequence[str]] = None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    if not args.command:
        raise UsageError("physres: a subcommand is required (synth, train, predict, explain, evaluate, shift-sweep)")
    cfg = resolve_config(args)
    with np.errstate(over="ignore", under="ignore"):
        if args.command == "synth":
            return cmd_synth(cfg)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "predict":
            return cmd_predict(cfg, args.artifact, args.input, to_file=bool(args.out))
        if args.command == "explain":
            return cmd_explain(cfg, args.artifact)
        if args.command == "evaluate":
            return cmd_evaluate(cfg)
        return cmd_shift_sweep(cfg)


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        return run(argv)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as e:
        for kind, stage, code in _STAGES:
            if isinstance(e, kind):
                print(f"error [{stage}]: {e}", file=sys.stderr)
                return code
        raise


if __name__ == "__main__":
    sys.exit(main())
