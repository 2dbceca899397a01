"""Command-line entry point: ``autopool {generate,train,evaluate,gradcheck,export-plots}``.

Settings come from, in increasing priority: built-in defaults, an INI
config file (``--config``), ``AUTOPOOL_<SECTION>_<KEY>`` environment
variables, and command-line flags.

Exit status: 0 on success, 1 for invalid configuration or incompatible
inputs, 2 for usage errors and missing input files, 3 when training
diverges.
"""
import argparse
import configparser
import csv
import json
import logging
import os
import sys
import time

import numpy as np

from . import __version__, gradcheck, synthdata
from ._backend import BACKEND
from .evaluation import evaluate_bags, write_report_csv, write_report_json
from .exceptions import AutopoolError, InvalidConfigError, TrainingDivergenceError
from .model import load_checkpoint, save_checkpoint
from .objective import TrainConfig, predict_instances, read_history_csv, train, write_history_csv
from .pooling import PoolingOperator

log = logging.getLogger("autopool")

ENV_PREFIX = "AUTOPOOL_"
SECTIONS = ("data", "train", "evaluate", "gradcheck")

DEFAULTS = {
    "data": {"preset": "sparse-short", "seed": "0", "num_train": "2000", "num_validation": "500",
             "num_test": "500", "n_classes": "5", "feature_dim": "10", "noise_sigma": "1.0",
             "gain": "2.0", "event_rate": "0.7", "bag_duration": "10.0", "frame_rate": "2.7",
             "weak_label_min_active": "0.1"},
    "train": {"operator": "auto", "learning_rate": "0.01", "batch_size": "16", "max_epochs": "100",
              "early_stop_patience": "30", "lr_reduce_patience": "10", "lr_reduce_factor": "0.5",
              "alpha_init": "1.0", "seed": "0", "architecture": "linear", "hidden": "16",
              "threshold": "0.5"},
    "evaluate": {"segment_duration": "1.0", "threshold": "0.5", "split": "test"},
    "gradcheck": {"seed": "0", "trials": "200"},
}


class UsageError(Exception):
    """Bad invocation or missing input file (exit status 2)."""


def load_config(path, env=None):
    cp = configparser.ConfigParser()
    cp.read_dict(DEFAULTS)
    if path is not None:
        if not os.path.isfile(path):
            raise UsageError(f"config file not found: {path}")
        try:
            with open(path) as fh:
                cp.read_file(fh)
        except configparser.Error as err:
            raise InvalidConfigError(f"cannot parse {path}: {err}") from err
    env = os.environ if env is None else env
    for name, value in env.items():
        if not name.startswith(ENV_PREFIX):
            continue
        section, _, key = name[len(ENV_PREFIX):].lower().partition("_")
        if section in SECTIONS and key:
            cp[section][key] = value
    return cp


def _get(cp, section, key, conv=str):
    try:
        return conv(cp[section][key])
    except (KeyError, ValueError) as err:
        raise InvalidConfigError(f"[{section}] {key}: {err}") from err


def synth_config_from(cp):
    """Build a SynthConfig from ``[data]`` and optional ``[class:NAME]`` sections."""
    seed = _get(cp, "data", "seed", int)
    num_bags = (_get(cp, "data", "num_train", int), _get(cp, "data", "num_validation", int),
                _get(cp, "data", "num_test", int))
    class_sections = [s for s in cp.sections() if s.startswith("class:")]
    common = dict(noise_sigma=_get(cp, "data", "noise_sigma", float))
    if not class_sections:
        preset = _get(cp, "data", "preset")
        if preset not in synthdata.PRESETS:
            raise InvalidConfigError(f"unknown preset {preset!r}; choose from {sorted(synthdata.PRESETS)}")
        cfg = synthdata.PRESETS[preset](
            seed=seed, num_bags=num_bags, n_classes=_get(cp, "data", "n_classes", int),
            feature_dim=_get(cp, "data", "feature_dim", int), gain=_get(cp, "data", "gain", float),
            event_rate=_get(cp, "data", "event_rate", float), **common)
        cfg.weak_label_min_active = _get(cp, "data", "weak_label_min_active", float)
        return cfg
    dim = _get(cp, "data", "feature_dim", int)
    names = [s.split(":", 1)[1] for s in class_sections]
    auto_templates = synthdata.orthogonal_templates(len(names), dim, seed + 7919)
    profiles = []
    for c, (section, name) in enumerate(zip(class_sections, names)):
        sec = cp[section]
        if "template" in sec:
            template = np.array([float(v) for v in sec["template"].split(",")])
        else:
            template = auto_templates[c]
        profiles.append(synthdata.ClassProfile(
            name, float(sec.get("event_rate", cp["data"]["event_rate"])),
            synthdata.DurationDist.parse(sec.get("duration", "uniform:1.0:3.0")),
            template, float(sec.get("gain", cp["data"]["gain"]))))
    return synthdata.SynthConfig(
        profiles, dict(zip(synthdata.SPLITS, num_bags)), _get(cp, "data", "bag_duration", float),
        _get(cp, "data", "frame_rate", float), common["noise_sigma"],
        _get(cp, "data", "weak_label_min_active", float), seed)


def train_config_from(cp):
    t = cp["train"]
    try:
        return TrainConfig(
            operator=PoolingOperator.parse(t["operator"]), learning_rate=float(t["learning_rate"]),
            batch_size=int(t["batch_size"]), max_epochs=int(t["max_epochs"]),
            early_stop_patience=int(t["early_stop_patience"]),
            lr_reduce_patience=int(t["lr_reduce_patience"]),
            lr_reduce_factor=float(t["lr_reduce_factor"]), alpha_init=float(t["alpha_init"]),
            seed=int(t["seed"]), architecture=t["architecture"], hidden=int(t["hidden"]),
            threshold=float(t["threshold"]))
    except ValueError as err:
        raise InvalidConfigError(f"[train]: {err}") from err


def _snapshot(cp, sections):
    return {s: dict(cp[s]) for s in cp.sections() if s in sections or s.startswith("class:")}


def _operator_record(op):
    rec = {"name": str(op), "kind": op.kind}
    if op.kind == "rap":
        rec["lambda"] = op.lam
    if op.kind == "cap":
        rec["phi_plus"] = op.phi_plus
    return rec


def write_manifest(out_dir, command, config, seed, artifacts, started, extra=None):
    """Write ``<command>_manifest.json`` and check every artifact exists."""
    missing = [p for p in artifacts.values() if not os.path.exists(p)]
    if missing:
        raise AutopoolError(f"declared outputs missing: {missing}")
    manifest = {"command": command, "tool_version": __version__, "backend": BACKEND,
                "seed": seed, "config": config,
                "artifacts": {k: os.path.abspath(v) for k, v in artifacts.items()},
                "runtime_seconds": time.perf_counter() - started}
    manifest.update(extra or {})
    path = os.path.join(out_dir, f"{command.replace('-', '_')}_manifest.json")
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=1)
        fh.write("\n")
    return path


# -- commands ----------------------------------------------------------------

def cmd_generate(args, cp):
    started = time.perf_counter()
    if args.preset is not None:
        cp["data"]["preset"] = args.preset
    if args.seed is not None:
        cp["data"]["seed"] = str(args.seed)
    out = args.out or cp["data"].get("out", "dataset")
    cfg = synth_config_from(cp)
    dataset = synthdata.generate(cfg)
    paths = synthdata.write_dataset(out, dataset)
    stats = synthdata.summarize_durations(
        [b for bags in dataset.splits.values() for b in bags], dataset.class_names, cfg.frame_rate)
    print(f"{'class':<16}{'events':>8}{'mean_s':>9}{'min_s':>8}{'max_s':>8}")
    for name, s in stats.items():
        if s:
            print(f"{name:<16}{s['count']:>8}{s['mean']:>9.3f}{s['min']:>8.3f}{s['max']:>8.3f}")
        else:
            print(f"{name:<16}{0:>8}{'-':>9}{'-':>8}{'-':>8}")
    write_manifest(out, "generate", _snapshot(cp, ("data",)), cfg.seed, paths, started,
                   {"durations": stats})
    return 0


def cmd_train(args, cp):
    started = time.perf_counter()
    if args.operator is not None:
        cp["train"]["operator"] = args.operator
    if args.seed is not None:
        cp["train"]["seed"] = str(args.seed)
    data_dir = args.dataset or cp["train"].get("dataset")
    if not data_dir or not os.path.isfile(os.path.join(data_dir, "dataset.json")):
        raise UsageError(f"dataset not found: {data_dir!r} (use --dataset DIR)")
    out = args.out or cp["train"].get("out", "run")
    config = train_config_from(cp)
    dataset = synthdata.read_dataset(data_dir)

    def progress(row):
        log.info("epoch %d loss %.5f val_f1 %.4f lr %.3g alpha %s", row["epoch"], row["train_loss"],
                 row["val_f1"], row["lr"], np.round(row["alpha"], 3).tolist())

    try:
        state, history = train(dataset["train"], dataset["validation"], config, log=progress)
    except TrainingDivergenceError as err:
        print(f"error: training diverged at epoch {err.epoch}, batch {err.batch_index}: {err}",
              file=sys.stderr)
        return 3
    os.makedirs(out, exist_ok=True)
    paths = {"checkpoint": os.path.join(out, "checkpoint.json"),
             "history": os.path.join(out, "history.csv")}
    op = config.operator
    alpha = state.alpha.alpha if op.learns_alpha else np.full(len(dataset.class_names), op.fixed_alpha)
    save_checkpoint(paths["checkpoint"], state.params, alpha=alpha, operator=op,
                    class_names=dataset.class_names,
                    meta={"epoch": state.epoch, "best_validation_f1": state.best_validation_score,
                          "seed": config.seed})
    write_history_csv(paths["history"], history, dataset.class_names)
    print(f"trained {op} for {len(history) - 1 if history else 0} epochs; "
          f"best validation macro-F1 {state.best_validation_score:.4f} at epoch {state.epoch}")
    write_manifest(out, "train", _snapshot(cp, ("train",)), config.seed, paths, started,
                   {"operator": _operator_record(op), "dataset": os.path.abspath(data_dir)})
    return 0


def cmd_evaluate(args, cp):
    started = time.perf_counter()
    if not args.checkpoint or not os.path.isfile(args.checkpoint):
        raise UsageError(f"checkpoint not found: {args.checkpoint}")
    data_dir = args.dataset or cp["train"].get("dataset")
    if not data_dir or not os.path.isfile(os.path.join(data_dir, "dataset.json")):
        raise UsageError(f"dataset not found: {data_dir!r} (use --dataset DIR)")
    if args.segment_duration is not None:
        cp["evaluate"]["segment_duration"] = str(args.segment_duration)
    split = args.split or cp["evaluate"]["split"]
    seg = _get(cp, "evaluate", "segment_duration", float)
    threshold = _get(cp, "evaluate", "threshold", float)
    params, doc = load_checkpoint(args.checkpoint)
    dataset = synthdata.read_dataset(data_dir)
    if split not in dataset.splits or not dataset[split]:
        raise InvalidConfigError(f"split {split!r} is missing or empty")
    bags = dataset[split]
    if bags[0].features.shape[1] != params.input_dim or len(dataset.class_names) != params.num_classes:
        raise InvalidConfigError(
            f"checkpoint expects d={params.input_dim}, C={params.num_classes}; dataset has "
            f"d={bags[0].features.shape[1]}, C={len(dataset.class_names)}")
    probs = predict_instances(params, bags)
    strong = None if any(b.strong_labels is None for b in bags) else [b.strong_labels for b in bags]
    report = evaluate_bags(probs, np.stack([b.weak_labels for b in bags]), strong,
                           dataset.frame_rate, seg, threshold, dataset.class_names)
    report.meta.update({"split": split, "operator": doc.get("operator"), "alpha": doc.get("alpha")})
    out = args.out or os.path.dirname(os.path.abspath(args.checkpoint))
    os.makedirs(out, exist_ok=True)
    paths = {"report_json": os.path.join(out, "report.json"),
             "report_csv": os.path.join(out, "report.csv")}
    write_report_json(paths["report_json"], report)
    write_report_csv(paths["report_csv"], report)
    er = report.dynamic.error_rate
    print(f"static  macro F1 {report.static.macro_f1:.4f}  P {report.static.macro_precision:.4f}  "
          f"R {report.static.macro_recall:.4f}")
    print(f"dynamic macro F1 {report.dynamic.macro_f1:.4f}  P {report.dynamic.macro_precision:.4f}  "
          f"R {report.dynamic.macro_recall:.4f}  E {er.value:.4f}")
    write_manifest(out, "evaluate", _snapshot(cp, ("evaluate",)), None, paths, started,
                   {"checkpoint": os.path.abspath(args.checkpoint), "dataset": os.path.abspath(data_dir)})
    return 0


def cmd_gradcheck(args, cp):
    seed = args.seed if args.seed is not None else _get(cp, "gradcheck", "seed", int)
    trials = args.trials if args.trials is not None else _get(cp, "gradcheck", "trials", int)
    if trials < 1:
        raise UsageError("--trials must be >= 1")
    errors = gradcheck.run(seed, trials)
    tol = 1e-4
    ok = True
    for name, err in errors.items():
        status = "ok" if err <= tol else "FAIL"
        ok &= err <= tol
        print(f"{name:<22} max_rel_err {err:.3e}  {status}")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "gradcheck.json"), "w") as fh:
            json.dump({"seed": seed, "trials": trials, "tolerance": tol, "errors": errors}, fh, indent=1)
            fh.write("\n")
    return 0 if ok else 1


def _run_label(path):
    return os.path.basename(os.path.dirname(os.path.abspath(path))) or os.path.basename(path)


def cmd_export_plots(args, cp):
    inputs = list(args.history or []) + list(args.report or [])
    if not inputs:
        raise UsageError("export-plots needs at least one --history or --report")
    for p in inputs:
        if not os.path.isfile(p):
            raise UsageError(f"input not found: {p}")
    out = args.out or "plots"
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "alpha.csv"), "w", newline="") as fa, \
            open(os.path.join(out, "curves.csv"), "w", newline="") as fc:
        wa = csv.writer(fa, lineterminator="\n")
        wc = csv.writer(fc, lineterminator="\n")
        wa.writerow(["run", "operator", "class", "alpha"])
        wc.writerow(["run", "operator", "epoch", "train_loss", "val_f1", "lr"])
        for path in args.history or []:
            rows, names = read_history_csv(path)
            run = _run_label(path)
            for r in rows:
                wc.writerow([run, r["operator"], r["epoch"], repr(r["train_loss"]),
                             repr(r["val_f1"]), repr(r["lr"])])
            if rows:
                chosen = next((r for r in rows if r["best"]), rows[-1])
                for name, a in zip(names, chosen["alpha"]):
                    wa.writerow([run, chosen["operator"], name, repr(a)])
    with open(os.path.join(out, "f1.csv"), "w", newline="") as ff:
        wf = csv.writer(ff, lineterminator="\n")
        wf.writerow(["run", "operator", "class", "static_f1", "dynamic_f1"])
        for path in args.report or []:
            with open(path) as fh:
                rep = json.load(fh)
            run = _run_label(path)
            op = rep["meta"].get("operator")
            for s, d in zip(rep["static"]["per_class"], rep["dynamic"]["per_class"]):
                wf.writerow([run, op, s["class"], repr(s["f1"]), repr(d["f1"])])
    print(f"wrote alpha.csv, f1.csv, curves.csv to {out}")
    return 0


# -- argument parsing --------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(prog="autopool", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", metavar="PATH", help="INI configuration file")
        p.add_argument("--seed", type=int, metavar="INT")
        p.add_argument("--out", metavar="DIR", help="output directory")
        return p

    p = common(sub.add_parser("generate", help="generate a synthetic dataset"))
    p.add_argument("--preset", choices=sorted(synthdata.PRESETS))
    p.set_defaults(func=cmd_generate)

    p = common(sub.add_parser("train", help="train an instance model with a pooling operator"))
    p.add_argument("--dataset", metavar="DIR")
    p.add_argument("--operator", metavar="STR",
                   help="max | mean | softmax | auto | cap | rap:LAMBDA | strong")
    p.set_defaults(func=cmd_train)

    p = common(sub.add_parser("evaluate", help="static and segment-based evaluation"))
    p.add_argument("--checkpoint", metavar="PATH", required=True)
    p.add_argument("--dataset", metavar="DIR")
    p.add_argument("--split", choices=synthdata.SPLITS)
    p.add_argument("--segment-duration", type=float, metavar="FLOAT")
    p.set_defaults(func=cmd_evaluate)

    p = common(sub.add_parser("gradcheck", help="finite-difference gradient checks"))
    p.add_argument("--trials", type=int, metavar="INT")
    p.set_defaults(func=cmd_gradcheck)

    p = common(sub.add_parser("export-plots", help="tidy CSV tables for plotting"))
    p.add_argument("--history", nargs="+", metavar="PATH")
    p.add_argument("--report", nargs="+", metavar="PATH")
    p.set_defaults(func=cmd_export_plots)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cp = load_config(args.config)
        return args.func(args, cp)
    except UsageError as err:
        parser.print_usage(sys.stderr)
        print(f"autopool {args.command}: error: {err}", file=sys.stderr)
        return 2
    except (AutopoolError, ValueError) as err:
        print(f"autopool {args.command}: error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
