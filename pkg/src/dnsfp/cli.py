"""Command-line entry point: ``dnsfp <subcommand> [options]``.

Every subcommand writes its report to ``--out`` (stdout when omitted) and a
run manifest with the resolved parameters, seeds and SHA-256 digests of the
inputs next to it. Exit status: 0 success, 1 usage error, 2 data error.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
from dataclasses import asdict

import numpy as np

from . import __version__
from .censorship import analyze, length_histogram, load_blacklist, load_ranking
from .defenses import PRESETS, PaddingPolicy, apply_to_dataset, derive_constant, load_policy
from .evaluation import OpenWorldConfig, cross_dataset, cross_validate, make_classifier, open_world
from .forest import top_k_features
from .traces import SynthProfile, generate_synthetic, load_dataset, save_dataset
from .uniqueness import entropy_csv, entropy_curve


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _int_list(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _int_pair(text):
    vals = _int_list(text)
    if len(vals) != 2:
        raise argparse.ArgumentTypeError(f"expected MIN,MAX, got {text!r}")
    return tuple(vals)


def _digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, default=_json_default) + "\n"


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, (np.ndarray, tuple, set, frozenset)):
        return list(o)
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def _emit(text: str, path):
    if path is None:
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)


def _write_manifest(args, inputs, seeds, report_path):
    config = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "manifest")}
    manifest = {
        "subcommand": args.command,
        "config": config,
        "seeds": seeds,
        "input_digests": {str(p): _digest(p) for p in inputs if p is not None},
        "tool_version": __version__,
    }
    path = args.manifest or (f"{report_path}.manifest.json" if report_path else None)
    if path is None:
        sys.stderr.write(_dump(manifest))
    else:
        _emit(_dump(manifest), path)


def _model(args):
    return make_classifier(n_trees=args.trees, random_state=args.seed, n_jobs=args.threads)


# ---------------------------------------------------------------------------
# subcommands

def cmd_synth(args):
    profile = SynthProfile(n_classes=args.classes, samples_per_class=args.samples,
                           resources_per_class_range=args.resources, noise_rate=args.noise,
                           seed=args.seed, label_prefix=args.label_prefix)
    save_dataset(generate_synthetic(profile), args.out, args.format)
    _write_manifest(args, [], {"synth": args.seed}, args.out)


def cmd_convert(args):
    save_dataset(load_dataset(args.data, args.input_format), args.out, args.format)
    _write_manifest(args, [args.data], {}, args.out)


def cmd_inspect(args):
    d = load_dataset(args.data)
    lengths = np.array([len(t) for t in d])
    volumes = np.array([t.total_bytes() for t in d]) / 1e6
    counts = d.class_counts()
    report = {
        "name": d.name,
        "classes": len(d.classes),
        "traces": len(d),
        "samples_per_class": {"min": min(counts.values()), "max": max(counts.values())},
        "trace_length": {"mean": float(lengths.mean()), "std": float(lengths.std()),
                         "min": int(lengths.min()), "median": float(np.median(lengths)),
                         "max": int(lengths.max())},
        "total_bytes": int(sum(t.total_bytes() for t in d)),
        "volume_mb": {"mean": float(volumes.mean()), "std": float(volumes.std())},
    }
    _emit(_dump(report), args.out)
    _write_manifest(args, [args.data], {}, args.out)


def cmd_cv(args):
    d = load_dataset(args.data)
    rep = cross_validate(d, _model(args), folds=args.folds, seed=args.seed)
    _emit(rep.to_json() + "\n", args.out)
    if args.confusion:
        fmt = "dot" if args.confusion.endswith(".dot") else "csv"
        if fmt == "dot":
            rep.confusion.to_dot(args.confusion)
        else:
            rep.confusion.to_csv(args.confusion)
    if args.per_class:
        with open(args.per_class, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["label", "precision", "recall", "f1"])
            for lab, m in rep.per_class.items():
                w.writerow([lab, m["precision"], m["recall"], m["f1"]])
    _write_manifest(args, [args.data], {"cv": args.seed, "forest": args.seed}, args.out)


def cmd_cross(args):
    train, test = load_dataset(args.train), load_dataset(args.test)
    model = _model(args)
    rep = cross_dataset(train, test, model)
    _emit(_dump(rep.to_dict()), args.out)
    if args.importances:
        fitted = rep.model
        names = fitted.named_steps["ngrams"].space_.names()
        top = top_k_features(fitted.named_steps["forest"].feature_importances_, names,
                             len(names))
        with open(args.importances, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["feature", "importance"])
            w.writerows(top)
    _write_manifest(args, [args.train, args.test], {"forest": args.seed}, args.out)


def cmd_openworld(args):
    d = load_dataset(args.data)
    extra = load_dataset(args.extra) if args.extra else None
    cfg = OpenWorldConfig(monitored_fraction=args.monitored_fraction,
                          training_class_fraction=args.training_fraction,
                          folds=args.folds, seed=args.seed)
    roc = open_world(d, extra, cfg, _model(args))
    _emit(_dump(roc.to_dict()), args.out)
    if args.roc:
        roc.to_csv(args.roc)
    _write_manifest(args, [args.data, args.extra], {"openworld": args.seed,
                                                    "forest": args.seed}, args.out)


def cmd_defend(args):
    d = load_dataset(args.data)
    if args.policy in PRESETS:
        policy = PRESETS[args.policy]
    elif args.policy == "perfect":
        policy = PaddingPolicy.perfect(derive_constant(d))
    else:
        policy = load_policy(args.policy)
    defended, overhead = apply_to_dataset(d, policy)
    save_dataset(defended, args.out)
    report = {"policy": asdict(policy), "overhead": overhead.to_dict()}
    if policy.mode == "cell":
        report["note"] = "cell mode approximates DNS over Tor by size quantization only"
    _emit(_dump(report), args.report)
    inputs = [args.data] + ([args.policy] if os.path.isfile(args.policy) else [])
    _write_manifest(args, inputs, {}, args.out)


def cmd_entropy(args):
    d = load_dataset(args.data)
    reports = entropy_curve(d, args.worlds, args.lmax, args.resamples, args.seed)
    _emit(entropy_csv(reports), args.out)
    if args.report:
        _emit(_dump([r.to_dict() for r in reports]), args.report)
    _write_manifest(args, [args.data], {"entropy": args.seed}, args.out)


def cmd_censor(args):
    ranking = load_ranking(args.ranking)
    blacklist = load_blacklist(args.blacklist)
    rep = analyze(ranking, blacklist)
    out = rep.to_dict()
    out["length_histogram"] = {str(k): v for k, v in length_histogram(ranking).items()}
    _emit(_dump(out), args.out)
    if args.table:
        rep.to_csv(args.table)
    _write_manifest(args, [args.ranking, args.blacklist], {}, args.out)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="dnsfp", description="Traffic analysis of encrypted DNS traces.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, func, help):
        sp = sub.add_parser(name, help=help)
        sp.set_defaults(func=func)
        sp.add_argument("--manifest", help="run manifest path (default: <out>.manifest.json)")
        return sp

    def model_flags(sp):
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--trees", type=int, default=100)
        sp.add_argument("--threads", type=int, default=1)

    sp = add("synth", cmd_synth, "generate a synthetic trace dataset")
    sp.add_argument("--classes", type=int, default=50)
    sp.add_argument("--samples", type=int, default=20)
    sp.add_argument("--resources", type=_int_pair, default=(2, 8), metavar="MIN,MAX")
    sp.add_argument("--noise", type=float, default=0.1)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--label-prefix", default="site")
    sp.add_argument("-o", "--out", required=True)
    sp.add_argument("--format", choices=("jsonl", "csv"))

    sp = add("convert", cmd_convert, "convert between jsonl and csv trace files")
    sp.add_argument("--data", required=True)
    sp.add_argument("--input-format", choices=("jsonl", "csv"))
    sp.add_argument("-o", "--out", required=True)
    sp.add_argument("--format", choices=("jsonl", "csv"))

    sp = add("inspect", cmd_inspect, "print dataset statistics")
    sp.add_argument("--data", required=True)
    sp.add_argument("-o", "--out")

    sp = add("cv", cmd_cv, "stratified k-fold cross-validation")
    sp.add_argument("--data", required=True)
    sp.add_argument("--folds", type=int, default=10)
    model_flags(sp)
    sp.add_argument("-o", "--out")
    sp.add_argument("--confusion", help="confusion matrix export (.csv or .dot)")
    sp.add_argument("--per-class", help="per-class precision/recall/F1 CSV")

    sp = add("cross", cmd_cross, "train on one dataset, test on another")
    sp.add_argument("--train", required=True)
    sp.add_argument("--test", required=True)
    model_flags(sp)
    sp.add_argument("-o", "--out")
    sp.add_argument("--importances", help="feature importance CSV of the trained forest")

    sp = add("openworld", cmd_openworld, "open-world evaluation with a threshold sweep")
    sp.add_argument("--data", required=True)
    sp.add_argument("--extra", help="additional unmonitored traces")
    sp.add_argument("--monitored-fraction", type=float, default=0.01)
    sp.add_argument("--training-fraction", type=float, default=0.10)
    sp.add_argument("--folds", type=int, default=10)
    model_flags(sp)
    sp.add_argument("-o", "--out")
    sp.add_argument("--roc", help="ROC curve CSV")

    sp = add("defend", cmd_defend, "apply a padding defense to a dataset")
    sp.add_argument("--data", required=True)
    sp.add_argument("--policy", required=True,
                    help="policy JSON file, 'perfect', or one of: " + ", ".join(PRESETS))
    sp.add_argument("-o", "--out", required=True)
    sp.add_argument("--report", help="overhead report JSON (default: stdout)")

    sp = add("entropy", cmd_entropy, "conditional entropy of partial traces")
    sp.add_argument("--data", required=True)
    sp.add_argument("--worlds", type=_int_list, required=True)
    sp.add_argument("--lmax", type=int, default=20)
    sp.add_argument("--resamples", type=int, default=3)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("-o", "--out")
    sp.add_argument("--report", help="full entropy report JSON")

    sp = add("censor", cmd_censor, "domain-length blocking analysis")
    sp.add_argument("--ranking", required=True)
    sp.add_argument("--blacklist", required=True)
    sp.add_argument("-o", "--out")
    sp.add_argument("--table", help="per-length CSV table")
    return p


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        sys.stderr.write(f"{exc}\n")
        return 1
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (ValueError, OSError, KeyError) as exc:
        sys.stderr.write(f"dnsfp {args.command}: error: {exc}\n")
        return 2
    return 0


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
