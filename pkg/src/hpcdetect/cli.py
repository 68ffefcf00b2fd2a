"""``hpcdetect`` command line: collect, synth, select-features, train, evaluate, validate, detect, report.

Option values resolve as flags > ``HPCDETECT_<OPTION>`` environment variables >
``--config`` JSON file (top-level keys or a section named after the subcommand)
> built-in defaults. Every result file embeds the resolved options and the
SHA-256 of each input file, and contains nothing time-dependent.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .dataset import SplitSpec, file_sha256, load_csv, save_csv, split
from .detector import DetectionSummary, DetectorConfig, run_detector, window_accuracy, write_alert
from .errors import HPCDetectError, InvalidConfig, PlatformUnsupported
from .evaluation import confusion, cross_validate, metrics, roc_all
from .events import SamplingConfig, event_names, lookup
from .features import distribution_summary, pca_rank, rf_importance
from .learners import ALGORITHMS, load_model, save_model, train
from .profiles import ProfileLibrary, build_corpus, default_library, scenario_trace
from .trace import open_replay, write_trace

log = logging.getLogger("hpcdetect")

EXIT_OK, EXIT_ERROR, EXIT_ALERT, EXIT_PLATFORM, EXIT_USAGE = 0, 1, 2, 3, 64
ENV_PREFIX = "HPCDETECT_"


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# (dest, type, default); every flag is declared with default=None so that
# an absent flag falls through to env, config file and then these values.
DEFAULTS = {
    "global": [("seed", int, 1), ("out_dir", str, "."), ("verbose", int, 0)],
    "collect": [("pid", int, None), ("events", str, ",".join(("LL_ACCESS", "L1D_WRITE", "DTLB_WRITE", "DTLB_READ"))),
                ("interval", int, 1), ("duration", int, 1000), ("out", str, "trace.csv"), ("label", int, None),
                ("max_group_size", int, 4)],
    "synth": [("profiles", str, None), ("validation_seed", int, None), ("train_out", str, "train.csv"),
              ("validation_out", str, "validation.csv"), ("dump_profiles", str, None),
              ("trace_scenarios", str, None), ("trace_rows", int, 5000)],
    "select-features": [("data", str, None), ("method", str, "rf"), ("m", int, 4), ("trees", int, 100),
                        ("max_depth", int, 12), ("out", str, "selection.json")],
    "train": [("data", str, None), ("algo", str, "adaboost"), ("features", str, None), ("selection", str, None),
              ("hyper", str, None), ("train_fraction", float, None), ("test_out", str, None),
              ("out", str, "model.json")],
    "evaluate": [("model", str, None), ("data", str, None), ("kfold", int, None), ("out", str, "evaluation.json"),
                 ("roc_csv", str, None)],
    "validate": [("model", str, None), ("data", str, None), ("out", str, "validation_report.json")],
    "detect": [("model", str, None), ("trace", str, None), ("pid", int, None), ("events", str, None),
               ("interval", int, 1), ("duration", int, None), ("window", int, 50), ("threshold", float, 0.6),
               ("cooldown", int, 5000), ("alerts", str, "-"), ("out", str, "detect_summary.json"),
               ("fail_on_alert", bool, False), ("threaded", bool, False)],
    "report": [("data", str, None), ("bins", int, 20), ("out", str, "distributions.json"),
               ("csv", str, "distributions.csv")],
}


def _coerce(value, typ, name):
    if value is None:
        return None
    if typ is bool:
        if isinstance(value, bool):
            return value
        if str(value).lower() in ("1", "true", "yes", "on"):
            return True
        if str(value).lower() in ("0", "false", "no", "off", ""):
            return False
        raise UsageError(f"{name}: expected a boolean, got {value!r}")
    try:
        return typ(value)
    except (TypeError, ValueError):
        raise UsageError(f"{name}: expected {typ.__name__}, got {value!r}") from None


def resolve(args, environ=None):
    """Fill every option by precedence flags > env > config file > defaults."""
    env = os.environ if environ is None else environ
    file_cfg = {}
    if getattr(args, "config", None):
        try:
            file_cfg = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config file {args.config}: {exc}") from None
    section = file_cfg.get(args.command, {}) if isinstance(file_cfg.get(args.command), dict) else {}
    resolved = {}
    for dest, typ, default in DEFAULTS["global"] + DEFAULTS[args.command]:
        key = dest.replace("-", "_")
        flag = getattr(args, key, None)
        if flag is not None and flag is not False:
            val = flag
        elif ENV_PREFIX + key.upper() in env:
            val = env[ENV_PREFIX + key.upper()]
        elif key in section:
            val = section[key]
        elif key in file_cfg and not isinstance(file_cfg[key], dict):
            val = file_cfg[key]
        else:
            val = default
        resolved[key] = _coerce(val, typ, key)
    return resolved


def _path(cfg, key):
    p = cfg.get(key)
    if p is None or p == "-":
        return p
    p = Path(p)
    return p if p.is_absolute() else Path(cfg["out_dir"]) / p


def _input(cfg, key):
    if not cfg.get(key):
        raise UsageError(f"--{key.replace('_', '-')} is required")
    p = Path(cfg[key])
    if not p.exists():
        raise UsageError(f"{p}: no such file")
    return p


def _write_json(path, doc):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _envelope(command, cfg, inputs, result):
    return {
        "tool": "hpcdetect",
        "version": __version__,
        "command": command,
        "config": {k: v for k, v in sorted(cfg.items()) if k != "verbose"},
        "inputs": {str(p): file_sha256(p) for p in inputs},
        "result": result,
    }


def _names(text):
    names = [n.strip() for n in text.split(",") if n.strip()]
    try:
        return [lookup(n).name for n in names]
    except KeyError as exc:
        raise UsageError(exc.args[0]) from None


def _hyper(text):
    out = {}
    for item in (text or "").split(","):
        if not item.strip():
            continue
        if "=" not in item:
            raise UsageError(f"hyperparameter {item!r} is not key=value")
        k, v = item.split("=", 1)
        try:
            out[k.strip()] = json.loads(v)
        except json.JSONDecodeError:
            out[k.strip()] = v.strip()
    return out


def _fmt_metrics(rep):
    lines = [f"accuracy {rep.accuracy:.5f}  macro P/R/F1 {rep.macro_precision:.4f}/"
             f"{rep.macro_recall:.4f}/{rep.macro_f1:.4f}"]
    for name in rep.precision:
        lines.append(f"  {name:<10} support {rep.support[name]:>7}  P {rep.precision[name]:.4f}  "
                     f"R {rep.recall[name]:.4f}  F1 {rep.f1[name]:.4f}")
    return "\n".join(lines)


def _fmt_cm(cm):
    names = cm.to_dict()["class_set"]
    w = max(8, max(len(n) for n in names) + 1)
    rows = ["".rjust(w) + "".join(n.rjust(w) for n in names)]
    for n, r in zip(names, cm.counts):
        rows.append(n.rjust(w) + "".join(str(int(c)).rjust(w) for c in r))
    return "\n".join(rows)


# -- subcommands ---------------------------------------------------------

def cmd_collect(cfg):
    from .live import open_live

    if cfg["pid"] is None:
        raise UsageError("--pid is required")
    names = _names(cfg["events"])
    try:
        sc = SamplingConfig.with_env(cfg["pid"], names, cfg["interval"], cfg["max_group_size"])
    except InvalidConfig as exc:
        raise UsageError(str(exc)) from None
    out = _path(cfg, "out")
    out.parent.mkdir(parents=True, exist_ok=True)
    if cfg["duration"] <= 0:
        write_trace(out, names, [])
        print(f"wrote empty trace {out}")
        return EXIT_OK
    label = cfg["label"]
    with open_live(sc, duration_ms=cfg["duration"]) as stream:
        samples = list(stream)
    if label is not None:
        for s in samples:
            s.label = label
    n = write_trace(out, names, samples)
    print(f"collected {n} samples from pid {cfg['pid']} into {out}")
    return EXIT_OK


def cmd_synth(cfg):
    lib = ProfileLibrary.load(_input(cfg, "profiles")) if cfg["profiles"] else default_library()
    if cfg["dump_profiles"]:
        lib.save(_path(cfg, "dump_profiles"))
    tr, va = build_corpus(lib, seed=cfg["seed"], validation_seed=cfg["validation_seed"])
    inputs = [Path(cfg["profiles"])] if cfg["profiles"] else []
    extra = {"seed": cfg["seed"], "validation_seed": cfg["validation_seed"],
             "profiles": {str(p): file_sha256(p) for p in inputs}}
    for ds, key in ((tr, "train_out"), (va, "validation_out")):
        p = _path(cfg, key)
        p.parent.mkdir(parents=True, exist_ok=True)
        save_csv(ds, p, extra=extra)
        counts = {k.name: v for k, v in ds.class_counts.items()}
        print(f"{p}: {len(ds)} rows {counts}")
    for name in (cfg["trace_scenarios"] or "").split(","):
        if not name.strip():
            continue
        try:
            ds = scenario_trace(name.strip(), cfg["trace_rows"], cfg["seed"], lib)
        except KeyError:
            raise UsageError(f"unknown scenario {name!r}; library has {', '.join(lib.profiles)}") from None
        p = Path(cfg["out_dir"]) / f"trace_{name.strip()}.csv"
        n = write_trace(p, ds.feature_names, ds.samples())
        print(f"{p}: {n} replay samples of {name.strip()}")
    return EXIT_OK


def cmd_select(cfg):
    path = _input(cfg, "data")
    ds = load_csv(path)
    if cfg["method"] == "rf":
        rep = rf_importance(ds, trees=cfg["trees"], seed=cfg["seed"], m=cfg["m"], max_depth=cfg["max_depth"])
    elif cfg["method"] == "pca":
        from .dataset import fit_standardizer
        std = fit_standardizer(ds.X)
        rep = pca_rank(ds.with_X(std.transform(ds.X)), m=cfg["m"])
    else:
        raise UsageError("--method must be rf or pca")
    out = _write_json(_path(cfg, "out"), _envelope("select-features", cfg, [path], rep.to_dict()))
    for i, n in enumerate(rep.ranking[:max(cfg["m"], 10)], 1):
        mark = "*" if n in rep.selected else " "
        print(f"{mark} {i:>2}. {n:<22} {rep.scores[n]:.6f}")
    print(f"selected {','.join(rep.selected)} -> {out}")
    return EXIT_OK


def cmd_train(cfg):
    path = _input(cfg, "data")
    ds = load_csv(path)
    inputs = [path]
    if cfg["features"]:
        names = _names(cfg["features"])
    elif cfg["selection"]:
        sel = _input(cfg, "selection")
        inputs.append(sel)
        names = json.loads(sel.read_text(encoding="utf-8"))["result"]["selected"]
    else:
        names = list(ds.feature_names)
    ds = ds.select(names)
    if cfg["algo"].upper() not in ALGORITHMS:
        raise UsageError(f"--algo must be one of {', '.join(a.lower() for a in ALGORITHMS)}")
    if cfg["train_fraction"] is not None:
        tr, te = split(ds, SplitSpec(cfg["train_fraction"], cfg["seed"]))
        if cfg["test_out"]:
            save_csv(te, _path(cfg, "test_out"))
    else:
        tr, te = ds, None
    try:
        model = train(cfg["algo"], tr, _hyper(cfg["hyper"]), cfg["seed"])
    except ValueError as exc:
        if "hyperparameter" in str(exc):
            raise UsageError(str(exc)) from None
        raise
    out = _path(cfg, "out")
    out.parent.mkdir(parents=True, exist_ok=True)
    save_model(model, out)
    result = {"model": str(out), "model_sha256": file_sha256(out), "algorithm": model.algorithm,
              "features": model.feature_names, "rows": len(tr), "hyperparams": model.hyperparams,
              "converged": bool(model.converged)}
    print(f"trained {model.algorithm} on {len(tr)} rows, features {','.join(names)} -> {out}")
    if te is not None:
        cm = confusion(model, te)
        result["holdout"] = {"confusion": cm.to_dict(), "metrics": metrics(cm).to_dict()}
        print(f"holdout ({len(te)} rows)\n{_fmt_cm(cm)}\n{_fmt_metrics(metrics(cm))}")
    _write_json(out.with_name(out.stem + ".summary.json"), _envelope("train", cfg, inputs, result))
    return EXIT_OK


def _write_roc_csv(path, curves):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["class", "threshold", "fpr", "tpr"])
        for c in curves:
            name = c.to_dict()["class"]
            for t, f, p in zip(c.thresholds, c.fpr, c.tpr):
                w.writerow([name, repr(float(t)), repr(float(f)), repr(float(p))])


def _evaluate_on(model, ds):
    cm = confusion(model, ds)
    rep = metrics(cm)
    curves = roc_all(model, ds)
    return cm, rep, curves


def cmd_evaluate(cfg):
    mpath, dpath = _input(cfg, "model"), _input(cfg, "data")
    model = load_model(mpath)
    ds = load_csv(dpath)
    result = {"algorithm": model.algorithm, "features": model.feature_names}
    if cfg["kfold"]:
        cv = cross_validate(model.algorithm, ds.select(model.feature_names), cfg["kfold"],
                            model.hyperparams, cfg["seed"])
        result["cross_validation"] = cv.to_dict()
        print(f"{cfg['kfold']}-fold cross-validation of {model.algorithm}")
        for i, a in enumerate(cv.fold_accuracies, 1):
            print(f"  fold {i:>2}: {a:.5f}")
        print(f"mean accuracy {cv.mean_accuracy:.5f} (std {cv.std_accuracy:.5f})")
    cm, rep, curves = _evaluate_on(model, ds)
    result.update({"confusion": cm.to_dict(), "metrics": rep.to_dict(),
                   "roc": [c.to_dict() for c in curves]})
    print(f"{_fmt_cm(cm)}\n{_fmt_metrics(rep)}")
    for c in curves:
        print(f"  AUC {c.to_dict()['class']:<10} {c.auc:.5f}")
    if cfg["roc_csv"]:
        _write_roc_csv(_path(cfg, "roc_csv"), curves)
    _write_json(_path(cfg, "out"), _envelope("evaluate", cfg, [mpath, dpath], result))
    return EXIT_OK


def cmd_validate(cfg):
    mpath, dpath = _input(cfg, "model"), _input(cfg, "data")
    model = load_model(mpath)
    ds = load_csv(dpath)
    cm, rep, _ = _evaluate_on(model, ds)
    result = {"confusion": cm.to_dict(), "metrics": rep.to_dict(), "rows": len(ds)}
    if ds.scenarios is not None:
        pred = model.predict(ds.select(model.feature_names).X)
        result["per_scenario_accuracy"] = {
            n: float(np.mean(pred[ds.scenarios == n] == ds.y[ds.scenarios == n])) for n in ds.scenario_names()}
    print(f"validation on {len(ds)} rows\n{_fmt_cm(cm)}\n{_fmt_metrics(rep)}")
    _write_json(_path(cfg, "out"), _envelope("validate", cfg, [mpath, dpath], result))
    return EXIT_OK


def cmd_detect(cfg):
    mpath = _input(cfg, "model")
    model = load_model(mpath)
    dcfg = DetectorConfig(cfg["window"], cfg["threshold"], cfg["cooldown"])
    inputs = [mpath]
    if cfg["trace"]:
        paths = [Path(p) for p in cfg["trace"].split(",")]
        for p in paths:
            if not p.exists():
                raise UsageError(f"{p}: no such file")
        inputs += paths
        streams = [open_replay(p) for p in paths]
    elif cfg["pid"] is not None:
        from .live import open_live
        names = _names(cfg["events"]) if cfg["events"] else list(model.feature_names)
        streams = [open_live(SamplingConfig.with_env(cfg["pid"], names, cfg["interval"]),
                             duration_ms=cfg["duration"])]
    else:
        raise UsageError("detect needs --trace or --pid")
    summary = DetectionSummary()
    verdicts = []
    fh = sys.stdout if cfg["alerts"] == "-" else open(_path(cfg, "alerts"), "w", encoding="utf-8")
    try:
        for v in run_detector(model, streams, dcfg, threaded=cfg["threaded"]):
            summary.add(v)
            verdicts.append(v)
            if getattr(v, "alert", None) is not None:
                write_alert(fh, v)
    finally:
        if fh is not sys.stdout:
            fh.close()
    acc, nwin = window_accuracy(verdicts, dcfg.window)
    result = summary.to_dict()
    result["attack_windows"] = nwin
    result["attack_window_accuracy"] = None if nwin == 0 else acc
    _write_json(_path(cfg, "out"), _envelope("detect", cfg, inputs, result))
    print(f"{summary.samples} samples, {summary.alerts} alerts"
          + (f", attack-window accuracy {acc:.5f} over {nwin} windows" if nwin else ""), file=sys.stderr)
    if summary.alerts and cfg["fail_on_alert"]:
        return EXIT_ALERT
    return EXIT_OK


def cmd_report(cfg):
    path = _input(cfg, "data")
    ds = load_csv(path)
    rows = distribution_summary(ds, bins=cfg["bins"])
    out_csv = _path(cfg, "csv")
    out_csv.parent.mkdir(parents=True, exist_ok=True)
    cols = ["scenario", "feature", "count", "minimum", "p25", "median", "p75", "maximum", "mean", "stddev"]
    with open(out_csv, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            d = r.to_dict()
            w.writerow([d[c] if isinstance(d[c], (str, int)) else repr(float(d[c])) for c in cols])
    _write_json(_path(cfg, "out"), _envelope("report", cfg, [path], [r.to_dict() for r in rows]))
    focus = [f for f in ("PAGE_FAULTS", "BPU_ACCESS", "BPU_MISS") if f in ds.feature_names]
    if focus:
        print(f"{'scenario':<18}" + "".join(f"{f + ' mean':>20}" for f in focus))
        by = {(r.scenario, r.feature): r for r in rows}
        for scen in dict.fromkeys(r.scenario for r in rows):
            print(f"{scen:<18}" + "".join(f"{by[(scen, f)].mean:>20.1f}" for f in focus))
    print(f"wrote {out_csv} and {_path(cfg, 'out')}")
    return EXIT_OK


COMMANDS = {
    "collect": cmd_collect, "synth": cmd_synth, "select-features": cmd_select, "train": cmd_train,
    "evaluate": cmd_evaluate, "validate": cmd_validate, "detect": cmd_detect, "report": cmd_report,
}


def build_parser():
    p = Parser(prog="hpcdetect", description="Side-channel attack detection from performance counters.")
    p.add_argument("--version", action="version", version=f"hpcdetect {__version__}")
    common = Parser(add_help=False)
    common.add_argument("--seed", type=int)
    common.add_argument("--out-dir", dest="out_dir")
    common.add_argument("--config", help="JSON file of option values")
    common.add_argument("-v", "--verbose", action="count")
    sub = p.add_subparsers(dest="command", required=True, parser_class=Parser)

    s = sub.add_parser("collect", parents=[common], help="sample live counters of a process to a trace CSV")
    s.add_argument("--pid", type=int)
    s.add_argument("--events", help=f"comma-separated; catalog: {','.join(event_names())}")
    s.add_argument("--interval", type=int, help="sampling interval in ms")
    s.add_argument("--duration", type=int, help="duration in ms")
    s.add_argument("--label", type=int, choices=range(5))
    s.add_argument("--max-group-size", dest="max_group_size", type=int)
    s.add_argument("--out")

    s = sub.add_parser("synth", parents=[common], help="generate the synthetic train/test and validation corpora")
    s.add_argument("--profiles", help="profile library JSON (default: shipped library)")
    s.add_argument("--validation-seed", dest="validation_seed", type=int)
    s.add_argument("--train-out", dest="train_out")
    s.add_argument("--validation-out", dest="validation_out")
    s.add_argument("--dump-profiles", dest="dump_profiles", help="also write the library used")
    s.add_argument("--trace-scenarios", dest="trace_scenarios",
                   help="comma-separated scenarios to also write as replay traces trace_<name>.csv")
    s.add_argument("--trace-rows", dest="trace_rows", type=int)

    s = sub.add_parser("select-features", parents=[common], help="rank events and pick the top m")
    s.add_argument("--data")
    s.add_argument("--method", choices=["rf", "pca"])
    s.add_argument("--m", type=int)
    s.add_argument("--trees", type=int)
    s.add_argument("--max-depth", dest="max_depth", type=int)
    s.add_argument("--out")

    s = sub.add_parser("train", parents=[common], help="train a classifier")
    s.add_argument("--data")
    s.add_argument("--algo", type=str.lower, choices=[a.lower() for a in ALGORITHMS])
    s.add_argument("--features", help="comma-separated event names")
    s.add_argument("--selection", help="select-features output to take the feature list from")
    s.add_argument("--hyper", help="key=value[,key=value]")
    s.add_argument("--train-fraction", dest="train_fraction", type=float)
    s.add_argument("--test-out", dest="test_out")
    s.add_argument("--out")

    s = sub.add_parser("evaluate", parents=[common], help="confusion matrix, metrics, ROC, optional k-fold CV")
    s.add_argument("--model")
    s.add_argument("--data")
    s.add_argument("--kfold", type=int)
    s.add_argument("--roc-csv", dest="roc_csv")
    s.add_argument("--out")

    s = sub.add_parser("validate", parents=[common], help="score a model on an unseen validation corpus")
    s.add_argument("--model")
    s.add_argument("--data")
    s.add_argument("--out")

    s = sub.add_parser("detect", parents=[common], help="run the online detector on traces or a live pid")
    s.add_argument("--model")
    s.add_argument("--trace", help="comma-separated trace CSV paths")
    s.add_argument("--pid", type=int)
    s.add_argument("--events")
    s.add_argument("--interval", type=int)
    s.add_argument("--duration", type=int)
    s.add_argument("--window", type=int)
    s.add_argument("--threshold", type=float)
    s.add_argument("--cooldown", type=int, help="ms between repeated alerts per (pid, class)")
    s.add_argument("--alerts", help="JSON-lines alert output, '-' for stdout")
    s.add_argument("--fail-on-alert", dest="fail_on_alert", action="store_true", default=None)
    s.add_argument("--threaded", action="store_true", default=None)
    s.add_argument("--out")

    s = sub.add_parser("report", parents=[common], help="per-scenario feature distributions")
    s.add_argument("--data")
    s.add_argument("--bins", type=int)
    s.add_argument("--csv")
    s.add_argument("--out")
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve(args)
        logging.basicConfig(level=logging.DEBUG if cfg["verbose"] > 1 else
                            logging.INFO if cfg["verbose"] else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return COMMANDS[args.command](cfg)
    except UsageError as exc:
        print(f"hpcdetect {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InvalidConfig as exc:
        print(f"hpcdetect {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except PlatformUnsupported as exc:
        print(f"hpcdetect {args.command}: platform unsupported: {exc}", file=sys.stderr)
        return EXIT_PLATFORM
    except HPCDetectError as exc:
        print(f"hpcdetect {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
