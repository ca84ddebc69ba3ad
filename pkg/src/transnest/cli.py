"""Command-line entry point: ``transnest {simulate,sppmi,fit,evaluate,report}``.

Every option can also come from a JSON object passed with ``--config``;
keys are the option names with dashes replaced by underscores, and flags
given on the command line win. Exit codes: 0 success, 2 configuration or
input error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import benchmarks, evaluation, pipeline, plotting, simgen
from .catalog import (
    dump_catalog,
    dumps_json,
    fmt,
    load_catalog,
    load_site_matrix,
    read_cooccurrence_csv,
    sppmi_from_cooccurrence,
    write_matrix_csv,
)
from .embeddings import read_embeddings_csv, write_embeddings_csv
from .errors import ConfigError, NumericalError, StageError
from .labels import read_labels_csv, write_labels_csv

logger = logging.getLogger("transnest")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3
REPORT_METRICS = evaluation.AUC_KEYS + ("f_err", "f_rare_err", "f_freq_err")


# ---------------------------------------------------------------------------
# small helpers


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def jsonable(obj):
    """Recursively convert numpy scalars/arrays and non-finite floats for JSON."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else str(x)
    if isinstance(obj, (frozenset, set)):
        return sorted(jsonable(v) for v in obj)
    return obj


def write_json(path, obj) -> None:
    Path(path).write_text(dumps_json(jsonable(obj)), encoding="utf-8")


def read_json(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from exc


def write_manifest(out: Path, command: str, config: dict, seed, files) -> None:
    manifest = {
        "command": command,
        "config": config,
        "seed": seed,
        "files": {name: sha256_file(out / name) for name in sorted(files)},
    }
    write_json(out / "manifest.json", manifest)


def parse_threshold(value):
    """``"tune"`` or a nonnegative float (``"inf"`` allowed)."""
    if value is None:
        return None
    if isinstance(value, str) and value.strip().lower() == "tune":
        return "tune"
    try:
        x = float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"threshold must be a number, 'inf' or 'tune', got {value!r}") from None
    if not x >= 0:
        raise ConfigError(f"threshold must be >= 0, got {value!r}")
    return x


def parse_site_weights(value):
    if value is None or (isinstance(value, str) and value.strip().lower() == "auto"):
        return "auto"
    parts = value.split(",") if isinstance(value, str) else list(value)
    try:
        w = tuple(float(p) for p in parts)
    except ValueError:
        raise ConfigError(f"--site-weights must be 'auto' or 'w1,w2', got {value!r}") from None
    if len(w) != 2:
        raise ConfigError(f"--site-weights needs two values, got {value!r}")
    return w


def _histogram(values, bins=20) -> dict:
    v = np.asarray([x for x in values if np.isfinite(x)], dtype=float)
    pos = v[v > 0]
    if pos.size == 0 or pos.min() == pos.max():
        return {"zeros": int((v == 0).sum()), "edges": [], "counts": [], "positive": int(pos.size)}
    edges = np.geomspace(pos.min(), pos.max(), bins + 1)
    counts, _ = np.histogram(pos, bins=edges)
    return {"zeros": int((v == 0).sum()), "edges": edges, "counts": counts, "positive": int(pos.size)}


# ---------------------------------------------------------------------------
# inputs


def load_inputs(args):
    """``(catalog, S1, S2, labels_or_None, data_manifest_or_None)``."""
    data = Path(args.data) if args.data else None
    path = lambda given, name: Path(given) if given else (data / name if data else None)  # noqa: E731
    cat_path, s1_path, s2_path = path(args.catalog, "catalog.json"), path(args.s1, "S1.csv"), path(args.s2, "S2.csv")
    if cat_path is None or s1_path is None or s2_path is None:
        raise ConfigError("give --data DIR or all of --catalog, --s1, --s2")
    catalog = load_catalog(cat_path)
    S1 = load_site_matrix(s1_path, catalog, 1)
    S2 = load_site_matrix(s2_path, catalog, 2)
    labels = None
    lab_path = path(getattr(args, "labels", None), "labels.csv")
    if lab_path is not None and lab_path.exists():
        labels = read_labels_csv(lab_path)
        labels.check_catalog(catalog.ids)
    manifest = None
    if data is not None and (data / "manifest.json").exists():
        manifest = read_json(data / "manifest.json")
    return catalog, S1, S2, labels, manifest


def resolve_rank(args, manifest) -> int:
    if args.rank is not None:
        return int(args.rank)
    if manifest and "r" in manifest.get("config", {}):
        return int(manifest["config"]["r"])
    raise ConfigError("--rank is required when the data directory has no simulation manifest")


def resolve_seed(args, manifest):
    if args.seed is not None:
        return int(args.seed)
    if manifest and manifest.get("seed") is not None:
        return int(manifest["seed"])
    return 0


# ---------------------------------------------------------------------------
# method fitting shared by fit and report


def fit_method(method, catalog, S1, S2, rank, labels=None, lam="tune", mu="tune", site_weights="auto", prep=None):
    """Fit one method; returns ``(embeddings, diagnostics, classification, tuning, prep)``."""
    if method not in benchmarks.METHODS:
        raise ConfigError(f"unknown method {method!r}; choose from {benchmarks.METHODS}")
    if prep is None:
        prep = pipeline.prepare(S1, S2, catalog, rank, site_weights)
    w = prep.site_weights
    diag = {"method": method, "rank": rank, "site_weights": list(w)}
    if method == "ssvd":
        # both sites' single-site factorizations: the initial embeddings
        return prep.initial, diag, None, None, prep
    if method == "ssg":
        base = benchmarks.ssvd(S2, rank)
        return benchmarks.ssg(S2, catalog, rank, base=base), diag, None, None, prep
    if method == "dp":
        return benchmarks.dp(S1, S2, catalog, rank, w), diag, None, None, prep
    if method == "bonmi":
        diag["variant"] = "BONMI (simplified): weighted overlap average, rotation-based block completion"
        return benchmarks.bonmi(S1, S2, catalog, rank, w), diag, None, None, prep

    tuning = None
    if lam == "tune" or mu == "tune":
        if labels is None:
            raise ConfigError("threshold tuning needs a labels file with a tuning split")
        d_l, d_m = evaluation.default_grid(prep)
        tuning = evaluation.tune_thresholds(
            prep, labels,
            lambdas=d_l if lam == "tune" else [lam],
            mus=d_m if mu == "tune" else [mu],
        )
        lam, mu = tuning.lam, tuning.mu
    res = pipeline.fit_prepared(prep, lam, mu)
    diag = dict(res.diagnostics, method=method)
    diag["statistic_histograms"] = {
        "cross_site": _histogram(diag["cross_site_statistics"].values()),
        "group": _histogram(diag["group_statistics"].values()),
    }
    return res.embeddings, diag, res.classification, tuning, prep


# ---------------------------------------------------------------------------
# subcommands


def cmd_simulate(args) -> int:
    overrides = dict(args.simulation or {})
    if args.seed is not None:
        overrides["seed"] = int(args.seed)
    cfg = simgen.preset(args.preset, **overrides)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    truth, S1, S2, catalog, labels = simgen.simulate(cfg)
    dump_catalog(catalog, out / "catalog.json")
    write_matrix_csv(out / "S1.csv", S1.feature_order, S1.matrix)
    write_matrix_csv(out / "S2.csv", S2.feature_order, S2.matrix)
    write_json(out / "truth.json", truth.to_document())
    write_labels_csv(out / "labels.csv", labels)
    files = ["catalog.json", "S1.csv", "S2.csv", "truth.json", "labels.csv"]
    config = dict(cfg.to_dict(), preset=args.preset)
    write_manifest(out, "simulate", config, cfg.seed, files)
    counts = catalog.counts()
    print(f"simulated {args.preset} seed={cfg.seed}: n={counts['n']} n_o={counts['n_o']} "
          f"G={counts['G']} pairs={len(labels)} -> {out}")
    return EXIT_OK


def cmd_sppmi(args) -> int:
    ids = None
    if args.catalog:
        catalog = load_catalog(args.catalog)
        ids = catalog.site_ids(args.site)
    table = read_cooccurrence_csv(args.cooccurrence, ids=ids)
    S = sppmi_from_cooccurrence(table, shift=args.shift)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_matrix_csv(out, table.ids, S)
    print(f"SPPMI matrix over {len(table.ids)} features (shift {args.shift:g}) -> {out}")
    return EXIT_OK


def cmd_fit(args) -> int:
    catalog, S1, S2, labels, manifest = load_inputs(args)
    rank = resolve_rank(args, manifest)
    seed = resolve_seed(args, manifest)
    lam, mu = parse_threshold(args.lam), parse_threshold(args.mu)
    weights = parse_site_weights(args.site_weights)
    if weights != "auto":
        pipeline.PipelineConfig(rank, site_weights=weights)  # validates
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    emb, diag, cls, tuning, _ = fit_method(args.method, catalog, S1, S2, rank, labels, lam, mu, weights)
    diag["seed"] = seed
    write_embeddings_csv(out / "embeddings.csv", emb)
    write_json(out / "diagnostics.json", diag)
    files = ["embeddings.csv", "diagnostics.json"]
    if cls is not None:
        write_json(out / "classification.json", cls.to_document())
        files.append("classification.json")
    if tuning is not None:
        write_json(out / "tuning.json", tuning.to_document())
        files.append("tuning.json")
    config = {"method": args.method, "rank": rank, "lambda": args.lam, "mu": args.mu,
              "site_weights": args.site_weights, "data": args.data}
    write_manifest(out, "fit", jsonable(config), seed, files)
    msg = f"fit {args.method} r={rank}"
    if cls is not None:
        msg += " " + " ".join(f"{k}={v}" for k, v in cls.sizes().items())
    print(msg + f" -> {out}")
    return EXIT_OK


def load_truth(path):
    return evaluation.TargetTruth.from_document(read_json(path))


def cmd_evaluate(args) -> int:
    data = Path(args.data) if args.data else None
    emb = read_embeddings_csv(args.embeddings)
    lab_path = args.labels or (data / "labels.csv" if data else None)
    truth_path = args.truth or (data / "truth.json" if data and (data / "truth.json").exists() else None)
    labels = read_labels_csv(lab_path) if lab_path else None
    truth = load_truth(truth_path) if truth_path else None
    if labels is None and truth is None:
        raise ConfigError("nothing to evaluate: give --labels and/or --truth")
    split = None if args.split == "all" else args.split
    report = evaluation.evaluate(emb, labels, truth, split=split)
    doc = report.to_document()
    text = dumps_json(jsonable(doc))
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text, encoding="utf-8")
        print(f"evaluation -> {out}")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def write_results_csv(path, rows) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(("method",) + REPORT_METRICS)
    for method, doc in rows:
        writer.writerow([method] + ["" if doc.get(k) is None else fmt(doc[k]) for k in REPORT_METRICS])
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def cmd_report(args) -> int:
    catalog, S1, S2, labels, manifest = load_inputs(args)
    if labels is None:
        raise ConfigError("report needs a labels file")
    rank = resolve_rank(args, manifest)
    seed = resolve_seed(args, manifest)
    data = Path(args.data) if args.data else None
    truth_path = args.truth or (data / "truth.json" if data and (data / "truth.json").exists() else None)
    truth = load_truth(truth_path) if truth_path else None
    lam, mu = parse_threshold(args.lam), parse_threshold(args.mu)
    weights = parse_site_weights(args.site_weights)
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    prep = pipeline.prepare(S1, S2, catalog, rank, weights)
    rows, extra = [], {}
    for method in methods:
        emb, diag, cls, tuning, _ = fit_method(method, catalog, S1, S2, rank, labels, lam, mu, weights, prep=prep)
        doc = evaluation.evaluate(emb, labels, truth).to_document()
        rows.append((method, doc))
        if method == "transnest":
            extra = {"diagnostics": diag, "classification": cls, "tuning": tuning}

    files = ["results.csv", "auc.png"]
    write_results_csv(out / "results.csv", rows)
    plotting.grouped_bars(rows, evaluation.AUC_KEYS, out / "auc.png",
                          title="pair AUC by category", ylabel="AUC", ylim=(0.4, 1.0))
    if truth is not None:
        plotting.grouped_bars(rows, ("f_err", "f_rare_err", "f_freq_err"), out / "frobenius.png",
                              title="target reconstruction error", ylabel="Frobenius error / n")
        files.append("frobenius.png")
    if extra:
        diag = extra["diagnostics"]
        plotting.statistic_histogram(diag["cross_site_statistics"].values(), out / "cross_site_statistics.png",
                                     threshold=diag["lambda"], title="cross-site statistics")
        plotting.statistic_histogram(diag["group_statistics"].values(), out / "group_statistics.png",
                                     threshold=diag["mu"], title="group statistics")
        files += ["cross_site_statistics.png", "group_statistics.png"]
        if extra["tuning"] is not None and len(extra["tuning"].table) > 1:
            plotting.tuning_heatmap(extra["tuning"].table, out / "tuning.png")
            write_json(out / "tuning.json", extra["tuning"].to_document())
            files += ["tuning.png", "tuning.json"]
    config = {"methods": methods, "rank": rank, "lambda": args.lam, "mu": args.mu,
              "site_weights": args.site_weights, "data": args.data}
    write_manifest(out, "report", jsonable(config), seed, files)
    for method, doc in rows:
        vals = " ".join(f"{k}={doc[k]:.3f}" for k in REPORT_METRICS if doc.get(k) is not None)
        print(f"{method:10s} {vals}")
    print(f"report -> {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def _add_inputs(p, labels=True):
    p.add_argument("--data", help="directory written by 'simulate' (catalog.json, S1.csv, S2.csv, labels.csv)")
    p.add_argument("--catalog", help="feature catalog JSON")
    p.add_argument("--s1", help="site-1 matrix CSV")
    p.add_argument("--s2", help="site-2 matrix CSV")
    if labels:
        p.add_argument("--labels", help="pair labels CSV (needed for tuning)")


def _add_fit_options(p):
    p.add_argument("--rank", type=int, help="embedding rank r (defaults to the simulation's r)")
    p.add_argument("--lambda", dest="lam", default="tune", help="cross-site threshold, 'inf' or 'tune'")
    p.add_argument("--mu", default="tune", help="group threshold, 'inf' or 'tune'")
    p.add_argument("--site-weights", default="auto", help="'auto' or 'w1,w2' summing to 1")
    p.add_argument("--seed", type=int, help="recorded in outputs (defaults to the simulation seed)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="transnest", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic two-site data set")
    p.add_argument("--config", help="JSON options; a 'simulation' object overrides generator fields")
    p.add_argument("--preset", default="C1", choices=sorted(simgen.PRESETS))
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_simulate, simulation=None)

    p = sub.add_parser("sppmi", help="build an SPPMI matrix from co-occurrence counts")
    p.add_argument("--config")
    p.add_argument("--cooccurrence", required=True, help="CSV of id_a,id_b,count")
    p.add_argument("--shift", type=float, default=1.0, help="negative-sampling shift k")
    p.add_argument("--catalog", help="restrict and order ids by this catalog")
    p.add_argument("--site", type=int, default=1, choices=(1, 2))
    p.add_argument("--out", required=True, help="output matrix CSV")
    p.set_defaults(func=cmd_sppmi)

    p = sub.add_parser("fit", help="fit TransNEST or a benchmark method")
    p.add_argument("--config")
    _add_inputs(p)
    p.add_argument("--method", default="transnest", choices=benchmarks.METHODS)
    _add_fit_options(p)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("evaluate", help="pair AUCs and Frobenius errors for an embeddings file")
    p.add_argument("--config")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--data", help="simulation directory supplying labels.csv and truth.json")
    p.add_argument("--labels")
    p.add_argument("--truth", help="truth JSON from 'simulate'")
    p.add_argument("--split", default="eval", choices=("eval", "tune", "all"))
    p.add_argument("--out", help="report JSON path (stdout if omitted)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", help="fit all methods, write results.csv and PNG figures")
    p.add_argument("--config")
    _add_inputs(p)
    p.add_argument("--truth", help="truth JSON (defaults to DATA/truth.json)")
    p.add_argument("--methods", default=",".join(benchmarks.METHODS))
    _add_fit_options(p)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_report)
    return parser


def _subparser(parser, name):
    for action in parser._subparsers._group_actions:
        if name in action.choices:
            return action.choices[name]
    raise KeyError(name)


def parse_args(argv=None):
    """Read ``--config`` first, apply it as subcommand defaults, then parse."""
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    pre.add_argument("command", nargs="?")
    known, _ = pre.parse_known_args([a for a in argv if a not in ("-v", "-vv", "--verbose")])
    if known.config and known.command in parser._subparsers._group_actions[0].choices:
        doc = read_json(known.config)
        if not isinstance(doc, dict):
            raise ConfigError(f"{known.config}: config must be a JSON object")
        sp = _subparser(parser, known.command)
        valid = {a.dest for a in sp._actions} | ({"simulation"} if known.command == "simulate" else set())
        aliases = {"lambda": "lam", "site-weights": "site_weights"}
        defaults = {}
        for key, value in doc.items():
            dest = aliases.get(key, key.replace("-", "_"))
            if dest not in valid or dest in ("help", "config"):
                raise ConfigError(f"{known.config}: unknown option {key!r} for '{known.command}'")
            defaults[dest] = value
        # required options given in the config must not trip argparse
        for action in sp._actions:
            if action.dest in defaults and action.required:
                action.required = False
        sp.set_defaults(**defaults)
    return parser.parse_args(argv)


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
    except ConfigError as exc:
        print(f"transnest: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except StageError as exc:
        code = EXIT_CONFIG if isinstance(exc.cause, ConfigError) else EXIT_NUMERICAL
        kind = "config error" if code == EXIT_CONFIG else "numerical failure"
        print(f"transnest: {kind}: {exc}", file=sys.stderr)
        return code
    except ConfigError as exc:
        print(f"transnest: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"transnest: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"transnest: cannot access {exc.filename or ''}: {exc.strerror or exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
