"""Command-line entry point: ``ladder-lambda <subcommand> [flags]``.

Gap flags are the two coefficients of ``w_g = gap_open + gap_extend * g``,
so a gap of length one costs ``gap_open + gap_extend``.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .scoring import BLASTP_SCHEMES, BUNDLED_MATRICES, ScoringError, example_scheme, load_scheme
from .trial import ConfigurationError, default_trial_model

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2

DEFAULTS = {
    "matrix": "BLOSUM62",
    "freqs": None,
    "gap_open": None,
    "gap_extend": None,
    "k": 3,
    "k_prime": 4,
    "replicates": None,
    "seconds": None,
    "seed": 0,
    "horizon": None,
    "threads": 1,
    "batches": None,
    "format": "json",
    "figures": None,
    "trace_dump": None,
    "overrides": None,
    "weighting": "per-epoch",
    "k_max": 4,
    "map": None,
    "instances": 100,
    "n_max": 5,
    "strip_terms": 500,
    "seq_a": "TACTAGCGCA",
    "seq_b": "ACGGTAGAT",
}

DEFAULT_BATCHES = 200


class ConfigError(Exception):
    """Bad flags or configuration file (exit code 2)."""


def _add_scheme_flags(p):
    p.add_argument("--matrix", help="bundled matrix name (%s), 'example', or a matrix file"
                   % ", ".join(BUNDLED_MATRICES))
    p.add_argument("--freqs", nargs="+", metavar="FILE",
                   help="letter-frequency file (one for both sequences, or two)")
    p.add_argument("--gap-open", type=float, help="gap_open in w_g = gap_open + gap_extend*g")
    p.add_argument("--gap-extend", type=float, help="gap_extend in w_g = gap_open + gap_extend*g")


def _add_common(p):
    p.add_argument("--config", type=Path, help="JSON file of flag values; command-line flags win")
    p.add_argument("--seed", type=int)
    p.add_argument("--format", choices=("json", "csv"))
    p.add_argument("--figures", type=Path, metavar="DIR", help="write PNG figures here")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ladder-lambda", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    est = sub.add_parser("estimate", help="importance-sampling estimate of gapped lambda")
    _add_scheme_flags(est)
    _add_common(est)
    est.add_argument("--k", type=int)
    est.add_argument("--k-prime", type=int)
    budget = est.add_mutually_exclusive_group()
    budget.add_argument("--replicates", type=int)
    budget.add_argument("--seconds", type=float)
    est.add_argument("--horizon", type=int, help="censor replicates past this square size")
    est.add_argument("--threads", type=int)
    est.add_argument("--batches", type=int, nargs="?", const=DEFAULT_BATCHES,
                     help=f"independent batches (default {DEFAULT_BATCHES} when given bare)")
    est.add_argument("--overrides", help="JSON trial-model overrides, e.g. '{\"c\": 0.5}'")
    est.add_argument("--weighting", choices=("per-epoch", "shared"))
    est.add_argument("--trace-dump", type=Path, metavar="FILE",
                     help="write the path of replicate 0 as JSON lines")

    crude = sub.add_parser("crude", help="crude Monte Carlo ladder probabilities")
    _add_scheme_flags(crude)
    _add_common(crude)
    crude.add_argument("--k-max", type=int)
    crude.add_argument("--replicates", type=int)
    crude.add_argument("--horizon", type=int)

    vw = sub.add_parser("validate-weights", help="weight DP against path enumeration")
    _add_common(vw)
    vw.add_argument("--instances", type=int)
    vw.add_argument("--n-max", type=int)
    vw.add_argument("--strip-terms", type=int)

    vm = sub.add_parser("validate-map", help="estimator against an exact finite MAP")
    _add_common(vm)
    vm.add_argument("--map", type=Path, help="MAP JSON description (default: +1/-1 walk, p=1/4)")
    vm.add_argument("--k", type=int)
    vm.add_argument("--k-prime", type=int)
    vm.add_argument("--replicates", type=int)

    dd = sub.add_parser("dump-dp", help="global-score table of a sequence pair as TSV")
    _add_scheme_flags(dd)
    _add_common(dd)
    dd.add_argument("--seq-a")
    dd.add_argument("--seq-b")
    return parser


def resolve(args: argparse.Namespace) -> dict:
    """Merge defaults, the optional JSON config, then explicit flags."""
    cfg = dict(DEFAULTS)
    if getattr(args, "config", None):
        try:
            loaded = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(loaded, dict):
            raise ConfigError("config file must hold a JSON object")
        for key, val in loaded.items():
            key = key.replace("-", "_")
            if key not in DEFAULTS:
                raise ConfigError(f"unknown config key {key!r}")
            cfg[key] = val
    for key, val in vars(args).items():
        if key in DEFAULTS and val is not None:
            cfg[key] = val
    cfg["command"] = args.command
    return cfg


def _scheme(cfg):
    name = str(cfg["matrix"])
    if name.lower() == "example":
        s = example_scheme()
        go = s.gap_open if cfg["gap_open"] is None else cfg["gap_open"]
        ge = s.gap_extend if cfg["gap_extend"] is None else cfg["gap_extend"]
        return s.with_gaps(go, ge)
    go, ge = cfg["gap_open"], cfg["gap_extend"]
    if go is None or ge is None:
        if name.upper() not in BLASTP_SCHEMES:
            raise ConfigError("--gap-open and --gap-extend are required for this matrix")
        d_go, d_ge = BLASTP_SCHEMES[name.upper()]
        go = d_go if go is None else go
        ge = d_ge if ge is None else ge
    freqs = cfg["freqs"] or []
    if isinstance(freqs, str):
        freqs = [freqs]
    if len(freqs) > 2:
        raise ConfigError("--freqs takes one or two files")
    for f in freqs:
        if not Path(f).is_file():
            raise ConfigError(f"frequency file not found: {f}")
    if name.upper() not in BUNDLED_MATRICES and not Path(name).is_file():
        raise ConfigError(f"matrix not found: {name}")
    return load_scheme(name.upper() if name.upper() in BUNDLED_MATRICES else name, go, ge,
                       freqs[0] if freqs else None, freqs[1] if len(freqs) > 1 else None)


def _check_pair(cfg):
    if not (1 <= cfg["k"] < cfg["k_prime"]):
        raise ConfigError("k must be less than k-prime")


def _emit(text, out):
    out.write(text if text.endswith("\n") else text + "\n")


def _csv(rows):
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(rows)
    return buf.getvalue()


def cmd_estimate(cfg, out):
    from . import plots
    from .estimator import EstimateReport, batch_seed, campaign, estimating_function
    from .trial import ReplicateRunner, dump_trace, replicate_stream

    _check_pair(cfg)
    if cfg["replicates"] is not None and cfg["seconds"] is not None:
        raise ConfigError("give only one of --replicates and --seconds")
    if cfg["replicates"] is None and cfg["seconds"] is None:
        cfg["replicates"] = 10_000
    if cfg["replicates"] is not None and cfg["replicates"] < 0:
        raise ConfigError("--replicates must be nonnegative")
    if cfg["threads"] < 1:
        raise ConfigError("--threads must be at least 1")
    horizon = cfg["horizon"] or 10_000
    scheme = _scheme(cfg)
    overrides = cfg["overrides"]
    if isinstance(overrides, str):
        try:
            overrides = json.loads(overrides)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"--overrides is not valid JSON: {exc}") from exc
    try:
        model = default_trial_model(scheme, overrides=overrides)
    except ConfigurationError as exc:
        raise ConfigError(str(exc)) from exc
    kw = dict(k=cfg["k"], k_prime=cfg["k_prime"], replicates=cfg["replicates"],
              seconds=cfg["seconds"], horizon=horizon, threads=cfg["threads"],
              weighting=cfg["weighting"])

    if cfg["trace_dump"]:
        runner = ReplicateRunner(model, scheme, cfg["k_prime"], horizon)
        sample = runner.sample(replicate_stream(cfg["seed"], 0))
        with open(cfg["trace_dump"], "w") as fh:
            for rec in dump_trace(sample, scheme):
                fh.write(json.dumps(rec) + "\n")

    figs = cfg["figures"]
    if cfg["batches"]:
        if cfg["batches"] < 2:
            raise ConfigError("--batches needs at least 2")
        reports = []
        for b in range(cfg["batches"]):
            rep, _ = campaign(scheme, model, seed=batch_seed(cfg["seed"], b), **kw)
            reports.append(rep)
        lams = np.array([r.lambda_hat for r in reports])
        sd = float(lams.std(ddof=1))
        summary = {
            "schema": "ladder-lambda/batch-summary/1",
            "scheme": scheme.descriptor(), "scheme_digest": scheme.digest(), "seed": cfg["seed"],
            "batches": len(reports), "mean_lambda": float(lams.mean()),
            "batch_stderr": sd / math.sqrt(len(lams)), "estimate_sd": sd,
            "pairs": int(sum(r.replicates for r in reports)),
            "mean_stop_length": float(np.mean([r.mean_stop_length for r in reports])),
        }
        if cfg["format"] == "json":
            body = {"summary": summary, "reports": [json.loads(r.to_json()) for r in reports]}
            _emit(json.dumps(body, sort_keys=True), out)
        else:
            rows = [EstimateReport.CSV_COLUMNS] + [r.csv_row() for r in reports]
            name, _, gap = scheme.descriptor().partition(" ")
            rows.append([name, gap, f"{summary['mean_lambda']:.6f}",
                         f"{summary['batch_stderr']:.6f}", str(summary["pairs"]),
                         f"{summary['mean_stop_length']:.2f}"])
            _emit(_csv(rows), out)
        if figs:
            plots.batch_histogram(lams, Path(figs) / "batch_estimates.png",
                                  title=scheme.descriptor())
            n = np.arange(2, len(lams) + 1)
            running = [lams[:m].std(ddof=1) / math.sqrt(m) / abs(lams[:m].mean()) for m in n]
            pairs = np.cumsum([r.replicates for r in reports])[1:]
            plots.error_vs_time(pairs, running, Path(figs) / "batch_convergence.png",
                                labels=[scheme.descriptor()], xlabel="sequence pairs")
        return EXIT_OK

    report, rs = campaign(scheme, model, seed=cfg["seed"], **kw)
    if cfg["format"] == "json":
        _emit(report.to_json(), out)
    else:
        _emit(_csv([report.CSV_COLUMNS, report.csv_row()]), out)
    if figs:
        lam_star = report.config["lambda_star"]
        grid = np.geomspace(lam_star / 64, 4 * lam_star, 200)
        vals = [estimating_function(rs, cfg["k"], cfg["k_prime"], th) for th in grid]
        plots.estimating_curve(grid, vals, Path(figs) / "estimating_function.png",
                               root=report.lambda_hat)
    return EXIT_OK


def cmd_crude(cfg, out):
    from . import plots
    from .oracles import crude_mc_ladder

    scheme = _scheme(cfg)
    reps = cfg["replicates"] or 100_000
    horizon = cfg["horizon"] or 400
    if cfg["k_max"] < 1 or reps < 1 or horizon < 1:
        raise ConfigError("--k-max, --replicates and --horizon must be positive")
    res = crude_mc_ladder(scheme, cfg["k_max"], horizon, reps, cfg["seed"])
    body = {
        "schema": "ladder-lambda/crude-report/1", "scheme": scheme.descriptor(),
        "scheme_digest": scheme.digest(), "seed": cfg["seed"], "replicates": reps,
        "horizon": horizon,
        "reach_fraction": res.reach_fraction.tolist(), "reach_stderr": res.reach_stderr.tolist(),
    }
    if cfg["format"] == "json":
        _emit(json.dumps(body, sort_keys=True), out)
    else:
        rows = [("epoch", "reach_fraction", "stderr")]
        rows += [(k + 1, f"{p:.6f}", f"{e:.6f}")
                 for k, (p, e) in enumerate(zip(res.reach_fraction, res.reach_stderr))]
        _emit(_csv(rows), out)
    if cfg["figures"]:
        k = np.arange(1, cfg["k_max"] + 1)
        plots.error_vs_time(k, [res.reach_fraction], Path(cfg["figures"]) / "reach_fraction.png",
                            labels=[scheme.descriptor()], xlabel="ladder epoch")
    return EXIT_OK


def cmd_validate_weights(cfg, out):
    from .oracles import weight_oracle_report

    if not 1 <= cfg["n_max"] <= 5:
        raise ConfigError("--n-max must be between 1 and 5")
    rep = weight_oracle_report(cfg["instances"], cfg["seed"], cfg["n_max"], cfg["strip_terms"])
    tol = 1e-9
    rep["tolerance"] = tol
    rep["passed"] = all(rep[k] <= tol for k in ("cells", "tails", "inv_weight"))
    if cfg["format"] == "json":
        _emit(json.dumps(rep, sort_keys=True), out)
    else:
        _emit(_csv([list(rep), list(rep.values())]), out)
    return EXIT_OK if rep["passed"] else EXIT_RUNTIME


def cmd_validate_map(cfg, out):
    from .oracles import FiniteMap, MapError, map_estimator_check, map_lambda, scalar_walk_map

    _check_pair(cfg)
    if cfg["map"]:
        try:
            fmap = FiniteMap.from_json(Path(cfg["map"]).read_text())
        except (OSError, KeyError, json.JSONDecodeError, MapError) as exc:
            raise ConfigError(f"bad MAP description: {exc}") from exc
    else:
        fmap = scalar_walk_map()
    reps = cfg["replicates"] or 10_000
    lam = map_lambda(fmap)
    lam_hat, se = map_estimator_check(fmap, cfg["k"], cfg["k_prime"], reps, cfg["seed"])
    z = (lam_hat - lam) / se if se > 0 else math.inf
    body = {"schema": "ladder-lambda/map-check/1", "states": fmap.n_states, "lambda": lam,
            "lambda_hat": lam_hat, "stderr": se, "z": z, "k": cfg["k"], "k_prime": cfg["k_prime"],
            "replicates": reps, "seed": cfg["seed"]}
    if cfg["format"] == "json":
        _emit(json.dumps(body, sort_keys=True), out)
    else:
        _emit(_csv([list(body), list(body.values())]), out)
    return EXIT_OK


def cmd_dump_dp(cfg, out):
    from . import plots
    from .align import AlignmentFrontier, dump_dp_tsv, global_scores, ladder_from_maxima

    if cfg["matrix"] == DEFAULTS["matrix"] and cfg["gap_open"] is None and cfg["freqs"] is None:
        cfg["matrix"] = "example"
    scheme = _scheme(cfg)
    a, b = cfg["seq_a"], cfg["seq_b"]
    _emit(dump_dp_tsv(a, b, scheme), out)
    if cfg["figures"]:
        fr = AlignmentFrontier(scheme, max(len(a), len(b)) + 1)
        fr.extend_many(a[: min(len(a), len(b))], b[: min(len(a), len(b))])
        trace = ladder_from_maxima(fr.maxima)
        plots.dp_heatmap(global_scores(a, b, scheme), Path(cfg["figures"]) / "dp_square.png",
                         seq_a=a, seq_b=b, ladder=trace.epochs)
    return EXIT_OK


COMMANDS = {
    "estimate": cmd_estimate,
    "crude": cmd_crude,
    "validate-weights": cmd_validate_weights,
    "validate-map": cmd_validate_map,
    "dump-dp": cmd_dump_dp,
}


def main(argv=None, out=None) -> int:
    out = out or sys.stdout
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve(args)
        return COMMANDS[args.command](cfg, out)
    except (ConfigError, ConfigurationError, ScoringError, FileNotFoundError) as exc:
        print(f"ladder-lambda: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # runtime failures exit 1 with a message
        print(f"ladder-lambda: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def main_entry():
    sys.exit(main())


if __name__ == "__main__":
    main_entry()
