"""Command-line driver: ``python -m swingopt <subcommand> [--preset NAME] [--config FILE] ...``."""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import subprocess
import sys
import time
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .exceptions import ConfigError, GridError, InfeasibleContractError, NumericError, StateError
from .strategies import load_params, save_params
from .training import (aggregate_contract, calendar_buckets, train, transfer_train, warm_start)
from .valuation import convergence_study, delta_forward, price, variance_study

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_INFEASIBLE = 0, 2, 3, 4

PRICE_COLUMNS = ["mode", "mean", "se", "ci_lo", "ci_hi", "M_e", "wall_ms"]
#: columns left out of the manifest content hash because they record timings
TIMING_COLUMNS = {"wall_ms"}


def _write_csv(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    return path


def content_hash(path: Path) -> str:
    """sha256 of a CSV with its timing columns dropped (timings are not reproducible)."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    keep = [i for i, h in enumerate(rows[0]) if h not in TIMING_COLUMNS] if rows else []
    buf = io.StringIO()
    w = csv.writer(buf)
    for row in rows:
        w.writerow([row[i] for i in keep])
    return hashlib.sha256(buf.getvalue().encode()).hexdigest()


def _git_describe() -> str:
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"], cwd=Path(__file__).parent,
                             capture_output=True, text=True, timeout=10)
        return out.stdout.strip() or "unknown"
    except (OSError, subprocess.SubprocessError):
        return "unknown"


class Run:
    """Collects artifacts and phase timings of one command, then writes ``run.json``."""

    def __init__(self, command: str, cfg: dict, out: Path):
        self.command, self.cfg, self.out = command, cfg, out
        self.out.mkdir(parents=True, exist_ok=True)
        self.phases: dict[str, float] = {}
        self.files: list[Path] = []
        self.results: dict = {}

    def csv(self, name, header, rows):
        self.files.append(_write_csv(self.out / name, header, rows))

    def phase(self, name, seconds):
        self.phases[name] = self.phases.get(name, 0.0) + float(seconds)

    def manifest(self):
        doc = {
            "command": self.command,
            "config": self.cfg,
            "seeds": {"train": self.cfg["train"]["seed"], "eval": self.cfg["eval"]["seed"]},
            "wall_clock_s": self.phases,
            "engine": _git_describe(),
            "outputs": {p.name: content_hash(p) for p in self.files},
            "results": self.results,
        }
        (self.out / "run.json").write_text(json.dumps(doc, indent=2, default=_jsonable))
        return doc


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    return str(x)


def _price_rows(terms, model, params, cfg, threads, label=None):
    ev = cfg["eval"]
    rows, out = [], {}
    for mode in ev.get("modes", ["bang_bang"]):
        est = price(terms, model, params, int(ev["paths"]), mode, seed=ev["seed"],
                    chunk_size=int(ev.get("chunk_size", 2**17)), threads=threads)
        r = est.row()
        row = [r[c] for c in PRICE_COLUMNS]
        if label is not None:
            row = [label, *row]
        rows.append(row)
        out[mode if label is None else f"{label}/{mode}"] = {"mean": est.mean, "se": est.std_error}
    return rows, out


def _obtain_params(run: Run, terms, model, tc):
    """Load parameters named in the config or train them."""
    ref = run.cfg["strategy"].get("load")
    if ref:
        params = load_params(ref)
        params.check(terms, getattr(model, "state_dim", None))
        return params
    params, report = train(terms, model, tc)
    run.phase("train", report.seconds)
    run.csv("loss_trace.csv", ["iteration", "U_n", "wall_ms"], report.trace_rows())
    save_params(params, run.out / "params.json", terms.n)
    return params


def cmd_train(run: Run, terms, model, tc, threads):
    params, report = train(terms, model, tc)
    run.phase("train", report.seconds)
    run.csv("loss_trace.csv", ["iteration", "U_n", "wall_ms"], report.trace_rows())
    save_params(params, run.out / "params.json", terms.n)
    t0 = time.perf_counter()
    rows, res = _price_rows(terms, model, params, run.cfg, threads)
    run.phase("evaluate", time.perf_counter() - t0)
    run.csv("price.csv", PRICE_COLUMNS, rows)
    run.results.update(res)


def cmd_price(run: Run, terms, model, tc, threads):
    params = _obtain_params(run, terms, model, tc)
    t0 = time.perf_counter()
    rows, res = _price_rows(terms, model, params, run.cfg, threads)
    run.phase("evaluate", time.perf_counter() - t0)
    run.csv("price.csv", PRICE_COLUMNS, rows)
    run.results.update(res)


def cmd_delta(run: Run, terms, model, tc, threads):
    params = _obtain_params(run, terms, model, tc)
    ev = run.cfg["eval"]
    t0 = time.perf_counter()
    curve = delta_forward(terms, model, params, int(ev["paths"]), ev.get("delta_mode", "bang_bang"),
                          seed=ev["seed"], chunk_size=int(ev.get("chunk_size", 2**17)), threads=threads)
    run.phase("delta", time.perf_counter() - t0)
    run.csv("delta.csv", ["date_index", "time", "delta", "se"], curve.rows())


def _move(terms, model, mv: dict):
    changes = {k: float(mv[k]) for k in ("Q_min", "Q_max", "strike") if k in mv}
    new_terms = terms.replace(**changes) if changes else terms
    new_model = model.with_forward(float(mv["forward"])) if "forward" in mv else model
    return new_terms, new_model


def cmd_transfer(run: Run, terms, model, tc, threads):
    mv = run.cfg.get("market_move")
    if mv:
        base = _obtain_params(run, terms, model, tc)
        new_terms, new_model = _move(terms, model, mv)
        reuse, _ = warm_start(base, new_terms, new_model, tc, 0)
        retrain, rep = warm_start(base, new_terms, new_model, tc.replace(seed=tc.seed + 7),
                                  int(mv.get("retrain_iterations", 300)))
        run.phase("retrain", rep.seconds)
        save_params(retrain, run.out / "params_retrained.json", new_terms.n)
        rows = []
        for label, p in (("reuse", reuse), ("retrain", retrain)):
            r, res = _price_rows(new_terms, new_model, p, run.cfg, threads, label)
            rows += r
            run.results.update(res)
        run.csv("market_move.csv", ["variant", *PRICE_COLUMNS], rows)
        return
    tr = run.cfg["transfer"]
    start = np.datetime64(tr.get("calendar_start", "2022-01-01")).astype(object)
    buckets = calendar_buckets(start, terms.n)
    params, report = transfer_train(terms, model, tc, buckets, int(tr["agg_iterations"]),
                                    int(tr["fine_iterations"]))
    for name, sec in report.phases.items():
        run.phase(name, sec)
    run.results["aggregated_dates"] = aggregate_contract(terms, buckets).n
    run.csv("loss_trace.csv", ["iteration", "U_n", "wall_ms"], report.trace_rows())
    save_params(params, run.out / "params.json", terms.n)
    rows, res = _price_rows(terms, model, params, run.cfg, threads, "transfer")
    run.results.update(res)
    if tr.get("compare_scratch"):
        scratch, rep = train(terms, model, tc)
        run.phase("scratch", rep.seconds)
        r, res = _price_rows(terms, model, scratch, run.cfg, threads, "scratch")
        rows += r
        run.results.update(res)
    run.csv("price.csv", ["variant", *PRICE_COLUMNS], rows)


def cmd_convergence(run: Run, terms, model, tc, threads):
    cv = run.cfg["convergence"]
    res, params, report = convergence_study(terms, model, tc, cv.get("grid"), int(cv["validation_paths"]),
                                            int(cv["validation_seed"]))
    run.phase("train", report.seconds)
    run.results["alpha"] = res.alpha
    run.csv("convergence.csv", ["log_n", "log_abs_diff"], res.rows())
    run.csv("loss_trace.csv", ["iteration", "U_n", "wall_ms"], report.trace_rows())


def cmd_variance(run: Run, terms, model, tc, threads):
    vs = run.cfg["variance"]
    t0 = time.perf_counter()
    res = variance_study(terms, model, tc, int(vs["replications"]), [int(m) for m in vs["me_grid"]],
                         eval_seed_base=int(vs.get("eval_seed", 1000)), threads=threads)
    run.phase("variance", time.perf_counter() - t0)
    run.results["summary"] = {str(k): {"mean": v[0], "std": v[1]} for k, v in res.summary.items()}
    run.results["log_log_slope"] = res.slope
    run.csv("variance.csv", ["M_e", "replication", "price"], res.rows)


COMMANDS = {
    "train": cmd_train,
    "price": cmd_price,
    "delta": cmd_delta,
    "transfer": cmd_transfer,
    "convergence": cmd_convergence,
    "variance": cmd_variance,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="swingopt", description="Swing contract pricing by parametric strategies.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--preset", help="named preset (" + ", ".join(sorted(cfgmod.PRESETS)) + ")")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config entry, e.g. train.iterations=200")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--threads", type=int, help="worker threads for evaluation")
    return parser


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = cfgmod.load_config(args.config, args.preset, args.overrides)
        if args.threads:
            cfg["threads"] = args.threads
        terms = cfgmod.build_terms(cfg)
        model = cfgmod.build_model(cfg, terms)
        tc = cfgmod.build_train_config(cfg)
        r = Run(args.command, cfg, Path(args.out))
        t0 = time.perf_counter()
        COMMANDS[args.command](r, terms, model, tc, cfgmod.thread_count(cfg))
        r.phase("total", time.perf_counter() - t0)
        r.manifest()
    except InfeasibleContractError as exc:
        print(f"infeasible contract: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (ConfigError, GridError, FileNotFoundError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericError, StateError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def main():
    sys.exit(run())
