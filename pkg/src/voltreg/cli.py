"""Command-line entry point: ``voltreg <command> [options]``.

Commands write their artifacts to files and print a short JSON summary.
Failures print a JSON error object to stderr and exit with

    1  validation error (arguments, config, schemas, missing artifacts)
    2  runtime or solver failure
    3  a check did not pass (diff-check)
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

from . import data as data_mod
from .conic.problem import SolverSettings
from .conic.solver import solve
from .grid.builders import Injections, build_decision_problem
from .grid.network import SCENARIOS, NetworkError, case33, load_network
from .grid.outcome import extract_outcome
from .pipeline import (
    ConfigError,
    Feeder,
    SkipBudgetExceeded,
    TrainConfig,
    build_models,
    copy_models,
    evaluate,
    hsgd_epoch,
    oracle_outcomes,
    pretrain,
    summarize,
    REPORT_VERSION,
    site_names,
)
from .predictor import load_checkpoint, save_checkpoint

logger = logging.getLogger("voltreg")

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME, EXIT_CHECK = 0, 1, 2, 3


class ValidationError(Exception):
    pass


class MissingArtifactError(ValidationError):
    pass


class CheckFailed(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ValidationError(message)


PATH_KEYS = ("network", "dataset", "checkpoint_dir", "report_dir")


def load_run_config(path: str | None, overrides: dict, defaults: dict | None = None) -> tuple[TrainConfig, dict]:
    """Merge defaults, a JSON config file and flag overrides (flags win)."""
    doc: dict = dict(defaults or {})
    if path:
        try:
            loaded = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise MissingArtifactError(f"config file {path} not found") from None
        except json.JSONDecodeError as exc:
            raise ValidationError(f"config file {path} is not valid JSON: {exc}") from None
        if not isinstance(loaded, dict):
            raise ValidationError("config file must hold a JSON object")
        doc.update(loaded)
    doc.update({k: v for k, v in overrides.items() if v is not None})
    paths = {k: doc.pop(k) for k in PATH_KEYS if k in doc}
    return TrainConfig.from_dict(doc), paths


def _network(paths: dict):
    if paths.get("network"):
        p = Path(paths["network"])
        if not p.exists():
            raise MissingArtifactError(f"network file {p} not found")
        return load_network(p)
    return case33()


def _dataset(paths: dict) -> data_mod.Dataset:
    p = paths.get("dataset")
    if not p:
        raise ValidationError("no dataset given (--data or 'dataset' in the config)")
    p = Path(p)
    if p.is_dir():
        p = p / "dataset.manifest.json"
    if not p.exists():
        raise MissingArtifactError(f"dataset manifest {p} not found")
    return data_mod.load_dataset(p)


def _dump(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _checkpoint(directory: Path, name: str):
    p = directory / f"{name}.json"
    if not p.exists():
        raise MissingArtifactError(f"checkpoint {p} not found; run the earlier stage first")
    return load_checkpoint(p)


def write_plot_csvs(report: dict, directory: Path) -> list[Path]:
    """Plot-ready CSVs next to the JSON report."""
    directory.mkdir(parents=True, exist_ok=True)
    names = report["site_names"]
    out = []

    def write(name, header, rows):
        p = directory / name
        with p.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows(rows)
        out.append(p)

    curves = report["curves"]
    write("pretrain_curves.csv", ["epoch"] + names,
          [[e + 1] + [repr(v) for v in row] for e, row in enumerate(curves.get("pretrain_mse", []))])
    write("training_curves.csv", ["epoch", "reg_loss_kw", "power_loss_kw", "violation_rate", "skipped_days"],
          [[c["epoch"], repr(c["reg_loss_kw"]), repr(c["power_loss_kw"]), repr(c["violation_rate"]),
            c["skipped_days"]] for c in curves.get("hsgd", [])])
    rows = []
    for model in ("mse", "hsgd"):
        for c in report[model]["cases"] + [report[model]["average"]]:
            rows.append([model, c["case"], c["power_loss_kw"], c["oracle_loss_kw"], c["regret_kw"],
                         c["violation_rate"]])
    write("power_loss_cases.csv", ["model", "case", "power_loss_kw", "oracle_loss_kw", "regret_kw",
                                   "violation_rate"], rows)
    h_m, h_h = report["mse"]["hourly"], report["hsgd"]["hourly"]
    if h_m and h_h:
        write("hourly_loss.csv", ["hour", "mse_kw", "hsgd_kw", "oracle_kw"],
              [[t, repr(a), repr(b), repr(o)] for t, (a, b, o) in
               enumerate(zip(h_m["loss_kw"], h_h["loss_kw"], h_m["oracle_loss_kw"]))])
    t_m, t_h = report["mse"]["bus15_trace"], report["hsgd"]["bus15_trace"]
    write("bus15_voltage.csv", ["step", "mse_pu", "hsgd_pu", "oracle_pu"],
          [[k, a, b, o] for k, (a, b, o) in
           enumerate(zip(t_m["voltage_pu"], t_h["voltage_pu"], t_m["oracle_voltage_pu"]))])
    return out


# commands

def cmd_gen_data(args) -> dict:
    if args.days < data_mod.MIN_DAYS:
        raise ValidationError(f"--days must be at least {data_mod.MIN_DAYS}")
    _, dev = case33() if not args.network else load_network(args.network)
    ds = data_mod.generate_synthetic(args.seed, args.days, dev.pv_kw)
    man = data_mod.save_dataset(ds, args.out)
    return {"manifest": str(man), "days": ds.n_days, "capacity_factor": data_mod.capacity_factor(ds)}


def _common(args):
    overrides = {"scenario": args.scenario, "seed": args.seed, "dataset": getattr(args, "data", None),
                 "network": getattr(args, "network", None)}
    for key in ("pretrain_epochs", "train_epochs", "epsilon", "lam", "workers"):
        overrides[key] = getattr(args, key, None)
    cfg, paths = load_run_config(args.config, overrides, {"workers": os.cpu_count() or 1})
    out = Path(args.out or paths.get("checkpoint_dir") or "runs")
    return cfg, paths, out


def cmd_pretrain(args) -> dict:
    cfg, paths, out = _common(args)
    ds = _dataset(paths)
    models = build_models(ds, cfg)
    curves = pretrain(models, ds, cfg)
    ck = save_checkpoint(models, out / "pretrain.json", {"config": cfg.to_dict(), "curves": curves})
    return {"checkpoint": str(ck), "final_mse": curves[-1] if curves else None}


def cmd_train(args) -> dict:
    cfg, paths, out = _common(args)
    ds = _dataset(paths)
    net, dev = _network(paths)
    models, meta = _checkpoint(out, "pretrain")
    feeder = Feeder.for_scenario(net, dev, cfg.scenario)
    baseline = copy_models(models)
    base_curves = pretrain(baseline, ds, cfg, epochs=cfg.train_epochs, label="baseline")
    hsgd = copy_models(models)
    curves = [hsgd_epoch(hsgd, ds, feeder, cfg, e).to_dict() for e in range(cfg.train_epochs)]
    meta = {"config": cfg.to_dict(), "pretrain_curves": meta.get("curves", []),
            "baseline_curves": base_curves, "hsgd_curves": curves}
    save_checkpoint(baseline, out / "mse.json", meta)
    save_checkpoint(hsgd, out / "hsgd.json", meta)
    return {"checkpoints": [str(out / "mse.json"), str(out / "hsgd.json")], "epochs": cfg.train_epochs}


def cmd_eval(args) -> dict:
    cfg, paths, out = _common(args)
    ds = _dataset(paths)
    net, dev = _network(paths)
    baseline, meta = _checkpoint(out, "mse")
    hsgd, _ = _checkpoint(out, "hsgd")
    feeder = Feeder.for_scenario(net, dev, cfg.scenario)
    oracle = oracle_outcomes(feeder, ds, cfg, ds.test_idx)
    rep_b = evaluate(baseline, ds, feeder, cfg, oracle)
    rep_h = evaluate(hsgd, ds, feeder, cfg, oracle)
    report = {
        "version": REPORT_VERSION, "scenario": cfg.scenario, "config": cfg.to_dict(),
        "dataset": ds.provenance, "site_names": site_names(ds.n_pv),
        "curves": {"pretrain_mse": meta.get("pretrain_curves", []),
                   "baseline_mse": meta.get("baseline_curves", []), "hsgd": meta.get("hsgd_curves", [])},
        "mse": rep_b, "hsgd": rep_h, "summary": summarize(rep_b, rep_h),
    }
    rdir = Path(args.report_dir or paths.get("report_dir") or out / "report")
    _dump(rdir / "report.json", report)
    csvs = write_plot_csvs(report, rdir)
    return {"report": str(rdir / "report.json"), "csv": [str(p) for p in csvs], "summary": report["summary"]}


def _read_injections(path: str, net, dev) -> Injections:
    p = Path(path)
    if not p.exists():
        raise MissingArtifactError(f"injection file {p} not found")
    try:
        doc = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise data_mod.SchemaError(f"injection file is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise data_mod.SchemaError("injection file must hold a JSON object")
    arrays = {}
    for key, width in (("p_pv", dev.n_pv), ("p_d", net.n_bus), ("q_d", net.n_bus)):
        if key not in doc:
            raise data_mod.SchemaError(f"injection file is missing {key!r}")
        try:
            arr = np.atleast_2d(np.asarray(doc[key], dtype=float))
        except (TypeError, ValueError):
            raise data_mod.SchemaError(f"{key!r} must be a list of numeric rows") from None
        if arr.shape[1] != width:
            raise data_mod.SchemaError(f"{key!r} rows need {width} entries, found {arr.shape[1]}")
        arrays[key] = arr
    try:
        return Injections(**arrays)
    except ValueError as exc:
        raise data_mod.SchemaError(str(exc)) from None


def cmd_solve(args) -> dict:
    net, dev = load_network(args.network) if args.network else case33()
    net = net.with_scenario(args.scenario)
    inj = _read_injections(args.injections, net, dev)
    if not 0 <= args.t < inj.horizon:
        raise ValidationError(f"--t must lie in [0, {inj.horizon - 1}]")
    prob, pmap = build_decision_problem(net, dev, inj, args.t)
    sol = solve(prob, SolverSettings(tolerance=args.tol))
    if not sol.optimal:
        raise RuntimeError(f"decision problem status: {sol.status.value}")
    out = extract_outcome(sol, pmap, net)
    res = out.to_dict()
    res.update({"status": sol.status.value, "scenario": args.scenario, "t": args.t,
                "v_limits_pu": [net.v_min, net.v_max]})
    return res


def cmd_diff_check(args) -> dict:
    from .diffcheck import run_diff_check

    if args.cases < 1:
        raise ValidationError("--cases must be at least 1")
    rows = run_diff_check(args.seed, args.cases, force_fail=args.force_fail)
    table = [r.to_dict() for r in rows]
    for r in rows:
        print(f"{r.suite:8s} case {r.case:3d}  rel_err {r.rel_err:.2e}  tol {r.tol:.0e}  "
              f"{'PASS' if r.passed else 'FAIL'}", file=sys.stderr)
    if not all(r.passed for r in rows):
        raise CheckFailed(json.dumps(table))
    return {"checks": table}


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="voltreg", description="Volt/var regulation with decision-aware predictors.")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", help="generate the synthetic dataset")
    g.add_argument("--days", type=int, default=250)
    g.add_argument("--seed", type=int, default=42)
    g.add_argument("--out", required=True)
    g.add_argument("--network")
    g.set_defaults(func=cmd_gen_data)

    for name, func, help_ in (("pretrain", cmd_pretrain, "MSE pretraining"),
                              ("train", cmd_train, "MSE baseline and hybrid training"),
                              ("eval", cmd_eval, "evaluate trained models on the test split")):
        c = sub.add_parser(name, help=help_)
        c.add_argument("--config")
        c.add_argument("--scenario", choices=sorted(SCENARIOS))
        c.add_argument("--seed", type=int)
        c.add_argument("--out", help="checkpoint directory")
        c.add_argument("--data", help="dataset manifest or directory")
        c.add_argument("--network")
        c.add_argument("--pretrain-epochs", dest="pretrain_epochs", type=int)
        c.add_argument("--train-epochs", dest="train_epochs", type=int)
        c.add_argument("--epsilon", type=float)
        c.add_argument("--lam", type=float)
        c.add_argument("--workers", type=int, default=None)
        if name == "eval":
            c.add_argument("--report-dir", dest="report_dir")
        c.set_defaults(func=func)

    s = sub.add_parser("solve", help="solve one decision problem and print the outcome")
    s.add_argument("--network")
    s.add_argument("--injections", required=True)
    s.add_argument("--t", type=int, default=0)
    s.add_argument("--scenario", choices=sorted(SCENARIOS), default="safety")
    s.add_argument("--tol", type=float, default=1e-8)
    s.set_defaults(func=cmd_solve)

    d = sub.add_parser("diff-check", help="finite-difference checks of the derivatives")
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--cases", type=int, default=5)
    d.add_argument("--force-fail", action="store_true", help=argparse.SUPPRESS)
    d.set_defaults(func=cmd_diff_check)
    return p


def _error(kind: str, exc: BaseException, code: int) -> int:
    print(json.dumps({"error": kind, "message": str(exc), "exit_code": code}), file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except ValidationError as exc:
        return _error("validation", exc, EXIT_VALIDATION)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        result = args.func(args)
    except CheckFailed as exc:
        return _error("check_failed", exc, EXIT_CHECK)
    except MissingArtifactError as exc:
        return _error("missing_artifact", exc, EXIT_VALIDATION)
    except (ValidationError, ConfigError, NetworkError, data_mod.SchemaError, data_mod.MalformedRowError) as exc:
        return _error("validation", exc, EXIT_VALIDATION)
    except (SkipBudgetExceeded, RuntimeError, ArithmeticError) as exc:
        return _error("runtime", exc, EXIT_RUNTIME)
    print(json.dumps(result, sort_keys=True))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
