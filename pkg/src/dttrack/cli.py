"""Command-line entry point: ``dttrack <command> [options]``.

Commands: gen-data, train, plan-run, eval, sweep, report. Every invocation
writes into its own run directory, echoes the resolved config there as
``config.yaml`` and, on failure, leaves an ``error.json`` record.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import traceback
from pathlib import Path

EXIT_OK, EXIT_FAILURE, EXIT_CONFIG = 0, 1, 2

# flag -> dotted config key
SHORTCUTS = {
    "epochs": "train.total_epochs",
    "steps_per_epoch": "train.steps_per_epoch",
    "batch_size": "train.batch_size",
    "lr": "train.base_lr",
    "lambda_align": "train.lambda_align",
    "mask_start": "train.mask_ratio.start",
    "mask_end": "train.mask_ratio.end",
    "layers": "model.num_layers",
    "dim": "model.embed_dim",
    "search_res": "model.search_res",
    "template_res": "model.template_res",
}


def _common(parser: argparse.ArgumentParser, suppress: bool) -> None:
    d = argparse.SUPPRESS if suppress else None
    parser.add_argument("--config", default=d, help="YAML or JSON run config")
    parser.add_argument("--seed", type=int, default=d, help="global seed")
    parser.add_argument("--threads", type=int, default=d, help="BLAS thread cap")
    parser.add_argument("--precision", choices=("f32", "f64"), default=d)
    parser.add_argument("--out", default=d, help="output root (default $DTTRACK_OUT or ./runs)")
    parser.add_argument("--run-dir", default=d, help="explicit run directory")
    parser.add_argument("--force", action="store_true", default=d if suppress else False,
                        help="reuse an existing run directory")
    parser.add_argument("--set", action="append", default=d, metavar="KEY=VALUE",
                        help="override any config key, e.g. train.base_lr=1e-3")
    for flag, key in SHORTCUTS.items():
        kind = int if flag in ("epochs", "steps_per_epoch", "batch_size", "layers", "dim", "search_res",
                               "template_res") else float
        parser.add_argument("--" + flag.replace("_", "-"), dest=flag, type=kind, default=d, help=f"sets {key}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dttrack", description="Desk-scale DT-Training for visual tracking")
    _common(p, suppress=False)
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, help_):
        sp = sub.add_parser(name, help=help_)
        _common(sp, suppress=True)
        return sp

    g = add("gen-data", "render synthetic sequence datasets to disk")
    g.add_argument("--sources", help="name:count[,name:count...]")
    t = add("train", "train one tracker (naive, or DT with --teacher)")
    t.add_argument("--teacher", help="teacher checkpoint manifest")
    t.add_argument("--evaluate", action="store_true", help="also evaluate on the synthetic bench")
    add("plan-run", "run the staged plan in the config")
    e = add("eval", "evaluate a checkpoint on the synthetic bench")
    e.add_argument("--checkpoint", help="checkpoint manifest")
    s = add("sweep", "vary exactly one scaling factor")
    s.add_argument("--factor", help="layers, data or resolution")
    s.add_argument("--values", help="comma-separated values, e.g. 1,2,4")
    s.add_argument("--seeds", help="comma-separated seeds")
    r = add("report", "merge eval and trend CSVs into one summary table")
    r.add_argument("inputs", nargs="*", help="CSV files or directories")
    return p


def _int_list(text: str, what: str) -> list[int]:
    from .errors import ConfigError

    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(what, f"expected comma-separated integers, got {text!r}") from None


def resolve_config(args):
    from .config import parse_config
    from .errors import ConfigError

    overrides = {key: getattr(args, flag, None) for flag, key in SHORTCUTS.items()}
    for flag, key in (("seed", "seed"), ("threads", "threads"), ("precision", "precision"), ("out", "out_dir")):
        overrides[key] = getattr(args, flag, None)
    cmd = args.command
    if cmd == "gen-data" and args.sources:
        pairs = []
        for item in args.sources.split(","):
            name, _, count = item.partition(":")
            if not count.isdigit():
                raise ConfigError("sources", f"expected name:count, got {item!r}")
            pairs.append([name, int(count)])
        overrides["data.sources"] = pairs
    if cmd == "train" and args.teacher:
        overrides["teacher"] = args.teacher
    if cmd == "eval" and args.checkpoint:
        overrides["checkpoint"] = args.checkpoint
    if cmd == "sweep":
        if args.factor is not None:
            if "," in args.factor:
                raise ConfigError("sweep.factor", "a sweep varies exactly one factor")
            overrides["sweep.factor"] = args.factor
        if args.values is not None:
            overrides["sweep.values"] = _int_list(args.values, "sweep.values")
        if args.seeds is not None:
            overrides["sweep.seeds"] = _int_list(args.seeds, "sweep.seeds")
    return parse_config(getattr(args, "config", None), overrides, getattr(args, "set", None) or [])


def run_dir_for(args, cfg) -> Path:
    import hashlib

    from .config import config_json

    if getattr(args, "run_dir", None):
        return Path(args.run_dir)
    tag = hashlib.sha256(config_json(cfg).encode()).hexdigest()[:10]
    return Path(cfg.out_dir) / f"{args.command}-{tag}"


def prepare_run_dir(path: Path, force: bool) -> Path:
    from .errors import ContractViolation

    if path.exists() and any(path.iterdir()) and not force:
        raise ContractViolation(f"run directory {path} already exists; pass --force or choose --run-dir")
    path.mkdir(parents=True, exist_ok=True)
    return path


# ---------------------------------------------------------------------------
# commands

def cmd_gen_data(cfg, run_dir: Path, args=None) -> dict:
    from .data import build_dataset, random_specs

    out = {}
    for k, (name, n) in enumerate(cfg.data.sources):
        specs = random_specs(n, cfg.data.seed + 1000 * k, length=cfg.data.length, canvas=cfg.data.canvas)
        man = build_dataset(name, specs, run_dir / "data")
        out[name] = {"sequences": len(man.files), "specs_digest": man.specs_digest}
    return out


def _bench(cfg):
    from .evaluation import make_bench

    b = cfg.bench
    return make_bench(seed=b.seed, per_suite=b.per_suite, length=b.length, canvas=b.canvas)


def cmd_train(cfg, run_dir: Path, args=None) -> dict:
    from dataclasses import replace

    from .evaluation import write_curve_csv
    from .experiments import train_and_eval
    from .progressive import load_checkpoint
    from .training import Adapter, TeacherHandle

    teacher = None
    dt = replace(cfg.train, seed=cfg.seed)
    if cfg.teacher:
        tck = load_checkpoint(cfg.teacher)
        teacher = TeacherHandle(tck.inference_params(), tck.config, checkpoint_id=tck.id)
        teacher.adapter = Adapter(tck.config, cfg.model, dt.feature_layers)
    bench = _bench(cfg) if args is not None and args.evaluate else None
    run = train_and_eval(cfg.model, dt, cfg.data, bench, cfg.seed, teacher, "train", run_dir, cfg.infer)
    if run.report is not None:
        write_curve_csv(run.report, run_dir / "success_curve.csv")
    return {"checkpoint": run.checkpoint.id, "mean_auc": run.mean_auc}


def cmd_plan_run(cfg, run_dir: Path, args=None) -> dict:
    import csv

    from .progressive import plan_stages, run_plan

    if not cfg.plan:
        from .errors import ConfigError

        raise ConfigError("plan", "plan-run needs a non-empty plan list")
    plan = plan_stages({"stages": list(cfg.plan), "seed": cfg.seed, "base": cfg.train.to_dict()})
    cks = run_plan(plan, run_dir, _bench(cfg))
    with open(run_dir / "lineage.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["stage", "checkpoint", "teacher", "enlarges", "mean_auc"])
        for spec, ck in zip(plan.stages, cks):
            w.writerow([ck.stage, ck.id, ck.teacher_id or "", "+".join(spec.enlarges),
                        repr(ck.metrics.get("mean_auc", float("nan")))])
    return {"lineage": cks[-1].lineage}


def cmd_eval(cfg, run_dir: Path, args=None) -> dict:
    from .errors import ConfigError
    from .evaluation import evaluate, write_curve_csv, write_report_csv
    from .progressive import load_checkpoint

    if not cfg.checkpoint:
        raise ConfigError("checkpoint", "eval needs --checkpoint")
    ck = load_checkpoint(cfg.checkpoint)
    report = evaluate((ck.inference_params(), ck.config), _bench(cfg), cfg.infer, checkpoint_id=ck.id)
    write_report_csv(report, run_dir / "eval.csv")
    write_curve_csv(report, run_dir / "success_curve.csv")
    return {"checkpoint": ck.id, "mean_auc": report.mean_auc}


def cmd_sweep(cfg, run_dir: Path, args=None) -> dict:
    from dataclasses import replace

    from .errors import ConfigError
    from .experiments import SWEEP_FACTORS, sweep_point, train_and_eval, write_sweep_csv
    from .progressive import DataSpec

    sw = cfg.sweep
    if sw.factor not in SWEEP_FACTORS:
        raise ConfigError("sweep.factor", f"unknown factor {sw.factor!r}; expected one of {list(SWEEP_FACTORS)}")
    if len(sw.values) < 2 or len(set(sw.values)) != len(sw.values):
        raise ConfigError("sweep.values", "need at least two distinct values")
    bench = _bench(cfg)
    rows = []
    for seed in sw.seeds:
        for v in sw.values:
            model, n = sweep_point(sw.factor, v, cfg.model, cfg.data.volume)
            data = replace(cfg.data, sources=((cfg.data.sources[0][0], n),), seed=cfg.data.seed + seed)
            member = run_dir / f"{sw.factor}{v}-seed{seed}"
            member.mkdir(parents=True, exist_ok=True)
            run = train_and_eval(model, replace(cfg.train, seed=seed), data, bench, seed, tag=f"{sw.factor}{v}",
                                 out_dir=member, infer=cfg.infer)
            rows.append({"factor": sw.factor, "value": v, "seed": seed, "mean_auc": run.mean_auc})
    write_sweep_csv(rows, run_dir / "trend.csv")
    return {"rows": len(rows)}


def cmd_report(cfg, run_dir: Path, args=None) -> dict:
    from .report import summarize, write_summary_csv

    rows, text = summarize(args.inputs if args is not None else [])
    (run_dir / "summary.txt").write_text(text)
    write_summary_csv(rows, run_dir / "summary.csv")
    print(text)
    return {"rows": len(rows)}


COMMANDS = {"gen-data": cmd_gen_data, "train": cmd_train, "plan-run": cmd_plan_run, "eval": cmd_eval,
            "sweep": cmd_sweep, "report": cmd_report}


def _error_record(command, exc) -> dict:
    rec = {"status": "error", "command": command, "error": type(exc).__name__, "message": str(exc)}
    if hasattr(exc, "path"):
        rec["path"] = exc.path
    return rec


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "threads", None):
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(args.threads)
    from . import autodiff as ad
    from .config import dump_config
    from .errors import ConfigError

    run_dir = None
    try:
        cfg = resolve_config(args)
        ad.set_precision(cfg.precision)
        run_dir = prepare_run_dir(run_dir_for(args, cfg), bool(getattr(args, "force", False)))
        dump_config(cfg, run_dir / "config.yaml")
        result = COMMANDS[args.command](cfg, run_dir, args)
        record = {"status": "ok", "command": args.command, "run_dir": str(run_dir), **result}
        (run_dir / "result.json").write_text(json.dumps(record, indent=2, default=str))
        print(json.dumps(record, default=str))
        return EXIT_OK
    except Exception as exc:  # every failure leaves a machine-readable record
        rec = _error_record(args.command, exc)
        if run_dir is not None:
            rec["traceback"] = traceback.format_exc()
            (run_dir / "error.json").write_text(json.dumps(rec, indent=2))
        print(json.dumps({k: v for k, v in rec.items() if k != "traceback"}), file=sys.stderr)
        return EXIT_CONFIG if isinstance(exc, ConfigError) else EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
