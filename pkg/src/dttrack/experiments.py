"""Desk-scale experiment harness: naive versus DT-Training on one tiny tracker,
and single-factor scaling sweeps over depth, data volume and resolution.

All runs are seeded end to end; the same arguments give the same numbers.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

from . import autodiff as ad
from .data import Dataset
from .evaluation import EvalReport, InferConfig, evaluate, make_bench, write_report_csv
from .model import TrackerConfig, init_params
from .progressive import Checkpoint, DataSpec, make_checkpoint, save_checkpoint
from .training import DTConfig, TeacherHandle, train, write_log_csv


@dataclass(frozen=True)
class Budget:
    """Shared knobs of the desk-scale comparisons."""

    steps: int = 1500
    epochs: int = 10
    batch_size: int = 16
    lr: float = 1e-3
    n_train: int = 128
    bench_seed: int = 1234
    bench_per_suite: int = 16
    canvas: int = 64  # frame side of both the training data and the bench

    def data(self, n: int, seed: int) -> DataSpec:
        return DataSpec(sources=(("synth", n),), seed=seed, canvas=self.canvas)

    def dt_config(self, seed: int) -> DTConfig:
        if self.steps % self.epochs:
            raise ValueError(f"steps {self.steps} not divisible by epochs {self.epochs}")
        return DTConfig(total_epochs=self.epochs, steps_per_epoch=self.steps // self.epochs,
                        batch_size=self.batch_size, base_lr=self.lr, seed=seed)

    def bench(self) -> list[Dataset]:
        return make_bench(seed=self.bench_seed, per_suite=self.bench_per_suite, canvas=self.canvas)


@dataclass
class RunOutcome:
    checkpoint: Checkpoint
    report: EvalReport | None
    log: list = field(default_factory=list)

    @property
    def mean_auc(self) -> float:
        return self.report.mean_auc if self.report is not None else float("nan")


def train_and_eval(model_cfg: TrackerConfig, dt_cfg: DTConfig, data: DataSpec | Sequence[Dataset], bench,
                   init_seed: int, teacher: TeacherHandle | None = None, tag: str = "run", out_dir=None,
                   infer: InferConfig = InferConfig(), progress=None) -> RunOutcome:
    """Train from a fresh initialization, evaluate on ``bench`` (skipped when None) and package a checkpoint."""
    datasets = data.build() if isinstance(data, DataSpec) else list(data)
    if teacher is None:
        dt_cfg = dt_cfg.naive()
    params = init_params(model_cfg, init_seed)
    res = train(params, teacher, datasets, dt_cfg, model_cfg, progress=progress)
    report = None
    if bench is not None:
        with ad.no_grad():
            report = evaluate((res.params, model_cfg), bench, infer)
    stored = dict(res.params)
    if res.adapter is not None:
        stored.update(res.adapter.params)
    ck = make_checkpoint(stored, model_cfg, tag, dt_config=dt_cfg.to_dict(),
                         teacher_id=teacher.checkpoint_id if teacher else None,
                         dataset_digest=data.digest() if isinstance(data, DataSpec) else "",
                         metrics=report.as_dict() if report is not None else {})
    if report is not None:
        report.checkpoint_id = ck.id
        ck.metrics["checkpoint_id"] = ck.id
    if out_dir is not None:
        out = Path(out_dir)
        save_checkpoint(ck, out)
        write_log_csv(res.log, out / f"{ck.id}.train.csv")
        if report is not None:
            write_report_csv(report, out / f"{ck.id}.eval.csv")
    return RunOutcome(ck, report, res.log)


# ---------------------------------------------------------------------------
# naive versus DT on the same tracker

@dataclass
class Comparison:
    seed: int
    naive: RunOutcome
    dt: RunOutcome

    @property
    def gain(self) -> float:
        return self.dt.mean_auc - self.naive.mean_auc


def naive_vs_dt(seed: int, budget: Budget = Budget(), model_cfg: TrackerConfig = TrackerConfig(),
                bench=None, out_dir=None) -> Comparison:
    """Train naively, then train a fresh student of the same size with the naive model as frozen teacher.

    Both runs get the same step budget and training data; the student draws its own init and sampling seeds.
    """
    bench = budget.bench() if bench is None else bench
    data = budget.data(budget.n_train, seed)
    datasets = data.build()
    dt_cfg = budget.dt_config(seed)
    naive = train_and_eval(model_cfg, dt_cfg, datasets, bench, seed, tag="naive", out_dir=out_dir)
    teacher = TeacherHandle(naive.checkpoint.inference_params(), model_cfg, checkpoint_id=naive.checkpoint.id)
    dt = train_and_eval(model_cfg, replace(dt_cfg, seed=seed + 1), datasets, bench, seed + 100, teacher=teacher,
                        tag="dt", out_dir=out_dir)
    return Comparison(seed, naive, dt)


# ---------------------------------------------------------------------------
# scaling sweeps

SWEEP_FACTORS = ("layers", "data", "resolution")
DEFAULT_SWEEPS = {"layers": (1, 2, 4), "data": (64, 128, 256), "resolution": (48, 64, 96)}


def sweep_point(factor: str, value: int, base: TrackerConfig = TrackerConfig(), n_train: int = 128):
    """(TrackerConfig, number of training sequences) with one factor set to ``value``."""
    if factor == "layers":
        return replace(base, num_layers=int(value)), n_train
    if factor == "data":
        return base, int(value)
    if factor == "resolution":
        return replace(base, search_res=int(value), template_res=int(value) // 2), n_train
    raise ValueError(f"unknown sweep factor {factor!r}; expected one of {SWEEP_FACTORS}")


def factor_sweep(factor: str, values: Sequence[int], seed: int, budget: Budget = Budget(),
                 base: TrackerConfig = TrackerConfig(), bench=None, cache: dict | None = None,
                 out_dir=None) -> list[float]:
    """Naive-training mean AUC at each value of one factor, others held at the base point.

    ``cache`` (keyed by config, data volume and seed) lets sweeps that share a point reuse the run.
    """
    bench = budget.bench() if bench is None else bench
    cache = {} if cache is None else cache
    aucs = []
    for v in values:
        cfg, n = sweep_point(factor, v, base, budget.n_train)
        key = (cfg, n, seed)
        if key not in cache:
            data = budget.data(n, seed)
            cache[key] = train_and_eval(cfg, budget.dt_config(seed), data, bench, seed, tag=f"{factor}{v}",
                                        out_dir=out_dir).mean_auc
        aucs.append(cache[key])
    return aucs


def non_decreasing(values: Sequence[float], slack: float = 0.01) -> bool:
    return all(b >= a - slack for a, b in zip(values, values[1:]))


SWEEP_COLUMNS = ["factor", "value", "seed", "mean_auc"]


def write_sweep_csv(rows: Sequence[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SWEEP_COLUMNS)
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(r[k]) if isinstance(r[k], float) else r[k]) for k in SWEEP_COLUMNS})
