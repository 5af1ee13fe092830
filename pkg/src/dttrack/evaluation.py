"""Sequence-level tracking with a Hanning-window prior, and benchmark metrics.

Comparators are fixed: success counts IoU strictly above each threshold,
precision counts center distance at or below each threshold. Per-suite
numbers are means over sequences; the benchmark score is the plain mean over
suites.
"""

from __future__ import annotations

import csv
import math
import time
from fractions import Fraction
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence as Seq

import numpy as np

from . import autodiff as ad
from .boxes import iou
from .data import SEARCH_FACTOR, TEMPLATE_FACTOR, Dataset, SequenceSpec, box_from_crop, crop_window, \
    dataset_from_specs, sample_window, split_seed
from .errors import ContractViolation, UndefinedMetric
from .model import argmax_cells, decode_boxes, forward

SUCCESS_THRESHOLDS = np.arange(21) / 20.0
NORM_PRECISION_THRESHOLDS = np.arange(101) * 0.005
PRECISION_PX = 20.0
REFERENCE_CANVAS = 256
MIN_BOX = 1e-3


def hann_window(S: int) -> np.ndarray:
    """Peak-normalized S x S outer product of the 1-D Hanning vector (exactly flip-symmetric)."""
    if S <= 2:  # the Hanning vector is all zeros here: no usable prior, so a flat window
        return np.ones((S, S))
    i = np.arange(S)
    w = 0.5 * (1.0 - np.cos(2.0 * np.pi * i / (S - 1)))
    w = (w + w[::-1]) / 2.0
    win = np.outer(w, w)
    return win / win.max()


def penalize(score: np.ndarray, window: np.ndarray, gamma: float = 1.0) -> np.ndarray:
    """Blend the score map with its window-weighted version; gamma=1 is purely multiplicative."""
    score = np.asarray(score)
    if score.shape[-2:] != window.shape:
        raise ContractViolation(f"score map {score.shape} vs window {window.shape}")
    if not 0 <= gamma <= 1:
        raise ContractViolation(f"blend gamma {gamma} outside [0, 1]")
    return (1.0 - gamma) * score + gamma * (score * window)


@dataclass(frozen=True)
class InferConfig:
    template_factor: float = TEMPLATE_FACTOR
    search_factor: float = SEARCH_FACTOR
    gamma: float = 1.0


def _unpack_model(model):
    if isinstance(model, tuple):
        return model
    return model.params, model.config


def track_batch(model, seqs: Seq, infer: InferConfig = InferConfig(), counts: list | None = None) -> list[np.ndarray]:
    """Track several equal-length sequences in lockstep (one batched forward per frame).

    ``counts`` (if given) receives the primitive count of every per-frame forward.
    """
    params, cfg = _unpack_model(model)
    T = len(seqs[0])
    if any(len(s) != T for s in seqs):
        raise ContractViolation("track_batch needs sequences of equal length")
    window = hann_window(cfg.search_grid)
    templates = []
    for s in seqs:
        x0, y0, side = crop_window(s.boxes[0], infer.template_factor, s.canvas)
        templates.append(sample_window(s.frames[0], x0, y0, side, cfg.template_res))
    templates = np.stack(templates)
    preds = [np.empty((T, 4)) for _ in seqs]
    for p, s in zip(preds, seqs):
        p[0] = s.boxes[0]
    for t in range(1, T):
        windows, searches = [], []
        for p, s in zip(preds, seqs):
            win = crop_window(p[t - 1], infer.search_factor, s.canvas)
            windows.append(win)
            searches.append(sample_window(s.frames[t], *win, cfg.search_res))
        with ad.no_grad(), ad.count_primitives() as c:
            out = forward(templates, np.stack(searches), params, cfg)
        if counts is not None:
            counts.append(c.count)
        score = penalize(out.score.data, window, infer.gamma)
        cells = argmax_cells(score)
        boxes = decode_boxes(out.score.data, out.offset.data, out.size.data, cells)
        for k, (p, s) in enumerate(zip(preds, seqs)):
            b = box_from_crop(boxes[k], *windows[k], s.canvas)
            b[2:] = np.clip(b[2:], MIN_BOX, 1.0)
            b[:2] = np.clip(b[:2], 0.0, 1.0)
            p[t] = b
    return preds


def track_sequence(model, seq, infer: InferConfig = InferConfig()) -> np.ndarray:
    """Predicted canvas-normalized boxes for every frame; frame 0 is the given ground truth."""
    return track_batch(model, [seq], infer)[0]


# ---------------------------------------------------------------------------
# metrics

def _visible(preds, gts, visibility):
    preds, gts = np.asarray(preds, dtype=np.float64), np.asarray(gts, dtype=np.float64)
    if preds.shape != gts.shape:
        raise ContractViolation(f"prediction shape {preds.shape} vs ground truth {gts.shape}")
    vis = np.ones(len(gts), dtype=bool) if visibility is None else np.asarray(visibility, dtype=bool)
    if not vis.any():
        raise UndefinedMetric("no visible frames")
    return preds[vis], gts[vis]


def success_curve(preds, gts, visibility=None, thresholds=SUCCESS_THRESHOLDS) -> np.ndarray:
    p, g = _visible(preds, gts, visibility)
    ious = iou(p, g)
    return np.array([np.mean(ious > th) for th in thresholds])


def success_auc(preds, gts, visibility=None) -> float:
    return float(np.mean(success_curve(preds, gts, visibility)))


def precision_threshold_px(canvas: int, reference_canvas: int | None = REFERENCE_CANVAS) -> float:
    if reference_canvas is None or canvas >= reference_canvas:
        return PRECISION_PX
    return PRECISION_PX * canvas / reference_canvas


def precision_metrics(preds, gts, visibility, canvas: int,
                      reference_canvas: int | None = REFERENCE_CANVAS) -> tuple[float, float]:
    """(precision at the 20 px threshold, normalized-precision AUC)."""
    p, g = _visible(preds, gts, visibility)
    dist = np.hypot(p[:, 0] - g[:, 0], p[:, 1] - g[:, 1]) * canvas
    prec = float(np.mean(dist <= precision_threshold_px(canvas, reference_canvas)))
    scale = np.sqrt(g[:, 2] * g[:, 3] * canvas**2)
    nd = dist / scale
    nprec = float(np.mean([np.mean(nd <= th) for th in NORM_PRECISION_THRESHOLDS]))
    return prec, nprec


# ---------------------------------------------------------------------------
# suites and reports

@dataclass
class SuiteResult:
    name: str
    trajectories: int
    auc: float
    precision: float
    norm_precision: float
    curve: np.ndarray | None = None


@dataclass
class EvalReport:
    suites: list = field(default_factory=list)
    mean_auc: float = float("nan")
    checkpoint_id: str | None = None
    wall_clock: float = 0.0

    def as_dict(self) -> dict:
        return {
            "suites": [{"name": s.name, "trajectories": s.trajectories, "auc": s.auc,
                        "precision": s.precision, "norm_precision": s.norm_precision} for s in self.suites],
            "mean_auc": self.mean_auc,
            "checkpoint_id": self.checkpoint_id,
            "wall_clock": self.wall_clock,
        }


def bench_aggregate(results: Seq[SuiteResult], checkpoint_id: str | None = None, wall_clock: float = 0.0) -> EvalReport:
    """Unweighted mean of per-suite AUCs; suites are reported in name order."""
    if not results:
        raise ContractViolation("bench_aggregate needs at least one suite")
    ordered = sorted(results, key=lambda r: r.name)
    mean = float(sum(Fraction(r.auc) for r in ordered) / len(ordered))  # exact mean, rounded once
    return EvalReport(list(ordered), mean, checkpoint_id, wall_clock)


def evaluate_suite(model, suite: Dataset, infer: InferConfig = InferConfig(),
                   reference_canvas: int | None = REFERENCE_CANVAS) -> SuiteResult:
    seqs = suite.sequences
    preds = []
    by_len: dict[int, list[int]] = {}
    for i, s in enumerate(seqs):
        by_len.setdefault(len(s), []).append(i)
    preds = [None] * len(seqs)
    for idx in by_len.values():
        for i, p in zip(idx, track_batch(model, [seqs[i] for i in idx], infer)):
            preds[i] = p
    aucs, precs, nprecs, curves = [], [], [], []
    for s, p in zip(seqs, preds):
        if not s.visible.any():
            continue
        curves.append(success_curve(p, s.boxes, s.visible))
        aucs.append(float(np.mean(curves[-1])))
        pr, npr = precision_metrics(p, s.boxes, s.visible, s.canvas, reference_canvas)
        precs.append(pr)
        nprecs.append(npr)
    return SuiteResult(suite.name, len(seqs), float(np.mean(aucs)), float(np.mean(precs)),
                       float(np.mean(nprecs)), np.mean(curves, axis=0))


def evaluate(model, suites: Seq[Dataset], infer: InferConfig = InferConfig(), checkpoint_id: str | None = None,
             reference_canvas: int | None = REFERENCE_CANVAS) -> EvalReport:
    t0 = time.perf_counter()
    results = [evaluate_suite(model, s, infer, reference_canvas) for s in suites]
    return bench_aggregate(results, checkpoint_id, time.perf_counter() - t0)


SUITE_STYLES = {
    "steady": dict(velocity_range=(0.0, 0.015), turn_prob=0.05, distractors=0, occluder_prob=0.0),
    "agile": dict(velocity_range=(0.02, 0.04), turn_prob=0.3, distractors=1, occluder_prob=0.0),
    "cluttered": dict(velocity_range=(0.005, 0.025), turn_prob=0.1, distractors=3, occluder_prob=0.15),
}


def make_bench(seed: int = 1234, per_suite: int = 12, length: int = 30, canvas: int = 64,
               styles: dict | None = None) -> list[Dataset]:
    """Synthetic benchmark: one held-out suite per motion/clutter style."""
    styles = SUITE_STYLES if styles is None else styles
    suites = []
    for k, (name, style) in enumerate(sorted(styles.items())):
        specs = []
        for child in split_seed(seed + 7919 * k, per_suite):
            r = np.random.default_rng(child)
            specs.append(SequenceSpec(
                length=length, canvas=canvas, shape=("disc", "rectangle", "triangle")[r.integers(3)],
                color=tuple(float(c) for c in r.uniform(0.05, 0.95, 3)), seed=int(r.integers(2**31)), **style))
        suites.append(dataset_from_specs(name, specs))
    return suites


REPORT_COLUMNS = ["suite", "trajectories", "auc", "precision", "norm_precision"]


def write_report_csv(report: EvalReport, path) -> None:
    """Per-suite rows followed by one ``mean`` row."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(REPORT_COLUMNS)
        for s in report.suites:
            w.writerow([s.name, s.trajectories, repr(s.auc), repr(s.precision), repr(s.norm_precision)])
        n = len(report.suites)
        w.writerow(["mean", sum(s.trajectories for s in report.suites), repr(report.mean_auc),
                    repr(math.fsum(s.precision for s in report.suites) / n),
                    repr(math.fsum(s.norm_precision for s in report.suites) / n)])


def read_report_csv(path) -> dict:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return {r["suite"]: r for r in rows}


def write_curve_csv(report: EvalReport, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["suite"] + [f"{t:.2f}" for t in SUCCESS_THRESHOLDS])
        for s in report.suites:
            if s.curve is not None:
                w.writerow([s.name] + [repr(float(v)) for v in s.curve])


def report_path(out_dir, name: str = "eval") -> Path:
    return Path(out_dir) / f"{name}.csv"
