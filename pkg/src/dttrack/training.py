"""Dual-branch masked alignment plus frozen small-teacher transfer, and the
epoch-level training loop that combines them with ground-truth supervision."""

from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import AdamW, Tensor
from .data import resize, sample_batch
from .errors import ContractViolation, NumericFault
from .losses import LossWeights, feature_l2, soft_track_loss, track_loss
from .model import TrackerConfig, TrackOutput, forward
from .resample import grid_resampler

LOG_COLUMNS = ["epoch", "step", "L_clean", "L_transfer", "L_align", "L_total", "lr", "mask_ratio", "lambda_transfer"]


# ---------------------------------------------------------------------------
# schedules

@dataclass(frozen=True)
class Schedule:
    """Per-epoch scalar schedule.

    ``constant`` uses ``start``; ``linear`` goes from ``start`` at epoch 0 to
    ``end`` at the last epoch; ``step-drop`` is ``start`` before
    ``drop_fraction * total`` epochs and ``end`` from then on.
    """

    kind: str = "constant"
    start: float = 0.0
    end: float = 0.0
    drop_fraction: float = 1.0

    def __post_init__(self):
        if self.kind not in ("constant", "linear", "step-drop"):
            raise ContractViolation(f"unknown schedule kind {self.kind!r}")

    @classmethod
    def constant(cls, value: float) -> "Schedule":
        return cls("constant", value, value)

    @classmethod
    def linear(cls, start: float, end: float) -> "Schedule":
        return cls("linear", start, end)

    @classmethod
    def step_drop(cls, before: float, after: float, drop_fraction: float) -> "Schedule":
        return cls("step-drop", before, after, drop_fraction)

    def is_zero(self) -> bool:
        return self.start == 0 and (self.kind == "constant" or self.end == 0)

    def to_dict(self) -> dict:
        return asdict(self)


def schedule_value(s: Schedule, epoch: int, total_epochs: int) -> float:
    if not 0 <= epoch < total_epochs:
        raise ContractViolation(f"epoch {epoch} outside [0, {total_epochs})")
    if s.kind == "constant":
        return s.start
    if s.kind == "linear":
        if total_epochs == 1:
            return s.start
        if epoch == total_epochs - 1:
            return s.end
        return s.start + (s.end - s.start) * epoch / (total_epochs - 1)
    return s.start if epoch < s.drop_fraction * total_epochs else s.end


def lr_at(base_lr: float, drop_fraction: float, epoch: int, total_epochs: int) -> float:
    """Base rate, divided by 10 from epoch ``drop_fraction * total`` on."""
    return base_lr if epoch < drop_fraction * total_epochs else base_lr / 10.0


# ---------------------------------------------------------------------------
# configuration

@dataclass(frozen=True)
class DTConfig:
    total_epochs: int = 10
    steps_per_epoch: int = 20
    batch_size: int = 16
    base_lr: float = 4e-4
    lr_drop_fraction: float = 0.8
    weight_decay: float = 1e-4
    lambda_align: float = 0.1
    lambda_transfer: Schedule = Schedule.step_drop(0.5, 0.0, 0.9)
    mask_ratio: Schedule = Schedule.linear(0.05, 0.4)
    feature_layers: tuple = (-1,)
    lambda_iou: float = 2.0
    lambda_l1: float = 5.0
    mask_template: bool = False
    detach_reference: bool = True
    center_jitter: float = 1.0
    scale_jitter: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if self.lambda_align < 0 or min(self.lambda_transfer.start, self.lambda_transfer.end) < 0:
            raise ContractViolation("loss coefficients must be non-negative")
        if self.total_epochs < 1 or self.steps_per_epoch < 1 or self.batch_size < 1:
            raise ContractViolation("epochs, steps and batch size must be positive")
        for r in (self.mask_ratio.start, self.mask_ratio.end):
            if not 0 <= r < 1:
                raise ContractViolation(f"mask ratio {r} outside [0, 1)")

    @property
    def loss_weights(self) -> LossWeights:
        return LossWeights(1.0, self.lambda_iou, self.lambda_l1)

    def naive(self) -> "DTConfig":
        """Same budget with masking, alignment and transfer switched off."""
        return replace(self, lambda_align=0.0, lambda_transfer=Schedule.constant(0.0),
                       mask_ratio=Schedule.constant(0.0))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["feature_layers"] = list(self.feature_layers)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DTConfig":
        d = dict(d)
        for k in ("lambda_transfer", "mask_ratio"):
            if k in d and isinstance(d[k], dict):
                d[k] = Schedule(**d[k])
        if "feature_layers" in d:
            d["feature_layers"] = tuple(d["feature_layers"])
        return cls(**d)


# ---------------------------------------------------------------------------
# masking

@dataclass
class MaskSpec:
    mask: np.ndarray  # (N,) bool, True = masked
    ratio: float
    seed: int | None = None


def mask_count(num_patches: int, ratio: float) -> int:
    return int(math.floor(ratio * num_patches + 0.5))


def sample_mask(num_patches: int, ratio: float, rng) -> MaskSpec:
    """Uniformly random subset of exactly round(ratio * N) patches."""
    if not 0 <= ratio < 1:
        raise ContractViolation(f"mask ratio {ratio} outside [0, 1)")
    seed = None
    if not isinstance(rng, np.random.Generator):
        seed = int(rng)
        rng = np.random.default_rng(seed)
    m = np.zeros(num_patches, dtype=bool)
    k = mask_count(num_patches, ratio)
    if k:
        m[rng.choice(num_patches, size=k, replace=False)] = True
    return MaskSpec(m, ratio, seed)


def batch_masks(batch: int, num_patches: int, ratio: float, rng: np.random.Generator) -> np.ndarray:
    return np.stack([sample_mask(num_patches, ratio, rng).mask for _ in range(batch)])


# ---------------------------------------------------------------------------
# teacher and adapter

def layer_map(selection: Sequence[int], n_student: int, n_teacher: int) -> list[tuple[int, int]]:
    """Pair each selected student layer with the teacher layer at the same relative depth."""
    pairs = []
    for s in selection:
        si = s % n_student
        ti = n_teacher - 1 if si == n_student - 1 else int(round((si + 1) * n_teacher / n_student)) - 1
        pairs.append((si, max(ti, 0)))
    return pairs


class Adapter:
    """Per-layer teacher-dim -> student-dim projection plus token-grid resampling.

    Trained with the student, excluded from inference.
    """

    def __init__(self, teacher_cfg: TrackerConfig, student_cfg: TrackerConfig, selection: Sequence[int],
                 params: dict | None = None):
        self.pairs = layer_map(selection, student_cfg.num_layers, teacher_cfg.num_layers)
        dt, ds = teacher_cfg.embed_dim, student_cfg.embed_dim
        if params is None:
            params = {f"adapter.{k}.w": Tensor(np.eye(dt, ds), requires_grad=True, name=f"adapter.{k}.w")
                      for k in range(len(self.pairs))}
        self.params = params
        self.resample = None
        if teacher_cfg.search_grid != student_cfg.search_grid:
            self.resample = grid_resampler(teacher_cfg.search_grid, student_cfg.search_grid)

    @property
    def projection_shapes(self) -> list[tuple]:
        return [p.shape for p in self.params.values()]

    def __call__(self, k: int, feat: Tensor) -> Tensor:
        x = feat @ self.params[f"adapter.{k}.w"]
        if self.resample is not None:
            x = Tensor(self.resample) @ x
        return x


@dataclass
class TeacherHandle:
    params: dict
    config: TrackerConfig
    adapter: Adapter | None = None
    frozen: bool = True
    checkpoint_id: str | None = None

    def digest(self) -> str:
        return params_digest(self.params)


def params_digest(params: dict) -> str:
    h = hashlib.sha256()
    for name in sorted(params):
        h.update(name.encode())
        h.update(np.ascontiguousarray(params[name].data).tobytes())
    return h.hexdigest()


def teacher_forward(teacher: TeacherHandle, template: np.ndarray, search: np.ndarray) -> TrackOutput:
    """Frozen teacher on the clean crops, resized to its native resolution."""
    tcfg = teacher.config
    with ad.no_grad():
        return forward(resize(template, tcfg.template_res), resize(search, tcfg.search_res),
                       teacher.params, tcfg).detached()


# ---------------------------------------------------------------------------
# losses

def dual_branch_forward(template, search, mask, student: dict, cfg: TrackerConfig,
                        template_mask=None) -> tuple[TrackOutput, TrackOutput]:
    """Clean and masked passes through the same weights."""
    m = mask.mask if isinstance(mask, MaskSpec) else np.asarray(mask, dtype=bool)
    if m.shape[-1] != cfg.search_tokens:
        raise ContractViolation(f"mask has {m.shape[-1]} entries, search grid has {cfg.search_tokens} tokens")
    clean = forward(template, search, student, cfg)
    tm_empty = template_mask is None or not np.any(template_mask)
    if not m.any() and tm_empty:
        return clean, clean
    masked = forward(template, search, student, cfg, search_mask=m, template_mask=template_mask)
    return clean, masked


def transfer_loss(student_out: TrackOutput, teacher_out: TrackOutput, adapter: Adapter | None,
                  layer_selection: Sequence[int] = (-1,), weights: LossWeights = LossWeights(),
                  parts: dict | None = None) -> Tensor:
    """Soft tracking loss against the frozen teacher plus adapted feature L2."""
    if adapter is None:
        pairs = layer_map(layer_selection, len(student_out.features), len(teacher_out.features))
        fs = [student_out.features[s] for s, _ in pairs]
        ft = [teacher_out.features[t].detach() for _, t in pairs]
        if any(a.shape != b.shape for a, b in zip(fs, ft)):
            raise ContractViolation("student/teacher feature shapes differ and no adapter was given")
        feat = feature_l2(fs, ft, layers=range(len(fs)))
    else:
        fs = [student_out.features[s] for s, _ in adapter.pairs]
        ft = [teacher_out.features[t].detach() for _, t in adapter.pairs]
        feat = feature_l2(fs, ft, layers=range(len(fs)), adapter=adapter)
    sub: dict = {}
    out = soft_track_loss(student_out, teacher_out, weights, detach_reference=True, parts=sub) + feat
    if parts is not None:
        parts.update({f"transfer_{k}": v for k, v in sub.items()}, transfer_feat=float(feat.data))
    return out


def align_loss(clean_out: TrackOutput, masked_out: TrackOutput, layer_selection: Sequence[int] = (-1,),
               weights: LossWeights = LossWeights(), detach_reference: bool = True,
               parts: dict | None = None) -> Tensor:
    """Masked branch as student, clean branch as reference."""
    ref_feats = clean_out.features
    if detach_reference:
        ref_feats = [f.detach() for f in ref_feats]
    sub: dict = {}
    out = soft_track_loss(masked_out, clean_out, weights, detach_reference=detach_reference, parts=sub)
    feat = feature_l2(masked_out.features, ref_feats, layers=layer_selection)
    if parts is not None:
        parts.update({f"align_{k}": v for k, v in sub.items()}, align_feat=float(feat.data))
    return out + feat


def total_loss(clean_out: TrackOutput, masked_out: TrackOutput | None, teacher_out: TrackOutput | None, gt,
               lambda_transfer: float, lambda_align: float, adapter: Adapter | None = None,
               layer_selection: Sequence[int] = (-1,), weights: LossWeights = LossWeights(),
               detach_reference: bool = True, parts: dict | None = None) -> Tensor:
    """L_clean + lambda_transfer * L_transfer + lambda_align * L_align.

    A term whose coefficient is exactly zero is not evaluated.
    """
    if lambda_transfer < 0 or lambda_align < 0:
        raise ContractViolation("loss coefficients must be non-negative")
    parts = {} if parts is None else parts
    loss = track_loss(clean_out, gt, weights=weights)
    parts["L_clean"] = float(loss.data)
    parts["L_transfer"] = float("nan")
    parts["L_align"] = float("nan")
    if lambda_transfer > 0:
        if teacher_out is None:
            raise ContractViolation("lambda_transfer > 0 needs a teacher output")
        lt = transfer_loss(clean_out, teacher_out, adapter, layer_selection, weights, parts)
        parts["L_transfer"] = float(lt.data)
        loss = loss + lt * lambda_transfer
    if lambda_align > 0:
        if masked_out is None:
            raise ContractViolation("lambda_align > 0 needs a masked-branch output")
        la = align_loss(clean_out, masked_out, layer_selection, weights, detach_reference, parts)
        parts["L_align"] = float(la.data)
        loss = loss + la * lambda_align
    parts["L_total"] = float(loss.data)
    return loss


# ---------------------------------------------------------------------------
# training loop

def training_rngs(seed: int) -> tuple[np.random.Generator, np.random.Generator]:
    """Independent (data, mask) generators split from one seed."""
    data_ss, mask_ss = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(data_ss), np.random.default_rng(mask_ss)


@dataclass
class TrainResult:
    params: dict
    log: list = field(default_factory=list)  # one dict per step
    adapter: Adapter | None = None

    def epoch_means(self) -> list[dict]:
        out = []
        for e in sorted({r["epoch"] for r in self.log}):
            rows = [r for r in self.log if r["epoch"] == e]
            row = {"epoch": e}
            for k in ("L_clean", "L_transfer", "L_align", "L_total"):
                vals = np.array([r[k] for r in rows], dtype=float)
                row[k] = float(np.nanmean(vals)) if np.isfinite(vals).any() else float("nan")
            row.update(lr=rows[0]["lr"], mask_ratio=rows[0]["mask_ratio"], lambda_transfer=rows[0]["lambda_transfer"])
            out.append(row)
        return out


def write_log_csv(log: Sequence[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=LOG_COLUMNS, extrasaction="ignore")
        w.writeheader()
        for row in log:
            w.writerow(row)


def train(student: dict, teacher: TeacherHandle | None, datasets, cfg: DTConfig, model_cfg: TrackerConfig,
          weights: Sequence[float] | None = None, log_path=None, progress=None) -> TrainResult:
    """Train ``student`` in place and return it with the per-step log."""
    if teacher is None and not cfg.lambda_transfer.is_zero():
        raise ContractViolation("no teacher given but the lambda_transfer schedule is not identically 0")
    if teacher is not None and not teacher.frozen:
        raise ContractViolation("teacher must be frozen")
    data_rng, mask_rng = training_rngs(cfg.seed)
    adapter = None
    trainable = dict(student)
    if teacher is not None:
        adapter = teacher.adapter or Adapter(teacher.config, model_cfg, cfg.feature_layers)
        teacher.adapter = adapter
        trainable.update(adapter.params)
        teacher_digest = teacher.digest()
    opt = AdamW(lr=cfg.base_lr, weight_decay=cfg.weight_decay)
    weights_l = cfg.loss_weights
    log = []
    step_index = 0
    for epoch in range(cfg.total_epochs):
        lr = lr_at(cfg.base_lr, cfg.lr_drop_fraction, epoch, cfg.total_epochs)
        ratio = schedule_value(cfg.mask_ratio, epoch, cfg.total_epochs)
        lam_t = schedule_value(cfg.lambda_transfer, epoch, cfg.total_epochs)
        lam_a = cfg.lambda_align
        for step in range(cfg.steps_per_epoch):
            tmpl, srch, gt = sample_batch(datasets, data_rng, cfg.batch_size, model_cfg.template_res,
                                          model_cfg.search_res, weights, cfg.center_jitter, cfg.scale_jitter)
            for p in trainable.values():
                p.grad = None
            masked = None
            if lam_a > 0:
                smask = batch_masks(cfg.batch_size, model_cfg.search_tokens, ratio, mask_rng)
                tmask = batch_masks(cfg.batch_size, model_cfg.template_tokens, ratio, mask_rng) if cfg.mask_template else None
                clean, masked = dual_branch_forward(tmpl, srch, smask, student, model_cfg, template_mask=tmask)
            else:
                clean = forward(tmpl, srch, student, model_cfg)
            teacher_out = teacher_forward(teacher, tmpl, srch) if (teacher is not None and lam_t > 0) else None
            parts: dict = {}
            loss = total_loss(clean, masked, teacher_out, gt, lam_t, lam_a, adapter, cfg.feature_layers,
                              weights_l, cfg.detach_reference, parts)
            if not np.isfinite(loss.data):
                ad.discard_record()
                raise NumericFault(f"non-finite loss at step {step_index}: {parts}")
            grads = ad.backward(loss)
            full = {k: grads.get(k, np.zeros_like(p.data)) for k, p in trainable.items()}
            opt.step(trainable, full, lr)
            row = {"epoch": epoch, "step": step_index, "lr": lr, "mask_ratio": ratio if lam_a > 0 else 0.0,
                   "lambda_transfer": lam_t, **{k: parts[k] for k in ("L_clean", "L_transfer", "L_align", "L_total")}}
            log.append(row)
            step_index += 1
            if progress is not None:
                progress(row)
    if teacher is not None and teacher.digest() != teacher_digest:
        raise ContractViolation("teacher parameters changed during training")
    if log_path is not None:
        write_log_csv(log, Path(log_path))
    return TrainResult(student, log, adapter)
