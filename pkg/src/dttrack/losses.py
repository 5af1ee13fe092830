"""Tracking losses: Gaussian-weighted focal, GIoU, L1, feature L2 and the
soft-target tracking loss used between two model outputs."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .boxes import NormBox
from .errors import ContractViolation, NumericFault
from .model import SCORE_EPS, TrackOutput, argmax_cells, decode_boxes
from .resample import resample_maps

__all__ = [
    "NormBox",
    "TargetMaps",
    "LossWeights",
    "make_gaussian_target",
    "make_targets",
    "focal_loss",
    "giou",
    "giou_loss",
    "l1_box",
    "track_loss",
    "soft_track_loss",
    "feature_l2",
]

FOCAL_ALPHA = 2.0
FOCAL_BETA = 4.0


@dataclass(frozen=True)
class LossWeights:
    cls: float = 1.0
    iou: float = 2.0
    l1: float = 5.0


@dataclass
class TargetMaps:
    score: np.ndarray  # (S, S) or (B, S, S)
    offset: np.ndarray  # (2,) or (B, 2)
    size: np.ndarray  # (2,) or (B, 2)
    cell: np.ndarray  # (2,) row/col or (B, 2)


def gaussian_sigma(w: float, h: float, S: int) -> float:
    return max(1.0, (w * S + h * S) / 12.0)


def make_gaussian_target(gt: NormBox, S: int) -> TargetMaps:
    """Gaussian bump centred on the grid cell that contains the box centre."""
    ci = min(int(np.floor(gt.cy * S)), S - 1)
    cj = min(int(np.floor(gt.cx * S)), S - 1)
    sigma = gaussian_sigma(gt.w, gt.h, S)
    ii, jj = np.mgrid[0:S, 0:S]
    score = np.exp(-((ii - ci) ** 2 + (jj - cj) ** 2) / (2 * sigma**2))
    score[ci, cj] = 1.0
    return TargetMaps(
        score=score,
        offset=np.array([gt.cx * S - cj, gt.cy * S - ci]),
        size=np.array([gt.w, gt.h]),
        cell=np.array([ci, cj]),
    )


def make_targets(boxes: np.ndarray, S: int) -> TargetMaps:
    """Stack per-sample targets for a (B, 4) array of boxes."""
    maps = [make_gaussian_target(NormBox.from_array(b), S) for b in np.asarray(boxes)]
    return TargetMaps(
        score=np.stack([m.score for m in maps]),
        offset=np.stack([m.offset for m in maps]),
        size=np.stack([m.size for m in maps]),
        cell=np.stack([m.cell for m in maps]),
    )


def focal_loss(score: Tensor, target: TargetMaps | np.ndarray) -> Tensor:
    """Gaussian-weighted focal loss, normalised by the number of peak cells, batch-averaged."""
    t = np.asarray(target.score if isinstance(target, TargetMaps) else target, dtype=np.float64)
    if t.shape != score.shape:
        raise ContractViolation(f"focal_loss: score {score.shape} vs target {t.shape}")
    if t.ndim == 2:
        t = t[None]
        score = score.reshape((1,) + score.shape)
    pos = (t == 1.0).astype(np.float64)
    neg_w = (1.0 - t) ** FOCAL_BETA * (1.0 - pos)
    one_minus = 1.0 - score
    pos_term = (one_minus**FOCAL_ALPHA) * score.log() * pos
    neg_term = (score**FOCAL_ALPHA) * one_minus.log() * neg_w
    per_sample = -(pos_term + neg_term).sum(axis=(1, 2))
    num_pos = np.maximum(pos.sum(axis=(1, 2)), 1.0)
    loss = (per_sample / num_pos).mean()
    if not np.isfinite(loss.data):
        raise NumericFault("focal loss is not finite")
    return loss


# -- box terms on (B,)-shaped component tensors ------------------------------

def _as_components(box) -> list:
    """NormBox / (4,) / (B,4) array / list of 4 tensors -> list of 4 (B,) tensors."""
    if isinstance(box, (list, tuple)) and len(box) == 4 and isinstance(box[0], Tensor):
        return list(box)
    if isinstance(box, NormBox):
        box = box.to_array()
    if isinstance(box, Tensor):
        b = box if box.ndim == 2 else box.reshape(1, 4)
        return [b[:, k] for k in range(4)]
    a = np.atleast_2d(np.asarray(box, dtype=np.float64))
    return [Tensor(a[:, k]) for k in range(4)]


def _min(a, b):
    return a - (a - b).relu()


def _max(a, b):
    return b + (a - b).relu()


def giou_terms(a, b) -> Tensor:
    """Per-sample GIoU of two boxes given as center-size components."""
    acx, acy, aw, ah = _as_components(a)
    bcx, bcy, bw, bh = _as_components(b)
    ax0, ax1 = acx - aw * 0.5, acx + aw * 0.5
    ay0, ay1 = acy - ah * 0.5, acy + ah * 0.5
    bx0, bx1 = bcx - bw * 0.5, bcx + bw * 0.5
    by0, by1 = bcy - bh * 0.5, bcy + bh * 0.5
    iw = (_min(ax1, bx1) - _max(ax0, bx0)).relu()
    ih = (_min(ay1, by1) - _max(ay0, by0)).relu()
    inter = iw * ih
    union = aw * ah + bw * bh - inter
    hull = (_max(ax1, bx1) - _min(ax0, bx0)) * (_max(ay1, by1) - _min(ay0, by0))
    return inter / union - (hull - union) / hull


def giou(a, b) -> float:
    """Generalized IoU of two boxes, in [-1, 1]."""
    with ad.no_grad(), ad.precision("f64"):
        return float(giou_terms(a, b).data.reshape(-1)[0])


def giou_loss(a, b) -> Tensor:
    """Batch mean of 1 - GIoU."""
    return (1.0 - giou_terms(a, b)).mean()


def l1_box(a, b) -> Tensor:
    """Mean absolute coordinate difference, batch-averaged."""
    ca, cb = _as_components(a), _as_components(b)
    diffs = [x - y for x, y in zip(ca, cb)]
    total = diffs[0].relu() + (-diffs[0]).relu()
    for d in diffs[1:]:
        total = total + d.relu() + (-d).relu()
    return (total * 0.25).mean()


def _one_hot(cells: np.ndarray, S: int) -> np.ndarray:
    oh = np.zeros((len(cells), 1, S, S))
    oh[np.arange(len(cells)), 0, cells[:, 0], cells[:, 1]] = 1.0
    return oh


def boxes_at(out: TrackOutput, cells: np.ndarray, detach: bool = False) -> list:
    """Differentiable (cx, cy, w, h) components read from the maps at ``cells``."""
    offset, size = out.offset, out.size
    if detach:
        offset, size = offset.detach(), size.detach()
    S = offset.shape[-1]
    oh = _one_hot(np.asarray(cells), S)
    off = (offset * oh).sum(axis=(2, 3))  # (B, 2)
    sz = (size * oh).sum(axis=(2, 3))
    cx = (off[:, 0] + cells[:, 1].astype(np.float64)) * (1.0 / S)
    cy = (off[:, 1] + cells[:, 0].astype(np.float64)) * (1.0 / S)
    return [cx, cy, sz[:, 0], sz[:, 1]]


def track_loss(pred: TrackOutput, gt_boxes, targets: TargetMaps | None = None,
               weights: LossWeights = LossWeights(), parts: dict | None = None) -> Tensor:
    """Ground-truth tracking loss: focal + 2 (1 - GIoU) + 5 L1 with boxes read at the gt cell."""
    gt = np.atleast_2d(np.asarray(gt_boxes.to_array() if isinstance(gt_boxes, NormBox) else gt_boxes))
    S = pred.score.shape[-1]
    if targets is None:
        targets = make_targets(gt, S)
    cells = np.atleast_2d(targets.cell)
    score_t = targets.score if targets.score.ndim == 3 else targets.score[None]
    cls = focal_loss(pred.score, score_t)
    pbox = boxes_at(pred, cells)
    gl = giou_loss(pbox, gt)
    l1 = l1_box(pbox, gt)
    if parts is not None:
        parts.update(cls=float(cls.data), giou=float(gl.data), l1=float(l1.data))
    return cls * weights.cls + gl * weights.iou + l1 * weights.l1


def bce_map(student: Tensor, reference) -> Tensor:
    """Mean per-cell binary cross-entropy of a student map against soft targets, batch-averaged."""
    r = reference
    return -(r * student.log() + (1.0 - r) * (1.0 - student).log()).mean()


def soft_track_loss(student: TrackOutput, reference: TrackOutput, weights: LossWeights = LossWeights(),
                    detach_reference: bool = True, parts: dict | None = None) -> Tensor:
    """Tracking loss between two outputs, treating the reference map as soft targets.

    Box terms compare the two outputs' boxes decoded at the reference argmax cell.
    """
    if student.score.shape != reference.score.shape:
        if not detach_reference or student.score.shape[0] != reference.score.shape[0]:
            raise ContractViolation(
                f"soft_track_loss: map shapes {student.score.shape} vs {reference.score.shape}")
        # reference at another resolution: compare in normalized crop space
        S = student.score.shape[-1]
        ref_score = np.clip(resample_maps(reference.score.data.astype(np.float64), S), SCORE_EPS, 1 - SCORE_EPS)
        ref_boxes = reference.boxes
        if ref_boxes is None:
            ref_boxes = decode_boxes(reference.score.data, reference.offset.data, reference.size.data)
        cells = np.clip(np.floor(ref_boxes[:, [1, 0]] * S).astype(int), 0, S - 1)
        rbox = ref_boxes
    else:
        ref_score = reference.score.detach() if detach_reference else reference.score
        cells = argmax_cells(reference.score.data)
        rbox = boxes_at(reference, cells, detach=detach_reference)
    cls = bce_map(student.score, ref_score)
    sbox = boxes_at(student, cells)
    gl = giou_loss(sbox, rbox)
    l1 = l1_box(sbox, rbox)
    if parts is not None:
        parts.update(cls=float(cls.data), giou=float(gl.data), l1=float(l1.data))
    return cls * weights.cls + gl * weights.iou + l1 * weights.l1


def map_entropy(score: np.ndarray) -> float:
    """Mean pointwise binary entropy of a probability map: the floor of :func:`bce_map`."""
    p = np.asarray(score, dtype=np.float64)
    return float(np.mean(-(p * np.log(p) + (1 - p) * np.log(1 - p))))


def feature_l2(F: Sequence[Tensor], F_ref: Sequence[Tensor], layers: Sequence[int] = (-1,),
               adapter: Callable | None = None) -> Tensor:
    """Mean squared feature difference over the selected layers, averaged over layers.

    ``adapter(layer, tensor)`` maps the reference side into the student's shape.
    """
    if not layers:
        raise ContractViolation("feature_l2 needs at least one layer")
    total = None
    for layer in layers:
        try:
            a, b = F[layer], F_ref[layer]
        except IndexError:
            raise ContractViolation(f"layer {layer} missing: {len(F)} vs {len(F_ref)} feature layers") from None
        if adapter is not None:
            b = adapter(layer, b)
        if a.shape != b.shape:
            raise ContractViolation(f"feature shape mismatch {a.shape} vs {b.shape} and no adapter")
        d = a - b
        term = (d * d).mean()
        total = term if total is None else total + term
    return total * (1.0 / len(layers))
