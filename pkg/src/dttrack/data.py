"""Synthetic tracking videos, the ``.seq`` container, datasets, balanced
sampling and template/search crop extraction.

Sequence container layout (``<name>.seq``)::

    b"DTSQ1" | uint32 LE frame count | uint32 LE H | uint32 LE W
    frames as raw uint8 RGB, frame-major, row-major
    UTF-8 CSV block: header ``frame,cx,cy,w,h,visible`` then one row per frame

Boxes are center-size and normalized to the canvas.
"""

from __future__ import annotations

import hashlib
import io
import json
import struct
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence as Seq

import numpy as np

from .boxes import NormBox
from .errors import ContractViolation, IntegrityError

MAGIC = b"DTSQ1"
SHAPES = ("disc", "rectangle", "triangle")
TEMPLATE_FACTOR = 2.0
SEARCH_FACTOR = 4.0


def split_seed(seed: int, n: int) -> list[int]:
    """Derive ``n`` independent 32-bit child seeds from one parent seed."""
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(n)]


@dataclass(frozen=True)
class SequenceSpec:
    length: int = 24
    canvas: int = 64
    shape: str = "disc"
    color: tuple = (0.9, 0.2, 0.2)
    size_range: tuple = (0.12, 0.22)  # fraction of the canvas side
    distractors: int = 1
    occluder_prob: float = 0.0
    velocity_range: tuple = (0.0, 0.03)  # canvas units per frame
    turn_prob: float = 0.1
    noise: float = 0.04
    seed: int = 0

    def __post_init__(self):
        if self.length < 2:
            raise ContractViolation(f"sequence length must be >= 2, got {self.length}")
        if not 0 <= self.occluder_prob < 1:
            raise ContractViolation(f"occluder probability must be in [0, 1), got {self.occluder_prob}")
        if self.shape not in SHAPES:
            raise ContractViolation(f"unknown shape {self.shape!r}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Sequence:
    frames: np.ndarray  # (T, H, W, 3) uint8
    boxes: np.ndarray  # (T, 4) canvas-normalized cx, cy, w, h
    visible: np.ndarray  # (T,) bool
    occluded: np.ndarray | None = None  # (T,) bool, an occluder was drawn
    coverage: np.ndarray | None = None  # (T,) fraction of target pixels hidden
    name: str = ""

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def canvas(self) -> int:
        return self.frames.shape[1]

    def frame(self, t: int) -> np.ndarray:
        return self.frames[t].astype(np.float32) / 255.0

    def box(self, t: int) -> NormBox:
        return NormBox.from_array(self.boxes[t])


# ---------------------------------------------------------------------------
# rendering

def _shape_mask(shape: str, cx: float, cy: float, w: float, h: float, n: int) -> np.ndarray:
    """Pixel mask of a shape whose bounding box is (cx, cy, w, h) in pixel units."""
    ys, xs = np.mgrid[0:n, 0:n] + 0.5
    if shape == "disc":
        return ((xs - cx) / (w / 2)) ** 2 + ((ys - cy) / (h / 2)) ** 2 <= 1.0
    if shape == "rectangle":
        return (np.abs(xs - cx) <= w / 2) & (np.abs(ys - cy) <= h / 2)
    # isosceles triangle, apex up
    top, bot = cy - h / 2, cy + h / 2
    frac = np.clip((ys - top) / h, 0, 1)
    return (ys >= top) & (ys <= bot) & (np.abs(xs - cx) <= frac * w / 2)


class _Mover:
    def __init__(self, rng, size, vel_range, turn_prob):
        self.w, self.h = size
        self.x = rng.uniform(self.w / 2, 1 - self.w / 2)
        self.y = rng.uniform(self.h / 2, 1 - self.h / 2)
        self.speed = rng.uniform(*vel_range)
        self.angle = rng.uniform(0, 2 * np.pi)
        self.turn_prob = turn_prob

    def step(self, rng):
        if rng.random() < self.turn_prob:
            self.angle = rng.uniform(0, 2 * np.pi)
        vx, vy = self.speed * np.cos(self.angle), self.speed * np.sin(self.angle)
        self.x, vx = _reflect(self.x + vx, vx, self.w / 2)
        self.y, vy = _reflect(self.y + vy, vy, self.h / 2)
        self.angle = np.arctan2(vy, vx)


def _reflect(pos, vel, half):
    lo, hi = half, 1 - half
    if pos < lo:
        return 2 * lo - pos, -vel
    if pos > hi:
        return 2 * hi - pos, -vel
    return pos, vel


def _random_color(rng, away_from=None):
    for _ in range(100):
        c = rng.uniform(0.05, 0.95, size=3)
        if away_from is None or np.abs(c - np.asarray(away_from)).sum() > 0.6:
            return c
    return 1.0 - np.asarray(away_from)


def generate_sequence(spec: SequenceSpec) -> Sequence:
    """Render one video; deterministic under ``spec.seed``."""
    rng = np.random.default_rng(spec.seed)
    n = spec.canvas
    base = rng.uniform(0.25, 0.75, size=3)
    # static low-frequency background plus per-frame sensor noise
    grad = np.linspace(-0.15, 0.15, n)
    background = base + grad[None, :, None] * rng.uniform(-1, 1, 3) + grad[:, None, None] * rng.uniform(-1, 1, 3)

    s = rng.uniform(*spec.size_range)
    aspect = 1.0 if spec.shape == "disc" else rng.uniform(0.7, 1.4)
    tsize = (min(s * np.sqrt(aspect), 0.95), min(s / np.sqrt(aspect), 0.95))
    target = _Mover(rng, tsize, spec.velocity_range, spec.turn_prob)
    distractors = []
    for _ in range(spec.distractors):
        k = rng.uniform(0.6, 1.4)
        d = _Mover(rng, (min(tsize[0] * k, 0.95), min(tsize[1] * k, 0.95)), spec.velocity_range, spec.turn_prob)
        distractors.append((d, _random_color(rng, spec.color)))

    T = spec.length
    frames = np.empty((T, n, n, 3), dtype=np.uint8)
    boxes = np.empty((T, 4))
    visible = np.ones(T, dtype=bool)
    occluded = np.zeros(T, dtype=bool)
    coverage = np.zeros(T)
    color = np.asarray(spec.color)
    for t in range(T):
        if t > 0:
            target.step(rng)
            for d, _ in distractors:
                d.step(rng)
        img = background + rng.normal(0, spec.noise, size=(n, n, 3))
        for d, dcol in distractors:
            img[_shape_mask(spec.shape, d.x * n, d.y * n, d.w * n, d.h * n, n)] = dcol
        tmask = _shape_mask(spec.shape, target.x * n, target.y * n, target.w * n, target.h * n, n)
        img[tmask] = color
        boxes[t] = (target.x, target.y, target.w, target.h)
        if rng.random() < spec.occluder_prob:
            occluded[t] = True
            ow = target.w * rng.uniform(0.5, 1.5)
            oh = target.h * rng.uniform(0.5, 1.5)
            ox = target.x + rng.uniform(-0.6, 0.6) * target.w
            oy = target.y + rng.uniform(-0.6, 0.6) * target.h
            omask = _shape_mask("rectangle", ox * n, oy * n, ow * n, oh * n, n)
            img[omask] = 0.5
            cov = (tmask & omask).sum() / max(tmask.sum(), 1)
            coverage[t] = cov
            visible[t] = cov <= 0.5
        frames[t] = np.round(np.clip(img, 0, 1) * 255).astype(np.uint8)
    return Sequence(frames, boxes, visible, occluded, coverage)


# ---------------------------------------------------------------------------
# container I/O

def write_sequence(seq: Sequence, path) -> None:
    path = Path(path)
    T, H, W, _ = seq.frames.shape
    buf = io.StringIO()
    buf.write("frame,cx,cy,w,h,visible\n")
    for t in range(T):
        cx, cy, w, h = seq.boxes[t]
        buf.write(f"{t},{float(cx)!r},{float(cy)!r},{float(w)!r},{float(h)!r},{int(seq.visible[t])}\n")
    try:
        with open(path, "wb") as fh:
            fh.write(MAGIC + struct.pack("<III", T, H, W))
            fh.write(np.ascontiguousarray(seq.frames, dtype=np.uint8).tobytes())
            fh.write(buf.getvalue().encode("utf-8"))
    except OSError as exc:
        raise OSError(f"cannot write sequence file {path}: {exc}") from exc


def read_sequence(path) -> Sequence:
    path = Path(path)
    raw = path.read_bytes()
    if raw[:5] != MAGIC:
        raise IntegrityError(f"{path}: bad magic {raw[:5]!r}")
    T, H, W = struct.unpack("<III", raw[5:17])
    nbytes = T * H * W * 3
    if len(raw) < 17 + nbytes:
        raise IntegrityError(f"{path}: truncated frame block")
    frames = np.frombuffer(raw, dtype=np.uint8, count=nbytes, offset=17).reshape(T, H, W, 3).copy()
    lines = raw[17 + nbytes:].decode("utf-8").strip().splitlines()
    if not lines or lines[0] != "frame,cx,cy,w,h,visible" or len(lines) != T + 1:
        raise IntegrityError(f"{path}: malformed box table")
    rows = [ln.split(",") for ln in lines[1:]]
    boxes = np.array([[float(v) for v in r[1:5]] for r in rows])
    visible = np.array([r[5] == "1" for r in rows])
    return Sequence(frames, boxes, visible, name=path.stem)


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# ---------------------------------------------------------------------------
# datasets

@dataclass
class DatasetManifest:
    name: str
    files: list
    lengths: list
    specs_digest: str
    root: str = ""

    def __len__(self) -> int:
        return len(self.files)

    def to_dict(self) -> dict:
        return {"name": self.name, "files": self.files, "lengths": self.lengths, "specs_digest": self.specs_digest}


@dataclass
class Dataset:
    """In-memory collection of sequences used by the trainer and evaluator."""

    name: str
    sequences: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.sequences)


def specs_digest(specs: Seq[SequenceSpec]) -> str:
    blob = json.dumps([s.to_dict() for s in specs], sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


def build_dataset(name: str, specs: Seq[SequenceSpec], out_dir) -> DatasetManifest:
    """Render every spec into ``out_dir/<name>/`` and write ``manifest.json`` there."""
    root = Path(out_dir) / name
    try:
        root.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create dataset directory {root}: {exc}") from exc
    files, lengths = [], []
    for i, spec in enumerate(specs):
        fname = f"{name}_{i:05d}.seq"
        write_sequence(generate_sequence(spec), root / fname)
        files.append(fname)
        lengths.append(spec.length)
    man = DatasetManifest(name, files, lengths, specs_digest(specs), str(root))
    (root / "manifest.json").write_text(json.dumps(man.to_dict(), indent=2))
    return man


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    d = json.loads(path.read_text())
    man = DatasetManifest(d["name"], d["files"], d["lengths"], d["specs_digest"], str(path.parent))
    missing = [f for f in man.files if not (path.parent / f).exists()]
    if missing:
        raise IntegrityError(f"{path}: missing sequence files {missing[:3]}")
    return man


def load_dataset(manifest: DatasetManifest | str | Path) -> Dataset:
    man = manifest if isinstance(manifest, DatasetManifest) else load_manifest(manifest)
    seqs = [read_sequence(Path(man.root) / f) for f in man.files]
    return Dataset(man.name, seqs)


def dataset_from_specs(name: str, specs: Seq[SequenceSpec]) -> Dataset:
    return Dataset(name, [generate_sequence(s) for s in specs])


def random_specs(n: int, seed: int, **fixed) -> list[SequenceSpec]:
    """Varied training specs: random shape, color, motion and clutter per sequence."""
    out = []
    for child in split_seed(seed, n):
        r = np.random.default_rng(child)
        kw = dict(
            shape=SHAPES[r.integers(3)],
            color=tuple(float(c) for c in r.uniform(0.05, 0.95, 3)),
            distractors=int(r.integers(0, 3)),
            occluder_prob=float(r.choice([0.0, 0.1, 0.2])),
            velocity_range=(0.0, float(r.uniform(0.01, 0.04))),
            seed=int(r.integers(2**31)),
        )
        kw.update(fixed)
        out.append(SequenceSpec(**kw))
    return out


def balanced_sample(datasets: Seq, rng: np.random.Generator, weights: Seq[float] | None = None) -> tuple[int, int]:
    """Two-stage draw: a dataset (uniform or by weight), then a trajectory uniformly within it."""
    if not datasets:
        raise ContractViolation("balanced_sample needs at least one dataset")
    sizes = [len(d) for d in datasets]
    if min(sizes) == 0:
        raise ContractViolation(f"empty dataset at index {sizes.index(0)}")
    if weights is None:
        di = int(rng.integers(len(datasets)))
    else:
        w = np.asarray(weights, dtype=np.float64)
        di = int(rng.choice(len(datasets), p=w / w.sum()))
    return di, int(rng.integers(sizes[di]))


# ---------------------------------------------------------------------------
# cropping

def crop_window(box: NormBox | np.ndarray, factor: float, canvas: int) -> tuple[float, float, float]:
    """(x0, y0, side) in pixels of the square crop around ``box``."""
    b = box.to_array() if isinstance(box, NormBox) else np.asarray(box, dtype=np.float64)
    side = factor * np.sqrt(max(b[2] * b[3], 1e-8)) * canvas
    return b[0] * canvas - side / 2, b[1] * canvas - side / 2, side


def sample_window(image: np.ndarray, x0: float, y0: float, side: float, res: int, fill=None) -> np.ndarray:
    """Bilinearly resample the square window to res x res; outside pixels take ``fill``."""
    a = np.asarray(image)
    img = a.astype(np.float32) / 255.0 if a.dtype == np.uint8 else a.astype(np.float32)
    H, W = img.shape[:2]
    if fill is None:
        fill = img.reshape(-1, img.shape[-1]).mean(axis=0)
    coords = (np.arange(res) + 0.5) * (side / res) - 0.5
    xs, ys = x0 + coords, y0 + coords
    out = np.zeros((res, res, img.shape[-1]), dtype=np.float32)
    xf, yf = np.floor(xs).astype(int), np.floor(ys).astype(int)
    wx, wy = (xs - xf).astype(np.float32), (ys - yf).astype(np.float32)
    for dy, wyk in ((0, 1 - wy), (1, wy)):
        yi = yf + dy
        vy = (yi >= 0) & (yi < H)
        for dx, wxk in ((0, 1 - wx), (1, wx)):
            xi = xf + dx
            vx = (xi >= 0) & (xi < W)
            tap = img[np.clip(yi, 0, H - 1)][:, np.clip(xi, 0, W - 1)]
            valid = (vy[:, None] & vx[None, :])[..., None]
            tap = np.where(valid, tap, fill)
            out += tap * (wyk[:, None] * wxk[None, :])[..., None]
    return out


def resize(image: np.ndarray, res: int) -> np.ndarray:
    """Resize a square (H, W, C) or batched (B, H, W, C) image to res x res."""
    a = np.asarray(image)
    if a.ndim == 4:
        return np.stack([resize(x, res) for x in a])
    if a.shape[0] == res:
        return a.astype(np.float32)
    return sample_window(a, 0.0, 0.0, float(a.shape[0]), res)


def box_in_crop(box: np.ndarray, x0: float, y0: float, side: float, canvas: int) -> np.ndarray:
    b = np.asarray(box, dtype=np.float64)
    return np.array([(b[0] * canvas - x0) / side, (b[1] * canvas - y0) / side, b[2] * canvas / side, b[3] * canvas / side])


def box_from_crop(box: np.ndarray, x0: float, y0: float, side: float, canvas: int) -> np.ndarray:
    b = np.asarray(box, dtype=np.float64)
    return np.array([(b[0] * side + x0) / canvas, (b[1] * side + y0) / canvas, b[2] * side / canvas, b[3] * side / canvas])


def crop_pair(seq: Sequence, t_template: int, t_search: int, template_factor: float = TEMPLATE_FACTOR,
              search_factor: float = SEARCH_FACTOR, template_res: int = 32, search_res: int = 64,
              rng: np.random.Generator | None = None, center_jitter: float = 0.0, scale_jitter: float = 0.0):
    """Template crop around frame ``t_template``'s box and search crop around ``t_search``'s.

    Returns ``(template, search, gt)`` with ``gt`` in normalized search-crop
    units, or ``None`` when either frame is invisible (the caller resamples).
    With ``rng`` given, the search window is shifted by up to ``center_jitter``
    box-scales and rescaled by up to ``scale_jitter`` (relative).
    """
    if min(template_factor, search_factor) <= 1:
        raise ContractViolation("crop factors must exceed 1")
    if not (seq.visible[t_template] and seq.visible[t_search]):
        return None
    n = seq.canvas
    tb = seq.boxes[t_template]
    x0, y0, side = crop_window(tb, template_factor, n)
    template = sample_window(seq.frames[t_template], x0, y0, side, template_res)
    sb = seq.boxes[t_search].copy()
    center = sb.copy()
    factor = search_factor
    if rng is not None:
        scale = np.sqrt(sb[2] * sb[3])
        center[:2] += rng.uniform(-center_jitter, center_jitter, 2) * scale
        factor = search_factor * np.exp(rng.uniform(-scale_jitter, scale_jitter))
    x0, y0, side = crop_window(center, factor, n)
    search = sample_window(seq.frames[t_search], x0, y0, side, search_res)
    gt = box_in_crop(sb, x0, y0, side, n)
    return template, search, gt


def sample_pair_indices(length: int, rng: np.random.Generator, max_gap: int = 30) -> tuple[int, int]:
    """Template frame t and search frame t + gap, gap uniform in [1, max_gap] clipped to the video."""
    t = int(rng.integers(0, length - 1))
    gap = int(rng.integers(1, max_gap + 1))
    return t, min(t + gap, length - 1)


def sample_batch(datasets: Seq[Dataset], rng: np.random.Generator, batch_size: int, template_res: int,
                 search_res: int, weights=None, center_jitter: float = 1.0, scale_jitter: float = 0.2,
                 max_tries: int = 50):
    """Draw ``batch_size`` training pairs via the balanced sampler."""
    ts, ss, gts = [], [], []
    while len(ts) < batch_size:
        for _ in range(max_tries):
            di, si = balanced_sample(datasets, rng, weights)
            seq = datasets[di].sequences[si]
            a, b = sample_pair_indices(len(seq), rng)
            got = crop_pair(seq, a, b, template_res=template_res, search_res=search_res, rng=rng,
                            center_jitter=center_jitter, scale_jitter=scale_jitter)
            if got is not None:
                break
        else:
            raise ContractViolation("could not find a visible frame pair")
        ts.append(got[0])
        ss.append(got[1])
        gts.append(got[2])
    return np.stack(ts), np.stack(ss), np.stack(gts)


def with_seed(spec: SequenceSpec, seed: int) -> SequenceSpec:
    return replace(spec, seed=seed)
