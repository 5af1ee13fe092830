"""One-stream transformer tracker with a center-style head.

Template and search patches are embedded, given separate learned positional
embeddings, concatenated and encoded jointly by pre-norm transformer blocks.
The search tokens of the last block feed three pointwise stacks that emit a
score map, a sub-cell offset map and a size map.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, apply_primitive
from .boxes import NormBox
from .errors import ContractViolation, NumericFault

SIZE_LOG_RANGE = 4.0  # size = exp(SIZE_LOG_RANGE * (sigmoid(z) - 1)) lies in (e^-4, 1)
SCORE_EPS = 1e-4
SCORE_PRIOR_BIAS = -2.19  # sigmoid(-2.19) ~ 0.1


@dataclass(frozen=True)
class TrackerConfig:
    patch_size: int = 8
    embed_dim: int = 32
    num_layers: int = 2
    num_heads: int = 4
    mlp_ratio: float = 4.0
    template_res: int = 32
    search_res: int = 64
    head_hidden: int = 32

    def __post_init__(self):
        p = self.patch_size
        if p <= 0 or self.template_res % p or self.search_res % p:
            raise ContractViolation(
                f"resolutions {self.template_res}/{self.search_res} not divisible by patch size {p}"
            )
        if self.embed_dim % self.num_heads:
            raise ContractViolation(f"embed_dim {self.embed_dim} not divisible by num_heads {self.num_heads}")
        if self.num_layers < 1:
            raise ContractViolation("num_layers must be >= 1")

    @property
    def template_tokens(self) -> int:
        return (self.template_res // self.patch_size) ** 2

    @property
    def search_grid(self) -> int:
        return self.search_res // self.patch_size

    @property
    def search_tokens(self) -> int:
        return self.search_grid**2

    @property
    def mlp_hidden(self) -> int:
        return int(round(self.embed_dim * self.mlp_ratio))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrackerConfig":
        return cls(**d)


def parameter_shapes(cfg: TrackerConfig) -> dict[str, tuple]:
    """Name -> shape for every tracker parameter, in canonical order."""
    D, p = cfg.embed_dim, cfg.patch_size
    hid, hh = cfg.mlp_hidden, cfg.head_hidden
    shapes: dict[str, tuple] = {
        "patch.w": (p * p * 3, D),
        "patch.b": (D,),
        "pos.template": (cfg.template_tokens, D),
        "pos.search": (cfg.search_tokens, D),
        "mask_token": (D,),
    }
    for i in range(cfg.num_layers):
        pre = f"blocks.{i}."
        shapes.update({
            pre + "ln1.g": (D,), pre + "ln1.b": (D,),
            pre + "qkv.w": (D, 3 * D), pre + "q.b": (D,), pre + "v.b": (D,),
            pre + "proj.w": (D, D), pre + "proj.b": (D,),
            pre + "ln2.g": (D,), pre + "ln2.b": (D,),
            pre + "fc1.w": (D, hid), pre + "fc1.b": (hid,),
            pre + "fc2.w": (hid, D), pre + "fc2.b": (D,),
        })
    shapes["norm.g"] = (D,)
    shapes["norm.b"] = (D,)
    for head, out in (("score", 1), ("offset", 2), ("size", 2)):
        shapes.update({
            f"head.{head}.fc1.w": (D, hh), f"head.{head}.fc1.b": (hh,),
            f"head.{head}.fc2.w": (hh, out), f"head.{head}.fc2.b": (out,),
        })
    return shapes


def parameter_count(cfg: TrackerConfig) -> int:
    return int(sum(np.prod(s) for s in parameter_shapes(cfg).values()))


def init_params(cfg: TrackerConfig, seed: int | np.random.Generator = 0) -> dict[str, Tensor]:
    """Fresh parameters: Xavier-uniform matrices, small uniform embeddings, zero biases."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    params = {}
    for name, shape in parameter_shapes(cfg).items():
        leaf = name.rsplit(".", 1)[-1]
        if name.startswith("pos.") or name == "mask_token":
            arr = rng.uniform(-0.05, 0.05, size=shape)
        elif leaf == "w":
            lim = np.sqrt(6.0 / (shape[0] + shape[1]))
            arr = rng.uniform(-lim, lim, size=shape)
        elif leaf == "g":
            arr = np.ones(shape)
        else:
            arr = np.zeros(shape)
        if name == "head.score.fc2.b":
            arr = np.full(shape, SCORE_PRIOR_BIAS)
        params[name] = Tensor(arr, requires_grad=True, name=name)
    return params


@dataclass
class TrackOutput:
    score: Tensor  # (B, S, S)
    offset: Tensor  # (B, 2, S, S), channel 0 = x
    size: Tensor  # (B, 2, S, S), channel 0 = w
    features: list = field(default_factory=list)  # per layer (B, Ns, D)
    boxes: np.ndarray | None = None  # (B, 4) decoded at the score argmax

    @property
    def box(self) -> NormBox:
        return NormBox.from_array(self.boxes[0])

    def detached(self) -> "TrackOutput":
        return TrackOutput(self.score.detach(), self.offset.detach(), self.size.detach(),
                           [f.detach() for f in self.features], self.boxes)


def patchify(image, patch_size: int, weight, bias=None) -> Tensor:
    """Split (B, H, W, C) or (H, W, C) images into raster-ordered patches and project them."""
    img = image if isinstance(image, Tensor) else Tensor(image)
    single = img.ndim == 3
    if single:
        img = img.reshape((1,) + img.shape)
    B, H, W, C = img.shape
    p = patch_size
    if H % p or W % p:
        raise ContractViolation(f"image {H}x{W} not divisible by patch size {p}")
    x = img.reshape(B, H // p, p, W // p, p, C).transpose(0, 1, 3, 2, 4, 5)
    x = x.reshape(B, (H // p) * (W // p), p * p * C)
    tokens = x @ weight
    if bias is not None:
        tokens = tokens + bias
    return tokens.reshape(tokens.shape[1:]) if single else tokens


def _linear(x: Tensor, params, name: str) -> Tensor:
    return x @ params[name + ".w"] + params[name + ".b"]


def _affine_norm(x: Tensor, params, name: str) -> Tensor:
    return x.layer_norm() * params[name + ".g"] + params[name + ".b"]


def _attention(x: Tensor, params, pre: str, cfg: TrackerConfig) -> Tensor:
    B, N, D = x.shape
    H = cfg.num_heads
    dh = D // H
    # no key bias: softmax is invariant to it, so its gradient is identically zero
    bias = ad.concatenate([params[pre + "q.b"], Tensor(np.zeros(D)), params[pre + "v.b"]])
    qkv = (x @ params[pre + "qkv.w"] + bias).reshape(B, N, 3, H, dh).transpose(2, 0, 3, 1, 4)
    q, k, v = qkv[0], qkv[1], qkv[2]
    att = (q @ k.transpose(0, 1, 3, 2)) * (1.0 / np.sqrt(dh))
    y = att.softmax() @ v  # (B, H, N, dh)
    y = y.transpose(0, 2, 1, 3).reshape(B, N, D)
    return _linear(y, params, pre + "proj")


def _apply_mask(tokens: Tensor, mask, token: Tensor) -> Tensor:
    m = np.asarray(mask, dtype=bool)
    if m.ndim == 1:
        m = np.broadcast_to(m, tokens.shape[:2])
    if m.shape != tokens.shape[:2]:
        raise ContractViolation(f"mask shape {m.shape} does not match token grid {tokens.shape[:2]}")
    if not m.any():
        return tokens
    mf = m[..., None].astype(ad.get_dtype())
    return tokens * (1.0 - mf) + token * mf


def _check_finite(t: Tensor, where: str) -> None:
    if not np.isfinite(t.data).all():
        raise NumericFault(f"non-finite activation in {where}")


def _as_batch(img, res: int, what: str) -> np.ndarray:
    a = img.data if isinstance(img, Tensor) else np.asarray(img)
    if a.ndim == 3:
        a = a[None]
    if a.ndim != 4 or a.shape[1] != res or a.shape[2] != res or a.shape[3] != 3:
        raise ContractViolation(f"{what} image shape {a.shape[1:]} does not match configured {res}x{res}x3")
    return a


def forward(template, search, params: dict, cfg: TrackerConfig, search_mask=None, template_mask=None) -> TrackOutput:
    """Run the tracker on a batch of template/search crops.

    ``search_mask``/``template_mask`` are boolean (B, N) or (N,) arrays; masked
    tokens are replaced by the learned mask token after positional embedding.
    """
    t_img = _as_batch(template, cfg.template_res, "template")
    s_img = _as_batch(search, cfg.search_res, "search")
    if t_img.shape[0] != s_img.shape[0]:
        raise ContractViolation(f"batch mismatch {t_img.shape[0]} vs {s_img.shape[0]}")
    B = s_img.shape[0]
    p = cfg.patch_size
    xt = patchify(Tensor(t_img), p, params["patch.w"], params["patch.b"]) + params["pos.template"]
    xs = patchify(Tensor(s_img), p, params["patch.w"], params["patch.b"]) + params["pos.search"]
    if template_mask is not None:
        xt = _apply_mask(xt, template_mask, params["mask_token"])
    if search_mask is not None:
        xs = _apply_mask(xs, search_mask, params["mask_token"])
    Nt = cfg.template_tokens
    x = ad.concatenate([xt, xs], axis=1)
    features = []
    for i in range(cfg.num_layers):
        pre = f"blocks.{i}."
        x = x + _attention(_affine_norm(x, params, pre + "ln1"), params, pre, cfg)
        h = _linear(_affine_norm(x, params, pre + "ln2"), params, pre + "fc1").gelu()
        x = x + _linear(h, params, pre + "fc2")
        _check_finite(x, f"block {i}")
        features.append(x[:, Nt:, :])
    xs = _affine_norm(features[-1], params, "norm")

    S = cfg.search_grid

    def stack(name, out):
        h = _linear(xs, params, f"head.{name}.fc1").gelu()
        return _linear(h, params, f"head.{name}.fc2")  # (B, Ns, out)

    score = stack("score", 1).sigmoid().clamp(SCORE_EPS, 1.0 - SCORE_EPS).reshape(B, S, S)
    offset = stack("offset", 2).sigmoid().transpose(0, 2, 1).reshape(B, 2, S, S)
    size = ((stack("size", 2).sigmoid() - 1.0) * SIZE_LOG_RANGE).exp().transpose(0, 2, 1).reshape(B, 2, S, S)
    _check_finite(score, "head")
    boxes = decode_boxes(score.data, offset.data, size.data)
    return TrackOutput(score, offset, size, features, boxes)


def argmax_cells(score: np.ndarray) -> np.ndarray:
    """(B, S, S) -> (B, 2) row/col of the maximum; ties go to the smallest raster index."""
    B, S, _ = score.shape
    flat = np.argmax(score.reshape(B, -1), axis=1)
    return np.stack([flat // S, flat % S], axis=1)


def decode_boxes(score: np.ndarray, offset: np.ndarray, size: np.ndarray, cells: np.ndarray | None = None) -> np.ndarray:
    """Batched decode: (B, 4) cx, cy, w, h in normalized crop units, clamped to [0, 1]."""
    S = score.shape[-1]
    if cells is None:
        cells = argmax_cells(score)
    b = np.arange(score.shape[0])
    i, j = cells[:, 0], cells[:, 1]
    cx = (j + offset[b, 0, i, j]) / S
    cy = (i + offset[b, 1, i, j]) / S
    out = np.stack([cx, cy, size[b, 0, i, j], size[b, 1, i, j]], axis=1).astype(np.float64)
    return np.clip(out, 0.0, 1.0)


def decode_box(score, offset, size, location=None) -> NormBox:
    """Decode a single (S, S) score map with (2, S, S) offset/size maps."""
    score = np.asarray(score)[None]
    offset = np.asarray(offset)[None]
    size = np.asarray(size)[None]
    cells = None if location is None else np.asarray([location])
    return NormBox.from_array(decode_boxes(score, offset, size, cells)[0])


def inference_primitive_count(params: dict, cfg: TrackerConfig, batch: int = 1) -> int:
    """Primitive applications in one inference forward (no masks, no adapters)."""
    t = np.zeros((batch, cfg.template_res, cfg.template_res, 3))
    s = np.zeros((batch, cfg.search_res, cfg.search_res, 3))
    with ad.no_grad(), ad.count_primitives() as c:
        forward(t, s, params, cfg)
    return c.count


def snapshot(params: dict) -> dict[str, np.ndarray]:
    return {k: v.data.copy() for k, v in params.items()}


def from_arrays(arrays: dict, requires_grad: bool = True) -> dict[str, Tensor]:
    return {k: Tensor(v, requires_grad=requires_grad, name=k) for k, v in arrays.items()}
