import numpy as np
import pytest

from dttrack import autodiff as ad
from dttrack.autodiff import Tensor, grad_check
from dttrack.errors import ContractViolation, NumericFault
from dttrack.model import (SCORE_EPS, TrackerConfig, argmax_cells, decode_box, forward, inference_primitive_count,
                           init_params, parameter_count, parameter_shapes, patchify)

TINY = TrackerConfig(patch_size=4, embed_dim=8, num_layers=1, num_heads=2, template_res=8, search_res=16,
                     head_hidden=8)


def _images(cfg, batch=2, seed=0):
    r = np.random.default_rng(seed)
    return (r.uniform(size=(batch, cfg.template_res, cfg.template_res, 3)),
            r.uniform(size=(batch, cfg.search_res, cfg.search_res, 3)))


def test_config_validation():
    with pytest.raises(ContractViolation):
        TrackerConfig(template_res=30)
    with pytest.raises(ContractViolation):
        TrackerConfig(embed_dim=30, num_heads=4)
    cfg = TrackerConfig()
    assert cfg.search_res == 2 * cfg.template_res
    assert TrackerConfig.from_dict(cfg.to_dict()) == cfg


def test_parameter_census_default():
    """Closed-form count for patch 8, dim 32, 2 layers, mlp 4, template 32, search 64, head 32."""
    D, L, p, hid, hh = 32, 2, 8, 128, 32
    embed = p * p * 3 * D + D
    pos = (32 // p) ** 2 * D + (64 // p) ** 2 * D + D  # template, search, mask token
    # two layer norms, qkv weight with query and value biases, projection, two-layer MLP
    block = 2 * 2 * D + (3 * D * D + 2 * D) + (D * D + D) + (D * hid + hid) + (hid * D + D)
    final_norm = 2 * D
    heads = sum(D * hh + hh + hh * o + o for o in (1, 2, 2))
    expected = embed + pos + L * block + final_norm + heads
    assert expected == 37509
    assert parameter_count(TrackerConfig()) == expected
    assert sum(v.data.size for v in init_params(TrackerConfig()).values()) == expected


def test_patchify_examples():
    w = Tensor(np.ones((8 * 8 * 3, 5)))
    assert patchify(np.zeros((32, 32, 3)), 8, w).shape == (16, 5)
    zero = patchify(np.zeros((32, 32, 3)), 8, w, Tensor(np.zeros(5)))
    assert np.all(zero.data == 0)
    img = np.random.default_rng(0).uniform(size=(4, 4, 1))
    tokens = patchify(img, 1, Tensor(np.eye(1)))
    np.testing.assert_array_equal(tokens.data[:, 0], img.reshape(-1).astype(np.float32))
    with pytest.raises(ContractViolation):
        patchify(np.zeros((30, 32, 3)), 8, w)


def test_patchify_raster_order():
    img = np.zeros((4, 4, 1))
    img[0:2, 2:4] = 1.0  # top-right patch
    tokens = patchify(img, 2, Tensor(np.ones((4, 1))))
    assert tokens.data[:, 0].tolist() == [0.0, 4.0, 0.0, 0.0]


def test_forward_shapes_and_ranges():
    cfg = TrackerConfig()
    t, s = _images(cfg)
    with ad.no_grad():
        out = forward(t, s, init_params(cfg, 1), cfg)
    S = cfg.search_grid
    assert out.score.shape == (2, S, S)
    assert out.offset.shape == (2, 2, S, S) and out.size.shape == (2, 2, S, S)
    assert len(out.features) == cfg.num_layers and out.features[0].shape == (2, S * S, cfg.embed_dim)
    assert np.all(out.score.data >= SCORE_EPS) and np.all(out.score.data <= 1 - SCORE_EPS)
    assert np.all((out.offset.data >= 0) & (out.offset.data <= 1))
    assert np.all(out.size.data > 0)
    assert out.boxes.shape == (2, 4) and np.all((out.boxes >= 0) & (out.boxes <= 1))


def test_forward_deterministic():
    cfg = TrackerConfig()
    t, s = _images(cfg)
    params = init_params(cfg, 3)
    with ad.no_grad():
        a, b = forward(t, s, params, cfg), forward(t, s, params, cfg)
    for x, y in ((a.score, b.score), (a.offset, b.offset), (a.size, b.size)):
        assert x.data.tobytes() == y.data.tobytes()


def test_forward_resolution_mismatch():
    cfg = TrackerConfig()
    t, s = _images(cfg)
    with pytest.raises(ContractViolation):
        forward(t, s[:, :32, :32], init_params(cfg), cfg)


def test_forward_nonfinite_names_layer():
    cfg = TINY
    params = init_params(cfg, 0)
    params["blocks.0.fc2.b"] = Tensor(np.full(8, np.inf))
    t, s = _images(cfg)
    with pytest.raises(NumericFault, match="block 0"):
        with ad.no_grad():
            forward(t, s, params, cfg)


def test_init_is_seeded_and_finite():
    a, b = init_params(TINY, 5), init_params(TINY, 5)
    assert all(a[k].data.tobytes() == b[k].data.tobytes() for k in a)
    assert all(np.isfinite(v.data).all() for v in a.values())
    assert list(a) == list(parameter_shapes(TINY))


def test_decode_examples():
    S = 4
    score = np.zeros((S, S))
    score[2, 1] = 1.0
    off = np.full((2, S, S), 0.5)
    size = np.full((2, S, S), 0.25)
    box = decode_box(score, off, size)
    assert (box.cx, box.cy, box.w, box.h) == pytest.approx((0.375, 0.625, 0.25, 0.25))
    box = decode_box(np.zeros((S, S)), np.zeros((2, S, S)), size, location=(3, 2))
    assert (box.cx, box.cy) == (2 / S, 3 / S)
    assert tuple(argmax_cells(np.ones((1, S, S)))[0]) == (0, 0)


def test_decode_clamps():
    box = decode_box(np.ones((2, 2)), np.ones((2, 2, 2)), np.full((2, 2, 2), 3.0), location=(1, 1))
    assert (box.cx, box.cy, box.w, box.h) == (1.0, 1.0, 1.0, 1.0)


def test_mask_does_not_change_shapes_or_count():
    cfg = TrackerConfig()
    t, s = _images(cfg)
    params = init_params(cfg)
    r = np.random.default_rng(0)
    with ad.no_grad():
        ref = forward(t, s, params, cfg)
        for _ in range(3):
            m = r.uniform(size=(2, cfg.search_tokens)) < 0.3
            out = forward(t, s, params, cfg, search_mask=m)
            assert out.score.shape == ref.score.shape
    assert parameter_count(cfg) == sum(v.data.size for v in params.values())


def test_empty_mask_bitwise_clean():
    cfg = TINY
    t, s = _images(cfg)
    params = init_params(cfg)
    with ad.no_grad():
        a = forward(t, s, params, cfg)
        b = forward(t, s, params, cfg, search_mask=np.zeros(cfg.search_tokens, bool))
    assert a.score.data.tobytes() == b.score.data.tobytes()


def test_primitive_count_independent_of_weights():
    cfg = TrackerConfig()
    counts = {inference_primitive_count(init_params(cfg, seed), cfg) for seed in range(3)}
    assert len(counts) == 1


def test_score_sum_gradient_check():
    cfg = TINY
    params = {k: v.data.astype(np.float64) for k, v in init_params(cfg, 2).items()}
    t, s = _images(cfg, batch=1, seed=4)
    err = grad_check(lambda p: forward(t, s, p, cfg).score.sum(), params)
    assert err < 1e-4
