"""Acceptance criteria, one test per criterion.

The two desk-scale reproductions (naive vs DT, and the scaling trends) are
marked ``slow``; deselect them with ``-m "not slow"``.
"""

import time
from fractions import Fraction
from dataclasses import replace

import numpy as np
import pytest
from scipy import stats

from dttrack import autodiff as ad
from dttrack.autodiff import AdamW, Tensor, grad_check
from dttrack.config import resolved_defaults
from dttrack.data import Dataset, balanced_sample, dataset_from_specs, random_specs, sample_batch
from dttrack.evaluation import SuiteResult, bench_aggregate, precision_metrics, success_auc
from dttrack.experiments import Budget, DEFAULT_SWEEPS, factor_sweep, naive_vs_dt, non_decreasing
from dttrack.losses import track_loss
from dttrack.model import TrackerConfig, forward, inference_primitive_count, init_params, parameter_count
from dttrack.progressive import load_checkpoint, make_checkpoint, save_checkpoint
from dttrack.training import (Adapter, DTConfig, Schedule, TeacherHandle, batch_masks, dual_branch_forward,
                              params_digest, total_loss, train)

from test_autodiff import BINARY, UNARY, _away_from_zero, _weighted
from test_evaluation import _oracle, _random_boxes

TINY = TrackerConfig(patch_size=4, embed_dim=8, num_layers=1, num_heads=2, template_res=8, search_res=16,
                     head_hidden=8)
SEEDS = (0, 1, 2)


def _elapsed(t0):
    return time.perf_counter() - t0


# 1 -------------------------------------------------------------------------

def test_collapse_identity(acceptance_line):
    t0 = time.perf_counter()
    cfg = TrackerConfig()
    data = [dataset_from_specs("synth", random_specs(16, 0))]
    dt = DTConfig(total_epochs=10, steps_per_epoch=10, batch_size=4, base_lr=1e-3, seed=3,
                  mask_ratio=Schedule.constant(0.0), lambda_align=0.0, lambda_transfer=Schedule.constant(0.0))
    student = init_params(cfg, 0)
    digests = []
    res = train(student, None, data, dt, cfg, progress=lambda row: digests.append(params_digest(student)))

    # plain supervised loop: same data stream, no masking, no alignment, no teacher
    ref = init_params(cfg, 0)
    data_rng = np.random.default_rng(np.random.SeedSequence(dt.seed).spawn(2)[0])
    opt = AdamW(lr=dt.base_lr, weight_decay=dt.weight_decay)
    trace, ref_digests = [], []
    for epoch in range(dt.total_epochs):
        lr = dt.base_lr if epoch < 0.8 * dt.total_epochs else dt.base_lr / 10
        for _ in range(dt.steps_per_epoch):
            t, s, gt = sample_batch(data, data_rng, dt.batch_size, cfg.template_res, cfg.search_res)
            for p in ref.values():
                p.zero_grad()
            loss = track_loss(forward(t, s, ref, cfg), gt)
            trace.append(float(loss.data))
            grads = ad.backward(loss)
            opt.step(ref, {k: grads.get(k, np.zeros_like(p.data)) for k, p in ref.items()}, lr)
            ref_digests.append(params_digest(ref))

    assert len(trace) == 100
    assert [r["L_total"] for r in res.log] == trace
    assert [r["L_clean"] for r in res.log] == trace
    assert digests == ref_digests
    took = _elapsed(t0)
    assert took < 60
    acceptance_line(f"[1] collapse identity: 100 steps bitwise equal (loss trace and digests), {took:.1f}s")


# 2 -------------------------------------------------------------------------

def test_gradient_suite(acceptance_line):
    t0 = time.perf_counter()
    worst = {}
    rng = np.random.default_rng(0)
    for kind, fn in UNARY.items():
        for trial in range(5):
            x = _away_from_zero(rng, (3, 4))
            if kind in ("log", "sqrt"):
                x = np.abs(x) + 0.5
            worst[kind] = max(worst.get(kind, 0.0), grad_check(lambda t: _weighted(fn(t), trial), Tensor(x)))
    for kind, fn in BINARY.items():
        for trial in range(5):
            a, b = _away_from_zero(rng, (3, 4)), _away_from_zero(rng, (3, 4))
            if kind == "divide":
                b = np.abs(b) + 0.5
            err = grad_check(lambda p: _weighted(fn(p["a"], p["b"]), trial), {"a": a, "b": b})
            worst[kind] = max(worst.get(kind, 0.0), err)
    assert set(worst) == set(ad.PRIMITIVES)
    assert max(worst.values()) < 1e-6, worst

    student, teacher_p = init_params(TINY, 5), init_params(TINY, 6)
    adapter = Adapter(TINY, TINY, (-1,))
    r = np.random.default_rng(2)
    t, s = r.random((2, 8, 8, 3)), r.random((2, 16, 16, 3))
    gt = np.array([[0.45, 0.55, 0.3, 0.35], [0.6, 0.4, 0.25, 0.3]])
    m = batch_masks(2, TINY.search_tokens, 0.25, np.random.default_rng(3))
    point = {k: v.data for k, v in {**student, **adapter.params}.items()}

    def f(leaves):
        a_p = {k: v for k, v in leaves.items() if k.startswith("adapter.")}
        s_p = {k: v for k, v in leaves.items() if not k.startswith("adapter.")}
        tout = forward(t, s, {k: Tensor(v.data.astype(np.float64)) for k, v in teacher_p.items()}, TINY).detached()
        clean, masked = dual_branch_forward(t, s, m, s_p, TINY)
        return total_loss(clean, masked, tout, gt, 0.5, 0.1, Adapter(TINY, TINY, (-1,), a_p),
                          detach_reference=False)

    total_err = grad_check(f, point)
    assert total_err < 1e-4
    took = _elapsed(t0)
    assert took < 300
    acceptance_line(f"[2] gradient suite: worst primitive error {max(worst.values()):.1e} over {len(worst)} "
                    f"primitives, L_total {total_err:.1e}, {took:.1f}s")


# 3 -------------------------------------------------------------------------

def test_metric_oracle(acceptance_line):
    t0 = time.perf_counter()
    r = np.random.default_rng(42)
    worst = 0.0
    for _ in range(100):
        n = int(r.integers(1, 21))
        gts = _random_boxes(r, n)
        preds = gts + r.normal(0, 0.05, gts.shape)
        preds[:, 2:] = np.abs(preds[:, 2:]) + 1e-3
        vis = r.random(n) > 0.2
        vis[r.integers(n)] = True
        canvas = int(r.choice([64, 128, 256, 512]))
        want = _oracle(preds.tolist(), gts.tolist(), vis.tolist(), canvas)
        got = (success_auc(preds, gts, vis), *precision_metrics(preds, gts, vis, canvas))
        worst = max(worst, *(abs(a - b) for a, b in zip(got, want)))
    assert worst <= 1e-9
    aucs = r.random(7).tolist()
    rep = bench_aggregate([SuiteResult(f"s{i}", 1, a, 0.0, 0.0) for i, a in enumerate(aucs)])
    assert rep.mean_auc == float(sum(Fraction(a) for a in aucs) / len(aucs))
    took = _elapsed(t0)
    assert took < 60
    acceptance_line(f"[3] metric oracle: worst deviation {worst:.1e} over 100 sets, aggregate exact, {took:.1f}s")


# 4 -------------------------------------------------------------------------

def test_paper_defaults(acceptance_line):
    d = resolved_defaults()
    assert d["lambda_iou"] == 2.0 and d["lambda_l1"] == 5.0
    assert d["lambda_align"] == 0.1
    assert d["lambda_transfer"] == Schedule.step_drop(0.5, 0.0, 0.9)
    assert d["mask_ratio"] == Schedule.linear(0.05, 0.4)
    assert d["lr_drop_fraction"] == 0.8
    acceptance_line("[4] defaults: lambda_iou=2 lambda_l1=5 lambda_align=0.1 transfer 0.5->0@0.9 "
                    "mask 0.05->0.4 lr/10@0.8")


# 5 -------------------------------------------------------------------------

@pytest.mark.slow
def test_naive_vs_dt(acceptance_line):
    t0 = time.perf_counter()
    budget = Budget()
    bench = budget.bench()
    rows = []
    for seed in SEEDS:
        c = naive_vs_dt(seed, budget, TrackerConfig(), bench)
        rows.append((seed, c.naive.mean_auc, c.dt.mean_auc))
    wins = sum(dt > naive for _, naive, dt in rows)
    took = _elapsed(t0)
    detail = "; ".join(f"seed {s}: naive {n:.3f} dt {d:.3f}" for s, n, d in rows)
    acceptance_line(f"[5] naive vs DT: DT wins {wins}/3 ({detail}), {took / 60:.1f} min")
    assert wins >= 2
    assert took <= 30 * 60


# 6 -------------------------------------------------------------------------

SWEEP_BUDGET = Budget(steps=1000)


@pytest.mark.slow
def test_scaling_trends(acceptance_line):
    t0 = time.perf_counter()
    bench = SWEEP_BUDGET.bench()
    cache: dict = {}
    curves = {f: [] for f in DEFAULT_SWEEPS}
    for seed in SEEDS:
        for factor, values in DEFAULT_SWEEPS.items():
            curves[factor].append(factor_sweep(factor, values, seed, SWEEP_BUDGET, bench=bench, cache=cache))
    took = _elapsed(t0)
    ok = {f: sum(non_decreasing(c) for c in cs) for f, cs in curves.items()}
    for f, cs in curves.items():
        acceptance_line(f"[6] {f} {DEFAULT_SWEEPS[f]}: non-decreasing in {ok[f]}/3 seeds; "
                        + "; ".join("[" + ", ".join(f"{v:.3f}" for v in c) + "]" for c in cs))
    acceptance_line(f"[6] sweeps took {took / 60:.1f} min")
    assert all(v >= 2 for v in ok.values()), ok
    assert took <= 60 * 60


# 7 -------------------------------------------------------------------------

def test_frozen_teacher_and_cost(acceptance_line):
    t0 = time.perf_counter()
    cfg = TrackerConfig()
    data = [dataset_from_specs("synth", random_specs(16, 0))]
    base = DTConfig(total_epochs=10, steps_per_epoch=3, batch_size=4, base_lr=1e-3, seed=0)
    naive = init_params(cfg, 0)
    train(naive, None, data, base.naive(), cfg)
    naive_ck = make_checkpoint(naive, cfg, "naive")
    teacher = TeacherHandle(naive_ck.inference_params(), cfg, checkpoint_id=naive_ck.id)
    before = teacher.digest()
    student = init_params(cfg, 100)
    res = train(student, teacher, data, replace(base, seed=1), cfg)
    assert teacher.digest() == before
    assert all(np.isfinite(r["L_transfer"]) for r in res.log[:27])
    dt_ck = make_checkpoint({**res.params, **res.adapter.params}, cfg, "dt")
    assert dt_ck.adapter_params()
    dt_inf, naive_inf = dt_ck.inference_params(), naive_ck.inference_params()
    assert set(dt_inf) == set(naive_inf)
    count = sum(v.data.size for v in dt_inf.values())
    assert count == sum(v.data.size for v in naive_inf.values()) == parameter_count(cfg)
    prims = inference_primitive_count(dt_inf, cfg)
    assert prims == inference_primitive_count(naive_inf, cfg)
    took = _elapsed(t0)
    assert took < 300
    acceptance_line(f"[7] teacher digest unchanged; inference {prims} primitives and {count} parameters "
                    f"for both checkpoints, {took:.1f}s")


# 8 -------------------------------------------------------------------------

def test_persistence_and_determinism(acceptance_line, tmp_path):
    t0 = time.perf_counter()
    cfg = TrackerConfig()
    data = [dataset_from_specs("synth", random_specs(8, 0))]
    dt = DTConfig(total_epochs=2, steps_per_epoch=3, batch_size=4, base_lr=1e-3, seed=7,
                  lambda_transfer=Schedule.constant(0.0))
    digests = []
    for _ in range(2):
        p = init_params(cfg, 11)
        train(p, None, data, dt, cfg)
        digests.append(make_checkpoint(p, cfg, "run").digest())
    assert digests[0] == digests[1]

    ck = make_checkpoint(p, cfg, "run")
    back = load_checkpoint(save_checkpoint(ck, tmp_path))
    assert back.blob() == ck.blob() and back.manifest() == ck.manifest()

    rng = np.random.default_rng(0)
    sets = [Dataset("big", list(range(1000))), Dataset("small", list(range(10)))]
    draws = np.array([balanced_sample(sets, rng) for _ in range(10_000)])
    p_sets = stats.chisquare(np.bincount(draws[:, 0], minlength=2)).pvalue
    p_big = stats.chisquare(np.bincount(draws[draws[:, 0] == 0, 1], minlength=1000)).pvalue
    p_small = stats.chisquare(np.bincount(draws[draws[:, 0] == 1, 1], minlength=10)).pvalue
    assert min(p_sets, p_big, p_small) > 0.01
    took = _elapsed(t0)
    assert took < 120
    acceptance_line(f"[8] round-trip bitwise, rerun digests equal, sampler chi-square p = {p_sets:.3f} "
                    f"(sets) {p_big:.3f} (within 1000) {p_small:.3f} (within 10), {took:.1f}s")
