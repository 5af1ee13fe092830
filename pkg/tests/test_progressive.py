import json
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dttrack import autodiff as ad
from dttrack.errors import ContractViolation, IntegrityError, PlanValidationError
from dttrack.model import TrackerConfig, forward, inference_primitive_count, init_params, parameter_count
from dttrack.progressive import (DataSpec, PlanAborted, StageSpec, grow, load_checkpoint, make_checkpoint,
                                 plan_stages, plan_to_dict, run_plan, save_checkpoint, stage_dt_config, stage_seed)
from dttrack.training import DTConfig, train

TINY = TrackerConfig(patch_size=4, embed_dim=8, num_layers=1, num_heads=2, template_res=8, search_res=16,
                     head_hidden=8)
SMALL_DATA = DataSpec(sources=(("synth", 4),), length=8, canvas=32)
MORE_DATA = DataSpec(sources=(("synth", 6),), length=8, canvas=32)
BASE = DTConfig(total_epochs=2, steps_per_epoch=1, batch_size=2)


def _stage(cfg=TINY, data=SMALL_DATA, **kw):
    return {"config": cfg, "data": data, **kw}


# ---------------------------------------------------------------------------
# plan validation

def test_three_stage_plan_in_paper_order():
    wider = replace(TINY, embed_dim=16)
    plan = plan_stages([_stage(), _stage(data=MORE_DATA), _stage(wider, MORE_DATA),
                        _stage(replace(wider, search_res=24, template_res=12), MORE_DATA)])
    assert [s.enlarges for s in plan.stages] == [(), ("data",), ("model",), ("resolution",)]
    assert [s.teacher for s in plan.stages] == ["none", "previous", "previous", "previous"]


def test_single_stage_plan_is_naive():
    plan = plan_stages({"stages": [_stage()], "seed": 3})
    assert plan.seed == 3 and plan.stages[0].teacher == "none"
    assert stage_dt_config(plan, plan.stages[0]).lambda_transfer.is_zero()


def test_shrinking_resolution_rejected():
    big = replace(TINY, search_res=24, template_res=12)
    with pytest.raises(PlanValidationError, match="stage 2: resolution"):
        plan_stages([_stage(), _stage(big), _stage(TINY)])
    with pytest.raises(PlanValidationError, match="stage 1: data"):
        plan_stages([_stage(data=MORE_DATA), _stage(data=SMALL_DATA)])
    with pytest.raises(PlanValidationError):
        plan_stages([])
    with pytest.raises(PlanValidationError, match="declared"):
        plan_stages([_stage(), _stage(enlarges=("model",))])


def test_plan_dict_round_trip():
    plan = plan_stages([_stage(), _stage(data=MORE_DATA)])
    d = json.loads(json.dumps(plan_to_dict(plan)))
    again = plan_stages(d)
    assert [s.config for s in again.stages] == [s.config for s in plan.stages]
    assert [s.data for s in again.stages] == [s.data for s in plan.stages]


def test_stage_seeds_distinct():
    assert len({stage_seed(0, i) for i in range(10)}) == 10
    assert stage_seed(1, 0) != stage_seed(0, 0)


# ---------------------------------------------------------------------------
# grow

def _ck(cfg, seed=0):
    return make_checkpoint(init_params(cfg, seed), cfg, "t")


def test_grow_same_config():
    teacher, student = grow(_ck(TINY), StageSpec(1, TINY))
    assert teacher.frozen and teacher.adapter.projection_shapes == [(8, 8)]
    assert parameter_count(TINY) == sum(v.data.size for v in student.values())
    assert sum(v.data.size for v in teacher.params.values()) == sum(v.data.size for v in student.values())
    assert not any(v.requires_grad for v in teacher.params.values())


def test_grow_width_and_resolution_shapes():
    t_cfg = TrackerConfig(embed_dim=32)
    s_cfg = TrackerConfig(embed_dim=64, search_res=96, template_res=48)
    teacher, student = grow(_ck(t_cfg), StageSpec(1, s_cfg))
    assert teacher.adapter.projection_shapes == [(32, 64)]
    assert t_cfg.search_grid == 8 and s_cfg.search_grid == 12
    assert teacher.adapter.resample.shape == (144, 64)
    feat = ad.Tensor(np.ones((1, 64, 32)))
    assert teacher.adapter(0, feat).shape == (1, 144, 64)
    assert student["patch.w"].shape[1] == 64


def test_grow_rejects_smaller_student():
    with pytest.raises(ContractViolation):
        grow(_ck(replace(TINY, embed_dim=16)), StageSpec(1, TINY))


# ---------------------------------------------------------------------------
# checkpoints

def test_round_trip_bitwise(tmp_path):
    cfg = TINY
    ck = make_checkpoint({**init_params(cfg, 3), "adapter.0.w": np.eye(8)}, cfg, "x", metrics={"auc": 0.5})
    path = save_checkpoint(ck, tmp_path)
    back = load_checkpoint(path)
    assert back.id == ck.id and back.manifest() == ck.manifest()
    assert all(back.params[k].tobytes() == ck.params[k].tobytes() for k in ck.params)
    assert set(back.inference_params()) == set(init_params(cfg, 0))
    r = np.random.default_rng(0)
    t, s = r.random((1, 8, 8, 3)), r.random((1, 16, 16, 3))
    a = forward(t, s, ck.inference_params(), cfg).score.data
    b = forward(t, s, back.inference_params(), cfg).score.data
    assert a.tobytes() == b.tobytes()
    assert load_checkpoint(tmp_path / ck.id).id == ck.id


def test_truncated_blob(tmp_path):
    ck = _ck(TINY)
    save_checkpoint(ck, tmp_path)
    blob = tmp_path / f"{ck.id}.params.bin"
    blob.write_bytes(blob.read_bytes()[:-4])
    with pytest.raises(IntegrityError):
        load_checkpoint(tmp_path / f"{ck.id}.manifest.json")


def test_flipped_byte_detected(tmp_path):
    ck = _ck(TINY)
    save_checkpoint(ck, tmp_path)
    blob = tmp_path / f"{ck.id}.params.bin"
    raw = bytearray(blob.read_bytes())
    raw[10] ^= 1
    blob.write_bytes(bytes(raw))
    with pytest.raises(IntegrityError):
        load_checkpoint(tmp_path / f"{ck.id}.manifest.json")


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2000), st.integers(0, 7))
def test_digest_changes_iff_bytes_change(index, bit):
    ck = _ck(TINY)
    same = _ck(TINY)
    assert same.digest() == ck.digest()
    name = ck.ordered_names()[index % len(ck.params)]
    flat = same.params[name].reshape(-1).view(np.uint8)
    flat[index % flat.size] ^= 1 << bit
    assert same.digest() != ck.digest()


def test_inference_ignores_adapter():
    ck = make_checkpoint({**init_params(TINY, 0), "adapter.0.w": np.eye(8)}, TINY, "x")
    naive = make_checkpoint(init_params(TINY, 1), TINY, "n")
    assert set(ck.inference_params()) == set(naive.inference_params())
    assert inference_primitive_count(ck.inference_params(), TINY) == \
           inference_primitive_count(naive.inference_params(), TINY)


# ---------------------------------------------------------------------------
# run_plan

def test_one_stage_plan_equals_train():
    plan = plan_stages({"stages": [_stage()], "seed": 5, "base": BASE})
    (ck,) = run_plan(plan)
    dt = stage_dt_config(plan, plan.stages[0])
    params = init_params(TINY, stage_seed(5, 0))
    train(params, None, SMALL_DATA.build(), dt, TINY)
    assert all(ck.params[k].tobytes() == params[k].data.tobytes() for k in params)
    assert ck.lineage == [ck.id] and ck.teacher_id is None


def test_three_stage_lineage(tmp_path):
    wider = replace(TINY, embed_dim=16, num_heads=2)
    plan = plan_stages({"stages": [_stage(), _stage(data=MORE_DATA), _stage(replace(wider, search_res=24,
                                                                                    template_res=12), MORE_DATA)],
                        "base": BASE})
    cks = run_plan(plan, out_dir=tmp_path)
    assert [len(c.lineage) for c in cks] == [1, 2, 3]
    assert [c.teacher_id for c in cks] == [None, cks[0].id, cks[1].id]
    assert cks[2].lineage == [cks[0].id, cks[1].id, cks[2].id]
    assert cks[2].adapter_params() and not cks[0].adapter_params()
    assert len(set(cks[2].lineage)) == 3
    for c in cks:
        assert load_checkpoint(tmp_path / c.id).digest() == c.digest()
    again = run_plan(plan)
    assert [c.digest() for c in again] == [c.digest() for c in cks]


def test_failed_stage_keeps_completed():
    plan = plan_stages({"stages": [_stage(), _stage(data=MORE_DATA, teacher="missing-id")], "base": BASE})
    with pytest.raises(PlanAborted) as info:
        run_plan(plan)
    assert info.value.stage == 1 and len(info.value.completed) == 1
