"""
A three-stage progressive plan
==============================

Grow the data, then the model width, then the resolution. Each stage trains a
fresh student with the previous stage's checkpoint as frozen teacher.
"""

import tempfile
from dataclasses import replace

from dttrack.model import TrackerConfig
from dttrack.progressive import DataSpec, load_checkpoint, plan_stages, run_plan
from dttrack.training import DTConfig

small = TrackerConfig(embed_dim=16, num_heads=2, template_res=24, search_res=48)
few, more = DataSpec((("synth", 16),)), DataSpec((("synth", 32),))

plan = plan_stages({
    "seed": 0,
    "base": DTConfig(total_epochs=5, steps_per_epoch=4, batch_size=4, base_lr=1e-3),
    "stages": [
        {"config": small, "data": few},
        {"config": small, "data": more},
        {"config": replace(small, embed_dim=32, num_heads=4), "data": more},
        {"config": replace(small, embed_dim=32, num_heads=4, template_res=32, search_res=64), "data": more},
    ],
})
print("enlarged factors", [s.enlarges for s in plan.stages])

#%%
# Checkpoints land on disk as a JSON manifest plus a raw float32 blob.
with tempfile.TemporaryDirectory() as out:
    cks = run_plan(plan, out_dir=out)
    for ck in cks:
        print(ck.id, "teacher", ck.teacher_id, "adapter tensors", len(ck.adapter_params()))
    last = load_checkpoint(f"{out}/{cks[-1].id}")
    print("lineage", " -> ".join(last.lineage))
