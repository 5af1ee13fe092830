"""
Naive training versus DT-Training
=================================

A short naive run produces a teacher. A fresh student of the same size is then
trained with the clean loss, the masked-branch alignment loss and the transfer
loss from the frozen teacher. The budget here is far too small for the
comparison to mean anything; see the acceptance suite for the real one.
"""

from dataclasses import replace

from dttrack.data import dataset_from_specs, random_specs
from dttrack.evaluation import evaluate, make_bench
from dttrack.model import TrackerConfig, init_params
from dttrack.training import DTConfig, TeacherHandle, train

cfg = TrackerConfig()
data = [dataset_from_specs("synth", random_specs(32, seed=0))]
bench = make_bench(per_suite=4)
dt = DTConfig(total_epochs=10, steps_per_epoch=10, batch_size=8, base_lr=1e-3)

#%%
# Naive: clean branch only, no teacher.
naive = init_params(cfg, 0)
log = train(naive, None, data, dt.naive(), cfg).epoch_means()
print("naive L_clean by epoch", [round(r["L_clean"], 3) for r in log])

#%%
# DT: the naive model is the frozen teacher.
teacher = TeacherHandle({k: v.detach() for k, v in naive.items()}, cfg)
student = init_params(cfg, 100)
res = train(student, teacher, data, replace(dt, seed=1), cfg)
for row in res.epoch_means():
    print(row["epoch"], {k: round(row[k], 3) for k in ("L_clean", "L_transfer", "L_align")},
          "mask", round(row["mask_ratio"], 3), "lambda_t", row["lambda_transfer"])

#%%
# Both models cost the same at inference; only the training differed.
print("naive AUC", round(evaluate((naive, cfg), bench).mean_auc, 3))
print("DT AUC", round(evaluate((student, cfg), bench).mean_auc, 3))
