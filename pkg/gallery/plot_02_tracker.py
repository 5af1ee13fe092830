"""
One-stream tracker forward pass
===============================

Template and search patches share one transformer; the head reads the search
tokens back as a score map plus per-cell offset and size maps.
"""

import numpy as np

from dttrack.data import SequenceSpec, crop_pair, generate_sequence
from dttrack.model import TrackerConfig, decode_boxes, forward, init_params, parameter_count

cfg = TrackerConfig()  # dim 32, 2 layers, template 32, search 64
params = init_params(cfg, seed=0)
print("parameters", parameter_count(cfg))

#%%
# A synthetic sequence, and one (template, search) training pair from it.
seq = generate_sequence(SequenceSpec(length=8, seed=3))
template, search, gt = crop_pair(seq, 0, 5)
print("template", template.shape, "search", search.shape, "gt box in the crop", np.round(gt, 3))

#%%
# Untrained output: the decoded box is still arbitrary.
out = forward(template[None], search[None], params, cfg)
print("score map", out.score.shape, "mean", float(out.score.data.mean()))
print("decoded box", np.round(decode_boxes(out.score.data, out.offset.data, out.size.data)[0], 3))

#%%
# Masking replaces chosen search tokens with a learned token.
mask = np.zeros(cfg.search_tokens, bool)
mask[::4] = True
masked = forward(template[None], search[None], params, cfg, search_mask=mask[None])
print("score change under masking", float(np.abs(masked.score.data - out.score.data).max()))
