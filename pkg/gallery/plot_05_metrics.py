"""
Success AUC and precision
=========================

Success counts frames whose IoU is strictly above each of 21 thresholds;
precision counts center errors at or below 20 px (scaled for small canvases).
"""

import numpy as np

from dttrack.evaluation import hann_window, penalize, precision_metrics, success_auc

gt = np.array([[0.5, 0.5, 0.4, 0.2]] * 4)
print("perfect boxes", success_auc(gt, gt), "= 20/21")

#%%
# Half the area, same center: IoU is exactly 0.5 and passes 10 thresholds.
half = np.array([[0.5, 0.5, 0.2, 0.2]] * 4)
print("half boxes", success_auc(half, gt), "= 10/21")
print("precision, normalized precision", precision_metrics(half, gt, None, canvas=256))

#%%
# The Hanning penalty pulls the argmax toward the search-region center.
score = np.full((7, 7), 0.1)
score[1, 1], score[3, 3] = 0.9, 0.8
pen = penalize(score, hann_window(7))
print("argmax before", np.unravel_index(score.argmax(), score.shape),
      "after", np.unravel_index(pen.argmax(), pen.shape))
