"""
Reverse-mode gradients on numpy arrays
======================================

Every operation on a ``Tensor`` is recorded, and ``backward`` walks the
record in reverse. ``grad_check`` compares the result with central
differences at 64-bit.
"""

import numpy as np

from dttrack import autodiff as ad
from dttrack.autodiff import Tensor, backward, grad_check

#%%
# A small expression: the gradient of sum(x * x) is 2x.
x = Tensor([1.0, 2.0, 3.0], requires_grad=True, name="x")
loss = (x * x).sum()
print("loss", loss.item())
print("grad", backward(loss)["x"])

#%%
# Gradients accumulate until they are cleared, like most frameworks.
loss = (x * x).sum()
print("accumulated", backward(loss)["x"])
x.zero_grad()

#%%
# Finite-difference check of a softmax-weighted reduction.
w = np.random.default_rng(0).normal(size=(3, 4))
err = grad_check(lambda t: (t.softmax() * Tensor(w)).sum(), Tensor(np.random.default_rng(1).normal(size=(3, 4))))
print(f"softmax gradient relative error {err:.2e}")

#%%
# Counting primitives: the cost measure used for inference invariance.
with ad.no_grad(), ad.count_primitives() as c:
    (x.exp() + x).sum()
print("primitives applied", c.count)
