"""Reverse-mode gradients on numpy arrays, checked against finite differences."""
# %%
import numpy as np

from sttn import tensor as T
from sttn.gradcheck import check_gradients
from sttn.tensor import Tensor

rng = np.random.default_rng(0)

# %% [markdown]
# A Tensor wraps an ndarray and records the op that produced it. backward()
# walks the tape in reverse.

# %%
x = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
w = Tensor(rng.standard_normal((4, 2)), requires_grad=True)
loss = T.mean(T.tanh(x @ w) * T.tanh(x @ w))
T.backward(loss)
print("loss", loss.item())
print("dL/dw\n", w.grad)

# %% [markdown]
# Every op can be checked numerically. Central differences at float64 agree to
# about 1e-10 for smooth ops.

# %%
img = Tensor(rng.standard_normal((1, 2, 8, 8)), requires_grad=True)
kernel = Tensor(rng.standard_normal((3, 2, 3, 3)), requires_grad=True)
err = check_gradients(lambda: T.conv(img, kernel, None, stride=2, padding=1), [img, kernel])
print(f"conv2d relative error {err:.1e}")

vid = Tensor(rng.standard_normal((1, 2, 3, 6, 6)), requires_grad=True)
k3 = Tensor(rng.standard_normal((2, 2, 3, 3, 3)), requires_grad=True)
err = check_gradients(lambda: T.conv(vid, k3, None, stride=(1, 2, 2), padding=1), [vid, k3])
print(f"conv3d relative error {err:.1e}")

# %% [markdown]
# The masked softmax gives exact zeros for hidden columns, and so do their
# gradients.

# %%
s = Tensor(rng.standard_normal((2, 5)), requires_grad=True)
keep = np.array([True, False, True, True, False])
p = T.masked_softmax(s, keep[None, :])
print(p.data.round(3))
T.backward(T.abs_sum(p * Tensor(rng.standard_normal((2, 5)))))
print("grad on hidden columns:", s.grad[:, ~keep].ravel())

# %% the built-in suite, same as `sttn selftest`
from sttn.selftest import run

run()
