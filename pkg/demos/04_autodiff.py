"""Reverse-mode gradients on a small tape.

Every model and loss gradient in the package comes from this engine. Here it
differentiates a tanh layer and the collision penalty, and each result is
checked against central finite differences.
"""

# %%
import numpy as np

from crowdcast import autodiff as ad
from crowdcast.errors import NonFiniteValue
from crowdcast.loss import collision_penalty

rng = np.random.default_rng(1)

# %% y = sum(tanh(x @ W + b)^2); gradients for W and b in one backward pass.
x = rng.normal(size=(5, 3))
with ad.Tape() as tape:
    W = tape.variable(rng.normal(size=(3, 4)))
    b = tape.variable(np.zeros(4))
    y = ad.sum(ad.mul(ad.tanh(ad.add(ad.matmul(x, W), b)), ad.tanh(ad.add(ad.matmul(x, W), b))))
grads = ad.backward(y)
print("dy/db:", grads[b.id].round(4))

# %% Finite differences agree to well below 1e-6 (relative).
err = ad.finite_difference_check(lambda w: ad.sum(ad.square(ad.tanh(ad.matmul(x, w)))), W.value)
print(f"tanh layer: max relative error {err:.1e}")

# %% The penalty is piecewise smooth; away from d = tau its gradient is exact too.
pred = rng.uniform(0, 1, size=(4, 12, 2))
err = ad.finite_difference_check(lambda p: collision_penalty(p, 0.35), pred)
print(f"collision penalty: max relative error {err:.1e}")

# %% Non-finite values fail loudly instead of poisoning a training run.
big = ad.Tensor(np.array([1e200]))
try:
    with np.errstate(over="ignore"):
        ad.mul(big, big)
except NonFiniteValue as exc:
    print("caught:", exc)
