"""The dynamic occupied-space loss.

In each future step, pairs of ground-truth walkers closer than 0.4 m reveal
how much room people actually took. Half their mean distance is that step's
radius; averaging over the window gives R_bar, and the collision threshold
becomes 2 * R_bar. A fixed 0.2 m radius (threshold 0.4 m) is the fallback when
nobody came close. Predicted pairs inside the threshold pay 1 - d / tau each.
"""

# %%
import numpy as np

from crowdcast.loss import LossConfig, collision_penalty, composite_loss, radius_at_step, window_average_radius
from crowdcast.pipeline import Scene

# %% A pair 0.326 m apart occupies 0.163 m each.
print("R^t:", radius_at_step([(0.0, 0.0), (0.326, 0.0)]))

# %% A window where the pair is close in the first two steps only.
future = np.zeros((2, 12, 2))
future[0, :, 1] = future[1, :, 1] = np.arange(12) * 0.4
future[1, :, 0] = 1.0
future[1, :2, 0] = [0.30, 0.34]
est = window_average_radius(future)
print(f"R_bar {est.mean:.3f} m from {sum(r is not None for r in est.per_step)} steps, tau {est.tau:.3f} m")

# %% Nobody close: fall back to the fixed radius.
far = future.copy()
far[1, :, 0] = 2.0
print("fallback:", window_average_radius(far).source, window_average_radius(far).mean)

# %% Same prediction, two thresholds. The tighter dense-crowd threshold forgives
# near passes that a fixed 0.4 m would count as collisions.
pred = future.copy()
pred[1, :, 0] = 0.35
print(f"CP with tau={est.tau:.2f}: {float(collision_penalty(pred, est.tau).value):.3f}")
print(f"CP with tau=0.40: {float(collision_penalty(pred, 0.4).value):.3f}")

# %% Composite loss under the three modes. The scene needs nine observed steps
# in front of the twelve future ones.
observed = np.repeat(future[:, :1] - [0.0, 3.0], 9, axis=1)
scene = Scene(0, 0, 0, (0, 1), np.concatenate([observed, future], axis=1))
for mode in ("ade", "sos", "dos"):
    value = float(composite_loss(LossConfig(mode, 0.01), scene, pred).value)
    print(f"{mode}: {value:.5f}")
