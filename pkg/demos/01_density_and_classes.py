"""Crowd density from a single frame, and the four density classes.

Density is the head count divided by the area of the convex hull around
everyone present, with the area floored at one square meter so that a pair
of people standing in a line does not read as infinitely dense.
"""

# %%
import numpy as np

from crowdcast.geometry import convex_hull, convex_hull_area, density_of_points
from crowdcast.pipeline import classify_density

rng = np.random.default_rng(0)

# %% A loose group spread over a 4 x 3 m patch.
loose = rng.uniform([0, 0], [4, 3], size=(8, 2))
print("hull vertices:\n", np.array(convex_hull(loose)).round(2))
print(f"hull area {convex_hull_area(loose):.2f} m^2, density {density_of_points(loose):.2f} ped/m^2")

# %% The same people squeezed into a third of the space.
tight = loose / np.sqrt(3)
print(f"squeezed: density {density_of_points(tight):.2f} ped/m^2")

# %% Two people: the hull is degenerate, so the floor kicks in.
print("pair density:", density_of_points([[0, 0], [0.5, 0]]))

# %% Class thresholds sit at 0.7, 1.2 and 1.6 ped/m^2.
for d in (0.3, 0.69, 0.7, 1.19, 1.2, 1.59, 1.6, 2.4):
    print(f"{d:4.2f} -> {classify_density(d)}")
