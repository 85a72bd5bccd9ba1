import numpy as np
import pytest

from crowdcast.dataio import RawDataset, RawTrajectory
from crowdcast.pipeline import SEGMENT_LENGTH, Scene


def make_scene(xy, scene_id=0, context=(), density_class="mediumD", avg_density=1.0, start_frame=0):
    """Scene from an (n, 21, 2) array; agent ids are 0..n-1 and agent 0 is primary."""
    xy = np.asarray(xy, dtype=np.float64)
    ids = tuple(range(len(xy)))
    return Scene(scene_id, 0, start_frame, ids, xy, tuple(context), avg_density, density_class)


def walking_scene(n, rng, spacing=1.0, speed=0.2, scene_id=0, jitter=0.02):
    """n agents on a line, each walking straight with a small random heading."""
    start = np.stack([np.arange(n) * spacing, rng.normal(0, 0.1, n)], axis=1)
    heading = rng.normal(0, 0.3, n)
    vel = speed * np.stack([np.cos(heading), np.sin(heading)], axis=1)
    t = np.arange(SEGMENT_LENGTH)[None, :, None]
    xy = start[:, None, :] + vel[:, None, :] * t + rng.normal(0, jitter, (n, SEGMENT_LENGTH, 2))
    return make_scene(xy, scene_id=scene_id)


def straight_raw(specs):
    """RawDataset from (agent_id, start_frame, length) triples walking along +x."""
    trajs = []
    for agent, start, length in specs:
        k = np.arange(length)
        pos = np.stack([0.2 * k + agent, np.full(length, 0.5 * agent)], axis=1)
        trajs.append(RawTrajectory(agent, start, pos))
    return RawDataset(trajs)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
