import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crowdcast import autodiff as ad
from crowdcast.errors import ShapeMismatch
from crowdcast.loss import (LossConfig, ade_loss, batch_loss, colliding_pairs, collision_penalty,
                            composite_loss, radius_at_step, scene_tau, window_average_radius)
from crowdcast.model import SceneBatch

from conftest import make_scene


def cp_brute(pred, tau, eps=1e-12):
    """Triple loop straight from the definition: agents i, steps t, neighbors j != i.

    Loss distances are sqrt(dx^2 + dy^2 + eps), the smoothed form used for training.
    """
    n, T, _ = pred.shape
    total = 0.0
    for i in range(n):
        for t in range(T):
            for j in range(n):
                if j == i:
                    continue
                dx, dy = pred[i, t] - pred[j, t]
                d = math.sqrt(dx * dx + dy * dy + eps)
                if d < tau:
                    total += 1.0 - d / tau
    return total


def future_with_pair_distances(dists, steps=12):
    """Two agents per entry; entry k holds (pair distance or None) per step, pairs far apart from each other."""
    n = 2 * len(dists)
    fut = np.zeros((n, steps, 2))
    for k, per_step in enumerate(dists):
        for t in range(steps):
            d = per_step[t] if per_step[t] is not None else 1.0
            fut[2 * k, t] = (10.0 * k, t)
            fut[2 * k + 1, t] = (10.0 * k + d, t)
    return fut


def scene_from_future(future, observed_gap=3.0):
    n = len(future)
    obs = np.repeat(future[:, :1] - [0, observed_gap], 9, axis=1)
    return make_scene(np.concatenate([obs, future], axis=1))


class TestRadius:
    def test_pairs(self):
        assert colliding_pairs([(0, 0), (0.326, 0)]) == [(0, 1)]
        assert colliding_pairs([(0, 0), (1, 0)]) == []
        assert colliding_pairs([(0, 0), (0.1, 0), (0.05, 0.1)]) == [(0, 1), (0, 2), (1, 2)]
        assert colliding_pairs([(0, 0), (0.4, 0)]) == []

    def test_fig4_radius(self):
        assert radius_at_step([(0, 0), (0.326, 0)]) == pytest.approx(0.163, abs=1e-15)

    def test_two_disjoint_pairs(self):
        pts = [(0, 0), (0.30, 0), (5, 5), (5.38, 5)]
        assert radius_at_step(pts) == pytest.approx(0.17, abs=1e-15)

    def test_absent(self):
        assert radius_at_step([(0, 0), (1, 1)]) is None
        assert radius_at_step([(0, 0)]) is None

    def test_window_constant(self):
        est = window_average_radius(future_with_pair_distances([[0.326] * 12]))
        assert est.source == "estimated"
        assert est.mean == pytest.approx(0.163, abs=1e-12)
        assert est.tau == pytest.approx(0.326, abs=1e-12)

    def test_window_mean_over_present(self):
        steps = [0.30, 0.34] + [None] * 10
        est = window_average_radius(future_with_pair_distances([steps]))
        assert est.per_step[2:] == (None,) * 10
        assert est.mean == pytest.approx(0.16, abs=1e-12)

    def test_window_fallback(self):
        est = window_average_radius(future_with_pair_distances([[None] * 12]))
        assert (est.mean, est.source) == (0.2, "fallback")

    @settings(max_examples=100)
    @given(st.integers(0, 10_000))
    def test_estimated_radius_bounded(self, seed):
        rng = np.random.default_rng(seed)
        fut = rng.uniform(0, 1.5, size=(int(rng.integers(2, 10)), 12, 2))
        est = window_average_radius(fut)
        assert 0 < est.mean <= 0.2
        for r in est.per_step:
            assert r is None or 0 <= r < 0.2


class TestCollisionPenalty:
    def test_far_apart(self):
        pred = np.zeros((2, 12, 2))
        pred[1, :, 0] = 0.4
        assert float(collision_penalty(pred, 0.4).value) == 0.0

    def test_half_tau(self):
        pred = np.zeros((2, 12, 2))
        pred[1, :, 0] = 5.0
        pred[1, 3, 0] = 0.2
        assert float(collision_penalty(pred, 0.4).value) == pytest.approx(1.0, abs=1e-9)

    def test_coincident(self):
        pred = np.zeros((2, 12, 2))
        pred[1, :, 0] = 5.0
        pred[1, 6, 0] = 0.0
        assert float(collision_penalty(pred, 0.4).value) == pytest.approx(2.0, abs=1e-5)

    def test_single_agent(self):
        assert float(collision_penalty(np.zeros((1, 12, 2)), 0.4).value) == 0.0

    def test_bad_tau(self):
        with pytest.raises(ValueError):
            collision_penalty(np.zeros((2, 12, 2)), 0.0)

    def test_brute_force_200(self):
        rng = np.random.default_rng(2024)
        for _ in range(200):
            n = int(rng.integers(1, 9))
            pred = rng.uniform(0, 1.2, size=(n, 12, 2))
            tau = float(rng.uniform(0.1, 0.4))
            assert abs(float(collision_penalty(pred, tau).value) - cp_brute(pred, tau)) <= 1e-9

    @settings(max_examples=100)
    @given(st.integers(0, 10_000), st.floats(0.05, 0.5))
    def test_nonnegative_and_term_bound(self, seed, tau):
        rng = np.random.default_rng(seed)
        pred = rng.uniform(0, 1, size=(int(rng.integers(1, 7)), 12, 2))
        cp = float(collision_penalty(pred, tau).value)
        D = np.sqrt(((pred[:, None] - pred[None]) ** 2).sum(-1))
        n_terms = int((D < tau).sum()) - len(pred) * 12  # directed terms, diagonal removed
        assert cp >= 0
        assert cp <= n_terms + 1e-9
        assert (cp == 0) == (n_terms == 0)

    @settings(max_examples=100)
    @given(st.integers(0, 10_000), st.floats(0.05, 0.95))
    def test_monotone_in_pair_distance(self, seed, shrink):
        rng = np.random.default_rng(seed)
        pred = rng.uniform(0, 1, size=(4, 12, 2))
        pred[2:] += 10.0  # bystanders elsewhere so only the moved pair's distance changes
        t = int(rng.integers(12))
        pred[1, t] = pred[0, t] + rng.normal(size=2) * 0.05
        closer = pred.copy()
        closer[1, t] = pred[0, t] + shrink * (pred[1, t] - pred[0, t])
        assert float(collision_penalty(closer, 0.4).value) >= float(collision_penalty(pred, 0.4).value) - 1e-12

    @settings(max_examples=50)
    @given(st.integers(0, 10_000), st.floats(0, 2 * math.pi), st.floats(-20, 20), st.floats(-20, 20))
    def test_rigid_invariance(self, seed, theta, sx, sy):
        rng = np.random.default_rng(seed)
        pred = rng.uniform(0, 1, size=(5, 12, 2))
        R = np.array([[math.cos(theta), -math.sin(theta)], [math.sin(theta), math.cos(theta)]])
        moved = pred @ R.T + [sx, sy]
        a = float(collision_penalty(pred, 0.4).value)
        b = float(collision_penalty(moved, 0.4).value)
        assert b == pytest.approx(a, abs=1e-9)


class TestAde:
    def test_identity(self, rng):
        y = rng.normal(size=(3, 12, 2))
        assert float(ade_loss(y, y).value) <= math.sqrt(ad.SQRT_EPS) + 1e-15

    def test_constant_offset(self, rng):
        y = rng.normal(size=(3, 12, 2))
        assert float(ade_loss(y + [0.1, 0], y).value) == pytest.approx(0.1, abs=1e-9)

    def test_single_term(self):
        y = np.zeros((1, 12, 2))
        p = y.copy()
        p[0, -1] = (0.3, 0.4)
        assert float(ade_loss(p, y).value) == pytest.approx(0.5 / 12, abs=1e-5)

    def test_shape(self):
        with pytest.raises(ShapeMismatch):
            ade_loss(np.zeros((2, 12, 2)), np.zeros((3, 12, 2)))


def dense_scene(rng, n=5):
    """Ground truth with overlapping pairs so the window radius is estimated."""
    fut = rng.uniform(0, 1.0, size=(n, 12, 2))
    if n > 1:
        fut[1] = fut[0] + [0.3, 0.0]
    return scene_from_future(fut)


class TestComposite:
    def test_lambda_zero(self, rng):
        scene = dense_scene(rng)
        pred = scene.future + rng.normal(0, 0.05, scene.future.shape)
        ade = float(ade_loss(pred, scene.future).value)
        for mode in ("ade", "dos", "sos"):
            assert float(composite_loss(LossConfig(mode, 0.0), scene, pred).value) == ade

    def test_arithmetic(self):
        # truth: two agents 0.2 m apart at two steps, far otherwise; prediction shifted 0.3 m
        fut = np.zeros((2, 12, 2))
        fut[0, :, 1] = np.arange(12)
        fut[1, :, 1] = np.arange(12)
        fut[1, :, 0] = 3.0
        fut[1, [4, 7], 0] = 0.2
        scene = scene_from_future(fut)
        pred = fut + [0.3, 0.0]
        ade = float(ade_loss(pred, fut).value)
        cp = float(collision_penalty(pred, 0.4).value)
        assert ade == pytest.approx(0.3, abs=1e-9) and cp == pytest.approx(2.0, abs=1e-9)
        assert float(composite_loss(LossConfig("sos", 0.003), scene, pred).value) == pytest.approx(0.306, abs=1e-9)

    def test_collision_free(self, rng):
        fut = np.stack([np.stack([np.full(12, 2.0 * k), np.arange(12.0)], axis=1) for k in range(4)])
        scene = scene_from_future(fut)
        pred = fut + 0.05
        vals = {m: float(composite_loss(LossConfig(m, 0.01), scene, pred).value) for m in ("ade", "dos", "sos")}
        assert vals["ade"] == vals["dos"] == vals["sos"]

    def test_tau_per_mode(self, rng):
        scene = dense_scene(rng)
        est = window_average_radius(scene.future)
        assert scene_tau(scene, LossConfig("dos")) == pytest.approx(2 * est.mean)
        assert scene_tau(scene, LossConfig("sos")) == 0.4
        sparse = scene_from_future(future_with_pair_distances([[None] * 12]))
        assert scene_tau(sparse, LossConfig("dos")) == 0.4

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 10_000))
    def test_dos_never_exceeds_sos(self, seed):
        rng = np.random.default_rng(seed)
        scene = dense_scene(rng, int(rng.integers(2, 8)))
        assert window_average_radius(scene.future).source == "estimated"
        pred = rng.uniform(0, 1.0, size=scene.future.shape)
        dos = float(collision_penalty(pred, scene_tau(scene, LossConfig("dos"))).value)
        sos = float(collision_penalty(pred, scene_tau(scene, LossConfig("sos"))).value)
        assert dos <= sos

    @pytest.mark.parametrize("mode", ["ade", "dos", "sos"])
    def test_gradient(self, mode):
        rng = np.random.default_rng(11)
        cfg = LossConfig(mode, 0.5)
        for _ in range(10):
            scene = dense_scene(rng, 4)
            tau = scene_tau(scene, cfg)
            pred = scene.future + rng.normal(0, 0.15, scene.future.shape)
            D = np.sqrt(((pred[:, None] - pred[None]) ** 2).sum(-1))
            if np.any(np.abs(D - tau) < 1e-4):
                continue
            assert ad.finite_difference_check(lambda x: composite_loss(cfg, scene, x), pred) < 1e-4

    def test_config(self):
        with pytest.raises(ValueError):
            LossConfig("ttc")
        with pytest.raises(ValueError):
            LossConfig("dos", -1.0)


class TestBatchLoss:
    @pytest.mark.parametrize("mode", ["ade", "dos", "sos"])
    def test_equals_mean_of_scene_losses(self, mode):
        rng = np.random.default_rng(5)
        scenes = [dense_scene(rng, int(rng.integers(1, 6))) for _ in range(6)]
        for k, s in enumerate(scenes):
            s.scene_id = k
        batch = SceneBatch(scenes)
        pred = np.concatenate([s.future + rng.normal(0, 0.2, s.future.shape) for s in scenes])
        cfg = LossConfig(mode, 0.02)
        expected = np.mean([float(composite_loss(cfg, s, p).value) for s, p in zip(scenes, batch.split(pred))])
        assert float(batch_loss(cfg, batch, pred).value) == pytest.approx(expected, rel=1e-12)

    def test_pairs_never_cross_scenes(self):
        # two single-agent scenes at the same spot: no penalty since they are different scenes
        fut = np.zeros((1, 12, 2))
        scenes = [scene_from_future(fut), scene_from_future(fut)]
        batch = SceneBatch(scenes)
        pred = np.zeros((2, 12, 2))
        ade_only = float(batch_loss(LossConfig("ade"), batch, pred).value)
        assert float(batch_loss(LossConfig("sos", 1.0), batch, pred).value) == ade_only

    def test_gradient(self):
        rng = np.random.default_rng(9)
        scenes = [dense_scene(rng, 3) for _ in range(3)]
        batch = SceneBatch(scenes)
        pred = np.concatenate([s.future + rng.normal(0, 0.1, s.future.shape) for s in scenes])
        cfg = LossConfig("dos", 0.3)
        assert ad.finite_difference_check(lambda x: batch_loss(cfg, batch, x), pred) < 1e-4
