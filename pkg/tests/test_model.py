import numpy as np
import pytest

from crowdcast import autodiff as ad
from crowdcast.errors import CheckpointError, EmptyScene, ShapeMismatch
from crowdcast.loss import LossConfig, composite_loss
from crowdcast.model import (ModelConfig, SceneBatch, SocialPoolingConfig, TrajectoryModel, init_params,
                             lstm_cell_step, load_model, neighbor_pairs, pooling_matrix, rollout_scene,
                             save_model, social_pool)
from crowdcast.pipeline import ContextAgent

from conftest import make_scene, walking_scene

TINY = dict(embed_dim=4, hidden_dim=5, pooling=SocialPoolingConfig(side=4.0, grid=2, compressed=2))


def sig(x):
    return 1.0 / (1.0 + np.exp(-x))


def pool_oracle(positions, hidden, compress_w, cfg, groups=None, present=None):
    """Loop-by-loop binning of neighbors' compressed states into each agent's grid."""
    n = len(positions)
    G, half = cfg.grid, cfg.side / 2
    groups = np.zeros(n, int) if groups is None else groups
    present = np.ones(n, bool) if present is None else present
    out = np.zeros((n, G, G, cfg.compressed))
    for i in range(n):
        for j in range(n):
            if i == j or groups[i] != groups[j] or not (present[i] and present[j]):
                continue
            dx, dy = positions[j] - positions[i]
            if abs(dx) >= half or abs(dy) >= half:
                continue
            cx = min(int((dx + half) // (cfg.side / G)), G - 1)
            cy = min(int((dy + half) // (cfg.side / G)), G - 1)
            out[i, cx, cy] += hidden[j] @ compress_w
    return out.reshape(n, -1)


class TestCell:
    def test_zero_weights_zero_state(self):
        cfg = ModelConfig(kind="vanilla", **{k: v for k, v in TINY.items() if k != "pooling"})
        p = {k: np.zeros_like(v) for k, v in init_params(cfg).items()}
        h, c = lstm_cell_step(p, np.ones((3, 4)), None, (np.zeros((3, 5)), np.zeros((3, 5))))
        assert np.array_equal(h.value, np.zeros((3, 5)))

    def test_forget_saturation(self, rng):
        cfg = ModelConfig(kind="vanilla", embed_dim=4, hidden_dim=5)
        p = {k: np.zeros_like(v) for k, v in init_params(cfg).items()}
        b_i, b_g = rng.normal(size=5), rng.normal(size=5)
        p["gate_b"] = np.concatenate([b_i, np.full(5, 50.0), b_g, np.zeros(5)])
        c_prev = rng.normal(size=(2, 5))
        _, c = lstm_cell_step(p, rng.normal(size=(2, 4)), None, (rng.normal(size=(2, 5)), c_prev))
        assert np.allclose(c.value, c_prev + sig(b_i) * np.tanh(b_g), atol=1e-12)

    def test_gate_equations(self, rng):
        cfg = ModelConfig(kind="vanilla", embed_dim=3, hidden_dim=4, seed=5)
        p = init_params(cfg)
        e, h0, c0 = rng.normal(size=(2, 3)), rng.normal(size=(2, 4)), rng.normal(size=(2, 4))
        z = np.concatenate([e, h0], axis=1) @ p["gate_w"] + p["gate_b"]
        i, f, g, o = sig(z[:, :4]), sig(z[:, 4:8]), np.tanh(z[:, 8:12]), sig(z[:, 12:])
        c_ref = f * c0 + i * g
        h, c = lstm_cell_step(p, e, None, (h0, c0))
        assert np.allclose(c.value, c_ref, atol=1e-13)
        assert np.allclose(h.value, o * np.tanh(c_ref), atol=1e-13)

    def test_shape_mismatch(self):
        p = init_params(ModelConfig(kind="vanilla", **{k: v for k, v in TINY.items() if k != "pooling"}))
        with pytest.raises(ShapeMismatch):
            lstm_cell_step(p, np.ones((1, 3)), None, (np.zeros((1, 5)), np.zeros((1, 5))))

    def test_cell_gradient(self, rng):
        p = init_params(ModelConfig(kind="vanilla", embed_dim=3, hidden_dim=4, seed=1))
        e, h0, c0 = rng.normal(size=(2, 3)), rng.normal(size=(2, 4)), rng.normal(size=(2, 4))

        def f(w):
            h, _ = lstm_cell_step({**p, "gate_w": w}, e, None, (h0, c0))
            return ad.sum(ad.mul(h, np.arange(8.0).reshape(2, 4)))

        assert ad.finite_difference_check(f, p["gate_w"]) < 1e-4


class TestPooling:
    cfg = SocialPoolingConfig(side=4.0, grid=4, compressed=3)

    def test_no_neighbors(self, rng):
        w = rng.normal(size=(5, 3))
        out = social_pool({"compress_w": w}, self.cfg, np.zeros((1, 2)), rng.normal(size=(1, 5)))
        assert np.array_equal(out.value, np.zeros((1, 48)))

    def test_neighbor_out_of_range(self, rng):
        w = rng.normal(size=(5, 3))
        pos = np.array([[0.0, 0.0], [2.5, 0.0]])
        out = social_pool({"compress_w": w}, self.cfg, pos, rng.normal(size=(2, 5)))
        assert np.array_equal(out.value, np.zeros((2, 48)))

    def test_two_neighbors_same_cell(self, rng):
        w = rng.normal(size=(5, 3))
        h = rng.normal(size=(3, 5))
        # cells are 1 m wide; both neighbors sit in x-cell 3 (1..2 m), y-cell 2 (0..1 m)
        pos = np.array([[0.0, 0.0], [1.2, 0.3], [1.7, 0.8]])
        out = social_pool({"compress_w": w}, self.cfg, pos, h).value.reshape(3, 4, 4, 3)
        assert np.allclose(out[0, 3, 2], h[1] @ w + h[2] @ w, atol=1e-13)
        mask = np.ones((4, 4), bool)
        mask[3, 2] = False
        assert np.array_equal(out[0][mask], np.zeros((15, 3)))

    def test_matches_loop_oracle(self, rng):
        for _ in range(20):
            n = int(rng.integers(1, 12))
            pos = rng.uniform(-3, 3, size=(n, 2))
            h = rng.normal(size=(n, 5))
            w = rng.normal(size=(5, 3))
            groups = rng.integers(0, 3, n)
            present = rng.random(n) < 0.8
            got = social_pool({"compress_w": w}, self.cfg, pos, h, present, groups).value
            assert np.allclose(got, pool_oracle(pos, h, w, self.cfg, groups, present), atol=1e-12)

    def test_neighbor_pairs(self):
        a, b = neighbor_pairs(np.array([0, 1, 0, 1, 2]))
        assert sorted(zip(a.tolist(), b.tolist())) == [(0, 2), (1, 3), (2, 0), (3, 1)]

    def test_precomputed_pairs_agree(self, rng):
        pos = rng.uniform(-2, 2, size=(7, 2))
        groups = np.array([0, 0, 1, 1, 1, 0, 2])
        a = pooling_matrix(pos, None, groups, self.cfg).toarray()
        b = pooling_matrix(pos, None, groups, self.cfg, neighbor_pairs(groups)).toarray()
        assert np.array_equal(a, b)


@pytest.fixture
def social():
    return TrajectoryModel(ModelConfig(kind="social", seed=3, **TINY))


class TestRollout:
    def test_zero_head_stationary(self, rng, social):
        social.params["head_w"][:] = 0
        social.params["head_b"][:] = 0
        scene = walking_scene(4, rng)
        pred = rollout_scene(social, scene)
        assert pred.shape == (4, 12, 2)
        assert np.array_equal(pred, np.repeat(scene.observed[:, -1:], 12, axis=1))

    def test_single_agent_vanilla_equals_social(self, rng, social):
        p = social.params
        E, P = TINY["embed_dim"], social.config.pooled_width
        vparams = {k: v for k, v in p.items() if k != "compress_w"}
        vparams["gate_w"] = np.concatenate([p["gate_w"][:E], p["gate_w"][E + P:]])
        vanilla = TrajectoryModel(ModelConfig(kind="vanilla", **TINY), vparams)
        scene = walking_scene(1, rng)
        assert np.allclose(rollout_scene(vanilla, scene), rollout_scene(social, scene), atol=1e-12)

    def test_permutation_invariance(self, rng, social):
        scene = walking_scene(6, rng, spacing=0.8)
        perm = rng.permutation(6)
        shuffled = make_scene(scene.xy[perm])
        a = rollout_scene(social, scene)
        b = rollout_scene(social, shuffled)
        assert np.allclose(a[perm], b, atol=1e-12)

    def test_vanilla_ignores_neighbors(self, rng):
        model = TrajectoryModel(ModelConfig(kind="vanilla", seed=2, **TINY))
        scene = walking_scene(5, rng, spacing=0.5)
        fewer = make_scene(scene.xy[:3])
        assert np.allclose(rollout_scene(model, scene)[:3], rollout_scene(model, fewer), atol=1e-12)

    def test_social_uses_neighbors(self, rng, social):
        scene = walking_scene(5, rng, spacing=0.5)
        fewer = make_scene(scene.xy[:3])
        assert not np.allclose(rollout_scene(social, scene)[:3], rollout_scene(social, fewer))

    def test_context_agents_feed_pooling(self, rng, social):
        scene = walking_scene(2, rng, spacing=0.6)
        ctx = (ContextAgent(99, 2, scene.observed[0, 2:7] + [0.3, 0.3]),)
        with_ctx = make_scene(scene.xy, context=ctx)
        assert not np.allclose(rollout_scene(social, scene), rollout_scene(social, with_ctx))
        vanilla = TrajectoryModel(ModelConfig(kind="vanilla", seed=2, **TINY))
        assert np.array_equal(rollout_scene(vanilla, scene), rollout_scene(vanilla, with_ctx))

    def test_batch_matches_single(self, rng, social):
        scenes = [walking_scene(int(rng.integers(1, 5)), rng, scene_id=k) for k in range(5)]
        batched = social.predict(scenes, batch_size=5)
        for s, b in zip(scenes, batched):
            assert np.allclose(rollout_scene(social, s), b, atol=1e-12)

    def test_deterministic(self, rng, social):
        scene = walking_scene(3, rng)
        assert np.array_equal(rollout_scene(social, scene), rollout_scene(social, scene))

    def test_empty_batch(self):
        with pytest.raises(EmptyScene):
            SceneBatch([])

    def test_parameter_gradients(self, rng):
        """Every parameter tensor of the social model against central differences on a 3-agent scene."""
        model = TrajectoryModel(ModelConfig(kind="social", seed=8, embed_dim=3, hidden_dim=4,
                                            pooling=SocialPoolingConfig(side=4.0, grid=2, compressed=2)))
        # the first input displacement is zero, so a zero embedding bias sits on the relu kink
        model.params["embed_b"] = rng.choice([-1, 1], 3) * rng.uniform(0.05, 0.2, 3)
        scene = walking_scene(3, rng, spacing=0.35, speed=0.1)
        batch = SceneBatch([scene])
        cfg = LossConfig("dos", weight=0.5)
        for name in sorted(model.params):
            def f(x, name=name):
                pred = model.forward(batch, {**model.params, name: x})
                return composite_loss(cfg, scene, pred)

            assert ad.finite_difference_check(f, model.params[name]) < 1e-4, name


class TestSerialization:
    def test_round_trip(self, tmp_path, social):
        path = save_model(social, tmp_path / "m.json")
        back = load_model(path)
        assert back == social
        assert back.config == social.config

    def test_missing(self, tmp_path):
        with pytest.raises(CheckpointError):
            load_model(tmp_path / "none.json")

    def test_wrong_container(self, tmp_path):
        p = tmp_path / "m.json"
        p.write_text('{"format": "other", "version": 1}')
        with pytest.raises(CheckpointError):
            load_model(p)

    def test_shape_guard(self):
        cfg = ModelConfig(kind="vanilla", embed_dim=2, hidden_dim=3)
        params = init_params(cfg)
        params["head_w"] = np.zeros((4, 2))
        with pytest.raises(ShapeMismatch):
            TrajectoryModel(cfg, params)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            ModelConfig(kind="gan")
        with pytest.raises(ValueError):
            SocialPoolingConfig(side=0)
