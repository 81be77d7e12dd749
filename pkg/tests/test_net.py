import math

import numpy as np
import pytest

from refprobe import net, scene
from refprobe.errors import CheckpointError, DimensionError
from refprobe.net import PARAM_NAMES, ModelConfig
from refprobe.scene import DEFAULT_SCHEMA, Scene, World

from conftest import finite_difference, max_relative_error

S = DEFAULT_SCHEMA
SMALL = ModelConfig(hidden_dim=8, decoder_hidden=6, seed=3)


def test_gradient_matches_finite_differences():
    params = net.init_params(SMALL)
    batch = net.SceneSource(seed=5).take(3)
    assert max_relative_error(net.grad(params, batch), finite_difference(params, batch)) < 1e-4


def test_gradient_is_deterministic_and_linear_in_the_loss():
    params = net.init_params(SMALL)
    a = net.SceneSource(seed=6).take(3)
    b = net.SceneSource(seed=7).take(2)
    g = net.grad(params, a + b)
    assert all(np.array_equal(g[k], v) for k, v in net.grad(params, a + b).items())
    # the loss is a mean over objects, so its gradient mixes sub-batch gradients by object count
    na, nb = sum(len(s.world) for s in a), sum(len(s.world) for s in b)
    ga, gb = net.grad(params, a), net.grad(params, b)
    for name in PARAM_NAMES:
        np.testing.assert_allclose(g[name], (na * ga[name] + nb * gb[name]) / (na + nb), rtol=1e-10, atol=1e-14)


def test_encode_shape_and_zero_params():
    sc, _ = scene.generate_scene(0, S)
    params = net.init_params(ModelConfig())
    f = net.encode(params, sc)
    assert f.shape == (64,)
    assert np.array_equal(f, net.encode(params, sc))
    zero = net.zero_params(ModelConfig())
    assert np.array_equal(net.encode(zero, sc), np.zeros(64))


def test_encode_ignores_padding():
    params = net.init_params(SMALL)
    scenes = net.SceneSource(seed=8).take(10)
    batched = net.encode_batch(params, scenes)
    single = np.stack([net.encode(params, s) for s in scenes])
    np.testing.assert_allclose(batched, single, rtol=0, atol=1e-12)


def test_encode_matches_hand_rolled_recurrence():
    params = net.init_params(SMALL)
    sc, _ = scene.generate_scene(4, S, 3, 6)
    sig = lambda x: 1 / (1 + np.exp(-x))
    h = np.zeros(SMALL.hidden_dim)
    feats = scene.world_features(sc.world.codes, S)
    for x_obj, bit in zip(feats, sc.target):
        x = np.append(x_obj, float(bit))
        z = sig(params["W_z"] @ x + params["U_z"] @ h + params["b_z"])
        r = sig(params["W_r"] @ x + params["U_r"] @ h + params["b_r"])
        hc = np.tanh(params["W_h"] @ x + params["U_h"] @ (r * h) + params["b_h"])
        h = (1 - z) * h + z * hc
    np.testing.assert_allclose(net.encode(params, sc), h, rtol=1e-12, atol=1e-14)


def test_decode_zero_weights_is_half():
    zero = net.zero_params(ModelConfig())
    p = net.decode(zero, np.ones(64), scene.object_features(np.array([0, 1]), S))
    assert p == 0.5


def test_decode_range_and_independence():
    params = net.init_params(ModelConfig())
    rng = np.random.default_rng(0)
    f = rng.normal(size=64) * 5
    w = scene.generate_world(1, S, 5, 5)
    probs = net.decode_world(params, f, w)
    assert probs.shape == (5,)
    assert np.all((probs > 0) & (probs < 1))
    feats = scene.world_features(w.codes, S)
    np.testing.assert_allclose(probs, [net.decode(params, f, x) for x in feats], rtol=0, atol=1e-15)
    order = [4, 2, 0, 1, 3]
    np.testing.assert_allclose(net.decode_world(params, f, w.permuted(order)), probs[order], rtol=0, atol=1e-15)


def test_decode_dimension_mismatch():
    params = net.init_params(ModelConfig())
    with pytest.raises(DimensionError):
        net.decode(params, np.zeros(10), np.zeros(S.feature_dim))


def test_encoder_invariant_to_decoder_params():
    params = net.init_params(SMALL)
    sc, _ = scene.generate_scene(2, S)
    other = dict(params, W_1=params["W_1"] * 3, b_2=params["b_2"] + 1)
    assert np.array_equal(net.encode(params, sc), net.encode(other, sc))
    other = dict(params, U_z=params["U_z"] * 3)
    f = np.ones(SMALL.hidden_dim)
    x = np.eye(S.feature_dim)[0]
    assert net.decode(params, f, x) == net.decode(other, f, x)


def test_loss_examples():
    zero = net.zero_params(ModelConfig())
    batch = net.SceneSource(seed=1).take(5)
    assert math.isclose(net.loss(zero, batch), math.log(2), rel_tol=1e-12)
    params = net.init_params(ModelConfig())
    l = net.loss(params, batch)
    assert l >= 0
    assert math.isclose(net.loss(params, batch + batch), l, rel_tol=1e-12)


def test_train_zero_steps_is_init():
    cfg = ModelConfig(train_steps=0, seed=9)
    params = net.train(cfg, net.SceneSource())
    init = net.init_params(cfg)
    for name in PARAM_NAMES:
        assert np.array_equal(params[name], init[name])
        assert np.all(np.abs(init[name]) <= 0.1)


def test_train_is_deterministic_and_improves():
    cfg = ModelConfig(hidden_dim=16, decoder_hidden=16, batch_size=20, train_steps=300, learning_rate=3e-3)
    h1, h2 = [], []
    p1 = net.train(cfg, net.SceneSource(seed=4), history=h1)
    p2 = net.train(cfg, net.SceneSource(seed=4), history=h2)
    for name in PARAM_NAMES:
        assert np.array_equal(p1[name], p2[name])
    assert h1 == h2
    assert np.mean(h1[-100:]) < np.mean(h1[:100])


def test_checkpoint_roundtrip(tmp_path):
    params = net.init_params(SMALL)
    net.save_checkpoint(params, SMALL, tmp_path / "a.ckpt")
    back, cfg = net.load_checkpoint(tmp_path / "a.ckpt")
    assert cfg == SMALL
    for name in PARAM_NAMES:
        assert back[name].tobytes() == params[name].tobytes()
    net.save_checkpoint(back, cfg, tmp_path / "b.ckpt")
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()


def test_checkpoint_truncated(tmp_path):
    net.save_checkpoint(net.init_params(SMALL), SMALL, tmp_path / "a.ckpt")
    raw = (tmp_path / "a.ckpt").read_bytes()
    for cut in (4, 20, len(raw) // 2, len(raw) - 1):
        (tmp_path / "t.ckpt").write_bytes(raw[:cut])
        with pytest.raises(CheckpointError):
            net.load_checkpoint(tmp_path / "t.ckpt")


def test_checkpoint_version_mismatch(tmp_path):
    net.save_checkpoint(net.init_params(SMALL), SMALL, tmp_path / "a.ckpt")
    raw = bytearray((tmp_path / "a.ckpt").read_bytes())
    raw[8] = 99
    (tmp_path / "v.ckpt").write_bytes(bytes(raw))
    with pytest.raises(CheckpointError, match="version"):
        net.load_checkpoint(tmp_path / "v.ckpt")


def test_forward_values_finite_for_large_params():
    params = {k: v * 1e4 for k, v in net.init_params(SMALL).items()}
    batch = net.SceneSource(seed=2).take(4)
    assert np.isfinite(net.loss(params, batch))
    assert all(np.all(np.isfinite(g)) for g in net.grad(params, batch).values())
