import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kcvision.ann import (AKWTA, KCCode, ProcessingLayer, VisionModelANN, achromatic_concat,
                          build_mask, kwta_k, vpn_split_concat)
from kcvision.config import AKWTAConfig, ConfigError, ModelConfig
from kcvision.numeric import AdamW, Param, Tensor, ops


@pytest.fixture(scope="module")
def model():
    return VisionModelANN()


@pytest.fixture(scope="module")
def model64():
    return VisionModelANN(dtype=np.float64)


def images(n, seed=0, size=75):
    return np.random.default_rng(seed).random((n, 2, size, size)).astype(np.float32)


# ---------------------------------------------------------------- stages

def test_shape_chain(model):
    out = model.stage_outputs(images(2))
    assert out["retina"].shape == (2, 32, 75, 75)
    assert out["lamina"].shape == (2, 32, 38, 38)
    assert out["medulla"].shape == (2, 64, 19, 19)
    assert out["lobula"].shape == (2, 128, 10, 10)
    assert out["vpn"].shape == (2, 100)
    assert out["kc"].shape == (2, 1024)


def test_retina_negation_symmetry(model):
    out = model.retina_forward(images(2)).data
    np.testing.assert_array_equal(out[:, 16:], -out[:, :16])


def test_retina_zero_image_zero_bias():
    m = VisionModelANN()
    m.retina.bias.data[:] = 0
    out = m.retina_forward(np.zeros((1, 2, 75, 75), np.float32)).data
    np.testing.assert_array_equal(out, 0)


def test_wrong_channel_count(model):
    with pytest.raises(ValueError):
        model(np.zeros((1, 3, 75, 75), np.float32))


def test_identity_layer_passthrough():
    cfg = ModelConfig(kernel_size=1, lrn_alpha=0.0, gn_groups=1, leaky_slope=1.0)
    layer = ProcessingLayer(2, 2, 1, cfg, np.random.default_rng(0), np.float64)
    layer.kernel.data[:] = np.eye(2)[:, :, None, None]
    layer.bias.data[:] = 0
    x = np.random.default_rng(1).standard_normal((1, 2, 4, 4))
    # neutralise group norm by re-scaling with the sample statistics
    mu, sd = x.mean(), np.sqrt(x.var() + cfg.gn_eps)
    layer.gamma.data[:] = sd
    layer.delta.data[:] = mu
    np.testing.assert_allclose(layer(x).data, x, atol=1e-12)


def test_layer_composition_oracle(model64):
    layer = model64.lamina
    x = np.random.default_rng(2).standard_normal((2, 32, 9, 9))
    c = model64.cfg
    manual = ops.conv2d(x, layer.kernel, layer.bias, stride=2, padding=1)
    manual = ops.leaky_relu(manual, c.leaky_slope)
    manual = ops.local_response_norm(manual, c.lrn_n, c.lrn_k, c.lrn_alpha, c.lrn_beta)
    manual = ops.group_norm(manual, 8, layer.gamma, layer.delta, c.gn_eps)
    np.testing.assert_allclose(layer(x).data, manual.data, atol=1e-12)


def test_lobula_zero_input_neutral_norms():
    m = VisionModelANN(dtype=np.float64)
    m.lobula.bias.data[:] = 0
    out = m.lobula_forward(np.zeros((1, 64, 19, 19))).data
    np.testing.assert_array_equal(out, 0)


def test_achromatic_stream():
    x = np.random.default_rng(0).standard_normal((1, 1, 5, 5))
    same = np.concatenate([x, x], axis=1)
    out = achromatic_concat(same).data
    np.testing.assert_allclose(out[:, 2:], same, atol=1e-15)
    pair = np.concatenate([x, -x], axis=1)
    np.testing.assert_array_equal(achromatic_concat(pair).data[:, 2:], 0)


def test_vpn_split_concat_identity():
    x = np.random.default_rng(0).standard_normal((3, 128, 10, 10))
    out = vpn_split_concat(x).data
    assert out.shape == (3, 100)
    np.testing.assert_allclose(out, ops.avg_pool_channels(x).data.reshape(3, -1), atol=1e-15)
    np.testing.assert_allclose(vpn_split_concat(np.full((1, 128, 10, 10), 0.3)).data, 0.3,
                               atol=1e-15)


# ---------------------------------------------------------------- sparse linear

def test_masked_linear_cases():
    rng = np.random.default_rng(0)
    x, w, b = rng.standard_normal((4, 12)), rng.standard_normal((6, 12)), rng.standard_normal(6)
    np.testing.assert_array_equal(ops.masked_linear(x, w, np.zeros((6, 12)), b).data,
                                  np.broadcast_to(b, (4, 6)))
    np.testing.assert_allclose(ops.masked_linear(x, w, np.ones((6, 12)), b).data, x @ w.T + b,
                               atol=1e-12)
    m = (rng.random((6, 12)) < 0.3).astype(float)
    ref = np.array([[sum(x[n, j] * w[i, j] * m[i, j] for j in range(12)) + b[i]
                     for i in range(6)] for n in range(4)])
    np.testing.assert_allclose(ops.masked_linear(x, w, m, b).data, ref, atol=1e-10)


def test_build_mask_properties():
    m = build_mask(100, 1024, 10, seed=3)
    assert set(np.unique(m)) <= {0.0, 1.0}
    np.testing.assert_array_equal(m.sum(axis=1), 10)
    np.testing.assert_array_equal(build_mask(100, 1024, 10, seed=3), m)
    assert not np.array_equal(build_mask(100, 1024, 10, seed=4), m)
    np.testing.assert_array_equal(build_mask(20, 8, 20), 1)


def test_mask_immutable_and_masked_grads_zero():
    m = VisionModelANN()
    before = m.kc_mask.copy()
    with pytest.raises(ValueError):
        m.kc_mask[0, 0] = 1 - m.kc_mask[0, 0]
    opt = AdamW(m.params(), lr=1e-3, weight_decay=0.0)
    for step in range(2):
        opt.zero_grad()
        m(images(4, seed=step), training=True).sum().backward()
        assert np.all(m.kc_weight.grad[before == 0] == 0)
        opt.step()
    np.testing.assert_array_equal(m.kc_mask, before)


# ---------------------------------------------------------------- a-kWTA

def brute_force_topk(kc, theta, k):
    adj = kc / theta
    return [set(np.argsort(-row, kind="stable")[:k]) for row in adj]


def test_kwta_k():
    assert kwta_k(0.05, 1024) == 51
    assert kwta_k(1e-5, 1024) == 1


def test_theta_cases():
    a = AKWTA()
    a.mu[:] = 0.05
    np.testing.assert_array_equal(a.theta, 1.0)
    a.mu[:] = 0.15
    np.testing.assert_allclose(a.theta, 1.2, atol=1e-6)


def test_akwta_oracle_and_count():
    rng = np.random.default_rng(0)
    a = AKWTA(dtype=np.float64)
    for _ in range(50):
        a.mu = rng.random(1024)
        kc = rng.standard_normal((4, 1024))
        out = a(Tensor(kc)).data
        assert np.all(np.count_nonzero(out, axis=1) == 51)
        got = [set(np.flatnonzero(r)) for r in out]
        assert got == brute_force_topk(kc, a.theta, 51)
        kept = out != 0
        np.testing.assert_array_equal(out[kept], kc[kept])  # original values, not adjusted


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31), st.floats(1e-3, 1e3))
def test_akwta_positive_scaling_invariance(seed, scale):
    rng = np.random.default_rng(seed)
    a = AKWTA(dtype=np.float64)
    a.mu = rng.random(1024)
    kc = rng.standard_normal((2, 1024))
    i1 = np.sort(a.select(kc), axis=1)
    i2 = np.sort(a.select(kc * scale), axis=1)
    np.testing.assert_array_equal(i1, i2)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(0, 2**31), min_size=1, max_size=20))
def test_mu_stays_in_unit_interval(seeds):
    a = AKWTA(dtype=np.float64)
    for s in seeds:
        a.update(np.random.default_rng(s).standard_normal((3, 1024)))
        assert a.mu.min() >= 0 and a.mu.max() <= 1
        assert a.theta.min() >= 1


def test_akwta_training_updates_mu_eval_freezes():
    a = AKWTA(momentum=0.9, dtype=np.float64)
    kc = np.abs(np.random.default_rng(0).standard_normal((8, 1024)))  # all active
    a(Tensor(kc), training=False)
    np.testing.assert_array_equal(a.mu, 0)
    a(Tensor(kc), training=True)
    np.testing.assert_allclose(a.mu, 0.1)


def test_akwta_bad_rho():
    with pytest.raises(ValueError):
        AKWTA(rho=1.5)
    with pytest.raises(ConfigError):
        AKWTAConfig(rho=1.5).validate()


# ---------------------------------------------------------------- forward

def test_forward_sparsity_and_determinism(model):
    x = images(6, seed=4)
    a = model.encode(x)
    b = model.encode(x.copy())
    assert a.shape == (6, 1024)
    assert np.all(np.count_nonzero(a, axis=1) == 51)
    assert a.tobytes() == b.tobytes()
    code = KCCode(a[0])
    assert code.active_count == 51 and len(code.indices) == 51


def test_eval_mode_freezes_mu():
    m = VisionModelANN()
    m.encode(images(3))
    np.testing.assert_array_equal(m.akwta.mu, 0)
    m(images(3), training=True)
    assert m.akwta.mu.max() > 0


def test_lobula_channel_constraint():
    with pytest.raises(ConfigError):
        ModelConfig(lobula_channels=64).validate()


def test_params_are_named_and_trainable(model):
    names = [p.name for p in model.params()]
    assert len(names) == len(set(names))
    assert all(isinstance(p, Param) for p in model.params())
    assert "kc.weight" in names and "kc.bias" in names
