import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from noisy_sed.rcrnn import (
    ModelConfig, ModelParams, cbam, describe, forward, leaf_tensors, output_frames, param_specs, predict,
    residual_block, weighted_pool,
)
from noisy_sed.tensor_core import Tensor, backward, grad_check, ops
from noisy_sed.tensor_core.gradcheck import numerical_grad, relative_error
from noisy_sed.training import init_params

TABLE_1 = [
    ("input", "1×625×128"),
    ("stem.0", "16×312×64"),
    ("stem.1", "32×156×32"),
    ("res.0", "64×156×16"),
    ("res.1", "128×156×8"),
    ("res.2", "128×156×4"),
    ("res.3", "128×156×2"),
    ("res.4", "128×156×1"),
    ("res.5", "128×156×1"),
    ("recurrent", "256×156"),
    ("strong", "156×10"),
    ("weak", "1×10"),
]

TINY = ModelConfig(n_frames=40, n_mels=16, n_classes=3, stem_channels=(2, 4), stem_kernel=3,
                   res_channels=(4, 4), cbam_reduction=2, cbam_kernel=3, gru_hidden=3, dropout=0.0)


def tiny_params(seed=0, cfg=TINY):
    return init_params(cfg, np.random.default_rng(seed))


class TestShapes:
    def test_describe_matches_layer_table(self):
        assert describe(ModelConfig()) == TABLE_1

    def test_output_frames_default(self):
        assert output_frames(ModelConfig()) == 156

    def test_trace_agrees_with_describe(self):
        cfg = ModelConfig(n_frames=40, n_mels=32, n_classes=4, stem_channels=(2, 4), res_channels=(4, 8, 8),
                          cbam_reduction=2, gru_hidden=5, dropout=0.0)
        trace = []
        strong, weak = forward(tiny_params(cfg=cfg), np.zeros((2, 40, 32)), trace=trace)
        table = describe(cfg)
        as_text = [(n, "×".join(map(str, s))) for n, s in trace]
        assert as_text == table[:-2]
        assert strong.shape == (2, 10, 4)
        assert weak.shape == (2, 4)
        assert table[-2:] == [("strong", "10×4"), ("weak", "1×4")]

    def test_param_shapes_check(self):
        p = tiny_params()
        p.check()
        bad = ModelParams(TINY, dict(p.values))
        bad.values["fc.bias"] = np.zeros(5)
        with pytest.raises(ValueError, match="fc.bias"):
            bad.check()

    def test_projection_only_on_width_change(self):
        specs = param_specs(ModelConfig())
        assert "res.0.proj.weight" in specs and "res.1.proj.weight" in specs
        assert "res.2.proj.weight" not in specs

    def test_bad_input_shape(self):
        with pytest.raises(ValueError, match="expected input"):
            forward(tiny_params(), np.zeros((1, 39, 16)))

    def test_cbam_width_validation(self):
        with pytest.raises(ValueError, match="CBAM"):
            ModelConfig(res_channels=(6,), cbam_reduction=4)

    def test_predict_matches_forward(self):
        p = tiny_params()
        x = np.random.default_rng(1).normal(size=(5, 40, 16))
        preds = predict(p, x, batch_size=2)
        strong, weak = forward(p, x)
        for i, pr in enumerate(preds):
            np.testing.assert_array_equal(pr.strong, strong.data[i])
            np.testing.assert_array_equal(pr.weak, weak.data[i][None])


class TestWeightedPool:
    def test_constant_column_returns_value(self):
        p = np.full((7, 2), 0.3)
        np.testing.assert_array_equal(weighted_pool(p).data, [0.3, 0.3])

    def test_zero_column_is_zero(self):
        p = np.zeros((5, 3))
        p[:, 1] = 0.5
        np.testing.assert_array_equal(weighted_pool(p).data, [0.0, 0.5, 0.0])

    def test_hand_value(self):
        # (0.1^2 + 0.9^2) / (0.1 + 0.9) = 0.82
        assert weighted_pool(np.array([[0.1], [0.9]])).data[0] == pytest.approx(0.82, abs=1e-15)

    @settings(max_examples=60, deadline=None)
    @given(arrays(np.float64, (6, 3), elements=st.floats(0.0, 1.0)))
    def test_matches_ratio_and_bounds(self, p):
        got = weighted_pool(p).data
        den = p.sum(0)
        expected = np.where(den > 0, (p * p).sum(0) / np.where(den > 0, den, 1.0), 0.0)
        np.testing.assert_allclose(got, expected, atol=1e-12)
        assert np.all(got <= p.max(0) + 1e-12)
        assert np.all(got >= -1e-12)

    def test_batched_axis(self):
        p = np.random.default_rng(0).uniform(size=(2, 8, 3))
        np.testing.assert_allclose(weighted_pool(p).data[1], weighted_pool(p[1]).data, atol=1e-15)

    @pytest.mark.parametrize("seed", range(5))
    def test_gradient(self, seed):
        p = np.random.default_rng(seed).uniform(0.05, 0.95, size=(2, 6, 3))
        assert grad_check(lambda t: ops.sum(ops.mul(weighted_pool(t), Tensor(np.arange(1.0, 7).reshape(2, 3)))),
                          p) < 1e-6


def _cbam_params(c, r, k, rng):
    h = c // r
    return {
        "a.mlp1.weight": Tensor(rng.normal(size=(h, c))), "a.mlp1.bias": Tensor(rng.normal(size=h)),
        "a.mlp2.weight": Tensor(rng.normal(size=(c, h))), "a.mlp2.bias": Tensor(rng.normal(size=c)),
        "a.spatial.weight": Tensor(rng.normal(size=(1, 2, k, k))), "a.spatial.bias": Tensor(rng.normal(size=1)),
    }


class TestCBAM:
    def test_saturated_attention_is_identity(self):
        rng = np.random.default_rng(0)
        p = _cbam_params(4, 2, 3, rng)
        for k in p:
            p[k] = Tensor(np.zeros_like(p[k].data))
        p["a.mlp2.bias"] = Tensor(np.full(4, 50.0))
        p["a.spatial.bias"] = Tensor(np.array([50.0]))
        x = rng.normal(size=(2, 4, 5, 6))
        np.testing.assert_allclose(cbam(x, p, "a").data, x, rtol=1e-12)

    def test_closed_attention_gives_half(self):
        p = _cbam_params(4, 2, 3, np.random.default_rng(1))
        for k in p:
            p[k] = Tensor(np.zeros_like(p[k].data))
        x = np.random.default_rng(2).normal(size=(1, 4, 3, 3))
        np.testing.assert_allclose(cbam(x, p, "a").data, 0.25 * x, rtol=1e-12)

    @pytest.mark.parametrize("seed", range(5))
    def test_gradient(self, seed):
        rng = np.random.default_rng(seed)
        p = _cbam_params(4, 2, 3, rng)
        x = rng.normal(size=(2, 4, 5, 6))
        r = rng.normal(size=x.shape)
        assert grad_check(lambda t: ops.sum(ops.mul(cbam(t, p, "a"), Tensor(r))), x) < 1e-5


class TestResidualBlock:
    def test_skip_path_passes_when_branch_is_dead(self):
        # conv weights zero and biases negative: both ReLUs output 0, so y = pool(cbam(x))
        cfg = ModelConfig(n_frames=8, n_mels=8, n_classes=2, stem_channels=(4,), res_channels=(4,),
                          cbam_reduction=2, cbam_kernel=3, gru_hidden=2, dropout=0.0)
        params = init_params(cfg, np.random.default_rng(0))
        v = params.values
        for name in ("conv1", "conv2"):
            v[f"res.0.{name}.weight"][:] = 0.0
            v[f"res.0.{name}.bias"][:] = -1.0
        for name in ("mlp1.weight", "mlp1.bias", "mlp2.weight", "spatial.weight"):
            v[f"res.0.cbam.{name}"][:] = 0.0
        v["res.0.cbam.mlp2.bias"][:] = 60.0
        v["res.0.cbam.spatial.bias"][:] = 60.0
        x = np.random.default_rng(1).normal(size=(1, 4, 6, 4))
        p = {k: Tensor(a) for k, a in v.items()}
        y = residual_block(x, p, v, "res.0", cfg, training=False)
        expected = x.reshape(1, 4, 6, 2, 2).mean(-1)
        np.testing.assert_allclose(y.data, expected, rtol=1e-12)

    def test_skip_gives_gradient_even_when_branch_is_dead(self):
        cfg = ModelConfig(n_frames=8, n_mels=8, n_classes=2, stem_channels=(4,), res_channels=(4,),
                          cbam_reduction=2, cbam_kernel=3, gru_hidden=2, dropout=0.0)
        params = init_params(cfg, np.random.default_rng(0))
        v = params.values
        v["res.0.conv2.weight"][:] = 0.0
        v["res.0.conv2.bias"][:] = -5.0
        p = {k: Tensor(a) for k, a in v.items()}
        x = Tensor(np.random.default_rng(2).normal(size=(1, 4, 6, 4)), requires_grad=True)
        backward(ops.sum(residual_block(x, p, v, "res.0", cfg, training=False)), leaves=[x])
        assert np.all(np.abs(x.grad) > 0)


class TestForward:
    def test_inference_is_deterministic_and_ignores_rng(self):
        cfg = ModelConfig(**{**TINY.to_dict(), "dropout": 0.5})
        p = tiny_params(cfg=cfg)
        x = np.random.default_rng(0).normal(size=(2, 40, 16))
        a = forward(p, x, rng=np.random.default_rng(1))[0].data
        b = forward(p, x, rng=np.random.default_rng(2))[0].data
        assert a.tobytes() == b.tobytes()

    def test_dropout_depends_on_rng_only(self):
        cfg = ModelConfig(**{**TINY.to_dict(), "dropout": 0.5})
        x = np.random.default_rng(0).normal(size=(2, 40, 16))

        def run(seed):
            return forward(tiny_params(cfg=cfg), x, training=True, rng=np.random.default_rng(seed))[0].data
        assert run(1).tobytes() == run(1).tobytes()
        assert run(1).tobytes() != run(2).tobytes()

    def test_training_with_dropout_needs_rng(self):
        cfg = ModelConfig(**{**TINY.to_dict(), "dropout": 0.5})
        with pytest.raises(ValueError, match="rng"):
            forward(tiny_params(cfg=cfg), np.zeros((1, 40, 16)), training=True)

    def test_training_updates_running_stats_only(self):
        p = tiny_params()
        before = {k: v.copy() for k, v in p.values.items()}
        forward(p, np.random.default_rng(0).normal(size=(2, 40, 16)), training=True)
        changed = {k for k in before if not np.array_equal(before[k], p.values[k])}
        assert changed and all(k.endswith(("running_mean", "running_var")) for k in changed)

    def test_outputs_are_probabilities(self):
        strong, weak = forward(tiny_params(3), np.random.default_rng(3).normal(size=(3, 40, 16)))
        assert np.all((strong.data > 0) & (strong.data < 1))
        assert np.all(weak.data <= strong.data.max(axis=1) + 1e-12)


def _full_gradcheck(seed, entries=6):
    # zero-initialized biases put ReLU inputs exactly on the kink and tie CBAM maxima,
    # so jitter every trainable array to check at a generic point
    params = tiny_params(seed)
    rng = np.random.default_rng(100 + seed)
    for name in params.trainable_names():
        params.values[name] = params.values[name] + rng.normal(scale=0.1, size=params.values[name].shape)
    x = rng.normal(size=(1, 40, 16))
    r_s = rng.normal(size=(1, 10, 3))
    r_w = rng.normal(size=(1, 3))
    values = params.values

    def loss(p):
        s, w = forward(params, x, training=False, leaves=p)
        return ops.add(ops.sum(ops.mul(s, Tensor(r_s))), ops.sum(ops.mul(w, Tensor(r_w))))

    leaves = leaf_tensors(params, requires_grad=True)
    backward(loss(leaves), leaves=list(leaves.values()))
    worst = 0.0
    for name in params.trainable_names():
        flat_n = values[name].size
        idx = np.sort(rng.choice(flat_n, size=min(entries, flat_n), replace=False))

        def f(arr, name=name):
            p = {k: Tensor(arr if k == name else values[k]) for k in params.trainable_names()}
            return float(loss(p).data)
        num = numerical_grad(f, values[name], eps=1e-6, indices=idx)
        worst = max(worst, relative_error(leaves[name].grad.reshape(-1)[idx], num.reshape(-1)[idx]))
    return worst


@pytest.mark.parametrize("seed", range(20))
def test_shrunken_network_gradient(seed):
    assert _full_gradcheck(seed) < 1e-3
