import numpy as np
import pytest

from engage.features.assemble import FeatureBatch, FeatureLayout, categorical_spec
from engage.model import (
    AdamW,
    EngageNet,
    InferenceNet,
    ModelConfig,
    bce_sum,
    gradient_check,
    load_model,
    prior_loss,
    run_stage,
    save_model,
    train,
)
from engage.records import LogFormatError

LAYOUT = FeatureLayout(8, categorical_spec(3))


def make_batch(n, seed=0, layout=LAYOUT):
    rng = np.random.default_rng(seed)
    sketch = rng.random((n, layout.sketch_size)).astype(np.float32)
    sketch /= np.linalg.norm(sketch, axis=1, keepdims=True)
    numeric = rng.integers(0, 50, (n, len(layout.numeric))).astype(np.float64)
    cat = np.stack([rng.integers(0, v, n) for _, v in layout.categorical], axis=1)
    strengths = rng.random((n, layout.n_strengths)).astype(np.float32)
    return FeatureBatch(sketch, numeric, cat, strengths)


def small_config(**kw):
    base = dict(hidden_width=12, hidden_layers=3, batch_size=16, lr=1e-3, epochs_stage1=1, epochs_stage2=1)
    base.update(kw)
    return ModelConfig(**base)


def separable(n=200, seed=0):
    """Labels are a threshold on sketch coordinates; learnable from the sketch alone."""
    batch = make_batch(n, seed)
    s = batch.sketch
    y = np.stack([s[:, 0] > s[:, 1], s[:, 2] > s[:, 3], s[:, 4] > s[:, 5], s[:, 6] > s[:, 7]], axis=1)
    return batch, y.astype(np.float64)


class TestConfig:
    @pytest.mark.parametrize("kw", [{"hidden_width": 0}, {"batch_size": 1}, {"leaky_relu_slope": 0.0},
                                    {"adam_beta1": 1.0}, {"fourier_scales": (2, 1)}])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            ModelConfig(**kw)

    def test_dict_round_trip(self):
        cfg = small_config(fourier_scales=(0, 3))
        assert ModelConfig.from_dict(cfg.to_dict()) == cfg
        with pytest.raises(ValueError):
            ModelConfig.from_dict({"bogus": 1})


class TestShapes:
    def test_input_width(self):
        net = EngageNet(LAYOUT, small_config())
        # sketch + 35 numerics x 16 + embeddings capped at 16 + 4 strengths
        emb = sum(min(16, v) for _, v in LAYOUT.categorical)
        assert net.input_width == 8 + 35 * 16 + emb + 4
        assert net.inputs(make_batch(5)).shape == (5, net.input_width)

    def test_embedding_dims_capped(self):
        net = EngageNet(LAYOUT, small_config(embedding_dim_cap=3))
        assert net.params["emb3"].shape == (24, 3)
        assert net.params["emb5"].shape == (2, 2)

    def test_zero_hidden_layers(self):
        net = EngageNet(LAYOUT, small_config(hidden_layers=0))
        assert net.params["out.weight"].shape == (net.input_width, 4)
        assert net.predict(make_batch(3)).shape == (3, 4)

    def test_wrong_layout_rejected(self):
        net = EngageNet(LAYOUT, small_config())
        with pytest.raises(ValueError):
            net.inputs(make_batch(3, layout=FeatureLayout(4, categorical_spec(3))))

    def test_out_of_range_category(self):
        b = make_batch(3)
        b.categorical[0, 1] = 4
        with pytest.raises(ValueError, match="out of range"):
            EngageNet(LAYOUT, small_config()).predict(b)


class TestGradients:
    def test_gradient_check(self):
        net = EngageNet(LAYOUT, small_config())
        batch, y = separable(24, seed=1)
        assert gradient_check(net, batch, y, n_checks=300) < 1e-4

    def test_gradient_check_after_training(self):
        batch, y = separable(64, seed=2)
        net, _ = train([(batch, y)], [], small_config(), LAYOUT)
        assert gradient_check(net, batch, y, n_checks=200, seed=3) < 1e-4

    def test_bce_sum_matches_formula(self):
        z = np.array([[0.3, -2.0, 5.0, 0.0]])
        y = np.array([[1.0, 0.0, 0.0, 1.0]])
        p = 1 / (1 + np.exp(-z))
        ref = -(y * np.log(p) + (1 - y) * np.log(1 - p)).sum()
        assert bce_sum(z, y) == pytest.approx(ref, rel=1e-12)

    def test_bce_sum_large_logits_finite(self):
        assert np.isfinite(bce_sum(np.array([[1e4, -1e4, 0, 0]]), np.array([[0.0, 1.0, 0, 0]])))


class TestAdamW:
    def test_single_step(self):
        cfg = small_config(weight_decay=0.1)
        p = {"w": np.array([1.0, -2.0])}
        g = {"w": np.array([0.5, 0.0])}
        AdamW(p, ["w"], cfg).step(p, g, lr=0.01)
        # first step: m_hat = g, v_hat = g^2, so the update is lr * sign(g) where g != 0
        expected = np.array([1.0, -2.0]) * (1 - 0.01 * 0.1) - 0.01 * np.array([0.5 / (0.5 + 1e-8), 0.0])
        np.testing.assert_allclose(p["w"], expected, rtol=1e-12)

    def test_decay_without_gradient(self):
        cfg = small_config(weight_decay=0.5)
        p = {"w": np.array([2.0])}
        opt = AdamW(p, ["w"], cfg)
        for _ in range(3):
            opt.step(p, {"w": np.zeros(1)}, lr=0.1)
        assert p["w"][0] == pytest.approx(2.0 * 0.95**3)


class TestTraining:
    def test_learns_separable_fixture(self):
        batch, y = separable(200)
        cfg = small_config(hidden_width=32, epochs_stage1=30, lr=3e-3)
        net, logs = train([(batch, y)], [], cfg, LAYOUT)
        logits, _ = net.forward(batch)
        assert bce_sum(logits, y) < prior_loss(y)
        assert logs[-1].mean_loss < logs[0].mean_loss

    def test_deterministic(self):
        batch, y = separable(80)
        a, la = train([(batch, y)], [(batch, y)], small_config(), LAYOUT)
        b, lb = train([(batch, y)], [(batch, y)], small_config(), LAYOUT)
        assert all(np.array_equal(a.params[k], b.params[k]) for k in a.params)
        assert [x.mean_loss for x in la] == [x.mean_loss for x in lb]

    def test_zero_epochs_leaves_weights(self):
        batch, y = separable(40)
        net = EngageNet(LAYOUT, small_config())
        before = {k: v.copy() for k, v in net.params.items()}
        assert run_stage(net, [(batch, y)], 0, 1, np.random.default_rng(0)) == []
        assert all(np.array_equal(before[k], net.params[k]) for k in before)

    def test_trailing_single_row_batch_skipped(self):
        batch, y = separable(33)
        logs = run_stage(EngageNet(LAYOUT, small_config()), [(batch, y)], 2, 1, np.random.default_rng(0))
        assert [entry.steps for entry in logs] == [2, 2]

    def test_stage_logs(self):
        batch, y = separable(40)
        _, logs = train([(batch, y)], [(batch, y)], small_config(epochs_stage1=2, epochs_stage2=1), LAYOUT)
        assert [(entry.stage, entry.epoch) for entry in logs] == [(1, 0), (1, 1), (2, 0)]

    def test_needs_stage1(self):
        with pytest.raises(ValueError):
            train([], [], small_config(), LAYOUT)

    def test_prior_loss(self):
        y = np.array([[1, 0, 0, 0], [0, 0, 1, 0]], dtype=float)
        assert prior_loss(y) == pytest.approx(2 * np.log(2), rel=1e-9)


@pytest.fixture(scope="module")
def trained():
    batch, y = separable(96)
    net, _ = train([(batch, y)], [], small_config(), LAYOUT)
    return net


class TestInference:
    def test_folded_matches_eval_forward(self, trained):
        batch = make_batch(20, seed=9)
        net64 = trained.copy(np.float64)
        logits, _ = net64.forward(batch, train=False)
        ref = 1 / (1 + np.exp(-logits))
        np.testing.assert_allclose(InferenceNet(trained).predict_batch(batch), ref, atol=2e-5)

    def test_one_matches_batch(self, trained):
        batch = make_batch(10, seed=4)
        inf = InferenceNet(trained)
        many = inf.predict_batch(batch)
        for i in range(10):
            np.testing.assert_allclose(inf.predict_one(batch.row(i)), many[i], rtol=1e-5, atol=1e-7)

    def test_batch_composition_does_not_matter(self, trained):
        batch = make_batch(10, seed=4)
        inf = InferenceNet(trained)
        np.testing.assert_allclose(inf.predict_batch(batch.take([3, 7]))[1], inf.predict_batch(batch)[7],
                                   rtol=1e-5, atol=1e-7)

    def test_probabilities_in_open_interval(self, trained):
        p = InferenceNet(trained).predict_batch(make_batch(50, seed=5))
        assert np.all((p > 0) & (p < 1))

    def test_non_finite_weights(self, trained):
        bad = trained.copy()
        bad.params["out.bias"][:] = np.nan
        with pytest.raises(FloatingPointError):
            InferenceNet(bad).predict_batch(make_batch(2))

    def test_golden_output(self):
        net = EngageNet(LAYOUT, small_config(seed=7))
        p = InferenceNet(net).predict_batch(make_batch(2, seed=11))
        np.testing.assert_allclose(p, GOLDEN, rtol=1e-5)


class TestModelFile:
    def test_round_trip(self, tmp_path):
        batch, y = separable(40)
        net, _ = train([(batch, y)], [], small_config(), LAYOUT)
        p = tmp_path / "m.bin"
        save_model(p, net, meta="h {}")
        back = load_model(p)
        assert back.config == net.config and back.layout == net.layout
        assert all(np.array_equal(back.params[k], net.params[k]) for k in net.params)

    def test_tamper_detected(self, tmp_path):
        p = tmp_path / "m.bin"
        save_model(p, EngageNet(LAYOUT, small_config()))
        data = bytearray(p.read_bytes())
        data[len(data) // 2] ^= 0xFF
        p.write_bytes(bytes(data))
        with pytest.raises(LogFormatError, match="checksum"):
            load_model(p)

    def test_truncated(self, tmp_path):
        p = tmp_path / "m.bin"
        save_model(p, EngageNet(LAYOUT, small_config()))
        p.write_bytes(p.read_bytes()[:500])
        with pytest.raises(LogFormatError):
            load_model(p)


# untrained seed-7 network; frozen after cross-checking against the unfolded float64 forward pass
GOLDEN = np.array([
    [0.46180895, 0.54416465, 0.47560699, 0.50796089],
    [0.45445559, 0.60882951, 0.43896103, 0.51302337],
])


class TestWorkedExamples:
    def test_zero_weights_give_one_half(self):
        net = EngageNet(LAYOUT, small_config())
        for name in net.params:
            if not name.endswith("running_var") and not name.endswith("gamma"):
                net.params[name][...] = 0
        np.testing.assert_array_equal(net.predict(make_batch(3)), 0.5)

    def test_linear_only_gradient_check(self):
        net = EngageNet(LAYOUT, small_config(hidden_layers=0))
        batch, y = separable(24, seed=5)
        assert gradient_check(net, batch, y, n_checks=300) < 1e-6

    def test_stage1_loss_monotone_by_epoch(self):
        batch, y = separable(200)
        _, logs = train([(batch, y)], [], small_config(hidden_width=32, epochs_stage1=10, lr=3e-4), LAYOUT)
        losses = [entry.mean_loss for entry in logs]
        assert all(b <= a for a, b in zip(losses, losses[1:]))

    def test_inference_repeatable(self):
        net = EngageNet(LAYOUT, small_config(seed=7))
        a = InferenceNet(net).predict_batch(make_batch(2, seed=11))
        b = InferenceNet(net).predict_batch(make_batch(2, seed=11))
        np.testing.assert_allclose(a, b, rtol=0, atol=1e-9)
