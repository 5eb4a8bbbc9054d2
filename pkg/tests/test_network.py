import numpy as np
import pytest
from numpy.testing import assert_allclose

from lglstm import network, numerics
from lglstm import layer as lg
from lglstm import transition as tr
from lglstm.errors import ConfigError, ContractError, DimensionError
from lglstm.training import Prng


def tiny_config(**overrides):
    base = dict(d=3, layers=2, classes=4, directions=8, use_global=True,
                h_update="standard", biases=True, stem_channels=(4,),
                precision="wide")
    base.update(overrides)
    return network.ModelConfig(**base)


def random_sample(rng, height, width, classes):
    image = rng.uniform_array((height, width, 1), 0.0, 1.0)
    labels = np.array([[rng.randint(0, classes - 1) for _ in range(width)]
                       for _ in range(height)], dtype=np.int64)
    return image, labels


class TestConfig:
    def test_validation(self):
        with pytest.raises(ConfigError):
            tiny_config(layers=0).validate()
        with pytest.raises(ConfigError):
            tiny_config(classes=1).validate()
        with pytest.raises(ConfigError):
            tiny_config(directions=5).validate()
        with pytest.raises(ConfigError):
            tiny_config(h_update="both").validate()
        with pytest.raises(ConfigError):
            tiny_config(precision="double").validate()

    def test_input_state_size(self):
        assert tiny_config(d=64, directions=8).input_state_size == (9 + 8 + 1) * 64
        assert tiny_config(d=2, directions=8, use_global=False).input_state_size == 18


class TestInit:
    def test_same_seed_is_bit_identical(self):
        cfg = tiny_config()
        a = network.init_model(cfg, 99)
        b = network.init_model(cfg, 99)
        for name, p in a.named_parameters().items():
            assert np.array_equal(p, b.named_parameters()[name]), name

    def test_lstm_weights_within_uniform_range(self):
        model = network.init_model(tiny_config(), 1)
        for name, p in model.named_parameters().items():
            if ".w" in name and "kernel" not in name:
                assert np.all(np.abs(p) <= 0.1), name
            if name.endswith((".bu", ".bf", ".bo", ".bc")):
                assert_allclose(p, 0.0)

    def test_parameter_count_closed_form(self):
        cfg = network.ModelConfig(d=4, layers=2, classes=3, directions=8,
                                  use_global=True, biases=True, stem_channels=(8, 8))
        d_in = (9 + 8 + 1) * 4
        # independent arithmetic: stem + 2 transition sets + 2 shared sets + heads
        expected = (8 * 9 * 1 + 8 * 9 * 8
                    + 2 * (4 * 4 * 8 + 4 * 4)
                    + 2 * (4 * 4 * d_in + 4 * 4)
                    + 2 * 3 * d_in)
        assert network.parameter_count(cfg) == expected
        model = network.init_model(cfg, 0)
        assert sum(p.size for p in model.named_parameters().values()) == expected

    def test_lstm_parameter_count_invariant_in_layers(self):
        one = network.parameter_count(tiny_config(layers=1))
        five = network.parameter_count(tiny_config(layers=5))
        head = tiny_config().classes * tiny_config().input_state_size
        assert five - one == 4 * head


class TestForward:
    def test_zero_weights_uniform_loss(self):
        cfg = tiny_config(classes=4, biases=False)
        model = network.init_model(cfg, 0)
        for p in model.named_parameters().values():
            p[...] = 0.0
        rng = Prng(3)
        image, labels = random_sample(rng, 5, 5, 4)
        trace = network.model_forward(model, image, labels)
        for loss in trace.losses:
            assert_allclose(loss, np.log(4.0), atol=1e-12)

    def test_logit_shapes_and_count(self):
        cfg = tiny_config(layers=3)
        model = network.init_model(cfg, 1)
        rng = Prng(4)
        image, labels = random_sample(rng, 5, 6, cfg.classes)
        trace = network.model_forward(model, image, labels)
        assert len(trace.logits) == 3
        for lg_map in trace.logits:
            assert lg_map.shape == (5, 6, cfg.classes)

    def test_deep_supervision_sum(self):
        cfg = tiny_config(layers=3)
        model = network.init_model(cfg, 2)
        rng = Prng(5)
        image, labels = random_sample(rng, 5, 5, cfg.classes)
        trace = network.model_forward(model, image, labels)
        assert abs(trace.total_loss - sum(trace.losses)) <= 1e-12

    @pytest.mark.parametrize("mode", ["strict_paper", "standard"])
    def test_compositional_oracle(self, mode):
        # script the forward out of the module-level operations and compare
        cfg = tiny_config(h_update=mode, stem_channels=(4, 4))
        model = network.init_model(cfg, 7)
        rng = Prng(8)
        for p in model.named_parameters().values():
            p[...] = rng.uniform_array(p.shape, -0.4, 0.4)
        image, labels = random_sample(rng, 4, 4, cfg.classes)
        trace = network.model_forward(model, image, labels)

        x = image
        for kern in model.stem:
            x = numerics.pointwise("relu", numerics.conv2d(x, kern))
        state, _ = tr.transition_forward(x, model.transition, cfg.directions, mode)
        for i in range(cfg.layers):
            state, _ = lg.layer_forward(state, model.lglstm, use_global=True,
                                        h_update=mode)
            cells = lg.compute_global_cells(state.h_depth)
            head_w = model.heads[i].reshape(cfg.classes, -1)
            losses = []
            for r in range(4):
                for c in range(4):
                    hi = lg.assemble_input_state(state, cells, (r, c))
                    logits = head_w @ hi
                    assert np.abs(logits - trace.logits[i][r, c]).max() <= 1e-12
                    loss, _ = numerics.softmax_xent(logits, labels[r, c])
                    losses.append(loss)
            assert abs(np.mean(losses) - trace.losses[i]) <= 1e-12

    def test_image_shape_guard(self):
        model = network.init_model(tiny_config(), 0)
        with pytest.raises(DimensionError):
            network.model_forward(model, np.zeros((5, 5, 2)))

    def test_small_image_with_global_rejected(self):
        from lglstm.errors import InputTooSmallError
        model = network.init_model(tiny_config(), 0)
        with pytest.raises(InputTooSmallError):
            network.model_forward(model, np.zeros((2, 5, 1)))


class TestBackward:
    def test_requires_losses(self):
        model = network.init_model(tiny_config(), 0)
        trace = network.model_forward(model, np.zeros((4, 4, 1)))
        with pytest.raises(ContractError):
            network.model_backward(model, trace)

    def test_zero_weight_model_gradients(self):
        cfg = tiny_config(biases=False)
        model = network.init_model(cfg, 0)
        for p in model.named_parameters().values():
            p[...] = 0.0
        rng = Prng(9)
        image, labels = random_sample(rng, 4, 4, cfg.classes)
        trace = network.model_forward(model, image, labels)
        grads = network.model_backward(model, trace)
        # hidden states are all zero, so every gradient (including the heads,
        # whose gradient is the loss-grad outer product with the zero input
        # state) vanishes
        for name, g in grads.items():
            assert_allclose(g, 0.0, err_msg=name)

    def test_head_gradient_is_loss_grad_outer_input_state(self):
        cfg = tiny_config()
        model = network.init_model(cfg, 3)
        rng = Prng(10)
        image, labels = random_sample(rng, 4, 4, cfg.classes)
        trace = network.model_forward(model, image, labels)
        grads = network.model_backward(model, trace)
        i = cfg.layers - 1  # last head: no other path touches it
        expected = np.einsum("hwc,hwd->cd", trace.loss_grads[i], trace.head_inputs[i])
        assert_allclose(grads[f"head.{i}.kernel"].reshape(cfg.classes, -1),
                        expected, atol=1e-14)

    def test_doubling_loss_weights_doubles_gradients(self):
        cfg = tiny_config()
        model = network.init_model(cfg, 4)
        rng = Prng(11)
        image, labels = random_sample(rng, 4, 4, cfg.classes)
        trace = network.model_forward(model, image, labels)
        base = network.model_backward(model, trace)
        doubled = network.model_backward(model, trace, loss_weights=[2.0] * cfg.layers)
        for name in base:
            assert_allclose(doubled[name], 2.0 * base[name], rtol=1e-12, atol=1e-15)

    def test_quick_finite_difference_spot_check(self):
        from lglstm.training import grad_check, tiny_gradcheck_config
        rep = grad_check(tiny_gradcheck_config(d=2, layers=2, stem_channels=(4,)),
                         seed=5, n_coords=60, height=5, width=5)
        assert rep.passed, rep


class TestPredict:
    def test_zero_model_ties_break_to_class_zero(self):
        cfg = tiny_config(classes=4, biases=False)
        model = network.init_model(cfg, 0)
        for p in model.named_parameters().values():
            p[...] = 0.0
        pred = network.predict(model, np.ones((4, 4, 1)) * 0.5)
        assert np.array_equal(pred, np.zeros((4, 4), dtype=np.int64))

    def test_argmax_invariance_under_per_pixel_shift(self):
        rng = Prng(12)
        logits = rng.uniform_array((5, 5, 4), -2, 2)
        shifts = rng.uniform_array((5, 5, 1), -10, 10)
        assert np.array_equal(network.argmax_labels(logits),
                              network.argmax_labels(logits + shifts))

    def test_matches_argmax_of_dumped_logits(self):
        cfg = tiny_config()
        model = network.init_model(cfg, 6)
        rng = Prng(13)
        for p in model.named_parameters().values():
            p[...] = rng.uniform_array(p.shape, -0.4, 0.4)
        image, _ = random_sample(rng, 5, 5, cfg.classes)
        trace = network.model_forward(model, image)
        pred = network.predict(model, image)
        last = trace.logits[-1]
        for r in range(5):
            for c in range(5):
                best = 0
                for cls in range(1, cfg.classes):
                    if last[r, c, cls] > last[r, c, best]:
                        best = cls
                assert pred[r, c] == best


class TestGlobalContext:
    def test_far_pixel_with_argmax_changes_output(self):
        # craft a dominant far pixel that owns a pooling argmax: perturbing it
        # must reach every position through the global cells
        cfg = tiny_config(layers=2, use_global=True)
        rng = Prng(14)
        d, k = cfg.d, cfg.directions
        weights = lg.LayerWeights(
            ws=_rand_gate(rng, d, cfg.input_state_size),
            we=_rand_gate(rng, d, cfg.input_state_size))
        from oracles import random_state
        state = random_state(rng, 8, 8, k, d)
        state.h_depth[7, 7] = 5.0  # owns its grid's maximum by a wide margin

        out_a = _run_stack(state, weights, layers=2, use_global=True)
        state.h_depth[7, 7] = 6.0
        out_b = _run_stack(state, weights, layers=2, use_global=True)
        assert np.any(out_a[0, 0] != out_b[0, 0])

    def test_no_global_far_pixel_cannot_reach(self):
        cfg = tiny_config(layers=2, use_global=False)
        rng = Prng(15)
        d, k = cfg.d, cfg.directions
        weights = lg.LayerWeights(
            ws=_rand_gate(rng, d, cfg.input_state_size),
            we=_rand_gate(rng, d, cfg.input_state_size))
        from oracles import random_state
        state = random_state(rng, 8, 8, k, d)
        out_a = _run_stack(state, weights, layers=2, use_global=False)
        state.h_depth[7, 7] += 1.0
        state.m_depth[7, 7] += 1.0
        state.m_spatial[7, 7] += 1.0
        state.h_spatial_in[7, 7] += 1.0
        out_b = _run_stack(state, weights, layers=2, use_global=False)
        # (0, 0) is Chebyshev distance 7 > L = 2 away
        assert np.array_equal(out_a[0, 0], out_b[0, 0])


def _rand_gate(rng, d, d_in):
    from oracles import random_gate_weights
    return random_gate_weights(rng, d, d_in, True)


def _run_stack(state, weights, layers, use_global):
    """Final assembled input states after a stack of layers."""
    for _ in range(layers):
        state, _ = lg.layer_forward(state, weights, use_global=use_global,
                                    h_update="standard")
    cells = lg.compute_global_cells(state.h_depth) if use_global else None
    return lg.assemble_all(state, cells)
