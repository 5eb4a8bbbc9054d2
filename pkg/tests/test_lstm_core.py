import mpmath
import numpy as np
import pytest
from numpy.testing import assert_allclose

from lglstm import lstm_core
from lglstm.errors import ContractError, DimensionError
from lglstm.training import Prng

from oracles import oracle_lstm, random_gate_weights


def zero_weights(d, d_in, biases=False):
    return lstm_core.zero_gate_weights(d, d_in, biases, np.float64)


class TestForward:
    @pytest.mark.parametrize("mode", lstm_core.MODES)
    def test_all_zero_case(self, mode):
        w = zero_weights(3, 4)
        cell = lstm_core.lstm_forward(np.zeros(4), np.zeros(3), w, mode)
        assert_allclose(cell.m_next, 0.0)
        assert_allclose(cell.h_next, 0.0)

    def test_zero_weights_nonzero_memory(self):
        # gates sit at sigmoid(0) = 0.5, the cell gate at tanh(0) = 0
        w = zero_weights(1, 4)
        cell = lstm_core.lstm_forward(np.zeros(4), np.array([2.0]), w, "strict_paper")
        assert_allclose(cell.m_next, [1.0], atol=1e-15)
        expected_h = float(mpmath.tanh(mpmath.mpf("0.5") * 2))
        assert_allclose(cell.h_next, [expected_h], atol=1e-15)

    def test_scalar_all_ones_case(self):
        w = lstm_core.GateWeights(*(np.ones((1, 2)) for _ in range(4)))
        h_in = np.array([1.0, 1.0])
        m_prev = np.array([1.0])
        cell = lstm_core.lstm_forward(h_in, m_prev, w, "strict_paper")
        sig2 = 1 / (1 + mpmath.exp(-2))
        assert_allclose(cell.m_next, [float(sig2 * 1 + sig2 * mpmath.tanh(2))], atol=1e-15)
        assert_allclose(cell.h_next, [float(mpmath.tanh(sig2 * 1))], atol=1e-15)
        standard = lstm_core.lstm_forward(h_in, m_prev, w, "standard")
        assert_allclose(standard.h_next,
                        [float(sig2 * mpmath.tanh(sig2 * 1 + sig2 * mpmath.tanh(2)))],
                        atol=1e-15)

    @pytest.mark.parametrize("mode", lstm_core.MODES)
    def test_matches_straight_line_oracle(self, mode):
        rng = Prng(21)
        for biases in (False, True):
            w = random_gate_weights(rng, 3, 5, biases)
            h_in = rng.uniform_array((5,), -1, 1)
            m_prev = rng.uniform_array((3,), -1, 1)
            cell = lstm_core.lstm_forward(h_in, m_prev, w, mode)
            h_ref, m_ref = oracle_lstm(h_in, m_prev, w, mode)
            assert_allclose(cell.h_next, h_ref, atol=1e-15)
            assert_allclose(cell.m_next, m_ref, atol=1e-15)

    def test_modes_share_memory_update(self):
        rng = Prng(22)
        w = random_gate_weights(rng, 4, 6, True)
        h_in = rng.uniform_array((6,), -1, 1)
        m_prev = rng.uniform_array((4,), -1, 1)
        strict = lstm_core.lstm_forward(h_in, m_prev, w, "strict_paper")
        standard = lstm_core.lstm_forward(h_in, m_prev, w, "standard")
        assert np.array_equal(strict.m_next, standard.m_next)

    def test_gate_ranges(self):
        rng = Prng(23)
        w = random_gate_weights(rng, 4, 6, True, scale=2.0)
        cell = lstm_core.lstm_forward(rng.uniform_array((6,), -2, 2),
                                      rng.uniform_array((4,), -1, 1), w)
        for g in (cell.gates.gu, cell.gates.gf, cell.gates.go):
            assert np.all((g > 0) & (g < 1))
        assert np.all((cell.gates.gc > -1) & (cell.gates.gc < 1))

    def test_shape_mismatch(self):
        w = zero_weights(3, 4)
        with pytest.raises(DimensionError):
            lstm_core.lstm_forward(np.zeros(5), np.zeros(3), w)
        with pytest.raises(DimensionError):
            lstm_core.lstm_forward(np.zeros(4), np.zeros(2), w)


def fd_grad(fn, arr, eps=1e-5):
    grad = np.zeros_like(arr)
    flat = arr.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = fn()
        flat[i] = orig - eps
        fm = fn()
        flat[i] = orig
        grad.ravel()[i] = (fp - fm) / (2 * eps)
    return grad


class TestBackward:
    @pytest.mark.parametrize("mode", lstm_core.MODES)
    def test_zero_cotangent(self, mode):
        rng = Prng(31)
        w = random_gate_weights(rng, 3, 5, True)
        cell = lstm_core.lstm_forward(rng.uniform_array((5,), -1, 1),
                                      rng.uniform_array((3,), -1, 1), w, mode)
        d_in, d_m, d_w = lstm_core.lstm_backward(cell, np.zeros(3), np.zeros(3), w, mode)
        assert_allclose(d_in, 0.0)
        assert_allclose(d_m, 0.0)
        for mat in (d_w.wu, d_w.wf, d_w.wo, d_w.wc, d_w.bu, d_w.bf, d_w.bo, d_w.bc):
            assert_allclose(mat, 0.0)

    def test_memory_cotangent_flows_through_forget_gate(self):
        w = zero_weights(3, 4)
        cell = lstm_core.lstm_forward(np.zeros(4), np.zeros(3), w, "strict_paper")
        _, d_m_prev, _ = lstm_core.lstm_backward(cell, np.zeros(3), np.ones(3), w,
                                                 "strict_paper")
        assert_allclose(d_m_prev, 0.5)

    def test_mode_mismatch_rejected(self):
        rng = Prng(32)
        w = random_gate_weights(rng, 2, 3, False)
        cell = lstm_core.lstm_forward(rng.uniform_array((3,), -1, 1),
                                      rng.uniform_array((2,), -1, 1), w, "standard")
        with pytest.raises(ContractError):
            lstm_core.lstm_backward(cell, np.zeros(2), np.zeros(2), w, "strict_paper")

    @pytest.mark.parametrize("mode", lstm_core.MODES)
    @pytest.mark.parametrize("biases", [False, True])
    def test_matches_finite_differences(self, mode, biases):
        rng = Prng(33)
        d, d_in_size = 3, 5
        w = random_gate_weights(rng, d, d_in_size, biases)
        h_in = rng.uniform_array((d_in_size,), -1, 1)
        m_prev = rng.uniform_array((d,), -1, 1)
        probe_h = rng.uniform_array((d,), -1, 1)
        probe_m = rng.uniform_array((d,), -1, 1)

        def loss():
            cell = lstm_core.lstm_forward(h_in, m_prev, w, mode)
            return float(probe_h @ cell.h_next + probe_m @ cell.m_next)

        cell = lstm_core.lstm_forward(h_in, m_prev, w, mode)
        d_in, d_m, d_w = lstm_core.lstm_backward(cell, probe_h, probe_m, w, mode)

        def check(analytic, arr):
            numeric = fd_grad(loss, arr)
            denom = max(np.abs(analytic).max(), np.abs(numeric).max(), 1e-8)
            assert np.abs(analytic - numeric).max() / denom <= 1e-6

        check(d_in, h_in)
        check(d_m, m_prev)
        check(d_w.wu, w.wu)
        check(d_w.wf, w.wf)
        check(d_w.wo, w.wo)
        check(d_w.wc, w.wc)
        if biases:
            check(d_w.bu, w.bu)
            check(d_w.bf, w.bf)
            check(d_w.bo, w.bo)
            check(d_w.bc, w.bc)

    def test_scalar_example_gradcheck(self):
        w = lstm_core.GateWeights(*(np.ones((1, 2)) for _ in range(4)))
        h_in = np.array([1.0, 1.0])
        m_prev = np.array([1.0])
        cell = lstm_core.lstm_forward(h_in, m_prev, w, "strict_paper")
        d_in, d_m, _ = lstm_core.lstm_backward(cell, np.ones(1), np.zeros(1), w,
                                               "strict_paper")

        def loss():
            return float(lstm_core.lstm_forward(h_in, m_prev, w, "strict_paper").h_next[0])

        num_in = fd_grad(loss, h_in)
        num_m = fd_grad(loss, m_prev)
        assert np.abs(d_in - num_in).max() / max(np.abs(num_in).max(), 1e-8) <= 1e-6
        assert np.abs(d_m - num_m).max() / max(np.abs(num_m).max(), 1e-8) <= 1e-6
