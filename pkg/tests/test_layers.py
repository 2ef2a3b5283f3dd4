import numpy as np
import pytest

from traitgrade import layers as L
from traitgrade.tensor import ShapeError, Tensor, matmul, mean, mul, parameter, vsum

from gradcheck import assert_grads_match


def _attn_params(rng, r, scale=0.5):
    w = parameter(rng.standard_normal((r, r)) * scale)
    b = parameter(rng.standard_normal(r) * 0.1)
    v = parameter(rng.standard_normal(r) * scale)
    return w, b, v


def _lstm_params(rng, D, H, scale=0.4):
    wx = parameter(rng.standard_normal((D, 4 * H)) * scale)
    wh = parameter(rng.standard_normal((H, 4 * H)) * scale)
    b = parameter(rng.standard_normal(4 * H) * 0.1)
    return wx, wh, b


class TestEmbed:
    def test_repeated_ids_give_identical_rows(self):
        table = parameter(np.random.default_rng(0).standard_normal((5, 3)))
        out = L.embed([0, 0], table)
        np.testing.assert_array_equal(out.data[0], out.data[1])

    def test_one_hot_table_recovers_one_hots(self):
        table = parameter(np.eye(4))
        out = L.embed([2, 0, 3], table)
        np.testing.assert_array_equal(out.data, np.eye(4)[[2, 0, 3]])

    def test_out_of_range_id(self):
        table = parameter(np.zeros((3, 2)))
        with pytest.raises(IndexError, match="3"):
            L.embed([0, 3], table)
        with pytest.raises(IndexError):
            L.embed([-1], table)

    def test_grad_counts_row_usage(self):
        table = parameter(np.random.default_rng(1).standard_normal((6, 4)))
        ids = [2, 5, 2, 2, 1]
        vsum(L.embed(ids, table)).backward()
        counts = np.bincount(ids, minlength=6)
        for k in range(6):
            np.testing.assert_allclose(table.grad[k], counts[k] * np.ones(4))
        assert_grads_match(lambda: vsum(mul(L.embed(ids, table), L.embed(ids, table))),
                           {"table": table})

    def test_pinned_pad_row_gets_no_grad(self):
        table = parameter(np.random.default_rng(2).standard_normal((4, 3)))
        vsum(L.embed([0, 1, 0], table, pad_id=0)).backward()
        assert np.all(table.grad[0] == 0)
        np.testing.assert_allclose(table.grad[1], np.ones(3))


class TestConv1d:
    def test_zero_kernel_yields_bias_rows(self):
        rng = np.random.default_rng(3)
        x = Tensor(rng.standard_normal((4, 2)))
        out = L.conv1d(x, parameter(np.zeros((10, 3))),
                       parameter(np.array([1.0, 2.0, 3.0])), 5)
        np.testing.assert_allclose(out.data, np.tile([1.0, 2.0, 3.0], (4, 1)))

    def test_hand_convolution(self):
        x = Tensor(np.ones((5, 2)))
        out = L.conv1d(x, parameter(np.ones((10, 1))), parameter(np.zeros(1)), 5)
        np.testing.assert_allclose(out.data[:, 0], [6, 8, 10, 8, 6])

    def test_kernel_shape_mismatch(self):
        with pytest.raises(ShapeError):
            L.conv1d(Tensor(np.ones((4, 3))), parameter(np.ones((10, 1))),
                     parameter(np.zeros(1)), 5)

    def test_gradcheck(self):
        rng = np.random.default_rng(4)
        x = parameter(rng.standard_normal((6, 3)))
        w = parameter(rng.standard_normal((15, 4)) * 0.5)
        b = parameter(rng.standard_normal(4) * 0.2)
        assert_grads_match(
            lambda: mean(mul(L.conv1d(x, w, b, 5), L.conv1d(x, w, b, 5))),
            {"x": x, "w": w, "b": b})

    def test_linearity_with_zero_bias(self):
        rng = np.random.default_rng(5)
        w = parameter(rng.standard_normal((15, 4)))
        b0 = parameter(np.zeros(4))
        x = rng.standard_normal((7, 3))
        y = rng.standard_normal((7, 3))
        a, c = 2.5, -1.25
        lhs = L.conv1d(Tensor(a * x + c * y), w, b0, 5).data
        rhs = (a * L.conv1d(Tensor(x), w, b0, 5).data
               + c * L.conv1d(Tensor(y), w, b0, 5).data)
        np.testing.assert_allclose(lhs, rhs, atol=1e-12)


class TestAttentionPool:
    def test_single_row_passthrough(self):
        rng = np.random.default_rng(6)
        h = Tensor(rng.standard_normal((1, 4)))
        out = L.attention_pool(h, *_attn_params(rng, 4))
        np.testing.assert_allclose(out.data, h.data[0], atol=1e-15)

    def test_identical_rows_passthrough(self):
        rng = np.random.default_rng(7)
        row = rng.standard_normal(4)
        h = Tensor(np.tile(row, (5, 1)))
        out = L.attention_pool(h, *_attn_params(rng, 4))
        np.testing.assert_allclose(out.data, row, atol=1e-12)

    def test_output_is_convex_combination(self):
        # weights from any parameters are a probability vector over rows
        rng = np.random.default_rng(8)
        for _ in range(20):
            n = int(rng.integers(1, 8))
            h = Tensor(rng.standard_normal((n, 3)) * 5)
            w, b, v = _attn_params(rng, 3, scale=2.0)
            from traitgrade.tensor import add_bias, softmax, tanh
            scores = matmul(tanh(add_bias(matmul(h, w), b)), v)
            a = softmax(scores).data
            assert (a >= 0).all() and abs(a.sum() - 1) < 1e-12
            out = L.attention_pool(h, w, b, v)
            np.testing.assert_allclose(out.data, a @ h.data, atol=1e-12)

    def test_block_parameter_count(self):
        rng = np.random.default_rng(9)
        w, b, v = _attn_params(rng, 100)
        assert w.data.size + b.data.size + v.data.size == 10_200

    def test_empty_input_rejected(self):
        rng = np.random.default_rng(10)
        w, b, v = _attn_params(rng, 3)
        with pytest.raises(Exception):
            L.attention_pool(Tensor(np.zeros((0, 3))), w, b, v)

    def test_all_masked_rows_give_zero_vector(self):
        rng = np.random.default_rng(11)
        h = Tensor(rng.standard_normal((3, 4)))
        out = L.attention_pool(h, *_attn_params(rng, 4), mask=np.zeros(3, dtype=bool))
        np.testing.assert_array_equal(out.data, np.zeros(4))

    def test_masked_equals_sliced(self):
        rng = np.random.default_rng(12)
        params = _attn_params(rng, 4)
        rows = rng.standard_normal((6, 4))
        mask = np.array([1, 1, 1, 1, 0, 0], dtype=bool)
        full = L.attention_pool(Tensor(rows), *params, mask=mask)
        sliced = L.attention_pool(Tensor(rows[:4]), *params)
        np.testing.assert_allclose(full.data, sliced.data, atol=1e-14)

    def test_gradcheck(self):
        rng = np.random.default_rng(13)
        h = parameter(rng.standard_normal((5, 3)))
        w, b, v = _attn_params(rng, 3)
        assert_grads_match(
            lambda: mean(mul(L.attention_pool(h, w, b, v),
                             L.attention_pool(h, w, b, v))),
            {"h": h, "w": w, "b": b, "v": v})


class TestLSTMLayers:
    def test_zero_params_collapse_to_zero(self):
        x = Tensor(np.random.default_rng(14).standard_normal((5, 3)))
        out = L.lstm_layer(x, parameter(np.zeros((3, 8))),
                           parameter(np.zeros((2, 8))), parameter(np.zeros(8)))
        assert np.all(out.data == 0)

    def test_empty_sequence_rejected(self):
        with pytest.raises(ValueError):
            L.lstm_layer(Tensor(np.zeros((0, 3))), parameter(np.zeros((3, 8))),
                         parameter(np.zeros((2, 8))), parameter(np.zeros(8)))

    def test_gradcheck_three_steps(self):
        rng = np.random.default_rng(15)
        x = parameter(rng.standard_normal((3, 4)))
        wx, wh, b = _lstm_params(rng, 4, 3)
        assert_grads_match(
            lambda: mean(mul(L.lstm_layer(x, wx, wh, b), L.lstm_layer(x, wx, wh, b))),
            {"x": x, "wx": wx, "wh": wh, "b": b})

    def test_gradcheck_reverse_and_masked(self):
        rng = np.random.default_rng(16)
        x = parameter(rng.standard_normal((5, 3)))
        wx, wh, b = _lstm_params(rng, 3, 4)
        mask = np.array([1, 1, 0, 1, 0], dtype=bool)
        assert_grads_match(
            lambda: mean(L.lstm_layer(x, wx, wh, b, mask=mask, reverse=True)),
            {"x": x, "wx": wx, "wh": wh, "b": b})

    def test_bilstm_concat_and_reverse_zeroed(self):
        rng = np.random.default_rng(17)
        x = Tensor(rng.standard_normal((4, 3)))
        fwd = _lstm_params(rng, 3, 5)
        zeros = (parameter(np.zeros((3, 20))), parameter(np.zeros((5, 20))),
                 parameter(np.zeros(20)))
        out = L.bilstm_layer(x, fwd, zeros)
        assert out.data.shape == (4, 10)
        ref = L.lstm_layer(x, *fwd)
        np.testing.assert_allclose(out.data[:, :5], ref.data, atol=1e-15)
        np.testing.assert_array_equal(out.data[:, 5:], 0)

    def test_bilstm_gradcheck(self):
        rng = np.random.default_rng(18)
        x = parameter(rng.standard_normal((3, 3)))
        fwd = _lstm_params(rng, 3, 2)
        bwd = _lstm_params(rng, 3, 2)
        params = {"x": x, "fwx": fwd[0], "fwh": fwd[1], "fb": fwd[2],
                  "bwx": bwd[0], "bwh": bwd[1], "bb": bwd[2]}
        assert_grads_match(
            lambda: mean(mul(L.bilstm_layer(x, fwd, bwd), L.bilstm_layer(x, fwd, bwd))),
            params)


class TestHeadAndLoss:
    def test_zero_head_outputs_half(self):
        x = Tensor(np.random.default_rng(19).standard_normal(6))
        out = L.dense_sigmoid(x, parameter(np.zeros(6)), parameter(np.zeros(())))
        assert out.data == pytest.approx(0.5)

    def test_output_strictly_inside_unit_interval(self):
        # float64 rounds sigmoid to exactly 1.0 once the logit passes ~36.7,
        # so the strict interval is checked at representable magnitudes
        rng = np.random.default_rng(20)
        for _ in range(50):
            x = Tensor(rng.standard_normal(4) * 1.5)
            w = parameter(rng.standard_normal(4) * 1.5)
            b = parameter(rng.standard_normal(()))
            y = float(L.dense_sigmoid(x, w, b).data)
            assert 0.0 < y < 1.0

    def test_head_gradcheck(self):
        rng = np.random.default_rng(21)
        x = parameter(rng.standard_normal(5))
        w = parameter(rng.standard_normal(5))
        b = parameter(rng.standard_normal(()))
        assert_grads_match(lambda: L.dense_sigmoid(x, w, b), {"x": x, "w": w, "b": b})

    def test_mse_examples(self):
        same = Tensor([0.2, 0.8])
        assert L.mse_loss(same, same).data == 0.0
        out = L.mse_loss(Tensor([1.0, 0.0]), Tensor([0.0, 0.0]))
        assert out.data == pytest.approx(0.5)

    def test_mse_length_mismatch(self):
        with pytest.raises(ValueError):
            L.mse_loss(Tensor([1.0]), Tensor([1.0, 2.0]))

    def test_mse_gradient_formula(self):
        rng = np.random.default_rng(22)
        pred = parameter(rng.random(4))
        gold = Tensor(rng.random(4))
        assert_grads_match(lambda: L.mse_loss(pred, gold), {"pred": pred})
        np.testing.assert_allclose(pred.grad, 2 * (pred.data - gold.data) / 4,
                                   atol=1e-12)


class TestDropout:
    def test_eval_mode_is_identity_object(self):
        x = Tensor(np.ones((3, 3)))
        assert L.dropout(x, 0.5, np.random.default_rng(0), train=False) is x

    def test_rate_zero_is_identity(self):
        x = Tensor(np.ones(5))
        assert L.dropout(x, 0.0, np.random.default_rng(0), train=True) is x

    def test_invalid_rate(self):
        with pytest.raises(ValueError):
            L.dropout(Tensor(np.ones(2)), 1.0, np.random.default_rng(0), True)

    def test_monte_carlo_zero_fraction_and_mean(self):
        rng = np.random.default_rng(23)
        x = Tensor(np.full(1_000_000, 2.0))
        out = L.dropout(x, 0.5, rng, train=True).data
        zero_frac = float((out == 0).mean())
        assert 0.498 <= zero_frac <= 0.502
        assert abs(out.mean() - 2.0) / 2.0 <= 0.01

    def test_backward_uses_same_mask(self):
        rng = np.random.default_rng(24)
        x = parameter(np.ones(1000))
        out = L.dropout(x, 0.5, rng, train=True)
        vsum(out).backward()
        np.testing.assert_allclose(x.grad, out.data)


def test_glove_reader(tmp_path):
    p = tmp_path / "glove.txt"
    p.write_text("the 0.1 0.2 0.3\nhello -1 0 2.5\n")
    vecs = L.load_glove(p, 3)
    assert set(vecs) == {"the", "hello"}
    np.testing.assert_allclose(vecs["hello"], [-1.0, 0.0, 2.5])
    with pytest.raises(ValueError, match="dimensions"):
        L.load_glove(p, 50)
