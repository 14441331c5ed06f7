"""Forward semantics of the tensor operations against independent oracles."""

import numpy as np
import pytest

from ahmf import tensor as T
from ahmf.tensor import ShapeError, Tensor


def brute_force_conv2d(x, w, b, stride, padding):
    """Four-nested-loop cross-correlation, written independently of the kernels."""
    n, ci, h, ww = x.shape
    co, _, kh, kw = w.shape
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (ww + 2 * padding - kw) // stride + 1
    xp = np.zeros((n, ci, h + 2 * padding, ww + 2 * padding), dtype=np.float64)
    xp[:, :, padding : padding + h, padding : padding + ww] = x
    out = np.zeros((n, co, oh, ow), dtype=np.float64)
    for i in range(n):
        for o in range(co):
            for y in range(oh):
                for xx in range(ow):
                    acc = float(b[o])
                    for c in range(ci):
                        for ky in range(kh):
                            for kx in range(kw):
                                acc += (
                                    xp[i, c, y * stride + ky, xx * stride + kx]
                                    * w[o, c, ky, kx]
                                )
                    out[i, o, y, xx] = acc
    return out


class TestConv2d:
    def test_identity_1x1(self):
        rng = np.random.default_rng(0)
        x = Tensor(rng.uniform(-1, 1, (2, 3, 4, 5)).astype(np.float32))
        w = np.zeros((3, 3, 1, 1), dtype=np.float32)
        for c in range(3):
            w[c, c, 0, 0] = 1.0
        out = T.conv2d(x, Tensor(w), Tensor(np.zeros((1, 3, 1, 1), np.float32)))
        assert np.array_equal(out.data, x.data)

    def test_zero_kernel_gives_bias(self):
        rng = np.random.default_rng(1)
        x = Tensor(rng.uniform(-1, 1, (1, 2, 4, 4)).astype(np.float32))
        w = Tensor(np.zeros((3, 2, 3, 3), np.float32))
        b = Tensor(np.array([1.5, -2.0, 0.25], np.float32).reshape(1, 3, 1, 1))
        out = T.conv2d(x, w, b, padding=1)
        for c, v in enumerate([1.5, -2.0, 0.25]):
            assert np.all(out.data[:, c] == np.float32(v))

    def test_matches_brute_force_fixed_case(self):
        rng = np.random.default_rng(2)
        x = rng.uniform(-1, 1, (1, 2, 4, 4)).astype(np.float32)
        w = rng.uniform(-1, 1, (3, 2, 3, 3)).astype(np.float32)
        b = rng.uniform(-1, 1, 3).astype(np.float32)
        got = T.conv2d(
            Tensor(x), Tensor(w), Tensor(b.reshape(1, 3, 1, 1)), padding=1
        )
        want = brute_force_conv2d(x, w, b, 1, 1)
        np.testing.assert_allclose(got.data, want, atol=1e-5)

    @pytest.mark.parametrize("seed", range(20))
    def test_matches_brute_force_random_dims(self, seed):
        rng = np.random.default_rng(seed)
        n, ci, co = rng.integers(1, 4, 3)
        k = int(rng.choice([1, 3, 5]))
        h = int(rng.integers(k, 9))
        ww = int(rng.integers(k, 9))
        stride = int(rng.integers(1, 3))
        padding = int(rng.integers(0, k // 2 + 1))
        x = rng.uniform(-1, 1, (n, ci, h, ww)).astype(np.float32)
        w = rng.uniform(-1, 1, (co, ci, k, k)).astype(np.float32)
        b = rng.uniform(-1, 1, co).astype(np.float32)
        got = T.conv2d(
            Tensor(x), Tensor(w), Tensor(b.reshape(1, co, 1, 1)), stride, padding
        )
        want = brute_force_conv2d(x, w, b, stride, padding)
        assert got.shape == want.shape
        np.testing.assert_allclose(got.data, want, atol=1e-5)

    def test_output_shape_formula(self):
        x = Tensor(np.zeros((1, 1, 10, 7), np.float32))
        w = Tensor(np.zeros((2, 1, 3, 3), np.float32))
        b = Tensor(np.zeros((1, 2, 1, 1), np.float32))
        out = T.conv2d(x, w, b, stride=2, padding=1)
        assert out.shape == (1, 2, 5, 4)

    def test_rejects_channel_mismatch(self):
        x = Tensor(np.zeros((1, 2, 4, 4), np.float32))
        w = Tensor(np.zeros((3, 5, 3, 3), np.float32))
        b = Tensor(np.zeros((1, 3, 1, 1), np.float32))
        with pytest.raises(ValueError, match="channel"):
            T.conv2d(x, w, b, padding=1)

    def test_rejects_even_kernel(self):
        x = Tensor(np.zeros((1, 2, 4, 4), np.float32))
        w = Tensor(np.zeros((3, 2, 2, 2), np.float32))
        b = Tensor(np.zeros((1, 3, 1, 1), np.float32))
        with pytest.raises(ValueError, match="odd"):
            T.conv2d(x, w, b)


class TestPixelShuffle:
    def test_r1_identity(self):
        x = Tensor(np.random.default_rng(0).uniform(size=(2, 3, 4, 5)))
        assert np.array_equal(T.pixel_shuffle(x, 1).data, x.data)
        assert np.array_equal(T.inverse_pixel_shuffle(x, 1).data, x.data)

    def test_index_map_oracle(self):
        x = Tensor(np.array([1, 2, 3, 4], np.float32).reshape(1, 4, 1, 1))
        out = T.pixel_shuffle(x, 2)
        assert out.shape == (1, 1, 2, 2)
        np.testing.assert_array_equal(out.data[0, 0], [[1, 2], [3, 4]])

    def test_inverse_index_map_oracle(self):
        x = Tensor(np.array([[1, 2], [3, 4]], np.float32).reshape(1, 1, 2, 2))
        out = T.inverse_pixel_shuffle(x, 2)
        assert out.shape == (1, 4, 1, 1)
        np.testing.assert_array_equal(out.data.reshape(4), [1, 2, 3, 4])

    def test_full_layout_contract(self):
        rng = np.random.default_rng(3)
        r = 2
        x = rng.uniform(size=(2, 8, 3, 4)).astype(np.float32)
        out = T.pixel_shuffle(Tensor(x), r).data
        for n in range(2):
            for c in range(2):
                for h in range(3):
                    for w in range(4):
                        for dy in range(r):
                            for dx in range(r):
                                assert (
                                    out[n, c, r * h + dy, r * w + dx]
                                    == x[n, c * r * r + dy * r + dx, h, w]
                                )

    @pytest.mark.parametrize("r", [1, 2, 4])
    def test_round_trip_bit_exact(self, r):
        rng = np.random.default_rng(r)
        x = Tensor(rng.uniform(size=(2, 4 * r * r, 3, 5)).astype(np.float32))
        back = T.inverse_pixel_shuffle(T.pixel_shuffle(x, r), r)
        assert np.array_equal(back.data, x.data)
        y = Tensor(rng.uniform(size=(2, 3, 4 * r, 5 * r)).astype(np.float32))
        forth = T.pixel_shuffle(T.inverse_pixel_shuffle(y, r), r)
        assert np.array_equal(forth.data, y.data)

    def test_rejects_bad_channels(self):
        x = Tensor(np.zeros((1, 6, 2, 2), np.float32))
        with pytest.raises(ShapeError, match="divisible"):
            T.pixel_shuffle(x, 2)

    def test_rejects_bad_spatial(self):
        x = Tensor(np.zeros((1, 1, 3, 4), np.float32))
        with pytest.raises(ShapeError, match="divisible"):
            T.inverse_pixel_shuffle(x, 2)


class TestPooling:
    def test_avg_constant(self):
        x = Tensor(np.full((2, 3, 4, 5), 2.5, np.float32))
        out = T.global_avg_pool(x)
        assert out.shape == (2, 3, 1, 1)
        np.testing.assert_allclose(out.data, 2.5)

    def test_avg_direct_summation_oracle(self):
        x = Tensor(np.array([1, 2, 3, 4], np.float32).reshape(1, 1, 2, 2))
        assert T.global_avg_pool(x).item() == pytest.approx(2.5)

    def test_avg_concat_symmetry(self):
        rng = np.random.default_rng(4)
        x = rng.uniform(size=(1, 2, 3, 4)).astype(np.float32)
        doubled = np.concatenate([x, x], axis=3)
        a = T.global_avg_pool(Tensor(x)).data
        b = T.global_avg_pool(Tensor(doubled)).data
        np.testing.assert_allclose(a, b, atol=1e-7)

    def test_var_constant_is_zero(self):
        x = Tensor(np.full((1, 2, 3, 3), 7.0, np.float32))
        np.testing.assert_allclose(T.global_var_pool(x).data, 0.0)

    def test_var_two_pass_oracle(self):
        x = Tensor(np.array([1, 2, 3, 4], np.float32).reshape(1, 1, 2, 2))
        assert T.global_var_pool(x).item() == pytest.approx(1.25)

    @pytest.mark.parametrize("seed", range(10))
    def test_affine_laws(self, seed):
        rng = np.random.default_rng(seed)
        x = rng.uniform(-2, 2, (2, 3, 4, 5)).astype(np.float64)
        a, b = float(rng.uniform(0.5, 2)), float(rng.uniform(-1, 1))
        ax = Tensor(a * x + b)
        avg = T.global_avg_pool(Tensor(x)).data
        var = T.global_var_pool(Tensor(x)).data
        np.testing.assert_allclose(T.global_avg_pool(ax).data, a * avg + b, atol=1e-12)
        np.testing.assert_allclose(T.global_var_pool(ax).data, a * a * var, atol=1e-12)

    def test_var_shift_invariance(self):
        rng = np.random.default_rng(5)
        x = rng.uniform(size=(1, 2, 4, 4)).astype(np.float64)
        v1 = T.global_var_pool(Tensor(x)).data
        v2 = T.global_var_pool(Tensor(x + 3.0)).data
        np.testing.assert_allclose(v1, v2, atol=1e-12)


class TestElementwise:
    def test_sigmoid_zero(self):
        x = Tensor(np.zeros((1, 1, 1, 1), np.float32))
        assert T.sigmoid(x).item() == pytest.approx(0.5)

    def test_sigmoid_extremes_stay_finite(self):
        x = Tensor(np.array([-40.0, 40.0], np.float32).reshape(1, 1, 1, 2))
        out = T.sigmoid(x).data
        assert np.isfinite(out).all()
        assert 0.0 <= out.min() and out.max() <= 1.0

    def test_prelu_formula(self):
        x = Tensor(np.array([-2.0, 3.0], np.float32).reshape(1, 1, 1, 2))
        a = Tensor(np.full((1, 1, 1, 1), 0.25, np.float32))
        np.testing.assert_allclose(T.prelu(x, a).data.reshape(2), [-0.5, 3.0])

    def test_concat_index_oracle(self):
        rng = np.random.default_rng(6)
        x = rng.uniform(size=(2, 3, 2, 2)).astype(np.float32)
        y = rng.uniform(size=(2, 2, 2, 2)).astype(np.float32)
        out = T.concat_channels([Tensor(x), Tensor(y)]).data
        assert np.array_equal(out[:, :3], x)
        assert np.array_equal(out[:, 3:], y)

    def test_concat_rejects_spatial_mismatch(self):
        x = Tensor(np.zeros((1, 1, 2, 2), np.float32))
        y = Tensor(np.zeros((1, 1, 3, 2), np.float32))
        with pytest.raises(ShapeError):
            T.concat_channels([x, y])

    def test_broadcast_add_and_mul(self):
        rng = np.random.default_rng(7)
        big = rng.uniform(size=(2, 3, 4, 5)).astype(np.float32)
        small = rng.uniform(size=(2, 3, 1, 1)).astype(np.float32)
        np.testing.assert_allclose(
            T.add(Tensor(big), Tensor(small)).data, big + small
        )
        np.testing.assert_allclose(
            T.mul(Tensor(small), Tensor(big)).data, big * small
        )

    def test_broadcast_rejects_other_shapes(self):
        x = Tensor(np.zeros((2, 3, 4, 5), np.float32))
        y = Tensor(np.zeros((2, 3, 4, 1), np.float32))
        with pytest.raises(ShapeError):
            T.add(x, y)

    def test_scale_and_offset(self):
        x = Tensor(np.array([1.0, -2.0], np.float32).reshape(1, 1, 1, 2))
        np.testing.assert_allclose(T.scale(x, -0.5).data.reshape(2), [-0.5, 1.0])
        np.testing.assert_allclose(T.offset(x, 1.0).data.reshape(2), [2.0, -1.0])

    def test_tensor_requires_4d(self):
        with pytest.raises(ShapeError):
            Tensor(np.zeros((3, 3)))


class TestPurity:
    @pytest.mark.parametrize("seed", range(5))
    def test_forward_ops_bit_identical(self, seed):
        rng = np.random.default_rng(seed)
        x = Tensor(rng.uniform(-1, 1, (2, 4, 6, 6)).astype(np.float32))
        w = Tensor(rng.uniform(-1, 1, (4, 4, 3, 3)).astype(np.float32))
        b = Tensor(rng.uniform(-1, 1, (1, 4, 1, 1)).astype(np.float32))
        s = Tensor(np.full((1, 1, 1, 1), 0.25, np.float32))

        def run():
            out = T.conv2d(x, w, b, padding=1)
            out = T.prelu(out, s)
            out = T.pixel_shuffle(out, 2)
            out = T.sigmoid(out)
            return T.mean_all(out).data.copy()

        first = run()
        x_before = x.data.copy()
        second = run()
        assert np.array_equal(first, second)
        assert np.array_equal(x.data, x_before)
