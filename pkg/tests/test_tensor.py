import io

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import numeric_grad
from lavernet import functional as F
from lavernet.tensor import DimensionError, Tensor, no_grad, read_record, write_record


def check_op(op, *shapes, rng, tol=1e-6, positive=False):
    """Compare backward() of ``sum(op(*inputs) * probe)`` with central differences."""
    xs = [rng.uniform(0.5, 2.0, s) if positive else rng.standard_normal(s) for s in shapes]
    ts = [Tensor(x, requires_grad=True) for x in xs]
    out = op(*ts)
    probe = rng.standard_normal(out.shape)
    F.sum(F.mul(out, Tensor(probe))).backward()
    for x, t in zip(xs, ts):
        def f():
            with no_grad():
                return float((op(*[Tensor(v) for v in xs]).data * probe).sum())
        num = numeric_grad(f, x)
        np.testing.assert_allclose(t.grad, num, rtol=tol, atol=tol)


def naive_conv(x, w, b):
    cout, cin, k, _ = w.shape
    pad = k // 2
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    _, h, wd = x.shape
    out = np.zeros((cout, h, wd))
    for o in range(cout):
        for i in range(h):
            for j in range(wd):
                out[o, i, j] = (xp[:, i:i + k, j:j + k] * w[o]).sum() + b[o]
    return out


class TestGradients:
    def test_add_broadcast(self, rng):
        check_op(F.add, (2, 3, 4), (3, 1), rng=rng)

    def test_sub_mul(self, rng):
        check_op(F.sub, (3, 4), (3, 4), rng=rng)
        check_op(F.mul, (2, 3, 4), (1, 4), rng=rng)

    def test_sqrt(self, rng):
        check_op(F.sqrt, (3, 5), rng=rng, positive=True)

    def test_sigmoid_leaky(self, rng):
        check_op(F.sigmoid, (4, 5), rng=rng)
        check_op(lambda x: F.leaky_relu(x, 0.1), (4, 5), rng=rng)

    def test_conv2d(self, rng):
        check_op(F.conv2d, (3, 5, 6), (4, 3, 3, 3), (4,), rng=rng)
        check_op(F.conv2d, (2, 3, 4, 4), (2, 3, 1, 1), (2,), rng=rng)

    def test_layer_norm(self, rng):
        check_op(lambda x, g, b: F.layer_norm_channels(x, g, b, 1e-6), (4, 3, 3), (4,), (4,), rng=rng, tol=1e-5)

    def test_softmax_matmul_transpose(self, rng):
        check_op(F.softmax_lastdim, (2, 3, 5), rng=rng)
        check_op(F.matmul_batched, (2, 3, 4), (2, 4, 5), rng=rng)
        check_op(F.transpose_last2, (2, 3, 4), rng=rng)

    def test_shuffles_and_plumbing(self, rng):
        check_op(lambda x: F.pixel_unshuffle(x, 2), (2, 4, 6), rng=rng)
        check_op(lambda x: F.pixel_shuffle(x, 2), (8, 2, 3), rng=rng)
        check_op(lambda a, b: F.concat_channels([a, b]), (2, 3, 3), (3, 3, 3), rng=rng)
        check_op(lambda a, b: F.stack([a, b]), (2, 3), (2, 3), rng=rng)
        check_op(lambda x: F.select(x, 1), (3, 2, 2), rng=rng)
        check_op(lambda x: F.reshape(x, (6, 2)), (3, 4), rng=rng)

    def test_shared_input_accumulates(self, rng):
        x = Tensor(rng.standard_normal(5), requires_grad=True)
        F.sum(F.mul(x, x)).backward()
        np.testing.assert_allclose(x.grad, 2 * x.data)


class TestForward:
    def test_conv_matches_naive_loop(self, rng):
        x, w, b = rng.standard_normal((3, 6, 7)), rng.standard_normal((5, 3, 3, 3)), rng.standard_normal(5)
        out = F.conv2d(Tensor(x), Tensor(w), Tensor(b)).data
        np.testing.assert_allclose(out, naive_conv(x, w, b), atol=1e-10)

    def test_conv_batch_matches_single(self, rng):
        x, w, b = rng.standard_normal((2, 3, 5, 5)), rng.standard_normal((4, 3, 3, 3)), rng.standard_normal(4)
        batched = F.conv2d(Tensor(x), Tensor(w), Tensor(b)).data
        for n in range(2):
            np.testing.assert_allclose(batched[n], naive_conv(x[n], w, b), atol=1e-10)

    def test_pixel_unshuffle_index_convention(self):
        x = np.arange(2 * 4 * 4, dtype=np.float64).reshape(2, 4, 4)
        y = F.pixel_unshuffle(Tensor(x), 2).data
        for c in range(2):
            for i in range(2):
                for j in range(2):
                    np.testing.assert_array_equal(y[c * 4 + i * 2 + j], x[c, i::2, j::2])

    @given(st.integers(1, 3), st.sampled_from([1, 2, 4]), st.integers(1, 3), st.integers(1, 3))
    def test_shuffle_roundtrip(self, c, r, hb, wb):
        x = np.random.default_rng(c * 100 + r).standard_normal((c, hb * r, wb * r))
        back = F.pixel_shuffle(F.pixel_unshuffle(Tensor(x), r), r).data
        np.testing.assert_array_equal(back, x)

    @given(arrays(np.float64, (3, 7), elements=st.floats(-1, 1)).map(lambda a: a * 30.0))
    def test_softmax_rows_sum_to_one(self, logits):
        y = F.softmax_lastdim(Tensor(logits)).data
        np.testing.assert_allclose(y.sum(-1), 1.0, atol=1e-6)

    def test_softmax_wide_normal_inputs(self, rng):
        y = F.softmax_lastdim(Tensor(rng.normal(0, 100, (50, 8)))).data
        assert np.all(np.isfinite(y))
        np.testing.assert_allclose(y.sum(-1), 1.0, atol=1e-6)

    def test_layer_norm_per_location(self, rng):
        x = rng.standard_normal((6, 3, 4)) * 5 + 2
        y = F.layer_norm_channels(Tensor(x), Tensor(np.ones(6)), Tensor(np.zeros(6)), 1e-6).data
        np.testing.assert_allclose(y.mean(axis=0), 0.0, atol=1e-10)
        np.testing.assert_allclose(y.var(axis=0), 1.0, rtol=1e-4)

    def test_broadcast_mismatch_names_shapes(self):
        with pytest.raises(DimensionError, match=r"\(2, 3\)"):
            F.add(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 3))))


class TestTape:
    def test_backward_on_non_scalar_raises(self):
        t = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(DimensionError):
            F.mul(t, 2.0).backward()

    def test_no_grad_records_nothing(self):
        t = Tensor(np.ones(3), requires_grad=True)
        with no_grad():
            y = F.sum(F.mul(t, t))
        assert not y.requires_grad and y._parents == ()

    def test_deep_chain_does_not_recurse(self):
        x = Tensor(np.ones(2), requires_grad=True)
        y = x
        for _ in range(5000):
            y = F.add(y, 1.0)
        F.sum(y).backward()
        np.testing.assert_array_equal(x.grad, [1.0, 1.0])

    def test_rank_limit(self):
        with pytest.raises(DimensionError):
            Tensor(np.zeros((1, 1, 1, 1, 1)))

    def test_integer_input_promotes_to_float32(self):
        assert Tensor(np.arange(3)).dtype == np.float32


class TestRecords:
    @pytest.mark.parametrize("dtype", [np.float32, np.float64])
    def test_roundtrip(self, rng, dtype):
        arr = rng.standard_normal((2, 3, 4, 5)).astype(dtype)
        buf = io.BytesIO()
        write_record(buf, arr)
        buf.seek(0)
        back = read_record(buf).data
        assert back.dtype == dtype
        np.testing.assert_array_equal(back, arr)

    def test_layout_is_little_endian(self):
        buf = io.BytesIO()
        write_record(buf, np.array([[1.0, 2.0]], dtype=np.float32))
        raw = buf.getvalue()
        assert raw[:4] == b"LVTR" and raw[4] == 0 and raw[5] == 2
        assert raw[6:14] == (1).to_bytes(4, "little") + (2).to_bytes(4, "little")
        assert raw[14:] == np.array([1.0, 2.0], dtype="<f4").tobytes()

    def test_bad_magic_and_truncation(self):
        with pytest.raises(ValueError, match="magic"):
            read_record(io.BytesIO(b"XXXX\x00\x01\x01\x00\x00\x00"))
        buf = io.BytesIO()
        write_record(buf, np.ones(4, dtype=np.float32))
        with pytest.raises(ValueError, match="truncated"):
            read_record(io.BytesIO(buf.getvalue()[:-1]))
