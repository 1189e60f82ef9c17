"""Dense conv, seeded sampling, and the binary I/O formats."""

import numpy as np
import pytest

from helpers import conv2d_oracle

import moirequant as mq
from moirequant.tensorio import (BadMagicError, ImageFormatError,
                                 TensorFormatError, TruncatedFileError,
                                 tensor_to_bytes)


class TestConv2d:
    def test_identity_shaped_kernel(self):
        x = np.ones((1, 1, 3, 3), np.float32)
        w = np.array([[[[2.0]]]], np.float32)
        assert np.array_equal(mq.conv2d(x, w), np.full((1, 1, 3, 3), 2.0, np.float32))

    def test_impulse_reproduces_kernel(self):
        x = np.zeros((1, 1, 9, 9), np.float32)
        x[0, 0, 4, 4] = 1.0
        out = mq.conv2d(x, mq.LOWPASS_KERNEL[None, None], pad=mq.PadMode.ZERO)
        expect = np.zeros((9, 9), np.float32)
        expect[3:6, 3:6] = mq.LOWPASS_KERNEL
        assert np.array_equal(out[0, 0], expect)

    def test_matches_oracle_dilated_replicate(self):
        rng = np.random.default_rng(7)
        x = rng.normal(size=(1, 2, 5, 5)).astype(np.float32)
        w = rng.normal(size=(3, 2, 3, 3)).astype(np.float32)
        got = mq.conv2d(x, w, dilation=2, pad=mq.PadMode.REPLICATE)
        ref = conv2d_oracle(x, w, dilation=2, pad="replicate")
        assert np.array_equal(got, ref)

    @pytest.mark.parametrize("shape,wshape,stride,dilation,pad", [
        ((1, 1, 4, 4), (2, 1, 3, 3), 1, 1, "zero"),
        ((2, 3, 6, 5), (4, 3, 3, 3), 1, 1, "replicate"),
        ((1, 2, 8, 8), (3, 2, 3, 3), 2, 1, "zero"),
        ((1, 2, 7, 7), (2, 2, 3, 3), 1, 2, "zero"),
        ((1, 4, 6, 6), (1, 4, 1, 1), 1, 1, "zero"),
        ((1, 1, 9, 9), (1, 1, 3, 3), 1, 4, "replicate"),
    ])
    def test_matches_oracle_bitexact(self, shape, wshape, stride, dilation, pad):
        rng = np.random.default_rng(hash((shape, wshape, stride, dilation)) % 2**32)
        x = rng.normal(size=shape).astype(np.float32)
        w = rng.normal(size=wshape).astype(np.float32)
        b = rng.normal(size=wshape[0]).astype(np.float32)
        mode = mq.PadMode.ZERO if pad == "zero" else mq.PadMode.REPLICATE
        got = mq.conv2d(x, w, b, stride=stride, dilation=dilation, pad=mode)
        ref = conv2d_oracle(x, w, b, stride=stride, dilation=dilation, pad=pad)
        assert np.array_equal(got, ref)

    def test_linearity(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(1, 3, 8, 8)).astype(np.float32)
        y = rng.normal(size=(1, 3, 8, 8)).astype(np.float32)
        w = rng.normal(size=(2, 3, 3, 3)).astype(np.float32)
        lhs = mq.conv2d((2.5 * x + 0.5 * y).astype(np.float32), w)
        rhs = 2.5 * mq.conv2d(x, w) + 0.5 * mq.conv2d(y, w)
        assert np.allclose(lhs, rhs, rtol=1e-5, atol=1e-6)

    def test_zero_input_gives_bias(self):
        b = np.float32([1.5, -2.0])
        out = mq.conv2d(np.zeros((1, 1, 4, 4), np.float32),
                        np.ones((2, 1, 3, 3), np.float32), b)
        assert np.array_equal(out, np.broadcast_to(b[None, :, None, None], (1, 2, 4, 4)))

    def test_errors(self):
        x = np.zeros((1, 2, 4, 4), np.float32)
        w = np.zeros((1, 3, 3, 3), np.float32)
        with pytest.raises(ValueError):
            mq.conv2d(x, w)  # channel mismatch
        with pytest.raises(ValueError):
            mq.conv2d(x, np.zeros((1, 2, 2, 2), np.float32))  # even kernel
        with pytest.raises(ValueError):
            mq.conv2d(x, np.zeros((1, 2, 3, 3), np.float32), dilation=0)
        bad = x.copy()
        bad[0, 0, 0, 0] = np.nan
        with pytest.raises(ValueError):
            mq.conv2d(bad, np.zeros((1, 2, 3, 3), np.float32))

    def test_grad_input_is_adjoint(self):
        # <conv(x), u> == <x, grad_input(u)> for a linear map, both pad modes
        rng = np.random.default_rng(11)
        for pad in (mq.PadMode.ZERO, mq.PadMode.REPLICATE):
            x = rng.normal(size=(1, 2, 6, 6)).astype(np.float32)
            w = rng.normal(size=(3, 2, 3, 3)).astype(np.float32)
            u = rng.normal(size=(1, 3, 6, 6)).astype(np.float32)
            lhs = float(np.sum(mq.conv2d(x, w, pad=pad).astype(np.float64) * u))
            gx = mq.conv2d_grad_input(u, w, (6, 6), pad=pad)
            rhs = float(np.sum(x.astype(np.float64) * gx))
            assert abs(lhs - rhs) < 1e-4 * max(1.0, abs(lhs))


class TestSampleIndices:
    def test_full_sample(self):
        rng = mq.Xoshiro256(0)
        assert list(mq.sample_indices(rng, 4, 1.0)) == [0, 1, 2, 3]

    def test_minimum_one(self):
        rng = mq.Xoshiro256(0)
        idx = mq.sample_indices(rng, 1000, 0.001)
        assert idx.shape == (1,) and 0 <= idx[0] < 1000

    def test_count_and_distinct(self):
        rng = mq.Xoshiro256(5)
        for n, gamma in [(100, 0.1), (57, 0.33), (1000, 0.75), (8, 0.5)]:
            idx = mq.sample_indices(rng, n, gamma)
            assert len(set(idx.tolist())) == len(idx) == max(1, round(gamma * n))
            assert idx.min() >= 0 and idx.max() < n

    def test_deterministic_and_covers_all_subsets(self):
        one = mq.sample_indices(mq.Xoshiro256(9), 4, 0.5)
        two = mq.sample_indices(mq.Xoshiro256(9), 4, 0.5)
        assert np.array_equal(one, two)
        seen = set()
        for seed in range(200):
            seen.add(tuple(mq.sample_indices(mq.Xoshiro256(seed), 4, 0.5)))
        assert seen == {(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)}

    def test_gamma_bounds(self):
        rng = mq.Xoshiro256(0)
        with pytest.raises(ValueError):
            mq.sample_indices(rng, 4, 0.0)
        with pytest.raises(ValueError):
            mq.sample_indices(rng, 4, 1.1)


class TestRng:
    def test_streams_reproducible(self):
        a = mq.Xoshiro256(123)
        b = mq.Xoshiro256(123)
        assert [a.next_u64() for _ in range(16)] == [b.next_u64() for _ in range(16)]
        assert mq.Xoshiro256(124).next_u64() != mq.Xoshiro256(123).next_u64()

    def test_compiled_stream_matches_python(self):
        from moirequant import _kernels
        state = np.array(mq.Xoshiro256(77).state_words(), dtype=np.uint64)
        out = np.empty(64, dtype=np.uint64)
        _kernels.xoshiro_fill(state, out)
        ref = mq.Xoshiro256(77)
        assert out.tolist() == [ref.next_u64() for _ in range(64)]

    def test_splitmix_distinct(self):
        outs = {mq.splitmix64(42, k) for k in range(1000)}
        assert len(outs) == 1000

    def test_random_in_unit_interval(self):
        r = mq.Xoshiro256(1)
        vals = [r.random() for _ in range(100)]
        assert all(0.0 <= v < 1.0 for v in vals)


class TestTensorFile:
    def test_roundtrip_f32_with_subnormals(self, tmp_path):
        rng = np.random.default_rng(0)
        t = rng.normal(size=(2, 3)).astype(np.float32)
        t[0, 0] = np.float32(1e-42)  # subnormal
        t[0, 1] = -np.float32(0.0)
        p = tmp_path / "t.qdt"
        mq.write_tensor(t, p)
        back = mq.read_tensor(p)
        assert back.dtype == np.float32
        assert np.array_equal(t.view(np.uint32), back.view(np.uint32))

    @pytest.mark.parametrize("dtype", [np.float16, np.int32, np.uint8])
    def test_roundtrip_other_dtypes(self, tmp_path, dtype):
        rng = np.random.default_rng(1)
        t = (rng.integers(0, 200, size=(4, 1, 5))).astype(dtype)
        p = tmp_path / "t.qdt"
        mq.write_tensor(t, p)
        back = mq.read_tensor(p)
        assert back.dtype == np.dtype(dtype) and np.array_equal(t, back)

    def test_scalar_rejected(self, tmp_path):
        with pytest.raises(TensorFormatError):
            mq.write_tensor(np.float32(3.0), tmp_path / "s.qdt")

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "x.qdt"
        good = tensor_to_bytes(np.zeros(3, np.float32))
        p.write_bytes(b"XXXX" + good[4:])
        with pytest.raises(BadMagicError):
            mq.read_tensor(p)

    def test_truncated(self, tmp_path):
        p = tmp_path / "x.qdt"
        good = tensor_to_bytes(np.zeros(5, np.float32))
        p.write_bytes(good[:-3])
        with pytest.raises(TruncatedFileError):
            mq.read_tensor(p)

    def test_trailing_bytes(self, tmp_path):
        p = tmp_path / "x.qdt"
        p.write_bytes(tensor_to_bytes(np.zeros(5, np.float32)) + b"zz")
        with pytest.raises(TensorFormatError):
            mq.read_tensor(p)

    def test_dims_overflow(self, tmp_path):
        import struct
        p = tmp_path / "x.qdt"
        header = struct.pack("<4sBBH", b"QDT1", 0, 4, 0)
        dims = struct.pack("<4I", 0xFFFFFF, 0xFFFFFF, 0xFFFFFF, 4)
        p.write_bytes(header + dims)
        with pytest.raises(TensorFormatError):
            mq.read_tensor(p)


class TestPpm:
    def test_zero_and_full_scale(self, tmp_path):
        p = tmp_path / "img.ppm"
        p.write_bytes(b"P6\n2 1\n255\n" + bytes([0, 0, 0, 255, 255, 255]))
        t = mq.read_ppm(p)
        assert t.shape == (1, 3, 1, 2)
        assert np.array_equal(t[0, :, 0, 0], np.zeros(3, np.float32))
        assert np.array_equal(t[0, :, 0, 1], np.ones(3, np.float32))

    def test_roundtrip_random_bytes(self, tmp_path):
        rng = np.random.default_rng(2)
        payload = bytes(rng.integers(0, 256, size=5 * 4 * 3, dtype=np.uint8))
        p = tmp_path / "img.ppm"
        p.write_bytes(b"P6\n5 4\n255\n" + payload)
        q = tmp_path / "out.ppm"
        mq.write_ppm(mq.read_ppm(p), q)
        assert q.read_bytes() == p.read_bytes()

    def test_write_rounds_to_nearest(self, tmp_path):
        # float32 inputs never scale to exact .5 ties (255 * f32 is exact in
        # f64 and (2k+1)/510 is not dyadic), so nearest-rounding is the
        # observable contract: just above/below the boundary must split.
        hi = np.float32(0.5 / 255.0)                      # scales to 0.50000003
        lo = np.nextafter(hi, np.float32(0.0))            # one f32 ulp below
        img = np.zeros((1, 3, 1, 2), np.float32)
        img[0, :, 0, 0] = lo
        img[0, :, 0, 1] = hi
        p = tmp_path / "img.ppm"
        mq.write_ppm(img, p)
        payload = p.read_bytes().split(b"255\n", 1)[1]
        assert list(payload) == [0, 0, 0, 1, 1, 1]

    def test_header_errors(self, tmp_path):
        p = tmp_path / "img.ppm"
        p.write_bytes(b"P5\n2 1\n255\n" + bytes(6))
        with pytest.raises(ImageFormatError):
            mq.read_ppm(p)
        p.write_bytes(b"P6\n2 1\n65535\n" + bytes(12))
        with pytest.raises(ImageFormatError):
            mq.read_ppm(p)

    def test_comment_in_header(self, tmp_path):
        p = tmp_path / "img.ppm"
        p.write_bytes(b"P6\n# made by hand\n1 1\n255\n" + bytes([10, 20, 30]))
        t = mq.read_ppm(p)
        assert np.allclose(t[0, :, 0, 0], np.array([10, 20, 30]) / 255.0)
