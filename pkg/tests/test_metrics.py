import math

import jsonschema
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lavernet.metrics import REPORT_SCHEMA, charbonnier, evaluate_video, psnr, ssim
from lavernet.tensor import DimensionError, Tensor


def brute_psnr(a, b):
    total = 0.0
    n = 0
    for x, y in zip(a.ravel(), b.ravel()):
        total += (float(x) - float(y)) ** 2
        n += 1
    mse = total / n
    return 100.0 if mse == 0 else min(100.0, 10 * math.log10(1 / mse))


def brute_ssim(a, b):
    win = [[math.exp(-((i - 5) ** 2 + (j - 5) ** 2) / (2 * 1.5 ** 2)) for j in range(11)] for i in range(11)]
    z = sum(map(sum, win))
    win = [[w / z for w in row] for row in win]
    c1, c2 = 0.01 ** 2, 0.03 ** 2
    per_channel = []
    for ch in range(a.shape[0]):
        vals = []
        for y0 in range(a.shape[1] - 10):
            for x0 in range(a.shape[2] - 10):
                ma = mb = saa = sbb = sab = 0.0
                for i in range(11):
                    for j in range(11):
                        w = win[i][j]
                        p, q = float(a[ch, y0 + i, x0 + j]), float(b[ch, y0 + i, x0 + j])
                        ma += w * p
                        mb += w * q
                        saa += w * p * p
                        sbb += w * q * q
                        sab += w * p * q
                va, vb, cov = saa - ma * ma, sbb - mb * mb, sab - ma * mb
                vals.append((2 * ma * mb + c1) * (2 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2)))
        per_channel.append(sum(vals) / len(vals))
    return sum(per_channel) / len(per_channel)


class TestOracles:
    def test_psnr_and_ssim_match_brute_force(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            a = rng.random((3, 16, 16))
            b = np.clip(a + rng.normal(0, rng.uniform(0.01, 0.3), a.shape), 0, 1)
            assert abs(psnr(a, b) - brute_psnr(a, b)) < 1e-6
            assert abs(ssim(a, b) - brute_ssim(a, b)) < 1e-6

    def test_psnr_20db_offset(self):
        a = np.full((3, 16, 16), 0.4)
        assert abs(psnr(a + 0.1, a) - 20.0) < 1e-6

    def test_psnr_identical_capped(self):
        a = np.random.default_rng(0).random((3, 4, 4))
        assert psnr(a, a) == 100.0

    def test_ssim_constant_pair(self):
        expected = 1e-4 / 1.0001
        assert abs(ssim(np.zeros((1, 16, 16)), np.ones((1, 16, 16))) - expected) < 1e-6
        assert abs(expected - 9.999e-5) < 1e-8

    def test_ssim_identical(self):
        a = np.random.default_rng(1).random((3, 16, 16))
        assert abs(ssim(a, a) - 1.0) < 1e-12

    @given(st.integers(0, 10 ** 6))
    def test_ssim_symmetric(self, seed):
        rng = np.random.default_rng(seed)
        a, b = rng.random((2, 12, 13)), rng.random((2, 12, 13))
        assert abs(ssim(a, b) - ssim(b, a)) < 1e-9

    def test_ssim_too_small(self):
        with pytest.raises(DimensionError):
            ssim(np.zeros((3, 8, 8)), np.zeros((3, 8, 8)))

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            psnr(np.zeros((3, 4, 4)), np.zeros((3, 4, 5)))


class TestCharbonnier:
    def test_equal_inputs_give_eps(self):
        x = np.random.default_rng(0).random((2, 3, 4))
        assert charbonnier(Tensor(x), x, 1e-3).item() == pytest.approx(1e-3, abs=1e-15)

    def test_single_element_value(self):
        assert charbonnier(Tensor(np.array([3e-3])), np.array([0.0])).item() == pytest.approx(math.sqrt(1e-5), rel=1e-12)

    def test_gradient_zero_at_equality(self):
        x = np.random.default_rng(0).random(6)
        t = Tensor(x.copy(), requires_grad=True)
        charbonnier(t, x).backward()
        assert np.all(t.grad == 0)

    @given(st.integers(0, 10 ** 6))
    def test_lower_bound(self, seed):
        rng = np.random.default_rng(seed)
        a, b = rng.random(10), rng.random(10)
        assert charbonnier(Tensor(a), b).item() >= 1e-3

    def test_rejects_nonpositive_eps(self):
        with pytest.raises(ValueError):
            charbonnier(Tensor(np.zeros(2)), np.zeros(2), eps=0)


class TestReport:
    def test_report_validates_against_schema(self):
        rng = np.random.default_rng(0)
        gt = rng.random((3, 3, 16, 16))
        report = evaluate_video(np.clip(gt + 0.05, 0, 1), gt)
        report.params = {"total": 10}
        report.flops = {"total": 100}
        payload = report.to_json()
        jsonschema.validate(payload, REPORT_SCHEMA)
        assert [f["frame"] for f in payload["per_frame"]] == [0, 1, 2]
        assert payload["mean_psnr"] == pytest.approx(np.mean([f["psnr"] for f in payload["per_frame"]]))

    def test_video_shape_mismatch(self):
        with pytest.raises(DimensionError):
            evaluate_video(np.zeros((2, 3, 16, 16)), np.zeros((3, 3, 16, 16)))
