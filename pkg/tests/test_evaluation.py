import json
import math

import numpy as np
import pytest
from skimage.metrics import peak_signal_noise_ratio, structural_similarity

from blindvsr.degradation import DegradationConfig, degrade_sequence, make_gaussian_kernel
from blindvsr.evaluation import (evaluate_dirs, evaluate_frames, evaluate_regenerated_lr, kernel_ncc, luminance,
                                 psnr, ssim)
from blindvsr.io import write_sequence
from oracles import psnr_reference


def random_pairs(n, seed=0):
    rng = np.random.default_rng(seed)
    for _ in range(n):
        h, w = rng.integers(11, 40, size=2)
        a = rng.random((h, w, 3))
        b = np.clip(a + rng.normal(0, rng.uniform(0.01, 0.3), a.shape), 0, 1)
        yield a, b


def ssim_reference(a, b):
    return structural_similarity(a @ np.array([0.299, 0.587, 0.114]), b @ np.array([0.299, 0.587, 0.114]),
                                 gaussian_weights=True, sigma=1.5, use_sample_covariance=False, data_range=1.0)


class TestPsnr:
    def test_matches_references(self):
        for a, b in random_pairs(50):
            assert psnr(a, b) == pytest.approx(psnr_reference(a, b), abs=1e-9)
            assert psnr(a, b) == pytest.approx(peak_signal_noise_ratio(a, b, data_range=1.0), abs=1e-9)

    def test_identical_is_inf(self):
        a = np.random.default_rng(0).random((8, 8, 3))
        assert psnr(a, a.copy()) == math.inf

    def test_uniform_offset(self):
        a = np.zeros((4, 4, 3))
        assert psnr(a, a + 0.1) == pytest.approx(20.0, abs=1e-9)

    def test_crop_border(self):
        a, b = np.zeros((8, 8, 3)), np.zeros((8, 8, 3))
        b[0] = 1
        assert psnr(a, b, crop_border=1) == math.inf

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            psnr(np.zeros((4, 4, 3)), np.zeros((4, 5, 3)))


class TestSsim:
    def test_matches_reference(self):
        for a, b in random_pairs(50, seed=1):
            assert ssim(a, b) == pytest.approx(ssim_reference(a, b), abs=1e-6)

    def test_identical(self):
        a = np.random.default_rng(0).random((16, 16, 3))
        assert ssim(a, a) == pytest.approx(1.0, abs=1e-12)

    def test_symmetric(self):
        a, b = next(random_pairs(1, seed=3))
        assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-12)

    def test_too_small(self):
        with pytest.raises(ValueError):
            ssim(np.zeros((10, 20, 3)), np.zeros((10, 20, 3)))

    def test_luminance_weights(self):
        assert luminance(np.ones((2, 2, 3)))[0, 0] == pytest.approx(1.0)
        assert luminance(np.array([[[1.0, 0, 0]]]))[0, 0] == pytest.approx(0.299)


class TestKernelNcc:
    def test_self(self):
        k = make_gaussian_kernel(13, 1.2, 1.2)
        assert kernel_ncc(k, k) == pytest.approx(1.0)

    def test_different_sizes_padded(self):
        small = make_gaussian_kernel(5, 0.1, 0.1)
        big = np.zeros((13, 13))
        big[6, 6] = 1
        assert kernel_ncc(small, big) == pytest.approx(1.0, abs=1e-9)

    def test_uniform_vs_delta(self):
        d = np.zeros((13, 13))
        d[6, 6] = 1
        assert kernel_ncc(np.full((13, 13), 1 / 169), d) == pytest.approx(1 / 13)


class TestRegeneratedLr:
    def setup_method(self):
        rng = np.random.default_rng(0)
        self.k = make_gaussian_kernel(13, 1.2, 1.2)
        self.hr = [rng.random((64, 64, 3)) for _ in range(2)]
        self.lr = degrade_sequence(self.hr, self.k, DegradationConfig(scale=4))

    def test_true_kernel_is_exact(self):
        r = evaluate_regenerated_lr(self.k, self.hr, self.lr, true_kernel=self.k)
        assert r.regenerated_psnr == math.inf
        assert r.kernel_ncc == pytest.approx(1.0)

    def test_wrong_kernel_scores_lower(self):
        wrong = make_gaussian_kernel(13, 3.0, 3.0)
        assert evaluate_regenerated_lr(wrong, self.hr, self.lr).regenerated_psnr < 40

    def test_noise_is_not_added(self):
        cfg = DegradationConfig(scale=4, noise_sigma=0.1)
        assert evaluate_regenerated_lr(self.k, self.hr, self.lr, cfg).regenerated_psnr == math.inf

    def test_scale_mismatch(self):
        with pytest.raises(ValueError):
            evaluate_regenerated_lr(self.k, self.hr, self.lr, DegradationConfig(scale=2))

    def test_invalid_kernel(self):
        with pytest.raises(ValueError):
            evaluate_regenerated_lr(np.full((13, 13), 1.0), self.hr, self.lr)


def test_report_json_handles_inf():
    a = np.random.default_rng(0).random((12, 12, 3))
    report = evaluate_frames([a], [a])
    data = json.loads(report.to_json())
    assert data["psnr"] == "inf"
    assert data["ssim"] == pytest.approx(1.0)


def test_evaluate_dirs(tmp_path):
    rng = np.random.default_rng(0)
    gt = [rng.random((16, 16, 3)) for _ in range(3)]
    write_sequence(tmp_path / "gt" / "s0", gt)
    write_sequence(tmp_path / "pred" / "s0", gt)
    report = evaluate_dirs(tmp_path / "pred", tmp_path / "gt")
    assert report.psnr == math.inf
    assert len(report.per_frame_psnr) == 3 and "s0" in report.per_sequence
