import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from geobrdf.brdf import CoefficientMap
from geobrdf.errors import InvalidInputError, UnderObservedError
from geobrdf.infer.fit import build_observations, fit_map_ls, fit_mse
from geobrdf.metrics import (
    EXACT,
    EvalReport,
    SampleScore,
    evaluate_maps,
    fill_unobserved,
    format_reports,
    gaussian_window,
    mse,
    psnr,
    range_normalize,
    ssim,
    ssim_map,
    uniform_baseline,
    write_reports_csv,
)
from geobrdf.synth import SynthSceneConfig, generate_scene

from oracles import ssim_one_window


class TestPsnr:
    def test_exact(self):
        x = np.random.default_rng(0).uniform(size=(8, 8))
        assert psnr(x, x) == EXACT

    def test_20db(self):
        b = np.zeros((10, 10))
        b[0, 0] = 1.0
        a = b + 0.1
        assert math.isclose(psnr(a, b, peak=1.0), 20.0)
        assert math.isclose(psnr(a, b), 20.0)

    def test_bad_peak(self):
        with pytest.raises(InvalidInputError):
            psnr(np.ones((2, 2)), np.zeros((2, 2)))
        with pytest.raises(InvalidInputError):
            psnr(np.ones((2, 2)), np.ones((2, 2)), peak=0)

    def test_mse_mask(self):
        a, b = np.zeros((2, 2)), np.array([[1.0, 3.0], [0.0, 0.0]])
        assert mse(a, b, [[True, False], [False, False]]) == 1.0
        with pytest.raises(InvalidInputError):
            mse(a, b, np.zeros((2, 2), bool))


class TestSsim:
    def test_window(self):
        w = gaussian_window()
        assert w.shape == (11, 11) and math.isclose(w.sum(), 1.0) and w[5, 5] == w.max()

    @given(st.integers(0, 2**31))
    def test_identity(self, seed):
        x = np.random.default_rng(seed).uniform(0, 1, (16, 13))
        assert abs(ssim(x, x, peak=1.0) - 1.0) < 1e-12

    def test_symmetry(self):
        rng = np.random.default_rng(1)
        a, b = rng.uniform(size=(20, 20)), rng.uniform(size=(20, 20))
        assert abs(ssim(a, b, 1.0) - ssim(b, a, 1.0)) < 1e-12

    def test_anticorrelated(self):
        x = np.zeros((11, 11))
        x[:, 6:] = 1.0
        s = ssim(x, 1.0 - x, peak=1.0)
        assert s < 0
        assert abs(s - ssim_one_window(x, 1.0 - x, 1.0)) < 1e-10

    def test_map_against_window_oracle(self):
        rng = np.random.default_rng(2)
        a, b = rng.uniform(size=(14, 15)), rng.uniform(size=(14, 15))
        m = ssim_map(a, b, 1.0)
        assert m.shape == (4, 5)
        for r, c in ((0, 0), (3, 4), (2, 1)):
            assert abs(m[r, c] - ssim_one_window(a, b, 1.0, r, c)) < 1e-10

    def test_too_small(self):
        with pytest.raises(InvalidInputError):
            ssim(np.ones((10, 12)), np.ones((10, 12)), 1.0)


class TestRangeNormalize:
    def test_affine(self):
        r = np.random.default_rng(0).uniform(size=(5, 5))
        r[0, 0], r[0, 1] = 0.0, 1.0
        t = 10 + 10 * np.random.default_rng(1).uniform(size=(5, 5))
        t[0, 0], t[0, 1] = 10.0, 20.0
        np.testing.assert_allclose(range_normalize(r, t), 10 + 10 * r, atol=1e-12)

    def test_identity(self):
        t = np.random.default_rng(2).uniform(size=(4, 4))
        assert np.abs(range_normalize(t, t) - t).max() < 1e-12

    def test_constant(self):
        t = np.array([[2.0, 4.0], [3.0, 3.0]])
        np.testing.assert_array_equal(range_normalize(np.full((2, 2), 0.5), t), 3.0)


class TestReports:
    def test_aggregate_psnr(self):
        r = EvalReport("m", [SampleScore(0.0, EXACT, 1.0), SampleScore(0.01, 20.0, 0.5), SampleScore(0.01, 30.0, 0.7)])
        assert r.n == 3 and r.n_exact == 1 and r.psnr == 25.0 and math.isclose(r.ssim, 2.2 / 3)
        assert EvalReport("e", [SampleScore(0.0, EXACT, 1.0)]).psnr == EXACT

    def test_outputs(self, tmp_path):
        r = EvalReport("svbrdf", [SampleScore(0.01, 20.0, 0.9)])
        write_reports_csv(tmp_path / "r.csv", [r])
        lines = (tmp_path / "r.csv").read_text().splitlines()
        assert lines[0] == "method,mse,psnr_db,ssim,n_samples,n_exact" and lines[1].startswith("svbrdf,0.01,20.0")
        text = format_reports([r])
        assert "sigma=1.5" in text and "svbrdf" in text


@pytest.fixture(scope="module")
def scenes():
    base = dict(dem_size=64, n_views=5, n_samples=12, crop_size=16, relief_amplitude=30, seed=5, view_mix=0.5)
    uniform = generate_scene(SynthSceneConfig(**base, coeff_field_spec=[(0.6, 0, 40), (0.2, 0, 40), (0.1, 0, 40)]))
    varying = generate_scene(SynthSceneConfig(**base, alpha=1.0, coeff_field_spec=[(0.6, 0.3, 40)] * 3))
    return uniform, varying


class TestBaseline:
    def test_recovers_uniform(self, scenes):
        uniform, _ = scenes
        obs = build_observations(uniform.dem, uniform.views, "M2")
        c = uniform_baseline(obs, "M2")
        np.testing.assert_allclose(c, uniform.true_coeffs.values[:, 0, 0], atol=1e-6)

    def test_worse_than_per_pixel_on_varying(self, scenes):
        _, varying = scenes
        obs = build_observations(varying.dem, varying.views, "M2")
        c = uniform_baseline(obs, "M2")
        fit = fit_map_ls(obs)
        assert fit_mse(obs, CoefficientMap.uniform("M2", c, obs.shape)) > fit_mse(obs, fit.coeffs)

    def test_accepts_triples(self):
        rng = np.random.default_rng(0)
        basis = rng.uniform(size=(2, 4, 4))
        target = 0.3 * basis[0] + 0.7 * basis[1]
        c = uniform_baseline([(basis, target, np.ones((4, 4), bool))], "M1")
        np.testing.assert_allclose(c, [0.3, 0.7])

    def test_under_observed(self):
        with pytest.raises(UnderObservedError):
            uniform_baseline([(np.ones((3, 1, 1)), np.ones((1, 1)), np.ones((1, 1), bool))], "M2")


class TestEvaluateMaps:
    def test_truth_is_exact(self, scenes):
        _, varying = scenes
        samples = varying.samples[:4]
        reports = evaluate_maps(varying.dem, samples, {"truth": varying.true_coeffs},
                                uniform=("M2", [0.6, 0.6, 0.6]))
        truth, uni = reports
        assert truth.n_exact == 4 and truth.mse == 0.0
        assert uni.method == "uniform-normalized" and uni.mse > 0

    def test_callable_method(self, scenes):
        _, varying = scenes
        samples = varying.samples[:2]
        reports = evaluate_maps(varying.dem, samples,
                                {"crop": lambda i, s: varying.true_coeffs.crop(s.manifest.crop)})
        assert reports[0].n_exact == 2

    def test_fill_unobserved(self):
        cm = CoefficientMap("M1", np.ones((2, 2, 2)))
        out = fill_unobserved(cm, [[True, False], [True, True]], [5.0, 6.0])
        assert out.values[0, 0, 1] == 5.0 and out.values[1, 0, 1] == 6.0 and out.values[0, 0, 0] == 1.0
