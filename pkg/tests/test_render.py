import math

import numpy as np
import pytest

from geobrdf.brdf import BrdfModel, CoefficientMap
from geobrdf.errors import AlignmentError, EmptyDomainError, InvalidInputError
from geobrdf.photogeom import CameraPose, direction_from_angles, view_light_field
from geobrdf.raster import DemGrid
from geobrdf.render import backward, photometric_loss, render, render_many, shadow_mask

from oracles import random_camera, random_dem, shadow_oracle

UP = np.array([0.0, 0.0, 1.0])


def _flat(size=8, gsd=1.0):
    return DemGrid(np.zeros((size, size)), gsd)


def _nadir(dem):
    cx, cy = dem.pixel_to_world((dem.height - 1) / 2, (dem.width - 1) / 2)
    return CameraPose.nadir([cx, cy, 1000.0])


class TestShadow:
    def test_flat_no_shadow(self):
        for el, az in ((5, 0), (30, 77), (80, 200)):
            assert not shadow_mask(_flat(), direction_from_angles(el, az)).any()

    def test_sun_below_horizon(self):
        assert shadow_mask(_flat(), direction_from_angles(-5, 0)).all()
        assert shadow_mask(_flat(), [1.0, 0.0, 0.0]).all()

    def test_zenith_no_shadow(self):
        dem = random_dem(np.random.default_rng(0), size=32, relief=200)
        assert not shadow_mask(dem, UP).any()

    def test_spike_from_east(self):
        z = np.zeros((64, 64))
        z[32, 32] = 100.0
        dem = DemGrid(z, 1.0)
        sun = direction_from_angles(45, 90)
        mask = shadow_mask(dem, sun)
        assert mask[32, 31] and mask[32, 1] and not mask[32, 33]
        cols = np.nonzero(mask[32])[0]
        assert cols.max() < 32 and (32 - cols.min()) <= 100
        assert not mask[:, 33:].any()
        np.testing.assert_array_equal(mask, shadow_oracle(z, 1.0, sun))

    def test_matches_oracle(self):
        rng = np.random.default_rng(5)
        dem = random_dem(rng, size=32, relief=60)
        for el, az in ((12, 17), (35, 250)):
            sun = direction_from_angles(el, az)
            np.testing.assert_array_equal(shadow_mask(dem, sun), shadow_oracle(dem.elevations, dem.gsd, sun))


class TestRender:
    def test_constant(self):
        dem = _flat()
        img = render(dem, CoefficientMap.uniform("M2", [0, 0, 0.5], dem.shape), _nadir(dem), direction_from_angles(40, 10))
        np.testing.assert_array_equal(img.radiance, 0.5)

    def test_m1_sun_30(self):
        dem = _flat()
        img = render(dem, CoefficientMap.uniform("M1", [1, 0], dem.shape), _nadir(dem), direction_from_angles(30, 200))
        assert np.abs(img.radiance - 0.5).max() < 1e-12

    def test_misaligned(self):
        dem = _flat()
        with pytest.raises(AlignmentError):
            render(dem, CoefficientMap.uniform("M1", [1, 0], (4, 4)), _nadir(dem), UP)

    def test_shadowed_pixels_zero_and_unclamped(self):
        z = np.zeros((16, 16))
        z[8, 8] = 50.0
        dem = DemGrid(z, 1.0)
        cm = CoefficientMap.uniform("M2", [0, 0, -0.25], dem.shape)
        img = render(dem, cm, _nadir(dem), direction_from_angles(30, 90))
        assert img.shadow.any()
        assert np.all(img.radiance[img.shadow] == 0.0)
        assert np.all(img.radiance[~img.shadow] == -0.25)
        assert img.display().min() == 0.0
        clamped = render(dem, cm, _nadir(dem), direction_from_angles(30, 90), clamp=True)
        assert clamped.radiance.min() == 0.0

    def test_render_many_threads(self):
        dem = random_dem(np.random.default_rng(1))
        cm = CoefficientMap.uniform("M1", [1, 0.5], dem.shape)
        jobs = [(dem, cm, _nadir(dem), direction_from_angles(el, 45)) for el in (20, 40, 60)]
        for a, b in zip(render_many(jobs), render_many(jobs, workers=3)):
            np.testing.assert_array_equal(a.radiance, b.radiance)


class TestBackward:
    def test_zero(self):
        dem = random_dem(np.random.default_rng(2))
        g = view_light_field(dem, _nadir(dem), direction_from_angles(40, 30))
        assert not backward(np.zeros(dem.shape), g, "M3").any()

    def test_single_pixel(self):
        dem = random_dem(np.random.default_rng(3))
        g = view_light_field(dem, _nadir(dem), direction_from_angles(40, 30))
        img_grad = np.zeros(dem.shape)
        img_grad[4, 5] = 1.0
        out = backward(img_grad, g, "M2", shadow=np.zeros(dem.shape, bool))
        np.testing.assert_allclose(out[:, 4, 5], [math.cos(g.theta_i[4, 5]), math.cos(g.theta_p[4, 5]), 1.0])
        out[:, 4, 5] = 0
        assert not out.any()

    def test_adjoint(self):
        rng = np.random.default_rng(4)
        dem = random_dem(rng, size=20, relief=80)
        sun = direction_from_angles(20, 300)
        g = view_light_field(dem, random_camera(rng, dem), sun)
        shadow = shadow_mask(dem, sun)
        assert shadow.any()
        for model in ("M1", "M3", "M6"):
            c = rng.normal(size=(BrdfModel(model).n_params,) + dem.shape)
            y = rng.normal(size=dem.shape)
            img = render(dem, CoefficientMap(model, c), None, sun, geometry=g, shadow=shadow).radiance
            lhs = float(np.sum(img * y))
            rhs = float(np.sum(c * backward(y, g, model, shadow)))
            assert math.isclose(lhs, rhs, rel_tol=1e-12)

    def test_misaligned(self):
        dem = _flat()
        g = view_light_field(dem, _nadir(dem), UP)
        with pytest.raises(AlignmentError):
            backward(np.zeros((3, 3)), g, "M1")


class TestLoss:
    def test_zero(self):
        assert photometric_loss(np.ones((3, 3)), np.ones((3, 3))).mse == 0.0

    def test_offset(self):
        valid = np.zeros((4, 4), bool)
        valid[:2] = True
        target = np.random.default_rng(0).normal(size=(4, 4))
        rep = photometric_loss(target + np.where(valid, 0.3, 5.0), target, valid)
        assert math.isclose(rep.mse, 0.09) and rep.n_pixels == 8

    def test_empty_and_shape(self):
        with pytest.raises(EmptyDomainError):
            photometric_loss(np.ones((2, 2)), np.ones((2, 2)), np.zeros((2, 2), bool))
        with pytest.raises(InvalidInputError):
            photometric_loss(np.ones((2, 2)), np.ones((2, 3)))

    def test_masks_shadows_and_grad(self):
        z = np.zeros((16, 16))
        z[8, 8] = 50.0
        dem = DemGrid(z, 1.0)
        sun = direction_from_angles(30, 90)
        img = render(dem, CoefficientMap.uniform("M2", [0, 0, 1.0], dem.shape), _nadir(dem), sun)
        target = np.full(dem.shape, 0.5)
        rep = photometric_loss(img, target)
        assert rep.n_pixels == int((~img.shadow).sum())
        assert math.isclose(rep.mse, 0.25)
        all_px = photometric_loss(img, target, mask_shadows=False)
        assert all_px.n_pixels == 256
        h = 1e-6
        k = (2, 3)
        bumped = img.radiance.copy()
        bumped[k] += h
        fd = (photometric_loss(bumped, target, rep.mask).mse - photometric_loss(img.radiance, target, rep.mask).mse) / h
        assert abs(fd - rep.image_grad()[k]) < 1e-6
