import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from geobrdf.errors import DegenerateGeometryError, InvalidInputError
from geobrdf.photogeom import (
    CameraPose,
    Projection,
    angle_between,
    classical_angles,
    direction_from_angles,
    half_vector,
    rusinkiewicz_angles,
    surface_normals,
    tangent_frame,
    view_light_field,
)
from geobrdf.raster import DemGrid

from oracles import hemisphere, random_dem, random_rotation

S2 = math.sqrt(2.0)
UP = np.array([0.0, 0.0, 1.0])


def _flat(size=8, gsd=1.0):
    return DemGrid(np.zeros((size, size)), gsd)


def _center(dem):
    return dem.pixel_to_world((dem.height - 1) / 2, (dem.width - 1) / 2)


class TestCamera:
    def test_rejects_improper_rotation(self):
        with pytest.raises(InvalidInputError):
            CameraPose([0, 0, 1], np.diag([1.0, 1.0, -1.0]))
        with pytest.raises(InvalidInputError):
            CameraPose([0, 0, 1], np.eye(3), fov_deg=180.0)

    def test_look_at_axis(self):
        cam = CameraPose.look_at([0, -100, 100], [0, 0, 0])
        np.testing.assert_allclose(cam.view_dir, [0, 1 / S2, -1 / S2], atol=1e-15)
        assert math.isclose(cam.tilt_deg(), 45.0)

    def test_nadir(self):
        cam = CameraPose.nadir([1, 2, 3])
        np.testing.assert_allclose(cam.view_dir, [0, 0, -1])
        assert cam.projection is Projection.ORTHO_NADIR and cam.tilt_deg() == 0.0

    def test_dict_roundtrip(self):
        cam = CameraPose.look_at([5, -100, 300], [0, 0, 0], fov_deg=30, image_size=(64, 32))
        again = CameraPose.from_dict(cam.to_dict())
        np.testing.assert_array_equal(again.orientation, cam.orientation)
        assert again.image_size == (64, 32) and again.fov_deg == 30


def test_direction_from_angles():
    np.testing.assert_allclose(direction_from_angles(90, 0), UP, atol=1e-15)
    np.testing.assert_allclose(direction_from_angles(0, 90), [1, 0, 0], atol=1e-15)
    np.testing.assert_allclose(direction_from_angles(0, 0), [0, 1, 0], atol=1e-15)


class TestNormals:
    def test_flat(self):
        np.testing.assert_array_equal(surface_normals(_flat()), np.broadcast_to(UP, (8, 8, 3)))

    def test_plane(self):
        _, x = np.indices((8, 8), dtype=float)
        n = surface_normals(DemGrid(x, 1.0))
        np.testing.assert_allclose(n[1:-1, 1:-1], np.broadcast_to([-1 / S2, 0, 1 / S2], (6, 6, 3)), atol=1e-15)

    def test_orthogonal_to_tangents(self):
        dem = random_dem(np.random.default_rng(0), size=24)
        z, g = dem.elevations, dem.gsd
        n = surface_normals(dem)[1:-1, 1:-1]
        tx = np.stack([np.full_like(z, 2 * g), np.zeros_like(z), np.roll(z, -1, 1) - np.roll(z, 1, 1)], -1)[1:-1, 1:-1]
        ty = np.stack([np.zeros_like(z), np.full_like(z, 2 * g), np.roll(z, -1, 0) - np.roll(z, 1, 0)], -1)[1:-1, 1:-1]
        assert np.abs(np.sum(n * tx, -1)).max() < 1e-6
        assert np.abs(np.sum(n * ty, -1)).max() < 1e-6

    def test_tangent_frame_orthonormal(self):
        rng = np.random.default_rng(1)
        n = hemisphere(rng, UP, 200)
        t, b = tangent_frame(n)
        for u, v in ((n, t), (n, b), (t, b)):
            assert np.abs(np.sum(u * v, -1)).max() < 1e-12
        np.testing.assert_allclose(np.linalg.norm(t, axis=-1), 1.0)
        assert np.all(t[:, 1] > 0)


class TestClassical:
    def test_trivial(self):
        assert classical_angles(UP, UP, UP) == (0.0, 0.0, 0.0)

    def test_hand(self):
        ti, tp, to = classical_angles(UP, np.array([1, 0, 1]) / S2, np.array([-1, 0, 1]) / S2)
        assert math.isclose(ti, math.pi / 4) and math.isclose(tp, math.pi / 2) and math.isclose(to, math.pi / 4)

    @given(st.integers(0, 2**31))
    def test_swap_symmetry(self, seed):
        rng = np.random.default_rng(seed)
        wi, wo = hemisphere(rng, UP, 2)
        assert classical_angles(UP, wi, wo)[1] == classical_angles(UP, wo, wi)[1]

    def test_precision_near_zero(self):
        eps = 1e-9
        v = np.array([math.sin(eps), 0.0, math.cos(eps)])
        assert math.isclose(angle_between(UP, v), eps, rel_tol=1e-9)


class TestRusinkiewicz:
    def test_normal_case(self):
        th, _, td, _ = rusinkiewicz_angles(UP, np.array([0, 1.0, 0]), UP, UP)
        assert th == 0.0 and td == 0.0

    def test_bisector(self):
        wi, wo = np.array([1, 0, 1]) / S2, np.array([-1, 0, 1]) / S2
        np.testing.assert_allclose(half_vector(wi, wo), UP, atol=1e-15)
        th, _, td, _ = rusinkiewicz_angles(UP, np.array([0, 1.0, 0]), wi, wo)
        assert abs(th) < 1e-15 and math.isclose(td, math.pi / 4)

    def test_degenerate(self):
        with pytest.raises(DegenerateGeometryError):
            half_vector(np.array([1.0, 0, 0]), np.array([-1.0, 0, 0]))

    def test_difference_vector_is_unit_angle(self):
        rng = np.random.default_rng(3)
        n = hemisphere(rng, UP, 500)
        t, _ = tangent_frame(n)
        wi, wo = hemisphere(rng, n, 500), hemisphere(rng, n, 500)
        th, _, td, _ = rusinkiewicz_angles(n, t, wi, wo)
        assert np.all((th >= 0) & (th <= math.pi / 2 + 1e-12))
        assert np.all((td >= 0) & (td <= math.pi / 2 + 1e-12))

    def test_rotation_invariance(self):
        rng = np.random.default_rng(4)
        n = hemisphere(rng, UP, 100)
        t, _ = tangent_frame(n)
        wi, wo = hemisphere(rng, n, 100), hemisphere(rng, n, 100)
        r = random_rotation(rng)
        a = rusinkiewicz_angles(n, t, wi, wo)
        b = rusinkiewicz_angles(n @ r.T, t @ r.T, wi @ r.T, wo @ r.T)
        for x, y in zip(a, b):
            d = np.angle(np.exp(1j * (x - y)))
            assert np.abs(d).max() < 1e-9


class TestViewLight:
    def test_zenith_nadir_flat(self):
        dem = _flat()
        cx, cy = _center(dem)
        g = view_light_field(dem, CameraPose.nadir([cx, cy, 100]), UP)
        for a in (g.theta_i, g.theta_o, g.theta_p):
            assert np.abs(a).max() == 0.0

    def test_sun_elevation(self):
        dem = _flat()
        cx, cy = _center(dem)
        g = view_light_field(dem, CameraPose.nadir([cx, cy, 100]), direction_from_angles(30, 123))
        assert np.abs(g.theta_i - math.radians(60)).max() < 1e-9

    def test_camera_below_terrain(self):
        dem = DemGrid(np.full((4, 4), 50.0), 1.0)
        with pytest.raises(DegenerateGeometryError):
            view_light_field(dem, CameraPose.look_at([0, 0, 10], [1, 1, 0]), UP)

    def test_non_unit_sun(self):
        dem = _flat()
        with pytest.raises(InvalidInputError):
            view_light_field(dem, CameraPose.nadir([0, 0, 100]), [0, 0, 2])

    def test_phase_grows_from_center(self):
        dem = _flat(33, 10.0)
        cx, cy = _center(dem)
        g = view_light_field(dem, CameraPose.nadir([cx, cy, 500], projection=Projection.PERSPECTIVE), UP)
        tp = g.theta_p
        c = 16
        for ray in (tp[c, c:], tp[c, c::-1], tp[c:, c], np.diagonal(tp)[c:]):
            assert np.all(np.diff(ray) > 0)
