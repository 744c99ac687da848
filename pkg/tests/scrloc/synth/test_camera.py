import numpy as np
import pytest
from scrloc.errors import NoConvergence
from scrloc.synth.camera import (
    CameraIntrinsics,
    back_project,
    measure,
    pinhole_back_project,
    pinhole_project,
    project,
    unmeasure,
)


def field_points(rng, n=200, intr=CameraIntrinsics()):
    """Random camera points whose images land on the sensor."""
    z = rng.uniform(1300, 2200, size=n)
    u = rng.uniform(0, intr.width, size=n)
    v = rng.uniform(0, intr.height, size=n)
    return pinhole_back_project(intr, np.stack([u, v], axis=-1), z)


class TestProjection:

    def test_principal_point(self):
        intr = CameraIntrinsics()
        np.testing.assert_allclose(project(intr, [0.0, 0.0, 1500.0]), [2600.0, 1800.0])

    def test_round_trip(self, rng):
        intr = CameraIntrinsics()
        p = field_points(rng)
        back = back_project(intr, project(intr, p), p[:, 2])
        np.testing.assert_allclose(back, p, atol=1e-6)

    def test_barrel_distortion_pulls_inward(self):
        intr = CameraIntrinsics()
        p = np.array([400.0, 250.0, 1500.0])
        d = project(intr, p) - [intr.cx, intr.cy]
        u = pinhole_project(intr, p) - [intr.cx, intr.cy]
        assert np.linalg.norm(d) < np.linalg.norm(u)

    def test_behind_camera(self):
        with pytest.raises(ValueError):
            project(CameraIntrinsics(), [0.0, 0.0, -5.0])

    def test_non_positive_depth(self):
        with pytest.raises(ValueError):
            back_project(CameraIntrinsics(), [10.0, 10.0], 0.0)

    def test_outside_invertible_radius(self):
        intr = CameraIntrinsics()
        with pytest.raises(NoConvergence):
            back_project(intr, [intr.cx + 10 * intr.fx, intr.cy], 1500.0)

    def test_bad_focal_length(self):
        with pytest.raises(ValueError):
            CameraIntrinsics(fx=0.0)


class TestMeasured:

    def test_inverse(self, rng):
        intr = CameraIntrinsics()
        p = field_points(rng)
        np.testing.assert_allclose(unmeasure(intr, measure(intr, p)), p, atol=1e-6)

    def test_keeps_depth(self, rng):
        p = field_points(rng, n=20)
        np.testing.assert_array_equal(measure(CameraIntrinsics(), p)[:, 2], p[:, 2])

    def test_identity_without_distortion(self, rng):
        intr = CameraIntrinsics(k1=0.0, k2=0.0)
        p = field_points(rng, intr=intr)
        np.testing.assert_allclose(measure(intr, p), p, atol=1e-9)


class TestWindow:

    def test_crop_shifts_pixels(self, rng):
        intr = CameraIntrinsics()
        local = intr.crop(1000, 700, 360, 300)
        assert (local.width, local.height) == (360, 300)
        p = field_points(rng, n=10)
        np.testing.assert_allclose(project(local, p), project(intr, p) - [1000, 700], atol=1e-9)

    def test_mm_per_pixel(self):
        assert CameraIntrinsics().mm_per_pixel(1500.0) == pytest.approx(0.2)
