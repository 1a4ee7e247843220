import numpy as np
import pytest

from blobvis.calibrate import CalibrationError, SphereSpec, \
    build_from_spheres, calibrate_sphere, lateral_profile, self_visibility
from blobvis.scene import RayGaussian
from blobvis.visibility import SampleScheme, gaussian_visibility

from oracles import profile_inflection_dense


def center_visibility(res):
    """On-axis sampled visibility of the calibrated blob, probed far from
    the ray origin so the result matches the orthographic solve."""
    p = [RayGaussian(cbar=res.c, mubar=30.0 * res.sigma,
                     sigmabar=res.sigma)]
    return gaussian_visibility(p, 0)


@pytest.mark.parametrize("m", [0.5, 0.1])
def test_center_transparency(m):
    res = calibrate_sphere(1.0, m)
    assert center_visibility(res) == pytest.approx(1.0 - m, abs=1e-4)


def test_inflection_at_radius():
    res = calibrate_sphere(1.0, 0.1)
    got = profile_inflection_dense(
        lambda d: float(lateral_profile(d, res.c, res.sigma)), 2.0)
    assert abs(got - 1.0) < 0.01


def test_scale_covariance():
    a = calibrate_sphere(1.0, 0.1)
    b = calibrate_sphere(2.0, 0.1)
    assert b.sigma == pytest.approx(2.0 * a.sigma, rel=1e-6)
    assert b.c * b.sigma == pytest.approx(a.c * a.sigma, rel=1e-6)
    assert b.x == pytest.approx(a.x, rel=1e-9)


def test_known_values_pinned():
    res = calibrate_sphere(0.5, 0.1)
    assert res.c == pytest.approx(4.12267465156949, rel=1e-9)
    assert res.sigma == pytest.approx(0.31099853751797235, rel=1e-9)
    assert res.beta == pytest.approx(1.2821457873005275, rel=1e-9)
    assert res.x == pytest.approx(1.6077246021489904, rel=1e-9)
    # optical depths at the other smoothness levels
    assert calibrate_sphere(1.0, 0.5).beta == pytest.approx(0.3924, abs=1e-3)
    assert calibrate_sphere(1.0, 0.01).beta == pytest.approx(2.4200,
                                                             abs=1e-3)
    assert calibrate_sphere(1.0, 1e-4).beta == pytest.approx(10.95, abs=0.02)


def test_self_visibility_fixed_point():
    """The center equation the solver inverts: f(beta) = 1 - m."""
    for m in (0.5, 0.1, 0.01):
        res = calibrate_sphere(1.0, m)
        assert float(self_visibility(res.beta)) == pytest.approx(1.0 - m,
                                                                 abs=1e-9)


def test_repeated_calls_bit_identical():
    a = calibrate_sphere(0.7, 0.03)
    b = calibrate_sphere(0.7, 0.03)
    assert (a.c, a.sigma, a.beta, a.x) == (b.c, b.sigma, b.beta, b.x)
    assert a is b  # memoized


def test_optical_depth_monotone_in_m():
    depths = [calibrate_sphere(1.0, m).beta
              for m in (0.0001, 0.01, 0.1, 0.5)]
    assert all(a > b for a, b in zip(depths, depths[1:]))


def test_invalid_inputs_rejected():
    with pytest.raises(CalibrationError):
        calibrate_sphere(0.0, 0.1)
    with pytest.raises(CalibrationError):
        calibrate_sphere(1.0, 0.0)
    with pytest.raises(CalibrationError):
        calibrate_sphere(1.0, 1.0)


def test_unreachable_opacity_raises():
    """A single-sample rule caps visibility at 1/(e sqrt(pi/2)) ~ 0.29,
    so requesting half opacity has no solution."""
    with pytest.raises(CalibrationError):
        calibrate_sphere(1.0, 0.5, SampleScheme(offsets=(0,)))


def test_build_from_spheres_empty():
    scene = build_from_spheres([], 0.1)
    assert len(scene) == 0
    assert scene.m == 0.1


def test_build_from_spheres_shared_radius():
    spheres = [SphereSpec(center=(0, 0, 3), radius=0.4),
               SphereSpec(center=(1, 0, 3), radius=0.4,
                          albedo=(1, 0, 0))]
    scene = build_from_spheres(spheres, 0.1)
    g0, g1 = scene.gaussians
    assert g0.c == g1.c and g0.sigma == g1.sigma
    assert not np.array_equal(g0.mu, g1.mu)
    assert np.array_equal(g1.albedo, [1, 0, 0])


def test_sphere_cube_rig_builds():
    """One ball plus a 3x3x3 ball filling of a unit-ish cube: the rigid
    tracking fixture."""
    spheres = [SphereSpec(center=(-0.35, 0.0, 4.0), radius=0.3)]
    edge = 0.5
    for i in range(3):
        for j in range(3):
            for k in range(3):
                spheres.append(SphereSpec(
                    center=(0.35 + (i - 1) * edge / 3, (j - 1) * edge / 3,
                            4.0 + (k - 1) * edge / 3),
                    radius=edge / 6))
    scene = build_from_spheres(spheres, 0.1)
    assert len(scene) == 28
    sizes = {g.sigma for g in scene.gaussians}
    assert len(sizes) == 2  # one per distinct radius


def test_sphere_spec_invariant():
    with pytest.raises(ValueError):
        SphereSpec(center=(0, 0, 0), radius=0.0)


def test_custom_scheme_changes_solution():
    half_step = SampleScheme(offsets=tuple(range(-8, 1)), ell=0.5)
    default = calibrate_sphere(1.0, 0.1)
    fine = calibrate_sphere(1.0, 0.1, half_step)
    assert fine.beta != default.beta
    p = [RayGaussian(cbar=fine.c, mubar=30.0 * fine.sigma,
                     sigmabar=fine.sigma)]
    got = gaussian_visibility(p, 0, half_step)
    assert got == pytest.approx(0.9, abs=1e-4)
