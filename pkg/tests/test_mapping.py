import math

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from blobvis.energy import EnergyConfig
from blobvis.inverse import Problem
from blobvis.gradients import fd_check
from blobvis.mapping import PoseParams, RigidObject, apply_mapping, \
    free_params, mapping_jacobian, pullback, rigid_params, rodrigues, \
    rotation_derivatives
from blobvis.scene import Gaussian, Scene

from conftest import random_image, random_scene, tiny_camera
from oracles import central_diff


def scene_close(a: Scene, b: Scene, tol=0.0):
    assert len(a) == len(b)
    for ga, gb in zip(a.gaussians, b.gaussians):
        assert abs(ga.c - gb.c) <= tol
        assert abs(ga.sigma - gb.sigma) <= tol
        assert np.max(np.abs(ga.mu - gb.mu)) <= tol
        assert np.max(np.abs(ga.albedo - gb.albedo)) <= tol


def test_rodrigues_matches_scipy():
    rng = np.random.default_rng(1)
    for _ in range(10):
        w = rng.normal(size=3) * rng.uniform(0.1, 3.0)
        want = Rotation.from_rotvec(w).as_matrix()
        assert np.max(np.abs(rodrigues(w) - want)) < 1e-12


def test_rodrigues_tiny_angle():
    w = np.array([1e-13, -2e-13, 5e-14])
    R = rodrigues(w)
    assert np.max(np.abs(R - Rotation.from_rotvec(w).as_matrix())) < 1e-15
    assert np.max(np.abs(R @ R.T - np.eye(3))) < 1e-15


def test_rotation_derivatives_fd():
    rng = np.random.default_rng(2)
    for w in (rng.normal(size=3), np.zeros(3), np.array([1e-13, 0, 0])):
        R, dR = rotation_derivatives(w)
        assert np.max(np.abs(R - rodrigues(w))) < 1e-15
        for i in range(3):
            h = 1e-7
            wp, wm = w.copy(), w.copy()
            wp[i] += h
            wm[i] -= h
            num = (rodrigues(wp) - rodrigues(wm)) / (2 * h)
            assert np.max(np.abs(dR[i] - num)) < 1e-6


def test_identity_transform_is_noop():
    rng = np.random.default_rng(3)
    template = random_scene(rng, nmin=3, nmax=3)
    params = rigid_params((RigidObject(indices=(0, 1, 2)),))
    scene_close(apply_mapping(params, template), template)


def test_pure_translation():
    rng = np.random.default_rng(4)
    template = random_scene(rng, nmin=2, nmax=2)
    params = rigid_params((RigidObject(indices=(0, 1)),),
                          values=np.array([1.0, 2.0, 3.0, 0, 0, 0]))
    moved = apply_mapping(params, template)
    for g, t in zip(moved.gaussians, template.gaussians):
        assert np.allclose(g.mu, t.mu + [1, 2, 3], atol=1e-15)
        assert g.sigma == t.sigma and g.c == t.c


def test_quarter_turn_about_z():
    template = Scene(gaussians=(
        Gaussian(c=1.0, mu=(1.0, 0.0, 0.0), sigma=0.3),), m=0.1)
    params = rigid_params(
        (RigidObject(indices=(0,)),),
        values=np.array([0, 0, 0, 0, 0, math.pi / 2]))
    got = apply_mapping(params, template).gaussians[0].mu
    assert np.max(np.abs(got - [0.0, 1.0, 0.0])) < 1e-12


def test_rotation_about_object_origin():
    template = Scene(gaussians=(
        Gaussian(c=1.0, mu=(2.0, 0.0, 4.0), sigma=0.3),), m=0.1)
    params = rigid_params(
        (RigidObject(indices=(0,), origin=(1.0, 0.0, 4.0)),),
        values=np.array([0, 0, 0, 0, 0, math.pi / 2]))
    got = apply_mapping(params, template).gaussians[0].mu
    # the center sits 1 unit from the pivot; a quarter turn sends it to +y
    assert np.max(np.abs(got - [1.0, 1.0, 4.0])) < 1e-12


def test_position_only_object_ignores_rotation_slots():
    rng = np.random.default_rng(5)
    template = random_scene(rng, nmin=2, nmax=2)
    params = rigid_params((RigidObject(indices=(0,), mode="position"),
                           RigidObject(indices=(1,), mode="position")),
                          values=np.array([0.1, 0.2, 0.3, -0.1, 0.0, 0.4]))
    assert params.dim == 6
    moved = apply_mapping(params, template)
    assert np.allclose(moved.gaussians[0].mu,
                       template.gaussians[0].mu + [0.1, 0.2, 0.3])
    assert np.allclose(moved.gaussians[1].mu,
                       template.gaussians[1].mu + [-0.1, 0.0, 0.4])


def test_rigid_roundtrip_inverse():
    rng = np.random.default_rng(6)
    template = random_scene(rng, nmin=3, nmax=3)
    origin = (0.2, -0.1, 3.0)
    t = rng.uniform(-0.5, 0.5, 3)
    w = rng.normal(size=3) * 0.8
    fwd = rigid_params((RigidObject(indices=(0, 1, 2), origin=origin),),
                       values=np.concatenate([t, w]))
    moved = apply_mapping(fwd, template)
    back = rigid_params(
        (RigidObject(indices=(0, 1, 2), origin=tuple(np.add(origin, t))),),
        values=np.concatenate([-t, -w]))
    scene_close(apply_mapping(back, moved), template, tol=1e-12)


def test_free_mapping_reads_theta():
    rng = np.random.default_rng(7)
    template = random_scene(rng, nmin=3, nmax=3)
    params = free_params(template)
    # identity: values initialized from the template itself
    scene_close(apply_mapping(params, template), template, tol=1e-15)
    v = params.values.copy()
    v[0:3] = [9.0, 8.0, 7.0]
    v[3] = math.log(0.25)
    moved = apply_mapping(params.with_values(v), template)
    assert np.allclose(moved.gaussians[0].mu, [9, 8, 7])
    assert moved.gaussians[0].sigma == pytest.approx(0.25, rel=1e-15)
    # untouched blobs keep their parameters
    assert moved.gaussians[1].sigma == template.gaussians[1].sigma


def test_pose_params_validation():
    with pytest.raises(ValueError):
        PoseParams(values=np.zeros(5), mapping="rigid",
                   objects=(RigidObject(indices=(0,)),))
    with pytest.raises(ValueError):
        PoseParams(values=np.zeros(3), mapping="warp")
    with pytest.raises(ValueError):
        RigidObject(indices=(0, 0))
    with pytest.raises(ValueError):
        RigidObject(indices=())
    with pytest.raises(ValueError):
        apply_mapping(rigid_params((RigidObject(indices=(0,)),
                                    RigidObject(indices=(0,)))),
                      Scene(gaussians=(Gaussian(c=1, mu=(0, 0, 3),
                                                sigma=0.3),), m=0.1))


def test_jacobian_translation_blocks_identity():
    rng = np.random.default_rng(8)
    template = random_scene(rng, nmin=2, nmax=2)
    params = rigid_params((RigidObject(indices=(0, 1)),))
    J = mapping_jacobian(params, template)
    assert J.shape == (16, 6)
    for q in range(2):
        rows = [8 * q + 1, 8 * q + 2, 8 * q + 3]  # mu rows in flat layout
        assert np.array_equal(J[np.ix_(rows, [0, 1, 2])], np.eye(3))
        assert np.all(J[8 * q] == 0.0)      # c never moves
        assert np.all(J[8 * q + 4] == 0.0)  # sigma never moves


def test_jacobian_free_sigma_is_sigma():
    rng = np.random.default_rng(9)
    template = random_scene(rng, nmin=2, nmax=2)
    params = free_params(template)
    J = mapping_jacobian(params, template)
    assert J.shape == (16, 8)
    for q in range(2):
        assert J[8 * q + 4, 4 * q + 3] == pytest.approx(
            template.gaussians[q].sigma, rel=1e-15)


def test_jacobian_matches_fd():
    rng = np.random.default_rng(10)
    template = random_scene(rng, nmin=4, nmax=4)
    objects = (RigidObject(indices=(0, 2), origin=(0.1, 0.0, 3.0)),
               RigidObject(indices=(1, 3), mode="position"))
    for params in (rigid_params(objects,
                                values=rng.normal(scale=0.3, size=9)),
                   free_params(template, indices=(0, 1),
                               values=None)):
        theta0 = params.values.copy()
        J = mapping_jacobian(params, template)

        def gamma(theta):
            scene = apply_mapping(params.with_values(theta), template)
            c, mu, sigma, albedo = scene.arrays()
            out = np.empty(8 * len(scene))
            out[0::8] = c
            out[1::8], out[2::8], out[3::8] = mu[:, 0], mu[:, 1], mu[:, 2]
            out[4::8] = sigma
            out[5::8], out[6::8], out[7::8] = (albedo[:, 0], albedo[:, 1],
                                               albedo[:, 2])
            return out

        for i in range(params.dim):
            num = central_diff(lambda v: gamma(v), theta0, i, 1e-6)
            assert np.max(np.abs(J[:, i] - num)) < 1e-6


def test_pullback_is_jacobian_transpose():
    rng = np.random.default_rng(11)
    template = random_scene(rng, nmin=3, nmax=3)
    params = rigid_params((RigidObject(indices=(0, 1, 2)),),
                          values=rng.normal(scale=0.2, size=6))
    from blobvis.gradients import GradVector
    g = GradVector.zeros(3)
    g.dc[:] = rng.normal(size=3)
    g.dmu[:] = rng.normal(size=(3, 3))
    g.dsigma[:] = rng.normal(size=3)
    g.dalbedo[:] = rng.normal(size=(3, 3))
    want = mapping_jacobian(params, template).T @ g.flat()
    assert np.allclose(pullback(params, template, g), want, atol=1e-14)


def test_chain_rule_free_mapping_master():
    """Free-blob positions and log-widths through the full energy: the
    analytic chain must match finite differences of F(theta)."""
    rng = np.random.default_rng(12)
    template = random_scene(rng, nmin=3, nmax=3, cutoff=1e-5)
    cam = tiny_camera(8)
    target = random_image(rng, cam)
    params = free_params(template)
    for term in ("pc", "mc"):
        problem = Problem(template=template, params=params, cameras=[cam],
                          targets=[target],
                          config=EnergyConfig(term=term,
                                              color_space="hsv-scaled"))
        theta = params.values + rng.normal(scale=0.02, size=params.dim)
        report = fd_check(problem.objective, problem.gradient, theta)
        assert report.max_rel_error() < 1e-4, report.format_table()
