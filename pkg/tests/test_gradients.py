import math

import numpy as np
import pytest

from blobvis.camera import render
from blobvis.energy import EnergyConfig, energy_and_grad
from blobvis.gradients import FDReport, GradVector, chain_ray_to_world, \
    fd_check, grad_gaussian_visibility, grad_radiance, grad_transmittance
from blobvis.mapping import RigidObject, rigid_params
from blobvis.inverse import Problem
from blobvis.scene import Gaussian, Ray, RayGaussian, project_to_ray, \
    project_scene
from blobvis.visibility import DEFAULT_SCHEME, SampleScheme, \
    gaussian_visibility, radiance, transmittance

from conftest import random_scene, random_image, tiny_camera
from oracles import central_diff, fd_gradient, fd_mismatch


def perturbed(projected, p, fieldname, delta):
    rg = projected[p]
    kw = dict(cbar=rg.cbar, mubar=rg.mubar, sigmabar=rg.sigmabar,
              source_index=rg.source_index)
    kw[fieldname] += delta
    out = list(projected)
    out[p] = RayGaussian(**kw)
    return out


def random_projected(rng, n):
    return [RayGaussian(cbar=float(rng.uniform(0.1, 2.0)),
                        mubar=float(rng.uniform(1.0, 6.0)),
                        sigmabar=float(rng.uniform(0.2, 0.8)),
                        source_index=i) for i in range(n)]


def test_grad_transmittance_at_zero():
    p = [RayGaussian(cbar=1.0, mubar=3.0, sigmabar=0.5)]
    assert grad_transmittance(p, 0.0, "cbar", 0) == 0.0


def test_grad_transmittance_mubar_closed_form():
    rg = RayGaussian(cbar=0.8, mubar=2.5, sigmabar=0.6)
    s = 3.1
    t = transmittance([rg], s)
    e1 = math.exp(-((s - rg.mubar) ** 2) / (2 * rg.sigmabar ** 2))
    e2 = math.exp(-(rg.mubar ** 2) / (2 * rg.sigmabar ** 2))
    want = t * rg.cbar * (e1 - e2)
    assert grad_transmittance([rg], s, "mubar", 0) == pytest.approx(
        want, rel=1e-14)


def test_grad_transmittance_constant_s_fd():
    rng = np.random.default_rng(17)
    p = random_projected(rng, 5)
    for s in (1.5, 3.0, 5.5):
        for i in range(5):
            for fieldname in ("cbar", "mubar", "sigmabar"):
                got = grad_transmittance(p, s, fieldname, i)
                h = 1e-5
                num = (transmittance(perturbed(p, i, fieldname, h), s)
                       - transmittance(perturbed(p, i, fieldname, -h), s)
                       ) / (2 * h)
                assert got == pytest.approx(num, rel=1e-6, abs=1e-10)


def test_grad_transmittance_self_sampling_fd():
    """When s rides on blob p's own sample, the derivative carries the
    moving-location chain term."""
    rng = np.random.default_rng(23)
    p = random_projected(rng, 3)
    q = 1
    ell = 1.0
    for k in (-3, -1, 0):
        for fieldname in ("mubar", "sigmabar"):
            rg = p[q]
            s = rg.mubar + k * ell * rg.sigmabar
            got = grad_transmittance(p, s, fieldname, q, self_index=q,
                                     sample_offset=k * ell)

            def f(x):
                moved = perturbed(p, q, fieldname, x - getattr(rg, fieldname))
                m = moved[q]
                return transmittance(moved, m.mubar + k * ell * m.sigmabar)

            h = 1e-6
            x0 = getattr(rg, fieldname)
            num = (f(x0 + h) - f(x0 - h)) / (2 * h)
            assert got == pytest.approx(num, rel=1e-5, abs=1e-9)


def test_grad_transmittance_bad_inputs():
    p = [RayGaussian(cbar=1.0, mubar=3.0, sigmabar=0.5)]
    with pytest.raises(ValueError):
        grad_transmittance(p, 1.0, "albedo", 0)
    with pytest.raises(IndexError):
        grad_transmittance(p, 1.0, "cbar", 2)


def test_grad_visibility_distant_blob_decouples():
    """A blob entirely beyond the samples cannot shade them, so dV/d(its
    magnitude) vanishes."""
    near = RayGaussian(cbar=1.0, mubar=2.0, sigmabar=0.3, source_index=0)
    far = RayGaussian(cbar=1e-12, mubar=40.0, sigmabar=0.3, source_index=1)
    got = grad_gaussian_visibility([near, far], 0, DEFAULT_SCHEME, "cbar", 1)
    assert abs(got) < 1e-9


def test_grad_visibility_self_mubar_cancels():
    p = [RayGaussian(cbar=1.0, mubar=8.0, sigmabar=1.0)]
    got = grad_gaussian_visibility(p, 0, DEFAULT_SCHEME, "mubar", 0)
    assert abs(got) < 1e-9


def test_grad_visibility_occlusion_fd():
    front = RayGaussian(cbar=1.4, mubar=2.0, sigmabar=0.4, source_index=0)
    rear = RayGaussian(cbar=0.9, mubar=3.2, sigmabar=0.5, source_index=1)
    p = [front, rear]
    for q in (0, 1):
        for i in (0, 1):
            for fieldname in ("cbar", "mubar", "sigmabar"):
                got = grad_gaussian_visibility(p, q, DEFAULT_SCHEME,
                                               fieldname, i)

                def f(x, i=i, q=q, fieldname=fieldname):
                    moved = perturbed(p, i, fieldname,
                                      x - getattr(p[i], fieldname))
                    return gaussian_visibility(moved, q)

                x0 = getattr(p[i], fieldname)
                h = 1e-6 * max(1.0, abs(x0))
                num = (f(x0 + h) - f(x0 - h)) / (2 * h)
                assert got == pytest.approx(num, rel=1e-5, abs=1e-9)


def test_grad_radiance_zero_albedo():
    rng = np.random.default_rng(5)
    p = random_projected(rng, 3)
    g = grad_radiance(p, np.zeros((3, 3)))
    assert np.all(g.cbar == 0.0)
    assert np.all(g.mubar == 0.0)
    assert np.all(g.sigmabar == 0.0)


def test_grad_radiance_albedo_block_is_visibility():
    rng = np.random.default_rng(6)
    p = random_projected(rng, 4)
    g = grad_radiance(p, rng.uniform(0, 1, (4, 3)))
    for q in range(4):
        assert g.vis[q] == gaussian_visibility(p, q)


def test_grad_radiance_fd():
    rng = np.random.default_rng(8)
    p = random_projected(rng, 3)
    albedos = rng.uniform(0.1, 1.0, (3, 3))
    g = grad_radiance(p, albedos)
    weights = np.array([0.3, 1.1, -0.7])  # probe one scalar channel mix

    for i in range(3):
        for fieldname, block in (("cbar", g.cbar), ("mubar", g.mubar),
                                 ("sigmabar", g.sigmabar)):
            def f(x, i=i, fieldname=fieldname):
                moved = perturbed(p, i, fieldname,
                                  x - getattr(p[i], fieldname))
                return float(weights @ radiance(moved, albedos))

            x0 = getattr(p[i], fieldname)
            h = 1e-6 * max(1.0, abs(x0))
            num = (f(x0 + h) - f(x0 - h)) / (2 * h)
            assert float(weights @ block[i]) == pytest.approx(
                num, rel=1e-5, abs=1e-9)


def test_chain_through_center_sigma_term_vanishes():
    g = Gaussian(c=2.0, mu=(0.0, 0.0, 4.0), sigma=0.5)
    ray = Ray(origin=(0, 0, 0), direction=(0, 0, 1))
    dc, dmu, dsigma = chain_ray_to_world(g, ray, d_cbar=1.7, d_mubar=0.0,
                                         d_sigmabar=0.9)
    assert dsigma == 0.9  # lateral distance is zero, only dsbar survives
    assert dc == 1.7      # exp factor is 1 on the center ray


def test_chain_mubar_moves_along_direction():
    g = Gaussian(c=1.0, mu=(0.3, -0.2, 3.0), sigma=0.4)
    n = np.array([0.0, 0.6, 0.8])
    ray = Ray(origin=(0, 0, 0), direction=n)
    _, dmu, _ = chain_ray_to_world(g, ray, d_cbar=0.0, d_mubar=1.0,
                                   d_sigmabar=0.0)
    assert np.allclose(dmu, n, atol=1e-15)


def test_chain_matches_projection_fd():
    rng = np.random.default_rng(12)
    for _ in range(5):
        g = Gaussian(c=float(rng.uniform(0.3, 3.0)),
                     mu=rng.uniform(-1, 1, 3) + [0, 0, 3],
                     sigma=float(rng.uniform(0.2, 0.8)))
        n = rng.normal(size=3)
        n /= np.linalg.norm(n)
        ray = Ray(origin=rng.uniform(-0.5, 0.5, 3), direction=n)
        a, b, c3 = rng.normal(size=3)

        def f(v):
            gg = Gaussian(c=v[0], mu=v[1:4], sigma=v[4])
            rg = project_to_ray(gg, ray)
            return a * rg.cbar + b * rg.mubar + c3 * rg.sigmabar

        dc, dmu, dsigma = chain_ray_to_world(g, ray, d_cbar=a, d_mubar=b,
                                             d_sigmabar=c3)
        v0 = np.array([g.c, *g.mu, g.sigma])
        num = fd_gradient(f, v0, h_scale=1e-6)
        got = np.array([dc, *dmu, dsigma])
        bad, rel, _ = fd_mismatch(got, num, rel_tol=1e-6, abs_tol=1e-9)
        assert bad.size == 0, f"components {bad} off, rel {rel[bad]}"


def test_chain_coupling_constant_depth():
    """With magnitude tied to sigma by c*sigma = const, the chain term
    dc/dsigma = -c/sigma reproduces finite differences."""
    g = Gaussian(c=2.0, mu=(0.4, 0.1, 3.0), sigma=0.5)
    ray = Ray(origin=(0, 0, 0), direction=(0, 0, 1))
    depth = g.c * g.sigma

    def f(sigma):
        gg = Gaussian(c=depth / sigma, mu=g.mu, sigma=sigma)
        return project_to_ray(gg, ray).cbar

    _, _, dsigma = chain_ray_to_world(g, ray, d_cbar=1.0, d_mubar=0.0,
                                      d_sigmabar=0.0, coupling=True)
    num = central_diff(lambda v: f(v[0]), np.array([g.sigma]), 0, 1e-7)
    assert dsigma == pytest.approx(num, rel=1e-6)
    with pytest.raises(ValueError):
        chain_ray_to_world(Gaussian(c=0.0, mu=g.mu, sigma=0.5), ray,
                           1.0, 0.0, 0.0, coupling=True)


def test_fd_check_quadratic():
    A = np.diag([1.0, 2.0, 3.0])
    f = lambda x: 0.5 * float(x @ A @ x)
    grad = lambda x: A @ x
    report = fd_check(f, grad, np.array([0.4, -1.2, 2.0]))
    assert report.max_rel_error() < 1e-10
    assert not report.nan_flagged


def test_fd_check_flags_scaled_gradient():
    A = np.diag([1.0, 2.0, 3.0])
    f = lambda x: 0.5 * float(x @ A @ x)
    wrong = lambda x: 2.0 * (A @ x)
    report = fd_check(f, wrong, np.array([0.4, -1.2, 2.0]))
    for e in report.entries:
        assert e.rel_error == pytest.approx(1.0, abs=1e-6)


def test_fd_check_flags_nan():
    report = fd_check(lambda x: math.nan, lambda x: np.zeros(1),
                      np.zeros(1))
    assert report.nan_flagged


def test_fd_check_table_format():
    report = fd_check(lambda x: float(x @ x), lambda x: 2 * x,
                      np.array([1.0, 2.0]), names=["a", "b"])
    table = report.format_table()
    assert "a" in table and "rel error" in table
    assert len(table.splitlines()) == 3


def test_fd_check_rigid_photo_consistency():
    """Full pipeline: photo-consistency of a two-object rigid scene against
    finite differences over all 9 pose parameters."""
    rng = np.random.default_rng(31)
    template = random_scene(rng, nmin=5, nmax=5, cutoff=1e-5)
    cam = tiny_camera(8)
    target = random_image(rng, cam)
    objects = (RigidObject(indices=(0, 1), origin=(0.0, 0.0, 3.0),
                           mode="full"),
               RigidObject(indices=(2, 3, 4), mode="position"))
    params = rigid_params(objects)
    problem = Problem(template=template, params=params, cameras=[cam],
                      targets=[target], config=EnergyConfig(term="pc"))
    theta = rng.normal(scale=0.05, size=9)
    report = fd_check(problem.objective, problem.gradient, theta)
    assert report.max_rel_error() < 1e-4


def test_pc_gradient_stationary_at_perfect_fit():
    rng = np.random.default_rng(14)
    scene = random_scene(rng, nmin=3, nmax=3, cutoff=1e-5)
    cam = tiny_camera(8)
    target = render(scene, cam)
    _, g = energy_and_grad(scene, cam, target, EnergyConfig(term="pc"))
    assert np.max(np.abs(g.flat())) < 1e-9


def test_cutoff_excluded_blocks_exactly_zero():
    rng = np.random.default_rng(15)
    scene = random_scene(rng, nmin=2, nmax=2, cutoff=1e-5)
    outlier = Gaussian(c=0.5, mu=(500.0, 0.0, 3.0), sigma=0.2)
    scene = scene.with_gaussians((*scene.gaussians, outlier))
    cam = tiny_camera(8)
    target = random_image(rng, cam)
    for term in ("pc", "mc"):
        _, g = energy_and_grad(scene, cam, target, EnergyConfig(term=term))
        assert g.dc[2] == 0.0
        assert np.all(g.dmu[2] == 0.0)
        assert g.dsigma[2] == 0.0
        assert np.all(g.dalbedo[2] == 0.0)


def test_grad_vector_flat_layout():
    g = GradVector.zeros(2)
    g.dc[:] = [1, 9]
    g.dmu[:] = [[2, 3, 4], [10, 11, 12]]
    g.dsigma[:] = [5, 13]
    g.dalbedo[:] = [[6, 7, 8], [14, 15, 16]]
    assert np.array_equal(g.flat(), np.arange(1.0, 17.0))
    assert g.all_finite()
    g.dc[0] = math.inf
    assert not g.all_finite()
