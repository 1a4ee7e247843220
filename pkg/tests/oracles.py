"""Independent oracles the tests compare the library against.

Nothing here may call the closed forms under test: transmittance comes
from adaptive quadrature of the 1D density, visibility from quadrature
transmittance at the sampling locations, inflection points from dense
numeric differentiation, and gradients from plain central differences.
"""

import numpy as np
from scipy.integrate import quad


def density_1d(projected, s):
    """Sum of projected 1D Gaussians at ray parameter s."""
    total = 0.0
    for g in projected:
        u = (s - g.mubar) / g.sigmabar
        total += g.cbar * np.exp(-0.5 * u * u)
    return total


def transmittance_quad(projected, s, epsabs=1e-12):
    """T(s) = exp(-integral of the ray density from 0 to s), integrated
    numerically with breakpoints at the Gaussian centers."""
    if s == 0.0:
        return 1.0
    pts = sorted(g.mubar for g in projected if 0.0 < g.mubar < s)
    val, _ = quad(lambda t: density_1d(projected, t), 0.0, s,
                  points=pts or None, limit=400, epsabs=epsabs, epsrel=1e-12)
    return float(np.exp(-val))


def gaussian_visibility_quad(projected, q, offsets=(-4, -3, -2, -1, 0),
                             ell=1.0):
    """Sampled per-blob visibility with quadrature transmittance in place
    of the closed form."""
    g = projected[q]
    lam = ell * g.sigmabar
    total = 0.0
    for k in offsets:
        s = g.mubar + k * lam
        gq = g.cbar * np.exp(-0.5 * (k * ell) ** 2)
        total += lam * transmittance_quad(projected, s) * gq
    return total


def central_diff(f, x, i, h):
    xp = np.array(x, dtype=np.float64)
    xm = np.array(x, dtype=np.float64)
    xp[i] += h
    xm[i] -= h
    return (f(xp) - f(xm)) / (2.0 * h)


def fd_gradient(f, x, h_scale=1e-5):
    """Plain central differences with a two-rung step (h, h/2), keeping
    the rung pair's average when they agree and the smaller step when
    truncation dominates."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    for i in range(x.size):
        h = h_scale * max(1.0, abs(x[i]))
        d1 = central_diff(f, x, i, h)
        d2 = central_diff(f, x, i, h / 2.0)
        # Richardson: if both rungs agree the value is converged; else
        # the half step is closer to the limit for smooth f.
        out[i] = d2 if abs(d1 - d2) > 1e-12 * max(1.0, abs(d2)) else d1
    return out


def fd_mismatch(analytic, numeric, rel_tol=1e-4, abs_tol=1e-7):
    """Indices where the gradient check fails the rel-or-abs policy."""
    analytic = np.asarray(analytic)
    numeric = np.asarray(numeric)
    abs_err = np.abs(analytic - numeric)
    rel_err = abs_err / np.maximum(np.abs(numeric), 1e-12)
    small = np.minimum(np.abs(analytic), np.abs(numeric)) < 1e-6
    bad = np.where(small, abs_err >= abs_tol,
                   (rel_err >= rel_tol) & (abs_err >= abs_tol))
    return np.nonzero(bad)[0], rel_err, abs_err


def profile_inflection_dense(profile, r_max, n=4001):
    """Falling-edge inflection of a radial visibility profile on a dense
    uniform grid: the second-difference zero crossing bracketing the
    steepest descent. High-amplitude profiles can wiggle near the center
    (the sampled self-visibility is not monotone in optical depth), so
    the first sign change anywhere is not a usable definition."""
    d = np.linspace(0.0, r_max, n)
    v = np.array([profile(x) for x in d])
    dv = np.diff(v)
    j = int(np.argmin(dv))
    if j < 1 or j >= n - 2:
        raise ValueError("no inflection in range")
    dd = np.diff(v, 2)
    # v'' at nodes d[j] and d[j+1] straddles zero around the steepest slope
    y0, y1 = dd[j - 1], dd[j]
    if y1 == y0:
        return d[j]
    return d[j] + (d[j + 1] - d[j]) * (-y0) / (y1 - y0)


def render_reference(scene, cam, scheme=None):
    """Per-pixel render through the pure-Python ray path (no compiled
    kernels), used as the second route against the batched renderer."""
    from blobvis.camera import generate_ray
    from blobvis.scene import project_scene
    from blobvis.visibility import DEFAULT_SCHEME, apply_cutoff, radiance

    scheme = scheme or DEFAULT_SCHEME
    albedos = np.array([g.albedo for g in scene.gaussians], dtype=np.float64)
    out = np.zeros((cam.height, cam.width, 3))
    for v in range(cam.height):
        for u in range(cam.width):
            ray = generate_ray(cam, u + 0.5, v + 0.5)
            projected = apply_cutoff(project_scene(scene, ray), scene.cutoff)
            if not projected:
                continue
            idx = [g.source_index for g in projected]
            out[v, u] = radiance(projected, albedos[idx], scheme)
    return out
