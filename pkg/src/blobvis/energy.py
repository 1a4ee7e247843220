"""Data terms, color dissimilarity, quadratic priors, albedo back-projection.

Two image energies drive the inverse problems:

  photo-consistency   D_pc = sum_px ||L(px) - I(px)||^2
  color mismatch      D_mc = sum_px w(px) sum_q d(I(px), a_q) V_q(px)

d(.,.) is squared distance in linear RGB or in HSV with the value channel
scaled (hue wraps). Both energies and their full world-space gradients are
evaluated by the fused kernel; the slow reference versions below exist for
the dual-route tests.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import kernels
from .camera import Camera, Image, generate_ray
from .gradients import GradVector, chain_ray_to_world, grad_radiance
from .scene import Scene, project_scene
from .visibility import DEFAULT_SCHEME, SampleScheme, gaussian_visibility, radiance

__all__ = [
    "EnergyConfig",
    "color_dissimilarity",
    "d_pc",
    "d_mc",
    "energy_and_grad",
    "prior",
    "prior_grad",
    "back_project_albedo",
]


@dataclass
class EnergyConfig:
    term: str = "pc"                      # pc | mc
    color_space: str = "linear-rgb"       # linear-rgb | hsv-scaled
    hsv_value_scale: float = 0.2
    pixel_weighting: str = "uniform"      # uniform | per-pixel
    accel_weight: float = 0.0
    limit_weight: float = 0.0
    limit_lo: Optional[np.ndarray] = None
    limit_hi: Optional[np.ndarray] = None
    far_exclusion: Optional[bool] = None  # None: on for mc, off for pc

    def __post_init__(self):
        if self.term not in ("pc", "mc"):
            raise ValueError(f"unknown energy term {self.term!r}")
        if self.color_space not in ("linear-rgb", "hsv-scaled"):
            raise ValueError(f"unknown color space {self.color_space!r}")
        if self.pixel_weighting not in ("uniform", "per-pixel"):
            raise ValueError(f"unknown pixel weighting {self.pixel_weighting!r}")
        if self.accel_weight < 0.0 or self.limit_weight < 0.0:
            raise ValueError("prior weights must be nonnegative")
        if self.limit_lo is not None:
            self.limit_lo = np.asarray(self.limit_lo, dtype=np.float64)
        if self.limit_hi is not None:
            self.limit_hi = np.asarray(self.limit_hi, dtype=np.float64)
        if (self.limit_lo is not None and self.limit_hi is not None
                and np.any(self.limit_lo > self.limit_hi)):
            raise ValueError("parameter limits need lo <= hi")

    @property
    def exclusion_enabled(self) -> bool:
        if self.far_exclusion is None:
            return self.term == "mc"
        return self.far_exclusion


# ---------------------------------------------------------------------------
# color spaces

def rgb_to_hsv(rgb: np.ndarray) -> np.ndarray:
    """Hexcone RGB -> HSV, h in [0,1). Vectorized over leading axes."""
    rgb = np.asarray(rgb, dtype=np.float64)
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    mx = np.max(rgb, axis=-1)
    mn = np.min(rgb, axis=-1)
    c = mx - mn
    h = np.zeros_like(mx)
    mask = c > 0
    rm = mask & (mx == r)
    gm = mask & ~rm & (mx == g)
    bm = mask & ~rm & ~gm
    with np.errstate(invalid="ignore", divide="ignore"):
        h = np.where(rm, ((g - b) / np.where(c == 0, 1, c)) % 6.0, h)
        h = np.where(gm, (b - r) / np.where(c == 0, 1, c) + 2.0, h)
        h = np.where(bm, (r - g) / np.where(c == 0, 1, c) + 4.0, h)
    h = h / 6.0
    s = np.where(mx > 0, c / np.where(mx == 0, 1, mx), 0.0)
    return np.stack([h, s, mx], axis=-1)


def rgb_to_hsv_jacobian(rgb) -> tuple[np.ndarray, np.ndarray]:
    """(hsv, d(hsv)/d(rgb)) at one color. Piecewise analytic off the seams."""
    rgb = np.asarray(rgb, dtype=np.float64).reshape(3)
    imax = int(np.argmax(rgb))
    imin = int(np.argmin(rgb))
    mx = rgb[imax]
    mn = rgb[imin]
    c = mx - mn
    dmax = np.zeros(3)
    dmax[imax] = 1.0
    dmin = np.zeros(3)
    dmin[imin] = 1.0
    dc = dmax - dmin
    jac = np.zeros((3, 3))
    jac[2] = dmax  # value = max
    if mx > 0:
        jac[1] = (dc * mx - c * dmax) / (mx * mx)
    hsv = rgb_to_hsv(rgb)
    if c > 0:
        r, g, b = rgb
        e = np.eye(3)
        if imax == 0:
            num, dnum = g - b, e[1] - e[2]
        elif imax == 1:
            num, dnum = b - r, e[2] - e[0]
        else:
            num, dnum = r - g, e[0] - e[1]
        jac[0] = (dnum * c - num * dc) / (6.0 * c * c)
    return hsv, jac


def _hue_delta(h1, h2):
    """Nearest-image hue difference in [-1/2, 1/2]."""
    d = h1 - h2
    return d - np.round(d)


def color_dissimilarity(pixel, albedo, config: EnergyConfig) -> float:
    pixel = np.asarray(pixel, dtype=np.float64).reshape(3)
    albedo = np.asarray(albedo, dtype=np.float64).reshape(3)
    if config.color_space == "linear-rgb":
        d = pixel - albedo
        return float(d @ d)
    hp = rgb_to_hsv(pixel)
    ha = rgb_to_hsv(albedo)
    dh = float(_hue_delta(hp[0], ha[0]))
    ds = hp[1] - ha[1]
    dv = config.hsv_value_scale * (hp[2] - ha[2])
    return dh * dh + ds * ds + dv * dv


def dissimilarity_matrix(pixels: np.ndarray, albedos: np.ndarray,
                         config: EnergyConfig) -> np.ndarray:
    """d(I_i, a_q) for all pixel/blob pairs, [N, Q]."""
    pixels = np.asarray(pixels, dtype=np.float64).reshape(-1, 3)
    albedos = np.asarray(albedos, dtype=np.float64).reshape(-1, 3)
    if config.color_space == "linear-rgb":
        diff = pixels[:, None, :] - albedos[None, :, :]
        return np.einsum("nqc,nqc->nq", diff, diff)
    hp = rgb_to_hsv(pixels)
    ha = rgb_to_hsv(albedos)
    dh = _hue_delta(hp[:, None, 0], ha[None, :, 0])
    ds = hp[:, None, 1] - ha[None, :, 1]
    dv = config.hsv_value_scale * (hp[:, None, 2] - ha[None, :, 2])
    return dh * dh + ds * ds + dv * dv


def dissimilarity_grad_albedo(pixel, albedo, config: EnergyConfig) -> np.ndarray:
    """d d(I, a) / d a (3-vector)."""
    pixel = np.asarray(pixel, dtype=np.float64).reshape(3)
    albedo = np.asarray(albedo, dtype=np.float64).reshape(3)
    if config.color_space == "linear-rgb":
        return -2.0 * (pixel - albedo)
    hp = rgb_to_hsv(pixel)
    ha, jac = rgb_to_hsv_jacobian(albedo)
    dh = float(_hue_delta(hp[0], ha[0]))
    ds = hp[1] - ha[1]
    dv = hp[2] - ha[2]
    k = config.hsv_value_scale
    partial_hsv = np.array([-2.0 * dh, -2.0 * ds, -2.0 * k * k * dv])
    return jac.T @ partial_hsv


# ---------------------------------------------------------------------------
# image data terms (kernel path)

def _pixel_weights(image: Image, config: EnergyConfig) -> np.ndarray:
    n = image.height * image.width
    if config.pixel_weighting == "per-pixel":
        if image.weights is None:
            raise ValueError("per-pixel weighting requested but the image has no weights")
        return np.ascontiguousarray(image.weights.reshape(n))
    return np.ones(n)


def _check_dims(cam: Camera, image: Image):
    if image.height != cam.height or image.width != cam.width:
        raise ValueError("target image dimensions do not match the camera")


_DUMMY = np.zeros((1, 1))


def energy_and_grad(scene: Scene, cam: Camera, target: Image,
                    config: EnergyConfig, scheme: SampleScheme = DEFAULT_SCHEME,
                    want_grad: bool = True, coupling: bool = False):
    """Data-term value and (optionally) its world-space gradient."""
    _check_dims(cam, target)
    c, mu, sigma, albedo = scene.arrays()
    q = len(scene)
    if q == 0:
        val = float(np.sum(target.pixels**2)) if config.term == "pc" else 0.0
        return val, GradVector.zeros(0)
    dirs = cam.ray_directions()
    n = dirs.shape[0]
    offs = np.asarray(scheme.offsets, dtype=np.float64)
    tflat = np.ascontiguousarray(target.pixels.reshape(n, 3))
    excl = 1 if config.exclusion_enabled else 0
    l2max = kernels.cull_radius2(c, sigma, scene.cutoff)
    if config.term == "pc":
        value, gc, gmu, gsig, galb = kernels.energy_grad_rays(
            c, mu, sigma, albedo, l2max, cam.position, dirs, offs,
            scheme.ell, kernels.MODE_PC, tflat, _DUMMY, np.ones(1), excl,
            1 if coupling else 0, want_grad, False, _DUMMY)
        if coupling and np.any(c <= 0.0):
            raise ValueError("magnitude-sigma coupling requires positive magnitudes")
        return value, GradVector(gc, gmu, gsig, galb)
    pxw = _pixel_weights(target, config)
    dmat = dissimilarity_matrix(tflat, albedo, config)
    vis = np.zeros((n, q)) if want_grad else _DUMMY
    value, gc, gmu, gsig, galb = kernels.energy_grad_rays(
        c, mu, sigma, albedo, l2max, cam.position, dirs, offs,
        scheme.ell, kernels.MODE_MC, tflat, dmat, pxw, excl,
        1 if coupling else 0, want_grad, want_grad, vis)
    if coupling and np.any(c <= 0.0):
        raise ValueError("magnitude-sigma coupling requires positive magnitudes")
    if want_grad:
        # albedo gradient: sum_px w * dd/da_q * V_q, assembled per blob
        wv = vis * pxw[:, None]
        hp = rgb_to_hsv(tflat) if config.color_space == "hsv-scaled" else None
        for j in range(q):
            if config.color_space == "linear-rgb":
                diff = tflat - albedo[j]
                galb[j] = -2.0 * (wv[:, j] @ diff)
            else:
                ha, jac = rgb_to_hsv_jacobian(albedo[j])
                dh = _hue_delta(hp[:, 0], ha[0])
                ds = hp[:, 1] - ha[1]
                dv = hp[:, 2] - ha[2]
                k = config.hsv_value_scale
                partial = np.stack([-2.0 * dh, -2.0 * ds, -2.0 * k * k * dv], axis=-1)
                galb[j] = jac.T @ (wv[:, j] @ partial)
    return value, GradVector(gc, gmu, gsig, galb)


def d_pc(scene: Scene, cam: Camera, target: Image,
         scheme: SampleScheme = DEFAULT_SCHEME,
         config: Optional[EnergyConfig] = None) -> float:
    cfg = config if config is not None else EnergyConfig(term="pc")
    if cfg.term != "pc":
        raise ValueError("d_pc called with a non-pc config")
    value, _ = energy_and_grad(scene, cam, target, cfg, scheme, want_grad=False)
    return value


def d_mc(scene: Scene, cam: Camera, target: Image, config: EnergyConfig,
         scheme: SampleScheme = DEFAULT_SCHEME) -> float:
    if config.term != "mc":
        raise ValueError("d_mc called with a non-mc config")
    value, _ = energy_and_grad(scene, cam, target, config, scheme, want_grad=False)
    return value


# ---------------------------------------------------------------------------
# slow reference versions (dual route for the kernels)

def d_pc_reference(scene: Scene, cam: Camera, target: Image,
                   scheme: SampleScheme = DEFAULT_SCHEME) -> float:
    from .camera import render
    img = render(scene, cam, scheme, use_kernel=False)
    return float(np.sum((img.pixels - target.pixels) ** 2))


def d_mc_reference(scene: Scene, cam: Camera, target: Image,
                   config: EnergyConfig, scheme: SampleScheme = DEFAULT_SCHEME) -> float:
    _check_dims(cam, target)
    _, _, _, albedo = scene.arrays()
    pxw = _pixel_weights(target, config).reshape(cam.height, cam.width)
    total = 0.0
    for v in range(cam.height):
        for u in range(cam.width):
            ray = generate_ray(cam, u + 0.5, v + 0.5)
            projected = [p for p in project_scene(scene, ray)
                         if p.cbar >= scene.cutoff]
            for j, p in enumerate(projected):
                d = color_dissimilarity(target.pixels[v, u],
                                        albedo[p.source_index], config)
                total += pxw[v, u] * d * gaussian_visibility(projected, j, scheme)
    return total


def energy_grad_reference(scene: Scene, cam: Camera, target: Image,
                          config: EnergyConfig,
                          scheme: SampleScheme = DEFAULT_SCHEME,
                          coupling: bool = False):
    """Per-pixel composition of the reference gradient pieces. O(Q^3) per px."""
    _check_dims(cam, target)
    _, _, _, albedo = scene.arrays()
    q = len(scene)
    gv = GradVector.zeros(q)
    pxw = _pixel_weights(target, config).reshape(cam.height, cam.width)
    value = 0.0
    for v in range(cam.height):
        for u in range(cam.width):
            ray = generate_ray(cam, u + 0.5, v + 0.5)
            projected = project_scene(scene, ray)
            keep = [j for j in range(q) if projected[j].cbar >= scene.cutoff]
            sub = [projected[j] for j in keep]
            if config.term == "pc":
                if not sub:
                    value += float(np.sum(target.pixels[v, u] ** 2))
                    continue
                rg = grad_radiance(sub, albedo[keep], scheme)
                lhat = np.zeros(3)
                for a, j in enumerate(keep):
                    lhat += albedo[j] * rg.vis[a]
                resid = lhat - target.pixels[v, u]
                value += float(resid @ resid)
                for a, j in enumerate(keep):
                    dcb = 2.0 * float(resid @ rg.cbar[a])
                    dmb = 2.0 * float(resid @ rg.mubar[a])
                    dsb = 2.0 * float(resid @ rg.sigmabar[a])
                    dc, dmu, dsig = chain_ray_to_world(
                        scene.gaussians[j], ray, dcb, dmb, dsb, coupling)
                    gv.dc[j] += dc
                    gv.dmu[j] += dmu
                    gv.dsigma[j] += dsig
                    gv.dalbedo[j] += 2.0 * resid * rg.vis[a]
            else:
                if not sub:
                    continue
                w = pxw[v, u]
                dvals = [color_dissimilarity(target.pixels[v, u], albedo[j], config)
                         for j in keep]
                for a, j in enumerate(keep):
                    vis_a = gaussian_visibility(sub, a, scheme)
                    value += w * dvals[a] * vis_a
                    gv.dalbedo[j] += w * vis_a * dissimilarity_grad_albedo(
                        target.pixels[v, u], albedo[j], config)
                for p, jp in enumerate(keep):
                    dcb = dmb = dsb = 0.0
                    for a in range(len(keep)):
                        dcb += w * dvals[a] * grad_gaussian_visibility_ref(sub, a, scheme, "cbar", p)
                        dmb += w * dvals[a] * grad_gaussian_visibility_ref(sub, a, scheme, "mubar", p)
                        dsb += w * dvals[a] * grad_gaussian_visibility_ref(sub, a, scheme, "sigmabar", p)
                    dc, dmu, dsig = chain_ray_to_world(
                        scene.gaussians[jp], ray, dcb, dmb, dsb, coupling)
                    gv.dc[jp] += dc
                    gv.dmu[jp] += dmu
                    gv.dsigma[jp] += dsig
    return value, gv


def grad_gaussian_visibility_ref(projected, q, scheme, fieldname, p):
    from .gradients import grad_gaussian_visibility
    return grad_gaussian_visibility(projected, q, scheme, fieldname, p)


# ---------------------------------------------------------------------------
# priors

def _history(theta_history):
    hist = [np.asarray(t, dtype=np.float64) for t in theta_history]
    if len(hist) == 0:
        raise ValueError("prior needs at least the current parameter vector")
    while len(hist) < 3:
        hist.append(hist[-1])  # missing frames repeat the oldest one
    return hist[0], hist[1], hist[2]


def prior(theta_history, config: EnergyConfig) -> float:
    """w_a ||theta_t - 2 theta_{t-1} + theta_{t-2}||^2 + limit violations.

    theta_history is ordered newest first.
    """
    t0, t1, t2 = _history(theta_history)
    accel = t0 - 2.0 * t1 + t2
    total = config.accel_weight * float(accel @ accel)
    if config.limit_weight > 0.0:
        viol = np.zeros_like(t0)
        if config.limit_lo is not None:
            viol = np.maximum(viol, config.limit_lo - t0)
        if config.limit_hi is not None:
            viol = np.maximum(viol, t0 - config.limit_hi)
        total += config.limit_weight * float(viol @ viol)
    return total


def prior_grad(theta_history, config: EnergyConfig) -> np.ndarray:
    """Gradient of the prior with respect to the newest parameter vector."""
    t0, t1, t2 = _history(theta_history)
    g = 2.0 * config.accel_weight * (t0 - 2.0 * t1 + t2)
    if config.limit_weight > 0.0:
        if config.limit_lo is not None:
            low = config.limit_lo - t0
            g -= 2.0 * config.limit_weight * np.where(low > 0.0, low, 0.0)
        if config.limit_hi is not None:
            high = t0 - config.limit_hi
            g += 2.0 * config.limit_weight * np.where(high > 0.0, high, 0.0)
    return g


# ---------------------------------------------------------------------------
# albedo back-projection

def back_project_albedo(scene: Scene, cameras, images,
                        scheme: SampleScheme = DEFAULT_SCHEME,
                        min_visibility: float = 1e-9):
    """Visibility-weighted average of observed colors per blob, over all views.

    Returns (albedos [Q,3], flagged [Q]); blobs whose accumulated visibility
    stays below min_visibility keep their current albedo and are flagged.
    """
    c, mu, sigma, albedo = scene.arrays()
    q = len(scene)
    num = np.zeros((q, 3))
    den = np.zeros(q)
    offs = np.asarray(scheme.offsets, dtype=np.float64)
    for cam, img in zip(cameras, images):
        _check_dims(cam, img)
        dirs = cam.ray_directions()
        l2max = kernels.cull_radius2(c, sigma, scene.cutoff)
        vis = kernels.visibility_rays(c, mu, sigma, l2max, cam.position,
                                      dirs, offs, scheme.ell)
        px = img.pixels.reshape(-1, 3)
        num += vis.T @ px
        den += vis.sum(axis=0)
    flagged = den < min_visibility
    out = albedo.copy()
    good = ~flagged
    out[good] = num[good] / den[good, None]
    return out, flagged
