"""Analytic derivatives of the light-transport quantities, plus an FD checker.

Everything a pixel computes is built from the transmittance exponent

    B(s) = sum_p sqrt(pi/2) sbar_p cbar_p (erf(-mubar_p/(sqrt2 sbar_p))
                                           - erf((s-mubar_p)/(sqrt2 sbar_p))),

so its partials are the atoms here. With e1_p(s) = exp(-(s-mubar_p)^2/(2 sbar_p^2))
and e2_p = e1_p(0):

    dB/dcbar_p = sqrt(pi/2) sbar_p (erf(..0..) - erf(..s..))
    dB/dmubar_p = cbar_p (e1_p - e2_p)
    dB/dsbar_p = sqrt(pi/2) cbar_p (erf(..0..) - erf(..s..))
                 + cbar_p (s - mubar_p)/sbar_p e1_p + cbar_p mubar_p/sbar_p e2_p
    dB/ds = -sum_p cbar_p e1_p(s)

Sampled visibilities evaluate T at s_k = mubar_q + k ell sbar_q, so the
blob's own parameters also move the sample locations: total derivatives
add dB/ds with ds_k/dmubar_q = 1 and ds_k/dsbar_q = k ell, while the
blob's density at its own samples is cbar_q exp(-(k ell)^2/2), free of
mubar_q and sbar_q. These forms were verified against central finite
differences; the FD harness at the bottom is the arbiter for all of them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf

from .scene import Gaussian, Ray
from .visibility import DEFAULT_SCHEME, SQRT_HALF_PI, SampleScheme, transmittance

SQRT2 = math.sqrt(2.0)

RAY_FIELDS = ("cbar", "mubar", "sigmabar")


def _exponent_partial(projected, s: float, fieldname: str, p: int) -> float:
    """dB/d(ray-space parameter of blob p) at fixed s."""
    rg = projected[p]
    sb = rg.sigmabar
    z0 = -rg.mubar / (SQRT2 * sb)
    zs = (s - rg.mubar) / (SQRT2 * sb)
    derf = erf(z0) - erf(zs)
    e1 = math.exp(-((s - rg.mubar) ** 2) / (2.0 * sb * sb))
    e2 = math.exp(-(rg.mubar**2) / (2.0 * sb * sb))
    if fieldname == "cbar":
        return SQRT_HALF_PI * sb * derf
    if fieldname == "mubar":
        return rg.cbar * (e1 - e2)
    if fieldname == "sigmabar":
        return rg.cbar * (SQRT_HALF_PI * derf
                          + ((s - rg.mubar) / sb) * e1
                          + (rg.mubar / sb) * e2)
    raise ValueError(f"unknown ray-space parameter {fieldname!r}")


def _exponent_s_partial(projected, s: float) -> float:
    """dB/ds = -(1D mixture density at s)."""
    total = 0.0
    for rg in projected:
        total += rg.cbar * math.exp(-((s - rg.mubar) ** 2) / (2.0 * rg.sigmabar**2))
    return -total


def grad_transmittance(projected, s: float, fieldname: str, p: int,
                       self_index: int | None = None,
                       sample_offset: float = 0.0) -> float:
    """dT(s)/d(parameter of blob p).

    With self_index == p the location s is understood to be a sample of
    blob p itself (s = mubar_p + sample_offset * sbar_p), so the derivative
    includes the moving-sample chain term; otherwise s is held constant.
    """
    if not 0 <= p < len(projected):
        raise IndexError(f"blob index {p} out of range")
    t = transmittance(projected, s)
    db = _exponent_partial(projected, s, fieldname, p)
    if self_index is not None and self_index == p:
        dbds = _exponent_s_partial(projected, s)
        if fieldname == "mubar":
            db += dbds
        elif fieldname == "sigmabar":
            db += dbds * sample_offset
    return t * db


def grad_gaussian_visibility(projected, q: int, scheme: SampleScheme,
                             fieldname: str, p: int) -> float:
    """Total derivative dV_q/d(ray-space parameter of blob p)."""
    if not 0 <= q < len(projected):
        raise IndexError(f"blob index {q} out of range")
    rg = projected[q]
    lam = scheme.ell * rg.sigmabar
    wts = scheme.weights
    total = 0.0
    sum_wt = 0.0
    for k, w in zip(scheme.offsets, wts):
        s = rg.mubar + k * lam
        t = transmittance(projected, s)
        sum_wt += w * t
        dt = grad_transmittance(projected, s, fieldname, p,
                                self_index=q if p == q else None,
                                sample_offset=k * scheme.ell)
        total += lam * rg.cbar * w * dt
    if p == q:
        if fieldname == "cbar":
            total += lam * sum_wt
        elif fieldname == "sigmabar":
            # lambda_q = ell * sbar_q, and the blob's density at its own
            # samples does not depend on sbar_q.
            total += scheme.ell * rg.cbar * sum_wt
    return total


@dataclass
class RayGrad:
    """Ray-space radiance gradient blocks: d(L)/d(cbar, mubar, sbar) and V_q."""

    cbar: np.ndarray      # [Q, 3]
    mubar: np.ndarray     # [Q, 3]
    sigmabar: np.ndarray  # [Q, 3]
    vis: np.ndarray       # [Q]; dL/dalbedo_q = vis[q] * I_3


def grad_radiance(projected, albedos, scheme: SampleScheme = DEFAULT_SCHEME) -> RayGrad:
    """dL/d(every ray-space parameter). Reference-path, O(Q^2) per field."""
    from .visibility import gaussian_visibility

    n = len(projected)
    albedos = np.asarray(albedos, dtype=np.float64).reshape(n, 3)
    out = RayGrad(cbar=np.zeros((n, 3)), mubar=np.zeros((n, 3)),
                  sigmabar=np.zeros((n, 3)), vis=np.zeros(n))
    for q in range(n):
        out.vis[q] = gaussian_visibility(projected, q, scheme)
        for p in range(n):
            for fieldname, block in (("cbar", out.cbar), ("mubar", out.mubar),
                                     ("sigmabar", out.sigmabar)):
                dv = grad_gaussian_visibility(projected, q, scheme, fieldname, p)
                block[p] += albedos[q] * dv
    return out


def chain_ray_to_world(g: Gaussian, ray: Ray, d_cbar: float, d_mubar: float,
                       d_sigmabar: float, coupling: bool = False,
                       dc_dsigma: float | None = None):
    """Pull a ray-space gradient back to world parameters (c, mu, sigma).

    Jacobian of the projection: dsbar/dsigma = 1, dmubar/dmu = n,
    dcbar/dc = exp factor, dcbar/dmu = cbar ((o - mu) + mubar n)/sigma^2,
    dcbar/dsigma = cbar (||mu-o||^2 - mubar^2)/sigma^3. With coupling
    enabled the magnitude follows sigma (dc/dsigma defaults to -c/sigma,
    the constant-optical-depth rule; requires c > 0).
    """
    d = g.mu - ray.origin
    mubar = float(d @ ray.direction)
    dd = float(d @ d)
    lat2 = max(dd - mubar * mubar, 0.0)
    s2 = g.sigma * g.sigma
    ec = math.exp(-lat2 / (2.0 * s2))
    cbar = g.c * ec
    dc = ec * d_cbar
    dmu = d_mubar * ray.direction + d_cbar * cbar * (mubar * ray.direction - d) / s2
    dsigma = d_sigmabar + d_cbar * cbar * lat2 / (s2 * g.sigma)
    if coupling:
        if g.c <= 0.0:
            raise ValueError("magnitude-sigma coupling requires c > 0")
        if dc_dsigma is None:
            dc_dsigma = -g.c / g.sigma
        dsigma += d_cbar * ec * dc_dsigma
    return dc, np.asarray(dmu), dsigma


@dataclass
class GradVector:
    """World-space gradient blocks, one per blob, in scene order."""

    dc: np.ndarray       # [Q]
    dmu: np.ndarray      # [Q, 3]
    dsigma: np.ndarray   # [Q]
    dalbedo: np.ndarray  # [Q, 3]

    @staticmethod
    def zeros(n: int) -> "GradVector":
        return GradVector(np.zeros(n), np.zeros((n, 3)), np.zeros(n), np.zeros((n, 3)))

    def flat(self) -> np.ndarray:
        """Per-blob layout [c, mu_x, mu_y, mu_z, sigma, a_r, a_g, a_b]."""
        n = self.dc.shape[0]
        out = np.empty(8 * n)
        out[0::8] = self.dc
        out[1::8] = self.dmu[:, 0]
        out[2::8] = self.dmu[:, 1]
        out[3::8] = self.dmu[:, 2]
        out[4::8] = self.dsigma
        out[5::8] = self.dalbedo[:, 0]
        out[6::8] = self.dalbedo[:, 1]
        out[7::8] = self.dalbedo[:, 2]
        return out

    def all_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.flat())))


@dataclass
class FDEntry:
    name: str
    analytic: float
    numeric: float
    rel_error: float
    abs_error: float


@dataclass
class FDReport:
    entries: list[FDEntry] = field(default_factory=list)
    nan_flagged: bool = False

    @property
    def worst(self) -> FDEntry | None:
        if not self.entries:
            return None
        return max(self.entries, key=lambda e: e.rel_error)

    def max_rel_error(self) -> float:
        return max((e.rel_error for e in self.entries), default=0.0)

    def format_table(self) -> str:
        lines = [f"{'parameter':<24} {'analytic':>16} {'numeric':>16} {'rel error':>12}"]
        for e in self.entries:
            lines.append(f"{e.name:<24} {e.analytic:>16.8e} {e.numeric:>16.8e} {e.rel_error:>12.3e}")
        if self.nan_flagged:
            lines.append("WARNING: non-finite function values encountered")
        return "\n".join(lines)


def fd_check(function, gradient, point, steps=None, names=None) -> FDReport:
    """Compare an analytic gradient with a central-difference ladder.

    For each component the ladder evaluates central differences at h, h/2
    and h/4 (h = 1e-5 * max(1, |x_i|) unless `steps` overrides it) and
    keeps the rung closest to the analytic value, which damps both
    truncation and cancellation ends of the error curve. Relative error is
    measured against the numeric estimate (floored at 1e-12), so a gradient
    scaled by a factor k reports an error of |k - 1|.
    """
    x = np.asarray(point, dtype=np.float64).copy()
    g = np.asarray(gradient(x), dtype=np.float64)
    if g.shape != x.shape:
        raise ValueError("gradient shape does not match the point")
    report = FDReport()
    for i in range(x.size):
        h0 = steps[i] if steps is not None else 1e-5 * max(1.0, abs(x[i]))
        best = None
        for h in (h0, h0 / 2.0, h0 / 4.0):
            xp = x.copy()
            xm = x.copy()
            xp[i] += h
            xm[i] -= h
            fp = function(xp)
            fm = function(xm)
            if not (math.isfinite(fp) and math.isfinite(fm)):
                report.nan_flagged = True
                continue
            num = (fp - fm) / (2.0 * h)
            if best is None or abs(num - g[i]) < abs(best - g[i]):
                best = num
        if best is None:
            best = math.nan
            report.nan_flagged = True
        abs_err = abs(g[i] - best)
        rel_err = abs_err / max(abs(best), 1e-12)
        name = names[i] if names is not None else f"theta[{i}]"
        report.entries.append(FDEntry(name, float(g[i]), float(best), rel_err, abs_err))
    return report
