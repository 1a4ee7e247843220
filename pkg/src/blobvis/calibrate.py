"""Sphere calibration: pick (c, sigma) so a single blob renders as a ball.

A lone blob viewed from far away shows, along a ray with lateral offset d,
the center opacity 1 - T(inf) = 1 - exp(-sqrt(2 pi) sigma cbar(d)). Two
conditions pin the two free parameters for a target radius r and leftover
transmittance m:

  center:  opacity on the axis ray equals 1 - m,
  edge:    the lateral opacity profile has its inflection at d = r,

so the rendered silhouette reads as a disk of radius r whose interior
passes m of the background through.

Everything reduces to dimensionless variables beta = c*sigma and x = r/sigma.
With the sampled visibility rule (offsets k, spacing ell) the blob's own
visibility at lateral offset d is

  f(beta_d) = ell * beta_d * sum_k w_k exp(-beta_d * t_k),
  t_k = sqrt(pi/2) * (1 + erf(k*ell/sqrt(2))),   beta_d = beta * exp(-d^2/(2 sigma^2)),

because T at the blob's own k-th sample is exp(-sqrt(pi/2) sigma cbar
(erf0 - erf_k)) and the exponent collapses to -beta_d * t_k. The center
condition is f(beta) = 1 - m; the inflection condition in d is

  psi(beta, x) = (x^2 - 1) f'(beta_x) + x^2 beta_x f''(beta_x) = 0,
  beta_x = beta * exp(-x^2 / 2),

derived by differentiating f(beta exp(-d^2/(2 sigma^2))) twice in d. Both
conditions are solved jointly by damped Newton in (log beta, log x); if
Newton leaves the trust region or stalls, a bracketed scan takes over
(solve f(beta) = 1 - m for the smallest root, then walk x outward and keep
the outermost sign change of psi). Scale covariance is exact: sigma = r/x,
c = beta/sigma.

f is not monotone in beta: it rises to a local maximum (about 0.9988 near
beta = 3.4), dips (about 0.982 near beta = 6), then climbs to 1. For
m below the dip there are several center-condition roots; the smallest
beta is the conventional choice (least density does the job), and the
outermost inflection is the silhouette edge.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq
from scipy.special import erf

from .scene import Gaussian, Scene
from .visibility import DEFAULT_SCHEME, SQRT_HALF_PI, SampleScheme

_MEMO: dict = {}


def _t_values(scheme: SampleScheme) -> np.ndarray:
    k = np.asarray(scheme.offsets, dtype=np.float64)
    return SQRT_HALF_PI * (1.0 + erf(k * scheme.ell / math.sqrt(2.0)))


def self_visibility(beta, scheme: SampleScheme = DEFAULT_SCHEME):
    """f(beta): a lone blob's visibility of itself on an axis ray."""
    beta = np.asarray(beta, dtype=np.float64)
    t = _t_values(scheme)
    w = scheme.weights
    return scheme.ell * beta * np.einsum(
        "k,...k->...", w, np.exp(-np.multiply.outer(beta, t)))


def self_visibility_d1(beta, scheme: SampleScheme = DEFAULT_SCHEME):
    """f'(beta) = ell sum_k w_k exp(-beta t_k)(1 - beta t_k)."""
    beta = np.asarray(beta, dtype=np.float64)
    t = _t_values(scheme)
    w = scheme.weights
    bt = np.multiply.outer(beta, t)
    return scheme.ell * np.einsum("k,...k->...", w, np.exp(-bt) * (1.0 - bt))


def self_visibility_d2(beta, scheme: SampleScheme = DEFAULT_SCHEME):
    """f''(beta) = ell sum_k w_k t_k exp(-beta t_k)(beta t_k - 2)."""
    beta = np.asarray(beta, dtype=np.float64)
    t = _t_values(scheme)
    w = scheme.weights
    bt = np.multiply.outer(beta, t)
    return scheme.ell * np.einsum(
        "k,...k->...", w * t, np.exp(-bt) * (bt - 2.0))


def edge_condition(beta, x, scheme: SampleScheme = DEFAULT_SCHEME):
    """psi(beta, x): zero where the lateral profile inflects at offset x."""
    beta = np.asarray(beta, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    bx = beta * np.exp(-0.5 * x * x)
    return ((x * x - 1.0) * self_visibility_d1(bx, scheme)
            + x * x * bx * self_visibility_d2(bx, scheme))


def lateral_profile(d, c, sigma, scheme: SampleScheme = DEFAULT_SCHEME):
    """Visibility of a calibrated blob at lateral ray offset d."""
    d = np.asarray(d, dtype=np.float64)
    beta_d = c * sigma * np.exp(-0.5 * (d / sigma) ** 2)
    return self_visibility(beta_d, scheme)


@dataclass(frozen=True)
class SphereSpec:
    """A solid-looking ball: center, radius and surface color."""

    center: tuple
    radius: float
    albedo: tuple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        if not self.radius > 0.0:
            raise ValueError("sphere radius must be positive")


@dataclass(frozen=True)
class CalibrationResult:
    c: float
    sigma: float
    r: float
    m: float
    beta: float
    x: float
    newton_converged: bool


class CalibrationError(ValueError):
    pass


def _center_roots(m, scheme):
    """All roots of f(beta) = 1 - m on a log grid, smallest first."""
    grid = np.exp(np.linspace(math.log(1e-6), math.log(500.0), 4000))
    vals = self_visibility(grid, scheme) - (1.0 - m)
    roots = []
    for i in range(len(grid) - 1):
        a, b = vals[i], vals[i + 1]
        if a == 0.0:
            roots.append(grid[i])
        elif a * b < 0.0:
            roots.append(brentq(
                lambda t: float(self_visibility(t, scheme)) - (1.0 - m),
                grid[i], grid[i + 1], xtol=1e-14, rtol=1e-15))
    return roots


def _outermost_edge(beta0, scheme):
    """Outermost sign change of psi(beta0, x) on a dense x grid."""
    # beyond x_hi the profile is flat to machine precision
    x_hi = max(3.0, math.sqrt(2.0 * math.log(max(beta0, 1.0) / 1e-12)))
    grid = np.linspace(1e-3, x_hi, 6000)
    vals = edge_condition(beta0, grid, scheme)
    root = None
    for i in range(len(grid) - 1):
        if vals[i] == 0.0:
            root = grid[i]
        elif vals[i] * vals[i + 1] < 0.0:
            root = brentq(
                lambda t: float(edge_condition(beta0, t, scheme)),
                grid[i], grid[i + 1], xtol=1e-14, rtol=1e-15)
    return root


def _newton(m, scheme, max_iter=200):
    """Damped Newton on (log beta, log x); returns (beta, x) or None."""
    target = 1.0 - m
    lb = math.log(max(-math.log(m) / math.sqrt(2.0 * math.pi), 1e-6))
    lx = math.log(2.0)

    def residual(lb, lx):
        beta = math.exp(lb)
        x = math.exp(lx)
        return np.array([
            float(self_visibility(beta, scheme)) - target,
            float(edge_condition(beta, x, scheme)),
        ])

    r = residual(lb, lx)
    for _ in range(max_iter):
        if max(abs(r[0]), abs(r[1])) < 1e-13:
            return math.exp(lb), math.exp(lx)
        h = 1e-7
        j = np.empty((2, 2))
        j[:, 0] = (residual(lb + h, lx) - residual(lb - h, lx)) / (2.0 * h)
        j[:, 1] = (residual(lb, lx + h) - residual(lb, lx - h)) / (2.0 * h)
        try:
            step = np.linalg.solve(j, -r)
        except np.linalg.LinAlgError:
            return None
        if not np.all(np.isfinite(step)):
            return None
        # trust region in log space keeps beta, x positive and sane
        n = float(np.max(np.abs(step)))
        if n > 1.0:
            step *= 1.0 / n
        alpha = 1.0
        best = float(np.max(np.abs(r)))
        while alpha > 1e-10:
            cand = residual(lb + alpha * step[0], lx + alpha * step[1])
            if float(np.max(np.abs(cand))) < best:
                lb += alpha * step[0]
                lx += alpha * step[1]
                r = cand
                break
            alpha *= 0.5
        else:
            return None
    if max(abs(r[0]), abs(r[1])) < 1e-13:
        return math.exp(lb), math.exp(lx)
    return None


def calibrate_sphere(r: float, m: float,
                     scheme: SampleScheme = DEFAULT_SCHEME) -> CalibrationResult:
    """Solve for (c, sigma) rendering a radius-r ball that passes m through.

    Newton from the thin-blob initial guess; on failure (or when it lands
    on a non-conventional branch) a bracketed scan picks the smallest
    center root and the outermost inflection. Results are memoized per
    (r, m, sample rule).
    """
    if not r > 0.0:
        raise CalibrationError("radius must be positive")
    if not 0.0 < m < 1.0:
        raise CalibrationError("leftover transmittance m must be in (0, 1)")
    key = (float(r), float(m), tuple(scheme.offsets), float(scheme.ell))
    if key in _MEMO:
        return _MEMO[key]

    roots = _center_roots(m, scheme)
    if not roots:
        raise CalibrationError(f"no blob magnitude reaches opacity {1.0 - m}")
    beta0 = roots[0]

    newton = _newton(m, scheme)
    converged = False
    if newton is not None:
        nb, nx = newton
        # accept only the conventional branch: smallest center root,
        # outermost inflection
        if abs(nb - beta0) <= 1e-8 * max(1.0, beta0):
            outer = _outermost_edge(nb, scheme)
            if outer is not None and abs(nx - outer) <= 1e-6 * max(1.0, outer):
                beta, x = nb, nx
                converged = True
    if not converged:
        x = _outermost_edge(beta0, scheme)
        if x is None:
            raise CalibrationError(
                f"opacity profile for m={m} has no inflection: blob too dim")
        beta = beta0

    sigma = r / x
    c = beta / sigma
    result = CalibrationResult(c=c, sigma=sigma, r=float(r), m=float(m),
                               beta=float(beta), x=float(x),
                               newton_converged=converged)
    _MEMO[key] = result
    return result


def build_from_spheres(spheres, m: float,
                       scheme: SampleScheme = DEFAULT_SCHEME,
                       cutoff: float = None) -> Scene:
    """Scene whose blobs each render as one of the given balls."""
    from .scene import DEFAULT_CUTOFF

    gaussians = []
    for sp in spheres:
        cal = calibrate_sphere(sp.radius, m, scheme)
        gaussians.append(Gaussian(c=cal.c, mu=tuple(sp.center),
                                  sigma=cal.sigma, albedo=tuple(sp.albedo)))
    return Scene(gaussians=tuple(gaussians), m=float(m),
                 cutoff=DEFAULT_CUTOFF if cutoff is None else float(cutoff))
