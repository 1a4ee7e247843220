"""Transmittance, fractional visibility, per-Gaussian visibility, radiance.

Light traverses a purely absorbing medium whose extinction is the mixture
density. Along a ray the optical depth integral has a closed form in erf,
so transmittance

    T(s) = exp( sum_q sqrt(pi/2) sigmabar_q cbar_q
                * (erf(-mubar_q/(sqrt2 sigmabar_q)) - erf((s-mubar_q)/(sqrt2 sigmabar_q))) )

is smooth in every parameter. A blob's share of a pixel (its "visibility")
is the integral of T times its own density, approximated by a fixed
sample-offset rule

    V_q = sum_{k in K} lambda_q T(s_k) Gbar_q(s_k),   s_k = mubar_q + k*lambda_q,

with lambda_q = ell*sigmabar_q. Radiance is the albedo-weighted sum of
visibilities (unit emission). These are the scalar reference
implementations; kernels.py holds the image-rate equivalents.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erf

from .scene import Ray, RayGaussian, Scene, project_scene

__all__ = [
    "SampleScheme",
    "SQRT_HALF_PI",
    "transmittance",
    "point_visibility",
    "gaussian_visibility",
    "radiance",
    "apply_cutoff",
]

SQRT_HALF_PI = math.sqrt(math.pi / 2.0)
SQRT2 = math.sqrt(2.0)


@dataclass(frozen=True)
class SampleScheme:
    """Offsets K (in units of lambda_q = ell*sigmabar_q) used to sample V_q."""

    offsets: tuple[int, ...] = (-4, -3, -2, -1, 0)
    ell: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "offsets", tuple(int(k) for k in self.offsets))
        if len(self.offsets) == 0:
            raise ValueError("sample scheme needs at least one offset")
        if not self.ell > 0.0:
            raise ValueError("ell must be positive")

    @property
    def weights(self) -> np.ndarray:
        """Gaussian factors exp(-(k*ell)^2/2) of a blob at its own samples."""
        k = np.asarray(self.offsets, dtype=np.float64)
        return np.exp(-0.5 * (k * self.ell) ** 2)


DEFAULT_SCHEME = SampleScheme()


def _as_arrays(projected):
    cbar = np.array([p.cbar for p in projected], dtype=np.float64)
    mubar = np.array([p.mubar for p in projected], dtype=np.float64)
    sigmabar = np.array([p.sigmabar for p in projected], dtype=np.float64)
    return cbar, mubar, sigmabar


def transmittance(projected, s: float) -> float:
    """Closed-form T(s) along the ray the blobs were projected onto.

    The exponent is accumulated over all blobs in one pass and exponentiated
    once, so there is no product-of-exponentials drift.
    """
    if len(projected) == 0:
        return 1.0
    cbar, mubar, sigmabar = _as_arrays(projected)
    z0 = -mubar / (SQRT2 * sigmabar)
    zs = (s - mubar) / (SQRT2 * sigmabar)
    expo = np.sum(SQRT_HALF_PI * sigmabar * cbar * (erf(z0) - erf(zs)))
    return float(np.exp(expo))


def point_visibility(scene: Scene, x, o) -> float:
    """Fractional visibility of point x from origin o: T at s = ||x - o||."""
    x = np.asarray(x, dtype=np.float64)
    o = np.asarray(o, dtype=np.float64)
    d = x - o
    s = float(np.linalg.norm(d))
    if s == 0.0:
        raise ValueError("point visibility is undefined for x == o")
    ray = Ray(origin=o, direction=d / s)
    return transmittance(project_scene(scene, ray), s)


def sample_locations(projected, q: int, scheme: SampleScheme = DEFAULT_SCHEME) -> np.ndarray:
    lam = scheme.ell * projected[q].sigmabar
    return projected[q].mubar + np.asarray(scheme.offsets, dtype=np.float64) * lam


def gaussian_visibility(projected, q: int, scheme: SampleScheme = DEFAULT_SCHEME) -> float:
    """Sampled visibility V_q of one projected blob against all the others."""
    rg = projected[q]
    lam = scheme.ell * rg.sigmabar
    total = 0.0
    # Gbar_q at its own samples reduces to cbar_q * exp(-(k*ell)^2/2).
    for k, w in zip(scheme.offsets, scheme.weights):
        s = rg.mubar + k * lam
        total += lam * transmittance(projected, s) * rg.cbar * w
    return total


def radiance(projected, albedos, scheme: SampleScheme = DEFAULT_SCHEME) -> np.ndarray:
    """Pixel radiance L = sum_q a_q V_q (emission fixed at 1)."""
    albedos = np.asarray(albedos, dtype=np.float64).reshape(len(projected), 3)
    out = np.zeros(3)
    for q in range(len(projected)):
        out += albedos[q] * gaussian_visibility(projected, q, scheme)
    return out


def apply_cutoff(projected, cutoff: float):
    """Drop blobs whose projected magnitude fell below the threshold."""
    if cutoff < 0.0:
        raise ValueError("cutoff must be nonnegative")
    return [p for p in projected if p.cbar >= cutoff]
