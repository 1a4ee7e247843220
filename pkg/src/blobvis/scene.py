"""Gaussian density scenes and their projection onto rays.

A scene is a sum of scaled isotropic 3D Gaussians

    D(x) = sum_q c_q * exp(-||x - mu_q||^2 / (2 sigma_q^2)),

each blob carrying an RGB albedo used by the radiance model. Restricted to
a ray o + s*n the mixture is again a sum of 1D Gaussians in s, with the
same sigma, shifted mean and a rescaled magnitude; that projection is the
entry point of every transmittance/visibility formula downstream.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

__all__ = [
    "Gaussian",
    "Scene",
    "Ray",
    "RayGaussian",
    "project_to_ray",
    "project_scene",
    "density_at",
]

DEFAULT_CUTOFF = 1e-5


@dataclass(frozen=True)
class Gaussian:
    """One isotropic blob: magnitude c, center mu, stddev sigma, albedo a."""

    c: float
    mu: np.ndarray
    sigma: float
    albedo: np.ndarray = field(default_factory=lambda: np.ones(3))

    def __post_init__(self):
        object.__setattr__(self, "c", float(self.c))
        object.__setattr__(self, "sigma", float(self.sigma))
        object.__setattr__(self, "mu", np.asarray(self.mu, dtype=np.float64).reshape(3))
        object.__setattr__(self, "albedo", np.asarray(self.albedo, dtype=np.float64).reshape(3))
        if not self.sigma > 0.0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if self.c < 0.0:
            raise ValueError(f"magnitude must be nonnegative, got {self.c}")
        if np.any(self.albedo < 0.0) or np.any(self.albedo > 1.0):
            raise ValueError(f"albedo channels must lie in [0,1], got {self.albedo}")

    def density(self, x) -> float:
        d = np.asarray(x, dtype=np.float64) - self.mu
        return self.c * float(np.exp(-(d @ d) / (2.0 * self.sigma**2)))


@dataclass(frozen=True)
class Scene:
    """Ordered Gaussian mixture plus calibration metadata.

    Ordering only provides stable indices (RayGaussian.source_index); the
    light transport itself is order-independent. `m` records the smoothness
    level the blobs were calibrated at, `cutoff` the projected-magnitude
    exclusion threshold.
    """

    gaussians: tuple[Gaussian, ...]
    m: float = 0.1
    cutoff: float = DEFAULT_CUTOFF

    def __post_init__(self):
        object.__setattr__(self, "gaussians", tuple(self.gaussians))
        if self.cutoff < 0.0:
            raise ValueError("cutoff must be nonnegative")

    def __len__(self) -> int:
        return len(self.gaussians)

    def arrays(self):
        """Pack parameters into (c[Q], mu[Q,3], sigma[Q], albedo[Q,3])."""
        q = len(self.gaussians)
        c = np.empty(q)
        mu = np.empty((q, 3))
        sigma = np.empty(q)
        albedo = np.empty((q, 3))
        for i, g in enumerate(self.gaussians):
            c[i] = g.c
            mu[i] = g.mu
            sigma[i] = g.sigma
            albedo[i] = g.albedo
        return c, mu, sigma, albedo

    @staticmethod
    def from_arrays(c, mu, sigma, albedo, m=0.1, cutoff=DEFAULT_CUTOFF) -> "Scene":
        gs = tuple(
            Gaussian(c=c[i], mu=mu[i], sigma=sigma[i], albedo=albedo[i])
            for i in range(len(c))
        )
        return Scene(gaussians=gs, m=m, cutoff=cutoff)

    def with_gaussians(self, gaussians) -> "Scene":
        return replace(self, gaussians=tuple(gaussians))


@dataclass(frozen=True)
class Ray:
    """Half-line o + s*n, s >= 0, with unit direction n."""

    origin: np.ndarray
    direction: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=np.float64).reshape(3))
        object.__setattr__(self, "direction", np.asarray(self.direction, dtype=np.float64).reshape(3))
        norm = float(np.linalg.norm(self.direction))
        if abs(norm - 1.0) > 1e-12:
            raise ValueError(f"ray direction must be unit length, |n| = {norm}")

    def point(self, s: float) -> np.ndarray:
        return self.origin + s * self.direction


@dataclass(frozen=True)
class RayGaussian:
    """1D restriction of a blob to a ray: magnitude cbar at mean mubar, width sigmabar."""

    cbar: float
    mubar: float
    sigmabar: float
    source_index: int = 0

    def density(self, s: float) -> float:
        z = (s - self.mubar) / self.sigmabar
        return self.cbar * float(np.exp(-0.5 * z * z))


def project_to_ray(g: Gaussian, r: Ray) -> RayGaussian:
    """Restrict a 3D Gaussian to a ray.

    With d = mu - o: mubar = d.n, sigmabar = sigma, and the magnitude picks
    up the lateral falloff cbar = c * exp(-(d.d - mubar^2) / (2 sigma^2)).
    """
    d = g.mu - r.origin
    mubar = float(d @ r.direction)
    lat2 = float(d @ d) - mubar * mubar
    cbar = g.c * float(np.exp(-lat2 / (2.0 * g.sigma**2)))
    return RayGaussian(cbar=cbar, mubar=mubar, sigmabar=g.sigma, source_index=0)


def project_scene(s: Scene, r: Ray) -> list[RayGaussian]:
    """Project every Gaussian, keeping scene order and source indices."""
    out = []
    for i, g in enumerate(s.gaussians):
        rg = project_to_ray(g, r)
        out.append(RayGaussian(rg.cbar, rg.mubar, rg.sigmabar, source_index=i))
    return out


def density_at(s: Scene, x) -> float:
    """Mixture density D(x) = sum_q G_q(x)."""
    x = np.asarray(x, dtype=np.float64)
    total = 0.0
    for g in s.gaussians:
        total += g.density(x)
    return total
