"""Pinhole camera, per-pixel ray generation, full-image forward rendering."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import kernels
from .scene import Ray, Scene, project_scene
from .visibility import DEFAULT_SCHEME, SampleScheme, apply_cutoff, radiance

__all__ = ["Camera", "Image", "generate_ray", "render"]


@dataclass(frozen=True)
class Camera:
    """Pinhole camera: position, world-from-camera rotation, intrinsics in pixels."""

    position: np.ndarray
    orientation: np.ndarray
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=np.float64).reshape(3))
        r = np.asarray(self.orientation, dtype=np.float64).reshape(3, 3)
        object.__setattr__(self, "orientation", r)
        if np.max(np.abs(r @ r.T - np.eye(3))) > 1e-9 or abs(np.linalg.det(r) - 1.0) > 1e-9:
            raise ValueError("orientation must be a rotation (orthonormal, det +1)")
        if self.width < 1 or self.height < 1:
            raise ValueError("image dimensions must be at least 1x1")

    def ray_directions(self) -> np.ndarray:
        """Unit directions for all pixel centers, row-major [H*W, 3]."""
        u = (np.arange(self.width) + 0.5 - self.cx) / self.fx
        v = (np.arange(self.height) + 0.5 - self.cy) / self.fy
        uu, vv = np.meshgrid(u, v)
        d = np.stack([uu, vv, np.ones_like(uu)], axis=-1).reshape(-1, 3)
        d = d @ self.orientation.T
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        return np.ascontiguousarray(d)


@dataclass
class Image:
    """Row-major grid of linear-RGB pixels with optional per-pixel weights.

    Rendered values are stored unclamped; clamping to [0,1] happens only when
    quantizing for file output.
    """

    pixels: np.ndarray
    weights: Optional[np.ndarray] = None

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float64)
        if self.pixels.ndim != 3 or self.pixels.shape[2] != 3:
            raise ValueError("pixels must have shape (height, width, 3)")
        if self.weights is not None:
            self.weights = np.asarray(self.weights, dtype=np.float64)
            if self.weights.shape != self.pixels.shape[:2]:
                raise ValueError("weights must match the pixel grid")
            if np.any(self.weights < 0.0):
                raise ValueError("weights must be nonnegative")

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


def generate_ray(cam: Camera, u: float, v: float) -> Ray:
    """Back-project a (possibly fractional) pixel location to a world ray.

    No half-pixel offset is applied here; render() samples pixel centers by
    passing u + 0.5, v + 0.5.
    """
    d = np.array([(u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, 1.0])
    d = cam.orientation @ d
    d /= np.linalg.norm(d)
    return Ray(origin=cam.position, direction=d)


def render(scene: Scene, cam: Camera, scheme: SampleScheme = DEFAULT_SCHEME,
           use_kernel: bool = True) -> Image:
    """Render every pixel's radiance. Pure per-pixel function of the scene."""
    if len(scene) == 0:
        return Image(pixels=np.zeros((cam.height, cam.width, 3)))
    if use_kernel:
        c, mu, sigma, albedo = scene.arrays()
        dirs = cam.ray_directions()
        offsets = np.asarray(scheme.offsets, dtype=np.float64)
        l2max = kernels.cull_radius2(c, sigma, scene.cutoff)
        px = kernels.render_rays(c, mu, sigma, albedo, l2max, cam.position,
                                 dirs, offsets, scheme.ell)
        return Image(pixels=px.reshape(cam.height, cam.width, 3))
    _, _, _, albedo = scene.arrays()
    out = np.zeros((cam.height, cam.width, 3))
    for v in range(cam.height):
        for u in range(cam.width):
            ray = generate_ray(cam, u + 0.5, v + 0.5)
            projected = apply_cutoff(project_scene(scene, ray), scene.cutoff)
            if not projected:
                continue
            alb = albedo[[p.source_index for p in projected]]
            out[v, u] = radiance(projected, alb, scheme)
    return Image(pixels=out)
