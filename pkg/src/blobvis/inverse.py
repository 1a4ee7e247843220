"""Inverse problems on top of the forward model: pose tracking, free-form
shape estimation, random-initialization batches, and 1-d parameter sweeps.

A Problem bundles template scene, parametrization, views and energy config
into objective/gradient closures over theta; the world-space gradient from
the fused kernel is pulled back through the mapping Jacobian and the
temporal/limit prior is added on top. Ground truth for synthetic fixtures
is theta = 0 by convention (the template sits at the true pose).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .camera import Camera, Image, render
from .energy import EnergyConfig, back_project_albedo, energy_and_grad, prior, prior_grad
from .gradients import GradVector
from .mapping import PoseParams, apply_mapping, mapping_jacobian, rodrigues
from .optimize import NonFiniteError, OptimConfig, OptimTrace, minimize
from .scene import Gaussian, Scene
from .visibility import DEFAULT_SCHEME, SampleScheme, point_visibility


@dataclass
class Problem:
    """F(theta) = sum_views D(scene(theta), I) + P(theta | history)."""

    template: Scene
    params: PoseParams
    cameras: list
    targets: list
    config: EnergyConfig
    scheme: SampleScheme = DEFAULT_SCHEME
    coupling: bool = False
    history: tuple = ()

    def __post_init__(self):
        if len(self.cameras) != len(self.targets):
            raise ValueError("one target image per camera")

    def scene_at(self, theta) -> Scene:
        return apply_mapping(self.params.with_values(theta), self.template)

    def _eval(self, theta, want_grad):
        p = self.params.with_values(theta)
        scene = apply_mapping(p, self.template)
        total = 0.0
        gv = GradVector.zeros(len(self.template)) if want_grad else None
        for cam, img in zip(self.cameras, self.targets):
            v, g = energy_and_grad(scene, cam, img, self.config,
                                   scheme=self.scheme, want_grad=want_grad,
                                   coupling=self.coupling)
            total += v
            if want_grad:
                gv.dc += g.dc
                gv.dmu += g.dmu
                gv.dsigma += g.dsigma
                gv.dalbedo += g.dalbedo
        hist = (theta, *self.history)
        total += prior(hist, self.config)
        if not want_grad:
            return total, None
        gtheta = mapping_jacobian(p, self.template).T @ gv.flat()
        gtheta = gtheta + prior_grad(hist, self.config)
        return total, gtheta

    def objective(self, theta) -> float:
        return self._eval(theta, False)[0]

    def gradient(self, theta) -> np.ndarray:
        return self._eval(theta, True)[1]

    def value_and_grad(self, theta):
        return self._eval(theta, True)


def solve(problem: Problem, theta0, config: OptimConfig = OptimConfig()):
    return minimize(problem.objective, problem.gradient, theta0, config,
                    value_and_grad=problem.value_and_grad)


# ---------------------------------------------------------------------------
# tracking

@dataclass
class FrameResult:
    theta: np.ndarray
    trace: OptimTrace
    aborted: bool = False


def track(template: Scene, params: PoseParams, cameras, frame_targets,
          config: EnergyConfig, optconfig: OptimConfig = OptimConfig(),
          scheme: SampleScheme = DEFAULT_SCHEME, theta0=None):
    """Optimize frame by frame; each frame starts at the previous solution
    and the acceleration prior sees the two frames before it."""
    theta = (np.asarray(theta0, dtype=np.float64)
             if theta0 is not None else params.values.copy())
    history = []
    results = []
    for targets in frame_targets:
        problem = Problem(template=template, params=params, cameras=cameras,
                          targets=targets, config=config, scheme=scheme,
                          history=tuple(history[:2]))
        try:
            theta, trace = solve(problem, theta, optconfig)
            results.append(FrameResult(theta=theta, trace=trace))
        except NonFiniteError as exc:
            results.append(FrameResult(theta=np.asarray(exc.theta),
                                       trace=exc.trace, aborted=True))
        history.insert(0, theta)
    return results


def random_pose_inits(params: PoseParams, count: int, seed: int,
                      translation: float = 0.45, rotation: float = math.pi):
    """Random starting vectors: translations uniform in a centered box,
    rotation vectors uniform over the radius-`rotation` ball."""
    if params.mapping != "rigid":
        raise ValueError("random pose initialization is for rigid mappings")
    rng = np.random.default_rng(seed)
    out = np.empty((count, params.dim))
    for i in range(count):
        off = 0
        for o in params.objects:
            out[i, off:off + 3] = rng.uniform(-translation, translation, size=3)
            if o.mode == "full":
                v = rng.normal(size=3)
                n = np.linalg.norm(v)
                v = v / n if n > 0 else np.array([1.0, 0.0, 0.0])
                radius = rotation * rng.uniform() ** (1.0 / 3.0)
                out[i, off + 3:off + 6] = radius * v
            off += o.dim
    return out


def octahedral_rotations() -> np.ndarray:
    """The 24 proper rotations mapping an axis-aligned cube to itself."""
    mats = []
    for perm in ((0, 1, 2), (0, 2, 1), (1, 0, 2), (1, 2, 0), (2, 0, 1), (2, 1, 0)):
        for sx in (1, -1):
            for sy in (1, -1):
                for sz in (1, -1):
                    m = np.zeros((3, 3))
                    m[0, perm[0]] = sx
                    m[1, perm[1]] = sy
                    m[2, perm[2]] = sz
                    if np.linalg.det(m) > 0:
                        mats.append(m)
    return np.stack(mats)


def rigid_pose_errors(params: PoseParams, template: Scene, theta,
                      symmetries=None):
    """Per-object RMS displacement of blob centers against theta = 0.

    symmetries: optional list aligned with params.objects; each entry is
    None or an [S,3,3] stack of rotations that leave the object's blob
    arrangement (and appearance) unchanged, in which case the error is the
    minimum over that group.
    """
    theta = np.asarray(theta, dtype=np.float64)
    _, mu, _, _ = template.arrays()
    errors = []
    off = 0
    for j, o in enumerate(params.objects):
        origin = np.asarray(o.origin, dtype=np.float64)
        local = mu[np.asarray(o.indices, dtype=np.int64)] - origin
        t = theta[off:off + 3]
        if o.mode == "full":
            R = rodrigues(theta[off + 3:off + 6])
        else:
            R = np.eye(3)
        group = None if symmetries is None else symmetries[j]
        if group is None:
            group = np.eye(3)[None]
        best = math.inf
        for S in group:
            moved = local @ (R @ S).T + t
            rms = math.sqrt(float(np.mean(np.sum((moved - local) ** 2, axis=1))))
            best = min(best, rms)
        errors.append(best)
        off += o.dim
    return errors


@dataclass
class BatchRun:
    theta0: np.ndarray
    theta: np.ndarray
    trace: OptimTrace
    aborted: bool
    errors: list


def batch_random_inits(template: Scene, params: PoseParams, cameras, targets,
                       config: EnergyConfig, optconfig: OptimConfig,
                       count: int, seed: int,
                       scheme: SampleScheme = DEFAULT_SCHEME,
                       translation: float = 0.45, rotation: float = math.pi,
                       symmetries=None):
    """The random-initialization experiment: optimize from `count` seeded
    starting poses against fixed targets; errors measured against theta=0."""
    inits = random_pose_inits(params, count, seed, translation, rotation)
    problem = Problem(template=template, params=params, cameras=cameras,
                      targets=targets, config=config, scheme=scheme)
    runs = []
    for i in range(count):
        try:
            theta, trace = solve(problem, inits[i], optconfig)
            aborted = False
        except NonFiniteError as exc:
            theta, trace, aborted = np.asarray(exc.theta), exc.trace, True
        errs = rigid_pose_errors(params, template, theta, symmetries)
        runs.append(BatchRun(theta0=inits[i], theta=theta, trace=trace,
                             aborted=aborted, errors=errs))
    return runs


# ---------------------------------------------------------------------------
# free-form shape estimation

def seed_blobs(count: int, seed: int, lo, hi, sigma: float = 0.15,
               c: float = 2.0, albedo=(1.0, 1.0, 1.0), m: float = 0.1,
               cutoff: float = 1e-5) -> Scene:
    """Randomly scattered equal blobs inside a box, the usual starting
    point for silhouette-driven shape estimation."""
    rng = np.random.default_rng(seed)
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    gs = tuple(
        Gaussian(c=c, mu=tuple(rng.uniform(lo, hi)), sigma=sigma,
                 albedo=tuple(albedo))
        for _ in range(count))
    return Scene(gaussians=gs, m=m, cutoff=cutoff)


@dataclass
class ShapeResult:
    scene: Scene
    trace: OptimTrace
    albedos: Optional[np.ndarray] = None
    flagged: Optional[np.ndarray] = None


def estimate_shape(seeds: Scene, cameras, silhouettes,
                   config: EnergyConfig, optconfig: OptimConfig,
                   scheme: SampleScheme = DEFAULT_SCHEME,
                   color_views=None) -> ShapeResult:
    """Free-Gaussian photo-consistency fit to silhouettes; optionally
    back-project albedos from color views afterwards."""
    from .mapping import free_params

    if len(seeds) == 0:
        return ShapeResult(scene=seeds, trace=OptimTrace(status="empty"))
    params = free_params(seeds)
    problem = Problem(template=seeds, params=params, cameras=cameras,
                      targets=silhouettes, config=config, scheme=scheme)
    theta, trace = solve(problem, params.values, optconfig)
    scene = apply_mapping(params.with_values(theta), seeds)
    result = ShapeResult(scene=scene, trace=trace)
    if color_views is not None:
        cams, images = color_views
        albedos, flagged = back_project_albedo(scene, cams, images, scheme)
        carr = scene.arrays()
        scene = Scene.from_arrays(carr[0], carr[1], carr[2], albedos,
                                  m=scene.m, cutoff=scene.cutoff)
        result.scene = scene
        result.albedos = albedos
        result.flagged = flagged
    return result


def silhouette_iou(a: np.ndarray, b: np.ndarray, threshold: float = 0.5) -> float:
    """Intersection over union of thresholded intensity images."""
    ma = np.max(np.asarray(a), axis=-1) >= threshold if a.ndim == 3 else a >= threshold
    mb = np.max(np.asarray(b), axis=-1) >= threshold if b.ndim == 3 else b >= threshold
    union = np.logical_or(ma, mb).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(ma, mb).sum() / union)


# ---------------------------------------------------------------------------
# 1-d sweeps

def parse_param_id(param: str, template: Scene, params: Optional[PoseParams]):
    """'theta:i' or 'gauss:q:field[:comp]' -> setter producing a Problem input.

    Returns (kind, payload): kind 'theta' with the component index, or
    kind 'gauss' with (blob index, field name, component or None).
    """
    parts = param.split(":")
    if parts[0] == "theta":
        if params is None:
            raise ValueError("theta sweep needs a mapping in the scene file")
        if len(parts) != 2:
            raise ValueError(f"bad parameter id {param!r}")
        i = int(parts[1])
        if not 0 <= i < params.dim:
            raise ValueError(f"theta index {i} out of range (dim {params.dim})")
        return "theta", i
    if parts[0] == "gauss":
        if len(parts) not in (3, 4):
            raise ValueError(f"bad parameter id {param!r}")
        q = int(parts[1])
        if not 0 <= q < len(template):
            raise ValueError(f"gaussian index {q} out of range")
        fieldname = parts[2]
        if fieldname not in ("c", "mu", "sigma", "albedo"):
            raise ValueError(f"unknown gaussian field {fieldname!r}")
        comp = None
        if fieldname in ("mu", "albedo"):
            if len(parts) != 4:
                raise ValueError(f"{fieldname} sweep needs a component 0-2")
            comp = int(parts[3])
            if not 0 <= comp < 3:
                raise ValueError("component out of range")
        elif len(parts) == 4:
            raise ValueError(f"{fieldname} takes no component")
        return "gauss", (q, fieldname, comp)
    raise ValueError(f"bad parameter id {param!r}")


def _scene_with(template: Scene, q, fieldname, comp, value):
    c, mu, sigma, albedo = template.arrays()
    if fieldname == "c":
        c = c.copy(); c[q] = value
    elif fieldname == "sigma":
        sigma = sigma.copy(); sigma[q] = value
    elif fieldname == "mu":
        mu = mu.copy(); mu[q, comp] = value
    else:
        albedo = albedo.copy(); albedo[q, comp] = value
    return Scene.from_arrays(c, mu, sigma, albedo,
                             m=template.m, cutoff=template.cutoff)


def sweep(template: Scene, params: Optional[PoseParams], cameras, targets,
          config: EnergyConfig, param: str, lo: float, hi: float, steps: int,
          scheme: SampleScheme = DEFAULT_SCHEME,
          vis_blob: Optional[int] = None, vis_camera: int = 0):
    """Energy along one parameter; optionally a blob's visibility at the
    central pixel of one camera. Returns a list of row tuples."""
    kind, payload = parse_param_id(param, template, params)
    if kind == "gauss" and vis_blob is None:
        vis_blob = payload[0]
    values = np.linspace(lo, hi, steps)
    rows = []
    for val in values:
        if kind == "theta":
            theta = params.values.copy()
            theta[payload] = val
            scene = apply_mapping(params.with_values(theta), template)
        else:
            scene = _scene_with(template, *payload, val)
        total = 0.0
        for cam, img in zip(cameras, targets):
            v, _ = energy_and_grad(scene, cam, img, config, scheme=scheme,
                                   want_grad=False)
            total += v
        if vis_blob is None:
            rows.append((float(val), total))
        else:
            vis = point_visibility_of(scene, vis_blob, cameras[vis_camera],
                                      scheme)
            rows.append((float(val), total, vis))
    return rows


def point_visibility_of(scene: Scene, q: int, cam: Camera,
                        scheme: SampleScheme = DEFAULT_SCHEME) -> float:
    """Visibility of blob q along the camera's central pixel ray."""
    from .camera import generate_ray
    from .scene import project_scene
    from .visibility import gaussian_visibility

    ray = generate_ray(cam, (cam.width - 1) / 2.0 + 0.5,
                       (cam.height - 1) / 2.0 + 0.5)
    projected = project_scene(scene, ray)
    return gaussian_visibility(projected, q, scheme)


def sweep_csv(rows) -> str:
    three = rows and len(rows[0]) == 3
    head = "value,energy,visibility\n" if three else "value,energy\n"
    out = [head]
    for row in rows:
        out.append(",".join(repr(float(x)) for x in row) + "\n")
    return "".join(out)


def total_variation(ys) -> float:
    ys = np.asarray(ys, dtype=np.float64)
    return float(np.sum(np.abs(np.diff(ys))))
