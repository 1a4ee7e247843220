"""Parameter-to-scene mappings and their Jacobians.

Two families:

  rigid   -- a template scene partitioned into objects; each object gets a
             translation t and (in 'full' mode) a rotation vector w applied
             about its own origin: mu = origin + R(w) (mu_T - origin) + t.
             Magnitudes, widths and albedos ride along unchanged.
  free    -- every blob exposes its center plus log-width, so width stays
             positive under unconstrained steps: sigma = exp(theta_s),
             d sigma / d theta_s = sigma.

apply_mapping produces the scene at theta; mapping_jacobian returns the
dense [8Q, dim] matrix d(blob fields)/d(theta) in the flat per-blob layout
(c, mu_x, mu_y, mu_z, sigma, a_r, a_g, a_b), so a world-space gradient
pulls back to theta via J^T g. Rotations use the rotation-vector (axis
times angle) chart; the derivative of R(w) with respect to w_i is

  dR/dw_i = (w_i [w]_x + [w x ((I - R) e_i)]_x) / |w|^2 * R,

with the first-order limit dR/dw_i -> [e_i]_x near w = 0 (switched below
1e-6 radians, where the closed form loses digits to cancellation).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .gradients import GradVector
from .scene import Scene


def rodrigues(w: np.ndarray) -> np.ndarray:
    """Rotation matrix for a rotation vector (axis * angle)."""
    w = np.asarray(w, dtype=np.float64)
    th = float(np.linalg.norm(w))
    K = np.array([[0.0, -w[2], w[1]],
                  [w[2], 0.0, -w[0]],
                  [-w[1], w[0], 0.0]])
    if th < 1e-12:
        return np.eye(3) + K + 0.5 * (K @ K)
    a = math.sin(th) / th
    b = (1.0 - math.cos(th)) / (th * th)
    return np.eye(3) + a * K + b * (K @ K)


def _hat(v: np.ndarray) -> np.ndarray:
    return np.array([[0.0, -v[2], v[1]],
                     [v[2], 0.0, -v[0]],
                     [-v[1], v[0], 0.0]])


def rotation_derivatives(w: np.ndarray):
    """R(w) and the three matrices dR/dw_i."""
    w = np.asarray(w, dtype=np.float64)
    R = rodrigues(w)
    th2 = float(w @ w)
    out = np.empty((3, 3, 3))
    if th2 < 1e-12:
        for i in range(3):
            e = np.zeros(3)
            e[i] = 1.0
            out[i] = _hat(e)
        return R, out
    K = _hat(w)
    I = np.eye(3)
    for i in range(3):
        e = np.zeros(3)
        e[i] = 1.0
        out[i] = ((w[i] * K + _hat(np.cross(w, (I - R) @ e))) / th2) @ R
    return R, out


@dataclass(frozen=True)
class RigidObject:
    """One independently posed group of blobs within a template scene."""

    indices: tuple
    origin: tuple = (0.0, 0.0, 0.0)
    mode: str = "full"

    def __post_init__(self):
        if self.mode not in ("full", "position"):
            raise ValueError(f"unknown rigid mode {self.mode!r}")
        if len(self.indices) == 0:
            raise ValueError("rigid object needs at least one blob")
        if len(set(self.indices)) != len(self.indices):
            raise ValueError("rigid object repeats a blob index")

    @property
    def dim(self) -> int:
        return 6 if self.mode == "full" else 3


@dataclass(frozen=True)
class PoseParams:
    """theta plus its interpretation against a template scene.

    mapping 'rigid': theta concatenates per-object blocks, each
    (t_x, t_y, t_z[, w_x, w_y, w_z]). mapping 'free': theta concatenates
    per-blob blocks (mu_x, mu_y, mu_z, log sigma) over `indices`.
    """

    values: np.ndarray
    mapping: str
    objects: tuple = ()
    indices: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "values",
                           np.asarray(self.values, dtype=np.float64).copy())
        if self.mapping == "rigid":
            want = sum(o.dim for o in self.objects)
        elif self.mapping == "free":
            want = 4 * len(self.indices)
        else:
            raise ValueError(f"unknown mapping {self.mapping!r}")
        if self.values.shape != (want,):
            raise ValueError(
                f"theta has {self.values.shape} entries, mapping needs {want}")

    @property
    def dim(self) -> int:
        return self.values.shape[0]

    def with_values(self, values) -> "PoseParams":
        return replace(self, values=np.asarray(values, dtype=np.float64))


def rigid_params(objects, values=None) -> PoseParams:
    objects = tuple(objects)
    dim = sum(o.dim for o in objects)
    v = np.zeros(dim) if values is None else values
    return PoseParams(values=v, mapping="rigid", objects=objects)


def free_params(template: Scene, indices=None, values=None) -> PoseParams:
    """Parameters initialized from the template's own centers and widths."""
    if indices is None:
        indices = tuple(range(len(template)))
    indices = tuple(indices)
    if values is None:
        _, mu, sigma, _ = template.arrays()
        v = np.empty(4 * len(indices))
        for j, q in enumerate(indices):
            v[4 * j:4 * j + 3] = mu[q]
            v[4 * j + 3] = math.log(sigma[q])
        values = v
    return PoseParams(values=values, mapping="free", indices=indices)


def _check_partition(p: PoseParams, n: int):
    seen = set()
    for o in p.objects:
        for q in o.indices:
            if not 0 <= q < n:
                raise IndexError(f"blob index {q} outside template of size {n}")
            if q in seen:
                raise ValueError(f"blob {q} assigned to two objects")
            seen.add(q)


def apply_mapping(p: PoseParams, template: Scene) -> Scene:
    """Scene at theta. Blobs not covered by the mapping stay as-is."""
    c, mu, sigma, albedo = template.arrays()
    mu = mu.copy()
    sigma = sigma.copy()
    if p.mapping == "rigid":
        _check_partition(p, len(template))
        off = 0
        for o in p.objects:
            idx = np.asarray(o.indices, dtype=np.int64)
            origin = np.asarray(o.origin, dtype=np.float64)
            t = p.values[off:off + 3]
            if o.mode == "full":
                R = rodrigues(p.values[off + 3:off + 6])
                mu[idx] = origin + (mu[idx] - origin) @ R.T + t
            else:
                mu[idx] = mu[idx] + t
            off += o.dim
    else:
        for j, q in enumerate(p.indices):
            if not 0 <= q < len(template):
                raise IndexError(f"blob index {q} outside template")
            mu[q] = p.values[4 * j:4 * j + 3]
            sigma[q] = math.exp(p.values[4 * j + 3])
    return template.from_arrays(c, mu, sigma, albedo,
                                m=template.m, cutoff=template.cutoff)


def mapping_jacobian(p: PoseParams, template: Scene) -> np.ndarray:
    """Dense d(flat blob fields)/d(theta), shape [8 * len(template), dim].

    Row layout matches GradVector.flat(): blob-major, fields
    (c, mu_x, mu_y, mu_z, sigma, a_r, a_g, a_b).
    """
    n = len(template)
    J = np.zeros((8 * n, p.dim))
    _, mu, _, _ = template.arrays()
    if p.mapping == "rigid":
        _check_partition(p, n)
        off = 0
        for o in p.objects:
            origin = np.asarray(o.origin, dtype=np.float64)
            if o.mode == "full":
                _, dR = rotation_derivatives(p.values[off + 3:off + 6])
            for q in o.indices:
                row = 8 * q + 1
                for ax in range(3):
                    J[row + ax, off + ax] = 1.0
                if o.mode == "full":
                    local = mu[q] - origin
                    for i in range(3):
                        J[row:row + 3, off + 3 + i] = dR[i] @ local
            off += o.dim
    else:
        for j, q in enumerate(p.indices):
            if not 0 <= q < n:
                raise IndexError(f"blob index {q} outside template")
            row = 8 * q
            for ax in range(3):
                J[row + 1 + ax, 4 * j + ax] = 1.0
            J[row + 4, 4 * j + 3] = math.exp(p.values[4 * j + 3])
    return J


def pullback(p: PoseParams, template: Scene, g: GradVector) -> np.ndarray:
    """theta-space gradient from a world-space one: J^T g."""
    return mapping_jacobian(p, template).T @ g.flat()
