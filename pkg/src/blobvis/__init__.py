"""Translucent-Gaussian scene models with everywhere-differentiable
visibility.

A scene is a sum of isotropic Gaussian density blobs, each with an albedo.
Along a camera ray the transmittance has a closed form in erf, so pixel
radiance, per-blob visibility and all their derivatives are smooth in every
scene parameter, including the positions that decide occlusion. On top of
the forward model sit analytic gradients, photo-consistency and
model-contrast energies, sphere-matching calibration of (c, sigma), rigid
and free-form parameter mappings, a preconditioned nonlinear-CG optimizer,
and drivers for pose tracking, shape-from-silhouette estimation and energy
landscape sweeps.
"""

from .scene import DEFAULT_CUTOFF, Gaussian, Ray, RayGaussian, Scene, \
    density_at, project_scene, project_to_ray
from .visibility import DEFAULT_SCHEME, SampleScheme, gaussian_visibility, \
    point_visibility, radiance, transmittance
from .camera import Camera, Image, generate_ray, render
from .gradients import FDReport, GradVector, RayGrad, fd_check, \
    grad_gaussian_visibility, grad_radiance, grad_transmittance
from .energy import EnergyConfig, back_project_albedo, energy_and_grad, \
    prior, prior_grad
from .calibrate import CalibrationError, CalibrationResult, SphereSpec, \
    build_from_spheres, calibrate_sphere, edge_condition, lateral_profile, \
    self_visibility
from .mapping import PoseParams, RigidObject, apply_mapping, free_params, \
    mapping_jacobian, pullback, rigid_params, rodrigues, \
    rotation_derivatives
from .optimize import NonFiniteError, OptimConfig, OptimTrace, minimize
from .fileio import SceneFile, SceneParseError, build_params, build_scene, \
    parse_scene, read_image, read_pfm, read_ppm, serialize_scene, \
    write_image, write_pfm, write_ppm
from .inverse import BatchRun, FrameResult, Problem, ShapeResult, \
    batch_random_inits, estimate_shape, octahedral_rotations, \
    random_pose_inits, rigid_pose_errors, seed_blobs, silhouette_iou, \
    solve, sweep, sweep_csv, total_variation, track

__version__ = "0.1.0"

__all__ = [
    "DEFAULT_CUTOFF", "DEFAULT_SCHEME", "BatchRun", "CalibrationError",
    "CalibrationResult", "Camera", "EnergyConfig", "FDReport", "FrameResult",
    "Gaussian", "GradVector", "Image", "NonFiniteError", "OptimConfig",
    "OptimTrace", "PoseParams", "Problem", "Ray", "RayGaussian",
    "RayGrad", "RigidObject", "SampleScheme", "Scene", "SceneFile",
    "SceneParseError", "ShapeResult", "SphereSpec", "apply_mapping",
    "back_project_albedo", "batch_random_inits", "build_from_spheres",
    "build_params", "build_scene", "calibrate_sphere", "density_at",
    "edge_condition",
    "energy_and_grad", "estimate_shape", "fd_check", "free_params",
    "gaussian_visibility", "generate_ray", "grad_gaussian_visibility",
    "grad_radiance", "grad_transmittance", "lateral_profile",
    "mapping_jacobian", "minimize", "octahedral_rotations", "parse_scene",
    "point_visibility", "prior", "prior_grad",
    "project_scene", "project_to_ray", "pullback", "radiance",
    "random_pose_inits",
    "read_image", "read_pfm", "read_ppm", "render",
    "rigid_params", "rigid_pose_errors", "rodrigues",
    "rotation_derivatives", "seed_blobs", "self_visibility",
    "serialize_scene", "silhouette_iou", "solve", "sweep", "sweep_csv",
    "total_variation", "track", "transmittance", "write_image", "write_pfm",
    "write_ppm",
]
