"""Command-line front end: render, gradcheck, calibrate, track, shape, sweep.

Exit codes: 0 success, 1 failed check or failed optimization, 2 usage or
I/O error. Every command is deterministic given its flags and --seed.

Target images (--frames) are matched to the scene file's cameras in file
order; commands that optimize against images accept any multiple of the
camera count and treat each group as one frame. When --frames is omitted,
track, gradcheck and sweep render the scene itself as the target, which is
the usual synthetic-experiment setup with ground truth at theta = 0.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace

import numpy as np

from .camera import Image, render
from .calibrate import CalibrationError, calibrate_sphere
from .fileio import (SceneParseError, build_params, build_scene, parse_scene,
                     read_image, read_pfm, serialize_scene, write_image)
from .gradients import fd_check
from .inverse import (Problem, batch_random_inits, estimate_shape, sweep,
                      sweep_csv, track)
from .optimize import NonFiniteError
from .visibility import DEFAULT_SCHEME, SampleScheme

# Test hook: when set to a float, gradcheck scales the first component of
# every analytic gradient by it, so the harness can confirm the check
# actually fails on a broken gradient.
FAULT_ENV = "BLOBVIS_GRADCHECK_FAULT"


def _parse_samples(spec: str) -> SampleScheme:
    """K-spec: 'lo:hi' inclusive integer range or comma-separated offsets,
    with an optional '@ell' suffix."""
    ell = 1.0
    if "@" in spec:
        spec, ell_part = spec.split("@", 1)
        ell = float(ell_part)
    if ":" in spec:
        lo_s, hi_s = spec.split(":", 1)
        lo, hi = int(lo_s), int(hi_s)
        if hi < lo:
            raise ValueError(f"empty sample range {spec!r}")
        offsets = tuple(range(lo, hi + 1))
    else:
        offsets = tuple(int(t) for t in spec.split(",") if t.strip())
    return SampleScheme(offsets=offsets, ell=ell)


def _parse_range(spec: str):
    lo_s, _, hi_s = spec.partition(":")
    if not _:
        raise ValueError(f"--range wants lo:hi, got {spec!r}")
    return float(lo_s), float(hi_s)


def _load(args):
    """Scene file -> (scene file, scene, params, cameras) honoring the
    --m/--cutoff/--samples overrides."""
    with open(args.scene, "r", encoding="utf-8") as fh:
        sf = parse_scene(fh.read())
    scheme = _parse_samples(args.samples) if args.samples else DEFAULT_SCHEME
    scene = build_scene(sf, m=args.m, cutoff=args.cutoff, scheme=scheme)
    params = build_params(sf, scene)
    return sf, scene, params, list(sf.cameras), scheme


def _energy_config(sf, args) -> EnergyConfig:
    cfg = sf.energy
    if args.energy is not None and args.energy != cfg.term:
        cfg = replace(cfg, term=args.energy)
    return cfg


def _load_frames(args, cameras, scene, scheme):
    """Group --frames into per-frame image lists, one image per camera;
    without --frames, a single self-rendered frame."""
    if not args.frames:
        return [[render(scene, cam, scheme) for cam in cameras]]
    if len(args.frames) % len(cameras) != 0:
        raise ValueError(f"{len(args.frames)} frame images for "
                         f"{len(cameras)} cameras")
    weights = None
    if getattr(args, "weights", None):
        weights = read_pfm(args.weights)
        if weights.ndim == 3:
            weights = weights.mean(axis=2)
    images = []
    for path in args.frames:
        img = read_image(path)
        if weights is not None:
            img = Image(pixels=img.pixels, weights=weights)
        images.append(img)
    n = len(cameras)
    return [images[i:i + n] for i in range(0, len(images), n)]


# ---------------------------------------------------------------------------
# commands

def cmd_render(args) -> int:
    _, scene, _, cameras, scheme = _load(args)
    if not cameras:
        raise ValueError("scene file has no [camera] section")
    if not 0 <= args.camera < len(cameras):
        raise ValueError(f"camera index {args.camera} out of range")
    img = render(scene, cameras[args.camera], scheme)
    write_image(args.out, img)
    return 0


def cmd_gradcheck(args) -> int:
    sf, scene, params, cameras, scheme = _load(args)
    if params is None:
        raise ValueError("gradcheck needs a [mapping] section")
    if not cameras:
        raise ValueError("scene file has no [camera] section")
    if args.inits == 0:
        print("gradcheck: 0 checks requested, nothing to do")
        return 0
    targets = _load_frames(args, cameras, scene, scheme)[0]
    problem = Problem(template=scene, params=params, cameras=cameras,
                      targets=targets, config=_energy_config(sf, args),
                      scheme=scheme)
    fault = os.environ.get(FAULT_ENV)
    scale = float(fault) if fault else None

    def gradient(theta):
        g = problem.gradient(theta)
        if scale is not None:
            g = g.copy()
            g[0] *= scale
        return g

    rng = np.random.default_rng(args.seed)
    worst = None
    failures = 0
    print(f"{'check':>5} {'worst parameter':<14} {'rel error':>12} "
          f"{'abs error':>12}")
    for i in range(args.inits):
        theta = params.values + rng.normal(scale=0.05, size=params.dim)
        report = fd_check(problem.objective, gradient, theta)
        bad = [e for e in report.entries
               if e.rel_error >= 1e-4 and e.abs_error >= 1e-7]
        top = max(report.entries, key=lambda e: e.rel_error)
        if bad:
            failures += 1
            top = max(bad, key=lambda e: e.rel_error)
        if worst is None or top.rel_error > worst.rel_error:
            worst = top
        print(f"{i:>5} {top.name:<14} {top.rel_error:>12.3e} "
              f"{top.abs_error:>12.3e}{'  FAIL' if bad else ''}")
    if failures:
        print(f"gradcheck: {failures}/{args.inits} checks failed; worst "
              f"{worst.name}: analytic {worst.analytic!r} vs "
              f"numeric {worst.numeric!r} (rel {worst.rel_error:.3e})")
        return 1
    print(f"gradcheck: {args.inits} checks passed "
          f"(worst rel error {worst.rel_error:.3e})")
    return 0


def cmd_calibrate(args) -> int:
    res = calibrate_sphere(args.radius, args.m)
    print(f"radius = {args.radius!r}")
    print(f"m = {args.m!r}")
    print(f"c = {res.c!r}")
    print(f"sigma = {res.sigma!r}")
    print(f"beta = {res.beta!r}")
    print(f"x = {res.x!r}")
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(f"# sphere r={args.radius!r} m={args.m!r}\n"
                     f"[gaussian]\nc = {res.c!r}\nmu = 0.0 0.0 0.0\n"
                     f"sigma = {res.sigma!r}\n"
                     f"albedo = 1.0 1.0 1.0\n")
    return 0


def _print_batch(runs, tol):
    ok = [r for r in runs if not r.aborted and max(r.errors) <= tol]
    frac = len(ok) / len(runs)
    print(f"batch: {len(ok)}/{len(runs)} succeeded "
          f"(success fraction {frac!r}, tolerance {tol!r} m)")
    if ok:
        mean = np.mean([r.errors for r in ok], axis=0)
        for j, e in enumerate(mean):
            print(f"object {j} mean error over successes = {float(e)!r} m")
    return frac


def cmd_track(args) -> int:
    sf, scene, params, cameras, scheme = _load(args)
    if params is None or params.mapping != "rigid":
        raise ValueError("track needs a rigid [mapping] section")
    if not cameras:
        raise ValueError("scene file has no [camera] section")
    frames = _load_frames(args, cameras, scene, scheme)
    cfg = _energy_config(sf, args)
    if args.inits:
        runs = batch_random_inits(scene, params, cameras, frames[0], cfg,
                                  sf.optimizer, args.inits, args.seed,
                                  scheme=scheme,
                                  symmetries=None)
        _print_batch(runs, args.success_tol)
        if args.out:
            with open(args.out, "w", encoding="utf-8") as fh:
                fh.write("run,aborted," + ",".join(
                    f"error{j}" for j in range(len(runs[0].errors))) + "\n")
                for i, r in enumerate(runs):
                    errs = ",".join(repr(float(e)) for e in r.errors)
                    fh.write(f"{i},{int(r.aborted)},{errs}\n")
        return 0
    results = track(scene, params, cameras, frames, cfg, sf.optimizer,
                    scheme=scheme)
    aborted = any(r.aborted for r in results)
    prefix = args.out or "track"
    with open(prefix + ".poses.csv", "w", encoding="utf-8") as fh:
        fh.write("frame," + ",".join(
            f"theta{j}" for j in range(params.dim)) + "\n")
        for t, r in enumerate(results):
            fh.write(f"{t}," + ",".join(repr(float(v)) for v in r.theta)
                     + "\n")
    for t, r in enumerate(results):
        r.trace.write_csv(f"{prefix}.frame{t:03d}.trace.csv")
        status = "aborted" if r.aborted else r.trace.status
        print(f"frame {t}: {status}, {len(r.trace.energies) - 1} iterations, "
              f"final energy {r.trace.energies[-1]!r}")
    return 1 if aborted else 0


def cmd_shape(args) -> int:
    sf, scene, params, cameras, scheme = _load(args)
    if not cameras:
        raise ValueError("scene file has no [camera] section")
    if len(scene) == 0:
        print("warning: no seed gaussians, writing the scene unchanged",
              file=sys.stderr)
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(serialize_scene(sf))
        return 0
    frames = _load_frames(args, cameras, scene, scheme)
    result = estimate_shape(scene, cameras, frames[0],
                            _energy_config(sf, args), sf.optimizer,
                            scheme=scheme)
    out_sf = parse_scene(serialize_scene(sf))
    out_sf.gaussians = result.scene.gaussians
    out_sf.spheres = ()
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write(serialize_scene(out_sf))
    result.trace.write_csv(args.out + ".trace.csv")
    e0, e1 = result.trace.energies[0], result.trace.energies[-1]
    print(f"shape: {result.trace.status}, energy {e0!r} -> {e1!r} "
          f"({len(result.trace.energies) - 1} iterations)")
    return 1 if result.trace.status == "aborted" else 0


def cmd_sweep(args) -> int:
    sf, scene, params, cameras, scheme = _load(args)
    if not cameras:
        raise ValueError("scene file has no [camera] section")
    lo, hi = _parse_range(args.range)
    targets = _load_frames(args, cameras, scene, scheme)[0]
    rows = sweep(scene, params, cameras, targets, _energy_config(sf, args),
                 args.param, lo, hi, args.steps, scheme=scheme,
                 vis_camera=args.camera)
    text = sweep_csv(rows)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


# ---------------------------------------------------------------------------
# argument plumbing

def _add_common(p, scene_required=True):
    p.add_argument("--scene", required=scene_required,
                   help="scene file path")
    p.add_argument("--m", type=float, default=None,
                   help="override smoothness m")
    p.add_argument("--cutoff", type=float, default=None,
                   help="override contribution cutoff (0 disables)")
    p.add_argument("--samples", default=None, metavar="K-SPEC",
                   help="sample offsets, e.g. '-4:0' or '-4,-2,0[@ell]'")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="blobvis",
        description="Translucent-Gaussian scenes: forward rendering, "
                    "gradient checks, sphere calibration, pose tracking, "
                    "shape estimation and energy sweeps.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("render", help="render one camera view to an image")
    _add_common(p)
    p.add_argument("--camera", type=int, default=0)
    p.add_argument("--out", required=True, help="output .pfm or .ppm")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("gradcheck",
                       help="compare analytic gradients with finite "
                            "differences at random poses")
    _add_common(p)
    p.add_argument("--frames", nargs="*", default=None,
                   help="target images, one per camera (default: "
                        "self-render)")
    p.add_argument("--weights", default=None,
                   help="per-pixel weight map (PFM)")
    p.add_argument("--energy", choices=("pc", "mc"), default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--inits", type=int, default=100, metavar="N",
                   help="number of random checks")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("calibrate",
                       help="blob amplitude and width for a sphere of "
                            "given radius and center transmittance")
    p.add_argument("radius", type=float)
    p.add_argument("--m", type=float, required=True,
                   help="through-center transmittance in (0,1)")
    p.add_argument("--out", default=None,
                   help="optionally write a one-gaussian scene snippet")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("track",
                       help="rigid pose estimation per frame, or a batch "
                            "of random initializations")
    _add_common(p)
    p.add_argument("--frames", nargs="*", default=None,
                   help="frame images, camera-major (default: self-render)")
    p.add_argument("--weights", default=None)
    p.add_argument("--energy", choices=("pc", "mc"), default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--inits", type=int, default=0, metavar="N",
                   help="batch mode: N random initializations")
    p.add_argument("--success-tol", type=float, default=0.05,
                   help="batch success threshold on per-object RMS blob "
                        "displacement (meters)")
    p.add_argument("--out", default=None,
                   help="output prefix (poses + per-frame traces) or batch "
                        "CSV path")
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("shape",
                       help="free-gaussian shape estimation from "
                            "silhouette images")
    _add_common(p)
    p.add_argument("--frames", nargs="*", default=None,
                   help="silhouette images, one per camera")
    p.add_argument("--weights", default=None)
    p.add_argument("--energy", choices=("pc", "mc"), default=None)
    p.add_argument("--out", required=True, help="optimized scene file")
    p.set_defaults(func=cmd_shape)

    p = sub.add_parser("sweep",
                       help="energy (and blob visibility) along one "
                            "parameter")
    _add_common(p)
    p.add_argument("--frames", nargs="*", default=None,
                   help="target images, one per camera (default: "
                        "self-render)")
    p.add_argument("--weights", default=None)
    p.add_argument("--energy", choices=("pc", "mc"), default=None)
    p.add_argument("--param", required=True,
                   help="'theta:i' or 'gauss:q:field[:component]'")
    p.add_argument("--range", required=True, metavar="LO:HI")
    p.add_argument("--steps", type=int, default=100)
    p.add_argument("--camera", type=int, default=0,
                   help="camera whose central pixel reports visibility")
    p.add_argument("--out", default=None, help="CSV path (default stdout)")
    p.set_defaults(func=cmd_sweep)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except NonFiniteError as exc:
        print(f"error: optimization aborted: {exc}", file=sys.stderr)
        return 1
    except CalibrationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except SceneParseError as exc:
        print(f"error: {args.scene}:{exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
