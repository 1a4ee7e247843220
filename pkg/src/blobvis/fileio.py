"""Scene/run-config text format plus PPM and PFM image files.

Scene files are line-oriented: `[section]` headers, `key = value` entries,
`#` comments. Repeating [camera], [gaussian], [sphere] or [object]
accumulates entries; [scene], [mapping], [energy] and [optimizer] may
appear once. A file carries either explicit [gaussian] blobs or [sphere]
specs to be calibrated, never both. Lengths are meters, angles radians,
colors in [0, 1]. Vectors are whitespace-separated numbers; the camera
orientation is a row-major world-from-camera rotation.

Images: binary P6 PPM (8- or 16-bit read, 8-bit write, values scaled by
1/maxval) and PFM (float32, negative scale = little-endian, rows stored
bottom-up). PFM round-trips are bit-exact; non-finite PFM data is rejected
on both paths.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field, fields, replace
from typing import Optional

import numpy as np

from .calibrate import SphereSpec, calibrate_sphere
from .camera import Camera, Image
from .energy import EnergyConfig
from .mapping import PoseParams, RigidObject, free_params, rigid_params
from .optimize import OptimConfig
from .scene import DEFAULT_CUTOFF, Gaussian, Scene
from .visibility import DEFAULT_SCHEME, SampleScheme


class SceneParseError(ValueError):
    def __init__(self, line, col, message):
        super().__init__(f"line {line}, col {col}: {message}")
        self.line = line
        self.col = col


@dataclass
class SceneFile:
    """Parsed scene/run configuration; geometry is blobs xor spheres."""

    m: float = 0.1
    cutoff: float = DEFAULT_CUTOFF
    gaussians: tuple = ()
    spheres: tuple = ()
    cameras: tuple = ()
    objects: tuple = ()
    mapping: Optional[str] = None
    mapping_indices: tuple = ()
    energy: EnergyConfig = field(default_factory=EnergyConfig)
    optimizer: OptimConfig = field(default_factory=OptimConfig)


_SECTION_RE = re.compile(r"^\[([a-z_]+)\]\s*$")
_KEY_RE = re.compile(r"^([A-Za-z_][A-Za-z0-9_]*)\s*=\s*(.*)$")

_SINGLETONS = ("scene", "mapping", "energy", "optimizer")
_MULTI = ("camera", "gaussian", "sphere", "object")


def _strip_comment(line):
    cut = line.find("#")
    return line if cut < 0 else line[:cut]


def _floats(raw, n, line, key):
    parts = raw.split()
    if len(parts) != n:
        raise SceneParseError(line, 1, f"{key}: expected {n} numbers, got {len(parts)}")
    try:
        return tuple(float(p) for p in parts)
    except ValueError:
        raise SceneParseError(line, 1, f"{key}: not numeric: {raw!r}")


def _float(raw, line, key):
    return _floats(raw, 1, line, key)[0]


def _int(raw, line, key):
    try:
        return int(raw.strip())
    except ValueError:
        raise SceneParseError(line, 1, f"{key}: expected integer, got {raw!r}")


def _ints(raw, line, key):
    try:
        return tuple(int(p) for p in raw.split())
    except ValueError:
        raise SceneParseError(line, 1, f"{key}: expected integers, got {raw!r}")


def parse_scene(text: str) -> SceneFile:
    """Parse the sectioned key = value format; errors carry line and column."""
    sections = []
    current = None
    for lineno, rawline in enumerate(text.splitlines(), start=1):
        line = _strip_comment(rawline).rstrip()
        if not line.strip():
            continue
        mo = _SECTION_RE.match(line.strip())
        if mo:
            name = mo.group(1)
            if name not in _SINGLETONS and name not in _MULTI:
                col = rawline.index("[") + 1
                raise SceneParseError(lineno, col, f"unknown section [{name}]")
            if name in _SINGLETONS and any(s[0] == name for s in sections):
                raise SceneParseError(lineno, 1, f"section [{name}] repeated")
            current = (name, lineno, {})
            sections.append(current)
            continue
        mo = _KEY_RE.match(line.strip())
        if not mo:
            raise SceneParseError(lineno, 1, f"expected 'key = value', got {line.strip()!r}")
        if current is None:
            raise SceneParseError(lineno, 1, "entry before any [section] header")
        key, value = mo.group(1), mo.group(2).strip()
        if key in current[2]:
            raise SceneParseError(lineno, 1,
                                  f"duplicate key {key!r} in [{current[0]}]")
        current[2][key] = (value, lineno)
    return _assemble(sections)


def _take(entry, key, default=None):
    if key in entry:
        return entry.pop(key)
    return (default, None)


def _no_leftovers(name, entry, header_line):
    if entry:
        key = next(iter(entry))
        raise SceneParseError(entry[key][1], 1, f"unknown key {key!r} in [{name}]")


def _assemble(sections) -> SceneFile:
    sf = SceneFile()
    gaussians, spheres, cameras, objects = [], [], [], []
    for name, header_line, entry in sections:
        entry = dict(entry)
        try:
            if name == "scene":
                v, ln = _take(entry, "m")
                if v is not None:
                    sf.m = _float(v, ln, "m")
                v, ln = _take(entry, "cutoff")
                if v is not None:
                    sf.cutoff = _float(v, ln, "cutoff")
            elif name == "gaussian":
                g = {}
                for key, n in (("mu", 3), ("albedo", 3)):
                    v, ln = _take(entry, key)
                    if v is None:
                        raise SceneParseError(header_line, 1, f"[gaussian] missing {key}")
                    g[key] = _floats(v, n, ln, key)
                for key in ("c", "sigma"):
                    v, ln = _take(entry, key)
                    if v is None:
                        raise SceneParseError(header_line, 1, f"[gaussian] missing {key}")
                    g[key] = _float(v, ln, key)
                gaussians.append(Gaussian(**g))
            elif name == "sphere":
                v, ln = _take(entry, "center")
                if v is None:
                    raise SceneParseError(header_line, 1, "[sphere] missing center")
                center = _floats(v, 3, ln, "center")
                v, ln = _take(entry, "radius")
                if v is None:
                    raise SceneParseError(header_line, 1, "[sphere] missing radius")
                radius = _float(v, ln, "radius")
                v, ln = _take(entry, "albedo")
                albedo = _floats(v, 3, ln, "albedo") if v is not None else (1.0, 1.0, 1.0)
                spheres.append(SphereSpec(center=center, radius=radius, albedo=albedo))
            elif name == "camera":
                cam = {}
                v, ln = _take(entry, "position")
                if v is None:
                    raise SceneParseError(header_line, 1, "[camera] missing position")
                cam["position"] = np.array(_floats(v, 3, ln, "position"))
                v, ln = _take(entry, "orientation")
                if v is None:
                    raise SceneParseError(header_line, 1, "[camera] missing orientation")
                cam["orientation"] = np.array(_floats(v, 9, ln, "orientation")).reshape(3, 3)
                for key in ("fx", "fy", "cx", "cy"):
                    v, ln = _take(entry, key)
                    if v is None:
                        raise SceneParseError(header_line, 1, f"[camera] missing {key}")
                    cam[key] = _float(v, ln, key)
                for key in ("width", "height"):
                    v, ln = _take(entry, key)
                    if v is None:
                        raise SceneParseError(header_line, 1, f"[camera] missing {key}")
                    cam[key] = _int(v, ln, key)
                cameras.append(Camera(**cam))
            elif name == "object":
                v, ln = _take(entry, "indices")
                if v is None:
                    raise SceneParseError(header_line, 1, "[object] missing indices")
                indices = _ints(v, ln, "indices")
                v, ln = _take(entry, "origin")
                origin = _floats(v, 3, ln, "origin") if v is not None else (0.0, 0.0, 0.0)
                v, ln = _take(entry, "mode")
                mode = v if v is not None else "full"
                objects.append(RigidObject(indices=indices, origin=origin, mode=mode))
            elif name == "mapping":
                v, ln = _take(entry, "type")
                if v is None:
                    raise SceneParseError(header_line, 1, "[mapping] missing type")
                if v not in ("rigid", "free"):
                    raise SceneParseError(ln, 1, f"unknown mapping type {v!r}")
                sf.mapping = v
                v, ln = _take(entry, "indices")
                if v is not None:
                    sf.mapping_indices = _ints(v, ln, "indices")
            elif name == "energy":
                kw = {}
                for key in ("term", "color_space", "pixel_weighting"):
                    v, ln = _take(entry, key)
                    if v is not None:
                        kw[key] = v
                for key in ("hsv_value_scale", "accel_weight", "limit_weight"):
                    v, ln = _take(entry, key)
                    if v is not None:
                        kw[key] = _float(v, ln, key)
                for key in ("limit_lo", "limit_hi"):
                    v, ln = _take(entry, key)
                    if v is not None:
                        kw[key] = np.array([float(p) for p in v.split()])
                v, ln = _take(entry, "far_exclusion")
                if v is not None:
                    if v not in ("auto", "on", "off"):
                        raise SceneParseError(ln, 1,
                                              "far_exclusion must be auto, on or off")
                    kw["far_exclusion"] = None if v == "auto" else (v == "on")
                sf.energy = EnergyConfig(**kw)
            elif name == "optimizer":
                kw = {}
                for key in ("max_iter", "restart", "seed"):
                    v, ln = _take(entry, key)
                    if v is not None:
                        kw[key] = _int(v, ln, key)
                for key in ("gtol", "initial_step", "c1", "backtrack"):
                    v, ln = _take(entry, key)
                    if v is not None:
                        kw[key] = _float(v, ln, key)
                v, ln = _take(entry, "preconditioner")
                if v is not None:
                    kw["preconditioner"] = v
                sf.optimizer = OptimConfig(**kw)
        except (ValueError, TypeError) as exc:
            if isinstance(exc, SceneParseError):
                raise
            raise SceneParseError(header_line, 1, f"[{name}]: {exc}") from exc
        _no_leftovers(name, entry, header_line)

    if gaussians and spheres:
        raise SceneParseError(1, 1, "scene mixes [gaussian] and [sphere] geometry")
    sf.gaussians = tuple(gaussians)
    sf.spheres = tuple(spheres)
    sf.cameras = tuple(cameras)
    sf.objects = tuple(objects)
    if sf.mapping == "rigid" and not sf.objects:
        raise SceneParseError(1, 1, "rigid mapping needs at least one [object]")
    for o in sf.objects:
        for q in o.indices:
            if not 0 <= q < max(len(sf.gaussians), len(sf.spheres)):
                raise SceneParseError(1, 1, f"[object] index {q} out of range")
    for q in sf.mapping_indices:
        if not 0 <= q < max(len(sf.gaussians), len(sf.spheres)):
            raise SceneParseError(1, 1, f"[mapping] index {q} out of range")
    return sf


def _fmt(x) -> str:
    return repr(float(x))


def _fmtv(v) -> str:
    return " ".join(repr(float(x)) for x in np.asarray(v).ravel())


def serialize_scene(sf: SceneFile) -> str:
    """Canonical text for a SceneFile; parse(serialize(x)) == x structurally."""
    out = []
    out.append("[scene]")
    out.append(f"m = {_fmt(sf.m)}")
    out.append(f"cutoff = {_fmt(sf.cutoff)}")
    for cam in sf.cameras:
        out.append("")
        out.append("[camera]")
        out.append(f"position = {_fmtv(cam.position)}")
        out.append(f"orientation = {_fmtv(cam.orientation)}")
        for key in ("fx", "fy", "cx", "cy"):
            out.append(f"{key} = {_fmt(getattr(cam, key))}")
        out.append(f"width = {cam.width}")
        out.append(f"height = {cam.height}")
    for g in sf.gaussians:
        out.append("")
        out.append("[gaussian]")
        out.append(f"c = {_fmt(g.c)}")
        out.append(f"mu = {_fmtv(g.mu)}")
        out.append(f"sigma = {_fmt(g.sigma)}")
        out.append(f"albedo = {_fmtv(g.albedo)}")
    for s in sf.spheres:
        out.append("")
        out.append("[sphere]")
        out.append(f"center = {_fmtv(s.center)}")
        out.append(f"radius = {_fmt(s.radius)}")
        out.append(f"albedo = {_fmtv(s.albedo)}")
    for o in sf.objects:
        out.append("")
        out.append("[object]")
        out.append(f"indices = {' '.join(str(i) for i in o.indices)}")
        out.append(f"origin = {_fmtv(o.origin)}")
        out.append(f"mode = {o.mode}")
    if sf.mapping is not None:
        out.append("")
        out.append("[mapping]")
        out.append(f"type = {sf.mapping}")
        if sf.mapping_indices:
            out.append(f"indices = {' '.join(str(i) for i in sf.mapping_indices)}")
    e = sf.energy
    out.append("")
    out.append("[energy]")
    out.append(f"term = {e.term}")
    out.append(f"color_space = {e.color_space}")
    out.append(f"hsv_value_scale = {_fmt(e.hsv_value_scale)}")
    out.append(f"pixel_weighting = {e.pixel_weighting}")
    out.append(f"accel_weight = {_fmt(e.accel_weight)}")
    out.append(f"limit_weight = {_fmt(e.limit_weight)}")
    if e.limit_lo is not None:
        out.append(f"limit_lo = {_fmtv(e.limit_lo)}")
    if e.limit_hi is not None:
        out.append(f"limit_hi = {_fmtv(e.limit_hi)}")
    excl = "auto" if e.far_exclusion is None else ("on" if e.far_exclusion else "off")
    out.append(f"far_exclusion = {excl}")
    o = sf.optimizer
    out.append("")
    out.append("[optimizer]")
    out.append(f"max_iter = {o.max_iter}")
    out.append(f"gtol = {_fmt(o.gtol)}")
    out.append(f"initial_step = {_fmt(o.initial_step)}")
    out.append(f"c1 = {_fmt(o.c1)}")
    out.append(f"backtrack = {_fmt(o.backtrack)}")
    out.append(f"restart = {o.restart}")
    out.append(f"preconditioner = {o.preconditioner}")
    out.append(f"seed = {o.seed}")
    return "\n".join(out) + "\n"


def build_scene(sf: SceneFile, m: float = None, cutoff: float = None,
                scheme: SampleScheme = DEFAULT_SCHEME) -> Scene:
    """Scene from a parsed file; spheres go through calibration at m."""
    m_eff = sf.m if m is None else float(m)
    cut = sf.cutoff if cutoff is None else float(cutoff)
    if sf.spheres:
        gaussians = []
        for sp in sf.spheres:
            cal = calibrate_sphere(sp.radius, m_eff, scheme)
            gaussians.append(Gaussian(c=cal.c, mu=tuple(sp.center),
                                      sigma=cal.sigma, albedo=tuple(sp.albedo)))
        return Scene(gaussians=tuple(gaussians), m=m_eff, cutoff=cut)
    return Scene(gaussians=sf.gaussians, m=m_eff, cutoff=cut)


def build_params(sf: SceneFile, template: Scene) -> Optional[PoseParams]:
    if sf.mapping == "rigid":
        return rigid_params(sf.objects)
    if sf.mapping == "free":
        idx = sf.mapping_indices or None
        return free_params(template, indices=idx)
    return None


# ---------------------------------------------------------------------------
# PPM (binary P6)

def _read_ppm_token(buf, pos):
    """Next whitespace-delimited token, skipping # comments."""
    n = len(buf)
    while pos < n:
        ch = buf[pos:pos + 1]
        if ch == b"#":
            while pos < n and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif ch.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not buf[pos:pos + 1].isspace():
        pos += 1
    if start == pos:
        raise ValueError("truncated PPM header")
    return buf[start:pos], pos


def read_ppm(path) -> np.ndarray:
    """P6 file -> float64 [H, W, 3] in [0, 1] (values scaled by 1/maxval)."""
    with open(path, "rb") as fh:
        buf = fh.read()
    magic, pos = _read_ppm_token(buf, 0)
    if magic != b"P6":
        raise ValueError(f"not a binary PPM (magic {magic!r})")
    w, pos = _read_ppm_token(buf, pos)
    h, pos = _read_ppm_token(buf, pos)
    maxval, pos = _read_ppm_token(buf, pos)
    w, h, maxval = int(w), int(h), int(maxval)
    if not (w > 0 and h > 0 and 0 < maxval < 65536):
        raise ValueError("malformed PPM header")
    pos += 1  # single whitespace after maxval
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype(np.uint8)
    count = w * h * 3
    if len(buf) - pos < count * dtype.itemsize:
        raise ValueError("truncated PPM payload")
    data = np.frombuffer(buf, dtype=dtype, count=count, offset=pos)
    return data.astype(np.float64).reshape(h, w, 3) / float(maxval)


def write_ppm(path, pixels: np.ndarray, gamma: float = 1.0):
    """Clamp to [0,1], optional display gamma, quantize to 8-bit P6."""
    px = np.asarray(pixels, dtype=np.float64)
    if px.ndim != 3 or px.shape[2] != 3:
        raise ValueError("PPM wants an [H, W, 3] array")
    px = np.clip(px, 0.0, 1.0)
    if gamma != 1.0:
        px = px ** (1.0 / gamma)
    q = np.rint(px * 255.0).astype(np.uint8)
    h, w, _ = q.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode())
        fh.write(q.tobytes())


# ---------------------------------------------------------------------------
# PFM

def read_pfm(path) -> np.ndarray:
    """PFM -> float64 [H, W, 3] (PF) or [H, W] (Pf), row 0 at the top."""
    with open(path, "rb") as fh:
        buf = fh.read()
    magic, pos = _read_ppm_token(buf, 0)
    if magic not in (b"PF", b"Pf"):
        raise ValueError(f"not a PFM (magic {magic!r})")
    w, pos = _read_ppm_token(buf, pos)
    h, pos = _read_ppm_token(buf, pos)
    scale, pos = _read_ppm_token(buf, pos)
    w, h, scale = int(w), int(h), float(scale)
    if w <= 0 or h <= 0 or scale == 0.0:
        raise ValueError("malformed PFM header")
    pos += 1
    ch = 3 if magic == b"PF" else 1
    count = w * h * ch
    dtype = np.dtype("<f4") if scale < 0 else np.dtype(">f4")
    if len(buf) - pos < count * dtype.itemsize:
        raise ValueError("truncated PFM payload")
    data = np.frombuffer(buf, dtype=dtype, count=count, offset=pos)
    arr = data.reshape(h, w, ch) if ch == 3 else data.reshape(h, w)
    arr = np.flipud(arr).astype(np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError("PFM contains non-finite values")
    if abs(scale) != 1.0:
        arr = arr * abs(scale)
    return np.ascontiguousarray(arr)


def write_pfm(path, array: np.ndarray):
    """float array -> little-endian PFM (PF for [H,W,3], Pf for [H,W])."""
    arr = np.asarray(array, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError("refusing to write non-finite values to PFM")
    if arr.ndim == 3 and arr.shape[2] == 3:
        magic = b"PF"
    elif arr.ndim == 2:
        magic = b"Pf"
    else:
        raise ValueError("PFM wants [H, W, 3] or [H, W]")
    h, w = arr.shape[0], arr.shape[1]
    data = np.flipud(arr).astype("<f4")
    with open(path, "wb") as fh:
        fh.write(magic + b"\n")
        fh.write(f"{w} {h}\n".encode())
        fh.write(b"-1.0\n")
        fh.write(data.tobytes())


def read_image(path) -> Image:
    """PPM or PFM by header sniff; gray PFM loads as image weights."""
    path = str(path)
    with open(path, "rb") as fh:
        magic = fh.read(2)
    if magic == b"P6":
        return Image(pixels=read_ppm(path))
    if magic == b"PF":
        return Image(pixels=read_pfm(path))
    if magic == b"Pf":
        w = read_pfm(path)
        return Image(pixels=np.repeat(w[:, :, None], 3, axis=2), weights=w)
    raise ValueError(f"unsupported image format (magic {magic!r})")


def write_image(path, image: Image, gamma: float = 1.0):
    """Format by extension: .pfm exact float, .ppm 8-bit display."""
    path = str(path)
    if path.endswith(".pfm"):
        write_pfm(path, image.pixels)
    elif path.endswith(".ppm"):
        write_ppm(path, image.pixels, gamma=gamma)
    else:
        raise ValueError(f"unknown image extension on {path!r}")
