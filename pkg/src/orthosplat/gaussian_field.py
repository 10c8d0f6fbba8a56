"""Parsing, covariance reconstruction, visibility and pruning of splat scenes.

Scenes arrive as the de-facto binary PLY layout written by 3D-Gaussian-splat
trainers: per-vertex position, DC + higher-order SH color coefficients
(channel-major ``f_rest``), log-space scales, logit opacity and a (w,x,y,z)
quaternion.  Raw file values for scale/opacity/rotation are retained so a
parsed field re-emits bit-identically.
"""

from __future__ import annotations

import hashlib
import io
import json
import math
from dataclasses import dataclass, field as dc_field, replace

import numpy as np

from .errors import InputError, PlyParseError

_REQUIRED_PROPS = (
    "x",
    "y",
    "z",
    "f_dc_0",
    "f_dc_1",
    "f_dc_2",
    "opacity",
    "scale_0",
    "scale_1",
    "scale_2",
    "rot_0",
    "rot_1",
    "rot_2",
    "rot_3",
)

_PLY_TYPES = {
    "float": "<f4",
    "float32": "<f4",
    "double": "<f8",
    "float64": "<f8",
}


@dataclass(frozen=True)
class Gaussian:
    """One splat: center (m), per-axis stddevs (m), unit quaternion (w,x,y,z),
    opacity, SH coefficients ((degree+1)^2, 3) and a visibility score."""

    center: np.ndarray
    scale: np.ndarray
    rotation: np.ndarray
    opacity: float
    sh_coeffs: np.ndarray
    visibility: float = 1.0


@dataclass(frozen=True)
class GaussianField:
    """Column-oriented set of Gaussians sharing one SH degree.

    Immutable after construction; safe to share across threads.  ``raw`` holds
    the original file values of scale/opacity/rotation when the field came
    from a PLY, enabling bitwise round-trip re-emission.
    """

    centers: np.ndarray  # (N, 3) float64
    scales: np.ndarray  # (N, 3) float64, stddevs > 0
    rotations: np.ndarray  # (N, 4) float64, unit (w,x,y,z)
    opacities: np.ndarray  # (N,) float64 in [0, 1]
    sh: np.ndarray  # (N, (degree+1)^2, 3) float64
    visibility: np.ndarray  # (N,) float64 in [0, 1]
    sh_degree: int
    source_digest: str = ""
    raw: dict = dc_field(default_factory=dict, repr=False)

    def __len__(self) -> int:
        return self.centers.shape[0]

    def __getitem__(self, i: int) -> Gaussian:
        return Gaussian(
            center=self.centers[i],
            scale=self.scales[i],
            rotation=self.rotations[i],
            opacity=float(self.opacities[i]),
            sh_coeffs=self.sh[i],
            visibility=float(self.visibility[i]),
        )

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]


@dataclass(frozen=True)
class CameraPose:
    """World-to-camera pose: x_cam = rotation @ x_world + translation."""

    rotation: np.ndarray  # (3, 3)
    translation: np.ndarray  # (3,)
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64)
        if r.shape != (3, 3) or not np.allclose(r @ r.T, np.eye(3), atol=1e-6):
            raise InputError("camera rotation is not orthonormal within 1e-6")
        if self.fx <= 0 or self.fy <= 0:
            raise InputError("focal lengths must be positive")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _degree_from_rest(n_rest: int) -> int:
    if n_rest == 0:
        return 0
    if n_rest % 3 != 0:
        raise PlyParseError(f"f_rest count {n_rest} is not divisible by 3")
    per_channel = n_rest // 3
    degree = int(round(math.sqrt(per_channel + 1))) - 1
    if (degree + 1) ** 2 - 1 != per_channel or not 1 <= degree <= 3:
        raise PlyParseError(f"f_rest count {n_rest} does not match any SH degree in 0..3")
    return degree


def parse_gaussian_ply(data: bytes) -> GaussianField:
    """Decode a binary little-endian splat PLY into a GaussianField.

    Raw scales are exponentiated, raw opacities pass through a logistic
    sigmoid, quaternions are renormalized and the SH degree is inferred from
    the number of ``f_rest_*`` properties.
    """
    stream = io.BytesIO(data)
    magic = stream.readline().strip()
    if magic != b"ply":
        raise PlyParseError("not a PLY file (missing 'ply' magic)")
    fmt = stream.readline().strip()
    if fmt != b"format binary_little_endian 1.0":
        raise PlyParseError(f"unsupported PLY format line: {fmt.decode('ascii', 'replace')}")

    elements: list[tuple[str, int, list[tuple[str, str]]]] = []
    current: tuple[str, int, list[tuple[str, str]]] | None = None
    while True:
        line = stream.readline()
        if not line:
            raise PlyParseError("header ended without end_header")
        line = line.strip().decode("ascii", "replace")
        if line == "end_header":
            break
        if not line or line.startswith("comment") or line.startswith("obj_info"):
            continue
        parts = line.split()
        if parts[0] == "element":
            if len(parts) != 3:
                raise PlyParseError(f"malformed element line: {line}")
            current = (parts[1], int(parts[2]), [])
            elements.append(current)
        elif parts[0] == "property":
            if current is None:
                raise PlyParseError("property before any element")
            if parts[1] == "list":
                raise PlyParseError("list properties are not supported in splat PLYs")
            if len(parts) != 3:
                raise PlyParseError(f"malformed property line: {line}")
            if parts[1] not in _PLY_TYPES:
                raise PlyParseError(f"unsupported property type {parts[1]!r} for {parts[2]!r}")
            current[2].append((parts[2], _PLY_TYPES[parts[1]]))
        else:
            raise PlyParseError(f"unrecognized header line: {line}")

    vertex = next((e for e in elements if e[0] == "vertex"), None)
    if vertex is None:
        raise PlyParseError("no vertex element in header")
    for e in elements:
        if e[0] != "vertex" and elements.index(e) < elements.index(vertex) and e[1] > 0:
            raise PlyParseError(f"element {e[0]!r} precedes vertex data; unsupported layout")

    _, n_vertices, props = vertex
    names = [p[0] for p in props]
    for req in _REQUIRED_PROPS:
        if req not in names:
            raise PlyParseError(f"missing required vertex property {req!r}")

    dtype = np.dtype([(name, typ) for name, typ in props])
    payload = stream.read(dtype.itemsize * n_vertices)
    if len(payload) < dtype.itemsize * n_vertices:
        got = len(payload) // dtype.itemsize
        raise PlyParseError(
            f"truncated payload: expected {n_vertices} vertices, payload holds {got}"
        )
    table = np.frombuffer(payload, dtype=dtype, count=n_vertices)

    rest_names = sorted(
        (n for n in names if n.startswith("f_rest_")), key=lambda n: int(n[len("f_rest_") :])
    )
    expected = [f"f_rest_{i}" for i in range(len(rest_names))]
    if rest_names != expected:
        raise PlyParseError("f_rest_* properties are not a contiguous 0-based range")
    degree = _degree_from_rest(len(rest_names))

    def col(name: str) -> np.ndarray:
        arr = np.asarray(table[name], dtype=np.float64)
        bad = ~np.isfinite(arr)
        if bad.any():
            idx = int(np.argmax(bad))
            raise PlyParseError(f"non-finite value in property {name!r} at vertex {idx}")
        return arr

    centers = np.stack([col("x"), col("y"), col("z")], axis=1)
    raw_scales = np.stack([col("scale_0"), col("scale_1"), col("scale_2")], axis=1)
    raw_opacity = col("opacity")
    raw_rot = np.stack([col(f"rot_{i}") for i in range(4)], axis=1)
    f_dc = np.stack([col(f"f_dc_{i}") for i in range(3)], axis=1)

    norms = np.linalg.norm(raw_rot, axis=1)
    if (norms == 0).any():
        idx = int(np.argmax(norms == 0))
        raise PlyParseError(f"zero quaternion in properties rot_0..rot_3 at vertex {idx}")

    n_basis = (degree + 1) ** 2
    sh = np.zeros((n_vertices, n_basis, 3), dtype=np.float64)
    sh[:, 0, :] = f_dc
    if degree > 0:
        per = n_basis - 1
        rest = np.stack([col(n) for n in rest_names], axis=1)  # (N, 3*per) channel-major
        sh[:, 1:, :] = rest.reshape(n_vertices, 3, per).transpose(0, 2, 1)

    # keep the original file columns (native dtype) for bitwise re-emission
    raw = {
        "scales": np.stack([np.asarray(table[f"scale_{i}"]) for i in range(3)], axis=1),
        "opacity": np.asarray(table["opacity"]).copy(),
        "rotations": np.stack([np.asarray(table[f"rot_{i}"]) for i in range(4)], axis=1),
    }
    return GaussianField(
        centers=centers,
        scales=np.exp(raw_scales),
        rotations=raw_rot / norms[:, None],
        opacities=_sigmoid(raw_opacity),
        sh=sh,
        visibility=np.ones(n_vertices, dtype=np.float64),
        sh_degree=degree,
        source_digest=hashlib.sha256(data).hexdigest(),
        raw=raw,
    )


def write_gaussian_ply(field: GaussianField) -> bytes:
    """Re-emit a field as binary PLY (inverse transforms of the decode step).

    Fields parsed from a file reuse their retained raw columns, so
    parse -> write -> parse is bitwise stable on the decoded values.
    """
    n = len(field)
    degree = field.sh_degree
    per = (degree + 1) ** 2 - 1
    names = ["x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2"]
    names += [f"f_rest_{i}" for i in range(3 * per)]
    names += ["opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"]
    dtype = np.dtype([(nm, "<f4") for nm in names])
    out = np.zeros(n, dtype=dtype)

    for i, nm in enumerate(("x", "y", "z")):
        out[nm] = field.centers[:, i].astype(np.float32)
    for i in range(3):
        out[f"f_dc_{i}"] = field.sh[:, 0, i].astype(np.float32)
    if per:
        rest = field.sh[:, 1:, :].transpose(0, 2, 1).reshape(n, 3 * per)
        for i in range(3 * per):
            out[f"f_rest_{i}"] = rest[:, i].astype(np.float32)

    raw = field.raw or {}
    if "scales" in raw:
        for i in range(3):
            out[f"scale_{i}"] = raw["scales"][:, i]
        out["opacity"] = raw["opacity"]
        for i in range(4):
            out[f"rot_{i}"] = raw["rotations"][:, i]
    else:
        for i in range(3):
            out[f"scale_{i}"] = np.log(field.scales[:, i]).astype(np.float32)
        a = np.clip(field.opacities, 1e-12, 1.0 - 1e-12)
        out["opacity"] = np.log(a / (1.0 - a)).astype(np.float32)
        for i in range(4):
            out[f"rot_{i}"] = field.rotations[:, i].astype(np.float32)

    header = ["ply", "format binary_little_endian 1.0", f"element vertex {n}"]
    header += [f"property float {nm}" for nm in names]
    header.append("end_header")
    return ("\n".join(header) + "\n").encode("ascii") + out.tobytes()


def field_to_json(field: GaussianField) -> str:
    """JSON dump of all decoded values, for golden comparisons."""
    doc = {
        "sh_degree": field.sh_degree,
        "count": len(field),
        "source_digest": field.source_digest,
        "gaussians": [
            {
                "center": field.centers[i].tolist(),
                "scale": field.scales[i].tolist(),
                "rotation": field.rotations[i].tolist(),
                "opacity": float(field.opacities[i]),
                "sh": field.sh[i].tolist(),
                "visibility": float(field.visibility[i]),
            }
            for i in range(len(field))
        ],
    }
    return json.dumps(doc, indent=1, sort_keys=True)


def quat_to_rot(q: np.ndarray) -> np.ndarray:
    """Rotation matrix of a unit quaternion (w, x, y, z)."""
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ],
        dtype=np.float64,
    )


def rotations_to_matrices(rotations: np.ndarray) -> np.ndarray:
    """Vectorized quat_to_rot over an (N, 4) array -> (N, 3, 3)."""
    w, x, y, z = rotations[:, 0], rotations[:, 1], rotations[:, 2], rotations[:, 3]
    m = np.empty((rotations.shape[0], 3, 3), dtype=np.float64)
    m[:, 0, 0] = 1 - 2 * (y * y + z * z)
    m[:, 0, 1] = 2 * (x * y - w * z)
    m[:, 0, 2] = 2 * (x * z + w * y)
    m[:, 1, 0] = 2 * (x * y + w * z)
    m[:, 1, 1] = 1 - 2 * (x * x + z * z)
    m[:, 1, 2] = 2 * (y * z - w * x)
    m[:, 2, 0] = 2 * (x * z - w * y)
    m[:, 2, 1] = 2 * (y * z + w * x)
    m[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return m


def covariance_of(g: Gaussian) -> np.ndarray:
    """Covariance R diag(scale^2) R^T of one Gaussian (symmetric PD)."""
    r = quat_to_rot(g.rotation)
    cov = (r * (g.scale**2)[None, :]) @ r.T
    return (cov + cov.T) / 2.0


def estimate_visibility(field: GaussianField, cameras: list[CameraPose] | None = None) -> GaussianField:
    """Fill per-Gaussian visibility by frustum-projection counting.

    With cameras: fraction of views in which the center projects inside the
    image with positive depth, provided opacity exceeds 0.01.  Without
    cameras every score is 1.
    """
    if not cameras:
        return replace(field, visibility=np.ones(len(field), dtype=np.float64))
    counts = np.zeros(len(field), dtype=np.float64)
    for cam in cameras:
        r = np.asarray(cam.rotation, dtype=np.float64)
        t = np.asarray(cam.translation, dtype=np.float64)
        pc = field.centers @ r.T + t
        z = pc[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            u = cam.fx * pc[:, 0] / z + cam.cx
            v = cam.fy * pc[:, 1] / z + cam.cy
        inside = (z > 0) & (u >= 0) & (u < cam.width) & (v >= 0) & (v < cam.height)
        counts += inside
    vis = np.where(field.opacities > 0.01, counts / len(cameras), 0.0)
    return replace(field, visibility=vis)


def prune(field: GaussianField, alpha_min: float, v_min: float) -> GaussianField:
    """Keep Gaussians with opacity >= alpha_min and visibility >= v_min (order kept)."""
    if not (0.0 <= alpha_min <= 1.0 and 0.0 <= v_min <= 1.0):
        raise InputError("prune thresholds must lie in [0, 1]")
    keep = (field.opacities >= alpha_min) & (field.visibility >= v_min)
    raw = field.raw or {}
    return GaussianField(
        centers=field.centers[keep],
        scales=field.scales[keep],
        rotations=field.rotations[keep],
        opacities=field.opacities[keep],
        sh=field.sh[keep],
        visibility=field.visibility[keep],
        sh_degree=field.sh_degree,
        source_digest=field.source_digest,
        raw={k: v[keep] for k, v in raw.items()},
    )
