"""File formats and run configuration.

All formats are ASCII-first for diffability, except PFM whose payload is the
standard little-endian float32 raster:

* clouds: ASCII PLY with x, y, z vertex properties
* depth images and masks: grayscale PFM (negative scale = little-endian)
* scans: one ``mount_height=<v>`` header line, then ``x,y,z`` CSV rows
* poses: 12 whitespace-separated numbers per line, row-major 3x4 [R | t]
* run config: ``key=value`` lines with ``#`` comments

Writers format floats with 17 significant digits, so write -> read -> write
is byte-stable (needed for the pipeline's bitwise determinism guarantees).
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from .geometry import DepthImage, PointCloud, Pose
from .laser import LaserScan2D


class FormatError(ValueError):
    """A file violated its expected on-disk format."""


def _fmt(x: float) -> str:
    return f"{x:.17g}"


# ---------------------------------------------------------------------------
# PLY point clouds


def write_ply(path, cloud: PointCloud):
    pts = cloud.points
    lines = [
        "ply",
        "format ascii 1.0",
        f"element vertex {len(pts)}",
        "property double x",
        "property double y",
        "property double z",
        "end_header",
    ]
    body = [" ".join(_fmt(c) for c in p) for p in pts]
    with open(path, "w") as f:
        f.write("\n".join(lines + body) + "\n")


def read_ply(path) -> PointCloud:
    """Parse an ASCII PLY holding x, y, z vertex properties.

    Raises FormatError (with a line number) for malformed headers, unsupported
    layouts, truncated vertex lists, or non-numeric fields.
    """
    with open(path) as f:
        lines = f.read().splitlines()
    if not lines or lines[0].strip() != "ply":
        raise FormatError(f"{path}:1: not a PLY file (missing 'ply' magic)")
    n_vertices = None
    properties = []
    header_end = None
    for i, line in enumerate(lines[1:], start=2):
        tok = line.split()
        if not tok or tok[0] == "comment":
            continue
        if tok[0] == "format":
            if tok[1:2] != ["ascii"]:
                raise FormatError(f"{path}:{i}: only ASCII PLY is supported")
        elif tok[0] == "element":
            if tok[1] == "vertex":
                try:
                    n_vertices = int(tok[2])
                except (IndexError, ValueError):
                    raise FormatError(f"{path}:{i}: bad vertex count") from None
            else:
                raise FormatError(f"{path}:{i}: unsupported element {tok[1]!r}")
        elif tok[0] == "property":
            if len(tok) != 3 or tok[1] not in ("float", "float32", "double", "float64"):
                raise FormatError(f"{path}:{i}: unsupported property {line!r}")
            properties.append(tok[2])
        elif tok[0] == "end_header":
            header_end = i
            break
        else:
            raise FormatError(f"{path}:{i}: unexpected header line {line!r}")
    if header_end is None:
        raise FormatError(f"{path}: header never ends (missing end_header)")
    if n_vertices is None:
        raise FormatError(f"{path}: header declares no vertex element")
    if properties != ["x", "y", "z"]:
        raise FormatError(f"{path}: expected exactly x, y, z properties, got {properties}")
    body = lines[header_end:]
    rows = [ln for ln in body if ln.strip()]
    if len(rows) != n_vertices:
        raise FormatError(
            f"{path}: header declares {n_vertices} vertices but file has {len(rows)}"
        )
    pts = np.zeros((n_vertices, 3))
    for r, line in enumerate(rows):
        tok = line.split()
        if len(tok) != 3:
            raise FormatError(
                f"{path}:{header_end + 1 + r}: expected 3 coordinates, got {len(tok)}"
            )
        try:
            pts[r] = [float(t) for t in tok]
        except ValueError:
            raise FormatError(f"{path}:{header_end + 1 + r}: non-numeric coordinate") from None
    return PointCloud(pts)


# ---------------------------------------------------------------------------
# PFM depth rasters


def write_pfm(path, image: DepthImage):
    """Grayscale little-endian PFM; rows are stored bottom-to-top per spec."""
    data = image.data.astype("<f4")
    with open(path, "wb") as f:
        f.write(b"Pf\n")
        f.write(f"{image.width} {image.height}\n".encode())
        f.write(b"-1.0\n")
        f.write(np.flipud(data).tobytes())


def read_pfm(path) -> DepthImage:
    """Read a grayscale PFM; negative or non-finite depths are rejected."""
    with open(path, "rb") as f:
        magic = f.readline().strip()
        if magic == b"PF":
            raise FormatError(f"{path}: color PFM is not supported (expected 'Pf')")
        if magic != b"Pf":
            raise FormatError(f"{path}: bad magic {magic!r}, expected 'Pf'")
        dims = f.readline().split()
        if len(dims) != 2:
            raise FormatError(f"{path}: malformed dimension line")
        try:
            width, height = int(dims[0]), int(dims[1])
        except ValueError:
            raise FormatError(f"{path}: non-integer dimensions") from None
        if width <= 0 or height <= 0:
            raise FormatError(f"{path}: non-positive dimensions {width}x{height}")
        try:
            scale = float(f.readline())
        except ValueError:
            raise FormatError(f"{path}: malformed scale line") from None
        endian = "<" if scale < 0 else ">"
        payload = f.read(width * height * 4)
        if len(payload) != width * height * 4:
            raise FormatError(
                f"{path}: expected {width * height * 4} payload bytes, got {len(payload)}"
            )
        raw = np.frombuffer(payload, dtype=f"{endian}f4").reshape(height, width)
        data = np.flipud(raw).astype(float)
    if not np.all(np.isfinite(data)):
        raise FormatError(f"{path}: depth contains non-finite values")
    if np.any(data < 0):
        raise FormatError(f"{path}: depth contains negative values")
    return DepthImage(width=width, height=height, data=data)


# ---------------------------------------------------------------------------
# Laser scan CSV


def write_scan(path, scan: LaserScan2D):
    lines = [f"mount_height={_fmt(scan.mount_height)}"]
    lines += [",".join(_fmt(c) for c in p) for p in scan.points]
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def read_scan(path) -> LaserScan2D:
    with open(path) as f:
        lines = [ln for ln in f.read().splitlines() if ln.strip()]
    if not lines or not lines[0].startswith("mount_height="):
        raise FormatError(f"{path}:1: missing 'mount_height=' header line")
    try:
        mount = float(lines[0].split("=", 1)[1])
    except ValueError:
        raise FormatError(f"{path}:1: non-numeric mount height") from None
    if len(lines) == 1:
        raise FormatError(f"{path}: scan file holds no points")
    pts = np.zeros((len(lines) - 1, 3))
    for i, line in enumerate(lines[1:], start=2):
        tok = line.split(",")
        if len(tok) != 3:
            raise FormatError(f"{path}:{i}: expected 3 comma-separated fields")
        try:
            pts[i - 2] = [float(t) for t in tok]
        except ValueError:
            raise FormatError(f"{path}:{i}: non-numeric field") from None
    return LaserScan2D(points=pts, mount_height=mount)


# ---------------------------------------------------------------------------
# Pose lists (row-major 3x4 per line)

_POSE_DRIFT_TOL = 1e-3


def write_poses(path, poses):
    lines = [" ".join(_fmt(x) for x in pose.matrix3x4().ravel()) for pose in poses]
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def read_poses(path):
    """Read one pose per line; light orthonormality drift is repaired.

    Rotations within 1e-3 (elementwise) of their nearest orthonormal matrix
    are re-orthonormalized via SVD; anything further off is rejected.
    """
    poses = []
    with open(path) as f:
        lines = f.read().splitlines()
    for i, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        tok = line.split()
        if len(tok) != 12:
            raise FormatError(f"{path}:{i}: expected 12 numbers, got {len(tok)}")
        try:
            vals = np.array([float(t) for t in tok])
        except ValueError:
            raise FormatError(f"{path}:{i}: non-numeric value") from None
        mat = vals.reshape(3, 4)
        R = mat[:, :3]
        U, _, Vt = np.linalg.svd(R)
        Rn = U @ Vt
        if np.linalg.det(Rn) < 0:
            raise FormatError(f"{path}:{i}: rotation is a reflection")
        if np.max(np.abs(R - Rn)) > _POSE_DRIFT_TOL:
            raise FormatError(f"{path}:{i}: rotation drifts beyond {_POSE_DRIFT_TOL}")
        poses.append(Pose(Rn, mat[:, 3]))
    if not poses:
        raise FormatError(f"{path}: no poses found")
    return poses


# ---------------------------------------------------------------------------
# Run configuration


@dataclass
class RunConfig:
    """Every tunable default of the pipeline, loadable from key=value text."""

    # dataset synthesis
    seed: int = 0
    frames: int = 5
    image_width: int = 160
    image_height: int = 120
    focal: float = 100.0
    extent: float = 12.0
    beams: int = 64
    span_deg: float = 180.0
    cam_height: float = 1.0
    mount_height: float = 1.2
    step: float = 0.15
    map_thresh: float = 30.0
    tail_prob: float = 0.5
    tail_length: float = 2.0
    misalign_sigma: float = 0.15
    corruption_seed: int = 0
    # band mask
    below: float = 1.2
    above: float = 0.8
    # confidence grid
    sigma: float = 0.2
    cell: float = 0.1
    padding: float = -1.0  # negative = use 3 * sigma
    # refinement
    k: int = 9
    hidden: tuple = (64, 64)
    model_seed: int = 0
    learning_rate: float = 1e-3
    epochs: int = 50
    batch_size: int = 1024
    train_seed: int = 0
    optimizer: str = "adam"
    grad_clip: float = 10.0
    offset_clamp: float = 2.0
    reject_radius: float = 5.0
    # metrics
    emd_cap: int = 512
    emd_seed: int = 0
    efs_max_dist: float = float("inf")
    model_path: str = ""

    def validate(self):
        if self.frames < 1:
            raise FormatError("frames must be >= 1")
        if self.image_width < 1 or self.image_height < 1:
            raise FormatError("image dimensions must be positive")
        if self.focal <= 0:
            raise FormatError("focal must be positive")
        if self.extent <= 0:
            raise FormatError("extent must be positive")
        if self.beams < 2:
            raise FormatError("beams must be >= 2")
        if not 0 < self.span_deg <= 360:
            raise FormatError("span_deg must lie in (0, 360]")
        if self.mount_height <= 0 or self.cam_height <= 0:
            raise FormatError("sensor heights must be positive")
        if self.map_thresh <= 0:
            raise FormatError("map_thresh must be positive")
        if not 0 <= self.tail_prob <= 1:
            raise FormatError("tail_prob must lie in [0, 1]")
        if self.tail_length < 0 or self.misalign_sigma < 0:
            raise FormatError("corruption magnitudes must be >= 0")
        if self.below < 0 or self.above < 0:
            raise FormatError("boundary offsets must be >= 0")
        if self.sigma <= 0 or self.cell <= 0:
            raise FormatError("sigma and cell must be positive")
        if self.k < 1:
            raise FormatError("k must be >= 1")
        if not self.hidden or any(h < 1 for h in self.hidden):
            raise FormatError("hidden sizes must be positive")
        if self.learning_rate < 0:
            raise FormatError("learning_rate must be >= 0")
        if self.epochs < 1 or self.batch_size < 1:
            raise FormatError("epochs and batch_size must be >= 1")
        if self.optimizer not in ("adam", "sgd"):
            raise FormatError(f"unknown optimizer {self.optimizer!r}")
        if self.grad_clip <= 0 or self.offset_clamp <= 0:
            raise FormatError("grad_clip and offset_clamp must be positive")
        if self.reject_radius <= 0:
            raise FormatError("reject_radius must be positive")
        if self.emd_cap < 1:
            raise FormatError("emd_cap must be >= 1")
        if self.efs_max_dist <= 0:
            raise FormatError("efs_max_dist must be positive")
        return self

    @property
    def span(self) -> float:
        return np.deg2rad(self.span_deg)

    @property
    def grid_padding(self) -> float:
        return 3.0 * self.sigma if self.padding < 0 else self.padding


_CONFIG_FIELDS = {f.name: f for f in fields(RunConfig)}


def _parse_value(name: str, raw: str, where: str):
    kind = _CONFIG_FIELDS[name].type
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "str":
            return raw
        if kind == "tuple":
            return tuple(int(t) for t in raw.split(",") if t.strip())
    except ValueError:
        raise FormatError(f"{where}: bad value {raw!r} for key {name!r}") from None
    raise FormatError(f"{where}: unhandled config type for {name!r}")


def load_config(path) -> RunConfig:
    """Parse key=value lines into a RunConfig; unknown keys are rejected."""
    cfg = RunConfig()
    with open(path) as f:
        for i, line in enumerate(f.read().splitlines(), start=1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            if "=" not in text:
                raise FormatError(f"{path}:{i}: expected key=value, got {line!r}")
            key, raw = (t.strip() for t in text.split("=", 1))
            if key not in _CONFIG_FIELDS:
                raise FormatError(f"{path}:{i}: unknown config key {key!r}")
            setattr(cfg, key, _parse_value(key, raw, f"{path}:{i}"))
    return cfg.validate()


def save_config(path, cfg: RunConfig):
    """Write the resolved configuration (sorted keys, stable formatting)."""
    lines = []
    for name in sorted(_CONFIG_FIELDS):
        val = getattr(cfg, name)
        if isinstance(val, tuple):
            text = ",".join(str(v) for v in val)
        elif isinstance(val, float):
            text = _fmt(val)
        else:
            text = str(val)
        lines.append(f"{name}={text}")
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")
