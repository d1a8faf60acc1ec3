"""Planar laser scans, height-lifted boundaries, and the front-view band mask.

A single-beam scanner at a fixed mount height cannot constrain depth directly
in the image, so the scan is lifted into a vertical band: each return gets a
lower and an upper boundary point at fixed offsets below and above the scan
plane, the band is projected through the camera, and the pixels between the
two projected boundary curves receive the return's camera depth. The result
is a depth-valued raster ("band mask") aligned with the camera image.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import CameraModel, DepthImage, Pose

_HEIGHT_TOL = 1e-6

# Offsets bracketing the obstacles of interest: a scanner 1.2 m above the
# ground, objects up to ~2 m tall.
DEFAULT_BELOW = 1.2
DEFAULT_ABOVE = 0.8


@dataclass(frozen=True, eq=False)
class LaserScan2D:
    """One planar scan: world-frame returns, all at the scanner's height.

    Points are ordered by beam angle. ``mount_height`` is the absolute z of
    the scan plane (meters above the z=0 ground).
    """

    points: np.ndarray
    mount_height: float

    def __post_init__(self):
        pts = np.array(self.points, dtype=float)
        if pts.size == 0:
            pts = pts.reshape(0, 3)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError(f"scan points must have shape (n, 3), got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ValueError("scan contains non-finite points")
        if pts.shape[0] and np.max(np.abs(pts[:, 2] - self.mount_height)) > _HEIGHT_TOL:
            raise ValueError("all scan points must sit at the mount height")
        pts.flags.writeable = False
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True, eq=False)
class BoundarySet:
    """Lower/upper lifted copies of a scan (same xy, shifted z)."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float)
        up = np.asarray(self.upper, dtype=float)
        if lo.shape != up.shape or lo.ndim != 2 or lo.shape[1] != 3:
            raise ValueError("lower/upper must be matching (n, 3) arrays")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", up)


# The band mask is itself a depth-valued raster.
Mask = DepthImage


def scan_from_polar(angles, ranges, mount_height: float, sensor_pose: Pose | None = None) -> LaserScan2D:
    """Build a scan from per-beam polar measurements.

    Beam i becomes sensor_pose applied to (r cos a, r sin a, 0), with z then
    forced to ``mount_height``. Non-positive or non-finite ranges are dropped;
    beam ordering is preserved. Raises ValueError on length mismatch.
    """
    a = np.asarray(angles, dtype=float)
    r = np.asarray(ranges, dtype=float)
    if a.shape != r.shape:
        raise ValueError(f"angles ({a.shape}) and ranges ({r.shape}) differ in length")
    keep = np.isfinite(r) & (r > 0) & np.isfinite(a)
    a = a[keep]
    r = r[keep]
    pts = np.stack([r * np.cos(a), r * np.sin(a), np.zeros_like(r)], axis=1)
    if sensor_pose is not None:
        pts = sensor_pose.apply(pts)
    pts[:, 2] = mount_height
    return LaserScan2D(points=pts, mount_height=mount_height)


def build_boundaries(
    scan: LaserScan2D, below: float = DEFAULT_BELOW, above: float = DEFAULT_ABOVE
) -> BoundarySet:
    """Lift the scan to its lower (z - below) and upper (z + above) bounds."""
    if len(scan) == 0:
        raise ValueError("cannot build boundaries from an empty scan")
    lower = scan.points.copy()
    upper = scan.points.copy()
    lower[:, 2] -= below
    upper[:, 2] += above
    return BoundarySet(lower=lower, upper=upper)


def _fill_span(data: np.ndarray, col: int, v_a: float, v_b: float, s: float):
    """Write depth s into rows [ceil(min), floor(max)] of one column, keeping
    the smaller depth where spans overlap (near occludes far)."""
    h, w = data.shape
    if not (0 <= col < w):
        return
    r0 = int(np.ceil(min(v_a, v_b)))
    r1 = int(np.floor(max(v_a, v_b)))
    r0 = max(r0, 0)
    r1 = min(r1, h - 1)
    if r0 > r1:
        return
    seg = data[r0 : r1 + 1, col]
    seg[:] = np.where(seg == 0, s, np.minimum(seg, s))


def build_laser_mask(
    cam: CameraModel,
    scan: LaserScan2D,
    below: float = DEFAULT_BELOW,
    above: float = DEFAULT_ABOVE,
) -> Mask:
    """Rasterize the lifted scan band into a camera-aligned depth mask.

    For each return whose lower and upper boundary points both project in
    view, the vertical pixel span between the two projections is filled with
    the return's projected depth. Columns between consecutive in-view beams
    are bridged by linear interpolation of (v_lower, v_upper, s), but only
    when the beams' angular gap (about the camera center, standing in for the
    scanner origin) is below twice the scan's nominal beam spacing, so gaps
    from dropped beams are not invented. Overlaps keep the smaller depth.
    """
    data = np.zeros((cam.height, cam.width))
    if len(scan) == 0:
        return DepthImage(width=cam.width, height=cam.height, data=data)

    bounds = build_boundaries(scan, below=below, above=above)
    uv_s, s_s, ok_s = cam.project(scan.points)
    uv_l, _, ok_l = cam.project(bounds.lower)
    uv_u, _, ok_u = cam.project(bounds.upper)
    usable = ok_l & ok_u & ok_s

    u = uv_s[:, 0]
    s = s_s
    v_lo = uv_l[:, 1]
    v_up = uv_u[:, 1]

    for i in np.nonzero(usable)[0]:
        _fill_span(data, int(round(u[i])), v_up[i], v_lo[i], s[i])

    n = len(scan)
    if n >= 2:
        center_xy = cam.center()[:2]
        rel = scan.points[:, :2] - center_xy
        theta = np.unwrap(np.arctan2(rel[:, 1], rel[:, 0]))
        gaps = np.abs(np.diff(theta))
        nominal = float(np.median(gaps)) if gaps.size else 0.0
        for i in range(n - 1):
            j = i + 1
            if not (usable[i] and usable[j]):
                continue
            if nominal <= 0 or not (gaps[i] < 2.0 * nominal):
                continue
            ci = int(round(u[i]))
            cj = int(round(u[j]))
            if ci == cj or abs(u[j] - u[i]) < 1e-9:
                continue
            step = 1 if cj > ci else -1
            for col in range(ci + step, cj, step):
                t = (col - u[i]) / (u[j] - u[i])
                t = min(max(t, 0.0), 1.0)
                va = v_up[i] + t * (v_up[j] - v_up[i])
                vb = v_lo[i] + t * (v_lo[j] - v_lo[i])
                sv = s[i] + t * (s[j] - s[i])
                _fill_span(data, col, va, vb, sv)

    return DepthImage(width=cam.width, height=cam.height, data=data)
