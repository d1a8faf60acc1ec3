"""Rigid transforms, pinhole projection, and depth image <-> point cloud conversion.

Frame conventions used throughout the package:

* world frame: right handed, z up (sensor mount heights are measured along +z)
* camera frame: x right, y down, z forward; the depth of a point is its
  camera-frame z coordinate
* ``CameraModel.extrinsic`` maps world coordinates to camera coordinates

Pixel coordinates are (u, v) = (column, row) with the origin at the top-left
corner; a projected point is in view when 0 <= u < width and 0 <= v < height.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

# A 3-vector; used for annotation readability only.
Vec3 = np.ndarray

_ORTHO_TOL = 1e-9
_MIN_DEPTH = 1e-6


def _as_vec3(p) -> np.ndarray:
    v = np.asarray(p, dtype=float)
    if v.shape != (3,):
        raise ValueError(f"expected a 3-vector, got shape {v.shape}")
    return v


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid transform p -> rotation @ p + translation.

    The rotation must be orthonormal with determinant +1 (checked to 1e-9 at
    construction time).
    """

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.array(self.rotation, dtype=float)
        t = _as_vec3(self.translation).copy()
        if R.shape != (3, 3):
            raise ValueError(f"rotation must be 3x3, got shape {R.shape}")
        if not (np.all(np.isfinite(R)) and np.all(np.isfinite(t))):
            raise ValueError("pose has non-finite entries")
        if np.max(np.abs(R @ R.T - np.eye(3))) > _ORTHO_TOL:
            raise ValueError("rotation is not orthonormal")
        if abs(np.linalg.det(R) - 1.0) > _ORTHO_TOL:
            raise ValueError("rotation must be proper (det = +1)")
        R.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.eye(3), np.zeros(3))

    @staticmethod
    def from_yaw(yaw: float, translation=(0.0, 0.0, 0.0)) -> "Pose":
        """Rotation by ``yaw`` radians about the world z axis, then translate."""
        c, s = np.cos(yaw), np.sin(yaw)
        R = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        return Pose(R, np.asarray(translation, dtype=float))

    def apply(self, points):
        """Transform a single (3,) point or an (n, 3) batch."""
        pts = np.asarray(points, dtype=float)
        if pts.ndim == 1:
            return self.rotation @ pts + self.translation
        return pts @ self.rotation.T + self.translation

    def compose(self, other: "Pose") -> "Pose":
        """Pose applying ``other`` first, then ``self``."""
        return Pose(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def inverse(self) -> "Pose":
        Rt = self.rotation.T
        return Pose(Rt, -(Rt @ self.translation))

    def matrix3x4(self) -> np.ndarray:
        """Row-major [R | t], the on-disk pose representation."""
        return np.hstack([self.rotation, self.translation.reshape(3, 1)])


@dataclass(frozen=True, eq=False)
class PointCloud:
    """An ordered set of 3D points in meters; shape (n, 3), all finite."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.array(self.points, dtype=float)
        if pts.size == 0:
            pts = pts.reshape(0, 3)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError(f"points must have shape (n, 3), got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ValueError("point cloud contains non-finite coordinates")
        pts.flags.writeable = False
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return self.points.shape[0]

    @staticmethod
    def empty() -> "PointCloud":
        return PointCloud(np.zeros((0, 3)))

    def transformed(self, pose: Pose) -> "PointCloud":
        return PointCloud(pose.apply(self.points))


@dataclass(frozen=True, eq=False)
class DepthImage:
    """Per-pixel depth in meters; 0 marks an invalid (no-return) pixel.

    ``data`` is stored as a (height, width) float array; all values must be
    finite and >= 0.
    """

    width: int
    height: int
    data: np.ndarray

    def __post_init__(self):
        arr = np.array(self.data, dtype=float)
        if arr.ndim == 1:
            if arr.size != self.width * self.height:
                raise ValueError(
                    f"flat data length {arr.size} != width*height "
                    f"{self.width * self.height}"
                )
            arr = arr.reshape(self.height, self.width)
        if arr.shape != (self.height, self.width):
            raise ValueError(
                f"data shape {arr.shape} does not match "
                f"(height, width) = ({self.height}, {self.width})"
            )
        if not np.all(np.isfinite(arr)):
            raise ValueError("depth image contains non-finite values")
        if np.any(arr < 0):
            raise ValueError("depth image contains negative values")
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @staticmethod
    def from_array(arr) -> "DepthImage":
        a = np.asarray(arr, dtype=float)
        if a.ndim != 2:
            raise ValueError("expected a 2D array")
        return DepthImage(width=a.shape[1], height=a.shape[0], data=a)

    def valid_mask(self) -> np.ndarray:
        return self.data > 0


@dataclass(frozen=True, eq=False)
class CameraModel:
    """Pinhole camera: intrinsics in pixels plus a world->camera extrinsic."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    extrinsic: Pose = field(default_factory=Pose.identity)

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image dimensions must be positive")

    def camera_frame(self) -> "CameraModel":
        """Copy of this camera with an identity extrinsic (camera-frame I/O)."""
        return replace(self, extrinsic=Pose.identity())

    def center(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return self.extrinsic.inverse().translation

    def project_point(self, p_world):
        """Project one world point; returns (u, v, s) or None when not in view.

        s is the camera-frame depth. Points with depth <= 1e-6 (on or behind
        the camera plane) and points falling outside the image are rejected.
        """
        p_cam = self.extrinsic.apply(_as_vec3(p_world))
        s = p_cam[2]
        if s <= _MIN_DEPTH:
            return None
        u = self.fx * p_cam[0] / s + self.cx
        v = self.fy * p_cam[1] / s + self.cy
        if not (0.0 <= u < self.width and 0.0 <= v < self.height):
            return None
        return float(u), float(v), float(s)

    def project(self, points):
        """Vectorized projection.

        Returns (uv, s, valid): an (n, 2) array of pixel coordinates, an (n,)
        array of depths, and a boolean in-view mask. uv and s are meaningful
        only where valid is True.
        """
        pts = np.asarray(points, dtype=float).reshape(-1, 3)
        cam = self.extrinsic.apply(pts)
        s = cam[:, 2]
        safe = np.where(s > _MIN_DEPTH, s, 1.0)
        u = self.fx * cam[:, 0] / safe + self.cx
        v = self.fy * cam[:, 1] / safe + self.cy
        valid = (
            (s > _MIN_DEPTH)
            & (u >= 0.0)
            & (u < self.width)
            & (v >= 0.0)
            & (v < self.height)
        )
        return np.stack([u, v], axis=1), s, valid

    def backproject(self, depth: DepthImage) -> PointCloud:
        """Lift every valid pixel of ``depth`` to a world-frame point.

        Output order is row-major pixel order; zero-depth pixels are skipped.
        Raises ValueError when the image dimensions do not match the camera.
        """
        if (depth.width, depth.height) != (self.width, self.height):
            raise ValueError(
                f"depth image {depth.width}x{depth.height} does not match "
                f"camera {self.width}x{self.height}"
            )
        d = depth.data
        vv, uu = np.mgrid[0 : self.height, 0 : self.width]
        mask = d > 0
        s = d[mask]
        u = uu[mask].astype(float)
        v = vv[mask].astype(float)
        x = (u - self.cx) * s / self.fx
        y = (v - self.cy) * s / self.fy
        cam_pts = np.stack([x, y, s], axis=1)
        world = self.extrinsic.inverse().apply(cam_pts)
        return PointCloud(world)


def rasterize_depth(cam: CameraModel, cloud: PointCloud) -> DepthImage:
    """Z-buffer a point cloud into a depth image (nearest depth per pixel).

    Points are binned to their nearest pixel; pixels receiving no point are 0.
    """
    img = np.full((cam.height, cam.width), np.inf)
    if len(cloud) > 0:
        uv, s, valid = cam.project(cloud.points)
        cols = np.rint(uv[valid, 0]).astype(int)
        rows = np.rint(uv[valid, 1]).astype(int)
        cols = np.clip(cols, 0, cam.width - 1)
        rows = np.clip(rows, 0, cam.height - 1)
        np.minimum.at(img, (rows, cols), s[valid])
    img[~np.isfinite(img)] = 0.0
    return DepthImage(width=cam.width, height=cam.height, data=img)
