"""Synthetic box-and-wall scenes with ray-cast sensors and controlled corruption.

Scenes are a finite ground patch at z=0 plus axis-aligned boxes and thin
vertical wall segments. A pinhole camera is ray-cast for ground-truth depth;
a planar scanner is ray-cast for the 2D laser scan; back-projected clouds are
corrupted with the two artifact classes seen in learned depth: boundary
points smeared along their viewing rays ("tails") and a global planar jitter
("misalignment"). Frames come with a dense local map accumulated over a
short 5-pose trajectory, so every sample is fully labeled.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .geometry import CameraModel, DepthImage, PointCloud, Pose
from .laser import LaserScan2D
from .local_map import LocalMap, ScanBuffer, build_local_map

_EPS = 1e-9

DISCONTINUITY_JUMP = 1.0  # meters between 4-neighbour pixels

DEFAULT_IMAGE_WIDTH = 160
DEFAULT_IMAGE_HEIGHT = 120
DEFAULT_FOCAL = 100.0
DEFAULT_EXTENT = 12.0
DEFAULT_BEAMS = 64
DEFAULT_SPAN = np.pi
DEFAULT_CAM_HEIGHT = 1.0
DEFAULT_MOUNT_HEIGHT = 1.2
DEFAULT_STEP = 0.15
DEFAULT_MAP_THRESH = 30.0


@dataclass(frozen=True, eq=False)
class Box:
    """Axis-aligned box: center (3,) and full extents (3,), all in meters."""

    center: np.ndarray
    size: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.center, dtype=float).reshape(3)
        s = np.asarray(self.size, dtype=float).reshape(3)
        if np.any(s <= 0):
            raise ValueError("box sizes must be positive")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "size", s)


@dataclass(frozen=True, eq=False)
class Wall:
    """Thin vertical rectangle from (p1, 0) to (p2, height); p1/p2 are xy."""

    p1: np.ndarray
    p2: np.ndarray
    height: float

    def __post_init__(self):
        a = np.asarray(self.p1, dtype=float).reshape(2)
        b = np.asarray(self.p2, dtype=float).reshape(2)
        if self.height <= 0:
            raise ValueError("wall height must be positive")
        if np.allclose(a, b):
            raise ValueError("wall endpoints coincide")
        object.__setattr__(self, "p1", a)
        object.__setattr__(self, "p2", b)


@dataclass(frozen=True, eq=False)
class SceneSpec:
    """Ground patch |x|,|y| <= extent at z=0, plus boxes and walls."""

    extent: float
    boxes: tuple = ()
    walls: tuple = ()

    def __post_init__(self):
        if self.extent <= 0:
            raise ValueError("extent must be positive")
        object.__setattr__(self, "boxes", tuple(self.boxes))
        object.__setattr__(self, "walls", tuple(self.walls))
        for box in self.boxes:
            lo = box.center - box.size / 2
            hi = box.center + box.size / 2
            if np.any(np.abs(lo[:2]) > self.extent) or np.any(np.abs(hi[:2]) > self.extent):
                raise ValueError("box footprint exceeds the scene extent")
        for wall in self.walls:
            for p in (wall.p1, wall.p2):
                if np.any(np.abs(p) > self.extent):
                    raise ValueError("wall endpoint exceeds the scene extent")


def _ray_ground(extent: float, o: np.ndarray, d: np.ndarray) -> np.ndarray:
    t = np.full(o.shape[0], np.inf)
    dz = d[:, 2]
    moving = np.abs(dz) > 1e-15
    tc = np.where(moving, -o[:, 2] / np.where(moving, dz, 1.0), np.inf)
    hx = o[:, 0] + tc * d[:, 0]
    hy = o[:, 1] + tc * d[:, 1]
    ok = moving & (tc > _EPS) & (np.abs(hx) <= extent) & (np.abs(hy) <= extent)
    t[ok] = tc[ok]
    return t


def _ray_box(box: Box, o: np.ndarray, d: np.ndarray) -> np.ndarray:
    lo = box.center - box.size / 2
    hi = box.center + box.size / 2
    t_near = np.full(o.shape[0], -np.inf)
    t_far = np.full(o.shape[0], np.inf)
    for axis in range(3):
        oa = o[:, axis]
        da = d[:, axis]
        parallel = np.abs(da) < 1e-15
        da_safe = np.where(parallel, 1.0, da)
        t1 = (lo[axis] - oa) / da_safe
        t2 = (hi[axis] - oa) / da_safe
        tmin = np.minimum(t1, t2)
        tmax = np.maximum(t1, t2)
        inside = (oa >= lo[axis]) & (oa <= hi[axis])
        tmin = np.where(parallel, np.where(inside, -np.inf, np.inf), tmin)
        tmax = np.where(parallel, np.where(inside, np.inf, -np.inf), tmax)
        t_near = np.maximum(t_near, tmin)
        t_far = np.minimum(t_far, tmax)
    hit = t_far >= t_near
    t = np.where(t_near > _EPS, t_near, np.where(t_far > _EPS, t_far, np.inf))
    return np.where(hit, t, np.inf)


def _ray_wall(wall: Wall, o: np.ndarray, d: np.ndarray) -> np.ndarray:
    e = wall.p2 - wall.p1
    n = np.array([-e[1], e[0]])
    n = n / np.linalg.norm(n)
    denom = d[:, 0] * n[0] + d[:, 1] * n[1]
    ok = np.abs(denom) > 1e-15
    denom_safe = np.where(ok, denom, 1.0)
    tc = ((wall.p1[0] - o[:, 0]) * n[0] + (wall.p1[1] - o[:, 1]) * n[1]) / denom_safe
    hx = o[:, 0] + tc * d[:, 0]
    hy = o[:, 1] + tc * d[:, 1]
    hz = o[:, 2] + tc * d[:, 2]
    w = ((hx - wall.p1[0]) * e[0] + (hy - wall.p1[1]) * e[1]) / float(e @ e)
    ok &= (tc > _EPS) & (w >= 0.0) & (w <= 1.0) & (hz >= 0.0) & (hz <= wall.height)
    return np.where(ok, tc, np.inf)


def cast_rays(scene: SceneSpec, origins: np.ndarray, dirs: np.ndarray) -> np.ndarray:
    """Nearest-hit ray parameter per ray; inf where nothing is hit."""
    o = np.asarray(origins, dtype=float).reshape(-1, 3)
    d = np.asarray(dirs, dtype=float).reshape(-1, 3)
    if o.shape[0] == 1 and d.shape[0] > 1:
        o = np.broadcast_to(o, d.shape)
    t = _ray_ground(scene.extent, o, d)
    for box in scene.boxes:
        t = np.minimum(t, _ray_box(box, o, d))
    for wall in scene.walls:
        t = np.minimum(t, _ray_wall(wall, o, d))
    return t


def distance_to_surface(scene: SceneSpec, points) -> np.ndarray:
    """Distance from each point to the nearest scene surface.

    Independent of the ray caster; used to verify that rendered geometry lies
    on actual surfaces.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    # ground patch
    qx = np.clip(pts[:, 0], -scene.extent, scene.extent)
    qy = np.clip(pts[:, 1], -scene.extent, scene.extent)
    best = np.sqrt((pts[:, 0] - qx) ** 2 + (pts[:, 1] - qy) ** 2 + pts[:, 2] ** 2)
    for box in scene.boxes:
        half = box.size / 2
        q = np.abs(pts - box.center) - half
        dist = np.linalg.norm(np.maximum(q, 0.0), axis=1)
        interior = (q < 0).all(axis=1)
        if interior.any():
            # inside the box the nearest surface is the closest face
            dist[interior] = np.min(-q[interior], axis=1)
        best = np.minimum(best, dist)
    for wall in scene.walls:
        e = wall.p2 - wall.p1
        w = ((pts[:, 0] - wall.p1[0]) * e[0] + (pts[:, 1] - wall.p1[1]) * e[1]) / float(e @ e)
        w = np.clip(w, 0.0, 1.0)
        qx = wall.p1[0] + w * e[0]
        qy = wall.p1[1] + w * e[1]
        qz = np.clip(pts[:, 2], 0.0, wall.height)
        dist = np.sqrt((pts[:, 0] - qx) ** 2 + (pts[:, 1] - qy) ** 2 + (pts[:, 2] - qz) ** 2)
        best = np.minimum(best, dist)
    return best


def render_depth(scene: SceneSpec, cam: CameraModel) -> DepthImage:
    """Ray-cast a depth image: per-pixel nearest-hit camera-frame depth, 0 = miss."""
    vv, uu = np.mgrid[0 : cam.height, 0 : cam.width]
    dirs_cam = np.stack(
        [
            (uu.ravel() - cam.cx) / cam.fx,
            (vv.ravel() - cam.cy) / cam.fy,
            np.ones(cam.width * cam.height),
        ],
        axis=1,
    )
    R_cw = cam.extrinsic.inverse().rotation
    dirs_world = dirs_cam @ R_cw.T
    origin = cam.center().reshape(1, 3)
    # dirs have camera-frame z = 1, so the ray parameter is the depth itself
    t = cast_rays(scene, origin, dirs_world)
    depth = np.where(np.isfinite(t), t, 0.0).reshape(cam.height, cam.width)
    return DepthImage(width=cam.width, height=cam.height, data=depth)


def rig_camera(
    rig_pose: Pose,
    cam_height: float = DEFAULT_CAM_HEIGHT,
    width: int = DEFAULT_IMAGE_WIDTH,
    height: int = DEFAULT_IMAGE_HEIGHT,
    focal: float = DEFAULT_FOCAL,
) -> CameraModel:
    """Forward-looking camera mounted on a rig.

    The rig frame is x forward, y left, z up; the camera sits ``cam_height``
    above the rig origin looking along rig +x with the usual x-right / y-down
    / z-forward optical frame.
    """
    R = rig_pose.rotation
    center = rig_pose.apply(np.array([0.0, 0.0, cam_height]))
    right = R @ np.array([0.0, -1.0, 0.0])
    down = R @ np.array([0.0, 0.0, -1.0])
    forward = R @ np.array([1.0, 0.0, 0.0])
    R_cw = np.column_stack([right, down, forward])
    R_wc = R_cw.T
    extrinsic = Pose(R_wc, -(R_wc @ center))
    return CameraModel(
        fx=focal, fy=focal, cx=width / 2.0, cy=height / 2.0,
        width=width, height=height, extrinsic=extrinsic,
    )


@dataclass(frozen=True, eq=False)
class SensorRig:
    """Camera plus planar scanner sharing one rig pose (rig -> world)."""

    camera: CameraModel
    mount_height: float = DEFAULT_MOUNT_HEIGHT
    beam_count: int = DEFAULT_BEAMS
    angular_span: float = DEFAULT_SPAN
    pose: Pose = None
    cam_height: float = DEFAULT_CAM_HEIGHT

    def __post_init__(self):
        if self.mount_height <= 0:
            raise ValueError("mount height must be positive")
        if self.beam_count < 2:
            raise ValueError("at least two beams are required")
        if self.pose is None:
            object.__setattr__(self, "pose", Pose.identity())

    @staticmethod
    def assemble(
        pose: Pose,
        cam_height: float = DEFAULT_CAM_HEIGHT,
        mount_height: float = DEFAULT_MOUNT_HEIGHT,
        beam_count: int = DEFAULT_BEAMS,
        angular_span: float = DEFAULT_SPAN,
        width: int = DEFAULT_IMAGE_WIDTH,
        height: int = DEFAULT_IMAGE_HEIGHT,
        focal: float = DEFAULT_FOCAL,
    ) -> "SensorRig":
        cam = rig_camera(pose, cam_height, width, height, focal)
        return SensorRig(
            camera=cam,
            mount_height=mount_height,
            beam_count=beam_count,
            angular_span=angular_span,
            pose=pose,
            cam_height=cam_height,
        )

    def moved(self, pose: Pose) -> "SensorRig":
        cam = rig_camera(
            pose, self.cam_height, self.camera.width, self.camera.height, self.camera.fx
        )
        return replace(self, camera=cam, pose=pose)


def simulate_laser(scene: SceneSpec, rig: SensorRig) -> LaserScan2D:
    """Planar scan: horizontal rays at the mount height, misses dropped.

    Beams sweep the angular span symmetrically about the rig's forward
    heading; the rig base is assumed to sit on the ground plane, so the scan
    height equals the rig z plus the mount height.
    """
    fwd = rig.pose.rotation @ np.array([1.0, 0.0, 0.0])
    yaw = np.arctan2(fwd[1], fwd[0])
    angles = yaw + np.linspace(-rig.angular_span / 2, rig.angular_span / 2, rig.beam_count)
    z0 = rig.pose.translation[2] + rig.mount_height
    origin = np.array([[rig.pose.translation[0], rig.pose.translation[1], z0]])
    dirs = np.stack([np.cos(angles), np.sin(angles), np.zeros_like(angles)], axis=1)
    t = cast_rays(scene, origin, dirs)
    hit = np.isfinite(t)
    pts = origin + t[hit, None] * dirs[hit]
    pts[:, 2] = z0
    return LaserScan2D(points=pts, mount_height=z0)


@dataclass(frozen=True)
class CorruptionSpec:
    """Artifact injection parameters for back-projected clouds.

    tail_prob: chance that a pixel adjacent to a depth discontinuity is
    smeared along its viewing ray; tail_length: maximum smear in meters;
    misalign_sigma: std of the planar Gaussian jitter applied to every point.
    """

    tail_prob: float = 0.0
    tail_length: float = 0.0
    misalign_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.tail_prob <= 1.0:
            raise ValueError("tail_prob must lie in [0, 1]")
        if self.tail_length < 0 or self.misalign_sigma < 0:
            raise ValueError("lengths and sigmas must be >= 0")

    @property
    def is_noop(self) -> bool:
        return (self.tail_prob == 0 or self.tail_length == 0) and self.misalign_sigma == 0


def discontinuity_mask(depth: np.ndarray, jump: float = DISCONTINUITY_JUMP) -> np.ndarray:
    """Valid pixels having a valid 4-neighbour more than ``jump`` meters away."""
    d = np.asarray(depth, dtype=float)
    m = np.zeros(d.shape, dtype=bool)
    a, b = d[:, :-1], d[:, 1:]
    j = (a > 0) & (b > 0) & (np.abs(a - b) > jump)
    m[:, :-1] |= j
    m[:, 1:] |= j
    a, b = d[:-1, :], d[1:, :]
    j = (a > 0) & (b > 0) & (np.abs(a - b) > jump)
    m[:-1, :] |= j
    m[1:, :] |= j
    return m


def corrupt_cloud(
    cloud: PointCloud, gt_depth: DepthImage, cam: CameraModel, spec: CorruptionSpec
) -> PointCloud:
    """Inject tails at depth discontinuities and planar jitter everywhere.

    ``cloud`` must be the back-projection of ``gt_depth`` through ``cam`` (the
    pixel-to-point mapping relies on row-major valid-pixel order). With an
    all-zero spec the input is returned unchanged. Deterministic given
    spec.seed.
    """
    valid = gt_depth.data > 0
    n_valid = int(valid.sum())
    if len(cloud) != n_valid:
        raise ValueError(
            f"cloud size {len(cloud)} does not match the {n_valid} valid depth pixels"
        )
    if spec.is_noop or len(cloud) == 0:
        return cloud
    rng = np.random.default_rng(spec.seed)
    pts = cloud.points.copy()
    if spec.tail_prob > 0 and spec.tail_length > 0:
        disc = discontinuity_mask(gt_depth.data)
        cand = valid & disc
        # cloud row of each valid pixel, in row-major order
        rank = np.cumsum(valid.ravel()).reshape(valid.shape) - 1
        rows = rank[cand]
        pick = rng.random(rows.size) < spec.tail_prob
        rows = rows[pick]
        if rows.size:
            stretch = rng.uniform(0.0, spec.tail_length, rows.size)
            rays = pts[rows] - cam.center()
            rays /= np.linalg.norm(rays, axis=1, keepdims=True)
            pts[rows] += stretch[:, None] * rays
    if spec.misalign_sigma > 0:
        pts[:, :2] += rng.normal(0.0, spec.misalign_sigma, (pts.shape[0], 2))
    return PointCloud(pts)


@dataclass(frozen=True, eq=False)
class SynthSample:
    """One fully-labeled frame: sensors, references, and the corrupted cloud."""

    gt_depth: DepthImage
    gt_cloud: PointCloud
    scan: LaserScan2D
    local_map: LocalMap
    corrupted_cloud: PointCloud
    camera: CameraModel
    rig_poses: tuple


def _segment_distance(points: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    e = b - a
    w = np.clip(((points - a) @ e) / float(e @ e), 0.0, 1.0)
    closest = a + w[:, None] * e
    return np.linalg.norm(points - closest, axis=1)


def _random_scene(rng: np.random.Generator, extent: float, traj_xy: np.ndarray, heading: float) -> SceneSpec:
    """Random boxes and walls, keeping a clear corridor around the trajectory
    and guaranteeing tall obstacles in the forward view."""
    clear = 1.5
    inner = 0.8 * extent
    boxes = []
    n_boxes = int(rng.integers(3, 9))
    n_walls = int(rng.integers(2, 5))
    anchor = traj_xy[-1]

    def box_clear(center, size):
        dx = np.maximum(np.abs(traj_xy[:, 0] - center[0]) - size[0] / 2, 0.0)
        dy = np.maximum(np.abs(traj_xy[:, 1] - center[1]) - size[1] / 2, 0.0)
        return np.all(np.hypot(dx, dy) > clear)

    # two tall boxes ahead of the final pose so both sensors see structure
    placed = 0
    attempts = 0
    while placed < 2 and attempts < 200:
        attempts += 1
        dist = rng.uniform(2.5, 7.0)
        ang = heading + rng.uniform(-0.6, 0.6)
        cxy = anchor + dist * np.array([np.cos(ang), np.sin(ang)])
        sz = np.array([rng.uniform(0.6, 2.2), rng.uniform(0.6, 2.2), rng.uniform(1.5, 2.4)])
        if np.any(np.abs(cxy) + sz[:2] / 2 > inner):
            continue
        center = np.array([cxy[0], cxy[1], sz[2] / 2])
        if box_clear(center, sz):
            boxes.append(Box(center=center, size=sz))
            placed += 1
    attempts = 0
    while len(boxes) < n_boxes and attempts < 400:
        attempts += 1
        cxy = rng.uniform(-inner, inner, 2)
        sz = np.array([rng.uniform(0.5, 2.5), rng.uniform(0.5, 2.5), rng.uniform(0.6, 2.4)])
        if np.any(np.abs(cxy) + sz[:2] / 2 > inner):
            continue
        center = np.array([cxy[0], cxy[1], sz[2] / 2])
        if box_clear(center, sz):
            boxes.append(Box(center=center, size=sz))

    walls = []
    attempts = 0
    while len(walls) < n_walls and attempts < 400:
        attempts += 1
        mid = rng.uniform(-inner, inner, 2)
        ang = rng.uniform(0, np.pi)
        half = rng.uniform(1.5, 4.0)
        e = half * np.array([np.cos(ang), np.sin(ang)])
        p1, p2 = mid - e, mid + e
        if np.any(np.abs(p1) > inner) or np.any(np.abs(p2) > inner):
            continue
        if np.min(_segment_distance(traj_xy, p1, p2)) <= clear:
            continue
        walls.append(Wall(p1=p1, p2=p2, height=rng.uniform(1.5, 2.5)))
    return SceneSpec(extent=extent, boxes=tuple(boxes), walls=tuple(walls))


def generate_dataset(
    scene_seed: int,
    n_frames: int,
    corruption: CorruptionSpec,
    *,
    image_width: int = DEFAULT_IMAGE_WIDTH,
    image_height: int = DEFAULT_IMAGE_HEIGHT,
    focal: float = DEFAULT_FOCAL,
    extent: float = DEFAULT_EXTENT,
    beams: int = DEFAULT_BEAMS,
    span: float = DEFAULT_SPAN,
    cam_height: float = DEFAULT_CAM_HEIGHT,
    mount_height: float = DEFAULT_MOUNT_HEIGHT,
    step: float = DEFAULT_STEP,
    map_thresh: float = DEFAULT_MAP_THRESH,
) -> list:
    """Generate fully-labeled frames, each with its own scene and a 5-pose
    trajectory (so the local map exercises the full scan buffer).

    Deterministic given ``scene_seed`` and ``corruption.seed``; per-frame
    randomness is derived, so frames are independent of n_frames.
    """
    if n_frames < 1:
        raise ValueError("n_frames must be >= 1")
    samples = []
    for frame in range(n_frames):
        rng = np.random.default_rng(np.random.SeedSequence([int(scene_seed), frame]))
        heading = rng.uniform(-np.pi, np.pi)
        start = rng.uniform(-0.25 * extent, 0.25 * extent, 2)
        positions = [start]
        yaws = [heading]
        for _ in range(4):
            yaw = yaws[-1] + rng.normal(0.0, np.deg2rad(2.0))
            positions.append(positions[-1] + step * np.array([np.cos(yaw), np.sin(yaw)]))
            yaws.append(yaw)
        traj_xy = np.array(positions)
        scene = _random_scene(rng, extent, traj_xy, yaws[-1])

        rig_poses = tuple(
            Pose.from_yaw(yaw, (pos[0], pos[1], 0.0)) for pos, yaw in zip(positions, yaws)
        )
        buf = ScanBuffer(5)
        last_depth = None
        last_cam = None
        for pose in rig_poses:
            cam = rig_camera(pose, cam_height, image_width, image_height, focal)
            depth = render_depth(scene, cam)
            cloud_sensor = cam.camera_frame().backproject(depth)
            buf.push(cloud_sensor, cam.extrinsic.inverse())
            last_depth, last_cam = depth, cam
        local_map = build_local_map(buf, thresh=map_thresh)

        gt_cloud = last_cam.backproject(last_depth)
        rig = SensorRig.assemble(
            rig_poses[-1],
            cam_height=cam_height,
            mount_height=mount_height,
            beam_count=beams,
            angular_span=span,
            width=image_width,
            height=image_height,
            focal=focal,
        )
        scan = simulate_laser(scene, rig)
        frame_seed = int(np.random.SeedSequence([int(corruption.seed), frame]).generate_state(1)[0])
        corrupted = corrupt_cloud(gt_cloud, last_depth, last_cam, replace(corruption, seed=frame_seed))
        samples.append(
            SynthSample(
                gt_depth=last_depth,
                gt_cloud=gt_cloud,
                scan=scan,
                local_map=local_map,
                corrupted_cloud=corrupted,
                camera=last_cam,
                rig_poses=rig_poses,
            )
        )
    return samples
