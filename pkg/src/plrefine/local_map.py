"""Rolling buffer of recent 3D scans and the distance-cropped dense local map.

The map unions the most recent scans (five by default), each transformed by
its sensor-to-world pose, and keeps only points within a radius of a center
point. It serves as the dense geometric reference the refinement trains
against.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .geometry import PointCloud, Pose

DEFAULT_CAPACITY = 5
DEFAULT_THRESH = 30.0


class ScanBuffer:
    """FIFO of the most recent (cloud, sensor->world pose) pairs.

    Single-writer: push from one thread only. The oldest entry is evicted
    once the buffer holds ``capacity`` scans.
    """

    def __init__(self, capacity: int = DEFAULT_CAPACITY):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self._entries: deque = deque(maxlen=capacity)

    @property
    def capacity(self) -> int:
        return self._entries.maxlen

    def __len__(self) -> int:
        return len(self._entries)

    def push(self, cloud: PointCloud, pose: Pose) -> "ScanBuffer":
        self._entries.append((cloud, pose))
        return self

    def entries(self):
        """Buffered (cloud, pose) pairs, oldest first."""
        return tuple(self._entries)


@dataclass(frozen=True, eq=False)
class LocalMap:
    """World-frame union of buffered scans, cropped to dist(p, center) <= thresh."""

    cloud: PointCloud
    center: np.ndarray
    thresh: float

    def __len__(self) -> int:
        return len(self.cloud)


def build_local_map(buf: ScanBuffer, center=None, thresh: float = DEFAULT_THRESH) -> LocalMap:
    """Union the buffered scans in the world frame and crop by distance.

    ``center`` defaults to the translation of the newest pose (the sensor
    position). Points at exactly ``thresh`` are retained. Raises ValueError
    for an empty buffer or a non-positive threshold.
    """
    if len(buf) == 0:
        raise ValueError("scan buffer is empty")
    if thresh <= 0:
        raise ValueError("thresh must be positive")
    entries = buf.entries()
    if center is None:
        center = entries[-1][1].translation
    c = np.asarray(center, dtype=float).reshape(3)
    parts = [pose.apply(cloud.points) for cloud, pose in entries if len(cloud) > 0]
    if parts:
        world = np.concatenate(parts, axis=0)
        keep = np.linalg.norm(world - c, axis=1) <= thresh
        world = world[keep]
    else:
        world = np.zeros((0, 3))
    return LocalMap(cloud=PointCloud(world), center=c, thresh=float(thresh))
