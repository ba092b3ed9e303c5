"""Shared planar geometry: poses, oriented boxes, frame transforms."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

TAU = 2.0 * math.pi


def normalize_angle(a: float) -> float:
    """Wrap an angle into (-pi, pi]."""
    r = math.remainder(a, TAU)
    if r <= -math.pi:
        r += TAU
    return r


def normalize_yaw_mod_pi(a: float) -> float:
    """Wrap a heading-ambiguous box yaw into [0, pi)."""
    r = a % math.pi
    if r >= math.pi:  # guard fp edge at the boundary
        r -= math.pi
    return r


@dataclass(frozen=True)
class Pose2D:
    """Planar pose in the world frame; yaw normalized to (-pi, pi]."""

    x: float
    y: float
    yaw: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y) and math.isfinite(self.yaw)):
            raise ValueError(f"pose coordinates must be finite, got {self}")
        object.__setattr__(self, "yaw", normalize_angle(self.yaw))


@dataclass(frozen=True)
class SensorPose:
    """Roadside sensor mount: planar pose plus height above the road surface."""

    x: float = 0.0
    y: float = 0.0
    yaw: float = 0.0
    height: float = 1.73

    @property
    def origin(self) -> np.ndarray:
        return np.array([self.x, self.y, self.height])


@dataclass(frozen=True)
class OrientedBox:
    """2D rotated rectangle: center, side lengths, yaw of the length axis."""

    cx: float
    cy: float
    length: float
    width: float
    yaw: float

    def __post_init__(self):
        if self.length <= 0 or self.width <= 0:
            raise ValueError(f"box dimensions must be positive, got {self}")

    @property
    def area(self) -> float:
        return self.length * self.width

    def corners(self) -> np.ndarray:
        """Counter-clockwise corners, shape (4, 2)."""
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        fx, fy = 0.5 * self.length * c, 0.5 * self.length * s
        lx, ly = -0.5 * self.width * s, 0.5 * self.width * c
        return np.array(
            [
                [self.cx + fx + lx, self.cy + fy + ly],
                [self.cx - fx + lx, self.cy - fy + ly],
                [self.cx - fx - lx, self.cy - fy - ly],
                [self.cx + fx - lx, self.cy + fy - ly],
            ]
        )


def rotation2d(yaw: float) -> np.ndarray:
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, -s], [s, c]])


def world_to_sensor_xy(points: np.ndarray, sensor: SensorPose) -> np.ndarray:
    """Transform (N, 2) world-frame points into the sensor frame."""
    shifted = np.asarray(points, dtype=float) - np.array([sensor.x, sensor.y])
    return shifted @ rotation2d(sensor.yaw)  # right-multiply == rotate by -yaw


def sensor_to_world_xy(points: np.ndarray, sensor: SensorPose) -> np.ndarray:
    """Inverse of :func:`world_to_sensor_xy`."""
    return np.asarray(points, dtype=float) @ rotation2d(sensor.yaw).T + np.array(
        [sensor.x, sensor.y]
    )


def polygon_area(vertices: np.ndarray) -> float:
    """Signed shoelace area of a polygon given as (N, 2) vertices."""
    x = vertices[:, 0]
    y = vertices[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def clip_polygon(subject: np.ndarray, clip: np.ndarray) -> np.ndarray:
    """Sutherland-Hodgman clip of a convex polygon against a convex CCW clip polygon.

    Returns the intersection polygon as an (M, 2) array; empty array when disjoint.
    """
    output = [tuple(p) for p in np.asarray(subject, dtype=float)]
    clip = np.asarray(clip, dtype=float)
    n = len(clip)
    for i in range(n):
        if not output:
            break
        ax, ay = clip[i]
        bx, by = clip[(i + 1) % n]
        ex, ey = bx - ax, by - ay
        inputs = output
        output = []
        prev = inputs[-1]
        prev_side = ex * (prev[1] - ay) - ey * (prev[0] - ax)
        for cur in inputs:
            cur_side = ex * (cur[1] - ay) - ey * (cur[0] - ax)
            if cur_side >= 0.0:
                if prev_side < 0.0:
                    output.append(_edge_intersection(prev, cur, (ax, ay), (bx, by)))
                output.append(cur)
            elif prev_side >= 0.0:
                output.append(_edge_intersection(prev, cur, (ax, ay), (bx, by)))
            prev, prev_side = cur, cur_side
    return np.array(output) if output else np.empty((0, 2))


def _edge_intersection(p1, p2, a, b):
    """Intersection of segment p1-p2 with the infinite line a-b."""
    x1, y1 = p1
    x2, y2 = p2
    ax, ay = a
    bx, by = b
    denom = (x1 - x2) * (ay - by) - (y1 - y2) * (ax - bx)
    if denom == 0.0:
        return p2
    t = ((x1 - ax) * (ay - by) - (y1 - ay) * (ax - bx)) / denom
    return (x1 + t * (x2 - x1), y1 + t * (y2 - y1))
