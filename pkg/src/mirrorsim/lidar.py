"""Ray-cast roadside LiDAR with distance-attenuated intensity and dropout.

Vehicles are oriented 3D boxes, pedestrians vertical cylinders, the road a
z = 0 plane; every intersection is analytic, so expected returns can be
checked in closed form. One full sweep is produced per simulation tick.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import SensorPose, rotation2d
from .scenario import AgentClass, WorldState

_EPS = 1e-9
ZERO_INTENSITY = 1e-6

MISS = -2
GROUND = -1


@dataclass(frozen=True)
class LidarConfig:
    """Sensor parameters: beam fan, range, attenuation, noise and dropout."""

    channels: int = 64
    mount_height: float = 1.73
    range_max: float = 100.0
    rotation_hz: float = 10.0
    upper_fov: float = 2.0  # degrees
    lower_fov: float = -24.9  # degrees
    attenuation: float = 0.004  # 1/m
    noise_stddev: float = 0.01  # m, along the ray
    dropoff_rate: float = 0.45
    dropoff_intensity_limit: float = 0.8
    dropoff_zero_intensity: float = 0.40
    azimuth_step: float = 0.2  # degrees
    azimuth_span: tuple = (-180.0, 180.0)  # degrees, [min, max)
    pose: SensorPose = field(default_factory=SensorPose)

    def __post_init__(self):
        if self.lower_fov >= self.upper_fov:
            raise ValueError("lower_fov must be below upper_fov")
        if self.range_max <= 0 or self.channels < 1 or self.azimuth_step <= 0:
            raise ValueError("range_max, channels and azimuth_step must be positive")
        for name in ("dropoff_rate", "dropoff_intensity_limit", "dropoff_zero_intensity"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.01:
                raise ValueError(f"{name} must be a fraction, got {v}")
        if self.azimuth_span[1] <= self.azimuth_span[0]:
            raise ValueError("azimuth_span must be increasing")

    @property
    def n_azimuths(self) -> int:
        span = self.azimuth_span[1] - self.azimuth_span[0]
        return max(1, int(round(span / self.azimuth_step)))

    @property
    def n_rays(self) -> int:
        return self.channels * self.n_azimuths


@dataclass(frozen=True)
class PointCloudFrame:
    """One sweep: sensor-frame points as an (N, 4) array of x, y, z, intensity."""

    tick: int
    sensor: SensorPose
    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).reshape(-1, 4)
        if pts.size and not np.all(np.isfinite(pts)):
            raise ValueError("point coordinates must be finite")
        if pts.size and (pts[:, 3].min() < 0.0 or pts[:, 3].max() > 1.0):
            raise ValueError("intensities must lie in [0, 1]")
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return len(self.points)


@dataclass(frozen=True)
class RayHits:
    """Geometric returns of one sweep, prior to degradation."""

    n_rays: int
    ray_index: np.ndarray  # (M,) index into the sweep's ray grid
    directions: np.ndarray  # (M, 3) unit vectors, sensor frame
    distances: np.ndarray  # (M,)
    target_ids: np.ndarray  # (M,) agent id or GROUND

    def points(self) -> np.ndarray:
        return self.directions * self.distances[:, None]


def intensity(d, a):
    """Distance-attenuated return intensity exp(-a * d), unit peak at d = 0."""
    d = np.asarray(d, dtype=float)
    if np.any(d < 0):
        raise ValueError("distance must be non-negative")
    if np.any(np.asarray(a) < 0):
        raise ValueError("attenuation must be non-negative")
    out = np.exp(-a * d)
    return float(out) if out.ndim == 0 else out


def ray_grid(cfg: LidarConfig) -> np.ndarray:
    """Unit ray directions for one sweep, shape (channels * n_azimuths, 3).

    Rays are ordered channel-major: index = channel * n_azimuths + azimuth.
    """
    elev = np.radians(np.linspace(cfg.upper_fov, cfg.lower_fov, cfg.channels))
    az = np.radians(cfg.azimuth_span[0] + cfg.azimuth_step * np.arange(cfg.n_azimuths))
    ce, se = np.cos(elev), np.sin(elev)
    ca, sa = np.cos(az), np.sin(az)
    dirs = np.empty((cfg.channels, cfg.n_azimuths, 3))
    dirs[:, :, 0] = ce[:, None] * ca[None, :]
    dirs[:, :, 1] = ce[:, None] * sa[None, :]
    dirs[:, :, 2] = se[:, None] * np.ones_like(ca)[None, :]
    return dirs.reshape(-1, 3)


def _ray_box_entry(dirs: np.ndarray, center: np.ndarray, half: np.ndarray, yaw: float) -> np.ndarray:
    """Entry distance of each ray into an oriented box; inf where missed."""
    rot = rotation2d(yaw)
    # origin and directions expressed in the box frame
    o = np.empty(3)
    o[:2] = -center[:2] @ rot
    o[2] = -center[2]
    d = np.empty_like(dirs)
    d[:, :2] = dirs[:, :2] @ rot
    d[:, 2] = dirs[:, 2]

    t_near = np.full(len(dirs), -np.inf)
    t_far = np.full(len(dirs), np.inf)
    for axis in range(3):
        da = d[:, axis]
        oa = o[axis]
        parallel = np.abs(da) < _EPS
        with np.errstate(divide="ignore", invalid="ignore"):
            t1 = (-half[axis] - oa) / da
            t2 = (half[axis] - oa) / da
        lo = np.minimum(t1, t2)
        hi = np.maximum(t1, t2)
        inside = np.abs(oa) <= half[axis]
        lo = np.where(parallel, np.where(inside, -np.inf, np.inf), lo)
        hi = np.where(parallel, np.where(inside, np.inf, -np.inf), hi)
        t_near = np.maximum(t_near, lo)
        t_far = np.minimum(t_far, hi)

    hit = (t_far >= t_near) & (t_near > _EPS)
    return np.where(hit, t_near, np.inf)


def _ray_cylinder_entry(
    dirs: np.ndarray, center_xy: np.ndarray, radius: float, z_lo: float, z_hi: float
) -> np.ndarray:
    """Entry distance into a vertical cylinder with end caps; inf where missed."""
    dx, dy, dz = dirs[:, 0], dirs[:, 1], dirs[:, 2]
    cx, cy = center_xy
    a = dx * dx + dy * dy
    b = -2.0 * (dx * cx + dy * cy)
    c = cx * cx + cy * cy - radius * radius
    disc = b * b - 4.0 * a * c
    best = np.full(len(dirs), np.inf)

    ok = (disc >= 0.0) & (a > _EPS)
    sq = np.sqrt(np.where(ok, disc, 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        for sign in (-1.0, 1.0):
            t = (-b + sign * sq) / (2.0 * a)
            z = t * dz
            valid = ok & (t > _EPS) & (z >= z_lo) & (z <= z_hi)
            best = np.where(valid & (t < best), t, best)
        for z_cap in (z_lo, z_hi):
            t = np.where(np.abs(dz) > _EPS, z_cap / dz, np.inf)
            px = t * dx - cx
            py = t * dy - cy
            valid = (t > _EPS) & (px * px + py * py <= radius * radius)
            best = np.where(valid & (t < best), t, best)
    return best


def cast_rays(state: WorldState, cfg: LidarConfig) -> RayHits:
    """One noiseless sweep: nearest analytic intersection per ray.

    Candidates are agent boxes/cylinders and the ground plane; rays that hit
    nothing within ``range_max`` produce no entry.
    """
    dirs = ray_grid(cfg)
    n = len(dirs)
    t_best = np.full(n, np.inf)
    target = np.full(n, MISS, dtype=np.int64)

    # ground plane z = -mount_height in the sensor frame
    dz = dirs[:, 2]
    with np.errstate(divide="ignore"):
        t_ground = np.where(dz < -_EPS, -cfg.mount_height / dz, np.inf)
    ground_hit = t_ground <= cfg.range_max
    t_best = np.where(ground_hit, t_ground, t_best)
    target = np.where(ground_hit, GROUND, target)

    sensor = cfg.pose
    rot = rotation2d(sensor.yaw)
    for agent in state.agents:
        rel_xy = (np.array([agent.pose.x, agent.pose.y]) - np.array([sensor.x, sensor.y])) @ rot
        length, width, height = agent.dims
        if agent.cls is AgentClass.PEDESTRIAN:
            t = _ray_cylinder_entry(
                dirs,
                rel_xy,
                radius=0.5 * max(length, width),
                z_lo=-cfg.mount_height,
                z_hi=height - cfg.mount_height,
            )
        else:
            center = np.array([rel_xy[0], rel_xy[1], 0.5 * height - cfg.mount_height])
            half = np.array([0.5 * length, 0.5 * width, 0.5 * height])
            t = _ray_box_entry(dirs, center, half, agent.pose.yaw - sensor.yaw)
        closer = (t < t_best) & (t <= cfg.range_max)
        t_best = np.where(closer, t, t_best)
        target = np.where(closer, agent.agent_id, target)

    mask = target != MISS
    idx = np.nonzero(mask)[0]
    return RayHits(
        n_rays=n,
        ray_index=idx,
        directions=dirs[idx],
        distances=t_best[idx],
        target_ids=target[idx],
    )


def degrade(hits: RayHits, cfg: LidarConfig, rng: np.random.Generator, tick: int = 0) -> PointCloudFrame:
    """Apply range noise, attenuated intensity, and random dropout to raw hits.

    Noise and dropout draws are made per ray of the sweep (not per hit), so
    the random stream consumed by any one target is independent of what the
    remaining rays happen to hit.
    """
    noise = rng.standard_normal(hits.n_rays)
    uniforms = rng.random(hits.n_rays)

    d = hits.distances + cfg.noise_stddev * noise[hits.ray_index]
    d = np.clip(d, 0.0, cfg.range_max)
    inten = np.exp(-cfg.attenuation * d)

    exempt = inten >= cfg.dropoff_intensity_limit
    p_drop = np.where(inten < ZERO_INTENSITY, cfg.dropoff_zero_intensity, cfg.dropoff_rate)
    dropped = ~exempt & (uniforms[hits.ray_index] < p_drop)
    keep = ~dropped

    pts = np.empty((int(keep.sum()), 4))
    pts[:, :3] = hits.directions[keep] * d[keep, None]
    pts[:, 3] = inten[keep]
    return PointCloudFrame(tick=tick, sensor=cfg.pose, points=pts)


def scan(state: WorldState, cfg: LidarConfig, rng: np.random.Generator) -> PointCloudFrame:
    """Full sweep for one tick: cast rays then degrade."""
    return degrade(cast_rays(state, cfg), cfg, rng, tick=state.tick)


def save_frame_bin(frame: PointCloudFrame, path) -> None:
    """Binary dump: little-endian float32 (x, y, z, i) quadruples."""
    frame.points.astype("<f4").tofile(path)


def load_frame_bin(path) -> np.ndarray:
    return np.fromfile(path, dtype="<f4").reshape(-1, 4).astype(float)
