"""Deterministic microscopic traffic simulation of a signalized intersection.

Vehicles follow straight lane polylines under IDM car-following; signal-
controlled approaches brake for the stop line as if it were a standing
leader. Pedestrians are constant-speed walkers on crosswalk lanes. All
stepping is single-threaded and every state is an immutable snapshot.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Optional, Sequence

import numpy as np

from .geometry import Pose2D, SensorPose, normalize_angle, world_to_sensor_xy

DT_DEFAULT = 0.1  # 10 Hz lockstep


class ConfigError(ValueError):
    """Raised for invalid scenario or run configuration."""


class AgentClass(enum.Enum):
    CAR = "Car"
    TRUCK = "Truck"
    PEDESTRIAN = "Pedestrian"


DEFAULT_DIMS = {
    AgentClass.CAR: (4.5, 1.8, 1.5),
    AgentClass.TRUCK: (8.0, 2.5, 3.2),
    AgentClass.PEDESTRIAN: (0.5, 0.5, 1.8),
}


@dataclass(frozen=True)
class IdmParams:
    """Car-following parameters (desired speed, headway, accel bounds)."""

    v0: float = 15.0
    T: float = 1.5
    a_max: float = 2.0
    b: float = 2.0
    s0: float = 2.0
    delta: float = 4.0
    emergency_decel: float = 8.0

    def __post_init__(self):
        for name in ("v0", "T", "a_max", "b", "s0", "delta", "emergency_decel"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"IDM parameter {name} must be strictly positive")


def idm_acceleration(v: float, v_lead: float, gap: float, p: IdmParams) -> float:
    """IDM acceleration command, clamped to [-emergency_decel, a_max].

    ``gap`` is the net bumper distance to the leader; ``math.inf`` means a
    free road. A non-positive gap saturates at the emergency deceleration
    (the caller is expected to log the collision-imminent condition).
    """
    if v < 0:
        raise ValueError("speed must be non-negative")
    if gap <= 0.0:
        return -p.emergency_decel
    free_term = (v / p.v0) ** p.delta
    if math.isinf(gap):
        interaction = 0.0
    else:
        # desired gap; the dynamic part is floored at zero so the command
        # stays monotone non-increasing in v even behind a faster leader
        s_star = p.s0 + max(0.0, v * p.T + v * (v - v_lead) / (2.0 * math.sqrt(p.a_max * p.b)))
        interaction = (s_star / gap) ** 2
    a = p.a_max * (1.0 - free_term - interaction)
    return min(max(a, -p.emergency_decel), p.a_max)


@dataclass(frozen=True)
class Lane:
    """Polyline lane; positions are arc length from the first point."""

    lane_id: str
    points: tuple  # ((x, y), ...) with at least 2 points
    signal_group: Optional[str] = None
    stop_line_s: Optional[float] = None

    def __post_init__(self):
        if len(self.points) < 2:
            raise ConfigError(f"lane {self.lane_id} needs at least 2 points")
        pts = np.asarray(self.points, dtype=float)
        seg = np.diff(pts, axis=0)
        seg_len = np.hypot(seg[:, 0], seg[:, 1])
        if np.any(seg_len <= 0):
            raise ConfigError(f"lane {self.lane_id} has a zero-length segment")
        cum = np.concatenate([[0.0], np.cumsum(seg_len)])
        object.__setattr__(self, "_pts", pts)
        object.__setattr__(self, "_cum", cum)

    @property
    def length(self) -> float:
        return float(self._cum[-1])

    def pose_at(self, s: float) -> Pose2D:
        s = min(max(s, 0.0), self.length)
        i = int(np.searchsorted(self._cum, s, side="right")) - 1
        i = min(i, len(self._pts) - 2)
        t = s - self._cum[i]
        p0, p1 = self._pts[i], self._pts[i + 1]
        d = p1 - p0
        seg = math.hypot(d[0], d[1])
        u = t / seg
        yaw = math.atan2(d[1], d[0])
        return Pose2D(float(p0[0] + u * d[0]), float(p0[1] + u * d[1]), yaw)

    def station_of(self, x: float, y: float) -> tuple:
        """Project a point onto the lane; returns (arc position, lateral offset)."""
        best = (0.0, math.inf)
        for i in range(len(self._pts) - 1):
            p0, p1 = self._pts[i], self._pts[i + 1]
            d = p1 - p0
            seg2 = float(d[0] ** 2 + d[1] ** 2)
            u = ((x - p0[0]) * d[0] + (y - p0[1]) * d[1]) / seg2
            u = min(max(u, 0.0), 1.0)
            px, py = p0 + u * d
            lat = math.hypot(x - px, y - py)
            if lat < best[1]:
                best = (float(self._cum[i] + u * math.sqrt(seg2)), lat)
        return best


@dataclass(frozen=True)
class SignalPlan:
    """Fixed-time plan: each group is green inside [start, end) of the cycle."""

    cycle_s: float
    green_windows: Mapping[str, tuple]  # group -> (start_s, end_s)

    def __post_init__(self):
        if self.cycle_s <= 0:
            raise ConfigError("signal cycle must be positive")
        for g, (a, b) in self.green_windows.items():
            if not (0 <= a < b <= self.cycle_s):
                raise ConfigError(f"green window for group {g} must satisfy 0 <= start < end <= cycle")

    def is_green(self, group: str, sim_time: float) -> bool:
        if group not in self.green_windows:
            return True
        a, b = self.green_windows[group]
        t = sim_time % self.cycle_s
        return a <= t < b

    def phases(self, sim_time: float) -> dict:
        return {g: ("green" if self.is_green(g, sim_time) else "red") for g in self.green_windows}


@dataclass(frozen=True)
class SpeedProfile:
    """Piecewise-linear target speed over time for scripted agents."""

    knots: tuple  # ((t, v), ...) sorted by t

    def __post_init__(self):
        ts = [t for t, _ in self.knots]
        if len(self.knots) < 1 or sorted(ts) != ts:
            raise ConfigError("speed profile needs time-sorted (t, v) knots")
        if any(v < 0 for _, v in self.knots):
            raise ConfigError("speed profile speeds must be non-negative")

    def speed_at(self, t: float) -> float:
        ts = [k[0] for k in self.knots]
        vs = [k[1] for k in self.knots]
        return float(np.interp(t, ts, vs))


@dataclass(frozen=True)
class AgentState:
    agent_id: int
    cls: AgentClass
    pose: Pose2D
    speed: float
    accel: float
    dims: tuple  # (length, width, height)
    route: tuple  # lane ids, current one first
    route_index: int
    s: float  # center position along the current lane
    control: str = "idm"  # idm | scripted | external
    profile: Optional[SpeedProfile] = None

    def __post_init__(self):
        if self.speed < 0:
            raise ValueError(f"agent {self.agent_id} speed must be >= 0")
        if any(d <= 0 for d in self.dims):
            raise ValueError(f"agent {self.agent_id} dims must be strictly positive")

    @property
    def lane_id(self) -> str:
        return self.route[self.route_index]

    @property
    def length(self) -> float:
        return self.dims[0]


@dataclass(frozen=True)
class Scenario:
    """Static world description shared by every state snapshot."""

    lanes: Mapping[str, Lane]
    idm: IdmParams = IdmParams()
    signal: Optional[SignalPlan] = None
    dt: float = DT_DEFAULT


@dataclass(frozen=True)
class WorldState:
    tick: int
    agents: tuple
    scenario: Scenario
    events: tuple = ()

    def __post_init__(self):
        ids = [a.agent_id for a in self.agents]
        if len(ids) != len(set(ids)):
            raise ValueError("agent ids must be unique")

    @property
    def sim_time(self) -> float:
        return self.tick * self.scenario.dt

    def agent(self, agent_id: int) -> AgentState:
        for a in self.agents:
            if a.agent_id == agent_id:
                return a
        raise KeyError(agent_id)

    def signal_phases(self) -> dict:
        if self.scenario.signal is None:
            return {}
        return self.scenario.signal.phases(self.sim_time)


@dataclass(frozen=True)
class AgentSpec:
    """Explicit agent placement for authored scenarios."""

    cls: AgentClass
    route: tuple
    s: float
    speed: float = 0.0
    dims: Optional[tuple] = None
    control: str = "idm"
    profile: Optional[SpeedProfile] = None
    agent_id: Optional[int] = None


@dataclass(frozen=True)
class ScenarioConfig:
    lanes: tuple = ()
    agents: tuple = ()  # AgentSpec
    demand: int = 0
    demand_lanes: tuple = ()
    demand_speed: float = 8.0
    seed: int = 0
    idm: IdmParams = IdmParams()
    signal: Optional[SignalPlan] = None
    dt: float = DT_DEFAULT

    def __post_init__(self):
        if self.demand < 0:
            raise ConfigError("demand must be non-negative")
        if self.demand > 0 and not self.demand_lanes:
            raise ConfigError("demand requires demand_lanes")
        if self.dt <= 0:
            raise ConfigError("dt must be positive")


@dataclass(frozen=True)
class LabeledBox:
    """Ground-truth object in the sensor frame: class + oriented 3D box."""

    cls: AgentClass
    center: tuple  # (x, y, z) sensor frame
    dims: tuple  # (length, width, height)
    yaw: float  # sensor frame


def init_scenario(config: ScenarioConfig) -> WorldState:
    """Build the tick-0 world: explicit agents plus seeded random demand."""
    lanes = {ln.lane_id: ln for ln in config.lanes}
    if len(lanes) != len(config.lanes):
        raise ConfigError("duplicate lane ids")
    scenario = Scenario(lanes=lanes, idm=config.idm, signal=config.signal, dt=config.dt)

    agents = []
    next_id = 0
    for spec in config.agents:
        for lid in spec.route:
            if lid not in lanes:
                raise ConfigError(f"agent route references unknown lane {lid}")
        aid = spec.agent_id if spec.agent_id is not None else next_id
        next_id = max(next_id, aid + 1)
        dims = spec.dims or DEFAULT_DIMS[spec.cls]
        lane = lanes[spec.route[0]]
        if not (0.0 <= spec.s <= lane.length):
            raise ConfigError(f"agent spawn s={spec.s} outside lane {lane.lane_id}")
        agents.append(
            AgentState(
                agent_id=aid,
                cls=spec.cls,
                pose=lane.pose_at(spec.s),
                speed=spec.speed,
                accel=0.0,
                dims=dims,
                route=tuple(spec.route),
                route_index=0,
                s=spec.s,
                control=spec.control,
                profile=spec.profile,
            )
        )

    if config.demand > 0:
        rng = np.random.default_rng(config.seed)
        per_lane_cursor = {lid: 5.0 for lid in config.demand_lanes}
        for i in range(config.demand):
            lid = config.demand_lanes[i % len(config.demand_lanes)]
            lane = lanes.get(lid)
            if lane is None:
                raise ConfigError(f"demand lane {lid} not defined")
            dims = DEFAULT_DIMS[AgentClass.CAR]
            s = per_lane_cursor[lid]
            if s > lane.length:
                raise ConfigError(f"demand overflows lane {lid}")
            agents.append(
                AgentState(
                    agent_id=next_id,
                    cls=AgentClass.CAR,
                    pose=lane.pose_at(s),
                    speed=config.demand_speed,
                    accel=0.0,
                    dims=dims,
                    route=(lid,),
                    route_index=0,
                    s=s,
                    control="idm",
                )
            )
            next_id += 1
            per_lane_cursor[lid] = s + dims[0] + float(rng.uniform(6.0, 20.0))

    _check_no_overlap(agents)
    return WorldState(tick=0, agents=tuple(agents), scenario=scenario)


def _check_no_overlap(agents: Sequence[AgentState]) -> None:
    by_lane: dict = {}
    for a in agents:
        if a.cls is AgentClass.PEDESTRIAN:
            continue
        by_lane.setdefault(a.lane_id, []).append(a)
    for lid, group in by_lane.items():
        group.sort(key=lambda a: a.s)
        for rear, front in zip(group, group[1:]):
            gap = front.s - rear.s - 0.5 * (front.length + rear.length)
            if gap <= 0:
                raise ConfigError(
                    f"agents {rear.agent_id} and {front.agent_id} overlap on lane {lid}"
                )


def _leader_of(agent: AgentState, same_lane: Sequence[AgentState]) -> Optional[AgentState]:
    leader = None
    for other in same_lane:
        if other.agent_id == agent.agent_id or other.s <= agent.s:
            continue
        if leader is None or other.s < leader.s:
            leader = other
    return leader


def step_world(
    state: WorldState, dt: Optional[float] = None, commands: Optional[Mapping[int, float]] = None
) -> WorldState:
    """Advance one lockstep tick with forward-Euler integration.

    ``commands`` maps externally controlled agent ids to acceleration
    commands for this tick. Collisions and despawns are reported as events
    on the returned state, never as exceptions.
    """
    sc = state.scenario
    dt = sc.dt if dt is None else dt
    commands = commands or {}
    sim_time = state.sim_time
    events = []

    vehicles_by_lane: dict = {}
    for a in state.agents:
        if a.cls is not AgentClass.PEDESTRIAN:
            vehicles_by_lane.setdefault(a.lane_id, []).append(a)

    new_agents = []
    for a in state.agents:
        if a.control == "scripted" and a.profile is not None:
            v_now = a.profile.speed_at(sim_time)
            v_next = a.profile.speed_at(sim_time + dt)
            accel = (v_next - v_now) / dt
            new_s = a.s + v_now * dt
            new_v = v_next
        else:
            if a.control == "external":
                accel = float(commands.get(a.agent_id, 0.0))
            elif a.cls is AgentClass.PEDESTRIAN:
                accel = 0.0
            else:
                accel = _idm_command(a, vehicles_by_lane.get(a.lane_id, ()), sc, sim_time, events)
            new_s = a.s + a.speed * dt
            new_v = max(0.0, a.speed + accel * dt)

        lane = sc.lanes[a.lane_id]
        route_index = a.route_index
        while new_s > lane.length:
            if route_index + 1 < len(a.route):
                new_s -= lane.length
                route_index += 1
                lane = sc.lanes[a.route[route_index]]
            else:
                break
        if new_s > lane.length and route_index == len(a.route) - 1:
            events.append(f"despawn:{a.agent_id}")
            continue

        new_agents.append(
            replace(
                a,
                pose=lane.pose_at(new_s),
                speed=new_v,
                accel=accel,
                route_index=route_index,
                s=new_s,
            )
        )

    return WorldState(
        tick=state.tick + 1, agents=tuple(new_agents), scenario=sc, events=tuple(events)
    )


def _idm_command(
    agent: AgentState,
    same_lane: Sequence[AgentState],
    sc: Scenario,
    sim_time: float,
    events: list,
) -> float:
    leader = _leader_of(agent, same_lane)
    if leader is None:
        gap, v_lead = math.inf, 0.0
    else:
        gap = leader.s - agent.s - leader.length
        v_lead = leader.speed
        if gap <= 0:
            events.append(f"collision_imminent:{agent.agent_id}")
    a = idm_acceleration(agent.speed, v_lead, gap, sc.idm)

    lane = sc.lanes[agent.lane_id]
    if (
        sc.signal is not None
        and lane.signal_group is not None
        and lane.stop_line_s is not None
        and not sc.signal.is_green(lane.signal_group, sim_time)
    ):
        front = agent.s + 0.5 * agent.length
        if front <= lane.stop_line_s:
            stop_gap = lane.stop_line_s - front
            a = min(a, idm_acceleration(agent.speed, 0.0, max(stop_gap, 1e-9), sc.idm))
    return a


def ground_truth_objects(
    state: WorldState, region, sensor: SensorPose = SensorPose()
) -> list:
    """Sensor-frame labels for every agent whose center lies inside ``region``.

    ``region`` is an axis-aligned geofence with closed ``x_range``/``y_range``/
    ``z_range`` intervals, evaluated on sensor-frame centers.
    """
    labels = []
    for a in state.agents:
        xy = world_to_sensor_xy(np.array([[a.pose.x, a.pose.y]]), sensor)[0]
        z = 0.5 * a.dims[2] - sensor.height
        if not region.contains_point(float(xy[0]), float(xy[1]), z):
            continue
        labels.append(
            LabeledBox(
                cls=a.cls,
                center=(float(xy[0]), float(xy[1]), z),
                dims=a.dims,
                yaw=normalize_angle(a.pose.yaw - sensor.yaw),
            )
        )
    return labels


def export_trajectory_csv(states: Sequence[WorldState], path) -> None:
    """Ground-truth trajectory dump: tick, id, class, x, y, yaw, v, a."""
    with open(path, "w") as f:
        f.write("tick,id,class,x,y,yaw,v,a\n")
        for st in states:
            for a in st.agents:
                f.write(
                    f"{st.tick},{a.agent_id},{a.cls.value},"
                    f"{a.pose.x:.6f},{a.pose.y:.6f},{a.pose.yaw:.6f},"
                    f"{a.speed:.6f},{a.accel:.6f}\n"
                )
