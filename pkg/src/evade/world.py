"""Domain geometry and kinematics for the collision-avoidance simulator.

Coordinates: x forward, y left, in a road-aligned frame anchored at the ego
vehicle's starting position. Participant and obstacle positions are stored
relative to the ego's *current* position (road axes, not rotated by ego
heading). The safety margin h is positive inside an obstacle envelope and
negative outside; for circles h = radius - distance, for ellipses the scaled
radial analog min(a,b) * (1 - rho) with rho^2 = (dx/a)^2 + (dy/b)^2, and for
rectangles the signed box distance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional, Sequence

import numpy as np

# Ego platform limits (typical consumer sedan).
EGO_LENGTH = 4.5
EGO_WIDTH = 1.8
WHEELBASE = 2.8
STEER_MAX = 0.6
A_MAX_BRAKE = 8.0
A_DRIVE_MAX = 3.0

# Scripted participant motion profiles.
PARTICIPANT_BRAKE = 6.0      # m/s^2 applied by FB/LB/RB scripts
LATERAL_RAMP = 1.5           # m/s lateral speed during LC/RC/LB/RB
PEDESTRIAN_SPEED_MAX = 3.0

# Participant footprints by kind: (length, width) boxes, pedestrians a disc.
KIND_FOOTPRINTS = {
    "small_car": (4.5, 1.8),
    "large_truck": (8.0, 2.5),
    "suv": (4.8, 1.9),
}
PEDESTRIAN_RADIUS = 0.3

TTC_EPS = 0.01


class RoadKind(Enum):
    INTERSECTION = "intersection"
    ONE_WAY_MULTILANE = "one_way_multilane"


class ImpactZone(Enum):
    FRONT = "front"
    SIDE = "side"
    REAR = "rear"
    NONE = "none"


@dataclass(frozen=True)
class Ellipse:
    major: float
    minor: float

    def __post_init__(self):
        if self.major <= 0 or self.minor <= 0:
            raise ValueError("ellipse radii must be positive")


@dataclass(frozen=True)
class Circle:
    radius: float

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("circle radius must be positive")


@dataclass(frozen=True)
class Rectangle:
    length: float
    width: float

    def __post_init__(self):
        if self.length <= 0 or self.width <= 0:
            raise ValueError("rectangle extents must be positive")


Shape = Ellipse | Circle | Rectangle


@dataclass(frozen=True)
class VehicleState:
    """Ego pose, speed and control in the road frame."""

    position: tuple[float, float] = (0.0, 0.0)
    heading: float = 0.0
    speed: float = 0.0
    yaw_rate: float = 0.0
    control: tuple[float, float] = (0.0, 0.0)  # (steer rad, accel m/s^2)

    def __post_init__(self):
        if self.speed < 0:
            raise ValueError("speed must be non-negative")
        steer, accel = self.control
        if abs(steer) > STEER_MAX + 1e-9:
            raise ValueError(f"|steer| exceeds {STEER_MAX}")
        if not (-A_MAX_BRAKE - 1e-9 <= accel <= A_DRIVE_MAX + 1e-9):
            raise ValueError("accel outside braking/drive limits")


@dataclass(frozen=True)
class Script:
    """Open-loop behavior a participant follows during simulation."""

    intention: str = "M"
    start_s: float = 0.0


@dataclass(frozen=True)
class ParticipantState:
    id: str
    kind: str
    rel_position: tuple[float, float]
    velocity: tuple[float, float]
    intention: Optional[str] = None
    confidence: float = 1.0
    script: Script = field(default_factory=Script)
    axis_heading: Optional[float] = None   # body frame axis, fixed at spawn
    lateral_progress: float = 0.0          # meters of scripted lateral shift

    def __post_init__(self):
        if self.kind not in KIND_FOOTPRINTS and self.kind != "pedestrian":
            raise ValueError(f"unknown participant kind {self.kind!r}")
        if self.kind == "pedestrian":
            if math.hypot(*self.velocity) > PEDESTRIAN_SPEED_MAX + 1e-9:
                raise ValueError("pedestrian speed above limit")
        if self.axis_heading is None:
            axis = math.atan2(self.velocity[1], self.velocity[0]) \
                if math.hypot(*self.velocity) > 0.05 else 0.0
            object.__setattr__(self, "axis_heading", axis)


@dataclass(frozen=True)
class Obstacle:
    id: str
    shape: Shape
    rel_position: tuple[float, float]
    velocity: tuple[float, float] = (0.0, 0.0)
    risk: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.risk <= 1.0:
            raise ValueError("risk must lie in [0, 1]")


@dataclass(frozen=True)
class RoadTopology:
    kind: RoadKind
    left_bound_m: float
    right_bound_m: float
    lane_width_m: float = 3.5

    def __post_init__(self):
        if self.left_bound_m <= 0 or self.right_bound_m <= 0:
            raise ValueError("road bounds must be positive")


@dataclass(frozen=True)
class ImpactReport:
    occurred: bool
    zone: ImpactZone
    rel_speed: float
    time_s: float = 0.0

    def __post_init__(self):
        if not self.occurred and (self.zone is not ImpactZone.NONE or self.rel_speed != 0.0):
            raise ValueError("no impact implies zone=none and rel_speed=0")


@dataclass(frozen=True)
class WorldState:
    """Immutable snapshot of the simulated scene at one instant."""

    time: float
    ego: VehicleState
    road: RoadTopology
    participants: tuple[ParticipantState, ...] = ()
    obstacles: tuple[Obstacle, ...] = ()
    # Body-frame observation frames per participant, appended every
    # FEATURE_STRIDE sim steps (0.1 s cadence at the default dt).
    feature_history: dict = field(default_factory=dict)


FEATURE_CADENCE_S = 0.1
DEFAULT_DT = 0.05


def h_value(ego: VehicleState, obstacle: Obstacle) -> float:
    """Signed penetration margin of the ego reference point: > 0 inside."""
    dx = obstacle.rel_position[0]
    dy = obstacle.rel_position[1]
    return h_of_offset(obstacle.shape, dx, dy)


def h_of_offset(shape: Shape, dx: float, dy: float) -> float:
    """Margin for a point displaced (dx, dy) from the obstacle center."""
    if isinstance(shape, Circle):
        return shape.radius - math.hypot(dx, dy)
    if isinstance(shape, Ellipse):
        a, b = shape.major, shape.minor
        rho = math.hypot(dx / a, dy / b)
        return min(a, b) * (1.0 - rho)
    if isinstance(shape, Rectangle):
        hx, hy = shape.length / 2.0, shape.width / 2.0
        ox = abs(dx) - hx
        oy = abs(dy) - hy
        if ox <= 0 and oy <= 0:
            return -max(ox, oy)          # depth to the nearest face
        return -math.hypot(max(ox, 0.0), max(oy, 0.0))
    raise TypeError(f"unsupported shape {shape!r}")


def time_to_collision(gap_m: float, closing_speed: float) -> Optional[float]:
    """gap / closing when approaching, None when not closing."""
    if gap_m < 0:
        raise ValueError("gap must be non-negative")
    if closing_speed > TTC_EPS:
        return gap_m / closing_speed
    return None


def _active_intent(p: ParticipantState, t: float) -> str:
    return p.script.intention if t >= p.script.start_s else "M"


def _step_participant(p: ParticipantState, t: float, dt: float,
                      lane_width: float) -> ParticipantState:
    intent = _active_intent(p, t)
    if intent == "M":
        return p    # constant velocity, bit-exact
    ax = p.axis_heading
    fwd = (math.cos(ax), math.sin(ax))
    left = (-math.sin(ax), math.cos(ax))
    vx, vy = p.velocity
    long_speed = vx * fwd[0] + vy * fwd[1]

    if intent in ("FB", "LB", "RB"):
        long_speed = max(0.0, long_speed - PARTICIPANT_BRAKE * dt)

    lat_speed = 0.0
    if intent in ("LC", "LB"):
        lat_speed = LATERAL_RAMP
    elif intent in ("RC", "RB"):
        lat_speed = -LATERAL_RAMP
    # Lateral shift runs while the vehicle still rolls and the lane change
    # (one lane width) is not complete.
    progress = p.lateral_progress
    if lat_speed != 0.0:
        if progress >= lane_width or long_speed <= 0.1:
            lat_speed = 0.0
        else:
            progress = min(lane_width, progress + abs(lat_speed) * dt)

    new_v = (long_speed * fwd[0] + lat_speed * left[0],
             long_speed * fwd[1] + lat_speed * left[1])
    return replace(p, velocity=new_v, lateral_progress=progress)


def _participant_features(prev: ParticipantState, cur: ParticipantState,
                          dt: float):
    """Body-frame observation of one participant between two steps."""
    from .intention import DrivingFeatures

    ax = prev.axis_heading
    fwd = (math.cos(ax), math.sin(ax))
    left = (-math.sin(ax), math.cos(ax))

    def decomp(v):
        return v[0] * fwd[0] + v[1] * fwd[1], v[0] * left[0] + v[1] * left[1]

    lp, _ = decomp(prev.velocity)
    lc, latc = decomp(cur.velocity)
    accel = (lc - lp) / dt
    h_prev = math.atan2(prev.velocity[1], prev.velocity[0]) if math.hypot(*prev.velocity) > 0.05 else ax
    h_cur = math.atan2(cur.velocity[1], cur.velocity[0]) if math.hypot(*cur.velocity) > 0.05 else h_prev
    dh = math.atan2(math.sin(h_cur - h_prev), math.cos(h_cur - h_prev))
    return DrivingFeatures(
        lateral_velocity=latc,
        longitudinal_accel=accel,
        lateral_offset_rate=latc,
        heading_rate=dh / dt,
    )


def step(world: WorldState, dt: float = DEFAULT_DT) -> WorldState:
    """Advance the scene one fixed step (forward Euler, kinematic bicycle)."""
    if not 0.0 < dt <= 0.1:
        raise ValueError("dt must lie in (0, 0.1]")

    ego = world.ego
    steer, accel = ego.control
    x, y = ego.position
    nx = x + ego.speed * math.cos(ego.heading) * dt
    ny = y + ego.speed * math.sin(ego.heading) * dt
    yaw_rate = (ego.speed / WHEELBASE) * math.tan(steer)
    nheading = ego.heading + yaw_rate * dt
    nspeed = max(0.0, ego.speed + accel * dt)
    new_ego = replace(ego, position=(nx, ny), heading=nheading,
                      speed=nspeed, yaw_rate=yaw_rate)
    return step_with_ego(world, new_ego, dt)


def step_with_ego(world: WorldState, new_ego: VehicleState,
                  dt: float = DEFAULT_DT) -> WorldState:
    """Advance participants and obstacles under an externally moved ego.

    Used both by step() and by trajectory-template playback, where the ego
    pose comes from a policy template instead of the bicycle model.
    """
    if not 0.0 < dt <= 0.1:
        raise ValueError("dt must lie in (0, 0.1]")
    x, y = world.ego.position
    nx, ny = new_ego.position
    ego_shift = (nx - x, ny - y)
    t = world.time
    new_parts = []
    history = dict(world.feature_history)
    stride = max(1, round(FEATURE_CADENCE_S / dt))
    step_index = round(t / dt)
    for p in world.participants:
        stepped = _step_participant(p, t, dt, world.road.lane_width_m)
        rel = (p.rel_position[0] + stepped.velocity[0] * dt - ego_shift[0],
               p.rel_position[1] + stepped.velocity[1] * dt - ego_shift[1])
        stepped = replace(stepped, rel_position=rel)
        if p.kind != "pedestrian" and step_index % stride == 0:
            frames = history.get(p.id, ())
            history[p.id] = frames + (_participant_features(p, stepped, dt),)
        new_parts.append(stepped)

    new_obs = []
    for ob in world.obstacles:
        rel = (ob.rel_position[0] + ob.velocity[0] * dt - ego_shift[0],
               ob.rel_position[1] + ob.velocity[1] * dt - ego_shift[1])
        new_obs.append(replace(ob, rel_position=rel))

    return WorldState(time=t + dt, ego=new_ego, road=world.road,
                      participants=tuple(new_parts), obstacles=tuple(new_obs),
                      feature_history=history)


# --- footprint geometry -----------------------------------------------------

def rect_corners(cx: float, cy: float, heading: float,
                 length: float, width: float) -> np.ndarray:
    hl, hw = length / 2.0, width / 2.0
    c, s = math.cos(heading), math.sin(heading)
    local = np.array([[hl, hw], [hl, -hw], [-hl, -hw], [-hl, hw]])
    rot = np.array([[c, -s], [s, c]])
    return local @ rot.T + np.array([cx, cy])


def _project(poly: np.ndarray, axis: np.ndarray) -> tuple[float, float]:
    d = poly @ axis
    return float(d.min()), float(d.max())


def polys_overlap(a: np.ndarray, b: np.ndarray) -> bool:
    """Separating-axis test for two convex polygons."""
    for poly in (a, b):
        for i in range(len(poly)):
            edge = poly[(i + 1) % len(poly)] - poly[i]
            axis = np.array([-edge[1], edge[0]])
            n = np.linalg.norm(axis)
            if n < 1e-12:
                continue
            axis = axis / n
            amin, amax = _project(a, axis)
            bmin, bmax = _project(b, axis)
            if amax < bmin or bmax < amin:
                return False
    return True


def poly_circle_overlap(poly: np.ndarray, center: np.ndarray, radius: float) -> bool:
    n = len(poly)
    # Inside test via sign of cross products (convex, consistent winding).
    signs = []
    for i in range(n):
        e = poly[(i + 1) % n] - poly[i]
        r = center - poly[i]
        signs.append(e[0] * r[1] - e[1] * r[0])
    if all(s >= 0 for s in signs) or all(s <= 0 for s in signs):
        return True
    for i in range(n):
        a, b = poly[i], poly[(i + 1) % n]
        ab = b - a
        tt = float(np.clip(np.dot(center - a, ab) / max(np.dot(ab, ab), 1e-12), 0.0, 1.0))
        closest = a + tt * ab
        if np.linalg.norm(center - closest) <= radius:
            return True
    return False


def footprint_overlaps(ego_poly: np.ndarray, agent_center: np.ndarray,
                       agent_heading: float, agent_shape) -> bool:
    """Ego polygon against a participant/obstacle footprint."""
    if isinstance(agent_shape, Circle):
        return poly_circle_overlap(ego_poly, agent_center, agent_shape.radius)
    if isinstance(agent_shape, Ellipse):
        # Scale space so the ellipse becomes the unit circle; the rectangle
        # maps to a convex quadrilateral (obstacle ellipses are axis-aligned).
        scale = np.array([1.0 / agent_shape.major, 1.0 / agent_shape.minor])
        poly = (ego_poly - agent_center) * scale
        return poly_circle_overlap(poly, np.zeros(2), 1.0)
    if isinstance(agent_shape, Rectangle):
        other = rect_corners(agent_center[0], agent_center[1], agent_heading,
                             agent_shape.length, agent_shape.width)
        return polys_overlap(ego_poly, other)
    raise TypeError(f"unsupported footprint shape {agent_shape!r}")


def _participant_footprint(p: ParticipantState):
    if p.kind == "pedestrian":
        return Circle(PEDESTRIAN_RADIUS), p.axis_heading
    length, width = KIND_FOOTPRINTS[p.kind]
    speed = math.hypot(*p.velocity)
    heading = math.atan2(p.velocity[1], p.velocity[0]) if speed > 0.05 else p.axis_heading
    return Rectangle(length, width), heading


def detect_impact(trajectory: Sequence[WorldState],
                  inflate: float = 0.0) -> ImpactReport:
    """First footprint overlap along a trajectory, zone by contact bearing.

    Bearing of the struck agent's center in the ego frame classifies the
    zone: |bearing| < 45 deg front, > 135 deg rear, otherwise side.
    """
    for state in trajectory:
        ex, ey = state.ego.position
        poly = rect_corners(ex, ey, state.ego.heading,
                            EGO_LENGTH + 2 * inflate, EGO_WIDTH + 2 * inflate)
        ego_v = np.array([state.ego.speed * math.cos(state.ego.heading),
                          state.ego.speed * math.sin(state.ego.heading)])
        agents = []
        for p in state.participants:
            shape, heading = _participant_footprint(p)
            center = np.array([ex + p.rel_position[0], ey + p.rel_position[1]])
            agents.append((center, heading, shape, np.array(p.velocity)))
        for ob in state.obstacles:
            center = np.array([ex + ob.rel_position[0], ey + ob.rel_position[1]])
            agents.append((center, 0.0, ob.shape, np.array(ob.velocity)))

        for center, heading, shape, vel in agents:
            if footprint_overlaps(poly, center, heading, shape):
                rel_v = ego_v - vel
                rel_speed = float(np.linalg.norm(rel_v))
                world_bearing = math.atan2(center[1] - ey, center[0] - ex)
                bearing = math.atan2(math.sin(world_bearing - state.ego.heading),
                                     math.cos(world_bearing - state.ego.heading))
                deg = abs(math.degrees(bearing))
                if deg < 45.0:
                    zone = ImpactZone.FRONT
                elif deg > 135.0:
                    zone = ImpactZone.REAR
                else:
                    zone = ImpactZone.SIDE
                return ImpactReport(occurred=True, zone=zone,
                                    rel_speed=rel_speed, time_s=state.time)
    return ImpactReport(occurred=False, zone=ImpactZone.NONE, rel_speed=0.0)
