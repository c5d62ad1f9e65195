"""Candidate evasive policies, trajectory templates, and safety validation.

Eight policies: maximum braking (AEB), sudden lane changes left/right
(AES-L/R), lane changes with braking (ES-B-L/R), T-type drift stops that
finish perpendicular to the lane (T-D-L/R), and non-intervention (NI).
Templates are kinematic position/heading/speed profiles sampled at a fixed
step; the drift's lateral motion is deliberately exempt from the normal
steering limits since what downstream consumers need is its occupancy and
terminal orientation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import IntEnum
from typing import Optional

import numpy as np

from . import world as wd
from .scenario import ScenarioSnapshot

TEMPLATE_DURATION_S = 4.0
LANE_CHANGE_TIME_S = 1.5
DRIFT_ROTATION_TIME_S = 1.2
ESCAPE_BRAKE = 6.0           # m/s^2 for the braking lane changes
ROAD_MARGIN = 0.3            # m clearance kept to road boundaries
LANE_CLEAR_WINDOW_S = 2.5    # horizon of the target-lane occupancy check


class Policy(IntEnum):
    AEB = 0
    AES_L = 1
    AES_R = 2
    ES_B_L = 3
    ES_B_R = 4
    T_D_L = 5
    T_D_R = 6
    NI = 7


POLICY_DESCRIPTIONS = {
    Policy.AEB: "Maximum braking straight ahead to a full stop.",
    Policy.AES_L: "Sudden lane change one lane to the left, speed held.",
    Policy.AES_R: "Sudden lane change one lane to the right, speed held.",
    Policy.ES_B_L: "Lane change to the left combined with braking.",
    Policy.ES_B_R: "Lane change to the right combined with braking.",
    Policy.T_D_L: "Drift stop rotating to face left, ending perpendicular.",
    Policy.T_D_R: "Drift stop rotating to face right, ending perpendicular.",
    Policy.NI: "No intervention; continue at constant velocity.",
}


class Terminal:
    STOPPED = "stopped"
    LANE_CHANGED = "lane_changed"
    PERPENDICULAR = "perpendicular"
    CRUISING = "cruising"


@dataclass(frozen=True)
class TrajectoryTemplate:
    policy: Policy
    times: np.ndarray
    xs: np.ndarray
    ys: np.ndarray
    headings: np.ndarray
    speeds: np.ndarray
    terminal: str

    def rows(self) -> list[tuple[float, float, float, float, float]]:
        """Sampled table (time, x, y, heading, speed) for export/plotting."""
        return [(float(t), float(x), float(y), float(h), float(s))
                for t, x, y, h, s in zip(self.times, self.xs, self.ys,
                                         self.headings, self.speeds)]


@dataclass(frozen=True)
class ValidationResult:
    passed: bool
    reason: str = ""


def trigger_severity(policy: Policy) -> float:
    """False-trigger cost class: 0.5 moderate, 1.0 extreme drift, 0 for NI."""
    if policy == Policy.NI:
        return 0.0
    if policy in (Policy.T_D_L, Policy.T_D_R):
        return 1.0
    return 0.5


def _lateral_ramp(t: np.ndarray, shift: float, duration: float) -> np.ndarray:
    """Smooth cosine ease from 0 to shift over duration, then held."""
    frac = np.clip(t / duration, 0.0, 1.0)
    return shift * (1.0 - np.cos(np.pi * frac)) / 2.0


def _trapezoid_path(rates: np.ndarray, dt: float) -> np.ndarray:
    """Position from sampled rates; exact for piecewise-linear profiles."""
    mids = (rates[:-1] + rates[1:]) / 2.0
    return np.concatenate(([0.0], np.cumsum(mids * dt)))


def generate(policy: Policy, ego: wd.VehicleState, road: wd.RoadTopology,
             duration: float = TEMPLATE_DURATION_S, dt: float = wd.DEFAULT_DT,
             target_speed: Optional[float] = None) -> TrajectoryTemplate:
    """Body-frame trajectory template starting from the ego's current pose.

    target_speed applies to the braking lane changes (ES-B-L/R): they
    decelerate at 6 m/s^2 down to it (default: all the way to a stop).
    """
    if not isinstance(policy, Policy):
        try:
            policy = Policy(policy)
        except ValueError as exc:
            raise ValueError(f"invalid policy id {policy!r}") from exc
    if policy != Policy.NI and ego.speed <= 0:
        raise ValueError("intervention policies need forward motion")

    n = int(round(duration / dt)) + 1
    times = np.arange(n) * dt
    v0 = ego.speed
    lane = road.lane_width_m

    if policy == Policy.NI:
        speeds = np.full(n, v0)
        ys = np.zeros(n)
        headings = np.zeros(n)
        terminal = Terminal.CRUISING
    elif policy == Policy.AEB:
        speeds = np.maximum(0.0, v0 - wd.A_MAX_BRAKE * times)
        ys = np.zeros(n)
        headings = np.zeros(n)
        terminal = Terminal.STOPPED
    elif policy in (Policy.AES_L, Policy.AES_R):
        side = 1.0 if policy == Policy.AES_L else -1.0
        speeds = np.full(n, v0)
        ys = _lateral_ramp(times, side * lane, LANE_CHANGE_TIME_S)
        headings = None
        terminal = Terminal.LANE_CHANGED
    elif policy in (Policy.ES_B_L, Policy.ES_B_R):
        side = 1.0 if policy == Policy.ES_B_L else -1.0
        floor = 0.0 if target_speed is None else max(0.0, min(target_speed, v0))
        speeds = np.maximum(floor, v0 - ESCAPE_BRAKE * times)
        ys = _lateral_ramp(times, side * lane, LANE_CHANGE_TIME_S)
        headings = None
        terminal = Terminal.LANE_CHANGED if floor > 0 else Terminal.STOPPED
    elif policy in (Policy.T_D_L, Policy.T_D_R):
        side = 1.0 if policy == Policy.T_D_L else -1.0
        # Rotate to perpendicular while shedding all speed; the slide is not
        # bound by the steering envelope.
        speeds = np.maximum(0.0, v0 * (1.0 - times / DRIFT_ROTATION_TIME_S))
        frac = np.clip(times / DRIFT_ROTATION_TIME_S, 0.0, 1.0)
        headings = side * (math.pi / 2.0) * frac
        xs = _trapezoid_path(speeds * np.cos(headings), dt)
        ys = _trapezoid_path(speeds * np.sin(headings), dt)
        return _into_world_frame(policy, ego, times, xs, ys, headings, speeds,
                                 Terminal.PERPENDICULAR)
    else:  # pragma: no cover - enum is exhaustive
        raise ValueError(f"invalid policy id {policy!r}")

    xs = _trapezoid_path(speeds, dt)
    if np.any(speeds == 0.0):
        # A stopped vehicle cannot keep translating sideways.
        stop = int(np.argmax(speeds == 0.0))
        ys = np.concatenate((ys[:stop + 1], np.full(len(ys) - stop - 1, ys[stop])))
    if headings is None:
        dys = np.diff(ys, prepend=0.0)
        dxs = np.maximum(np.diff(xs, prepend=0.0), 1e-9)
        headings = np.arctan2(dys, dxs)
        headings[0] = 0.0
    return _into_world_frame(policy, ego, times, xs, ys, headings, speeds,
                             terminal)


def _into_world_frame(policy, ego, times, xs, ys, headings, speeds, terminal):
    c, s = math.cos(ego.heading), math.sin(ego.heading)
    wx = ego.position[0] + xs * c - ys * s
    wy = ego.position[1] + xs * s + ys * c
    return TrajectoryTemplate(policy=policy, times=times, xs=wx, ys=wy,
                              headings=headings + ego.heading, speeds=speeds,
                              terminal=terminal)


def validate(template: TrajectoryTemplate, forecast: ScenarioSnapshot,
             dt: float = wd.DEFAULT_DT) -> ValidationResult:
    """Rule-based safety check of a template against a forecast scene.

    Checks, in order: (a) the swept footprint stays inside the road bounds
    with a 0.3 m margin, (b) no footprint overlap with the forecast's agents
    propagated alongside the template, (c) lateral policies (1-4) need a
    free target lane over the maneuver window. The first violated clause is
    reported.
    """
    road = forecast.road
    ego0 = forecast.ego

    # (a) road bounds on the swept footprint, in the lane frame of the ego.
    for x, y, heading in zip(template.xs, template.ys, template.headings):
        corners = wd.rect_corners(x, y, heading, wd.EGO_LENGTH, wd.EGO_WIDTH)
        lat = corners[:, 1] - ego0.position[1]
        if (lat.max() > road.left_bound_m - ROAD_MARGIN
                or lat.min() < -(road.right_bound_m - ROAD_MARGIN)):
            return ValidationResult(False, "road-bounds")

    # (b) collision sweep against agents propagated with their intentions.
    state = wd.WorldState(
        time=0.0, ego=ego0, road=road,
        participants=tuple(
            wd.ParticipantState(
                id=p.id, kind=p.kind, rel_position=p.rel_position,
                velocity=p.velocity,
                script=wd.Script(intention=p.intention or "M", start_s=0.0),
                axis_heading=p.axis_heading)
            for p in forecast.participants),
        obstacles=forecast.obstacles,
    )
    ego_xy0 = np.array(ego0.position)
    for i in range(len(template.times)):
        poly = wd.rect_corners(template.xs[i], template.ys[i],
                               template.headings[i], wd.EGO_LENGTH, wd.EGO_WIDTH)
        for p in state.participants:
            shape, heading = wd._participant_footprint(p)
            center = ego_xy0 + np.array(p.rel_position)
            if wd.footprint_overlaps(poly, center, heading, shape):
                return ValidationResult(False, "collision")
        for ob in state.obstacles:
            center = ego_xy0 + np.array(ob.rel_position)
            if wd.footprint_overlaps(poly, center, 0.0, ob.shape):
                return ValidationResult(False, "collision")
        # Advance agents only; rel positions stay anchored to the start pose.
        nxt = wd.step(wd.WorldState(time=state.time,
                                    ego=wd.VehicleState(position=tuple(ego_xy0)),
                                    road=road,
                                    participants=state.participants,
                                    obstacles=state.obstacles), dt)
        state = nxt

    # (c) free target lane for the lateral escape policies.
    if template.policy in (Policy.AES_L, Policy.AES_R, Policy.ES_B_L, Policy.ES_B_R):
        side = 1.0 if template.policy in (Policy.AES_L, Policy.ES_B_L) else -1.0
        target = side * road.lane_width_m
        horizon_steps = int(LANE_CLEAR_WINDOW_S / dt)
        agents = [(p.rel_position, p.velocity) for p in forecast.participants]
        agents += [(o.rel_position, o.velocity) for o in forecast.obstacles]
        for (fwd, lat), (vx, vy) in agents:
            for k in range(horizon_steps + 1):
                t = k * dt
                alat = lat + vy * t
                afwd = fwd + (vx - ego0.speed) * t
                if abs(alat - target) <= road.lane_width_m / 2.0 + wd.EGO_WIDTH / 2.0 \
                        and -6.0 <= afwd <= 25.0:
                    return ValidationResult(False, "occupied-lane")

    return ValidationResult(True, "")
