"""Scene snapshots, structured prompts, fixed-length encodings, forecasting.

The prompt text is the frozen external contract with any reasoning backend;
the 55-component vector is the matching numeric encoding used for memory
retrieval and cache matching. Both read from the same quantized view of a
snapshot (meters and speeds at one decimal, risks at two), so snapshots with
identical prompt text encode to identical vectors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from . import world as wd
from . import intention as it

# Vector layout: ego speed, road one-hot(2), 4 obstacle slots x (fwd, left,
# closing speed, risk), 4 participant slots x (fwd, left, speed, one-hot(6)).
OBSTACLE_SLOTS = 4
PARTICIPANT_SLOTS = 4
VECTOR_DIM = 1 + 2 + OBSTACLE_SLOTS * 4 + PARTICIPANT_SLOTS * 9  # = 55

SPEED_NORM = 30.0
FWD_NORM = 100.0
LAT_NORM = 20.0

# Scheduling-relevant corridor: half ego lane plus half ego width.
CROSSER_LATERAL_SPEED = 2.5
PATH_ENTRY_GRACE_S = 0.5

KIND_DISPLAY = {
    "small_car": "small car",
    "large_truck": "Large Truck",
    "suv": "SUV",
    "pedestrian": "pedestrian",
}
ROAD_DISPLAY = {
    wd.RoadKind.INTERSECTION: "Intersection",
    wd.RoadKind.ONE_WAY_MULTILANE: "One-way multilane road",
}

TITLE_LINE = "AUTONOMOUS DRIVING COLLISION AVOIDANCE SCENARIO"
NO_OBSTACLES_LINE = "No static obstacles detected."
NO_HISTORY_LINE = "No historical data is available."


@dataclass(frozen=True)
class ScenarioSnapshot:
    timestamp: float
    ego: wd.VehicleState
    road: wd.RoadTopology
    obstacles: tuple[wd.Obstacle, ...] = ()
    participants: tuple[wd.ParticipantState, ...] = ()
    history_refs: tuple[str, ...] = ()
    awareness: bool = True


@dataclass(frozen=True)
class ScenarioVector:
    values: np.ndarray
    truncated: bool = False

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (VECTOR_DIM,):
            raise ValueError(f"scenario vector must have {VECTOR_DIM} components")
        object.__setattr__(self, "values", v)


def corridor_half_width(road: wd.RoadTopology) -> float:
    return road.lane_width_m / 2.0 + wd.EGO_WIDTH / 2.0


def _q1(x: float) -> float:
    return round(float(x), 1)


def _q2(x: float) -> float:
    return round(float(x), 2)


def _agent_ttc(fwd: float, closing: float) -> float:
    if fwd > 0 and closing > wd.TTC_EPS:
        return fwd / closing
    return math.inf


def _sorted_obstacles(s: ScenarioSnapshot):
    def key(ob):
        fwd = _q1(ob.rel_position[0])
        closing = _q1(s.ego.speed - ob.velocity[0])
        return (_agent_ttc(fwd, closing), fwd, ob.id)
    return sorted(s.obstacles, key=key)


def _sorted_participants(s: ScenarioSnapshot):
    def key(p):
        fwd = _q1(p.rel_position[0])
        closing = _q1(s.ego.speed - p.velocity[0])
        return (_agent_ttc(fwd, closing), fwd, p.id)
    return sorted(s.participants, key=key)


def hazard_ttc(ego: wd.VehicleState, participants: Sequence[wd.ParticipantState],
               obstacles: Sequence[wd.Obstacle], road: wd.RoadTopology
               ) -> tuple[Optional[float], Optional[str]]:
    """Minimum time-to-collision over path-relevant agents.

    An agent is path-relevant when it sits inside the ego corridor, or when
    it is a fast crosser (lateral speed >= 2.5 m/s) heading toward the
    corridor and reaching it before the closing gap runs out. Slow lateral
    movers are lane-bound (a merge completes one lane over) and count only
    once inside the corridor.
    """
    half = corridor_half_width(road)
    best: Optional[float] = None
    best_id: Optional[str] = None
    agents = [(p.id, p.rel_position, p.velocity) for p in participants]
    agents += [(o.id, o.rel_position, o.velocity) for o in obstacles]
    ego_fwd_speed = ego.speed * math.cos(ego.heading)
    for agent_id, (fwd, lat), (vx, vy) in agents:
        if fwd <= 0:
            continue
        closing = ego_fwd_speed - vx
        ttc = wd.time_to_collision(max(0.0, fwd), closing)
        if ttc is None:
            continue
        in_path = abs(lat) <= half
        if not in_path and abs(vy) >= CROSSER_LATERAL_SPEED and lat * vy < 0:
            entry = (abs(lat) - half) / abs(vy)
            in_path = entry <= ttc + PATH_ENTRY_GRACE_S
        if in_path and (best is None or ttc < best):
            best, best_id = ttc, agent_id
    return best, best_id


def observe(world: wd.WorldState, grid_cache=None,
            transitions: Optional[it.TransitionMatrix] = None,
            awareness: bool = True, window: int = it.DEFAULT_WINDOW
            ) -> tuple[ScenarioSnapshot, dict[str, list[str]]]:
    """Snapshot the scene: fill obstacle risks and predicted intentions.

    Returns the snapshot and, per vehicle participant, the intention labels
    ranked by plausibility (used to branch forecasts). With awareness off,
    risks stay zero and intentions are left unset.
    """
    rankings: dict[str, list[str]] = {}
    participants = []
    tm = transitions or it.default_transitions()
    for p in world.participants:
        if not awareness:
            participants.append(replace(p, intention=None, confidence=1.0))
            continue
        if p.kind == "pedestrian":
            participants.append(replace(p, intention="M", confidence=1.0))
            continue
        frames = world.feature_history.get(p.id, ())
        if not frames:
            frames = (it.DrivingFeatures(),)
        label, conf = it.predict_intention(frames, tm, window=window)
        scores = [it.emission_scores(f) for f in list(frames)[-window:]]
        rankings[p.id] = it.rank_final_labels(scores, tm)
        participants.append(replace(p, intention=label, confidence=conf))

    obstacles = world.obstacles
    if awareness and grid_cache is not None and obstacles:
        from .reachability import fill_risks
        obstacles = fill_risks(obstacles, world.ego, grid_cache)

    snap = ScenarioSnapshot(timestamp=world.time, ego=world.ego,
                            road=world.road, obstacles=tuple(obstacles),
                            participants=tuple(participants),
                            awareness=awareness)
    return snap, rankings


def forecast(s: ScenarioSnapshot, horizon: float,
             rankings: Optional[dict[str, list[str]]] = None,
             grid_cache=None, dt: float = wd.DEFAULT_DT,
             current_ttc: Optional[float] = None) -> list[ScenarioSnapshot]:
    """Three candidate scenes at the instant the hazard TTC reaches horizon.

    Hypothesis (a) keeps every participant on its most plausible intention;
    (b) and (c) switch the least confident participant to its second and
    third ranked intentions. With no participants all three collapse to the
    maintain-all propagation.
    """
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    rankings = rankings or {}
    if current_ttc is None:
        current_ttc, _ = hazard_ttc(s.ego, s.participants, s.obstacles, s.road)
    delta = max(0.0, (current_ttc - horizon)) if current_ttc is not None else 0.0
    steps = round(delta / dt)

    vehicles = [p for p in s.participants if p.kind != "pedestrian"]
    pivot = None
    ranked = ["M", "M", "M"]
    if vehicles:
        candidate = min(vehicles, key=lambda p: (p.confidence, p.id))
        if candidate.confidence < 1.0 - 1e-12:
            # A fully certain prediction leaves nothing to branch on.
            pivot = candidate
            base = pivot.intention or "M"
            ranked = rankings.get(pivot.id) or \
                [base] + [l for l in it.LABELS if l != base]

    out = []
    for hyp_index in range(3):
        hypotheses = {}
        for p in s.participants:
            base = p.intention or "M"
            if pivot is not None and p.id == pivot.id:
                base = ranked[min(hyp_index, len(ranked) - 1)]
            hypotheses[p.id] = base
        out.append(_propagate(s, hypotheses, steps, dt, grid_cache))
    return out


def _propagate(s: ScenarioSnapshot, hypotheses: dict[str, str], steps: int,
               dt: float, grid_cache) -> ScenarioSnapshot:
    parts = tuple(
        replace(p, script=wd.Script(intention=hypotheses[p.id], start_s=0.0),
                lateral_progress=0.0)
        for p in s.participants
    )
    state = wd.WorldState(
        time=0.0,
        ego=replace(s.ego, control=(0.0, 0.0)),
        road=s.road,
        participants=parts,
        obstacles=s.obstacles,
    )
    for _ in range(steps):
        state = wd.step(state, dt)
    parts = tuple(
        replace(p, intention=(hypotheses[p.id] if s.awareness else None),
                confidence=next(q.confidence for q in s.participants if q.id == p.id))
        for p in state.participants
    )
    obstacles = state.obstacles
    if s.awareness and grid_cache is not None and obstacles:
        from .reachability import fill_risks
        obstacles = fill_risks(obstacles, state.ego, grid_cache)
    return ScenarioSnapshot(timestamp=s.timestamp + steps * dt, ego=state.ego,
                            road=s.road, obstacles=obstacles,
                            participants=parts,
                            history_refs=s.history_refs, awareness=s.awareness)


# --- prompt serialization -----------------------------------------------------


def _position_phrase(noun: str, fwd: float, lat: float) -> str:
    if fwd >= 0.05:
        where = f"{fwd:.1f} m in front of the vehicle"
    elif fwd <= -0.05:
        where = f"{abs(fwd):.1f} m behind the vehicle"
    else:
        where = "level with the vehicle"
    if lat >= 0.05:
        side = f" and {lat:.1f} m to the left"
    elif lat <= -0.05:
        side = f" and {abs(lat):.1f} m to the right"
    else:
        side = ""
    return f"The {noun} is {where}{side}."


def _motion_phrase(noun: str, vx: float, vy: float) -> Optional[str]:
    speed = math.hypot(vx, vy)
    if speed < 0.05:
        return None
    if abs(vy) >= abs(vx):
        direction = "to the left" if vy > 0 else "to the right"
    else:
        direction = "forward" if vx > 0 else "backward"
    return f"The {noun} is moving {direction} at a speed of {speed:.1f} m/s."


def _shape_phrase(shape: wd.Shape) -> str:
    if isinstance(shape, wd.Circle):
        return f"circle(radius {shape.radius:.1f} m)"
    if isinstance(shape, wd.Ellipse):
        return f"ellipse(major {shape.major:.1f} m, minor {shape.minor:.1f} m)"
    return f"rectangle(length {shape.length:.1f} m, width {shape.width:.1f} m)"


def to_prompt(s: ScenarioSnapshot, historical: Sequence = ()) -> str:
    """Serialize a snapshot to the structured scene-description text."""
    lines = [TITLE_LINE]
    lines.append("## Ego Vehicle:")
    ex, ey = s.ego.position
    vx = s.ego.speed * math.cos(s.ego.heading)
    vy = s.ego.speed * math.sin(s.ego.heading)
    lines.append(
        f"ID=ego, type=small car, position=({_q1(ex):.1f}, {_q1(ey):.1f}), "
        f"velocity=({_q1(vx):.1f}, {_q1(vy):.1f}), "
        f"Road Topology={ROAD_DISPLAY[s.road.kind]}"
    )
    lines.append(
        f"Road boundaries: {s.road.left_bound_m:.1f} m to the left, "
        f"{s.road.right_bound_m:.1f} m to the right. "
        f"Lane width = {s.road.lane_width_m:.1f} m."
    )

    lines.append("## Obstacles:")
    obstacles = _sorted_obstacles(s)
    if not obstacles:
        lines.append(NO_OBSTACLES_LINE)
    for ob in obstacles:
        lines.append(f"Obstacle ID={ob.id}, type={_shape_phrase(ob.shape)}.")
        lines.append(_position_phrase("obstacle",
                                      _q1(ob.rel_position[0]),
                                      _q1(ob.rel_position[1])))
        motion = _motion_phrase("obstacle", _q1(ob.velocity[0]), _q1(ob.velocity[1]))
        lines.append(motion if motion else "Static.")
        if s.awareness:
            lines.append(f"Risk = {_q2(ob.risk):.2f}.")

    lines.append("## Traffic Participants:")
    participants = _sorted_participants(s)
    if not participants:
        lines.append("No traffic participants detected.")
    for p in participants:
        lines.append(f"Participant ID={p.id}, type={KIND_DISPLAY[p.kind]}.")
        lines.append(_position_phrase("participant",
                                      _q1(p.rel_position[0]),
                                      _q1(p.rel_position[1])))
        motion = _motion_phrase("participant", _q1(p.velocity[0]), _q1(p.velocity[1]))
        if motion:
            lines.append(motion)
        else:
            lines.append("The participant is stationary.")
        if s.awareness and p.intention is not None:
            lines.append(f"Intention = {p.intention} ({it.LONG_NAMES[p.intention]}).")

    lines.append("## HISTORICAL SCENARIOS:")
    if not historical:
        lines.append(NO_HISTORY_LINE)
    else:
        for record, sim in historical:
            outcome = record.outcome
            lines.append(
                f"Case {record.id} (similarity {sim:.2f}): policy "
                f"{int(record.policy)} ({record.policy.name}), collision loss "
                f"{outcome.collision_loss:.3f}, false-trigger loss "
                f"{outcome.false_trigger_loss:.3f}."
            )
    return "\n".join(lines)


def encode(s: ScenarioSnapshot) -> ScenarioVector:
    """Fixed-length numeric encoding; slots sorted by ascending TTC."""
    v = np.zeros(VECTOR_DIM)
    v[0] = _q1(s.ego.speed) / SPEED_NORM
    road_onehot = {wd.RoadKind.INTERSECTION: 1, wd.RoadKind.ONE_WAY_MULTILANE: 2}
    v[road_onehot[s.road.kind]] = 1.0

    truncated = (len(s.obstacles) > OBSTACLE_SLOTS
                 or len(s.participants) > PARTICIPANT_SLOTS)

    base = 3
    for i, ob in enumerate(_sorted_obstacles(s)[:OBSTACLE_SLOTS]):
        off = base + 4 * i
        closing = _q1(s.ego.speed - ob.velocity[0])
        v[off + 0] = _q1(ob.rel_position[0]) / FWD_NORM
        v[off + 1] = _q1(ob.rel_position[1]) / LAT_NORM
        v[off + 2] = closing / SPEED_NORM
        v[off + 3] = _q2(ob.risk) if s.awareness else 0.0

    base = 3 + 4 * OBSTACLE_SLOTS
    for i, p in enumerate(_sorted_participants(s)[:PARTICIPANT_SLOTS]):
        off = base + 9 * i
        v[off + 0] = _q1(p.rel_position[0]) / FWD_NORM
        v[off + 1] = _q1(p.rel_position[1]) / LAT_NORM
        v[off + 2] = _q1(math.hypot(*p.velocity)) / SPEED_NORM
        if s.awareness and p.intention is not None:
            v[off + 3 + it.LABEL_INDEX[p.intention]] = 1.0

    np.clip(v, -1.0, 1.0, out=v)
    return ScenarioVector(values=v, truncated=truncated)


def similarity(a: ScenarioVector, b: ScenarioVector) -> float:
    """Cosine similarity mapped to [0, 1]; identical zero vectors match."""
    va, vb = a.values, b.values
    if va.shape != vb.shape:
        raise ValueError("vector dimensions differ")
    na = float(np.linalg.norm(va))
    nb = float(np.linalg.norm(vb))
    if na == 0.0 and nb == 0.0:
        return 1.0
    if na == 0.0 or nb == 0.0:
        return 0.5
    cos = float(np.dot(va, vb) / (na * nb))
    return float(np.clip((1.0 + cos) / 2.0, 0.0, 1.0))
