"""Reasoning-backend boundary: prompt assembly, remote client, expert stub.

Every advisor consumes an AdvisorRequest whose scenario text follows the
frozen prompt contract and answers with a policy id, so the deterministic
expert stub, the deliberately naive rule set, and a remote chat-completion
endpoint are interchangeable. The stub reads only the prompt text -- the
same information a remote model would see -- which makes degraded prompt
variants degrade the stub the same way.
"""

from __future__ import annotations

import concurrent.futures
import json
import math
import os
import re
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import httpx

from . import world as wd
from .policy import Policy, POLICY_DESCRIPTIONS

ANSWER_TAG = "Response to user:"
TRIGGER_TTC_S = 1.3          # hazard window the stub reasons about
BRAKE_STANDOFF_M = 0.5       # clearance demanded beyond the stopping point
FRONT_OVERHANG_M = wd.EGO_LENGTH / 2.0
HAZARD_WINDOW_GRACE_S = 1.0
DEFAULT_AGENT_HALF_DEPTH = 1.5
LANE_OCCUPANCY_WINDOW_S = 2.5

SYSTEM_PREAMBLE = (
    "You are an emergency collision-avoidance decision module for an "
    "autonomous vehicle. Given a structured scenario description, choose "
    "exactly one policy from the catalog below.\n\n"
    "Policy catalog:\n"
    + "\n".join(f"{int(p)}: {p.name} - {POLICY_DESCRIPTIONS[p]}"
                for p in Policy)
    + "\n\nAnalyze the scenario, then end your reply with the line: "
    f"{ANSWER_TAG} <policy id>"
)


class AdvisorFailure(Exception):
    """Base class for advisor failures the arbiter can fall back from."""


class AdvisorTimeout(AdvisorFailure):
    pass


class AdvisorTransportError(AdvisorFailure):
    pass


class AdvisorParseError(AdvisorFailure):
    pass


@dataclass(frozen=True)
class AdvisorRequest:
    system_preamble: str
    scenario_prompt: str
    historical_cases: tuple = ()
    deadline: float = 4.2

    def __post_init__(self):
        if self.deadline <= 0:
            raise ValueError("deadline must be positive")
        if not self.scenario_prompt:
            raise ValueError("scenario prompt must be non-empty")


@dataclass(frozen=True)
class AdvisorResponse:
    policy: Policy
    rationale: str
    latency: float = 0.0
    token_count: int = 0


@dataclass(frozen=True)
class EndpointConfig:
    url: str
    model: str
    api_key_env: str = "LLM_API_KEY"
    temperature: float = 0.0


def parse_response(text: str) -> Policy:
    """Policy id from the last answer tag, or a bare integer reply."""
    matches = re.findall(rf"{ANSWER_TAG}\s*(-?\d+)", text)
    if matches:
        value = int(matches[-1])
    elif re.fullmatch(r"-?\d+", text.strip()):
        value = int(text.strip())
    else:
        raise AdvisorParseError(f"no policy id found in reply: {text[:80]!r}")
    if not 0 <= value <= 7:
        raise AdvisorParseError(f"policy id {value} outside 0..7")
    return Policy(value)


def format_answer(policy: Policy, rationale: str = "") -> str:
    body = rationale.strip()
    suffix = f"{ANSWER_TAG} {int(policy)}"
    return f"{body}\n{suffix}" if body else suffix


# --- prompt parsing (the stub's view of the scene) ----------------------------

@dataclass
class SceneAgent:
    id: str
    kind: str                 # participant kind or obstacle shape name
    fwd: float
    lat: float
    speed: float = 0.0
    direction: Optional[str] = None   # left / right / forward / backward
    intention: Optional[str] = None
    risk: Optional[float] = None
    half_depth: float = DEFAULT_AGENT_HALF_DEPTH
    is_pedestrian: bool = False


@dataclass
class ParsedScene:
    ego_speed: float = 0.0
    road_kind: str = ""
    left_bound: float = math.inf
    right_bound: float = math.inf
    lane_width: float = 3.5
    agents: list = field(default_factory=list)


_POS_RE = re.compile(
    r"The (?:participant|obstacle) is (?:(\d+\.?\d*) m in front of the vehicle"
    r"|(\d+\.?\d*) m behind the vehicle|level with the vehicle)"
    r"(?: and (\d+\.?\d*) m to the (left|right))?\."
)
_MOVE_RE = re.compile(
    r"is moving (to the left|to the right|forward|backward) "
    r"at a speed of (\d+\.?\d*) m/s\."
)
_SHAPE_DEPTH_RE = re.compile(r"(circle|ellipse|rectangle)\((?:radius|major|length) (\d+\.?\d*) m")


def parse_scene(prompt: str) -> ParsedScene:
    """Reconstruct scene facts from the frozen prompt format."""
    scene = ParsedScene()
    m = re.search(r"velocity=\((-?\d+\.?\d*), (-?\d+\.?\d*)\)", prompt)
    if m:
        scene.ego_speed = math.hypot(float(m.group(1)), float(m.group(2)))
    m = re.search(r"Road Topology=([^\n]+)", prompt)
    if m:
        scene.road_kind = m.group(1).strip()
    m = re.search(r"Road boundaries: (\d+\.?\d*) m to the left, "
                  r"(\d+\.?\d*) m to the right\. Lane width = (\d+\.?\d*) m\.",
                  prompt)
    if m:
        scene.left_bound = float(m.group(1))
        scene.right_bound = float(m.group(2))
        scene.lane_width = float(m.group(3))

    blocks = re.split(r"\n(?=(?:Participant|Obstacle) ID=)", prompt)
    for block in blocks:
        head = re.match(r"(Participant|Obstacle) ID=([^,]+), type=([^\n.]+)\.?", block)
        if not head:
            continue
        agent = SceneAgent(id=head.group(2).strip(), kind=head.group(3).strip(),
                           fwd=0.0, lat=0.0)
        agent.is_pedestrian = "pedestrian" in agent.kind.lower()
        pos = _POS_RE.search(block)
        if pos:
            if pos.group(1) is not None:
                agent.fwd = float(pos.group(1))
            elif pos.group(2) is not None:
                agent.fwd = -float(pos.group(2))
            if pos.group(3) is not None:
                lat = float(pos.group(3))
                agent.lat = lat if pos.group(4) == "left" else -lat
        move = _MOVE_RE.search(block)
        if move:
            agent.direction = move.group(1).replace("to the ", "")
            agent.speed = float(move.group(2))
        risk = re.search(r"Risk = (\d+\.?\d*)\.", block)
        if risk:
            agent.risk = float(risk.group(1))
        intent = re.search(r"Intention = (\w+)", block)
        if intent:
            agent.intention = intent.group(1)
        depth = _SHAPE_DEPTH_RE.search(block)
        if depth:
            agent.half_depth = float(depth.group(2)) if depth.group(1) != "rectangle" \
                else float(depth.group(2)) / 2.0
        scene.agents.append(agent)
    return scene


def _agent_velocity(agent: SceneAgent) -> tuple[float, float]:
    if agent.direction == "left":
        return (0.0, agent.speed)
    if agent.direction == "right":
        return (0.0, -agent.speed)
    if agent.direction == "forward":
        return (agent.speed, 0.0)
    if agent.direction == "backward":
        return (-agent.speed, 0.0)
    return (0.0, 0.0)


def _path_hazards(scene: ParsedScene) -> list[tuple[float, SceneAgent]]:
    """(ttc, agent) for agents the ego corridor will meet, soonest first."""
    half = scene.lane_width / 2.0 + wd.EGO_WIDTH / 2.0
    out = []
    for agent in scene.agents:
        if agent.fwd <= 0:
            continue
        vx, vy = _agent_velocity(agent)
        closing = scene.ego_speed - vx
        if closing <= wd.TTC_EPS:
            continue
        ttc = agent.fwd / closing
        in_path = abs(agent.lat) <= half
        if not in_path and abs(vy) >= 2.5 and agent.lat * vy < 0:
            entry = (abs(agent.lat) - half) / abs(vy)
            in_path = entry <= ttc + 0.5
        if in_path and ttc <= TRIGGER_TTC_S + HAZARD_WINDOW_GRACE_S:
            out.append((ttc, agent))
    out.sort(key=lambda ta: ta[0])
    return out


def _braking_stops_short(scene: ParsedScene, hazard: SceneAgent) -> bool:
    stop_dist = scene.ego_speed ** 2 / (2.0 * wd.A_MAX_BRAKE)
    reach = stop_dist + FRONT_OVERHANG_M + BRAKE_STANDOFF_M
    return reach <= hazard.fwd - hazard.half_depth


def _pedestrian_sides(scene: ParsedScene) -> set:
    sides = set()
    for agent in scene.agents:
        if agent.is_pedestrian and agent.fwd > 0 and agent.fwd < 30:
            sides.add("left" if agent.lat >= 0 else "right")
    return sides


def _lane_occupied(scene: ParsedScene, side: str) -> bool:
    """Project agents over the maneuver window into the target lane."""
    target = scene.lane_width if side == "left" else -scene.lane_width
    for agent in scene.agents:
        vx, vy = _agent_velocity(agent)
        if agent.intention == "LC":
            vy = max(vy, wd.LATERAL_RAMP)
        elif agent.intention == "RC":
            vy = min(vy, -wd.LATERAL_RAMP)
        steps = int(LANE_OCCUPANCY_WINDOW_S / 0.25) + 1
        for k in range(steps):
            t = 0.25 * k
            lat = agent.lat + vy * t
            fwd = agent.fwd + (vx - scene.ego_speed) * t
            if abs(lat - target) <= scene.lane_width / 2.0 + wd.EGO_WIDTH / 2.0 \
                    and -6.0 <= fwd <= 25.0:
                return True
    return False


def _has_room(scene: ParsedScene, side: str) -> bool:
    bound = scene.left_bound if side == "left" else scene.right_bound
    return bound >= scene.lane_width + wd.EGO_WIDTH / 2.0 + 0.3


def advise_stub(req: AdvisorRequest) -> AdvisorResponse:
    """Deterministic expert rule cascade over the parsed scenario prompt.

    No hazard inside the trigger window: no intervention. Braking that
    stops short of the nearest hazard wins. Otherwise try a lateral escape
    on a side without pedestrians, with room, and with a free target lane,
    braking while steering. Failing that, a crossing threat is answered by
    a drift stop away from the vulnerable side; anything else falls back to
    maximum braking.
    """
    scene = parse_scene(req.scenario_prompt)
    trace: list[str] = []
    hazards = _path_hazards(scene)

    if not hazards:
        trace.append("No path-relevant hazard inside the trigger window.")
        return _respond(Policy.NI, trace)

    ttc, hazard = hazards[0]
    trace.append(f"Nearest hazard {hazard.id} at {hazard.fwd:.1f} m, "
                 f"TTC {ttc:.2f} s.")

    if _braking_stops_short(scene, hazard):
        trace.append("Maximum braking stops short of the hazard.")
        return _respond(Policy.AEB, trace)
    trace.append("Braking alone cannot guarantee stopping short.")

    ped_sides = _pedestrian_sides(scene)
    for side, policy in (("right", Policy.ES_B_R), ("left", Policy.ES_B_L)):
        if side in ped_sides:
            trace.append(f"Pedestrians block the {side} side.")
            continue
        if not _has_room(scene, side):
            trace.append(f"No road room for a {side} lane change.")
            continue
        if _lane_occupied(scene, side):
            trace.append(f"The {side} target lane is or becomes occupied.")
            continue
        trace.append(f"Braking lane change to the {side} is clear.")
        return _respond(policy, trace)

    vx, vy = _agent_velocity(hazard)
    crossing = abs(vy) >= 2.5
    if crossing:
        if "left" in ped_sides and "right" not in ped_sides:
            drift = Policy.T_D_R
        elif "right" in ped_sides and "left" not in ped_sides:
            drift = Policy.T_D_L
        else:
            drift = Policy.T_D_R if hazard.lat >= 0 else Policy.T_D_L
        trace.append("Crossing threat with no lateral escape: drift stop "
                     "away from the vulnerable side.")
        return _respond(drift, trace)

    trace.append("Defaulting to maximum braking.")
    return _respond(Policy.AEB, trace)


def advise_naive(req: AdvisorRequest) -> AdvisorResponse:
    """Naive baseline: grabs a lateral escape without spatial validation."""
    scene = parse_scene(req.scenario_prompt)
    near = [a for a in scene.agents if 0 < a.fwd < 40]
    if not near:
        return _respond(Policy.NI, ["Nothing nearby."])
    nearest = min(near, key=lambda a: a.fwd)
    policy = Policy.AES_R if nearest.lat >= 0 else Policy.AES_L
    return _respond(policy, [f"Agent {nearest.id} ahead; swerving without "
                             "checking room or occupancy."])


def _respond(policy: Policy, trace: Sequence[str]) -> AdvisorResponse:
    rationale = format_answer(policy, "\n".join(f"- {t}" for t in trace))
    return AdvisorResponse(policy=policy, rationale=rationale,
                           latency=0.0, token_count=0)


# --- remote chat-completion client --------------------------------------------

def build_messages(req: AdvisorRequest) -> list[dict]:
    """Provider-neutral chat body; historical cases ride in the user turn."""
    return [
        {"role": "system", "content": req.system_preamble},
        {"role": "user", "content": req.scenario_prompt},
    ]


def advise_remote(req: AdvisorRequest, endpoint: EndpointConfig) -> AdvisorResponse:
    """One chat-completion call bounded by the request deadline.

    Raises AdvisorTimeout past deadline, AdvisorTransportError on transport
    problems, AdvisorParseError when the reply carries no policy id.
    """
    body = {
        "model": endpoint.model,
        "messages": build_messages(req),
        "temperature": endpoint.temperature,
    }
    headers = {"Content-Type": "application/json"}
    api_key = os.environ.get(endpoint.api_key_env)
    if api_key:
        headers["Authorization"] = f"Bearer {api_key}"

    def call():
        with httpx.Client(timeout=req.deadline) as client:
            return client.post(endpoint.url, json=body, headers=headers)

    start = time.monotonic()
    pool = concurrent.futures.ThreadPoolExecutor(max_workers=1)
    try:
        future = pool.submit(call)
        try:
            response = future.result(timeout=req.deadline)
        except concurrent.futures.TimeoutError as exc:
            raise AdvisorTimeout(f"no reply within {req.deadline:.2f} s") from exc
        except httpx.TimeoutException as exc:
            raise AdvisorTimeout(str(exc)) from exc
        except httpx.HTTPError as exc:
            raise AdvisorTransportError(str(exc)) from exc
    finally:
        # Never wait on a straggling worker; its own HTTP timeout (bounded
        # by the same deadline) reclaims it shortly after.
        pool.shutdown(wait=False, cancel_futures=True)
    latency = time.monotonic() - start

    if response.status_code != 200:
        raise AdvisorTransportError(f"HTTP {response.status_code}")
    try:
        payload = response.json()
        text = payload["choices"][0]["message"]["content"]
    except (json.JSONDecodeError, KeyError, IndexError, TypeError) as exc:
        raise AdvisorParseError(f"malformed completion payload: {exc}") from exc
    tokens = payload.get("usage", {}).get("total_tokens")
    if tokens is None:
        tokens = estimate_tokens(text)
    policy = parse_response(text)
    return AdvisorResponse(policy=policy, rationale=text,
                           latency=latency, token_count=int(tokens))


def estimate_tokens(text: str) -> int:
    """Whitespace-token proxy; provider tokenizers run ~1.3x denser."""
    return int(len(text.split()) * 1.3)


def export_finetune_dataset(records: Sequence, path: str | Path,
                            system_preamble: str = SYSTEM_PREAMBLE) -> dict:
    """Chat-format JSONL (one messages array per line) from stored cases.

    Returns a summary with the example count and total token estimate.
    """
    records = list(records)
    if not records:
        raise ValueError("no records to export")
    path = Path(path)
    total_tokens = 0
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            assistant = format_answer(
                record.policy,
                f"Executed policy {int(record.policy)} ({record.policy.name}); "
                f"collision loss {record.outcome.collision_loss:.3f}, "
                f"false-trigger loss {record.outcome.false_trigger_loss:.3f}.")
            example = {"messages": [
                {"role": "system", "content": system_preamble},
                {"role": "user", "content": record.prompt_text},
                {"role": "assistant", "content": assistant},
            ]}
            for message in example["messages"]:
                total_tokens += estimate_tokens(message["content"])
            fh.write(json.dumps(example) + "\n")
    return {"examples": len(records), "token_estimate": total_tokens,
            "path": str(path)}
