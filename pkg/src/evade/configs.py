"""Scenario config files: schema, loading, and the two shipped scenes.

A config is a YAML document:

    name: <string>                  # identifier used by the CLI
    description: <string>
    horizon_s: <float>              # simulated run length
    primary_hazard: <agent id>      # removed for no-risk (false-trigger) runs
    road:
      kind: intersection | one_way_multilane
      left_bound_m: <float>         # distance from the ego lane center
      right_bound_m: <float>
      lane_width_m: <float>
    ego:
      speed: <float>                # m/s
      position: [x, y]
      heading: <float>              # rad
    obstacles:
      - id: <string>
        shape: {kind: ellipse, major: <m>, minor: <m>}
                # or {kind: circle, radius: <m>}
                # or {kind: rectangle, length: <m>, width: <m>}
        position: [forward_m, left_m]
        velocity: [vx, vy]          # optional, static by default
    participants:
      - id: <string>
        kind: small_car | large_truck | suv | pedestrian
        position: [forward_m, left_m]
        velocity: [vx, vy]
        script: {intention: M|LC|RC|FB|LB|RB, start_s: <float>}

Positions are relative to the ego, x forward and y left.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path
from typing import Optional

import yaml

from . import world as wd

BUILTIN_CONFIGS = ("intersection", "one_way")


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    description: str
    horizon_s: float
    primary_hazard: Optional[str]
    road: wd.RoadTopology
    ego: wd.VehicleState
    obstacles: tuple[wd.Obstacle, ...]
    participants: tuple[wd.ParticipantState, ...]

    def build_world(self, ego_speed: Optional[float] = None) -> wd.WorldState:
        ego = self.ego if ego_speed is None else replace(self.ego, speed=ego_speed)
        return wd.WorldState(time=0.0, ego=ego, road=self.road,
                             participants=self.participants,
                             obstacles=self.obstacles)

    def without_primary_hazard(self) -> "ScenarioConfig":
        """The no-risk protocol: the primary forward hazard is removed."""
        if not self.primary_hazard:
            return self
        return replace(
            self,
            obstacles=tuple(o for o in self.obstacles if o.id != self.primary_hazard),
            participants=tuple(p for p in self.participants
                               if p.id != self.primary_hazard),
            primary_hazard=None,
        )


def _parse_shape(d: dict) -> wd.Shape:
    kind = d.get("kind")
    if kind == "ellipse":
        return wd.Ellipse(float(d["major"]), float(d["minor"]))
    if kind == "circle":
        return wd.Circle(float(d["radius"]))
    if kind == "rectangle":
        return wd.Rectangle(float(d["length"]), float(d["width"]))
    raise ValueError(f"unknown shape kind {kind!r}")


def _parse(doc: dict) -> ScenarioConfig:
    road = wd.RoadTopology(
        kind=wd.RoadKind(doc["road"]["kind"]),
        left_bound_m=float(doc["road"]["left_bound_m"]),
        right_bound_m=float(doc["road"]["right_bound_m"]),
        lane_width_m=float(doc["road"].get("lane_width_m", 3.5)),
    )
    ego_doc = doc.get("ego", {})
    ego = wd.VehicleState(
        position=tuple(ego_doc.get("position", (0.0, 0.0))),
        heading=float(ego_doc.get("heading", 0.0)),
        speed=float(ego_doc.get("speed", 0.0)),
    )
    obstacles = []
    for od in doc.get("obstacles") or ():
        obstacles.append(wd.Obstacle(
            id=od["id"],
            shape=_parse_shape(od["shape"]),
            rel_position=tuple(od["position"]),
            velocity=tuple(od.get("velocity", (0.0, 0.0))),
        ))
    participants = []
    for pd in doc.get("participants") or ():
        velocity = tuple(pd.get("velocity", (0.0, 0.0)))
        script = pd.get("script") or {}
        participants.append(wd.ParticipantState(
            id=pd["id"],
            kind=pd["kind"],
            rel_position=tuple(pd["position"]),
            velocity=velocity,
            script=wd.Script(intention=script.get("intention", "M"),
                             start_s=float(script.get("start_s", 0.0))),
        ))
    return ScenarioConfig(
        name=doc["name"],
        description=doc.get("description", ""),
        horizon_s=float(doc.get("horizon_s", 10.0)),
        primary_hazard=doc.get("primary_hazard"),
        road=road,
        ego=ego,
        obstacles=tuple(obstacles),
        participants=tuple(participants),
    )


def load_config(name_or_path: str | Path) -> ScenarioConfig:
    """Load a named built-in config or a YAML file path."""
    path = Path(name_or_path)
    if path.suffix in (".yaml", ".yml") and path.exists():
        with open(path, encoding="utf-8") as fh:
            return _parse(yaml.safe_load(fh))
    name = str(name_or_path)
    if name in BUILTIN_CONFIGS:
        text = resources.files("evade").joinpath(f"data/{name}.yaml").read_text()
        return _parse(yaml.safe_load(text))
    raise ValueError(f"unknown scenario config {name_or_path!r}; "
                     f"built-ins: {', '.join(BUILTIN_CONFIGS)}")
