"""Loss metrics shared by the arbiter, memory bank and experiment harness."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from .world import ImpactZone

# Injury rate per contact zone; collision loss = relative speed x rate.
INJURY_RATES = {
    ImpactZone.SIDE: 0.41,
    ImpactZone.FRONT: 0.35,
    ImpactZone.REAR: 0.21,
    ImpactZone.NONE: 0.0,
}

# Unneeded interventions cost by severity: moderate maneuvers (policies 0-4)
# 0.5, extreme drifts (5-6) 1.0, non-intervention free.
MODERATE_TRIGGER_COST = 0.5
EXTREME_TRIGGER_COST = 1.0


@dataclass(frozen=True)
class EvaluationReport:
    """Loss outcome of one run, or the mean over an experiment's trials."""

    collision_loss: float
    false_trigger_loss: float
    trials: int = 1
    fallback_trials: int = 0
    latency_mean_s: Optional[float] = None
    latency_min_s: Optional[float] = None
    tokens_mean: Optional[float] = None

    def __post_init__(self):
        if self.collision_loss < 0 or self.false_trigger_loss < 0:
            raise ValueError("losses must be non-negative")


def injury_rate(zone: ImpactZone) -> float:
    return INJURY_RATES[zone]
