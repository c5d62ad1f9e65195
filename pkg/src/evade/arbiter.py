"""Preview/cache/trigger arbitration around a pluggable reasoning backend.

One hazard engagement runs: when the hazard TTC first drops below the
preview threshold, risks and intentions are filled, three candidate scenes
are forecast at the trigger horizon, and each is resolved against the
memory bank by similarity band -- above 0.90 the stored policy is cached
directly, between 0.70 and 0.90 it is cached after a rule-based safety
validation (falling through to reasoning when that fails), and below 0.70
the reasoning backend is consulted with the nearest successful case
attached. When the TTC reaches the trigger threshold the live scene is
matched against the cached forecasts: a match above 0.90 executes the
cached policy, anything else executes maximum braking. Afterwards the run
is scored and written back to the memory bank.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

from . import advisor as adv
from . import intention as it
from . import memory as mem
from . import policy as pol
from . import scenario as sc
from . import world as wd
from .metrics import EvaluationReport, injury_rate


@dataclass(frozen=True)
class ArbiterConfig:
    t1: float = 1.3                # trigger TTC, seconds
    t2: float = 5.5                # preview TTC, seconds
    band_hi: float = 0.90
    band_lo: float = 0.70
    match_threshold: float = 0.90

    def __post_init__(self):
        if not 0 < self.t1 < self.t2:
            raise ValueError("need 0 < t1 < t2")
        if not 0 < self.band_lo < self.band_hi <= 1:
            raise ValueError("need 0 < band_lo < band_hi <= 1")

    @property
    def inference_window(self) -> float:
        return self.t2 - self.t1


class Provenance:
    RETRIEVED = "retrieved"
    VALIDATED = "validated"
    REASONED = "reasoned"


@dataclass(frozen=True)
class CachedDecision:
    forecast_vector: sc.ScenarioVector
    policy: pol.Policy
    provenance: str
    created_at: float


@dataclass
class Deps:
    bank: mem.MemoryBank
    advisor: Callable[[adv.AdvisorRequest], adv.AdvisorResponse]
    grid_cache: Optional[object] = None
    transitions: Optional[it.TransitionMatrix] = None
    awareness: bool = True
    system_preamble: str = adv.SYSTEM_PREAMBLE


@dataclass
class TickEvent:
    time: float
    phase: str
    ttc: Optional[float] = None
    hazard_id: Optional[str] = None
    action: Optional[pol.Policy] = None
    snapshot: Optional[sc.ScenarioSnapshot] = None
    match_similarity: Optional[float] = None


PHASE_IDLE = "idle"
PHASE_PRIMED = "primed"
PHASE_EXECUTED = "executed"


class Arbiter:
    """Owns one engagement's state; single-threaded by design."""

    def __init__(self, config: ArbiterConfig, deps: Deps):
        self.config = config
        self.deps = deps
        self.phase = PHASE_IDLE
        self.cache: list[CachedDecision] = []
        self.log: list[dict] = []
        self.advisor_calls = 0
        self.advisor_failures = 0
        self.latencies: list[float] = []
        self.token_counts: list[int] = []
        self.violations: list[str] = []
        self._emitted = 0

    # -- engagement lifecycle -------------------------------------------------

    def tick(self, world: wd.WorldState) -> TickEvent:
        ttc, hazard_id = sc.hazard_ttc(world.ego, world.participants,
                                       world.obstacles, world.road)
        event = TickEvent(time=world.time, phase=self.phase, ttc=ttc,
                          hazard_id=hazard_id)

        if self.phase == PHASE_IDLE and ttc is not None and ttc < self.config.t2:
            self._preview(world, ttc)
            self.phase = PHASE_PRIMED
            event.phase = self.phase

        if self.phase == PHASE_PRIMED and ttc is not None and ttc <= self.config.t1:
            action, snapshot, best = self._trigger(world)
            self.phase = PHASE_EXECUTED
            event.phase = self.phase
            event.action = action
            event.snapshot = snapshot
            event.match_similarity = best
            self._emitted += 1
            if self._emitted != 1:
                self.violations.append("engagement emitted more than one policy")
        return event

    def finish(self, report: EvaluationReport) -> None:
        """Close the engagement after offline evaluation; re-arm."""
        self.log.append({"event": "evaluated",
                         "collision_loss": report.collision_loss,
                         "false_trigger_loss": report.false_trigger_loss})
        self.phase = PHASE_IDLE
        self.cache = []
        self._emitted = 0

    # -- phases ---------------------------------------------------------------

    def _preview(self, world: wd.WorldState, ttc: float) -> None:
        cfg = self.config
        started = time.perf_counter()
        snapshot, rankings = sc.observe(world, self.deps.grid_cache,
                                        self.deps.transitions,
                                        awareness=self.deps.awareness)
        forecasts = sc.forecast(snapshot, cfg.t1, rankings,
                                self.deps.grid_cache, current_ttc=ttc)
        forecast_time = time.perf_counter() - started
        deadline = max(0.1, cfg.inference_window - forecast_time)

        for index, fc in enumerate(forecasts):
            vec = sc.encode(fc)
            nearest = self.deps.bank.retrieve_nearest(vec, k=1)
            best_sim = nearest[0][1] if nearest else 0.0
            entry_log = {"event": "preview", "forecast": index,
                         "similarity": best_sim, "time": world.time}

            if nearest and best_sim > cfg.band_hi:
                self._cache(vec, nearest[0][0].policy, Provenance.RETRIEVED,
                            world.time)
                entry_log["provenance"] = Provenance.RETRIEVED
                entry_log["policy"] = int(nearest[0][0].policy)
                self.log.append(entry_log)
                continue

            if nearest and cfg.band_lo < best_sim <= cfg.band_hi:
                candidate = nearest[0][0].policy
                try:
                    template = pol.generate(candidate, fc.ego, fc.road)
                    result = pol.validate(template, fc)
                except ValueError:
                    result = pol.ValidationResult(False, "ungeneratable")
                if result.passed:
                    self._cache(vec, candidate, Provenance.VALIDATED, world.time)
                    entry_log["provenance"] = Provenance.VALIDATED
                    entry_log["policy"] = int(candidate)
                    self.log.append(entry_log)
                    continue
                entry_log["validation_failed"] = result.reason

            # Reason anew, with the nearest successful case as guidance.
            cases = self.deps.bank.successful_cases(vec, k=1)
            prompt = sc.to_prompt(fc, historical=cases)
            request = adv.AdvisorRequest(
                system_preamble=self.deps.system_preamble,
                scenario_prompt=prompt,
                historical_cases=tuple((r.prompt_text, int(r.policy)) for r, _ in cases),
                deadline=deadline,
            )
            try:
                self.advisor_calls += 1
                response = self.deps.advisor(request)
            except adv.AdvisorFailure as exc:
                self.advisor_failures += 1
                entry_log["advisor_failure"] = type(exc).__name__
                self.log.append(entry_log)
                continue
            self.latencies.append(response.latency)
            self.token_counts.append(response.token_count)
            self._cache(vec, response.policy, Provenance.REASONED, world.time)
            entry_log["provenance"] = Provenance.REASONED
            entry_log["policy"] = int(response.policy)
            self.log.append(entry_log)

    def _cache(self, vec, policy, provenance, created_at) -> None:
        self.cache.append(CachedDecision(forecast_vector=vec, policy=policy,
                                         provenance=provenance,
                                         created_at=created_at))

    def _trigger(self, world: wd.WorldState):
        snapshot, _ = sc.observe(world, self.deps.grid_cache,
                                 self.deps.transitions,
                                 awareness=self.deps.awareness)
        live = sc.encode(snapshot)
        best = 0.0
        chosen: Optional[CachedDecision] = None
        for entry in self.cache:
            s = sc.similarity(live, entry.forecast_vector)
            if s > best:
                best, chosen = s, entry
        if chosen is not None and best > self.config.match_threshold:
            action = chosen.policy
            source = chosen.provenance
        else:
            action = pol.Policy.AEB
            source = "fallback"
        self.log.append({"event": "trigger", "time": world.time,
                         "match_similarity": best, "source": source,
                         "policy": int(action)})
        return action, snapshot, best


def evaluate_run(trajectory: Sequence[wd.WorldState], impact: wd.ImpactReport,
                 intervention_needed: bool, policy: pol.Policy
                 ) -> EvaluationReport:
    """Offline loss scoring of one completed run.

    Collision loss is the contact relative speed times the zone injury
    rate; false-trigger loss charges the policy's severity class when the
    run needed no intervention.
    """
    collision = impact.rel_speed * injury_rate(impact.zone) if impact.occurred else 0.0
    false_trigger = 0.0
    if not intervention_needed and policy != pol.Policy.NI:
        false_trigger = pol.trigger_severity(policy)
    return EvaluationReport(collision_loss=collision,
                            false_trigger_loss=false_trigger)


def learn(bank: mem.MemoryBank, snapshot: sc.ScenarioSnapshot,
          policy: pol.Policy, report: EvaluationReport) -> str:
    """Store the executed scenario and its evaluated outcome."""
    record = mem.MemoryRecord(
        id=bank.next_id(),
        vector=sc.encode(snapshot),
        prompt_text=sc.to_prompt(snapshot),
        policy=policy,
        outcome=replace(report, trials=1),
        created_at=snapshot.timestamp,
    )
    return bank.insert(record)
