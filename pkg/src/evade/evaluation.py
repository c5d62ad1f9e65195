"""Batch experiment harness: single runs, method variants, aggregation.

Methods:
  saca_stub                       full arbitration, deterministic expert stub
  saca_remote                     full arbitration, remote chat endpoint
  no_finetune_variant             full arbitration, naive unvalidated rules
  no_scenario_awareness_variant   full arbitration, prompts without risk
                                  fields or intention labels
  imitation_variant               no arbitration: a fixed scenario-family
                                  mapping (braking right lane change held at
                                  the demonstration speed) fired on raw
                                  proximity, blind to whether risk exists

Each trial is seeded and fully deterministic; identical spec and seed give
an identical report.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from . import advisor as adv
from . import arbiter as ab
from . import memory as mem
from . import policy as pol
from . import scenario as sc
from . import world as wd
from .configs import ScenarioConfig, load_config
from .metrics import EvaluationReport

METHODS = (
    "saca_stub",
    "saca_remote",
    "no_finetune_variant",
    "no_scenario_awareness_variant",
    "imitation_variant",
)

IMITATION_POLICY = pol.Policy.ES_B_R
IMITATION_TARGET_SPEED = 8.0     # demonstrations keep their cloned speed
IMITATION_TRIGGER_RANGE_M = 20.0  # raw proximity, no path reasoning
INTERSECTION_SPEED_JITTER = 1.0


@dataclass(frozen=True)
class ExperimentSpec:
    config: str
    method: str
    trials: int = 10
    risk_present: bool = True
    seed: int = 0
    latency_s: float = 0.0        # injected advisor latency (simulated)

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be at least 1")
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")


@dataclass
class RunResult:
    policy: pol.Policy
    report: EvaluationReport
    impact: wd.ImpactReport
    engaged: bool
    advisor_calls: int
    advisor_failures: int
    latencies: list[float]
    token_counts: list[int]
    trajectory: list[wd.WorldState]
    log: list[dict]
    violations: list[str] = field(default_factory=list)
    fallback: bool = False


def _advisor_for(method: str, endpoint: Optional[adv.EndpointConfig],
                 latency_s: float):
    if method == "saca_remote":
        if endpoint is None:
            raise ValueError("saca_remote needs an endpoint config")
        return lambda req: adv.advise_remote(req, endpoint)
    base = adv.advise_naive if method == "no_finetune_variant" else adv.advise_stub
    if latency_s <= 0:
        return base
    def delayed(req):
        # Injected latency is simulated, not slept, so runs stay fast and
        # deterministic; past the deadline it behaves as a timeout.
        if latency_s > req.deadline:
            raise adv.AdvisorTimeout(
                f"simulated latency {latency_s:.2f} s exceeds deadline")
        response = base(req)
        return replace(response, latency=latency_s)
    return delayed


def rollout_template(world: wd.WorldState, template: pol.TrajectoryTemplate,
                     dt: float = wd.DEFAULT_DT) -> list[wd.WorldState]:
    """Play a trajectory template while agents keep their scripts."""
    states = [world]
    cur = world
    for i in range(1, len(template.times)):
        new_ego = wd.VehicleState(
            position=(float(template.xs[i]), float(template.ys[i])),
            heading=float(template.headings[i]),
            speed=float(max(0.0, template.speeds[i])),
        )
        cur = wd.step_with_ego(cur, new_ego, dt)
        states.append(cur)
    return states


def run_single(config: ScenarioConfig, method: str = "saca_stub",
               bank: Optional[mem.MemoryBank] = None,
               grid_cache=None,
               advisor: Optional[Callable] = None,
               endpoint: Optional[adv.EndpointConfig] = None,
               intervention_needed: bool = True,
               ego_speed: Optional[float] = None,
               arbiter_config: Optional[ab.ArbiterConfig] = None,
               latency_s: float = 0.0,
               dt: float = wd.DEFAULT_DT,
               forced_policy: Optional[pol.Policy] = None) -> RunResult:
    """Simulate one scenario run under a method and score it.

    forced_policy bypasses arbitration and executes the given policy at the
    trigger instant (used for baseline comparisons such as pure AEB or NI).
    """
    bank = bank if bank is not None else mem.MemoryBank()
    world = config.build_world(ego_speed=ego_speed)
    horizon_steps = int(round(config.horizon_s / dt))

    if method == "imitation_variant":
        return _run_imitation(world, config, dt, horizon_steps,
                              intervention_needed)
    if forced_policy is not None:
        return _run_forced(world, config, dt, horizon_steps,
                           intervention_needed, forced_policy,
                           arbiter_config or ab.ArbiterConfig())

    cfg = arbiter_config or ab.ArbiterConfig()
    awareness = method != "no_scenario_awareness_variant"
    advise = advisor or _advisor_for(method, endpoint, latency_s)
    deps = ab.Deps(bank=bank, advisor=advise, grid_cache=grid_cache,
                   awareness=awareness)
    arb = ab.Arbiter(cfg, deps)

    states = [world]
    action: Optional[pol.Policy] = None
    live_snapshot = None
    engaged = False
    for _ in range(horizon_steps):
        event = arb.tick(states[-1])
        if event.phase != ab.PHASE_IDLE:
            engaged = True
        if event.action is not None:
            action = event.action
            live_snapshot = event.snapshot
            break
        states.append(wd.step(states[-1], dt))

    if action is not None:
        remaining = config.horizon_s - states[-1].time
        template = pol.generate(action, states[-1].ego, config.road,
                                duration=max(pol.TEMPLATE_DURATION_S, remaining),
                                dt=dt)
        states.extend(rollout_template(states[-1], template, dt)[1:])

    impact = wd.detect_impact(states)
    executed = action if action is not None else pol.Policy.NI
    report = ab.evaluate_run(states, impact, intervention_needed, executed)
    if engaged and live_snapshot is not None:
        ab.learn(bank, live_snapshot, executed, report)
    arb.finish(report)

    fallback = any(entry.get("source") == "fallback" for entry in arb.log
                   if entry.get("event") == "trigger")
    return RunResult(policy=executed, report=report, impact=impact,
                     engaged=engaged, advisor_calls=arb.advisor_calls,
                     advisor_failures=arb.advisor_failures,
                     latencies=list(arb.latencies),
                     token_counts=list(arb.token_counts),
                     trajectory=states, log=list(arb.log),
                     violations=list(arb.violations), fallback=fallback)


def _finish_run(states, config, dt, horizon_steps, intervention_needed,
                policy: pol.Policy, engaged: bool, log) -> RunResult:
    impact = wd.detect_impact(states)
    report = ab.evaluate_run(states, impact, intervention_needed, policy)
    return RunResult(policy=policy, report=report, impact=impact,
                     engaged=engaged, advisor_calls=0, advisor_failures=0,
                     latencies=[], token_counts=[], trajectory=states,
                     log=log)


def _run_forced(world, config, dt, horizon_steps, intervention_needed,
                policy: pol.Policy, cfg: ab.ArbiterConfig) -> RunResult:
    """Execute one fixed policy at the nominal trigger TTC."""
    states = [world]
    fired = False
    for _ in range(horizon_steps):
        ttc, _ = sc.hazard_ttc(states[-1].ego, states[-1].participants,
                               states[-1].obstacles, states[-1].road)
        if ttc is not None and ttc <= cfg.t1:
            fired = True
            break
        states.append(wd.step(states[-1], dt))
    executed = policy if fired else pol.Policy.NI
    if fired:
        remaining = config.horizon_s - states[-1].time
        template = pol.generate(policy, states[-1].ego, config.road,
                                duration=max(pol.TEMPLATE_DURATION_S, remaining),
                                dt=dt)
        states.extend(rollout_template(states[-1], template, dt)[1:])
    log = [{"event": "forced", "policy": int(policy), "fired": fired}]
    return _finish_run(states, config, dt, horizon_steps, intervention_needed,
                       executed, fired, log)


def _run_imitation(world, config, dt, horizon_steps,
                   intervention_needed) -> RunResult:
    """Fixed cloned maneuver on raw proximity, without scenario reasoning."""
    states = [world]
    fired = False
    for _ in range(horizon_steps):
        cur = states[-1]
        near = min(
            (math.hypot(*p.rel_position) for p in cur.participants),
            default=math.inf)
        near = min(near, min((math.hypot(*o.rel_position)
                              for o in cur.obstacles), default=math.inf))
        if near <= IMITATION_TRIGGER_RANGE_M:
            fired = True
            break
        states.append(wd.step(states[-1], dt))
    executed = IMITATION_POLICY if fired else pol.Policy.NI
    if fired:
        remaining = config.horizon_s - states[-1].time
        template = pol.generate(IMITATION_POLICY, states[-1].ego, config.road,
                                duration=max(pol.TEMPLATE_DURATION_S, remaining),
                                dt=dt, target_speed=IMITATION_TARGET_SPEED)
        states.extend(rollout_template(states[-1], template, dt)[1:])
    log = [{"event": "imitation", "fired": fired}]
    return _finish_run(states, config, dt, horizon_steps, intervention_needed,
                       executed, fired, log)


def run_experiment(spec: ExperimentSpec, grid_cache=None,
                   endpoint: Optional[adv.EndpointConfig] = None,
                   arbiter_config: Optional[ab.ArbiterConfig] = None,
                   shared_bank: Optional[mem.MemoryBank] = None
                   ) -> tuple[EvaluationReport, list[RunResult]]:
    """Run seeded trials of one method on one scenario and aggregate.

    Trials whose advisor inference missed the deadline window count as
    fallback trials; decision-loss means are taken over the completing
    trials (over everything when a method never consults the advisor).
    """
    base = load_config(spec.config)
    config = base if spec.risk_present else base.without_primary_hazard()
    cfg = arbiter_config or ab.ArbiterConfig()

    results: list[RunResult] = []
    for trial in range(spec.trials):
        rng = np.random.default_rng(spec.seed + trial)
        ego_speed = None
        if base.road.kind == wd.RoadKind.INTERSECTION:
            ego_speed = base.ego.speed + float(
                rng.uniform(-INTERSECTION_SPEED_JITTER, INTERSECTION_SPEED_JITTER))
        bank = shared_bank if shared_bank is not None else mem.MemoryBank()
        result = run_single(config, spec.method, bank=bank,
                            grid_cache=grid_cache, endpoint=endpoint,
                            intervention_needed=spec.risk_present,
                            ego_speed=ego_speed, arbiter_config=cfg,
                            latency_s=spec.latency_s)
        window = cfg.inference_window
        result.fallback = result.fallback or any(
            lat > window for lat in result.latencies) or result.advisor_failures > 0
        results.append(result)

    counted = [r for r in results if not r.fallback] or results
    # The instantaneous stub reports zero latency/tokens; those carry no
    # information, so the latency columns fill only for real (or injected)
    # advisor time.
    latencies = [lat for r in results for lat in r.latencies if lat > 0]
    tokens = [tok for r in results for tok in r.token_counts if tok > 0]
    report = EvaluationReport(
        collision_loss=float(np.mean([r.report.collision_loss for r in counted])),
        false_trigger_loss=float(np.mean([r.report.false_trigger_loss for r in counted])),
        trials=spec.trials,
        fallback_trials=sum(1 for r in results if r.fallback),
        latency_mean_s=float(np.mean(latencies)) if latencies else None,
        latency_min_s=float(np.min(latencies)) if latencies else None,
        tokens_mean=float(np.mean(tokens)) if tokens else None,
    )
    return report, results


def write_report(reports: dict[str, EvaluationReport], out_dir,
                 per_trial: Optional[dict[str, Sequence[RunResult]]] = None,
                 figures: bool = True) -> list[str]:
    """Comparison table (CSV), per-trial series, and comparison figure.

    Rows follow the METHODS enum order; latency columns fill only for
    methods that consulted a remote advisor.
    """
    import csv
    from pathlib import Path

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    table = out / "comparison.csv"
    with open(table, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "collision_loss", "false_trigger_loss",
                         "trials", "fallback_trials",
                         "latency_mean_s", "latency_min_s", "tokens_mean"])
        for method in METHODS:
            if method not in reports:
                continue
            r = reports[method]
            writer.writerow([
                method, f"{r.collision_loss:.4f}", f"{r.false_trigger_loss:.4f}",
                r.trials, r.fallback_trials,
                "" if r.latency_mean_s is None else f"{r.latency_mean_s:.3f}",
                "" if r.latency_min_s is None else f"{r.latency_min_s:.3f}",
                "" if r.tokens_mean is None else f"{r.tokens_mean:.1f}",
            ])
    written.append(str(table))

    if per_trial:
        for method, results in per_trial.items():
            series = out / f"trials_{method}.csv"
            with open(series, "w", newline="", encoding="utf-8") as fh:
                writer = csv.writer(fh)
                writer.writerow(["trial", "policy", "collision_loss",
                                 "false_trigger_loss", "impact_zone",
                                 "rel_speed", "fallback"])
                for i, r in enumerate(results):
                    writer.writerow([
                        i, int(r.policy), f"{r.report.collision_loss:.4f}",
                        f"{r.report.false_trigger_loss:.4f}",
                        r.impact.zone.value, f"{r.impact.rel_speed:.3f}",
                        int(r.fallback),
                    ])
            written.append(str(series))

    if figures:
        from . import plotting
        fig_path = out / "comparison.png"
        plotting.plot_method_comparison(reports, fig_path)
        written.append(str(fig_path))
    return written
