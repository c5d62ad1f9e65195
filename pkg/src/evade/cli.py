"""Command-line interface: run scenarios, batch experiments, grid solves,
and fine-tuning dataset export."""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from . import advisor as adv
from . import arbiter as ab
from . import evaluation as ev
from . import memory as mem
from . import reachability as rb
from . import world as wd
from .configs import BUILTIN_CONFIGS, load_config


@click.group()
def main():
    """Scenario-aware collision-avoidance decision engine."""


def _endpoint_from(url, model):
    if not url:
        return None
    return adv.EndpointConfig(url=url, model=model or "advisor-model")


@main.command()
@click.option("--config", "config_name", default="intersection",
              help=f"Built-in name ({', '.join(BUILTIN_CONFIGS)}) or YAML path.")
@click.option("--advisor", "advisor_mode", default="stub",
              type=click.Choice(["stub", "remote"]))
@click.option("--endpoint-url", default=None, help="Chat-completion endpoint.")
@click.option("--model", default=None, help="Remote model name.")
@click.option("--risk-absent", is_flag=True,
              help="Remove the primary hazard (false-trigger protocol).")
@click.option("--seed", default=0, type=int)
@click.option("--grid-cache", "grid_dir", default=None,
              help="Directory for cached reachability grids.")
@click.option("--bank", "bank_path", default=None,
              help="Memory bank JSONL to read and update.")
@click.option("--out", "out_path", default=None,
              help="Write the machine-readable run log here (JSON).")
@click.option("--figures", "fig_dir", default=None,
              help="Render run figures into this directory.")
def run(config_name, advisor_mode, endpoint_url, model, risk_absent, seed,
        grid_dir, bank_path, out_path, fig_dir):
    """Run one scenario and print the decision trace."""
    config = load_config(config_name)
    if risk_absent:
        config = config.without_primary_hazard()
    cache = rb.GridCache(cache_dir=grid_dir)
    bank = mem.MemoryBank(path=bank_path)
    method = "saca_remote" if advisor_mode == "remote" else "saca_stub"
    endpoint = _endpoint_from(endpoint_url, model)

    result = ev.run_single(config, method=method, bank=bank, grid_cache=cache,
                           endpoint=endpoint,
                           intervention_needed=not risk_absent)

    click.echo(f"scenario: {config.name}")
    for entry in result.log:
        click.echo(f"  {json.dumps(entry)}")
    click.echo(f"policy executed: {int(result.policy)} ({result.policy.name})")
    click.echo(f"impact: occurred={result.impact.occurred} "
               f"zone={result.impact.zone.value} "
               f"rel_speed={result.impact.rel_speed:.2f}")
    click.echo(f"collision_loss={result.report.collision_loss:.4f} "
               f"false_trigger_loss={result.report.false_trigger_loss:.4f}")

    if out_path:
        payload = {
            "scenario": config.name,
            "policy": int(result.policy),
            "engaged": result.engaged,
            "advisor_calls": result.advisor_calls,
            "collision_loss": result.report.collision_loss,
            "false_trigger_loss": result.report.false_trigger_loss,
            "impact": {"occurred": result.impact.occurred,
                       "zone": result.impact.zone.value,
                       "rel_speed": result.impact.rel_speed},
            "log": result.log,
            "violations": result.violations,
        }
        Path(out_path).write_text(json.dumps(payload, indent=2))
        click.echo(f"run log written to {out_path}")

    if fig_dir:
        from . import plotting
        out = Path(fig_dir)
        out.mkdir(parents=True, exist_ok=True)
        p = plotting.plot_run(result.trajectory, out / f"run_{config.name}.png",
                              title=f"{config.name}: policy {result.policy.name}")
        click.echo(f"figure written to {p}")
        if config.obstacles:
            grid = cache.get(config.obstacles[0].shape)
            X, Y, R = rb.risk_field(grid, {"speed": config.ego.speed,
                                           "heading": 0.0})
            p = plotting.plot_risk_field(X, Y, R, config.obstacles[0].shape,
                                         out / f"risk_{config.name}.png")
            click.echo(f"figure written to {p}")

    if result.violations:
        click.echo(f"safety violations: {result.violations}", err=True)
        sys.exit(1)


@main.command()
@click.option("--spec", "spec_path", required=True,
              help="Experiment spec YAML (config, methods, trials, seed...).")
@click.option("--out", "out_dir", default="reports",
              help="Directory for the comparison table, series and figures.")
@click.option("--endpoint-url", default=None)
@click.option("--model", default=None)
@click.option("--grid-cache", "grid_dir", default=None)
@click.option("--no-figures", is_flag=True)
def experiment(spec_path, out_dir, endpoint_url, model, grid_dir, no_figures):
    """Run a method-comparison experiment from a spec file."""
    import yaml

    doc = yaml.safe_load(Path(spec_path).read_text())
    methods = doc.get("methods", ["saca_stub"])
    cache = rb.GridCache(cache_dir=grid_dir)
    endpoint = _endpoint_from(endpoint_url, model)

    reports, per_trial = {}, {}
    violations = []
    for method in methods:
        spec = ev.ExperimentSpec(
            config=doc["config"],
            method=method,
            trials=int(doc.get("trials", 10)),
            risk_present=bool(doc.get("risk_present", True)),
            seed=int(doc.get("seed", 0)),
            latency_s=float(doc.get("latency_s", 0.0)),
        )
        report, results = ev.run_experiment(spec, grid_cache=cache,
                                            endpoint=endpoint)
        reports[method] = report
        per_trial[method] = results
        violations += [v for r in results for v in r.violations]
        click.echo(f"{method}: collision={report.collision_loss:.4f} "
                   f"false_trigger={report.false_trigger_loss:.4f} "
                   f"fallback_trials={report.fallback_trials}")

    written = ev.write_report(reports, out_dir, per_trial,
                              figures=not no_figures)
    for path in written:
        click.echo(f"wrote {path}")
    if violations:
        click.echo(f"safety violations: {violations}", err=True)
        sys.exit(1)


@main.command("solve-grid")
@click.option("--shape", "shape_spec", required=True,
              help='e.g. "ellipse:3.5,1.75", "circle:5", "rectangle:4,2".')
@click.option("--cache", "cache_dir", default="grids",
              help="Directory the solved grid is written into.")
def solve_grid(shape_spec, cache_dir):
    """Precompute and cache a reachability grid for an obstacle shape."""
    kind, _, params = shape_spec.partition(":")
    values = [float(x) for x in params.split(",")] if params else []
    if kind == "ellipse":
        shape = wd.Ellipse(*values)
    elif kind == "circle":
        shape = wd.Circle(*values)
    elif kind == "rectangle":
        shape = wd.Rectangle(*values)
    else:
        raise click.BadParameter(f"unknown shape kind {kind!r}")
    cache = rb.GridCache(cache_dir=cache_dir)
    grid = cache.get(shape)
    click.echo(f"solved {rb.GridCache.shape_key(shape)}: "
               f"{len(grid.residuals)} sweeps, "
               f"final residual {grid.residuals[-1]:.2e}, "
               f"cached in {cache_dir}")


@main.command("export-dataset")
@click.option("--bank", "bank_path", required=True,
              help="Memory bank JSONL to export from.")
@click.option("--out", "out_path", default="finetune.jsonl")
def export_dataset(bank_path, out_path):
    """Export stored cases as chat-format fine-tuning examples."""
    bank = mem.MemoryBank(path=bank_path)
    summary = adv.export_finetune_dataset(bank.records(), out_path)
    click.echo(f"wrote {summary['examples']} examples to {summary['path']} "
               f"(~{summary['token_estimate']} tokens)")


if __name__ == "__main__":
    main()
