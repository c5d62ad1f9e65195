"""Figure rendering for reports: risk fields, run trajectories, comparisons."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from . import world as wd


def plot_risk_field(X, Y, R, shape=None, path: str | Path = "risk_field.png"):
    """Heatmap of the normalized risk over the position plane."""
    fig, ax = plt.subplots(figsize=(7, 5))
    pc = ax.pcolormesh(X, Y, R, shading="auto", cmap="inferno", vmin=0, vmax=1)
    fig.colorbar(pc, ax=ax, label="normalized risk")
    if shape is not None:
        theta = np.linspace(0, 2 * np.pi, 200)
        if isinstance(shape, wd.Ellipse):
            ax.plot(shape.major * np.cos(theta), shape.minor * np.sin(theta),
                    "c-", lw=1.5, label="obstacle boundary")
        elif isinstance(shape, wd.Circle):
            ax.plot(shape.radius * np.cos(theta), shape.radius * np.sin(theta),
                    "c-", lw=1.5, label="obstacle boundary")
        ax.legend(loc="upper right")
    ax.set_xlabel("forward gap (m)")
    ax.set_ylabel("lateral offset (m)")
    ax.set_title("Reachability risk field")
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return str(path)


def plot_run(trajectory, path: str | Path = "run.png", title: str = "run"):
    """Top-down paths of the ego and every agent over one run."""
    fig, ax = plt.subplots(figsize=(8, 5))
    ego_xy = np.array([s.ego.position for s in trajectory])
    ax.plot(ego_xy[:, 0], ego_xy[:, 1], "b-", lw=2, label="ego")
    ids = {p.id for s in trajectory for p in s.participants}
    for pid in sorted(ids):
        pts = []
        for s in trajectory:
            for p in s.participants:
                if p.id == pid:
                    pts.append((s.ego.position[0] + p.rel_position[0],
                                s.ego.position[1] + p.rel_position[1]))
        pts = np.array(pts)
        ax.plot(pts[:, 0], pts[:, 1], "--", lw=1.2, label=pid)
    last = trajectory[-1]
    for ob in last.obstacles:
        cx = last.ego.position[0] + ob.rel_position[0]
        cy = last.ego.position[1] + ob.rel_position[1]
        theta = np.linspace(0, 2 * np.pi, 100)
        if isinstance(ob.shape, wd.Ellipse):
            ax.plot(cx + ob.shape.major * np.cos(theta),
                    cy + ob.shape.minor * np.sin(theta), "r-", lw=1)
        elif isinstance(ob.shape, wd.Circle):
            ax.plot(cx + ob.shape.radius * np.cos(theta),
                    cy + ob.shape.radius * np.sin(theta), "r-", lw=1)
        else:
            corners = wd.rect_corners(cx, cy, 0.0, ob.shape.length, ob.shape.width)
            closed = np.vstack([corners, corners[:1]])
            ax.plot(closed[:, 0], closed[:, 1], "r-", lw=1)
    ax.set_aspect("equal", adjustable="datalim")
    ax.set_xlabel("x (m)")
    ax.set_ylabel("y (m)")
    ax.set_title(title)
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return str(path)


def plot_method_comparison(reports: dict, path: str | Path = "comparison.png"):
    """Grouped bars of collision and false-trigger loss per method."""
    methods = list(reports.keys())
    collision = [reports[m].collision_loss for m in methods]
    false_trigger = [reports[m].false_trigger_loss for m in methods]
    x = np.arange(len(methods))
    fig, ax = plt.subplots(figsize=(8, 4.5))
    ax.bar(x - 0.18, collision, width=0.36, label="collision loss")
    ax.bar(x + 0.18, false_trigger, width=0.36, label="false-trigger loss")
    ax.set_xticks(x)
    ax.set_xticklabels(methods, rotation=20, ha="right", fontsize=8)
    ax.set_ylabel("loss")
    ax.set_title("Method comparison")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return str(path)
