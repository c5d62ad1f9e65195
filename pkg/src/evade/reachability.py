"""Grid-based reachability values and risk normalization.

The value V(x) of a state is the discounted worst-case safety margin under
the best available control: one backup is

    B(x, u) = (1 - gamma) * h(x) + gamma * max(h(x), V(f(x, u)))
    V(x)    = min over u of B(x, u)

computed to a fixed point by value iteration over a rectangular grid with
multilinear interpolation of successor values. Successor interpolation
weights depend only on the dynamics, so they are precomputed once and each
sweep reduces to gathers and elementwise arithmetic. Out-of-domain
successors clamp to the boundary. The default state is a 4-D relative
state: forward gap to the obstacle center, lateral offset, ego speed, and
ego heading, with the ego advancing toward the obstacle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import world as wd

GRID_FILE_VERSION = 1

DEFAULT_GAMMA = 0.99
DEFAULT_TOL = 1e-4
DEFAULT_MAX_ITERS = 2000
DEFAULT_DT = 0.05

# 3 steer x 3 accel actions spanning brake/coast/drive and both steer senses.
DEFAULT_ACTIONS = tuple(
    (steer, accel)
    for steer in (-0.3, 0.0, 0.3)
    for accel in (-wd.A_MAX_BRAKE, 0.0, wd.A_DRIVE_MAX)
)

# Axes: forward gap (m), lateral offset (m), ego speed (m/s), ego heading (rad).
DEFAULT_DIMS = (
    (-10.0, 40.0, 26),
    (-12.0, 12.0, 25),
    (0.0, 16.0, 5),
    (-0.6, 0.6, 5),
)


class ConvergenceError(Exception):
    def __init__(self, residual: float, iterations: int):
        super().__init__(
            f"value iteration failed to reach tolerance after {iterations} "
            f"sweeps (final residual {residual:.3e})"
        )
        self.residual = residual
        self.iterations = iterations


@dataclass(frozen=True)
class RiskParams:
    v_min: float
    v_max: float

    def __post_init__(self):
        if not self.v_max > self.v_min:
            raise ValueError("v_max must exceed v_min")


@dataclass(frozen=True)
class GridSpec:
    dims: tuple[tuple[float, float, int], ...] = DEFAULT_DIMS
    gamma: float = DEFAULT_GAMMA
    actions: tuple[tuple[float, float], ...] = DEFAULT_ACTIONS
    dt: float = DEFAULT_DT

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie strictly inside (0, 1)")
        if not self.actions:
            raise ValueError("action set must be non-empty")
        for lo, hi, n in self.dims:
            if hi <= lo or n < 2:
                raise ValueError("each axis needs hi > lo and >= 2 nodes")

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(n for _, _, n in self.dims)

    @property
    def axes(self) -> list[np.ndarray]:
        return [np.linspace(lo, hi, n) for lo, hi, n in self.dims]

    def states(self) -> np.ndarray:
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)


@dataclass
class ReachabilityGrid:
    spec: GridSpec
    values: np.ndarray
    h: np.ndarray
    residuals: list[float] = field(default_factory=list)
    risk_params: Optional[RiskParams] = None
    dynamics: Optional[Callable] = None
    h_fn: Optional[Callable] = None


def bellman_backup(h_x: float, v_next: float, gamma: float) -> float:
    """(1 - gamma) * h + gamma * max(h, v_next)."""
    if not 0.0 < gamma < 1.0:
        raise ValueError("gamma must lie strictly inside (0, 1)")
    return (1.0 - gamma) * h_x + gamma * max(h_x, v_next)


def _interp_weights(spec: GridSpec, points: np.ndarray):
    """Corner indices and weights for multilinear interpolation.

    points: (N, d) clamped into the hull. Returns (idx (N, 2^d) into the
    flat value array, weights (N, 2^d)).
    """
    d = len(spec.dims)
    n_pts = points.shape[0]
    lows = np.array([lo for lo, _, _ in spec.dims])
    highs = np.array([hi for _, hi, _ in spec.dims])
    counts = np.array([n for _, _, n in spec.dims])
    steps = (highs - lows) / (counts - 1)

    clamped = np.clip(points, lows, highs)
    frac = (clamped - lows) / steps
    base = np.clip(np.floor(frac).astype(np.int64), 0, counts - 2)
    rem = frac - base

    strides = np.ones(d, dtype=np.int64)
    for i in range(d - 2, -1, -1):
        strides[i] = strides[i + 1] * counts[i + 1]

    n_corners = 1 << d
    idx = np.empty((n_pts, n_corners), dtype=np.int64)
    w = np.empty((n_pts, n_corners))
    for corner in range(n_corners):
        bits = [(corner >> k) & 1 for k in range(d)]
        offs = np.array(bits, dtype=np.int64)
        idx[:, corner] = ((base + offs) * strides).sum(axis=1)
        weight = np.ones(n_pts)
        for k in range(d):
            weight *= rem[:, k] if bits[k] else (1.0 - rem[:, k])
        w[:, corner] = weight
    return idx, w


def _successor_tables(spec: GridSpec, dynamics: Callable):
    states = spec.states()
    tables = []
    for action in spec.actions:
        nxt = np.asarray(dynamics(states, action, spec.dt), dtype=float)
        tables.append(_interp_weights(spec, nxt))
    return tables


def sweep(values: np.ndarray, h: np.ndarray, gamma: float, tables) -> np.ndarray:
    """One synchronous application of the backup operator to a value field."""
    flat = values.ravel()
    best = None
    for idx, w in tables:
        v_next = (flat[idx] * w).sum(axis=1)
        q = (1.0 - gamma) * h.ravel() + gamma * np.maximum(h.ravel(), v_next)
        best = q if best is None else np.minimum(best, q)
    return best.reshape(values.shape)


def solve(spec: GridSpec, dynamics: Callable, h_fn: Callable,
          tol: float = DEFAULT_TOL, max_iters: int = DEFAULT_MAX_ITERS,
          risk_percentiles: tuple[float, float] = (5.0, 95.0)) -> ReachabilityGrid:
    """Value-iterate to the fixed point of the backup operator.

    dynamics(states (N, d), action, dt) -> (N, d); h_fn(states) -> (N,).
    Raises ConvergenceError when the sup-norm update is still above tol at
    the iteration cap.
    """
    states = spec.states()
    h = np.asarray(h_fn(states), dtype=float).reshape(spec.shape)
    tables = _successor_tables(spec, dynamics)

    values = h.copy()
    residuals: list[float] = []
    for _ in range(max_iters):
        new_values = sweep(values, h, spec.gamma, tables)
        residual = float(np.max(np.abs(new_values - values)))
        residuals.append(residual)
        values = new_values
        if residual < tol:
            break
    else:
        raise ConvergenceError(residuals[-1], max_iters)

    lo, hi = np.percentile(values, risk_percentiles)
    if hi <= lo:
        hi = lo + 1e-6
    return ReachabilityGrid(spec=spec, values=values, h=h,
                            residuals=residuals,
                            risk_params=RiskParams(float(lo), float(hi)),
                            dynamics=dynamics, h_fn=h_fn)


def query_v(grid: ReachabilityGrid, state: Sequence[float],
            return_clamped: bool = False):
    """Multilinear interpolation of V; out-of-hull queries clamp (flagged)."""
    pt = np.asarray(state, dtype=float)[None, :]
    lows = np.array([lo for lo, _, _ in grid.spec.dims])
    highs = np.array([hi for _, hi, _ in grid.spec.dims])
    clamped = bool((pt < lows).any() or (pt > highs).any())
    idx, w = _interp_weights(grid.spec, pt)
    value = float((grid.values.ravel()[idx] * w).sum())
    if return_clamped:
        return value, clamped
    return value


def query_q(grid: ReachabilityGrid, state: Sequence[float],
            action: tuple[float, float]) -> float:
    """One backup from (state, action) through the interpolated successor."""
    if grid.dynamics is None or grid.h_fn is None:
        raise ValueError("grid was loaded without dynamics/h bindings")
    pt = np.asarray(state, dtype=float)[None, :]
    nxt = np.asarray(grid.dynamics(pt, action, grid.spec.dt), dtype=float)
    idx, w = _interp_weights(grid.spec, nxt)
    v_next = float((grid.values.ravel()[idx] * w).sum())
    h_x = float(np.asarray(grid.h_fn(pt))[0])
    return bellman_backup(h_x, v_next, grid.spec.gamma)


def normalize_risk(v: float, p: RiskParams) -> float:
    """Affine map of a reachability value into [0, 1], clamped."""
    r = (v - p.v_min) / (p.v_max - p.v_min)
    return float(min(1.0, max(0.0, r)))


def risk_field(grid: ReachabilityGrid, slice_spec: dict,
               x_range: tuple[float, float] = (-8.0, 20.0),
               y_range: tuple[float, float] = (-10.0, 10.0),
               resolution: int = 61,
               params: Optional[RiskParams] = None):
    """Normalized risk sampled over the position plane of the grid.

    slice_spec fixes the non-plotted axes, e.g. {"speed": 12.0,
    "heading": 0.0}. Returns (X, Y, R) meshgrid arrays.
    """
    p = params or grid.risk_params
    xs = np.linspace(x_range[0], x_range[1], resolution)
    ys = np.linspace(y_range[0], y_range[1], resolution)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    pts = np.stack([
        X.ravel(), Y.ravel(),
        np.full(X.size, slice_spec.get("speed", 0.0)),
        np.full(X.size, slice_spec.get("heading", 0.0)),
    ], axis=-1)
    idx, w = _interp_weights(grid.spec, pts)
    vals = (grid.values.ravel()[idx] * w).sum(axis=1)
    R = np.array([normalize_risk(v, p) for v in vals]).reshape(X.shape)
    return X, Y, R


# --- default relative-state dynamics and obstacle margins --------------------

def relative_dynamics(states: np.ndarray, action: tuple[float, float],
                      dt: float, wheelbase: float = wd.WHEELBASE,
                      v_max: float = 16.0) -> np.ndarray:
    """Ego bicycle motion expressed as obstacle-relative state.

    State: (gap, lat, speed, heading) with the obstacle fixed; the ego's
    advance shrinks the gap and lateral offset.
    """
    steer, accel = action
    gap, lat, speed, heading = states.T
    new = np.empty_like(states)
    new[:, 0] = gap - speed * np.cos(heading) * dt
    new[:, 1] = lat - speed * np.sin(heading) * dt
    new[:, 2] = np.clip(speed + accel * dt, 0.0, v_max)
    new[:, 3] = heading + (speed / wheelbase) * math.tan(steer) * dt
    return new


def obstacle_h_fn(shape: wd.Shape) -> Callable:
    """Vectorized margin of the relative position axes against a shape."""
    def h(states: np.ndarray) -> np.ndarray:
        gap = states[:, 0]
        lat = states[:, 1]
        if isinstance(shape, wd.Circle):
            return shape.radius - np.hypot(gap, lat)
        if isinstance(shape, wd.Ellipse):
            rho = np.hypot(gap / shape.major, lat / shape.minor)
            return min(shape.major, shape.minor) * (1.0 - rho)
        if isinstance(shape, wd.Rectangle):
            ox = np.abs(gap) - shape.length / 2.0
            oy = np.abs(lat) - shape.width / 2.0
            inside = -np.maximum(ox, oy)
            outside = -np.hypot(np.maximum(ox, 0.0), np.maximum(oy, 0.0))
            return np.where((ox <= 0) & (oy <= 0), inside, outside)
        raise TypeError(f"unsupported shape {shape!r}")
    return h


def save_grid(grid: ReachabilityGrid, path: str | Path) -> None:
    """Versioned field file: dims header plus row-major values."""
    dims = np.array(grid.spec.dims, dtype=float)
    actions = np.array(grid.spec.actions, dtype=float)
    np.savez(
        path,
        version=np.array([GRID_FILE_VERSION]),
        dims=dims,
        gamma=np.array([grid.spec.gamma]),
        dt=np.array([grid.spec.dt]),
        actions=actions,
        values=grid.values,
        h=grid.h,
        risk=np.array([grid.risk_params.v_min, grid.risk_params.v_max]),
    )


def load_grid(path: str | Path) -> ReachabilityGrid:
    data = np.load(path)
    version = int(data["version"][0])
    if version != GRID_FILE_VERSION:
        raise ValueError(f"unsupported grid file version {version}")
    dims = tuple((float(lo), float(hi), int(n)) for lo, hi, n in data["dims"])
    spec = GridSpec(dims=dims, gamma=float(data["gamma"][0]),
                    actions=tuple(map(tuple, data["actions"])),
                    dt=float(data["dt"][0]))
    lo, hi = data["risk"]
    return ReachabilityGrid(spec=spec, values=data["values"], h=data["h"],
                            risk_params=RiskParams(float(lo), float(hi)))


class GridCache:
    """Solved grids keyed by obstacle shape, optionally persisted to disk."""

    def __init__(self, cache_dir: Optional[str | Path] = None,
                 spec: Optional[GridSpec] = None):
        self.cache_dir = Path(cache_dir) if cache_dir else None
        self.spec = spec or GridSpec()
        self._grids: dict[str, ReachabilityGrid] = {}

    @staticmethod
    def shape_key(shape: wd.Shape) -> str:
        if isinstance(shape, wd.Circle):
            return f"circle_{shape.radius:g}"
        if isinstance(shape, wd.Ellipse):
            return f"ellipse_{shape.major:g}_{shape.minor:g}"
        if isinstance(shape, wd.Rectangle):
            return f"rect_{shape.length:g}_{shape.width:g}"
        raise TypeError(f"unsupported shape {shape!r}")

    def get(self, shape: wd.Shape) -> ReachabilityGrid:
        key = self.shape_key(shape)
        if key in self._grids:
            return self._grids[key]
        h_fn = obstacle_h_fn(shape)
        if self.cache_dir is not None:
            path = self.cache_dir / f"{key}.npz"
            if path.exists():
                grid = load_grid(path)
                grid.dynamics = relative_dynamics
                grid.h_fn = h_fn
                self._grids[key] = grid
                return grid
        grid = solve(self.spec, relative_dynamics, h_fn)
        if self.cache_dir is not None:
            self.cache_dir.mkdir(parents=True, exist_ok=True)
            save_grid(grid, self.cache_dir / f"{key}.npz")
        self._grids[key] = grid
        return grid


def obstacle_risk(cache: GridCache, obstacle: wd.Obstacle,
                  ego: wd.VehicleState) -> float:
    """Normalized risk of one obstacle at the ego's current relative state."""
    grid = cache.get(obstacle.shape)
    rel_speed = ego.speed - obstacle.velocity[0]
    state = (obstacle.rel_position[0], obstacle.rel_position[1],
             max(0.0, rel_speed), ego.heading)
    return normalize_risk(query_v(grid, state), grid.risk_params)


def fill_risks(obstacles: Sequence[wd.Obstacle], ego: wd.VehicleState,
               cache: GridCache) -> tuple[wd.Obstacle, ...]:
    from dataclasses import replace
    return tuple(replace(ob, risk=obstacle_risk(cache, ob, ego))
                 for ob in obstacles)
