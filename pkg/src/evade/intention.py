"""Motion-intention classification for surrounding vehicles.

Six labels over a fixed order: M (maintain), LC/RC (left/right lane change),
FB (forward braking), LB/RB (left/right braking). A hand-set row-stochastic
transition matrix smooths per-step emission scores and a Viterbi decode
returns the most plausible label sequence; LB<->RB transitions are forbidden
outright. The emission model is a documented piecewise-linear scoring table
over observable kinematics and is pluggable, so a learned scorer can drop in.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

LABELS = ("M", "LC", "RC", "FB", "LB", "RB")
LABEL_INDEX = {name: i for i, name in enumerate(LABELS)}
LONG_NAMES = {
    "M": "Maintain",
    "LC": "Left lane change",
    "RC": "Right lane change",
    "FB": "Forward braking",
    "LB": "Left braking",
    "RB": "Right braking",
}

DEFAULT_WINDOW = 10


class DecodeError(Exception):
    """Raised when every path through the lattice has zero probability."""


@dataclass(frozen=True)
class DrivingFeatures:
    """One body-frame observation of a surrounding vehicle."""

    lateral_velocity: float = 0.0      # m/s, + toward the vehicle's left
    longitudinal_accel: float = 0.0    # m/s^2 along its own axis
    lateral_offset_rate: float = 0.0   # m/s
    heading_rate: float = 0.0          # rad/s

    def __post_init__(self):
        for v in (self.lateral_velocity, self.longitudinal_accel,
                  self.lateral_offset_rate, self.heading_rate):
            if not math.isfinite(v):
                raise ValueError("features must be finite")


@dataclass(frozen=True)
class TransitionMatrix:
    a: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.a, dtype=float)
        if m.shape != (6, 6):
            raise ValueError("transition matrix must be 6x6")
        if (m < 0).any():
            raise ValueError("transition probabilities must be non-negative")
        if not np.allclose(m.sum(axis=1), 1.0, atol=1e-9):
            raise ValueError("rows must sum to 1")
        lb, rb = LABEL_INDEX["LB"], LABEL_INDEX["RB"]
        if m[lb, rb] != 0.0 or m[rb, lb] != 0.0:
            raise ValueError("LB<->RB transitions are forbidden")
        object.__setattr__(self, "a", m)

    @property
    def log(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(self.a)


def default_transitions() -> TransitionMatrix:
    """Expert prior: 0.90 self-persistence, 0.02 on plausible moves.

    LB<->RB flips are impossible; their mass shifts to the M return, making
    Maintain the most plausible exit from a braking-while-steering maneuver.
    """
    m = np.full((6, 6), 0.02)
    np.fill_diagonal(m, 0.90)
    lb, rb = LABEL_INDEX["LB"], LABEL_INDEX["RB"]
    m[lb, rb] = 0.0
    m[rb, lb] = 0.0
    m[lb, LABEL_INDEX["M"]] += 0.02
    m[rb, LABEL_INDEX["M"]] += 0.02
    return TransitionMatrix(m)


def transitions_from_config(rows: Sequence[Sequence[float]]) -> TransitionMatrix:
    return TransitionMatrix(np.asarray(rows, dtype=float))


# Piecewise-linear emission scoring table. Cues are hinge features of the
# observation; each label score is an affine combination of the cues. Scaling
# the whole table by a positive constant leaves the argmax unchanged.
EMISSION_TABLE = {
    "brake_deadzone": 0.5,
    "lateral_deadzone": 0.3,
    "offset_gain": 0.5,
    "heading_gain": 2.0,
    "heading_deadzone": 0.05,
    "weights": {
        # label: (bias, brake_cue, left_cue, right_cue)
        "M": (1.0, -1.0, -1.5, -1.5),
        "LC": (-0.3, -0.8, 2.0, 0.0),
        "RC": (-0.3, -0.8, 0.0, 2.0),
        "FB": (-0.3, 1.5, -1.2, -1.2),
        "LB": (-0.6, 1.2, 1.6, 0.0),
        "RB": (-0.6, 1.2, 0.0, 1.6),
    },
}


def emission_scores(obs: DrivingFeatures, table: Optional[dict] = None) -> np.ndarray:
    """Log-scores per label from the piecewise-linear scoring table."""
    t = table or EMISSION_TABLE
    brake = max(0.0, -obs.longitudinal_accel - t["brake_deadzone"])
    left = (max(0.0, obs.lateral_velocity - t["lateral_deadzone"])
            + t["offset_gain"] * max(0.0, obs.lateral_offset_rate - t["lateral_deadzone"])
            + t["heading_gain"] * max(0.0, obs.heading_rate - t["heading_deadzone"]))
    right = (max(0.0, -obs.lateral_velocity - t["lateral_deadzone"])
             + t["offset_gain"] * max(0.0, -obs.lateral_offset_rate - t["lateral_deadzone"])
             + t["heading_gain"] * max(0.0, -obs.heading_rate - t["heading_deadzone"]))

    scores = np.empty(6)
    for i, label in enumerate(LABELS):
        bias, w_brake, w_left, w_right = t["weights"][label]
        scores[i] = bias + w_brake * brake + w_left * left + w_right * right
    return scores


def _lattice(score_seq: Sequence[np.ndarray], a: TransitionMatrix):
    """Forward max-sum pass; returns (dp, backpointers)."""
    loga = a.log
    T = len(score_seq)
    dp = np.empty((T, 6))
    bp = np.zeros((T, 6), dtype=int)
    dp[0] = np.asarray(score_seq[0], dtype=float)
    for t in range(1, T):
        cand = dp[t - 1][:, None] + loga            # cand[i, j]
        bp[t] = np.argmax(cand, axis=0)             # first max index on ties
        dp[t] = cand[bp[t], np.arange(6)] + np.asarray(score_seq[t], dtype=float)
    return dp, bp


def viterbi_decode(score_seq: Sequence[np.ndarray], a: TransitionMatrix) -> list[str]:
    """Most plausible label sequence; ties break toward the earlier label."""
    if len(score_seq) == 0:
        raise ValueError("score sequence must be non-empty")
    dp, bp = _lattice(score_seq, a)
    last = int(np.argmax(dp[-1]))
    if not np.isfinite(dp[-1][last]):
        raise DecodeError("no feasible path through the transition matrix")
    path = [last]
    for t in range(len(score_seq) - 1, 0, -1):
        path.append(int(bp[t][path[-1]]))
    path.reverse()
    return [LABELS[i] for i in path]


def rank_final_labels(score_seq: Sequence[np.ndarray], a: TransitionMatrix) -> list[str]:
    """Labels ordered by best final-step path score, descending.

    Ties break by label order, so the ranking is deterministic.
    """
    dp, _ = _lattice(score_seq, a)
    order = sorted(range(6), key=lambda i: (-dp[-1][i], i))
    return [LABELS[i] for i in order]


def predict_intention(history: Sequence[DrivingFeatures], a: TransitionMatrix,
                      window: int = DEFAULT_WINDOW,
                      table: Optional[dict] = None) -> tuple[str, float]:
    """Decode the recent window; confidence is the final-step path margin.

    confidence = 1 - exp(-(best - second best)) of the final-step path
    scores, which lands in [0, 1) and collapses toward 0 when two endings
    are nearly equally plausible.
    """
    if len(history) < 1:
        raise ValueError("history must contain at least one observation")
    frames = list(history)[-window:]
    scores = [emission_scores(f, table) for f in frames]
    labels = viterbi_decode(scores, a)
    dp, _ = _lattice(scores, a)
    final = np.sort(dp[-1])[::-1]
    margin = final[0] - final[1]
    confidence = float(1.0 - math.exp(-margin)) if math.isfinite(margin) else 1.0
    return labels[-1], confidence
