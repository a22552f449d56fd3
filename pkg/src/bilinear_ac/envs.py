"""Directional navigation on a deterministic point mass.

A 2-D point mass with linear drag is asked to move along a goal
direction theta.  Reward is progress along the goal minus a 0.1 penalty
on orthogonal motion:

    r = dx*cos(theta) + dy*sin(theta) - 0.1*|dx*sin(theta) - dy*cos(theta)|

With drag 0.9 and acceleration gain 0.1 the terminal speed under a
saturated aligned action is exactly v_max = 1.0, so the best possible
per-step reward is 1.0; acceptance thresholds are stated relative to
that oracle.  Episodes last 800 steps and the goal direction cycles
every 100 steps through the eight cardinal/diagonal angles during
training.

The observation is 10-dimensional:
    [tanh(px/100), tanh(py/100), vx, vy, 4 sinusoidal phase features,
     gx, gy]
The phase features are functions of the step index and stand in for
joint state; position is passed through a bounded tanh encoding so that
long straight-line runs (evaluation, adaptation) stay inside the value
range seen while training on cycling directions.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .errors import ProtocolError, ShapeError

TWO_PI = 2.0 * math.pi

# Observation layout
OBS_DIM = 10
POS_SLICE = slice(0, 2)
VEL_SLICE = slice(2, 4)
PHASE_SLICE = slice(4, 8)
GOAL_SLICE = slice(8, 10)
ACT_DIM = 2

N_TRAIN_DIRECTIONS = 8
DIRECTION_PERIOD = 100  # steps before the scheduled direction advances


@dataclass(frozen=True)
class TaskDescriptor:
    """Goal direction theta with its unit vector (cos, sin)."""

    theta: float

    def __post_init__(self):
        if not 0.0 <= self.theta < TWO_PI:
            object.__setattr__(self, "theta", self.theta % TWO_PI)

    @property
    def g(self) -> np.ndarray:
        return np.array([math.cos(self.theta), math.sin(self.theta)])


def train_directions() -> list[TaskDescriptor]:
    """The eight training angles: four cardinal, four diagonal."""
    return [TaskDescriptor(i * math.pi / 4.0) for i in range(N_TRAIN_DIRECTIONS)]


def schedule_direction(global_step: int) -> TaskDescriptor:
    """Training task at a given env step: advances every 100 steps,
    cycling through the eight angles."""
    if global_step < 0:
        raise ValueError("global_step must be >= 0")
    idx = (global_step // DIRECTION_PERIOD) % N_TRAIN_DIRECTIONS
    return TaskDescriptor(idx * math.pi / 4.0)


def reward(delta, theta: float) -> float:
    """Directional progress minus 0.1 times the orthogonal displacement."""
    dx, dy = float(delta[0]), float(delta[1])
    c, s = math.cos(theta), math.sin(theta)
    return dx * c + dy * s - 0.1 * abs(dx * s - dy * c)


@dataclass(frozen=True)
class NavConfig:
    drag: float = 0.9
    accel_gain: float = 0.1
    v_max: float = 1.0
    episode_len: int = 800
    position_scale: float = 100.0
    phase_periods: tuple = (25.0, 160.0)


@dataclass
class EnvState:
    position: np.ndarray
    velocity: np.ndarray
    step_index: int = 0


def observe(cfg: NavConfig, state: EnvState, task: TaskDescriptor) -> np.ndarray:
    """Observation for `state` under the currently active task."""
    obs = np.empty(OBS_DIM)
    obs[POS_SLICE] = np.tanh(state.position / cfg.position_scale)
    obs[VEL_SLICE] = state.velocity
    p1 = TWO_PI * state.step_index / cfg.phase_periods[0]
    p2 = TWO_PI * state.step_index / cfg.phase_periods[1]
    obs[PHASE_SLICE] = (math.sin(p1), math.cos(p1), math.sin(p2), math.cos(p2))
    obs[GOAL_SLICE] = task.g
    return obs


def reset(cfg: NavConfig, seed: int | None = None) -> tuple[EnvState, np.ndarray]:
    """Fresh episode: at the origin, at rest, step index 0.

    The start state is deterministic; `seed` is accepted for interface
    stability.  The returned observation reflects the initial task
    theta = 0.
    """
    state = EnvState(np.zeros(2), np.zeros(2), 0)
    return state, observe(cfg, state, TaskDescriptor(0.0))


def step(cfg: NavConfig, state: EnvState, action, task: TaskDescriptor):
    """Advance one step under `task`.

    Returns (new_state, observation, reward, done).  The observation
    embeds `task`'s goal vector; when the schedule switches direction at
    the next step, re-derive it with `observe`.
    """
    if state.step_index >= cfg.episode_len:
        raise ProtocolError("step() called on a finished episode")
    a = np.asarray(action, dtype=np.float64)
    if a.shape != (ACT_DIM,):
        raise ShapeError(f"action must have shape ({ACT_DIM},)")
    a = np.clip(a, -1.0, 1.0)

    vel = cfg.drag * state.velocity + cfg.accel_gain * a
    speed = float(np.linalg.norm(vel))
    if speed > cfg.v_max:
        vel = vel * (cfg.v_max / speed)
    pos = state.position + vel

    r = reward(vel, task.theta)
    new_state = EnvState(pos, vel, state.step_index + 1)
    done = new_state.step_index == cfg.episode_len
    return new_state, observe(cfg, new_state, task), r, done


@dataclass
class EpisodeLog:
    """Per-step record of a rollout, aligned arrays of equal length."""

    step: np.ndarray
    theta: np.ndarray
    position: np.ndarray  # (N, 2)
    velocity: np.ndarray  # (N, 2)
    action: np.ndarray    # (N, 2)
    reward: np.ndarray
    gating: np.ndarray    # (N, K)

    def __len__(self):
        return len(self.step)


class EpisodeRecorder:
    """Builds an EpisodeLog one step at a time."""

    def __init__(self):
        self.rows = []

    def add(self, step, theta, position, velocity, action, r, gating):
        self.rows.append((int(step), float(theta),
                          np.array(position, dtype=np.float64),
                          np.array(velocity, dtype=np.float64),
                          np.array(action, dtype=np.float64),
                          float(r),
                          np.array(gating, dtype=np.float64)))

    def finish(self) -> EpisodeLog:
        if not self.rows:
            raise ProtocolError("empty episode log")
        cols = list(zip(*self.rows))
        return EpisodeLog(
            step=np.array(cols[0], dtype=np.int64),
            theta=np.array(cols[1]),
            position=np.stack(cols[2]),
            velocity=np.stack(cols[3]),
            action=np.stack(cols[4]),
            reward=np.array(cols[5]),
            gating=np.stack(cols[6]),
        )


def _fmt(x: float) -> str:
    return format(float(x), ".9g")


def write_episode_csv(path, log: EpisodeLog) -> None:
    """Episode log CSV: header then one row per step, floats at 9
    significant digits."""
    k = log.gating.shape[1]
    header = ["step", "theta", "pos_x", "pos_y", "vel_x", "vel_y",
              "a0", "a1", "r"] + [f"G_{i}" for i in range(k)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i in range(len(log)):
            row = [str(int(log.step[i])), _fmt(log.theta[i]),
                   _fmt(log.position[i, 0]), _fmt(log.position[i, 1]),
                   _fmt(log.velocity[i, 0]), _fmt(log.velocity[i, 1]),
                   _fmt(log.action[i, 0]), _fmt(log.action[i, 1]),
                   _fmt(log.reward[i])]
            row += [_fmt(v) for v in log.gating[i]]
            w.writerow(row)


def read_episode_csv(path) -> EpisodeLog:
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        k = sum(1 for h in header if h.startswith("G_"))
        rec = EpisodeRecorder()
        for row in r:
            vals = [float(x) for x in row]
            rec.add(int(vals[0]), vals[1], vals[2:4], vals[4:6],
                    vals[6:8], vals[8], vals[9:9 + k])
    return rec.finish()
