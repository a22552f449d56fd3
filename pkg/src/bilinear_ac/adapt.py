"""Zero-shot goal conditioning and online adaptation in gating space.

Zero-shot: condition the frozen model on a new goal vector g* and act
from the single gate forward pass, with no parameter updates anywhere.

Online adaptation: freeze the pretrained bases, bypass the gating
network, and treat the coefficient vector w as the only learnable
object.  With psi(s,a) the basis-critic response vector, the value
estimate is Q = psi(s,a)^T w, the on-policy TD error is

    delta_t = r_t + gamma * psi(s_{t+1}, a_{t+1})^T w - psi(s_t, a_t)^T w

and the semi-gradient rule is

    w <- w + alpha_g * delta_t * psi(s_t, a_t).

The simplified variant drops the bootstrap and current-value terms:
w <- w + alpha_g * r * psi(s_t, a_t).  Both rules feed w straight back
into the policy mean sum_k w_k Y_k(s); adaptation is value-based and
never touches sigma, the bases, or the gating layer.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np

from . import envs
from .errors import ContractViolation, NumericsError, ProtocolError
from .models import BilinearAC, actor_mean, params_checksum, sample_action
from .rollout import run_episode

RULES = ("td_sarsa", "simplified")


@dataclass
class AdaptState:
    w: np.ndarray
    alpha_g: float = 0.01
    gamma: float = 0.99
    rule: str = "td_sarsa"

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=np.float64)
        if self.alpha_g <= 0:
            raise ValueError("alpha_g must be > 0")
        if self.rule not in RULES:
            raise ValueError(f"rule must be one of {RULES}")


def initial_coeffs(model: BilinearAC, theta_old: float,
                   init: str = "gate") -> np.ndarray:
    """Starting w for a task switch: the stale gate output for the
    previous direction (default), or zeros."""
    if init == "zeros":
        return np.zeros(model.config.n_basis)
    if init == "gate":
        nav = envs.NavConfig()
        state, _ = envs.reset(nav)
        obs = envs.observe(nav, state, envs.TaskDescriptor(theta_old))
        return model.actor_coeffs(obs)
    raise ValueError("init must be 'gate' or 'zeros'")


def td_delta(r: float, psi_now, psi_next, w, gamma: float) -> float:
    """One-step TD error of the linear value psi^T w."""
    psi_now = np.asarray(psi_now, dtype=np.float64)
    psi_next = np.asarray(psi_next, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    return float(r + gamma * psi_next @ w - psi_now @ w)


def g_update(state: AdaptState, r: float, psi_now, psi_next) -> np.ndarray:
    """Semi-gradient TD/SARSA step on w; returns the updated w.

    Equals exact gradient descent on 0.5*delta^2 with the bootstrap
    term held constant.
    """
    if state.rule != "td_sarsa":
        raise ProtocolError("g_update requires rule='td_sarsa'")
    delta = td_delta(r, psi_now, psi_next, state.w, state.gamma)
    state.w = state.w + state.alpha_g * delta * np.asarray(psi_now)
    if not np.all(np.isfinite(state.w)):
        raise NumericsError("non-finite w after TD update")
    return state.w


def g_update_simplified(state: AdaptState, r: float, phi_now) -> np.ndarray:
    """Reward-proportional approximation: w <- w + alpha_g * r * phi."""
    if state.rule != "simplified":
        raise ProtocolError("g_update_simplified requires rule='simplified'")
    state.w = state.w + state.alpha_g * r * np.asarray(phi_now)
    if not np.all(np.isfinite(state.w)):
        raise NumericsError("non-finite w after simplified update")
    return state.w


# ---------------------------------------------------------------------------
# Zero-shot evaluation.

def zero_shot_action(model: BilinearAC, g_star, s) -> np.ndarray:
    """Deterministic action for a new goal vector: a single gate pass,
    frozen bases, no sampling."""
    from .models import gate
    inp = s if model.config.gate_on_full_state else np.asarray(g_star)
    coeffs = gate(model.actor_gate_net(), inp)
    return np.clip(actor_mean(model.policy_basis, coeffs, s), -1.0, 1.0)


def zero_shot_episode(model: BilinearAC, theta: float,
                      nav: envs.NavConfig | None = None, steps=None):
    """One frozen episode conditioned on direction theta.

    Asserts that no parameter moved over the whole evaluation; returns
    the EpisodeLog.
    """
    nav = nav or envs.NavConfig()
    before = params_checksum(model, "all")
    log, _ = run_episode(model, nav, envs.TaskDescriptor(theta), steps)
    if params_checksum(model, "all") != before:
        raise ContractViolation("parameters mutated during zero-shot episode")
    return log


# ---------------------------------------------------------------------------
# Online adaptation rollout.

@dataclass
class AdaptResult:
    trace_step: np.ndarray
    trace_theta: np.ndarray
    trace_reward: np.ndarray     # true env reward, even when negated for updates
    trace_delta: np.ndarray      # applied TD error (or r term for simplified)
    trace_w: np.ndarray          # (N, K), w after each update
    episode_log: envs.EpisodeLog
    final_w: np.ndarray


def schedule_from_pairs(pairs) -> callable:
    """[(start_step, theta), ...] -> step -> TaskDescriptor."""
    pairs = sorted((int(s), float(th)) for s, th in pairs)
    if not pairs or pairs[0][0] != 0:
        raise ValueError("schedule must cover step 0")

    def task_at(t: int) -> envs.TaskDescriptor:
        th = pairs[0][1]
        for start, theta in pairs:
            if t >= start:
                th = theta
        return envs.TaskDescriptor(th)

    return task_at


def adapt_online(model: BilinearAC, g_schedule, steps: int,
                 state: AdaptState, *, negate_reward: bool = False,
                 action_rng: np.random.Generator | None = None) -> AdaptResult:
    """Continuing rollout with per-step updates of w, bases frozen.

    The actor mean is sum_k w_k Y_k(s) with the gating network bypassed;
    the exploration sigma head stays active when `action_rng` is given.
    The run is continuing (no episode resets), so the environment is
    built with episode_len = steps.  `negate_reward` feeds -r to the
    update rule (reference condition); the logged reward stays true.
    """
    task_at = g_schedule if callable(g_schedule) else schedule_from_pairs(g_schedule)
    nav = replace(envs.NavConfig(), episode_len=int(steps))
    # adaptation is value-based in w only: not just the bases but every
    # model parameter (sigma head, gating) must stay untouched
    before = params_checksum(model, "all")
    bases_before = params_checksum(model, "bases")
    psi_net = model.critics[0]

    def policy(obs):
        mu = actor_mean(model.policy_basis, state.w, obs)
        if action_rng is not None:
            a, _ = sample_action(mu, model.sigma(obs), action_rng)
            return a
        return np.clip(mu, -1.0, 1.0)

    env_state, _ = envs.reset(nav)
    obs = envs.observe(nav, env_state, task_at(0))
    action = policy(obs)
    rec = envs.EpisodeRecorder()
    rows = []
    for t in range(int(steps)):
        task = task_at(t)
        env_state, _, r, _ = envs.step(nav, env_state, action, task)
        obs_next = envs.observe(nav, env_state, task_at(t + 1))
        action_next = policy(obs_next)         # on-policy: sampled pre-update
        psi_now = psi_net.responses(obs, action)
        r_upd = -r if negate_reward else r
        if state.rule == "td_sarsa":
            psi_next = psi_net.responses(obs_next, action_next)
            delta = td_delta(r_upd, psi_now, psi_next, state.w, state.gamma)
            g_update(state, r_upd, psi_now, psi_next)
        else:
            delta = r_upd
            g_update_simplified(state, r_upd, psi_now)
        rec.add(t, task.theta, env_state.position, env_state.velocity,
                action, r, state.w)
        rows.append((t, task.theta, r, delta, state.w.copy()))
        obs, action = obs_next, action_next

    if params_checksum(model, "bases") != bases_before:
        raise ContractViolation("frozen bases mutated during adaptation")
    if params_checksum(model, "all") != before:
        raise ContractViolation("model parameters mutated during adaptation")
    return AdaptResult(
        trace_step=np.array([x[0] for x in rows], dtype=np.int64),
        trace_theta=np.array([x[1] for x in rows]),
        trace_reward=np.array([x[2] for x in rows]),
        trace_delta=np.array([x[3] for x in rows]),
        trace_w=np.stack([x[4] for x in rows]),
        episode_log=rec.finish(),
        final_w=state.w.copy(),
    )


def write_trace_csv(path, result: AdaptResult) -> None:
    """Adaptation trace: step, theta, r, delta, w_0..w_{K-1}."""
    k = result.trace_w.shape[1]
    header = ["step", "theta", "r", "delta"] + [f"w_{i}" for i in range(k)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i in range(len(result.trace_step)):
            row = [str(int(result.trace_step[i])),
                   format(result.trace_theta[i], ".9g"),
                   format(result.trace_reward[i], ".9g"),
                   format(result.trace_delta[i], ".9g")]
            row += [format(v, ".9g") for v in result.trace_w[i]]
            w.writerow(row)


def write_reward_series_csv(path, result: AdaptResult) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "r"])
        for i in range(len(result.trace_step)):
            w.writerow([str(int(result.trace_step[i])),
                        format(result.trace_reward[i], ".9g")])
