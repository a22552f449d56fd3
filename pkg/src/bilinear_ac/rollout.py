"""Frozen-parameter rollouts used by evaluation, zero-shot transfer and
latent sweeps.  Nothing here ever writes to model parameters."""

from __future__ import annotations

import numpy as np

from . import envs
from .errors import ProtocolError
from .models import BilinearAC, actor_mean, sample_action


def run_episode(model: BilinearAC, nav: envs.NavConfig, task, steps=None, *,
                coeffs=None, action_rng=None, gate_rng=None, obs_goal=None):
    """One rollout from reset.  Returns (EpisodeLog, critic_coeffs rows).

    task        a TaskDescriptor, or a callable step -> TaskDescriptor
                for mid-episode direction schedules.
    coeffs      fixed gating coefficients; bypasses the gating network
                when given.
    action_rng  sample a ~ N(mu, sigma^2) when given, else the
                deterministic action clamp(mu).
    gate_rng    exploration noise on the gate output when given.
    obs_goal    2-vector written into the observation's goal slice in
                place of the task's unit vector.  Latent sweeps pass
                zeros so that behavior is driven by `coeffs` alone and
                not by the bases' own goal conditioning; rewards still
                score against `task`.
    """
    steps = nav.episode_len if steps is None else int(steps)
    if steps > nav.episode_len:
        raise ProtocolError(
            f"steps {steps} exceeds episode length {nav.episode_len}; "
            "use a NavConfig with a longer episode for continuing runs")
    task_at = task if callable(task) else (lambda _t: task)
    state, _ = envs.reset(nav)
    rec = envs.EpisodeRecorder()
    critic_rows = []
    for t in range(steps):
        tk = task_at(t)
        obs = envs.observe(nav, state, tk)
        if obs_goal is not None:
            obs[envs.GOAL_SLICE] = obs_goal
        ca = coeffs if coeffs is not None else model.actor_coeffs(obs, gate_rng)
        critic_rows.append(model.critic_coeffs(obs))
        mu = actor_mean(model.policy_basis, ca, obs)
        if action_rng is not None:
            action, _ = sample_action(mu, model.sigma(obs), action_rng)
        else:
            action = np.clip(mu, -1.0, 1.0)
        state, _, r, _ = envs.step(nav, state, action, tk)
        rec.add(t, tk.theta, state.position, state.velocity, action, r, ca)
    return rec.finish(), np.stack(critic_rows)
