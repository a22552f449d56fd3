"""Off-policy SAC on the co-decomposed model.

Twin critics regress the soft Bellman target

    y = r + gamma * (min_j Q_j^target(s', a', g') - alpha * log pi(a'|s'))

with a' freshly sampled from the current actor, and the actor minimizes

    E[ alpha * log pi(a|s) - min_j Q_j(s, a, g) ]

with reparameterized actions a = mu + sigma * eps.  Gradients are
hand-derived; both losses propagate into the shared gating layer (the
actor loss through the action mean and through the Q-side coefficients
at once), while basis critics stay frozen during the actor step.  The
update order per iteration is critic 1, critic 2, actor, EMA.

All randomness flows from one root seed through named substreams, so a
training run is reproducible bit-for-bit.
"""

from __future__ import annotations

import csv
from collections import deque
from dataclasses import dataclass, asdict

import numpy as np

from . import envs, seeding
from .errors import ConfigError, NumericsError, ProtocolError
from .models import (BilinearAC, ModelConfig, actor_mean, actor_param_group,
                     critic_param_group, ema_update, init_model,
                     model_to_dict, sample_action, action_log_prob)
from .numerics import (AdamState, GradTape, adam_step, backward, forward,
                       stack_backward, stack_forward)

UPDATE_STREAM = "update-noise"  # a' draws and reparameterization eps


@dataclass
class Batch:
    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    s2: np.ndarray
    done: np.ndarray
    theta: np.ndarray

    def __len__(self):
        return len(self.r)


class ReplayBuffer:
    """Fixed-capacity FIFO ring with uniform with-replacement sampling."""

    def __init__(self, capacity: int, obs_dim: int = envs.OBS_DIM,
                 act_dim: int = envs.ACT_DIM):
        self.capacity = int(capacity)
        self.s = np.zeros((capacity, obs_dim))
        self.a = np.zeros((capacity, act_dim))
        self.r = np.zeros(capacity)
        self.s2 = np.zeros((capacity, obs_dim))
        self.done = np.zeros(capacity)
        self.theta = np.zeros(capacity)
        self.size = 0
        self.cursor = 0

    def __len__(self):
        return self.size

    def push(self, s, a, r, s2, done, theta):
        i = self.cursor
        self.s[i] = s
        self.a[i] = a
        self.r[i] = r
        self.s2[i] = s2
        self.done[i] = 1.0 if done else 0.0
        self.theta[i] = theta
        self.cursor = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, n: int, rng: np.random.Generator) -> Batch:
        """Uniform sample of n transitions, with replacement (so n may
        exceed the current size); the buffer must be nonempty."""
        if n < 1:
            raise ProtocolError("sample size must be >= 1")
        if self.size == 0:
            raise ProtocolError("cannot sample from an empty buffer")
        idx = rng.integers(0, self.size, size=n)
        return Batch(self.s[idx], self.a[idx], self.r[idx], self.s2[idx],
                     self.done[idx], self.theta[idx])


@dataclass
class TrainConfig:
    gamma: float = 0.99
    alpha: float = 0.05            # entropy temperature, fixed
    tau: float = 0.005
    lr: float = 3e-4
    batch: int = 256
    updates_per_step: int = 1
    warmup_steps: int = 1000
    total_steps: int = 50_000
    eval_every: int = 5000
    buffer_capacity: int = 100_000
    seeds: tuple = (0, 1, 2)
    n_basis: int = 8
    critic_hidden: int = 32
    gating_mode: str = "shared"
    gate_on_full_state: bool = False
    gate_noise_std: float = 0.1
    sigma_floor: float = 1e-3
    entropy_in_target: bool = True   # False -> bare y = r + gamma*min Q
    bootstrap_on_timeout: bool = True

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ConfigError("gamma must be in (0,1)")
        if self.alpha < 0:
            raise ConfigError("alpha must be >= 0")
        if not 0.0 < self.tau <= 1.0:
            raise ConfigError("tau must be in (0,1]")
        if self.lr <= 0:
            raise ConfigError("lr must be > 0")
        self.seeds = tuple(int(s) for s in self.seeds)

    def model_config(self) -> ModelConfig:
        return ModelConfig(n_basis=self.n_basis,
                           critic_hidden=self.critic_hidden,
                           gating_mode=self.gating_mode,
                           gate_on_full_state=self.gate_on_full_state,
                           gate_noise_std=self.gate_noise_std,
                           sigma_floor=self.sigma_floor)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["seeds"] = list(self.seeds)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**d)
        except TypeError as e:
            raise ConfigError(str(e)) from e


# ---------------------------------------------------------------------------
# Forward/backward helpers for the basis critics (hot path).
#
# The (B, K, H) intermediates are ~0.5 MB at the default batch size and
# repeated fresh allocation is the dominant cost on some allocators, so
# each critic owns a small scratch workspace reused across calls.  The
# arrays handed back by _critic_forward are views into that workspace:
# consume them before the next forward pass on the same critic.

def _ws(critic) -> dict:
    return critic.__dict__.setdefault("_scratch", {})


def _ws_buf(ws: dict, key: str, shape) -> np.ndarray:
    buf = ws.get(key)
    if buf is None or buf.shape != shape:
        buf = np.empty(shape)
        ws[key] = buf
    return buf


def _critic_forward(critic, x):
    """Responses psi(s,a) for a batch: returns (resp (B,K), h (B,K,H))."""
    k, hw, i = critic.hidden.weights.shape
    n = len(x)
    ws = _ws(critic)
    z = _ws_buf(ws, "z", (n, k * hw))
    wt = np.ascontiguousarray(critic.hidden.weights.reshape(k * hw, i).T)
    np.matmul(x, wt, out=z)
    h = z.reshape(n, k, hw)
    np.add(h, critic.hidden.bias, out=h)
    np.tanh(h, out=h)
    resp = _ws_buf(ws, "resp", (n, k))
    np.einsum("bkh,kh->bk", h, critic.head.weights[:, 0, :], out=resp)
    resp += critic.head.bias[:, 0]
    return resp, h


def _tanh_backprop(critic, h, dresp):
    """dz of the hidden preactivation, into the critic's workspace."""
    ws = _ws(critic)
    dz = _ws_buf(ws, "dz", h.shape)
    np.multiply(dresp[:, :, None], critic.head.weights[None, :, 0, :], out=dz)
    tmp = _ws_buf(ws, "tmp", h.shape)
    np.multiply(h, h, out=tmp)
    np.subtract(1.0, tmp, out=tmp)
    dz *= tmp
    return dz


def _critic_param_grads(critic, x, h, dresp, tape):
    """Accumulate parameter gradients of sum(dresp * resp)."""
    gh = tape.for_params(critic.head)
    gh.weights[:, 0, :] += np.einsum("bk,bkh->kh", dresp, h)
    gh.bias[:, 0] += dresp.sum(axis=0)
    dz = _tanh_backprop(critic, h, dresp)
    k, hw, i = critic.hidden.weights.shape
    gd = tape.for_params(critic.hidden)
    gd.weights += (dz.reshape(len(x), k * hw).T @ x).reshape(k, hw, i)
    gd.bias += dz.sum(axis=0)


def _critic_input_grad(critic, x, h, dresp):
    """d sum(dresp * resp) / d x, shape (B, obs+act)."""
    dz = _tanh_backprop(critic, h, dresp)
    k, hw, i = critic.hidden.weights.shape
    ws = _ws(critic)
    dx = _ws_buf(ws, "dx", (len(x), i))
    np.matmul(dz.reshape(len(x), k * hw),
              critic.hidden.weights.reshape(k * hw, i), out=dx)
    return dx


def _gate_inputs(model: BilinearAC, s):
    if model.config.gate_on_full_state:
        return s
    return s[:, -model.config.goal_dim:]


def _gate_forward(net, gin):
    return gin @ net.layer.weights.T + net.layer.bias


# ---------------------------------------------------------------------------
# TD target and losses.

def td_target(batch: Batch, model: BilinearAC, cfg: TrainConfig,
              rng: np.random.Generator) -> np.ndarray:
    """Soft Bellman target; uses target critics and the deterministic
    gate (no exploration noise inside targets)."""
    s2 = batch.s2
    gin2 = _gate_inputs(model, s2)
    coeffs_a = _gate_forward(model.actor_gate_net(), gin2)
    mu2 = actor_mean(model.policy_basis, coeffs_a, s2)
    sig2 = forward(model.sigma_head, s2) + model.config.sigma_floor
    a2, logp2 = sample_action(mu2, sig2, rng)
    coeffs_c = _gate_forward(model.gating, gin2)
    x2 = np.concatenate([s2, a2], axis=1)
    q1, _ = _critic_forward(model.targets[0], x2)
    q2, _ = _critic_forward(model.targets[1], x2)
    qmin = np.minimum(np.einsum("bk,bk->b", q1, coeffs_c),
                      np.einsum("bk,bk->b", q2, coeffs_c))
    if cfg.entropy_in_target:
        qmin = qmin - cfg.alpha * logp2
    done = np.zeros_like(batch.done) if cfg.bootstrap_on_timeout else batch.done
    return batch.r + (1.0 - done) * cfg.gamma * qmin


def critic_loss(model: BilinearAC, i: int, s, a, y) -> float:
    """Mean squared Bellman error of critic i (pure evaluation)."""
    gin = _gate_inputs(model, s)
    coeffs = _gate_forward(model.gating, gin)
    x = np.concatenate([s, a], axis=1)
    resp, _ = _critic_forward(model.critics[i], x)
    q = np.einsum("bk,bk->b", resp, coeffs)
    d = q - y
    return float(np.mean(d * d))


def critic_loss_grads(model: BilinearAC, i: int, s, a, y,
                      tape: GradTape) -> float:
    """Critic i loss; gradients for its bases and the shared gating
    layer accumulate into the tape."""
    gin = _gate_inputs(model, s)
    coeffs = _gate_forward(model.gating, gin)
    x = np.concatenate([s, a], axis=1)
    critic = model.critics[i]
    resp, h = _critic_forward(critic, x)
    q = np.einsum("bk,bk->b", resp, coeffs)
    d = q - y
    loss = float(np.mean(d * d))
    dq = (2.0 / len(d)) * d
    dcoeffs = dq[:, None] * resp
    dresp = dq[:, None] * coeffs
    _critic_param_grads(critic, x, h, dresp, tape)
    gg = tape.for_params(model.gating.layer)
    gg.weights += dcoeffs.T @ gin
    gg.bias += dcoeffs.sum(axis=0)
    return loss


def actor_loss(model: BilinearAC, s, eps, alpha: float) -> float:
    """Soft policy loss with fixed reparameterization noise (pure).

    The log-probability is evaluated at the raw Gaussian sample; the
    critics are evaluated at the executed (clamped) action, the only
    region they are ever trained on.
    """
    gin = _gate_inputs(model, s)
    coeffs_a = _gate_forward(model.actor_gate_net(), gin)
    mu = actor_mean(model.policy_basis, coeffs_a, s)
    sig = forward(model.sigma_head, s) + model.config.sigma_floor
    a_raw = mu + sig * eps
    logp = action_log_prob(mu, sig, a_raw)
    coeffs_c = (coeffs_a if model.config.gating_mode == "shared"
                else _gate_forward(model.gating, gin))
    x = np.concatenate([s, np.clip(a_raw, -1.0, 1.0)], axis=1)
    r1, _ = _critic_forward(model.critics[0], x)
    r2, _ = _critic_forward(model.critics[1], x)
    qmin = np.minimum(np.einsum("bk,bk->b", r1, coeffs_c),
                      np.einsum("bk,bk->b", r2, coeffs_c))
    return float(np.mean(alpha * logp - qmin))


def actor_loss_grads(model: BilinearAC, s, eps, alpha: float,
                     tape: GradTape) -> float:
    """Actor loss; gradients for the basis policies, sigma head and the
    actor-side gating layer accumulate into the tape.

    Basis critics are frozen: their parameters receive no gradient, but
    the loss still differentiates through them into the action.  In
    shared mode the single gating layer collects gradient from both the
    action-mean path and the Q-side coefficients.
    """
    shared = model.config.gating_mode == "shared"
    gin = _gate_inputs(model, s)
    gate_net = model.actor_gate_net()
    coeffs_a = _gate_forward(gate_net, gin)
    presp = stack_forward(model.policy_basis, s)          # (B, K, act)
    mu = np.einsum("bk,bko->bo", coeffs_a, presp)
    sig = forward(model.sigma_head, s) + model.config.sigma_floor
    a_raw = mu + sig * eps
    logp = action_log_prob(mu, sig, a_raw)
    coeffs_c = coeffs_a if shared else _gate_forward(model.gating, gin)
    x = np.concatenate([s, np.clip(a_raw, -1.0, 1.0)], axis=1)
    r1, h1 = _critic_forward(model.critics[0], x)
    r2, h2 = _critic_forward(model.critics[1], x)
    q1 = np.einsum("bk,bk->b", r1, coeffs_c)
    q2 = np.einsum("bk,bk->b", r2, coeffs_c)
    qmin = np.minimum(q1, q2)
    n = len(qmin)
    loss = float(np.mean(alpha * logp - qmin))

    # d(-mean Qmin): route each row to its active critic
    take1 = (q1 <= q2).astype(np.float64)
    dq1 = -take1 / n
    dq2 = -(1.0 - take1) / n
    dcoeffs_c = dq1[:, None] * r1 + dq2[:, None] * r2
    da = (_critic_input_grad(model.critics[0], x, h1, dq1[:, None] * coeffs_c)
          + _critic_input_grad(model.critics[1], x, h2, dq2[:, None] * coeffs_c)
          )[:, s.shape[1]:]
    da = da * (np.abs(a_raw) < 1.0)  # exact clamp subgradient

    # a = mu + sig*eps; the entropy term's mu-paths cancel exactly
    dmu = da
    dsig = da * eps - (alpha / n) / sig
    dcoeffs_a = np.einsum("bo,bko->bk", dmu, presp)
    dpresp = np.einsum("bo,bk->bko", dmu, coeffs_a)
    stack_backward(model.policy_basis, s, dpresp, tape)
    backward(model.sigma_head, s, dsig, tape)
    if shared:
        dgate = dcoeffs_a + dcoeffs_c
    else:
        dgate = dcoeffs_a  # the critic-side gate is frozen here
    gg = tape.for_params(gate_net.layer)
    gg.weights += dgate.T @ gin
    gg.bias += dgate.sum(axis=0)
    return loss


def _collect_grads(model: BilinearAC, tape: GradTape, group: str, i: int = 0):
    if group == "actor":
        gnet = model.actor_gate_net()
        objs = [model.policy_basis, model.policy_basis,
                model.sigma_head, model.sigma_head,
                gnet.layer, gnet.layer]
    else:
        c = model.critics[i]
        objs = [c.hidden, c.hidden, c.head, c.head,
                model.gating.layer, model.gating.layer]
    grads = []
    for j, obj in enumerate(objs):
        g = tape.for_params(obj)
        grads.append(g.weights if j % 2 == 0 else g.bias)
    return grads


def critic_update(batch: Batch, model: BilinearAC, cfg: TrainConfig,
                  opts: dict, tape: GradTape,
                  rng: np.random.Generator) -> tuple[float, float]:
    """One Bellman-regression step for each critic (critic 1 first).

    Returns the pre-step losses.  Raises NumericsError on a non-finite
    loss.
    """
    y = td_target(batch, model, cfg, rng)
    losses = []
    for i, key in ((0, "critic1"), (1, "critic2")):
        tape.zero()
        loss = critic_loss_grads(model, i, batch.s, batch.a, y, tape)
        if not np.isfinite(loss):
            raise NumericsError(f"non-finite critic{i + 1} loss")
        names, params = critic_param_group(model, i)
        adam_step(params, _collect_grads(model, tape, "critic", i),
                  opts[key], names)
        losses.append(loss)
    return losses[0], losses[1]


def actor_update(batch: Batch, model: BilinearAC, cfg: TrainConfig,
                 opt: AdamState, tape: GradTape,
                 rng: np.random.Generator) -> float:
    """One soft policy-gradient step; critics frozen."""
    eps = rng.standard_normal(batch.a.shape)
    tape.zero()
    loss = actor_loss_grads(model, batch.s, eps, cfg.alpha, tape)
    if not np.isfinite(loss):
        raise NumericsError("non-finite actor loss")
    names, params = actor_param_group(model)
    adam_step(params, _collect_grads(model, tape, "actor"), opt, names)
    return loss


# ---------------------------------------------------------------------------
# Gradient audit (the `check-grads` command).

def gradient_report(model: BilinearAC, batch: Batch, cfg: TrainConfig,
                    rng: np.random.Generator, h: float = 1e-5) -> dict:
    """Max relative error vs central finite differences, per parameter
    group of the actor loss and both critic losses."""
    from .numerics import check_gradient

    report = {}
    y = td_target(batch, model, cfg, rng)
    tape = GradTape()
    for i in (0, 1):
        tape.zero()
        critic_loss_grads(model, i, batch.s, batch.a, y, tape)
        names, params = critic_param_group(model, i)
        grads = _collect_grads(model, tape, "critic", i)
        f = lambda i=i: critic_loss(model, i, batch.s, batch.a, y)
        for name, p, g in zip(names, params, grads):
            report[f"critic{i + 1}:{name}"] = check_gradient(f, [p], [g], h)
    eps = rng.standard_normal(batch.a.shape)
    tape.zero()
    actor_loss_grads(model, batch.s, eps, cfg.alpha, tape)
    names, params = actor_param_group(model)
    grads = _collect_grads(model, tape, "actor")
    f = lambda: actor_loss(model, batch.s, eps, cfg.alpha)
    for name, p, g in zip(names, params, grads):
        report[f"actor:{name}"] = check_gradient(f, [p], [g], h)
    return report


# ---------------------------------------------------------------------------
# Evaluation, learning curve, training loop.

@dataclass
class EvalResult:
    thetas: np.ndarray
    returns: np.ndarray          # mean per-step reward per direction
    g_corr: float
    episode_logs: list           # one EpisodeLog per direction

    @property
    def mean_return(self) -> float:
        return float(self.returns.mean())


def evaluate(model: BilinearAC, nav: envs.NavConfig,
             thetas=None) -> EvalResult:
    """Deterministic policy (action = clamp(mu), no gate noise), one
    fixed-direction episode per theta."""
    from .rollout import run_episode

    if thetas is None:
        thetas = [t.theta for t in envs.train_directions()]
    rets, logs, actor_rows, critic_rows = [], [], [], []
    for th in thetas:
        log, critic_g = run_episode(model, nav, envs.TaskDescriptor(th))
        rets.append(float(log.reward.mean()))
        logs.append(log)
        actor_rows.append(log.gating)
        critic_rows.append(critic_g)
    if model.config.gating_mode == "shared":
        corr = 1.0
    else:
        from .analysis import g_correlation
        corr = g_correlation(np.concatenate(actor_rows),
                             np.concatenate(critic_rows))
    return EvalResult(np.asarray(thetas, dtype=np.float64),
                      np.array(rets), corr, logs)


def random_baseline(nav: envs.NavConfig, seed: int = 0,
                    thetas=None) -> float:
    """Mean per-step reward of uniform random actions over the training
    directions (the floor that learned policies are compared against)."""
    rng = seeding.stream(seed, "env")
    if thetas is None:
        thetas = [t.theta for t in envs.train_directions()]
    total, steps = 0.0, 0
    for th in thetas:
        task = envs.TaskDescriptor(th)
        state, _ = envs.reset(nav)
        for _ in range(nav.episode_len):
            a = rng.uniform(-1.0, 1.0, size=envs.ACT_DIM)
            state, _, r, _ = envs.step(nav, state, a, task)
            total += r
            steps += 1
    return total / steps


@dataclass
class LearningCurve:
    """Evaluation summary rows: env step, mean return over the eight
    training directions, per-direction returns, actor-critic gating
    correlation."""

    env_step: np.ndarray
    mean_return: np.ndarray
    per_direction: np.ndarray   # (n_evals, 8)
    g_corr: np.ndarray

    def __len__(self):
        return len(self.env_step)

    @property
    def final_mean_return(self) -> float:
        return float(self.mean_return[-1])

    def auc(self) -> float:
        """Area under (env_step, mean_return) by the trapezoid rule."""
        return float(np.trapezoid(self.mean_return, self.env_step))


def write_curve_csv(path, curve: LearningCurve) -> None:
    n_dir = curve.per_direction.shape[1]
    header = (["env_step", "mean_return"]
              + [f"ret_dir_{i}" for i in range(n_dir)] + ["g_corr"])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i in range(len(curve)):
            row = [str(int(curve.env_step[i])),
                   format(curve.mean_return[i], ".9g")]
            row += [format(v, ".9g") for v in curve.per_direction[i]]
            row.append(format(curve.g_corr[i], ".9g"))
            w.writerow(row)


def read_curve_csv(path) -> LearningCurve:
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        n_dir = sum(1 for hcol in header if hcol.startswith("ret_dir_"))
        rows = [[float(x) for x in row] for row in r]
    arr = np.array(rows)
    return LearningCurve(env_step=arr[:, 0].astype(np.int64),
                         mean_return=arr[:, 1],
                         per_direction=arr[:, 2:2 + n_dir],
                         g_corr=arr[:, 2 + n_dir])


@dataclass
class TrainResult:
    seed: int
    config: TrainConfig
    model: BilinearAC
    adam_states: dict
    curve: LearningCurve
    train_windows: dict   # env_step -> EpisodeLog of recent noisy rollout steps
    eval_logs: dict       # env_step -> list of per-direction EpisodeLogs
    update_count: int


def train_single(cfg: TrainConfig, seed: int, out_dir=None,
                 progress=None) -> TrainResult:
    """Train one seed.  Deterministic given (cfg, seed).

    `out_dir`, when given, receives a last-good checkpoint dump if a
    non-finite loss aborts the run.  `progress` is an optional callable
    (env_step, mean_return) invoked at each evaluation point.
    """
    rngs = seeding.streams(seed, seeding.STREAMS + (UPDATE_STREAM,))
    model = init_model(cfg.model_config(), rngs["init"], tau=cfg.tau)
    opts = {"critic1": AdamState(lr=cfg.lr),
            "critic2": AdamState(lr=cfg.lr),
            "actor": AdamState(lr=cfg.lr)}
    buf = ReplayBuffer(cfg.buffer_capacity)
    nav = envs.NavConfig()
    tape = GradTape()

    state, _ = envs.reset(nav)
    window = deque(maxlen=nav.episode_len)
    curve_rows = []
    train_windows, eval_logs = {}, {}
    update_count = 0
    last_good = None

    try:
        for t in range(cfg.total_steps):
            task = envs.schedule_direction(t)
            obs = envs.observe(nav, state, task)
            coeffs = model.actor_coeffs(obs, rngs["gate-noise"])
            if t < cfg.warmup_steps:
                action = rngs["actor-noise"].uniform(-1.0, 1.0, envs.ACT_DIM)
            else:
                mu = actor_mean(model.policy_basis, coeffs, obs)
                action, _ = sample_action(mu, model.sigma(obs),
                                          rngs["actor-noise"])
            new_state, _, r, done = envs.step(nav, state, action, task)
            next_obs = envs.observe(nav, new_state,
                                    envs.schedule_direction(t + 1))
            buf.push(obs, action, r, next_obs, done, task.theta)
            window.append((t, task.theta, new_state.position.copy(),
                           new_state.velocity.copy(), np.array(action),
                           r, coeffs.copy()))
            state = new_state
            if done:
                state, _ = envs.reset(nav)

            if t >= cfg.warmup_steps:
                for _ in range(cfg.updates_per_step):
                    batch = buf.sample(cfg.batch, rngs["buffer-sampling"])
                    critic_update(batch, model, cfg, opts, tape,
                                  rngs[UPDATE_STREAM])
                    actor_update(batch, model, cfg, opts["actor"], tape,
                                 rngs[UPDATE_STREAM])
                    ema_update(model)
                    update_count += 1

            if (t + 1) % cfg.eval_every == 0:
                ev = evaluate(model, nav)
                curve_rows.append((t + 1, ev.mean_return, ev.returns,
                                   ev.g_corr))
                rec = envs.EpisodeRecorder()
                for row in window:
                    rec.add(*row)
                train_windows[t + 1] = rec.finish()
                eval_logs[t + 1] = ev.episode_logs
                last_good = model_to_dict(model, opts, cfg.to_dict())
                if progress is not None:
                    progress(t + 1, ev.mean_return)
    except NumericsError:
        if out_dir is not None and last_good is not None:
            import json
            from pathlib import Path
            with open(Path(out_dir) / "checkpoint-lastgood.json", "w") as fh:
                json.dump(last_good, fh, separators=(",", ":"))
        raise

    curve = LearningCurve(
        env_step=np.array([r[0] for r in curve_rows], dtype=np.int64),
        mean_return=np.array([r[1] for r in curve_rows]),
        per_direction=np.stack([r[2] for r in curve_rows]) if curve_rows
        else np.zeros((0, envs.N_TRAIN_DIRECTIONS)),
        g_corr=np.array([r[3] for r in curve_rows]),
    )
    return TrainResult(seed, cfg, model, opts, curve, train_windows,
                       eval_logs, update_count)
