"""Bilinear co-decomposed actor and critic.

One low-dimensional gating vector G, produced by a small linear layer
from the goal vector, multiplicatively combines K basis components on
both sides:

    action mean   mu(s, g) = sum_k G_k(g) * Y_k(s)
    value         Q(s, a, g) = sum_k G_k(g) * psi_k(s, a)

Both maps are linear in G for fixed bases and linear in the bases for
fixed G.  In shared mode the actor and both critics read the same
gating layer; in independent mode the actor owns a second one.  Basis
policies Y_k are single linear layers; basis critics have one tanh
hidden layer and a scalar head.  The stochastic policy is a diagonal
Gaussian around mu with a state-dependent softplus sigma head.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import dataclass, asdict

import numpy as np

from . import envs
from .errors import ShapeError
from .numerics import (AdamState, DenseLayer, LayerStack, forward,
                       init_layer, init_stack, stack_forward)

GATING_MODES = ("shared", "independent")

LOG_TWO_PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class ModelConfig:
    obs_dim: int = envs.OBS_DIM
    act_dim: int = envs.ACT_DIM
    goal_dim: int = 2
    n_basis: int = 8              # K, the gating dimension
    critic_hidden: int = 32
    gating_mode: str = "shared"
    gate_on_full_state: bool = False
    gate_noise_std: float = 0.1   # exploration noise on G during rollouts
    sigma_floor: float = 1e-3

    def __post_init__(self):
        if self.gating_mode not in GATING_MODES:
            raise ValueError(f"gating_mode must be one of {GATING_MODES}")
        if not 1 <= self.n_basis <= 64:
            raise ValueError("n_basis must be in [1, 64]")

    @property
    def gate_in_dim(self) -> int:
        return self.obs_dim if self.gate_on_full_state else self.goal_dim


@dataclass
class GatingNet:
    """Linear map from the goal (or full observation) to the K gating
    coefficients, with optional Gaussian exploration noise."""

    layer: DenseLayer
    noise_std: float = 0.0

    def __post_init__(self):
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")


def gate(net: GatingNet, inp, rng: np.random.Generator | None = None) -> np.ndarray:
    """Gating coefficients for one input vector.

    Noise N(0, noise_std^2) is added per component iff `rng` is given;
    without it the output is the deterministic linear map.
    """
    g = forward(net.layer, np.asarray(inp, dtype=np.float64))
    if rng is not None:
        g = g + net.noise_std * rng.standard_normal(g.shape[-1])
    return g


def actor_mean(basis: LayerStack, coeffs, s) -> np.ndarray:
    """Gated combination of the basis policies: sum_k G_k * Y_k(s)."""
    coeffs = np.asarray(coeffs, dtype=np.float64)
    if coeffs.shape[-1] != basis.n_layers:
        raise ShapeError(
            f"gating length {coeffs.shape[-1]} != n_basis {basis.n_layers}")
    resp = stack_forward(basis, s)  # (K, act) or (B, K, act)
    if resp.ndim == 2:
        return np.einsum("k,ko->o", coeffs, resp)
    return np.einsum("bk,bko->bo", coeffs, resp)


@dataclass
class BilinearCritic:
    """K basis value heads psi_k(s, a), each tanh-hidden then linear."""

    hidden: LayerStack  # (K, H, obs+act), tanh
    head: LayerStack    # (K, 1, H), identity

    def responses(self, s, a) -> np.ndarray:
        """Basis response vector psi(s, a): (K,) or (B, K)."""
        s = np.asarray(s, dtype=np.float64)
        a = np.asarray(a, dtype=np.float64)
        x = np.concatenate([s, a], axis=-1)
        h = stack_forward(self.hidden, x)          # (..., K, H)
        w = self.head.weights[:, 0, :]             # (K, H)
        b = self.head.bias[:, 0]                   # (K,)
        if h.ndim == 2:
            return np.einsum("kh,kh->k", h, w) + b
        return np.einsum("bkh,kh->bk", h, w) + b


def critic_value(critic: BilinearCritic, coeffs, s, a):
    """Q(s, a, g) = sum_k G_k * psi_k(s, a): scalar or (B,)."""
    coeffs = np.asarray(coeffs, dtype=np.float64)
    resp = critic.responses(s, a)
    if coeffs.shape[-1] != resp.shape[-1]:
        raise ShapeError(
            f"gating length {coeffs.shape[-1]} != n_basis {resp.shape[-1]}")
    if resp.ndim == 1:
        return float(resp @ coeffs)
    return np.einsum("bk,bk->b", resp, coeffs)


def action_log_prob(mu, sigma, a_raw):
    """Diagonal Gaussian log density of the pre-clamp action."""
    mu = np.asarray(mu, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    a_raw = np.asarray(a_raw, dtype=np.float64)
    z = (a_raw - mu) / sigma
    terms = -0.5 * LOG_TWO_PI - np.log(sigma) - 0.5 * z * z
    return terms.sum(axis=-1)


def sample_action(mu, sigma, rng: np.random.Generator):
    """Sample a ~ N(mu, sigma^2), clamp to [-1, 1].

    The log-probability is evaluated at the pre-clamp sample.  Works on
    vectors and on (B, act) batches.
    """
    mu = np.asarray(mu, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    eps = rng.standard_normal(mu.shape)
    a_raw = mu + sigma * eps
    logp = action_log_prob(mu, sigma, a_raw)
    return np.clip(a_raw, -1.0, 1.0), logp


@dataclass
class ActorOutput:
    mu: np.ndarray
    sigma: np.ndarray
    coeffs: np.ndarray


@dataclass
class BilinearAC:
    """The full co-decomposed model: gate(s), bases, sigma head, twin
    critics and their EMA targets."""

    config: ModelConfig
    gating: GatingNet                 # used by both critics (and the actor in shared mode)
    actor_gating: GatingNet | None    # independent mode only
    policy_basis: LayerStack          # (K, act, obs), identity
    sigma_head: DenseLayer            # (act, obs), softplus
    critics: list                     # [BilinearCritic, BilinearCritic]
    targets: list                     # EMA copies of `critics`
    tau: float = 0.005

    def gate_input(self, obs) -> np.ndarray:
        obs = np.asarray(obs, dtype=np.float64)
        if self.config.gate_on_full_state:
            return obs
        return obs[..., -self.config.goal_dim:]  # goal occupies the last dims

    def actor_gate_net(self) -> GatingNet:
        if self.config.gating_mode == "independent":
            return self.actor_gating
        return self.gating

    def actor_coeffs(self, obs, rng=None) -> np.ndarray:
        return gate(self.actor_gate_net(), self.gate_input(obs), rng)

    def critic_coeffs(self, obs) -> np.ndarray:
        return gate(self.gating, self.gate_input(obs))

    def sigma(self, obs) -> np.ndarray:
        return forward(self.sigma_head, obs) + self.config.sigma_floor

    def actor_output(self, obs, rng=None) -> ActorOutput:
        coeffs = self.actor_coeffs(obs, rng)
        return ActorOutput(mu=actor_mean(self.policy_basis, coeffs, obs),
                           sigma=self.sigma(obs),
                           coeffs=coeffs)


def init_model(config: ModelConfig, rng: np.random.Generator,
               tau: float = 0.005) -> BilinearAC:
    """Fresh model.  All layers use uniform(+-1/sqrt(fan_in)); the gating
    bias starts at 1/K so the initial action mean is a near-uniform
    blend of the bases."""
    k = config.n_basis
    gating = GatingNet(init_layer(rng, k, config.gate_in_dim),
                       noise_std=config.gate_noise_std)
    gating.layer.bias[:] = 1.0 / k
    actor_gating = None
    if config.gating_mode == "independent":
        actor_gating = GatingNet(init_layer(rng, k, config.gate_in_dim),
                                 noise_std=config.gate_noise_std)
        actor_gating.layer.bias[:] = 1.0 / k
    policy_basis = init_stack(rng, k, config.act_dim, config.obs_dim)
    sigma_head = init_layer(rng, config.act_dim, config.obs_dim, "softplus")
    critics = []
    for _ in range(2):
        hidden = init_stack(rng, k, config.critic_hidden,
                            config.obs_dim + config.act_dim, "tanh")
        head = init_stack(rng, k, 1, config.critic_hidden)
        critics.append(BilinearCritic(hidden, head))
    targets = [copy.deepcopy(c) for c in critics]
    return BilinearAC(config, gating, actor_gating, policy_basis,
                      sigma_head, critics, targets, tau)


def ema_update(model: BilinearAC) -> None:
    """target <- tau * online + (1 - tau) * target, elementwise, both
    critics."""
    tau = model.tau
    if not 0.0 < tau <= 1.0:
        raise ValueError("tau must be in (0, 1]")
    for online, target in zip(model.critics, model.targets):
        for o, t in ((online.hidden.weights, target.hidden.weights),
                     (online.hidden.bias, target.hidden.bias),
                     (online.head.weights, target.head.weights),
                     (online.head.bias, target.head.bias)):
            t *= 1.0 - tau
            t += tau * o


# ---------------------------------------------------------------------------
# Parameter bookkeeping: named groups per loss, checksums, checkpoints.

def actor_param_group(model: BilinearAC):
    """(names, arrays) trained by the actor loss."""
    names = ["policy_basis.weights", "policy_basis.bias",
             "sigma_head.weights", "sigma_head.bias"]
    params = [model.policy_basis.weights, model.policy_basis.bias,
              model.sigma_head.weights, model.sigma_head.bias]
    gnet = model.actor_gate_net()
    prefix = ("actor_gating" if model.config.gating_mode == "independent"
              else "gating")
    names += [f"{prefix}.weights", f"{prefix}.bias"]
    params += [gnet.layer.weights, gnet.layer.bias]
    return names, params


def critic_param_group(model: BilinearAC, i: int):
    """(names, arrays) trained by critic i's Bellman loss (includes the
    shared gating layer)."""
    c = model.critics[i]
    names = [f"critics[{i}].hidden.weights", f"critics[{i}].hidden.bias",
             f"critics[{i}].head.weights", f"critics[{i}].head.bias",
             "gating.weights", "gating.bias"]
    params = [c.hidden.weights, c.hidden.bias, c.head.weights, c.head.bias,
              model.gating.layer.weights, model.gating.layer.bias]
    return names, params


def _named_arrays(model: BilinearAC, which: str):
    if which not in ("all", "bases"):
        raise ValueError("which must be 'all' or 'bases'")
    items = []
    if which == "all":
        items.append(("gating.weights", model.gating.layer.weights))
        items.append(("gating.bias", model.gating.layer.bias))
        if model.actor_gating is not None:
            items.append(("actor_gating.weights", model.actor_gating.layer.weights))
            items.append(("actor_gating.bias", model.actor_gating.layer.bias))
        items.append(("sigma_head.weights", model.sigma_head.weights))
        items.append(("sigma_head.bias", model.sigma_head.bias))
    items.append(("policy_basis.weights", model.policy_basis.weights))
    items.append(("policy_basis.bias", model.policy_basis.bias))
    groups = [("critics", model.critics)]
    if which == "all":
        groups.append(("targets", model.targets))
    for label, group in groups:
        for i, c in enumerate(group):
            items.append((f"{label}[{i}].hidden.weights", c.hidden.weights))
            items.append((f"{label}[{i}].hidden.bias", c.hidden.bias))
            items.append((f"{label}[{i}].head.weights", c.head.weights))
            items.append((f"{label}[{i}].head.bias", c.head.bias))
    return items


def params_checksum(model: BilinearAC, which: str = "all") -> str:
    """SHA-256 over the named parameter arrays.

    which="all" covers every parameter incl. targets; which="bases"
    covers only the frozen bases (policy basis Y and both critics' psi).
    """
    h = hashlib.sha256()
    for name, arr in _named_arrays(model, which):
        h.update(name.encode())
        h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()


def _layer_dict(layer: DenseLayer) -> dict:
    return {"weights": layer.weights.tolist(), "bias": layer.bias.tolist(),
            "activation": layer.activation}


def _layer_from(d: dict) -> DenseLayer:
    return DenseLayer(np.array(d["weights"], dtype=np.float64),
                      np.array(d["bias"], dtype=np.float64),
                      d["activation"])


def _stack_dict(stack: LayerStack) -> dict:
    return {"weights": stack.weights.tolist(), "bias": stack.bias.tolist(),
            "activation": stack.activation}


def _stack_from(d: dict) -> LayerStack:
    return LayerStack(np.array(d["weights"], dtype=np.float64),
                      np.array(d["bias"], dtype=np.float64),
                      d["activation"])


def _critic_dict(c: BilinearCritic) -> dict:
    return {"hidden": _stack_dict(c.hidden), "head": _stack_dict(c.head)}


def _critic_from(d: dict) -> BilinearCritic:
    return BilinearCritic(_stack_from(d["hidden"]), _stack_from(d["head"]))


def _adam_dict(state: AdamState) -> dict:
    return {"lr": state.lr, "beta1": state.beta1, "beta2": state.beta2,
            "eps": state.eps, "step_count": state.step_count,
            "m": [a.tolist() for a in state.m],
            "v": [a.tolist() for a in state.v]}


def _adam_from(d: dict) -> AdamState:
    st = AdamState(lr=d["lr"], beta1=d["beta1"], beta2=d["beta2"],
                   eps=d["eps"], step_count=d["step_count"])
    st.m = [np.array(a, dtype=np.float64) for a in d["m"]]
    st.v = [np.array(a, dtype=np.float64) for a in d["v"]]
    return st


def model_to_dict(model: BilinearAC, adam_states: dict | None = None,
                  extra_config: dict | None = None) -> dict:
    cfg = asdict(model.config)
    cfg["phase_space"] = "float64"
    if extra_config:
        cfg["train"] = extra_config
    doc = {
        "format": "bilinear-ac-checkpoint-v1",
        "config": cfg,
        "tau": model.tau,
        "gating": {**_layer_dict(model.gating.layer),
                   "noise_std": model.gating.noise_std},
        "actor_gating": None,
        "basis_policies": _stack_dict(model.policy_basis),
        "sigma_head": _layer_dict(model.sigma_head),
        "critics": [_critic_dict(c) for c in model.critics],
        "targets": [_critic_dict(c) for c in model.targets],
        "adam_states": None,
    }
    if model.actor_gating is not None:
        doc["actor_gating"] = {**_layer_dict(model.actor_gating.layer),
                               "noise_std": model.actor_gating.noise_std}
    if adam_states is not None:
        doc["adam_states"] = {k: _adam_dict(v) for k, v in adam_states.items()}
    return doc


def model_from_dict(doc: dict):
    """Rebuild (model, adam_states or None) from a checkpoint document."""
    cfg = dict(doc["config"])
    cfg.pop("phase_space", None)
    cfg.pop("train", None)
    config = ModelConfig(**cfg)
    gating = GatingNet(_layer_from(doc["gating"]), doc["gating"]["noise_std"])
    actor_gating = None
    if doc.get("actor_gating") is not None:
        actor_gating = GatingNet(_layer_from(doc["actor_gating"]),
                                 doc["actor_gating"]["noise_std"])
    model = BilinearAC(
        config=config,
        gating=gating,
        actor_gating=actor_gating,
        policy_basis=_stack_from(doc["basis_policies"]),
        sigma_head=_layer_from(doc["sigma_head"]),
        critics=[_critic_from(d) for d in doc["critics"]],
        targets=[_critic_from(d) for d in doc["targets"]],
        tau=doc["tau"],
    )
    adam_states = None
    if doc.get("adam_states") is not None:
        adam_states = {k: _adam_from(v) for k, v in doc["adam_states"].items()}
    return model, adam_states


def save_checkpoint(path, model: BilinearAC, adam_states=None,
                    extra_config=None) -> None:
    doc = model_to_dict(model, adam_states, extra_config)
    with open(path, "w") as fh:
        json.dump(doc, fh, separators=(",", ":"))


def load_checkpoint(path):
    with open(path) as fh:
        doc = json.load(fh)
    return model_from_dict(doc)
