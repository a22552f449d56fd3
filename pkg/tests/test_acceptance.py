"""Acceptance suite: one test per criterion, full-scale configuration.

Training fixtures run three 50k-step seeds per gating mode (roughly
3-4 minutes each on one core), shared across criteria.  Set
BILINEAR_AC_CACHE=<dir> to cache the trained runs between invocations
while iterating; the cache key is the exact config + seed.

Run with `pytest tests/test_acceptance.py -v -s` to see one PASS line
per criterion.
"""

import hashlib
import json
import math
import os
import re
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from bilinear_ac import adapt, analysis, cli, envs, seeding
from bilinear_ac.models import (actor_mean, critic_value, gate, init_model,
                                load_checkpoint, model_from_dict,
                                model_to_dict, params_checksum, sample_action)
from bilinear_ac.sac import (ReplayBuffer, TrainConfig, gradient_report,
                             random_baseline, train_single)

SEEDS = (0, 1, 2)
ACCEPT_CONFIG = TrainConfig()  # the spec-scale defaults: 50k steps, K=8


def _trained(mode: str, seed: int):
    """Train (or load from the optional cache) one full-scale run."""
    cfg = replace(ACCEPT_CONFIG, gating_mode=mode)
    cache_root = os.environ.get("BILINEAR_AC_CACHE")
    key = hashlib.sha256(
        json.dumps({**cfg.to_dict(), "seed": seed},
                   sort_keys=True).encode()).hexdigest()[:16]
    cache = Path(cache_root) / f"accept-{mode}-{seed}-{key}" if cache_root else None
    if cache and (cache / "result.json").exists():
        doc = json.loads((cache / "result.json").read_text())
        model, _ = model_from_dict(doc["checkpoint"])
        windows = {int(k): envs.read_episode_csv(cache / f"win_{k}.csv")
                   for k in doc["window_steps"]}
        return {
            "model": model,
            "curve_mean": np.array(doc["curve_mean"]),
            "curve_dirs": np.array(doc["curve_dirs"]),
            "curve_gcorr": np.array(doc["curve_gcorr"]),
            "curve_steps": np.array(doc["curve_steps"]),
            "windows": windows,
        }
    res = train_single(cfg, seed)
    out = {
        "model": res.model,
        "curve_mean": res.curve.mean_return,
        "curve_dirs": res.curve.per_direction,
        "curve_gcorr": res.curve.g_corr,
        "curve_steps": res.curve.env_step,
        "windows": res.train_windows,
    }
    if cache:
        cache.mkdir(parents=True, exist_ok=True)
        doc = {
            "checkpoint": model_to_dict(res.model),
            "curve_mean": res.curve.mean_return.tolist(),
            "curve_dirs": res.curve.per_direction.tolist(),
            "curve_gcorr": res.curve.g_corr.tolist(),
            "curve_steps": res.curve.env_step.tolist(),
            "window_steps": sorted(res.train_windows),
        }
        (cache / "result.json").write_text(json.dumps(doc))
        for step, log in res.train_windows.items():
            envs.write_episode_csv(cache / f"win_{step}.csv", log)
    return out


@pytest.fixture(scope="session")
def shared_runs():
    return {seed: _trained("shared", seed) for seed in SEEDS}


@pytest.fixture(scope="session")
def independent_runs():
    return {seed: _trained("independent", seed) for seed in SEEDS}


def report(name, ok, detail):
    line = f"ACCEPTANCE {name}: {'PASS' if ok else 'FAIL'} ({detail})"
    print(line)
    assert ok, line


# ---------------------------------------------------------------------------

def test_c01_gradient_correctness():
    # every parameter group of the actor loss and both critic losses vs
    # central finite differences, full-size model, under one minute
    t0 = time.time()
    cfg = ACCEPT_CONFIG
    rng = seeding.stream(0, "check-grads")
    model = init_model(cfg.model_config(), rng, tau=cfg.tau)
    batch = cli.synthetic_batch(cfg, rng)
    rep = gradient_report(model, batch, cfg, rng, h=1e-5)
    worst = max(rep.values())
    elapsed = time.time() - t0
    report("C1 gradient-correctness",
           worst < 1e-4 and elapsed < 60.0 and len(rep) == 18,
           f"worst rel err {worst:.2e} over {len(rep)} groups, {elapsed:.1f}s")


def test_c02_bilinearity_suite():
    cfg = ACCEPT_CONFIG.model_config()
    rng = seeding.stream(7, "bilinearity")
    model = init_model(cfg, rng)
    worst = 0.0
    for _ in range(1000):
        s = rng.normal(0.0, 0.7, size=cfg.obs_dim)
        act = rng.uniform(-1, 1, size=cfg.act_dim)
        g1 = rng.normal(size=cfg.n_basis)
        g2 = rng.normal(size=cfg.n_basis)
        a, b = rng.normal(size=2)
        # linearity of the action mean and the value in the coefficients
        lhs = actor_mean(model.policy_basis, a * g1 + b * g2, s)
        rhs = (a * actor_mean(model.policy_basis, g1, s)
               + b * actor_mean(model.policy_basis, g2, s))
        worst = max(worst, float(np.max(np.abs(lhs - rhs))))
        qlhs = critic_value(model.critics[0], a * g1 + b * g2, s, act)
        qrhs = (a * critic_value(model.critics[0], g1, s, act)
                + b * critic_value(model.critics[0], g2, s, act))
        worst = max(worst, abs(qlhs - qrhs))
        # one-hot basis selection is exact
        j = int(rng.integers(cfg.n_basis))
        onehot = np.zeros(cfg.n_basis)
        onehot[j] = 1.0
        from bilinear_ac.numerics import stack_forward
        if not np.array_equal(actor_mean(model.policy_basis, onehot, s),
                              stack_forward(model.policy_basis, s)[j]):
            report("C2 bilinearity", False, "one-hot selection not exact")
        if critic_value(model.critics[0], onehot, s, act) != \
                model.critics[0].responses(s, act)[j]:
            report("C2 bilinearity", False, "one-hot critic not exact")
        # shared-gating bit-identity on the same observation
        ga = model.actor_coeffs(s)
        gc = model.critic_coeffs(s)
        if not np.array_equal(ga, gc):
            report("C2 bilinearity", False, "shared gate not bit-identical")
    report("C2 bilinearity", worst < 1e-12,
           f"1000 trials, worst linearity residual {worst:.2e}")


def test_c03_td_algebra():
    rng = seeding.stream(3, "td-algebra")
    worst = 0.0
    for _ in range(1000):
        k = int(rng.integers(1, 9))
        w = rng.normal(size=k)
        psi_now = rng.normal(size=k)
        psi_next = rng.normal(size=k)
        r = float(rng.normal())
        gm = float(rng.uniform(0, 1))
        al = float(rng.uniform(1e-4, 0.1))
        st = adapt.AdaptState(w=w.copy(), alpha_g=al, gamma=gm)
        got = adapt.g_update(st, r, psi_now, psi_next)
        grad = (-(r * psi_now) - gm * float(psi_next @ w) * psi_now
                + float(psi_now @ w) * psi_now)
        worst = max(worst, float(np.max(np.abs(got - (w - al * grad)))))
        # exact reduction at gamma = 0, w = 0
        st_td = adapt.AdaptState(w=np.zeros(k), alpha_g=al, gamma=0.0)
        st_s = adapt.AdaptState(w=np.zeros(k), alpha_g=al, rule="simplified")
        w_td = adapt.g_update(st_td, r, psi_now, psi_next)
        w_s = adapt.g_update_simplified(st_s, r, psi_now)
        if not np.array_equal(w_td, w_s):
            report("C3 td-algebra", False, "gamma=0 reduction not exact")
    report("C3 td-algebra", worst < 1e-12,
           f"1000 transitions, worst oracle gap {worst:.2e}")


def test_c04_learning(shared_runs):
    finals = np.array([shared_runs[s]["curve_mean"][-1] for s in SEEDS])
    baseline = random_baseline(envs.NavConfig(), seed=0)
    mean_final = float(finals.mean())
    ok = mean_final >= 0.5 and mean_final >= 5.0 * baseline
    report("C4 learning", ok,
           f"finals {np.round(finals, 3).tolist()}, mean {mean_final:.3f} "
           f">= 0.5 and >= 5x random baseline {baseline:.4f}")


def test_c05_gating_ablation(shared_runs, independent_runs):
    shared = np.mean([shared_runs[s]["curve_mean"][-1] for s in SEEDS])
    indep = np.mean([independent_runs[s]["curve_mean"][-1] for s in SEEDS])
    gap = abs(shared - indep)
    baseline = random_baseline(envs.NavConfig(), seed=0)
    ok = (gap <= 0.10 * abs(indep)
          and shared > baseline and indep > baseline)
    report("C5 gating-ablation", ok,
           f"shared {shared:.3f} vs independent {indep:.3f}, "
           f"gap {gap / abs(indep) * 100:.1f}% <= 10%, both above the "
           f"random baseline {baseline:.4f}")


def test_c06_zero_shot(shared_runs):
    ratios = []
    headings_225 = []
    for seed in SEEDS:
        run = shared_runs[seed]
        model = run["model"]
        before = params_checksum(model)
        rets = []
        for i in range(8):
            theta = math.radians(22.5 + 45.0 * i)
            log = adapt.zero_shot_episode(model, theta)
            rets.append(float(log.reward.mean()))
            if i == 0:
                # at the canonical in-between angle the trajectory
                # heading over the last 400 steps stays within 45 deg
                delta = log.position[-1] - log.position[-400]
                heading = math.atan2(delta[1], delta[0])
                off = abs((heading - theta + math.pi) % (2 * math.pi)
                          - math.pi)
                headings_225.append(math.degrees(off))
        if params_checksum(model) != before:
            report("C6 zero-shot", False, "parameters mutated")
        trained = float(run["curve_mean"][-1])
        ratios.append(np.mean(rets) / trained)
    ok = (all(r >= 0.70 for r in ratios)
          and all(h < 45.0 for h in headings_225))
    report("C6 zero-shot", ok,
           f"intermediate/trained reward ratios {np.round(ratios, 3).tolist()}"
           f" all >= 0.70, heading offsets at 22.5 deg "
           f"{np.round(headings_225, 1).tolist()} < 45, checksums unchanged")


def test_c07_online_adaptation(shared_runs):
    # canonical hard switch: stale gate for 0 deg, new goal 180 deg
    details = []
    ok = True
    for seed in SEEDS:
        run = shared_runs[seed]
        model = run["model"]
        pretrained = float(run["curve_dirs"][-1][4])  # direction 180 deg
        w0 = adapt.initial_coeffs(model, 0.0)
        st = adapt.AdaptState(w=w0, alpha_g=0.01, gamma=ACCEPT_CONFIG.gamma)
        res = adapt.adapt_online(model, [(0, math.pi)], 2000, st,
                                 action_rng=seeding.stream(seed, "actor-noise"))
        tail = float(res.trace_reward[1500:2000].mean())
        ok = ok and tail >= 0.8 * pretrained
        details.append(f"seed {seed}: tail {tail:.3f} vs 0.8x{pretrained:.3f}")
    # negated-reward reference: the same TD machinery fed -r from a
    # neutral start anti-reinforces goal-following, so the true reward
    # settles negative (penalty-dominated motion)
    for seed in SEEDS:
        model = shared_runs[seed]["model"]
        st = adapt.AdaptState(w=adapt.initial_coeffs(model, 0.0, "zeros"),
                              alpha_g=0.01, gamma=ACCEPT_CONFIG.gamma)
        res = adapt.adapt_online(model, [(0, 0.0)], 2000, st,
                                 negate_reward=True,
                                 action_rng=seeding.stream(seed, "actor-noise"))
        neg_tail = float(res.trace_reward[1500:2000].mean())
        ok = ok and neg_tail < 0.0
        details.append(f"seed {seed}: negated ref tail {neg_tail:.3f}")
    report("C7 online-adaptation", ok, "; ".join(details))


def test_c08_g_space_structure(shared_runs):
    details = []
    ok = True
    for seed in SEEDS:
        run = shared_runs[seed]
        steps = sorted(run["windows"])
        first, last = steps[0], steps[-1]
        err_first = analysis.direction_decoding(
            analysis.dataset_from_logs([run["windows"][first]]))
        err_last = analysis.direction_decoding(
            analysis.dataset_from_logs([run["windows"][last]]))
        ok = ok and err_last < 0.3 and err_last < err_first
        ok = ok and np.all(run["curve_gcorr"] == 1.0)
        details.append(f"seed {seed}: {err_first:.4f} -> {err_last:.4f} rad")
    report("C8 g-space-structure", ok,
           "; ".join(details) + "; shared g_corr == 1.0 everywhere")


def test_c09_determinism(tmp_path):
    overrides = ["--override", "total_steps=250",
                 "--override", "warmup_steps=50",
                 "--override", "eval_every=125",
                 "--override", "batch=16",
                 "--override", "buffer_capacity=500"]
    pairs = []
    for tag in ("a", "b"):
        out = tmp_path / f"runs_{tag}"
        assert cli.main(["train", "--out", str(out), "--seeds", "11",
                         *overrides]) == 0
        train_dir = sorted(out.glob("train-*"))[-1]
        assert cli.main(["eval-zeroshot", "--checkpoint",
                         str(train_dir / "checkpoint.json"),
                         "--out", str(out)]) == 0
        assert cli.main(["adapt-online", "--checkpoint",
                         str(train_dir / "checkpoint.json"),
                         "--out", str(out),
                         "--override", "adapt.steps=60"]) == 0
        assert cli.main(["sweep-g", "--checkpoint",
                         str(train_dir / "checkpoint.json"),
                         "--run", str(train_dir), "--out", str(out),
                         "--override", "sweep.n_directions=4",
                         "--override", "sweep.episode_len=30"]) == 0
        assert cli.main(["analyze", "--run", str(train_dir),
                         "--out", str(out)]) == 0
        csvs = {}
        for p in sorted(out.rglob("*.csv")):
            rel = str(Path(*p.parts[p.parts.index(f"runs_{tag}") + 1:]))
            # canonicalize run dir names: drop the timestamp component
            rel = re.sub(r"(^|/)([a-z-]+)-[\d.]+-[\d.]+-(\d+)(/|$)",
                         r"\1\2-\3\4", rel)
            csvs[rel] = p.read_bytes()
        pairs.append(csvs)
    same_keys = pairs[0].keys() == pairs[1].keys()
    diffs = [k for k in pairs[0] if same_keys and pairs[0][k] != pairs[1][k]]
    ok = same_keys and not diffs and len(pairs[0]) > 10
    report("C9 determinism", ok,
           f"{len(pairs[0])} CSVs byte-identical across re-runs"
           + (f"; diffs: {diffs[:3]}" if diffs else ""))


def test_x_latent_extremes_move_apart(shared_runs):
    # gating vectors of two opposite training directions, used as fixed
    # coefficients with the gate bypassed and the observation goal
    # neutralized, produce movement directions more than 90 deg apart
    from bilinear_ac.rollout import run_episode
    model = shared_runs[SEEDS[0]]["model"]
    nav = replace(envs.NavConfig(), episode_len=200)
    dirs = []
    for theta in (0.0, math.pi):
        w = gate(model.gating, envs.TaskDescriptor(theta).g)
        log, _ = run_episode(model, nav, envs.TaskDescriptor(0.0), coeffs=w,
                             obs_goal=np.zeros(2))
        d = log.position[-1]
        dirs.append(math.atan2(d[1], d[0]))
    gap = abs((dirs[0] - dirs[1] + math.pi) % (2 * math.pi) - math.pi)
    report("extra latent-extremes", gap > math.pi / 2,
           f"movement directions {np.degrees(dirs).round(1).tolist()} deg, "
           f"gap {math.degrees(gap):.1f} > 90")


def test_c10_replay_ema_buffer_suites():
    # FIFO eviction
    buf = ReplayBuffer(5, obs_dim=2, act_dim=1)
    for i in range(7):
        buf.push([i, 0], [0.0], float(i), [0, 0], False, 0.0)
    fifo_ok = set(buf.r) == {2.0, 3.0, 4.0, 5.0, 6.0}
    # uniform sampling chi-square: 1e6 draws over 10 items, 3 sigma
    buf10 = ReplayBuffer(16, obs_dim=1, act_dim=1)
    for i in range(10):
        buf10.push([0], [0], float(i), [0], False, 0.0)
    counts = np.bincount(
        buf10.sample(1_000_000, seeding.stream(0, "buffer-sampling"))
        .r.astype(int), minlength=10)
    sigma = math.sqrt(1_000_000 * 0.1 * 0.9)
    chi_ok = bool(np.all(np.abs(counts - 100_000) < 3 * sigma))
    # EMA closed forms
    cfg = ACCEPT_CONFIG.model_config()
    model = init_model(cfg, seeding.stream(1, "init"))
    from bilinear_ac.models import ema_update
    model.tau = 1.0
    model.critics[0].head.bias[:] = 2.5
    ema_update(model)
    ema_one = np.array_equal(model.targets[0].head.bias,
                             model.critics[0].head.bias)
    model.tau = 0.005
    model.critics[0].head.bias[:] = 1.0
    model.targets[0].head.bias[:] = 0.0
    ema_update(model)
    ema_small = np.allclose(model.targets[0].head.bias, 0.005, atol=1e-15)
    model.targets[0].head.bias[:] = 0.0
    ema_update(model)
    ema_update(model)
    two = 1.0 * (1.0 - (1.0 - 0.005) ** 2)
    ema_two = np.allclose(model.targets[0].head.bias, two, atol=1e-12)
    ok = fifo_ok and chi_ok and ema_one and ema_small and ema_two
    report("C10 replay-ema-buffer", ok,
           f"fifo {fifo_ok}, chi-square {chi_ok}, ema closed forms "
           f"{ema_one and ema_small and ema_two}")
