"""Command-line entry point.

Subcommands: train, eval-zeroshot, adapt-online, sweep-g, analyze,
check-grads, ablate-gating.  Runs are driven by a TOML or JSON config
document plus repeatable dotted-key overrides; every run writes its
outputs and a manifest (config snapshot, version, file checksums) under
a fresh directory <out>/<command>-<timestamp>-<seed>.

Exit codes: 0 success, 2 bad config/usage, 3 non-finite-loss abort,
4 frozen-parameter contract violation, 1 anything else.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import math
import os
import subprocess
import sys
from dataclasses import replace
from datetime import datetime
from pathlib import Path

import numpy as np

from . import __version__, adapt, analysis, envs, seeding
from .errors import ConfigError, ContractViolation, NumericsError
from .models import load_checkpoint, params_checksum, save_checkpoint
from .sac import (TrainConfig, Batch, gradient_report, train_single,
                  write_curve_csv, read_curve_csv)

GRAD_TOLERANCE = 1e-4

DEFAULT_SECTIONS = {
    "adapt": {
        "alpha_g": 0.01,
        "gamma": 0.99,
        "rule": "td_sarsa",
        "steps": 2000,
        "theta_from_deg": 0.0,
        "theta_to_deg": 90.0,
        "init_w": "gate",
        "negate_reward": False,
        "deterministic": False,
    },
    "sweep": {
        "amplitudes": [],        # empty -> {0.5, 1, 2} x data RMS
        "n_directions": 16,
        "episode_len": 200,
        "gdata": "",
    },
    "analysis": {
        "ridge_lambda": 1e-3,
        "n_folds": 5,
    },
}


def _version() -> str:
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty"],
                             capture_output=True, text=True, timeout=5)
        if out.returncode == 0 and out.stdout.strip():
            return out.stdout.strip()
    except OSError:
        pass
    return f"bilinear-ac-{__version__}"


# ---------------------------------------------------------------------------
# Config handling.

def load_config_file(path: str) -> dict:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {path}")
    text = p.read_text()
    if p.suffix == ".json":
        try:
            return json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError(f"bad JSON config: {e}") from e
    try:
        import tomllib as toml  # py >= 3.11
    except ModuleNotFoundError:
        try:
            import tomli as toml
        except ModuleNotFoundError:
            raise ConfigError("TOML support needs python>=3.11 or tomli; "
                              "use a JSON config instead")
    try:
        return toml.loads(text)
    except toml.TOMLDecodeError as e:
        raise ConfigError(f"bad TOML config: {e}") from e


def _parse_override_value(raw: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def apply_overrides(doc: dict, overrides) -> dict:
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override must look like key=value: {item!r}")
        key, raw = item.split("=", 1)
        target = doc
        parts = key.split(".")
        for part in parts[:-1]:
            target = target.setdefault(part, {})
            if not isinstance(target, dict):
                raise ConfigError(f"override path {key!r} crosses a scalar")
        target[parts[-1]] = _parse_override_value(raw)
    return doc


def build_config(args) -> dict:
    doc = copy.deepcopy(DEFAULT_SECTIONS)
    doc.update(TrainConfig().to_dict())
    if args.config:
        file_doc = load_config_file(args.config)
        for k, v in file_doc.items():
            if isinstance(v, dict) and k in DEFAULT_SECTIONS:
                unknown = set(v) - set(DEFAULT_SECTIONS[k])
                if unknown:
                    raise ConfigError(
                        f"unknown keys in [{k}]: {sorted(unknown)}")
                doc[k].update(v)
            else:
                doc[k] = v
    apply_overrides(doc, args.override)
    if args.seeds:
        doc["seeds"] = args.seeds
    for k in DEFAULT_SECTIONS:
        unknown = set(doc[k]) - set(DEFAULT_SECTIONS[k])
        if unknown:
            raise ConfigError(f"unknown keys in [{k}]: {sorted(unknown)}")
    return doc


def train_config_from(doc: dict) -> TrainConfig:
    train_keys = {k: v for k, v in doc.items() if k not in DEFAULT_SECTIONS}
    return TrainConfig.from_dict(train_keys)


# ---------------------------------------------------------------------------
# Run directories and manifests.

def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    h.update(path.read_bytes())
    return h.hexdigest()


def make_run_dir(out: str, command: str, seed) -> Path:
    stamp = datetime.now().strftime("%Y%m%d-%H%M%S.%f")
    run = Path(out) / f"{command}-{stamp}-{seed}"
    run.mkdir(parents=True)
    return run


def write_manifest(run_dir: Path, command: str, config: dict, seeds,
                   inputs: dict, started: str) -> None:
    """Inventory every file in the run directory with its checksum and
    write manifest.json atomically (tmp + rename)."""
    outputs = {}
    for p in sorted(run_dir.rglob("*")):
        if p.is_file() and p.name != "manifest.json":
            outputs[str(p.relative_to(run_dir))] = _sha256(p)
    doc = {
        "command": command,
        "version": _version(),
        "started_at": started,
        "finished_at": datetime.now().isoformat(timespec="seconds"),
        "seeds": list(seeds),
        "config": config,
        "inputs": inputs,
        "outputs": outputs,
    }
    tmp = run_dir / "manifest.json.tmp"
    with open(tmp, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, run_dir / "manifest.json")


def _verify_input_unchanged(path: Path, sha_before: str) -> None:
    if _sha256(path) != sha_before:
        raise ContractViolation(f"input file changed during run: {path}")


def _now() -> str:
    return datetime.now().isoformat(timespec="seconds")


def _write_train_outputs(run_dir: Path, result) -> None:
    write_curve_csv(run_dir / "learning_curve.csv", result.curve)
    save_checkpoint(run_dir / "checkpoint.json", result.model,
                    result.adam_states, result.config.to_dict())
    wdir = run_dir / "train_windows"
    wdir.mkdir(exist_ok=True)
    for step, log in sorted(result.train_windows.items()):
        envs.write_episode_csv(wdir / f"step_{step:08d}.csv", log)
    edir = run_dir / "evals"
    edir.mkdir(exist_ok=True)
    for step, logs in sorted(result.eval_logs.items()):
        sdir = edir / f"step_{step:08d}"
        sdir.mkdir(exist_ok=True)
        for i, log in enumerate(logs):
            envs.write_episode_csv(sdir / f"dir_{i}.csv", log)


# ---------------------------------------------------------------------------
# Commands.

def cmd_train(args) -> int:
    doc = build_config(args)
    cfg = train_config_from(doc)
    for seed in cfg.seeds:
        started = _now()
        run_dir = make_run_dir(args.out, "train", seed)
        print(f"[train seed {seed}] -> {run_dir}")
        result = train_single(
            cfg, seed, out_dir=run_dir,
            progress=lambda step, ret: print(
                f"[train seed {seed}] step {step}: eval mean return {ret:.4f}"))
        _write_train_outputs(run_dir, result)
        write_manifest(run_dir, "train", doc, [seed], {}, started)
        print(f"[train seed {seed}] final mean return "
              f"{result.curve.final_mean_return:.4f}")
    return 0


def _default_zeroshot_thetas_deg():
    return [22.5 + 45.0 * i for i in range(8)]


def cmd_eval_zeroshot(args) -> int:
    if not args.checkpoint:
        raise ConfigError("eval-zeroshot requires --checkpoint")
    ck = Path(args.checkpoint)
    if not ck.exists():
        raise ConfigError(f"checkpoint not found: {ck}")
    doc = build_config(args)
    sha_before = _sha256(ck)
    model, _ = load_checkpoint(ck)
    thetas_deg = args.thetas or _default_zeroshot_thetas_deg()
    started = _now()
    seed = (args.seeds or [0])[0]
    run_dir = make_run_dir(args.out, "eval-zeroshot", seed)
    param_sum = params_checksum(model, "all")
    rows = []
    epi_dir = run_dir / "zeroshot"
    epi_dir.mkdir()
    for deg in thetas_deg:
        theta = math.radians(deg) % (2.0 * math.pi)
        log = adapt.zero_shot_episode(model, theta)
        envs.write_episode_csv(epi_dir / f"theta_{deg:g}.csv", log)
        rows.append((deg, theta, float(log.reward.mean()),
                     float(log.reward.sum())))
    if params_checksum(model, "all") != param_sum:
        raise ContractViolation("parameters mutated during zero-shot eval")
    with open(run_dir / "zeroshot_returns.csv", "w", newline="") as fh:
        import csv as _csv
        w = _csv.writer(fh)
        w.writerow(["theta_deg", "theta_rad", "mean_step_reward", "return"])
        for deg, th, mean_r, total in rows:
            w.writerow([format(deg, ".9g"), format(th, ".9g"),
                        format(mean_r, ".9g"), format(total, ".9g")])
    _verify_input_unchanged(ck, sha_before)
    write_manifest(run_dir, "eval-zeroshot", doc, [seed],
                   {str(ck): sha_before}, started)
    print(f"[eval-zeroshot] -> {run_dir}")
    return 0


def cmd_adapt_online(args) -> int:
    if not args.checkpoint:
        raise ConfigError("adapt-online requires --checkpoint")
    ck = Path(args.checkpoint)
    if not ck.exists():
        raise ConfigError(f"checkpoint not found: {ck}")
    doc = build_config(args)
    acfg = doc["adapt"]
    if acfg["rule"] not in adapt.RULES:
        raise ConfigError(f"adapt.rule must be one of {adapt.RULES}")
    sha_before = _sha256(ck)
    model, _ = load_checkpoint(ck)
    seed = (args.seeds or [0])[0]
    started = _now()
    run_dir = make_run_dir(args.out, "adapt-online", seed)

    theta_from = math.radians(acfg["theta_from_deg"]) % (2 * math.pi)
    theta_to = math.radians(acfg["theta_to_deg"]) % (2 * math.pi)
    w0 = adapt.initial_coeffs(model, theta_from, acfg["init_w"])
    state = adapt.AdaptState(w=w0, alpha_g=acfg["alpha_g"],
                             gamma=acfg["gamma"], rule=acfg["rule"])
    action_rng = None if acfg["deterministic"] else seeding.stream(seed, "actor-noise")
    result = adapt.adapt_online(model, [(0, theta_to)], acfg["steps"], state,
                                negate_reward=acfg["negate_reward"],
                                action_rng=action_rng)
    adapt.write_trace_csv(run_dir / "adapt_trace.csv", result)
    adapt.write_reward_series_csv(run_dir / "reward_series.csv", result)
    envs.write_episode_csv(run_dir / "adapt_episode.csv", result.episode_log)
    _verify_input_unchanged(ck, sha_before)
    write_manifest(run_dir, "adapt-online", doc, [seed],
                   {str(ck): sha_before}, started)
    tail = result.trace_reward[-max(1, len(result.trace_reward) // 4):]
    print(f"[adapt-online] -> {run_dir} (tail mean reward {tail.mean():.4f})")
    return 0


def _gdata_from(args, doc) -> analysis.GDataset:
    gdata = doc["sweep"]["gdata"]
    paths = []
    if gdata:
        p = Path(gdata)
        if p.is_dir():
            paths = sorted(p.glob("*.csv"))
        elif p.exists():
            paths = [p]
        else:
            raise ConfigError(f"sweep.gdata not found: {gdata}")
    elif args.run:
        wdir = Path(args.run) / "train_windows"
        paths = sorted(wdir.glob("*.csv"))
    if not paths:
        raise ConfigError("no gating data: set sweep.gdata or pass --run "
                          "pointing at a train run directory")
    logs = [envs.read_episode_csv(p) for p in paths]
    return analysis.dataset_from_logs(logs)


def cmd_sweep_g(args) -> int:
    if not args.checkpoint:
        raise ConfigError("sweep-g requires --checkpoint")
    ck = Path(args.checkpoint)
    if not ck.exists():
        raise ConfigError(f"checkpoint not found: {ck}")
    doc = build_config(args)
    scfg = doc["sweep"]
    sha_before = _sha256(ck)
    model, _ = load_checkpoint(ck)
    dataset = _gdata_from(args, doc)
    seed = (args.seeds or [0])[0]
    started = _now()
    run_dir = make_run_dir(args.out, "sweep-g", seed)
    amplitudes = scfg["amplitudes"] or None
    result = analysis.g_sweep(model, dataset, amplitudes=amplitudes,
                              n_directions=int(scfg["n_directions"]),
                              episode_len=int(scfg["episode_len"]))
    analysis.write_sweep_csv(run_dir / "sweep_grid.csv", result)
    _verify_input_unchanged(ck, sha_before)
    write_manifest(run_dir, "sweep-g", doc, [seed],
                   {str(ck): sha_before}, started)
    print(f"[sweep-g] -> {run_dir}")
    return 0


def cmd_analyze(args) -> int:
    if not args.run:
        raise ConfigError("analyze requires --run pointing at a train run")
    src = Path(args.run)
    if not src.exists():
        raise ConfigError(f"run directory not found: {src}")
    doc = build_config(args)
    acfg = doc["analysis"]
    seed = (args.seeds or [0])[0]
    started = _now()
    run_dir = make_run_dir(args.out, "analyze", seed)

    window_paths = sorted((src / "train_windows").glob("*.csv"))
    if not window_paths:
        raise ConfigError(f"no train_windows/*.csv under {src}")
    window_logs = {int(p.stem.split("_")[1]): envs.read_episode_csv(p)
                   for p in window_paths}

    # PCA of all training-time gating activity
    full = analysis.dataset_from_logs([window_logs[k]
                                       for k in sorted(window_logs)])
    p = analysis.pca(full, min(full.G.shape[1], 8))
    analysis.write_pca_csv(run_dir / "pca_components.csv", p)

    # decoding error per recorded training stage; windows that cover a
    # single direction (very short runs) are skipped
    decode_rows = []
    for step in sorted(window_logs):
        ds = analysis.dataset_from_logs([window_logs[step]])
        if len(np.unique(ds.theta)) < 2:
            continue
        err = analysis.direction_decoding(ds, acfg["ridge_lambda"],
                                          acfg["n_folds"], seed)
        decode_rows.append((step, err))
    import csv as _csv
    with open(run_dir / "decoding.csv", "w", newline="") as fh:
        w = _csv.writer(fh)
        w.writerow(["env_step", "decode_error_rad"])
        for step, err in decode_rows:
            w.writerow([str(step), format(err, ".9g")])

    curve_path = src / "learning_curve.csv"
    g_corr_final = None
    if curve_path.exists():
        curve = read_curve_csv(curve_path)
        with open(run_dir / "g_corr_series.csv", "w", newline="") as fh:
            w = _csv.writer(fh)
            w.writerow(["env_step", "g_corr"])
            for i in range(len(curve)):
                w.writerow([str(int(curve.env_step[i])),
                            format(curve.g_corr[i], ".9g")])
        g_corr_final = float(curve.g_corr[-1])

    summary = {
        "source_run": str(src),
        "n_gating_rows": int(len(full)),
        "pca_explained_variance": [float(v) for v in p.explained_variance],
        "decode_error_first": decode_rows[0][1] if decode_rows else None,
        "decode_error_final": decode_rows[-1][1] if decode_rows else None,
        "g_corr_final": g_corr_final,
    }
    with open(run_dir / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    write_manifest(run_dir, "analyze", doc, [seed], {}, started)
    if decode_rows:
        print(f"[analyze] -> {run_dir} (decode error "
              f"{decode_rows[0][1]:.4f} -> {decode_rows[-1][1]:.4f} rad)")
    else:
        print(f"[analyze] -> {run_dir} (no multi-direction windows to decode)")
    return 0


def synthetic_batch(cfg: TrainConfig, rng: np.random.Generator,
                    n: int = 8) -> Batch:
    """Random transitions with unit goal slices, for gradient audits."""
    def obs_batch():
        s = rng.normal(0.0, 0.5, size=(n, envs.OBS_DIM))
        ang = rng.uniform(0.0, 2.0 * math.pi, size=n)
        s[:, envs.GOAL_SLICE] = np.stack([np.cos(ang), np.sin(ang)], axis=1)
        return s

    return Batch(s=obs_batch(),
                 a=rng.uniform(-1.0, 1.0, size=(n, envs.ACT_DIM)),
                 r=rng.normal(0.0, 1.0, size=n),
                 s2=obs_batch(),
                 done=np.zeros(n),
                 theta=np.zeros(n))


def cmd_check_grads(args) -> int:
    doc = build_config(args)
    cfg = train_config_from(doc)
    seed = (args.seeds or [0])[0]
    rng = seeding.stream(seed, "check-grads")
    from .models import init_model
    model = init_model(cfg.model_config(), rng, tau=cfg.tau)
    batch = synthetic_batch(cfg, rng)
    report = gradient_report(model, batch, cfg, rng)
    worst = 0.0
    for name in sorted(report):
        err = report[name]
        worst = max(worst, err)
        print(f"{name:40s} max rel err {err:.3e}")
    print(f"{'WORST':40s} max rel err {worst:.3e} "
          f"({'OK' if worst < GRAD_TOLERANCE else 'FAIL'} at {GRAD_TOLERANCE:g})")
    return 0 if worst < GRAD_TOLERANCE else 1


def cmd_ablate_gating(args) -> int:
    doc = build_config(args)
    cfg = train_config_from(doc)
    started = _now()
    run_dir = make_run_dir(args.out, "ablate-gating", cfg.seeds[0])
    summary_rows = []
    for seed in cfg.seeds:
        for mode in ("shared", "independent"):
            mode_cfg = replace(cfg, gating_mode=mode)
            sub = run_dir / f"{mode}-seed{seed}"
            sub.mkdir(parents=True)
            print(f"[ablate {mode} seed {seed}] training...")
            result = train_single(mode_cfg, seed, out_dir=sub)
            write_curve_csv(sub / "learning_curve.csv", result.curve)
            save_checkpoint(sub / "checkpoint.json", result.model,
                            result.adam_states, mode_cfg.to_dict())
            with open(sub / "config.json", "w") as fh:
                json.dump(mode_cfg.to_dict(), fh, indent=2, sort_keys=True)
                fh.write("\n")
            summary_rows.append((seed, mode, result.curve.final_mean_return,
                                 result.curve.auc()))
    import csv as _csv
    with open(run_dir / "summary.csv", "w", newline="") as fh:
        w = _csv.writer(fh)
        w.writerow(["seed", "mode", "final_mean_return", "auc"])
        for seed, mode, final, auc in summary_rows:
            w.writerow([str(seed), mode, format(final, ".9g"),
                        format(auc, ".9g")])
    write_manifest(run_dir, "ablate-gating", doc, cfg.seeds, {}, started)
    for seed, mode, final, _ in summary_rows:
        print(f"[ablate {mode} seed {seed}] final mean return {final:.4f}")
    return 0


# ---------------------------------------------------------------------------
# Argument parsing and dispatch.

def _parse_float_list(raw: str):
    return [float(x) for x in raw.split(",") if x.strip() != ""]


def _parse_int_list(raw: str):
    return [int(x) for x in raw.split(",") if x.strip() != ""]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bilinear-ac",
        description="Bilinear co-decomposed actor-critic: training, "
                    "zero-shot evaluation, online gating-space adaptation, "
                    "latent sweeps and analysis.")
    parser.add_argument("--version", action="version", version=_version())
    sub = parser.add_subparsers(dest="command", required=True)
    commands = {
        "train": cmd_train,
        "eval-zeroshot": cmd_eval_zeroshot,
        "adapt-online": cmd_adapt_online,
        "sweep-g": cmd_sweep_g,
        "analyze": cmd_analyze,
        "check-grads": cmd_check_grads,
        "ablate-gating": cmd_ablate_gating,
    }
    for name, fn in commands.items():
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="TOML or JSON config")
        p.add_argument("--override", action="append", default=[],
                       metavar="K=V", help="dotted-key config override")
        p.add_argument("--checkpoint", default=None)
        p.add_argument("--out", default="runs", help="output root directory")
        p.add_argument("--seeds", type=_parse_int_list, default=None,
                       metavar="LIST", help="comma-separated seeds")
        p.add_argument("--thetas", type=_parse_float_list, default=None,
                       metavar="LIST", help="comma-separated angles, degrees")
        p.add_argument("--run", default=None,
                       help="existing run directory (analyze, sweep-g)")
        p.set_defaults(fn=fn)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as e:
        print(f"usage-error: {e}", file=sys.stderr)
        return 2
    except NumericsError as e:
        print(f"nan-abort: {e}", file=sys.stderr)
        return 3
    except ContractViolation as e:
        print(f"contract-violation: {e}", file=sys.stderr)
        return 4
    except Exception as e:  # noqa: BLE001 - single CLI boundary
        print(f"internal-error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
