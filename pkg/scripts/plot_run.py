#!/usr/bin/env python3
"""Quick figures from run directories.

Usage:
    python scripts/plot_run.py --train RUNDIR [--zeroshot RUNDIR]
        [--adapt RUNDIR] [--sweep RUNDIR] [--out figures.png]

Reads only the CSV outputs, so it works on any completed run.
"""

import argparse
import csv
import math
from pathlib import Path

import numpy as np

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, data = rows[0], rows[1:]
    cols = {h: np.array([float(r[i]) for r in data])
            for i, h in enumerate(header)}
    return cols


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--train", required=True)
    ap.add_argument("--zeroshot")
    ap.add_argument("--adapt")
    ap.add_argument("--sweep")
    ap.add_argument("--out", default="run_figures.png")
    args = ap.parse_args()

    panels = 1 + sum(bool(x) for x in (args.zeroshot, args.adapt, args.sweep))
    fig, axes = plt.subplots(1, panels, figsize=(5 * panels, 4))
    axes = np.atleast_1d(axes)
    i = 0

    curve = read_csv(Path(args.train) / "learning_curve.csv")
    ax = axes[i]
    ax.plot(curve["env_step"], curve["mean_return"], lw=2, label="mean")
    for d in range(8):
        ax.plot(curve["env_step"], curve[f"ret_dir_{d}"], alpha=0.3, lw=1)
    ax.set_xlabel("env step")
    ax.set_ylabel("per-step eval reward")
    ax.set_title("learning curve")
    ax.legend()
    i += 1

    if args.zeroshot:
        z = read_csv(Path(args.zeroshot) / "zeroshot_returns.csv")
        ax = plt.subplot(1, panels, i + 1, projection="polar")
        axes[i].set_visible(False)
        ax.plot(z["theta_rad"], z["mean_step_reward"], "o-")
        ax.set_title("zero-shot reward by direction")
        i += 1

    if args.adapt:
        a = read_csv(Path(args.adapt) / "reward_series.csv")
        ax = axes[i]
        w = 100
        smooth = np.convolve(a["r"], np.ones(w) / w, mode="valid")
        ax.plot(a["step"][w - 1:], smooth)
        ax.axhline(0.0, color="k", lw=0.5)
        ax.set_xlabel("adaptation step")
        ax.set_ylabel(f"reward ({w}-step mean)")
        ax.set_title("online adaptation")
        i += 1

    if args.sweep:
        s = read_csv(Path(args.sweep) / "sweep_grid.csv")
        ax = axes[i]
        for amp in sorted(set(s["amplitude"])):
            m = s["amplitude"] == amp
            order = np.argsort(s["latent_direction"][m])
            ax.plot(np.degrees(s["latent_direction"][m][order]),
                    np.degrees(s["move_direction"][m][order]),
                    "o-", label=f"A={amp:.2f}")
        ax.set_xlabel("latent direction (deg)")
        ax.set_ylabel("movement direction (deg)")
        ax.set_title("latent sweep")
        ax.legend()

    fig.tight_layout()
    fig.savefig(args.out, dpi=120)
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
