"""Quantitative characterization of the learned gating space.

Works over recorded gating activations: PCA of the latent cloud,
cross-validated ridge decoding of the goal direction, per-component
actor-critic correlation, and behavior maps from sweeping the latent
coefficients along the top PCA plane at several amplitudes.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, replace

import numpy as np

from . import envs, seeding
from .errors import ContractViolation, ProtocolError, ShapeError
from .models import BilinearAC, params_checksum
from .rollout import run_episode


@dataclass
class GDataset:
    """Recorded gating vectors (N, K) with aligned per-row labels."""

    G: np.ndarray
    theta: np.ndarray
    episode: np.ndarray
    step: np.ndarray

    def __post_init__(self):
        n = len(self.G)
        if not (len(self.theta) == len(self.episode) == len(self.step) == n):
            raise ShapeError("labels must align 1:1 with gating rows")

    def __len__(self):
        return len(self.G)


def dataset_from_logs(logs) -> GDataset:
    """Stack episode logs into one dataset; episode ids follow list order."""
    gs, thetas, eps, steps = [], [], [], []
    for i, log in enumerate(logs):
        gs.append(log.gating)
        thetas.append(log.theta)
        eps.append(np.full(len(log), i, dtype=np.int64))
        steps.append(log.step)
    return GDataset(np.concatenate(gs), np.concatenate(thetas),
                    np.concatenate(eps), np.concatenate(steps))


@dataclass
class PCAResult:
    mean: np.ndarray
    components: np.ndarray          # (C, K), orthonormal rows
    explained_variance: np.ndarray  # (C,), non-increasing

    def project(self, X) -> np.ndarray:
        return (np.asarray(X) - self.mean) @ self.components.T

    def back_project(self, Z) -> np.ndarray:
        return np.asarray(Z) @ self.components + self.mean


def pca(data, n_components: int) -> PCAResult:
    """Mean-centered principal components ordered by variance.

    `data` is a GDataset or an (N, K) matrix.  When fewer directions are
    available than requested (N or K too small), the available ones are
    returned with a warning.
    """
    X = data.G if isinstance(data, GDataset) else np.asarray(data, dtype=np.float64)
    n, k = X.shape
    if n < n_components:
        raise ProtocolError(f"need at least {n_components} rows, have {n}")
    available = min(n, k)
    if n_components > available:
        warnings.warn(f"only {available} principal directions available, "
                      f"requested {n_components}")
        n_components = available
    mean = X.mean(axis=0)
    Xc = X - mean
    # SVD route; tests cross-check against a covariance eigendecomposition
    _, s, vt = np.linalg.svd(Xc, full_matrices=False)
    var = (s * s) / max(n - 1, 1)
    comps = vt[:n_components]
    # sign convention: largest-magnitude entry of each component positive
    for row in comps:
        j = np.argmax(np.abs(row))
        if row[j] < 0:
            row *= -1.0
    return PCAResult(mean, comps, var[:n_components])


def _angular_errors(pred, true_unit) -> np.ndarray:
    """Angle between predicted and true direction per row; an exactly
    zero-length prediction counts as pi/2 (uninformative)."""
    norms = np.linalg.norm(pred, axis=1)
    out = np.full(len(pred), math.pi / 2.0)
    ok = norms > 0.0
    cosang = np.einsum("bd,bd->b", pred[ok], true_unit[ok]) / norms[ok]
    out[ok] = np.arccos(np.clip(cosang, -1.0, 1.0))
    return out


def direction_decoding(dataset: GDataset, ridge_lambda: float = 1e-3,
                       n_folds: int = 5, seed: int = 0) -> float:
    """Mean held-out angular error of a ridge decode G -> (cos t, sin t).

    Deterministic given (dataset, seed): folds come from one seeded
    shuffle.  Requires at least two distinct directions.
    """
    if len(np.unique(dataset.theta)) < 2:
        raise ProtocolError("direction decoding needs >= 2 distinct thetas")
    X = dataset.G
    Y = np.stack([np.cos(dataset.theta), np.sin(dataset.theta)], axis=1)
    n = len(X)
    rng = seeding.stream(seed, "cv-folds")
    order = rng.permutation(n)
    folds = np.array_split(order, n_folds)
    errors = []
    for f in folds:
        if len(f) == 0:
            continue
        mask = np.ones(n, dtype=bool)
        mask[f] = False
        Xtr, Ytr = X[mask], Y[mask]
        xm, ym = Xtr.mean(axis=0), Ytr.mean(axis=0)
        Xc, Yc = Xtr - xm, Ytr - ym
        k = X.shape[1]
        W = np.linalg.solve(Xc.T @ Xc + ridge_lambda * np.eye(k), Xc.T @ Yc)
        pred = (X[f] - xm) @ W + ym
        errors.append(_angular_errors(pred, Y[f]))
    return float(np.concatenate(errors).mean())


def g_correlation(actor_g, critic_g) -> float:
    """Mean per-component Pearson correlation between two gating streams.

    Bit-identical streams return exactly 1.0 (the shared-gating case).
    Zero-variance components are skipped with a warning; the mean is
    over the remaining ones.
    """
    A = actor_g.G if isinstance(actor_g, GDataset) else np.asarray(actor_g)
    B = critic_g.G if isinstance(critic_g, GDataset) else np.asarray(critic_g)
    if A.shape != B.shape:
        raise ShapeError("gating streams must be row-aligned with equal K")
    if np.array_equal(A, B):
        return 1.0
    Ac = A - A.mean(axis=0)
    Bc = B - B.mean(axis=0)
    va = np.einsum("nk,nk->k", Ac, Ac)
    vb = np.einsum("nk,nk->k", Bc, Bc)
    ok = (va > 0.0) & (vb > 0.0)
    skipped = int((~ok).sum())
    if skipped:
        warnings.warn(f"skipped {skipped} zero-variance gating components")
    if not ok.any():
        raise ProtocolError("all gating components have zero variance")
    cov = np.einsum("nk,nk->k", Ac[:, ok], Bc[:, ok])
    corr = cov / np.sqrt(va[ok] * vb[ok])
    return float(corr.mean())


# ---------------------------------------------------------------------------
# Latent sweep: behavior as a function of latent direction and amplitude.

@dataclass
class SweepResult:
    latent_directions: np.ndarray   # (n,), radians on the PCA plane
    amplitudes: np.ndarray          # (m,)
    move_direction: np.ndarray      # (m, n), radians
    mean_speed: np.ndarray          # (m, n)
    speed_p10: np.ndarray
    speed_p50: np.ndarray
    speed_p90: np.ndarray
    base_coeffs: np.ndarray         # the mean gating vector
    plane: np.ndarray               # (2, K) top PCA components


def g_sweep(model: BilinearAC, g_data, amplitudes=None,
            n_directions: int = 16, episode_len: int = 200) -> SweepResult:
    """Run frozen episodes with w = mean_G + A * (unit vector on the
    top-2 PCA plane of the recorded gating data), for each latent
    direction and amplitude; record movement direction and speed.

    The gating network is bypassed; a checksum guards that nothing is
    mutated.  Default amplitudes are {0.5, 1, 2} x the RMS distance of
    the data from its mean.
    """
    X = g_data.G if isinstance(g_data, GDataset) else np.asarray(g_data)
    p = pca(X, 2)
    mean_g = p.mean
    if amplitudes is None:
        rms = float(np.sqrt(np.mean(np.sum((X - mean_g) ** 2, axis=1))))
        amplitudes = [0.5 * rms, 1.0 * rms, 2.0 * rms]
    amplitudes = np.asarray(amplitudes, dtype=np.float64)
    betas = np.linspace(0.0, 2.0 * math.pi, n_directions, endpoint=False)
    nav = replace(envs.NavConfig(), episode_len=int(episode_len))
    before = params_checksum(model, "all")

    shape = (len(amplitudes), len(betas))
    move_dir = np.zeros(shape)
    mean_speed = np.zeros(shape)
    p10 = np.zeros(shape)
    p50 = np.zeros(shape)
    p90 = np.zeros(shape)
    task0 = envs.TaskDescriptor(0.0)
    neutral_goal = np.zeros(2)  # goal enters only through the swept coeffs
    for i, amp in enumerate(amplitudes):
        for j, beta in enumerate(betas):
            w = mean_g + amp * (math.cos(beta) * p.components[0]
                                + math.sin(beta) * p.components[1])
            log, _ = run_episode(model, nav, task0, coeffs=w,
                                 obs_goal=neutral_goal)
            total = log.position[-1]
            move_dir[i, j] = math.atan2(total[1], total[0])
            speeds = np.linalg.norm(log.velocity, axis=1)
            mean_speed[i, j] = float(speeds.mean())
            p10[i, j], p50[i, j], p90[i, j] = np.percentile(speeds, (10, 50, 90))
    if params_checksum(model, "all") != before:
        raise ContractViolation("parameters mutated during latent sweep")
    return SweepResult(betas, amplitudes, move_dir, mean_speed,
                       p10, p50, p90, mean_g, p.components.copy())


# ---------------------------------------------------------------------------
# CSV writers.

def write_pca_csv(path, result: PCAResult) -> None:
    k = len(result.mean)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["row", "explained_variance"] + [f"G_{i}" for i in range(k)])
        w.writerow(["mean", ""] + [format(v, ".9g") for v in result.mean])
        for i, comp in enumerate(result.components):
            w.writerow([f"component_{i}",
                        format(result.explained_variance[i], ".9g")]
                       + [format(v, ".9g") for v in comp])


def write_sweep_csv(path, result: SweepResult) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["latent_direction", "amplitude", "move_direction",
                    "mean_speed", "speed_p10", "speed_p50", "speed_p90"])
        for i, amp in enumerate(result.amplitudes):
            for j, beta in enumerate(result.latent_directions):
                w.writerow([format(beta, ".9g"), format(amp, ".9g"),
                            format(result.move_direction[i, j], ".9g"),
                            format(result.mean_speed[i, j], ".9g"),
                            format(result.speed_p10[i, j], ".9g"),
                            format(result.speed_p50[i, j], ".9g"),
                            format(result.speed_p90[i, j], ".9g")])
