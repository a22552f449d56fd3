import math

import numpy as np
import pytest

from bilinear_ac import analysis, envs
from bilinear_ac.errors import ProtocolError, ShapeError
from bilinear_ac.models import params_checksum

from conftest import make_tiny_model


def make_dataset(G, thetas=None):
    n = len(G)
    thetas = np.zeros(n) if thetas is None else thetas
    return analysis.GDataset(G=np.asarray(G, dtype=float), theta=thetas,
                             episode=np.zeros(n, dtype=np.int64),
                             step=np.arange(n, dtype=np.int64))


# ---------------------------------------------------------------------------
# PCA

def test_pca_line_in_k_space():
    rng = np.random.default_rng(0)
    direction = np.array([1.0, 2.0, -1.0, 0.5])
    direction /= np.linalg.norm(direction)
    t = rng.normal(size=200)
    X = np.outer(t, direction) + 3.0
    p = analysis.pca(X, 3)
    cos = abs(float(p.components[0] @ direction))
    assert cos == pytest.approx(1.0, abs=1e-10)
    assert np.all(p.explained_variance[1:] <= 1e-10)


def test_pca_isotropic_cloud_equal_variances():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(10_000, 4))
    p = analysis.pca(X, 4)
    ratio = p.explained_variance[0] / p.explained_variance[-1]
    assert ratio < 1.15  # equal up to sampling error at N = 1e4


def test_pca_matches_eigendecomposition_oracle():
    # independent route: eigh of the sample covariance
    rng = np.random.default_rng(2)
    X = rng.normal(size=(300, 6)) @ rng.normal(size=(6, 6))
    p = analysis.pca(X, 6)
    Xc = X - X.mean(axis=0)
    cov = Xc.T @ Xc / (len(X) - 1)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals, evecs = evals[order], evecs[:, order]
    np.testing.assert_allclose(p.explained_variance, evals, atol=1e-8)
    for i in range(6):
        proj_impl = Xc @ p.components[i]
        proj_oracle = Xc @ evecs[:, i]
        agree = min(np.max(np.abs(proj_impl - proj_oracle)),
                    np.max(np.abs(proj_impl + proj_oracle)))
        assert agree < 1e-8  # up to per-component sign


def test_pca_components_orthonormal():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(50, 5))
    p = analysis.pca(X, 5)
    gram = p.components @ p.components.T
    np.testing.assert_allclose(gram, np.eye(5), atol=1e-10)
    assert np.all(np.diff(p.explained_variance) <= 1e-12)


def test_pca_reconstruction_full_rank():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(40, 4))
    p = analysis.pca(X, 4)
    back = p.back_project(p.project(X))
    np.testing.assert_allclose(back, X, atol=1e-8)


def test_pca_too_few_directions_warns():
    X = np.random.default_rng(5).normal(size=(10, 3))
    with pytest.warns(UserWarning, match="available"):
        p = analysis.pca(X, 7)
    assert p.components.shape == (3, 3)
    with pytest.raises(ProtocolError):
        analysis.pca(X[:2], 7)


# ---------------------------------------------------------------------------
# direction decoding

def test_decoding_perfect_linear_embedding():
    rng = np.random.default_rng(6)
    thetas = rng.uniform(0, 2 * math.pi, size=400)
    G = np.zeros((400, 5))
    G[:, 0] = np.cos(thetas)
    G[:, 1] = np.sin(thetas)
    err = analysis.direction_decoding(make_dataset(G, thetas))
    assert err < 0.01


def test_decoding_pure_noise_matches_constant_predictor():
    rng = np.random.default_rng(7)
    n = 4000
    thetas = rng.uniform(0, 2 * math.pi, size=n)
    G = rng.normal(size=(n, 6))  # independent of theta
    err = analysis.direction_decoding(make_dataset(G, thetas))
    # a constant predictor against uniform directions averages pi/2
    assert abs(err - math.pi / 2) < 0.1 * (math.pi / 2)


def test_decoding_invariant_to_invertible_reparameterization():
    rng = np.random.default_rng(8)
    thetas = rng.uniform(0, 2 * math.pi, size=600)
    G = np.stack([np.cos(thetas), np.sin(thetas),
                  rng.normal(size=600) * 0.1], axis=1)
    M = rng.normal(size=(3, 3)) + 3.0 * np.eye(3)
    ds1 = make_dataset(G, thetas)
    ds2 = make_dataset(G @ M.T, thetas)
    e1 = analysis.direction_decoding(ds1, ridge_lambda=1e-6)
    e2 = analysis.direction_decoding(ds2, ridge_lambda=1e-6)
    assert abs(e1 - e2) < 0.02


def test_decoding_deterministic_given_seed():
    rng = np.random.default_rng(9)
    thetas = rng.uniform(0, 2 * math.pi, size=300)
    G = rng.normal(size=(300, 4)) + np.stack(
        [np.cos(thetas)] * 4, axis=1)
    ds = make_dataset(G, thetas)
    assert analysis.direction_decoding(ds, seed=3) == \
        analysis.direction_decoding(ds, seed=3)
    assert analysis.direction_decoding(ds, seed=3) != \
        analysis.direction_decoding(ds, seed=4)


def test_decoding_single_direction_is_protocol_error():
    G = np.random.default_rng(10).normal(size=(50, 3))
    with pytest.raises(ProtocolError):
        analysis.direction_decoding(make_dataset(G, np.zeros(50)))


# ---------------------------------------------------------------------------
# gating correlation

def test_g_correlation_identical_streams_exactly_one():
    X = np.random.default_rng(11).normal(size=(100, 4))
    assert analysis.g_correlation(X, X.copy()) == 1.0


def test_g_correlation_negated_stream():
    X = np.random.default_rng(12).normal(size=(100, 4))
    assert analysis.g_correlation(X, -X) == pytest.approx(-1.0, abs=1e-12)


def test_g_correlation_independent_streams_near_zero():
    rng = np.random.default_rng(13)
    A = rng.normal(size=(10_000, 4))
    B = rng.normal(size=(10_000, 4))
    assert abs(analysis.g_correlation(A, B)) < 0.05


def test_g_correlation_skips_zero_variance_columns():
    rng = np.random.default_rng(14)
    A = rng.normal(size=(50, 3))
    B = rng.normal(size=(50, 3))
    A[:, 1] = 2.0  # constant column
    with pytest.warns(UserWarning, match="skipped 1"):
        v = analysis.g_correlation(A, B)
    assert -1.0 <= v <= 1.0
    with pytest.raises(ProtocolError):
        analysis.g_correlation(np.ones((10, 2)), rng.normal(size=(10, 2)))


def test_g_correlation_shape_mismatch():
    with pytest.raises(ShapeError):
        analysis.g_correlation(np.zeros((5, 2)), np.zeros((5, 3)))


# ---------------------------------------------------------------------------
# latent sweep

@pytest.fixture(scope="module")
def sweep_setup():
    model = make_tiny_model(obs_dim=envs.OBS_DIM, n_basis=4)
    rng = np.random.default_rng(15)
    G = rng.normal(size=(100, 4))
    return model, G


def test_g_sweep_amplitude_zero_reproduces_mean_behavior(sweep_setup):
    model, G = sweep_setup
    res = analysis.g_sweep(model, G, amplitudes=[0.0], n_directions=5,
                           episode_len=30)
    assert np.all(res.move_direction[0] == res.move_direction[0, 0])
    assert np.all(res.mean_speed[0] == res.mean_speed[0, 0])


def test_g_sweep_grid_complete_and_deterministic(sweep_setup):
    model, G = sweep_setup
    res1 = analysis.g_sweep(model, G, n_directions=6, episode_len=25)
    res2 = analysis.g_sweep(model, G, n_directions=6, episode_len=25)
    assert res1.move_direction.shape == (3, 6)  # 3 default amplitudes
    assert np.all(np.isfinite(res1.mean_speed))
    assert np.all(np.isfinite(res1.move_direction))
    np.testing.assert_array_equal(res1.move_direction, res2.move_direction)
    np.testing.assert_array_equal(res1.speed_p50, res2.speed_p50)


def test_g_sweep_never_mutates_checkpoint(sweep_setup):
    model, G = sweep_setup
    before = params_checksum(model)
    analysis.g_sweep(model, G, amplitudes=[0.5, 1.0], n_directions=4,
                     episode_len=20)
    assert params_checksum(model) == before


def test_g_sweep_default_amplitudes_scale_with_rms(sweep_setup):
    model, G = sweep_setup
    res = analysis.g_sweep(model, G, n_directions=3, episode_len=10)
    rms = float(np.sqrt(np.mean(np.sum((G - G.mean(0)) ** 2, axis=1))))
    np.testing.assert_allclose(res.amplitudes,
                               [0.5 * rms, 1.0 * rms, 2.0 * rms])


# ---------------------------------------------------------------------------
# CSV and dataset plumbing

def test_dataset_from_logs():
    rec1, rec2 = envs.EpisodeRecorder(), envs.EpisodeRecorder()
    for t in range(5):
        rec1.add(t, 0.1, [0, 0], [0, 0], [0, 0], 1.0, [1.0, 2.0])
        rec2.add(t, 0.2, [0, 0], [0, 0], [0, 0], 1.0, [3.0, 4.0])
    ds = analysis.dataset_from_logs([rec1.finish(), rec2.finish()])
    assert len(ds) == 10
    assert set(ds.episode) == {0, 1}
    assert ds.G.shape == (10, 2)


def test_write_csv_outputs(tmp_path, sweep_setup):
    model, G = sweep_setup
    p = analysis.pca(G, 3)
    analysis.write_pca_csv(tmp_path / "pca.csv", p)
    lines = (tmp_path / "pca.csv").read_text().splitlines()
    assert lines[0].startswith("row,explained_variance,G_0")
    assert len(lines) == 1 + 1 + 3  # header, mean, three components

    res = analysis.g_sweep(model, G, amplitudes=[1.0], n_directions=4,
                           episode_len=10)
    analysis.write_sweep_csv(tmp_path / "sweep.csv", res)
    lines = (tmp_path / "sweep.csv").read_text().splitlines()
    assert len(lines) == 1 + 4
    assert lines[0] == ("latent_direction,amplitude,move_direction,"
                       "mean_speed,speed_p10,speed_p50,speed_p90")
