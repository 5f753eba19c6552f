"""Trajectory error, surface error, and the noise-study harness."""

import numpy as np
import pytest

from implifusion.camera import se3_exp
from implifusion.config import RunConfig
from implifusion.evaluation import (associate_by_timestamp, ate_rmse,
                                    format_study_csv, run_noise_study,
                                    surface_error, surface_error_brute)
from implifusion.synthetic import make_scene, synthetic_intrinsics


def _orbit_trajectory(n=50, seed=0):
    rng = np.random.default_rng(seed)
    traj = []
    for k in range(n):
        a = 2 * np.pi * k / n
        pose = se3_exp(np.array([0.5 * np.sin(a), 0.3 * np.cos(a), 0.1 * a,
                                 0.2 * np.sin(a), 0.1 * np.cos(a), a / 10]))
        traj.append((k / 30.0, pose))
    return traj


def test_ate_zero_on_identical_trajectories():
    traj = _orbit_trajectory()
    err = ate_rmse(traj, traj)
    assert err.rmse == pytest.approx(0.0, abs=1e-12)
    assert err.matched == len(traj)


def test_ate_absorbs_rigid_offset():
    traj = _orbit_trajectory()
    offset = se3_exp(np.array([0.4, -0.2, 0.9, 0.3, -0.5, 0.7]))
    moved = [(ts, offset @ pose) for ts, pose in traj]
    err = ate_rmse(moved, traj)
    assert err.rmse < 1e-9
    assert err.max < 1e-9


def test_ate_matches_noise_magnitude():
    rng = np.random.default_rng(42)
    n = 1000
    traj = [(k / 30.0, se3_exp(rng.normal(scale=0.5, size=6)))
            for k in range(n)]
    sigma_p = 0.01
    noisy = []
    for ts, pose in traj:
        p = pose.copy()
        p[:3, 3] = p[:3, 3] + rng.normal(scale=sigma_p, size=3)
        noisy.append((ts, p))
    err = ate_rmse(noisy, traj)
    expected = sigma_p * np.sqrt(3.0)
    assert abs(err.rmse - expected) / expected < 0.1


def test_ate_invariant_to_common_motion():
    traj = _orbit_trajectory()
    rng = np.random.default_rng(5)
    noisy = [(ts, pose @ se3_exp(rng.normal(scale=1e-3, size=6)))
             for ts, pose in traj]
    base = ate_rmse(noisy, traj).rmse
    offset = se3_exp(np.array([-1.0, 2.0, 0.5, 0.4, 0.2, -0.6]))
    moved_est = [(ts, offset @ pose) for ts, pose in noisy]
    moved_gt = [(ts, offset @ pose) for ts, pose in traj]
    assert ate_rmse(moved_est, moved_gt).rmse == pytest.approx(base, abs=1e-9)


def test_ate_needs_three_matches():
    traj = _orbit_trajectory(2)
    with pytest.raises(ValueError):
        ate_rmse(traj, traj)


def test_association_window_and_uniqueness():
    est_t = [0.0, 0.1, 0.2, 1.0]
    gt_t = [0.005, 0.095, 0.5]
    pairs = associate_by_timestamp(est_t, gt_t, max_dt=0.02)
    assert pairs == [(0, 0), (1, 1)]
    # one gt stamp cannot serve two estimates
    pairs = associate_by_timestamp([0.0, 0.001], [0.0005], max_dt=0.02)
    assert len(pairs) == 1


def test_surface_error_plane_oracle():
    scene = make_scene("plane", n_frames=2)
    pts = np.array([[0.0, 0.0, 2.001], [0.3, -0.2, 2.0]])
    err = surface_error(pts, scene)
    assert err["max"] == pytest.approx(0.001, abs=1e-12)
    assert err["median"] == pytest.approx(0.0005, abs=1e-12)
    assert err["rms"] == pytest.approx(0.001 / np.sqrt(2.0), abs=1e-12)
    assert err["n"] == 2


def test_surface_error_ignores_nonfinite_rows():
    scene = make_scene("plane", n_frames=2)
    pts = np.array([[0.0, 0.0, 2.0], [np.nan, 0.0, 2.0]])
    assert surface_error(pts, scene)["n"] == 1
    with pytest.raises(ValueError):
        surface_error(np.full((4, 3), np.nan), scene)


def test_brute_force_distance_agrees():
    scene = make_scene("sphere", n_frames=2)
    rng = np.random.default_rng(9)
    pts = np.array([0.0, 0.0, 1.5]) + rng.normal(scale=0.4, size=(300, 3))
    a = surface_error(pts, scene)
    b = surface_error_brute(pts, scene, n_samples=400000, seed=0)
    assert abs(a["rms"] - b["rms"]) < 2e-3
    assert abs(a["median"] - b["median"]) < 2e-3


def test_study_rows_and_csv_schema(tmp_path):
    scene = make_scene("plane", n_frames=4)
    intr = synthetic_intrinsics(80, 60)
    cfg = RunConfig(width=80, height=60)
    csv_path = str(tmp_path / "study.csv")
    rows = run_noise_study(scene, intr, sigmas=(0.0,), methods=("hrbf",),
                           config=cfg, seed=0, eval_stride=2,
                           include_tracking=False, csv_path=csv_path)
    assert len(rows) == 1
    r = rows[0]
    assert r["method"] == "hrbf" and r["sigma"] == 0.0
    assert np.isfinite(r["rms_pred_m"]) and r["rms_pred_m"] < 0.01
    text = open(csv_path).read()
    assert text == format_study_csv(rows)
    header = text.splitlines()[0]
    assert header == "sigma,method,rms_pred_m,ate_rmse_m,frames_lost,frames_total"
    assert len(text.splitlines()) == 2
