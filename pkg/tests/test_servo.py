import csv
import io
import json

import numpy as np
import pytest

from flowservo.control.base import V_MAX
from flowservo.geometry import DomainError, Pose, VelocityScrew
from flowservo.servo import (CONVERGED, ERROR, LOST_TARGET, MAX_STEPS, Scenario, inject_noise,
                             run_episode)


def _offset(t, deg=0.0):
    axis = np.array([1.0, -1.0, 0.5])
    d = np.array([1.0, 1.0, -1.0])
    return Pose.from_rotvec(axis / np.linalg.norm(axis) * np.radians(deg), t * d / np.linalg.norm(d))


@pytest.fixture(scope="module")
def ibvs_run():
    sc = Scenario(Pose.from_rotvec([0, 0, 0], [0.2, 0, 0]), Pose.identity(), controller="ibvs")
    return run_episode(sc, 0)


@pytest.fixture(scope="module")
def lstm_run():
    return run_episode(Scenario(_offset(0.2, 8.0), Pose.identity(), controller="lstm_mpc", train_iters=50), 3)


def test_start_at_goal_converges_immediately():
    rec = run_episode(Scenario(Pose.identity(), Pose.identity(), controller="ibvs"), 0)
    assert rec.status == CONVERGED and rec.iterations == 0
    assert rec.trajectory_length == 0.0


def test_ibvs_x_offset(ibvs_run):
    rec = ibvs_run
    assert rec.status == CONVERGED
    assert np.all(np.diff(rec.photometric[3:]) <= 0)
    assert rec.final_t_err < 0.01


@pytest.mark.slow
def test_noisy_recurrent_mpc():
    rec = run_episode(Scenario(_offset(0.3, 10.0), Pose.identity(), controller="lstm_mpc", noise_std=0.01), 0)
    assert rec.status == CONVERGED
    assert rec.final_t_err < 0.02


def test_record_invariants(lstm_run):
    rec = lstm_run
    t = np.array([p.translation for p in rec.poses])
    direct = sum(np.linalg.norm(t[k + 1] - t[k]) for k in range(len(t) - 1))
    assert abs(rec.trajectory_length - direct) < 1e-12
    assert rec.iterations <= 300
    assert len(rec.poses) == rec.iterations + 1
    assert len(rec.loss_traces) == rec.iterations
    assert all(len(tr) == 50 for tr in rec.loss_traces)
    assert np.all(np.abs(np.array(rec.commands)) <= V_MAX)


def test_refreshed_depths_track_rendered_depth(lstm_run):
    errs = np.array(lstm_run.depth_rel_error)
    errs = errs[np.isfinite(errs)]
    assert errs.size > 0
    assert np.max(errs) < 0.10


def test_episode_is_reproducible(lstm_run):
    again = run_episode(Scenario(_offset(0.2, 8.0), Pose.identity(), controller="lstm_mpc", train_iters=50), 3)
    assert again.to_json(include_timing=False) == lstm_run.to_json(include_timing=False)


def test_max_steps_status():
    rec = run_episode(Scenario(_offset(0.3, 10.0), Pose.identity(), controller="ibvs", max_steps=2), 0)
    assert rec.status == MAX_STEPS and rec.iterations == 2


def test_no_overlap_is_lost_target():
    away = Pose.from_rotvec([0, np.pi, 0], [0, 0, 0])
    rec = run_episode(Scenario(away, Pose.identity(), controller="ibvs"), 0)
    assert rec.status == LOST_TARGET
    assert rec.iterations == 0 and rec.message


def test_flo_directory_replays_oracle(tmp_path):
    sc = Scenario(_offset(0.1, 3.0), Pose.identity(), controller="ibvs")
    first = run_episode(sc, 1, dump_flow_dir=tmp_path)
    assert (tmp_path / "target_00000.flo").exists() and (tmp_path / "proxy_00001.flo").exists()
    replay = run_episode(Scenario(_offset(0.1, 3.0), Pose.identity(), controller="ibvs",
                                  flow_source=str(tmp_path)), 1)
    assert replay.to_json(include_timing=False) == first.to_json(include_timing=False)


def test_missing_flow_file_is_an_error(tmp_path):
    rec = run_episode(Scenario(_offset(0.1), Pose.identity(), controller="ibvs", flow_source=str(tmp_path)), 0)
    assert rec.status == ERROR and "target_00000.flo" in rec.message


def test_missing_flow_directory(tmp_path):
    with pytest.raises(FileNotFoundError):
        run_episode(Scenario(_offset(0.1), Pose.identity(), flow_source=str(tmp_path / "nope")), 0)


def test_scenario_validation():
    for bad in (dict(max_steps=0), dict(eps=0.0), dict(dt=-1.0), dict(noise_std=-0.1), dict(controller="x")):
        with pytest.raises(DomainError):
            Scenario(Pose.identity(), Pose.identity(), **bad)


def test_inject_noise_zero_std_is_identity():
    v = VelocityScrew.from_vector([0.1, -0.2, 0.3, 0.0, 0.05, -0.4])
    out = inject_noise(v, 0.0, np.random.default_rng(0))
    np.testing.assert_array_equal(out.as_vector(), v.as_vector())


def test_inject_noise_mean_and_box():
    v = np.array([0.1, -0.2, 0.05, 0.0, 0.05, -0.1])
    rng = np.random.default_rng(0)
    n = 100_000
    draws = np.array([inject_noise(VelocityScrew.from_vector(v), 0.01, rng).as_vector() for _ in range(n)])
    assert np.all(np.abs(draws.mean(axis=0) - v) < 3 * 0.01 / np.sqrt(n))
    big = [inject_noise(VelocityScrew.from_vector([0.49] * 6), 1.0, rng).as_vector() for _ in range(200)]
    assert np.all(np.abs(big) <= V_MAX)
    with pytest.raises(DomainError):
        inject_noise(VelocityScrew.zero(), -1.0, rng)


def test_record_serializations(lstm_run):
    rec = lstm_run
    d = json.loads(rec.to_json())
    assert d["status"] == rec.status and d["iterations"] == rec.iterations
    assert len(d["trajectory"]) == len(rec.poses) and "wall_ms" in d
    assert "wall_ms" not in json.loads(rec.to_json(include_timing=False))
    rows = list(csv.reader(io.StringIO(rec.to_csv())))
    assert rows[0] == ["step", "t_err", "r_err", "photometric", "wall_ms", "loss"]
    assert len(rows) == len(rec.poses) + 1
    train = list(csv.reader(io.StringIO(rec.training_csv())))
    assert train[0] == ["step", "iteration", "loss"] and len(train) == 1 + 50 * rec.iterations
    traj = list(csv.reader(io.StringIO(rec.trajectory_csv())))
    assert traj[0] == ["step", "x", "y", "z"]
