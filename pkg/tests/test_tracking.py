import math

import numpy as np
import pytest

from quadrl.dynamics import QuadState
from quadrl.env import EnvConfig
from quadrl.tracking import (
    PidTracker,
    PolicyTracker,
    TrackingLog,
    Trajectory,
    circle_trajectory,
    compare,
    rmse,
    run_tracking,
    tracking_errors,
)


def constant_offset_log(offset, n=50):
    log = TrackingLog(dt=0.01)
    for k in range(n):
        pd = circle_trajectory(k * 0.01, 6.0)
        log.append(k * 0.01, pd, pd + np.asarray(offset), np.zeros(3), np.zeros(4))
    return log


class TestCircle:
    def test_start(self):
        np.testing.assert_allclose(circle_trajectory(0.0, 6.0), [1.0, 0.0, 1.0], atol=1e-15)

    def test_quarter(self):
        np.testing.assert_allclose(circle_trajectory(1.5, 6.0), [0.0, 1.0, 1.0], atol=1e-15)

    def test_closure(self):
        np.testing.assert_allclose(circle_trajectory(6.0, 6.0), [1.0, 0.0, 1.0], atol=1e-12)

    def test_rejects_bad_period(self):
        with pytest.raises(ValueError):
            circle_trajectory(0.0, 0.0)

    def test_takeoff_start_on_ground(self):
        tr = Trajectory(takeoff_time=2.0)
        np.testing.assert_allclose(tr.start(), [1.0, 0.0, 0.0])
        np.testing.assert_allclose(tr.position(1.0), [1.0, 0.0, 1.0])


class TestRmse:
    def test_zero_error(self):
        assert rmse(constant_offset_log([0, 0, 0])) == (0.0, 0.0)

    def test_planar_offset(self):
        e, e_xy = rmse(constant_offset_log([0.3, 0.4, 0.0]))
        assert abs(e - math.sqrt(0.25 / 3)) < 1e-12
        assert abs(e_xy - math.sqrt(0.125)) < 1e-12
        assert abs(e - 0.2887) < 1e-4 and abs(e_xy - 0.3536) < 1e-4

    def test_vertical_offset(self):
        e, e_xy = rmse(constant_offset_log([0.0, 0.0, 0.3]))
        assert e_xy == 0.0
        assert abs(e - math.sqrt(0.09 / 3)) < 1e-12
        assert abs(e - 0.1732) < 1e-4

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            rmse(TrackingLog(dt=0.01))

    def test_transient_excluded(self):
        log = constant_offset_log([0, 0, 0], n=10)
        log.position[0] = log.position[0] + 5.0
        assert rmse(log, transient=0.005) == (0.0, 0.0)

    def test_early_crash_scored_whole(self):
        log = constant_offset_log([0.3, 0.4, 0.0], n=10)
        assert tracking_errors(log, 1.0) == rmse(log, 0.0)
        long = constant_offset_log([0.3, 0.4, 0.0], n=200)
        assert tracking_errors(long, 1.0) == rmse(long, 1.0)

    def test_planar_bound_on_random_logs(self):
        rng = np.random.default_rng(0)
        for _ in range(10_000):
            n = int(rng.integers(1, 20))
            log = TrackingLog(dt=0.01)
            for k in range(n):
                log.append(k * 0.01, rng.normal(size=3), rng.normal(size=3) * rng.uniform(0, 3, 3), np.zeros(3),
                           np.zeros(4))
            e, e_xy = rmse(log)
            assert e_xy <= e * math.sqrt(1.5) + 1e-12

    def test_permutation_and_scaling(self):
        rng = np.random.default_rng(1)
        pd, p = rng.normal(size=(30, 3)), rng.normal(size=(30, 3))

        def build(pd, p):
            log = TrackingLog(dt=0.01)
            for k in range(len(p)):
                log.append(k * 0.01, pd[k], p[k], np.zeros(3), np.zeros(4))
            return rmse(log)

        base = build(pd, p)
        perm = rng.permutation(30)
        np.testing.assert_allclose(build(pd[perm], p[perm]), base, rtol=1e-12)
        np.testing.assert_allclose(build(pd, pd + 3.0 * (p - pd)), 3.0 * np.array(base), rtol=1e-12)


class Teleport:
    """Reference follower that overwrites the simulator state after every step."""

    def __init__(self, trajectory):
        self.trajectory = trajectory

    def reset(self):
        pass

    def action(self, obs, state, target, env):
        return np.zeros(4)

    def after_step(self, env, t):
        s = env.state
        env.state = QuadState(self.trajectory.position(t), np.zeros(3), np.eye(3), np.zeros(3), s.rotors)


class Frozen:
    """Policy that never moves: used to pin down the shifted-observation contract."""

    def __init__(self):
        self.seen = []

    def __call__(self, obs):
        self.seen.append(obs[:3].copy())
        return np.zeros(4)


class TestRunTracking:
    def test_oracle_has_zero_error(self):
        tr = Trajectory(duration=3.0)
        log = run_tracking(Teleport(tr), tr, seed=0)
        assert not log.crashed
        assert rmse(log) == (0.0, 0.0)

    def test_timestamps_uniform(self):
        tr = Trajectory(duration=1.0)
        log = run_tracking(PidTracker(), tr, seed=0)
        np.testing.assert_allclose(np.diff(log.t), 0.01, atol=1e-12)
        assert len(log) == 100

    def test_policy_sees_shifted_position(self):
        cfg = EnvConfig(noise_position=0.0, noise_rotation=0.0, noise_velocity=0.0, noise_omega=0.0)
        tr = Trajectory(duration=0.1)
        pol = Frozen()
        run_tracking(PolicyTracker(pol), tr, cfg, seed=0)
        # at t=0 the drone sits exactly on the setpoint
        np.testing.assert_allclose(pol.seen[0], 0.0, atol=1e-15)

    def test_setpoint_held_at_50hz(self):
        seen = []

        class Spy(PidTracker):
            def action(self, obs, state, target, env):
                seen.append(target)
                return super().action(obs, state, target, env)

        run_tracking(Spy(), Trajectory(duration=0.1), seed=0)
        for k in range(0, 10, 2):
            np.testing.assert_array_equal(seen[k], seen[k + 1])
        for k in range(0, 8, 2):
            assert not np.array_equal(seen[k], seen[k + 2])

    def test_determinism(self):
        tr = Trajectory(duration=1.0)
        a = run_tracking(PidTracker(), tr, seed=4)
        b = run_tracking(PidTracker(), tr, seed=4)
        np.testing.assert_array_equal(np.asarray(a.position), np.asarray(b.position))

    def test_crash_marker(self):
        tr = Trajectory(duration=3.0)
        log = run_tracking(PolicyTracker(lambda obs: -np.ones(4)), tr, seed=0)
        assert log.crashed and len(log) < 300

    def test_csv_round_trip(self, tmp_path):
        log = run_tracking(PolicyTracker(lambda obs: -np.ones(4)), Trajectory(duration=3.0), seed=0)
        log.to_csv(tmp_path / "a.csv")
        back = TrackingLog.from_csv(tmp_path / "a.csv", 0.01)
        assert back.crashed == log.crashed
        assert back.t == log.t
        np.testing.assert_array_equal(np.asarray(back.position), np.asarray(log.position))
        np.testing.assert_array_equal(np.asarray(back.action), np.asarray(log.action))
        header = (tmp_path / "a.csv").read_text().splitlines()[0]
        assert header == "t,xd,yd,zd,x,y,z,vx,vy,vz,a1,a2,a3,a4"


class TestCompare:
    def test_pid_completes_circle(self, tmp_path):
        tr = Trajectory()
        report, logs = compare({"pid": PidTracker()}, tr, seed=0)
        (res,) = report.results
        assert not res.crashed and res.samples == 1200
        assert (res.e, res.e_xy) == rmse(logs["pid"], 1.0)
        assert res.e_xy < 0.5
        report.to_csv(tmp_path / "c.csv")
        assert (tmp_path / "c.csv").read_text().startswith("controller,e,e_xy,crashed")
        assert "pid" in report.table()

    def test_same_seed_same_report(self):
        tr = Trajectory(duration=2.0)
        r1, _ = compare({"pid": PidTracker()}, tr, seed=3)
        r2, _ = compare({"pid": PidTracker()}, tr, seed=3)
        assert r1.results == r2.results
