"""Acceptance suite: one test per criterion, summarized at the end of the pytest run.

Criteria 6-8 share one default-config 300k-step training run (about 35 minutes
on a single desktop core); it runs once per session.
"""

import csv
import math
import time

import numpy as np
import pytest

from quadrl.cli import EXIT_OK, main
from quadrl.dynamics import QuadParams, QuadState, advance, euler_to_rotation, integrate_step, rotor_wrench
from quadrl.env import EnvConfig, HoverEnv, RewardParams, reward
from quadrl.export import compile_and_load, generate_inference_source, load_weights, save_weights
from quadrl.nn import Mlp, backward, forward
from quadrl.td3 import Td3Config, evaluate_policy, train
from quadrl.toy import DoubleIntegratorEnv, ToyConfig
from quadrl.tracking import (
    PolicyTracker,
    TrackingLog,
    Trajectory,
    circle_trajectory,
    rmse,
    run_tracking,
    tracking_errors,
)

P = QuadParams()


def criterion(n, title):
    return pytest.mark.criterion(n, title)


# ---------------------------------------------------------------- 1
@criterion(1, "observation has 146 entries in [p, R, v, omega, history] order")
def test_c1_observation_contract():
    cfg = EnvConfig(history=32, noise_position=0, noise_rotation=0, noise_velocity=0, noise_omega=0)
    env = HoverEnv(cfg=cfg)
    s, obs = env.reset(seed=0)
    assert obs.shape == (18 + 4 * 32,) == (146,)
    a = np.array([0.1, 0.2, 0.3, 0.4])
    res = env.step(a)
    s = res.state
    o = res.observation
    np.testing.assert_array_equal(o[0:3], s.position)
    np.testing.assert_array_equal(o[3:12], s.rotation.reshape(-1))
    np.testing.assert_array_equal(o[12:15], s.velocity)
    np.testing.assert_array_equal(o[15:18], s.omega)
    np.testing.assert_array_equal(o[18:22], a)
    np.testing.assert_array_equal(o[22:], 0.0)


# ---------------------------------------------------------------- 2
def _hand_reward(p, R, v, a, lam=2.0, eta_p=2.5, eta_r=2.5, eta_v=0.05, delta_a=0.05, base=0.35):
    c = (R[0][0] + R[1][1] + R[2][2] - 1.0) / 2.0
    r = lam
    r -= eta_p * (p[0] ** 2 + p[1] ** 2 + p[2] ** 2)
    r -= eta_r * (1.0 - c * c)
    r -= eta_v * (v[0] ** 2 + v[1] ** 2 + v[2] ** 2)
    r -= delta_a * sum((x - base) ** 2 for x in a)
    return r


@criterion(2, "reward examples 2.0/-0.5/-0.5 and 1000 random states vs hand evaluator to 1e-12")
def test_c2_reward_oracle():
    rp = RewardParams()
    base = np.full(4, 0.35)

    def state(p=(0, 0, 0), R=None, v=(0, 0, 0)):
        return QuadState(np.array(p, float), np.array(v, float), np.eye(3) if R is None else R, np.zeros(3),
                         np.zeros(4))

    examples = [
        (state(), 2.0),
        (state(p=(1, 0, 0)), -0.5),
        (state(R=euler_to_rotation(math.pi / 2, 0, 0)), -0.5),
    ]
    for s, expected in examples:
        assert abs(reward(s, base, rp) - expected) < 1e-12
        assert abs(_hand_reward(s.position, s.rotation.tolist(), s.velocity, base) - expected) < 1e-12
    rng = np.random.default_rng(2024)
    for _ in range(1000):
        p, v = rng.uniform(-2, 2, 3), rng.uniform(-3, 3, 3)
        R = euler_to_rotation(*rng.uniform(-math.pi, math.pi, 3))
        a = rng.uniform(-1, 1, 4)
        got = reward(state(p, R, v), a, rp)
        assert abs(got - _hand_reward(p.tolist(), R.tolist(), v.tolist(), a.tolist())) < 1e-12


# ---------------------------------------------------------------- 3
@criterion(3, "dynamics properties: free fall, zero torque, hover drift, SO(3), 4th order")
def test_c3_dynamics_properties():
    t0 = time.perf_counter()
    g = np.array(P.gravity)

    # free fall: RK4 is exact on the quadratic trajectory
    p0, v0 = np.array([0.2, -0.1, 1.0]), np.array([0.4, 0.1, -0.3])
    s = QuadState(p0, v0, euler_to_rotation(0.3, 0.2, -0.1), np.array([0.2, 0.1, -0.3]), np.zeros(4))
    for k in range(1, 101):
        s = integrate_step(s, np.zeros(4), 0.001, P)
        t = k * 0.001
        assert np.max(np.abs(s.position - (p0 + v0 * t + 0.5 * g * t * t))) < 1e-12
        assert np.max(np.abs(s.velocity - (v0 + g * t))) < 1e-12

    # equal RPM: zero torque
    for w in np.linspace(0, P.omega_max, 11):
        assert np.all(rotor_wrench(np.full(4, w), P).torque == 0.0)

    # hover: drift below 1e-9 over one second
    out = advance(QuadState.hover(P), np.full(4, P.hover_omega), 0.001, 1000, P)
    assert np.linalg.norm(out.position) < 1e-9 and np.linalg.norm(out.velocity) < 1e-9

    # SO(3) closure under an aggressive tumble
    rng = np.random.default_rng(0)
    s = QuadState(np.zeros(3), np.zeros(3), euler_to_rotation(1.0, -0.5, 2.0), np.array([8.0, -6.0, 3.0]),
                  np.full(4, P.hover_omega))
    for _ in range(300):
        s = advance(s, rng.uniform(0, P.omega_max, 4), 0.001, 10, P)
        assert np.max(np.abs(s.rotation.T @ s.rotation - np.eye(3))) < 1e-9
        assert abs(np.linalg.det(s.rotation) - 1.0) < 1e-9

    # fourth-order convergence: halving dt shrinks the error ~16x
    s0 = QuadState(np.zeros(3), np.array([0.3, -0.2, 0.1]), euler_to_rotation(0.3, -0.2, 0.5),
                   np.array([3.0, -2.0, 1.5]), np.array([2000.0, 2300.0, 2100.0, 1900.0]))

    def run(dt):
        return advance(s0, s0.rotors, dt, int(round(0.04 / dt)), P)

    ref = run(0.0005)

    def err(s):
        return max(np.max(np.abs(getattr(s, f) - getattr(ref, f))) for f in ("position", "velocity", "rotation",
                                                                            "omega"))

    ratio = err(run(0.004)) / err(run(0.002))
    print(f"convergence ratio {ratio:.2f}")
    assert 12 <= ratio <= 20
    assert time.perf_counter() - t0 < 10


# ---------------------------------------------------------------- 4
@criterion(4, "100 random nets: parameter gradients vs central differences, rel err < 1e-4")
def test_c4_gradient_correctness():
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    worst = 0.0
    h = 1e-5
    for _ in range(100):
        sizes = [int(rng.integers(2, 7)), int(rng.integers(2, 7)), int(rng.integers(2, 7)), int(rng.integers(1, 4))]
        net = Mlp(sizes, rng)
        x = rng.normal(size=(int(rng.integers(1, 4)), sizes[0]))
        g_out = rng.normal(size=(x.shape[0], sizes[-1]))
        _, cache = forward(net, x)
        analytic = backward(net, cache, g_out)
        base = net.params.copy()
        fd = np.empty_like(base)
        for i in range(base.size):
            p = base.copy()
            p[i] += h
            net.set_params(p)
            up = np.sum(forward(net, x)[0] * g_out)
            p[i] -= 2 * h
            net.set_params(p)
            down = np.sum(forward(net, x)[0] * g_out)
            fd[i] = (up - down) / (2 * h)
        net.set_params(base)
        # relative error with a floor so exactly-zero gradients do not divide by zero
        rel = np.abs(analytic - fd) / np.maximum(np.maximum(np.abs(analytic), np.abs(fd)), 1e-6)
        worst = max(worst, float(rel.max()))
    print(f"max relative error {worst:.2e}")
    assert worst < 1e-4
    assert time.perf_counter() - t0 < 30


# ---------------------------------------------------------------- 5
TOY_TD3 = Td3Config(total_steps=100_000, warmup_steps=5_000, hidden=(16, 16), eval_every=5_000, eval_episodes=10,
                    seed=0)


@pytest.mark.slow
@criterion(5, "toy double integrator: last-10% eval return > 90% of ceiling, seed-deterministic")
def test_c5_toy_trainer():
    toy = ToyConfig()
    ceiling = toy.survival * toy.episode_steps
    runs = []
    for _ in range(2):
        agent, curve = train(DoubleIntegratorEnv(toy, seed=0), TOY_TD3, DoubleIntegratorEnv(toy, seed=1))
        runs.append((curve, agent.actor.params.copy()))
    curve = runs[0][0]
    tail = [r.mean_return for r in curve if r.step > 0.9 * TOY_TD3.total_steps]
    print(f"tail mean return {np.mean(tail):.2f} (threshold {0.9 * ceiling})")
    assert np.mean(tail) > 0.9 * ceiling
    rows = [np.array([[r.step, r.mean_return, r.mean_pos_error, r.critic_loss, r.actor_loss] for r in c])
            for c, _ in runs]
    np.testing.assert_array_equal(rows[0], rows[1])
    np.testing.assert_array_equal(runs[0][1], runs[1][1])


# ---------------------------------------------------------------- 6-8
@pytest.fixture(scope="session")
def hover_run(tmp_path_factory):
    """Default configuration, 300k steps, through the CLI."""
    out = tmp_path_factory.mktemp("hover_run")
    t0 = time.perf_counter()
    assert main(["train", "--out", str(out)]) == EXIT_OK
    print(f"training wall clock {time.perf_counter() - t0:.0f} s")
    return out


@pytest.mark.slow
@criterion(6, "300k-step hover training: >= 80% of 50 seeded episodes end with |p| < 0.2 m")
def test_c6_hover_training(hover_run):
    net = load_weights(hover_run / "actor_final.qrlw")
    res = evaluate_policy(lambda o: np.clip(net(o), -1, 1), HoverEnv(), 50, seed=100_000)
    errs = np.array(res.final_position_errors)
    frac = float(np.mean(errs < 0.2))
    print(f"fraction below 0.2 m: {frac:.2f}; median final |p| {np.median(errs):.3f}")
    assert frac >= 0.8


@pytest.mark.slow
@criterion(7, "circle T=6 s, r=1 m: post-transient e_xy <= 0.25 m")
def test_c7_circle_tracking(hover_run):
    net = load_weights(hover_run / "actor_final.qrlw")
    tr = Trajectory(period=6.0, radius=1.0, center=(0.0, 0.0, 1.0), duration=12.0)
    log = run_tracking(PolicyTracker(lambda o: np.clip(net(o), -1, 1)), tr, seed=0)
    e, e_xy = tracking_errors(log, 1.0)
    print(f"e={e:.3f} e_xy={e_xy:.3f} crashed={log.crashed} peak speed {log.peak_speed():.2f}")
    assert not log.crashed
    assert e_xy <= 0.25


@pytest.mark.slow
@criterion(8, "compare report: PID completes the circle, both scored by the same rmse path")
def test_c8_comparison_pipeline(hover_run, tmp_path):
    t0 = time.perf_counter()
    assert main(["compare", "--weights", str(hover_run / "actor_final.qrlw"), "--out", str(tmp_path)]) == EXIT_OK
    with open(tmp_path / "comparison.csv", newline="") as fh:
        rows = {r["controller"]: r for r in csv.DictReader(fh)}
    assert set(rows) == {"policy", "pid"}
    assert rows["pid"]["crashed"] == "0"
    assert int(rows["pid"]["samples"]) == 1200
    for name in ("policy", "pid"):
        log = TrackingLog.from_csv(tmp_path / f"tracking_{name}.csv", 0.01)
        e, e_xy = rmse(log, 1.0) if log.t[-1] >= 1.0 else rmse(log, 0.0)
        assert abs(float(rows[name]["e"]) - e) < 1e-12
        assert abs(float(rows[name]["e_xy"]) - e_xy) < 1e-12
    assert time.perf_counter() - t0 < 120


# ---------------------------------------------------------------- 9
@criterion(9, "rmse oracles 0.2887/0.3536/0.1732 and e_xy <= e*sqrt(3/2) on 1e4 logs")
def test_c9_metric_oracle():
    def offset_log(off):
        log = TrackingLog(dt=0.01)
        for k in range(100):
            pd = circle_trajectory(k * 0.01, 6.0)
            log.append(k * 0.01, pd, pd + np.array(off), np.zeros(3), np.zeros(4))
        return log

    e, e_xy = rmse(offset_log([0.3, 0.4, 0.0]))
    assert abs(e - math.sqrt(0.25 / 3)) < 1e-12 and abs(e_xy - math.sqrt(0.125)) < 1e-12
    assert round(e, 4) == 0.2887 and round(e_xy, 4) == 0.3536
    e, e_xy = rmse(offset_log([0.0, 0.0, 0.3]))
    assert e_xy == 0.0 and abs(e - math.sqrt(0.03)) < 1e-12 and round(e, 4) == 0.1732
    rng = np.random.default_rng(9)
    for _ in range(10_000):
        log = TrackingLog(dt=0.01)
        for k in range(int(rng.integers(1, 10))):
            log.append(k * 0.01, rng.normal(size=3), rng.normal(size=3) * rng.exponential(1.0, 3), np.zeros(3),
                       np.zeros(4))
        e, e_xy = rmse(log)
        assert e_xy <= e * math.sqrt(1.5) * (1 + 1e-12)


# ---------------------------------------------------------------- 10
@criterion(10, "export: f64 within 1e-12, f32 within 1e-5 on 1e4 inputs; bitwise weight round-trip")
def test_c10_export_equivalence(tmp_path):
    net = Mlp([146, 64, 64, 4], np.random.default_rng(10))
    save_weights(net, tmp_path / "a.qrlw")
    back = load_weights(tmp_path / "a.qrlw")
    assert back.params.tobytes() == net.params.tobytes()
    x = np.random.default_rng(11).uniform(-10, 10, size=(10_000, 146))
    ref = net(x)
    for precision, tol in (("f64", 1e-12), ("f32", 1e-5)):
        f = compile_and_load(generate_inference_source(back, precision), tmp_path / precision)
        err = float(np.max(np.abs(f(x) - ref)))
        print(f"{precision} max abs error {err:.2e}")
        assert err <= tol
