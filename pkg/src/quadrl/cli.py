"""``quadrl`` command line: train | evaluate | compare | export | simulate."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, load_config, to_ini
from .dynamics import RPM_TO_RADS, QuadState, SimulationDiverged, advance, euler_to_rotation
from .env import SIM_DT, EpisodeLog, HoverEnv, reward
from .export import WeightsFileError, generate_inference_source, load_weights, save_weights
from .td3 import CurveRow, Td3Agent, TrainingDiverged, train
from .tracking import PidTracker, PolicyTracker, Trajectory, compare, run_tracking, tracking_errors

log = logging.getLogger("quadrl")

EXIT_OK = 0
EXIT_CONFIG = 3
EXIT_IO = 4
EXIT_DIVERGED = 5
EXIT_WEIGHTS = 6

# full-length run; the shipped default is a desk-scale 300k steps
PAPER_SCALE_STEPS = 5_000_000


def _resolve_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed)
    if getattr(args, "paper_scale", False):
        cfg = cfg.with_overrides(td3={"total_steps": PAPER_SCALE_STEPS})
    if getattr(args, "steps", None) is not None:
        cfg = cfg.with_overrides(td3={"total_steps": args.steps})
    if getattr(args, "out", None):
        cfg = cfg.with_overrides(io={"output_dir": args.out})
    return cfg


def _echo(cfg: RunConfig, out_dir: Path | None = None) -> None:
    text = to_ini(cfg)
    print(f"# resolved configuration (seed {cfg.seed})")
    print(text)
    if out_dir is not None:
        (out_dir / "config.ini").write_text(text)


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.io.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _trajectory(cfg: RunConfig) -> Trajectory:
    e = cfg.eval
    return Trajectory(e.period, e.radius, tuple(e.center), e.duration, e.takeoff_time)


def save_checkpoint(agent: Td3Agent, path: Path, meta: dict) -> None:
    arrays = {}
    for name, net in agent.nets().items():
        arrays[f"{name}/params"] = net.params
        arrays[f"{name}/sizes"] = np.asarray(net.sizes)
    for name, opt in (("actor", agent.actor_opt), ("critic1", agent.critic1_opt), ("critic2", agent.critic2_opt)):
        arrays[f"{name}_opt/m"] = opt.m
        arrays[f"{name}_opt/v"] = opt.v
        arrays[f"{name}_opt/t"] = np.asarray(opt.t)
    arrays["meta"] = np.asarray(json.dumps(meta, sort_keys=True))
    with path.open("wb") as fh:
        np.savez(fh, **arrays)


def write_curve(curve: list[CurveRow], path: Path) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "mean_return", "mean_pos_error", "critic_loss", "actor_loss"])
        for r in curve:
            w.writerow([r.step, repr(r.mean_return), repr(r.mean_pos_error), repr(r.critic_loss), repr(r.actor_loss)])


def cmd_train(args) -> int:
    cfg = _resolve_config(args)
    out = _out_dir(cfg)
    _echo(cfg, out)
    env = HoverEnv(cfg.physics, cfg.env, cfg.reward)
    eval_env = HoverEnv(cfg.physics, cfg.env, cfg.reward)
    best = {"return": -np.inf}
    td3 = replace(cfg.td3_seeded, eval_every=min(cfg.td3.eval_every, cfg.io.checkpoint_every))

    def on_eval(agent: Td3Agent, row: CurveRow) -> None:
        if row.step % cfg.io.checkpoint_every == 0 or row.step == td3.total_steps:
            save_checkpoint(agent, out / f"checkpoint_{row.step:09d}.npz", {"step": row.step, "seed": cfg.seed,
                                                                        "version": __version__})
        if row.step > td3.warmup_steps and row.mean_return > best["return"]:
            best["return"] = row.mean_return
            save_weights(agent.actor, out / "actor_best.qrlw")

    try:
        agent, curve = train(env, td3, eval_env, on_eval)
    except (TrainingDiverged, FloatingPointError) as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    checksum = save_weights(agent.actor, out / "actor_final.qrlw")
    if not (out / "actor_best.qrlw").exists():
        save_weights(agent.actor, out / "actor_best.qrlw")
    write_curve(curve, out / "curve.csv")
    print(f"final weights: {out / 'actor_final.qrlw'} (sha256 {checksum})")
    print(f"training curve: {out / 'curve.csv'}")
    return EXIT_OK


def _load_policy(path):
    net = load_weights(path)
    return net, PolicyTracker(lambda obs: np.clip(net(obs), -1.0, 1.0))


def cmd_evaluate(args) -> int:
    cfg = _resolve_config(args)
    if args.period is not None or args.radius is not None or args.duration is not None:
        cfg = cfg.with_overrides(eval={k: v for k, v in (("period", args.period), ("radius", args.radius),
                                                         ("duration", args.duration)) if v is not None})
    if args.episodes is not None:
        cfg = cfg.with_overrides(eval={"episodes": args.episodes})
    out = _out_dir(cfg)
    _echo(cfg)
    _, tracker = _load_policy(args.weights)
    traj = _trajectory(cfg)
    rows = []
    for k in range(cfg.eval.episodes):
        tl = run_tracking(tracker, traj, cfg.env, cfg.seed + k, cfg.physics, cfg.eval.setpoint_period)
        e, e_xy = tracking_errors(tl, cfg.eval.transient)
        path = out / f"tracking_{k:03d}.csv"
        tl.to_csv(path)
        rows.append((k, cfg.seed + k, e, e_xy, tl.crashed, tl.peak_speed()))
        print(f"episode {k}: e={e:.4f} e_xy={e_xy:.4f} crashed={tl.crashed} peak_speed={tl.peak_speed():.2f} -> {path}")
    with (out / "metrics.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["episode", "seed", "e", "e_xy", "crashed", "peak_speed"])
        w.writerows(rows)
    e_mean = float(np.mean([r[2] for r in rows]))
    exy_mean = float(np.mean([r[3] for r in rows]))
    print(f"mean e={e_mean:.4f} e_xy={exy_mean:.4f} -> {out / 'metrics.csv'}")
    return EXIT_OK


def cmd_compare(args) -> int:
    cfg = _resolve_config(args)
    out = _out_dir(cfg)
    _echo(cfg)
    names = [n.strip() for n in args.controllers.split(",") if n.strip()]
    controllers = {}
    for name in names:
        if name == "policy":
            if not args.weights:
                raise ConfigError("--weights is required for the policy controller")
            controllers[name] = _load_policy(args.weights)[1]
        elif name == "pid":
            controllers[name] = PidTracker(cfg.physics, cfg.pid, cfg.env.control_dt)
        else:
            raise ConfigError(f"unknown controller {name!r} (choose from policy, pid)")
    report, logs = compare(controllers, _trajectory(cfg), cfg.env, cfg.seed, cfg.eval.transient, cfg.physics)
    for name, tl in logs.items():
        tl.to_csv(out / f"tracking_{name}.csv")
    report.to_csv(out / "comparison.csv")
    print(report.table())
    print(f"report: {out / 'comparison.csv'}")
    return EXIT_OK


def cmd_export(args) -> int:
    # --out names the source file here, not the run directory
    _echo(_resolve_config(argparse.Namespace(config=args.config, seed=args.seed)))
    net = load_weights(args.weights)
    stamp = datetime.now(timezone.utc).isoformat(timespec="seconds") if args.stamp else None
    src = generate_inference_source(net, args.precision, timestamp=stamp)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    src.write(out)
    print(f"wrote {out} ({src.precision}, layers {'-'.join(map(str, src.sizes))}, sha256 {src.checksum})")
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = _resolve_config(args)
    out = _out_dir(cfg)
    _echo(cfg)
    params = cfg.physics
    rpm = [float(x) for x in args.rpm.split(",")] if args.rpm else [params.hover_omega / RPM_TO_RADS] * 4
    if len(rpm) != 4:
        raise ConfigError("--rpm needs four comma-separated values")
    setpoint = np.asarray(rpm) * RPM_TO_RADS
    roll, pitch, yaw = (float(x) for x in args.attitude.split(","))
    state = QuadState.hover(params)
    state = replace(state, rotation=euler_to_rotation(roll, pitch, yaw))
    episode = EpisodeLog()
    n = int(round(args.duration / cfg.env.control_dt))
    a = 2.0 * (np.asarray(rpm) - cfg.env.min_rpm) / (cfg.env.max_rpm - cfg.env.min_rpm) - 1.0
    episode.record(0.0, state, a, reward(state, a, cfg.reward))
    for k in range(n):
        state = advance(state, setpoint, SIM_DT, cfg.env.substeps, params)
        episode.record((k + 1) * cfg.env.control_dt, state, a, reward(state, a, cfg.reward))
    path = out / "simulate.csv"
    episode.to_csv(path)
    print(f"final position {state.position.tolist()} -> {path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="quadrl", description="Learned quadcopter flight controller toolkit")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out=True):
        sp.add_argument("--config", help="INI configuration file")
        sp.add_argument("--seed", type=int)
        if out:
            sp.add_argument("--out", help="output directory (overrides [io] output_dir)")

    t = sub.add_parser("train", help="train the actor with TD3")
    common(t)
    t.add_argument("--steps", type=int, help="total environment steps")
    t.add_argument("--paper-scale", action="store_true", help=f"train for {PAPER_SCALE_STEPS:,} steps")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="track the circle with a trained actor")
    common(e)
    e.add_argument("--weights", required=True)
    e.add_argument("--episodes", type=int)
    e.add_argument("--period", type=float)
    e.add_argument("--radius", type=float)
    e.add_argument("--duration", type=float)
    e.set_defaults(func=cmd_evaluate)

    c = sub.add_parser("compare", help="tracking error table for several controllers")
    common(c)
    c.add_argument("--weights")
    c.add_argument("--controllers", default="policy,pid")
    c.set_defaults(func=cmd_compare)

    x = sub.add_parser("export", help="generate C inference source from a weights file")
    common(x, out=False)
    x.add_argument("--weights", required=True)
    x.add_argument("--precision", choices=("f32", "f64"), default="f32")
    x.add_argument("--out", required=True, help="path of the generated .c file")
    x.add_argument("--stamp", action="store_true", help="record the export time in the header comment")
    x.set_defaults(func=cmd_export)

    s = sub.add_parser("simulate", help="open-loop dynamics run under fixed rotor speeds")
    common(s)
    s.add_argument("--rpm", help="four comma-separated rotor setpoints in RPM (default: hover)")
    s.add_argument("--attitude", default="0,0,0", help="initial roll,pitch,yaw in radians")
    s.add_argument("--duration", type=float, default=1.0)
    s.set_defaults(func=cmd_simulate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except WeightsFileError as exc:
        print(f"weights error: {exc}", file=sys.stderr)
        return EXIT_WEIGHTS
    except (SimulationDiverged, TrainingDiverged) as exc:
        print(f"numerical divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
