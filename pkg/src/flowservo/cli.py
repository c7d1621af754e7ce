"""Command-line front end: ``flowservo run | bench | oracle``."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from flowservo.config import (ConfigError, dump_config, load_config, normalize_config,
                              normalize_controller, normalize_suite, scenario_from_config,
                              suite_from_config)
from flowservo.geometry import DomainError, Pose
from flowservo.servo import CONVERGED, LOST_TARGET, MAX_STEPS

EXIT_OK, EXIT_ERROR, EXIT_MAX_STEPS, EXIT_LOST = 0, 1, 2, 3
_STATUS_EXIT = {CONVERGED: EXIT_OK, MAX_STEPS: EXIT_MAX_STEPS, LOST_TARGET: EXIT_LOST}


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="YAML config file (defaults apply when omitted)")
    p.add_argument("--controller", help="controller id: ibvs, lstm_mpc, nn_mpc or cem_mpc")
    p.add_argument("--seed", type=int, help="episode seed (else config, then $FLOWSERVO_SEED, then 0)")
    p.add_argument("--max-steps", type=int)
    p.add_argument("--eps", type=float, help="photometric convergence threshold (per-pixel mean)")
    p.add_argument("--horizon", type=int)
    p.add_argument("--train-iters", type=int, help="inner training iterations per step")
    p.add_argument("--noise-std", type=float, help="actuation noise std per twist component")
    p.add_argument("--reset-net-each-step", action="store_true",
                   help="reinitialize the control network before every step")
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--print-config", action="store_true",
                   help="print the effective config as YAML and exit")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="flowservo", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one servo episode")
    _add_common(run)
    run.add_argument("--dump-training", action="store_true", help="write per-iteration loss traces")
    run.add_argument("--dump-flow", action="store_true", help="write every target/proxy flow as .flo")
    run.add_argument("--plots", action="store_true", help="also render PNG figures")

    bench = sub.add_parser("bench", help="run a benchmark suite and summarize per controller")
    _add_common(bench)
    bench.add_argument("--jobs", type=int, default=1, help="worker processes")
    bench.add_argument("--dump-training", action="store_true", help="write per-episode loss traces")
    bench.add_argument("--plots", action="store_true", help="also render a summary PNG")

    oracle = sub.add_parser("oracle", help="dump analytic flow, depth and images for a pose pair")
    oracle.add_argument("--config", help="YAML config; poses default to its scenario start and goal")
    oracle.add_argument("--pose-a", help="rx,ry,rz,tx,ty,tz (rotation vector and translation)")
    oracle.add_argument("--pose-b", help="rx,ry,rz,tx,ty,tz")
    oracle.add_argument("--out", default="out", help="output directory")
    oracle.add_argument("--print-config", action="store_true")
    return parser


def _apply_overrides(cfg: dict, args) -> dict:
    sc = cfg["scenario"]
    if getattr(args, "controller", None) is not None:
        cfg["controller"] = normalize_controller({"id": args.controller})
        if "suite" in cfg:
            cfg["suite"]["controllers"] = [args.controller]
    if getattr(args, "seed", None) is not None:
        cfg["seed"] = args.seed
    for flag, key in (("max_steps", "max_steps"), ("eps", "eps"), ("horizon", "horizon"),
                      ("train_iters", "train_iters"), ("noise_std", "noise_std")):
        val = getattr(args, flag, None)
        if val is not None:
            sc[key] = val
    if getattr(args, "reset_net_each_step", False):
        cfg["controller"]["params"]["reset_each_step"] = True
        if "suite" in cfg:
            for ctrl in ("lstm_mpc", "nn_mpc"):
                cfg["suite"]["controller_params"].setdefault(ctrl, {})["reset_each_step"] = True
    return normalize_config(cfg)


def _parse_pose(text: str, flag: str) -> Pose:
    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError:
        raise ConfigError(flag, f"expected 6 comma-separated numbers, got {text!r}") from None
    if len(vals) != 6:
        raise ConfigError(flag, f"expected 6 comma-separated numbers, got {len(vals)}")
    return Pose.from_rotvec(vals[:3], vals[3:])


def cmd_run(args) -> int:
    from flowservo.servo import run_episode

    cfg = _apply_overrides(load_config(args.config), args)
    if args.print_config:
        sys.stdout.write(dump_config(cfg))
        return EXIT_OK
    scenario = scenario_from_config(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dump_dir = out / "flow" if args.dump_flow else None
    record = run_episode(scenario, cfg["seed"], dump_flow_dir=dump_dir)
    (out / "config.yaml").write_text(dump_config(cfg))
    (out / "record.json").write_text(record.to_json())
    (out / "steps.csv").write_text(record.to_csv())
    (out / "trajectory.csv").write_text(record.trajectory_csv())
    if args.dump_training:
        (out / "training.csv").write_text(record.training_csv())
    if args.plots:
        from flowservo.report import plot_episode

        plot_episode(record, out, eps=scenario.eps)
    print(f"{record.status}: {record.iterations} iterations, t_err {record.final_t_err:.4f} m, "
          f"r_err {record.final_r_err:.3f} deg, length {record.trajectory_length:.3f} m")
    if record.message:
        print(record.message, file=sys.stderr)
    return _STATUS_EXIT.get(record.status, EXIT_ERROR)


def cmd_bench(args) -> int:
    from flowservo.bench import SummaryTable, run_suite

    cfg = load_config(args.config)
    cfg["suite"] = normalize_suite(cfg.get("suite"))
    cfg = _apply_overrides(cfg, args)
    if args.print_config:
        sys.stdout.write(dump_config(cfg))
        return EXIT_OK
    suite = suite_from_config(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    def progress(res):
        rec = res.record
        print(f"{res.scenario_id} {res.controller} seed={res.seed}: {rec.status} after {rec.iterations}",
              file=sys.stderr, flush=True)

    results = run_suite(suite, jobs=max(1, args.jobs), progress=progress)
    table = SummaryTable(results)
    (out / "config.yaml").write_text(dump_config(cfg))
    (out / "summary.csv").write_text(table.to_csv())
    (out / "summary_timing.csv").write_text(table.to_csv(include_timing=True))
    (out / "episodes.csv").write_text(table.episodes_csv())
    ep_dir = out / "episodes"
    ep_dir.mkdir(exist_ok=True)
    for res in results:
        stem = f"{res.scenario_id}_{res.controller}_{res.seed}"
        (ep_dir / f"{stem}.json").write_text(res.record.to_json())
        (ep_dir / f"{stem}_steps.csv").write_text(res.record.to_csv())
        (ep_dir / f"{stem}_trajectory.csv").write_text(res.record.trajectory_csv())
        if args.dump_training:
            (ep_dir / f"{stem}_training.csv").write_text(res.record.training_csv())
    if args.plots:
        from flowservo.report import plot_summary

        plot_summary(table, out / "summary.png")
    print(table.format())
    return EXIT_OK


def cmd_oracle(args) -> int:
    from flowservo.flow import write_flo
    from flowservo.scene import analytic_flow, generate_scene, render, write_depth_npy, write_pgm

    cfg = load_config(args.config)
    if args.print_config:
        sys.stdout.write(dump_config(cfg))
        return EXIT_OK
    scenario = scenario_from_config(cfg)
    pose_a = _parse_pose(args.pose_a, "--pose-a") if args.pose_a else scenario.start
    pose_b = _parse_pose(args.pose_b, "--pose-b") if args.pose_b else scenario.goal
    K = scenario.intrinsics
    scene = generate_scene(scenario.scene_seed, scenario.scene)
    img_a, depth_a = render(scene, pose_a, K)
    img_b, _ = render(scene, pose_b, K)
    flow = analytic_flow(scene, pose_a, pose_b, K, depth_a)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_flo(flow, out / "flow.flo")
    write_depth_npy(depth_a, out / "depth_a.npy")
    write_pgm(img_a, out / "image_a.pgm")
    write_pgm(img_b, out / "image_b.pgm")
    n_valid = int(flow.valid.sum())
    print(f"wrote {out}: {n_valid} of {flow.valid.size} pixels with valid flow")
    if n_valid == 0:
        print("the two views share no scene content", file=sys.stderr)
        return EXIT_LOST
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {"run": cmd_run, "bench": cmd_bench, "oracle": cmd_oracle}
    try:
        return handlers[args.command](args)
    except (ConfigError, DomainError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
