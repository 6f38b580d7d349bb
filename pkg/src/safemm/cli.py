"""Command-line front end: run scenarios, replay traces, export plots, run micro benchmarks."""
from __future__ import annotations

import argparse
import json
import math
import sys
import time

import numpy as np

from .errors import ConfigError, InvalidArgument
from .sim import EXIT_CONFIG, compute_metrics, read_trace, run_scenario

BENCH_SUITES = ("fusion", "planner", "band")


def _fmt_metrics(m: dict) -> str:
    return "\n".join(f"{k:>22}: {format(v, '.6g') if isinstance(v, float) else v}" for k, v in m.items())


def cmd_run(args) -> int:
    from .scenario import load_scenario

    try:
        scenario = load_scenario(args.scenario, seed=args.seed)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG

    def progress(rec):
        for ev in filter(None, rec.event.split("|")):
            print(f"[{rec.time:7.2f}s] {ev}", file=sys.stderr)

    if args.trace:
        with open(args.trace, "w", newline="") as f:
            result = run_scenario(scenario, ticks=args.ticks, trace=f, progress=None if args.quiet else progress)
    else:
        result = run_scenario(scenario, ticks=args.ticks, progress=None if args.quiet else progress)
    if not args.quiet:
        for i, t in enumerate(result.tasks):
            print(f"task {i} {t.spec.kind}: {t.state}{' (' + t.reason + ')' if t.reason else ''}")
        print(_fmt_metrics(result.metrics()))
        print(f"{'wall_time':>22}: {result.wall_time:.3f}")
    return result.exit_code


def cmd_replay(args) -> int:
    try:
        rows = read_trace(args.trace)
    except (OSError, KeyError, ValueError) as e:
        print(f"cannot read trace: {e}", file=sys.stderr)
        return EXIT_CONFIG
    m = compute_metrics(rows)
    print(json.dumps(m, indent=2) if args.json else _fmt_metrics(m))
    return 0


def cmd_plot(args) -> int:
    from .plots import export_plots

    try:
        paths = export_plots(args.trace, args.out)
    except (OSError, KeyError, ValueError) as e:
        print(f"cannot plot trace: {e}", file=sys.stderr)
        return EXIT_CONFIG
    for p in paths:
        print(p)
    return 0


# ------------------------------------------------------------------ benchmarks


def _timeit(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return float(np.median(times)), float(np.max(times))


def bench_fusion(repeat=5):
    from .collision_world import Obstacle, WorldSnapshot
    from .octree_fusion import OctreeSpec, fuse, preprocess_sensor
    from .sensor_sim import DepthSensorSpec, render_depth
    from .kinematics import rotation_about, transform

    rng = np.random.default_rng(0)
    spec = OctreeSpec((0.0, 0.0, 0.0), 1.6, 5)
    boxes = []
    for k in range(3):
        c = rng.uniform(-0.5, 0.5, 3)
        h = rng.uniform(0.05, 0.2, 3)
        boxes.append(Obstacle.box(f"b{k}", c - h, c + h))
    world = WorldSnapshot(tuple(boxes))
    sensors = [
        DepthSensorSpec("a", transform((-1.2, 0, 0.1)), math.radians(80), math.radians(70), 64, 48, 2.5),
        DepthSensorSpec("b", transform((0, -1.2, 0.1), rotation_about((0, 0, 1), math.pi / 2)),
                        math.radians(80), math.radians(70), 64, 48, 2.5),
    ]
    clouds = [render_depth(world, None, None, s) for s in sensors]
    med, worst = _timeit(lambda: fuse([preprocess_sensor(c, spec) for c in clouds]), repeat)
    return {"suite": "fusion", "voxels": spec.n**3, "rays": sum(len(c.points) for c in clouds),
            "median_s": med, "max_s": worst}


def bench_planner(repeat=5):
    from .collision_world import Obstacle, WorldSnapshot
    from .kinematics import Pose
    from .errors import PlanningFailure
    from .planner_rrt import PlannerConfig, plan
    from .robots import planar_arm

    model = planar_arm(3)
    world = WorldSnapshot((Obstacle.sphere("s", (0.7, 0.6, 0.0), 0.2),))
    goal = Pose(np.array([0.2, 1.1, 0.0]))
    ok = []

    def run():
        for seed in range(4):
            cfg = PlannerConfig(seed=seed, max_iterations=2000, time_budget=1e9, w_rot=0.0)
            try:
                plan(model, world, np.zeros(3), goal, cfg)
                ok.append(True)
            except PlanningFailure:
                ok.append(False)

    med, worst = _timeit(run, repeat)
    return {"suite": "planner", "queries": 4, "success_rate": float(np.mean(ok)), "median_s": med, "max_s": worst}


def bench_band(repeat=5):
    from .collision_world import Obstacle, WorldSnapshot
    from .elastic_band import ElasticBand, maintain, step
    from .paths import default_weights
    from .robots import mobile_manipulator

    model = mobile_manipulator()
    world = WorldSnapshot((Obstacle.capsule("h", (1.0, 0.3, 0.25), (1.0, 0.3, 1.55), 0.25),))
    q0 = np.zeros(model.dof)
    q1 = q0.copy()
    q1[0] = 2.0
    band0 = ElasticBand.from_path(np.linspace(q0, q1, 6), model, world, default_weights(model))
    state = {"band": band0}

    def run():
        b = maintain(state["band"], model, world)
        state["band"] = step(b, model, world)

    med, worst = _timeit(run, repeat)
    return {"suite": "band", "bubbles": len(state["band"].bubbles), "median_s": med, "max_s": worst}


def cmd_bench(args) -> int:
    suites = BENCH_SUITES if args.suite == "all" else (args.suite,)
    fns = {"fusion": bench_fusion, "planner": bench_planner, "band": bench_band}
    for s in suites:
        print(json.dumps(fns[s](args.repeat)))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="safemm", description="Mobile-manipulator safety simulator.")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a scenario file")
    r.add_argument("scenario")
    r.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    r.add_argument("--trace", default=None, help="write the CSV trace here")
    r.add_argument("--ticks", type=int, default=None, help="stop after this many ticks")
    r.add_argument("--quiet", action="store_true")
    r.set_defaults(func=cmd_run)

    rp = sub.add_parser("replay", help="metrics of a trace file")
    rp.add_argument("trace")
    rp.add_argument("--json", action="store_true")
    rp.set_defaults(func=cmd_replay)

    pl = sub.add_parser("plot", help="SVG plots of a trace file")
    pl.add_argument("trace")
    pl.add_argument("--out", required=True)
    pl.set_defaults(func=cmd_plot)

    b = sub.add_parser("bench", help="micro benchmarks")
    b.add_argument("suite", choices=BENCH_SUITES + ("all",))
    b.add_argument("--repeat", type=int, default=5)
    b.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "ticks", None) is not None and args.ticks < 0:
        print("config error: --ticks must be non-negative", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except InvalidArgument as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
