"""Command-line front end: ``fineassembly <command> [options]``.

Every command writes its outputs plus a ``manifest.json`` into ``--out``.
Exit codes: 0 success, 1 domain failure (task failed, infeasible,
unidentifiable), 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
from dataclasses import replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from . import __version__
from .model import ConfigError, data_path, load_model, quantity, read_config

EXIT_OK, EXIT_DOMAIN, EXIT_USAGE = 0, 1, 2


class UsageError(ValueError):
    pass


class DomainFailure(RuntimeError):
    pass


def _write_json(path: Path, doc: Any) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _robot(args) -> tuple:
    path = Path(args.config) if args.config else data_path("vs060.json")
    return load_model(path), str(path)


def _outdir(args, command: str) -> Path:
    out = Path(args.out) if args.out else Path("runs") / command
    out.mkdir(parents=True, exist_ok=True)
    return out


def _manifest(out: Path, args, command: str, configs: Dict[str, str], outputs: List[str],
              started: float, result: Dict[str, Any]) -> None:
    _write_json(out / "manifest.json", {
        "command": command,
        "argv": list(args._argv),
        "configs": configs,
        "seed": args.seed,
        "version": __version__,
        "outputs": sorted(outputs),
        "wall_time_s": round(time.perf_counter() - started, 3),
        "result": result,
    })


# ---------------------------------------------------------------------------
# workspace


def cmd_workspace(args) -> int:
    from .workspace import BimanualObjective, GridSpec, optimize_base_distance

    started = time.perf_counter()
    model, robot_path = _robot(args)
    obj: Dict[str, Any] = {}
    configs = {"robot": robot_path}
    if args.objective:
        raw = read_config(args.objective)
        ctx = str(args.objective)
        for key in ("alpha", "beta"):
            if key in raw:
                obj[key] = float(raw[key])
        for key in ("d_min", "d_max", "step", "resolution"):
            if key in raw:
                obj[key] = quantity(raw[key], "length", f"{ctx}.{key}")
        if "orientations" in raw:
            obj["orientations"] = int(raw["orientations"])
        configs["objective"] = ctx
    for key in ("alpha", "beta", "d_min", "d_max", "step", "resolution", "orientations"):
        v = getattr(args, key)
        if v is not None:
            obj[key] = v
    try:
        objective = BimanualObjective(obj.get("alpha", 0.5), obj.get("beta", 0.5), obj.get("d_min", 0.6),
                                      obj.get("d_max", 1.6), obj.get("step", 0.02))
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    res_h = obj.get("resolution", 0.05)
    if not res_h > 0:
        raise UsageError("resolution must be positive")
    out = _outdir(args, "workspace")
    result = optimize_base_distance(model, objective, GridSpec(resolution=res_h), seed=args.seed,
                                    orientation_samples=obj.get("orientations", 6), jobs=args.jobs)
    result.write_table(out / "scan.csv")
    result.single_map.write_voxels(out / "voxels_single.csv")
    result.maps[0].write_voxels(out / "voxels_left.csv")
    result.maps[1].write_voxels(out / "voxels_right.csv")
    print(f"d* = {result.d_best:.3f} m (objective {result.objective:.6g} m^3)")
    _manifest(out, args, "workspace", configs,
              ["scan.csv", "voxels_single.csv", "voxels_left.csv", "voxels_right.csv"], started,
              {"d_best": result.d_best, "objective": result.objective,
               "alpha": objective.alpha, "beta": objective.beta,
               "d_range": [objective.d_min, objective.d_max, objective.step], "resolution": res_h})
    return EXIT_OK


# ---------------------------------------------------------------------------
# excitation


def cmd_excite(args) -> int:
    from .excitation import (
        InfeasibleError,
        check_constraints,
        optimize_excitation,
        save_params,
        write_trajectory_csv,
    )

    started = time.perf_counter()
    if args.harmonics < 1:
        raise UsageError("--harmonics must be at least 1")
    if not args.frequency > 0:
        raise UsageError("--frequency must be positive")
    model, robot_path = _robot(args)
    out = _outdir(args, "excite")
    wf = 2.0 * math.pi * args.frequency
    try:
        res = optimize_excitation(model, N=args.harmonics, wf=wf, budget=args.budget, seed=args.seed)
    except InfeasibleError as exc:
        raise DomainFailure(str(exc)) from None
    rep = check_constraints(res.params, model)
    save_params(out / "excitation.json", res.params, {"log_det": res.log_det, "seed": args.seed})
    write_trajectory_csv(out / "trajectory.csv", res.params)
    print(f"log det = {res.log_det:.4f}, {res.params.params_per_joint} parameters per joint, "
          f"constraints {'ok' if rep.ok else 'violated'}")
    _manifest(out, args, "excite", {"robot": robot_path}, ["excitation.json", "trajectory.csv"], started,
              {"log_det": res.log_det, "params_per_joint": res.params.params_per_joint,
               "harmonics": args.harmonics, "frequency_hz": args.frequency,
               "evaluations": res.evaluations, "constraints_ok": rep.ok})
    return EXIT_OK


# ---------------------------------------------------------------------------
# identification


def cmd_identify(args) -> int:
    from .excitation import eval_trajectory, load_params, random_feasible, sample_times
    from .identification import (
        RankDeficientError,
        estimate_parameters,
        random_body,
        read_samples_csv,
        synthesize_samples,
        write_report_json,
        write_samples_csv,
    )

    started = time.perf_counter()
    model, robot_path = _robot(args)
    configs = {"robot": robot_path}
    out = _outdir(args, "identify")
    outputs = ["report.json"]
    extra: Dict[str, Any] = {}
    rng = np.random.default_rng(args.seed)
    if args.samples:
        try:
            samples = read_samples_csv(args.samples)
        except (OSError, ValueError) as exc:
            raise ConfigError(str(exc)) from None
        configs["samples"] = str(args.samples)
        truth = None
    else:
        if args.params:
            try:
                params = load_params(args.params)
            except (OSError, ValueError, KeyError) as exc:
                raise ConfigError(f"{args.params}: {exc}") from None
            configs["params"] = str(args.params)
        else:
            params = random_feasible(model, 5, 2 * math.pi * 0.1, rng)
        truth = random_body(rng)
        t = sample_times(params, args.count)
        st = eval_trajectory(params, t)
        samples = synthesize_samples(model, truth, t, st.q, st.qd, st.qdd, args.noise, rng)
        write_samples_csv(out / "samples.csv", samples)
        outputs.append("samples.csv")
        extra["true_parameters"] = truth.to_dict()
    try:
        est, rep = estimate_parameters(samples, model)
    except RankDeficientError as exc:
        _manifest(out, args, "identify", configs, [], started, {"error": str(exc)})
        raise DomainFailure(str(exc)) from None
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if truth is not None:
        err = float(np.linalg.norm(est.vector() - truth.vector()) / np.linalg.norm(truth.vector()))
        extra["relative_error"] = err
    extra["noise_sigma"] = args.noise
    write_report_json(out / "report.json", est, rep, extra)
    msg = f"rank {rep.rank}, cond {rep.condition:.3g}, residual RMS {rep.residual_rms:.3g}"
    if truth is not None:
        msg += f", relative error {extra['relative_error']:.3g}"
    print(msg)
    _manifest(out, args, "identify", configs, outputs, started,
              {"rank": rep.rank, "condition": rep.condition, "residual_rms": rep.residual_rms,
               "relative_error": extra.get("relative_error")})
    return EXIT_OK


# ---------------------------------------------------------------------------
# task


def cmd_task(args) -> int:
    from .primitives import write_log_jsonl
    from .task import evaluate_monte_carlo, load_scenario

    started = time.perf_counter()
    if args.runs < 1:
        raise UsageError("--runs must be at least 1")
    path = Path(args.config) if args.config else data_path("scenario.json")
    scn = load_scenario(path)
    if args.noise_mm is not None:
        if args.noise_mm < 0:
            raise UsageError("--noise-mm must be non-negative")
        scn = scn.with_noise_mm(args.noise_mm)
    if args.no_exploration:
        scn = replace(scn, exploration=False)
    if args.offset_mm is not None:
        scn = replace(scn, lateral_offset=args.offset_mm * 1e-3)
    out = _outdir(args, "task")
    stats = evaluate_monte_carlo(scn, args.runs, seed=args.seed, jobs=args.jobs, keep_reports=True)
    reports = stats.pop("reports")
    outputs = ["stats.json"]
    if args.runs == 1:
        r = reports[0]
        r.write_json(out / "report.json")
        r.write_timeline_csv(out / "timeline.csv")
        write_log_jsonl(r.timeline, out / "primitives.jsonl")
        outputs += ["report.json", "timeline.csv", "primitives.jsonl"]
        print(f"{r.outcome}" + (f" at {r.stage}: {r.reason}" if not r.success else
                                f", pin error {r.pin_error_mm:.3f} mm, {r.duration:.2f} s simulated"))
    else:
        tl = out / "timelines"
        tl.mkdir(exist_ok=True)
        for k, r in enumerate(reports):
            name = f"timelines/run_{k:04d}.csv"
            r.write_timeline_csv(out / name)
            outputs.append(name)
        with open(out / "runs.csv", "w") as fh:
            fh.write("run,seed,outcome,stage,duration_s,pin_error_mm,hole_estimate_error_mm\n")
            for k, r in enumerate(reports):
                fh.write(f"{k},{r.seed},{r.outcome},{r.stage or ''},{r.duration:.6f},"
                         f"{'' if r.pin_error_mm is None else f'{r.pin_error_mm:.6f}'},"
                         f"{'' if r.hole_estimate_error_mm is None else f'{r.hole_estimate_error_mm:.6f}'}\n")
        outputs.append("runs.csv")
        print(f"success rate {stats['success_rate']:.3f} over {args.runs} runs; failures {stats['failures']}")
    stats["exploration"] = scn.exploration
    stats["lateral_offset_mm"] = scn.lateral_offset * 1e3
    _write_json(out / "stats.json", stats)
    _manifest(out, args, "task", {"scenario": str(path)}, outputs, started,
              {"success_rate": stats["success_rate"], "runs": args.runs})
    if args.runs == 1 and not reports[0].success:
        return EXIT_DOMAIN
    return EXIT_OK


# ---------------------------------------------------------------------------
# plan


def _vector(text: str, n: int, name: str) -> np.ndarray:
    try:
        v = np.array([float(x) for x in text.split(",")])
    except ValueError:
        raise UsageError(f"{name}: expected {n} comma-separated numbers") from None
    if v.size != n or not np.all(np.isfinite(v)):
        raise UsageError(f"{name}: expected {n} finite values, got {v.size}")
    return v


def cmd_plan(args) -> int:
    from .planner import Box, CollisionScene, PlanningError, RRTParams, collides, rrt_connect, table_box

    started = time.perf_counter()
    model, robot_path = _robot(args)
    configs = {"robot": robot_path}
    qs = _vector(args.start, model.n, "--start")
    qg = _vector(args.goal, model.n, "--goal")
    boxes = [] if args.no_table else [table_box()]
    if args.scene:
        raw = read_config(args.scene)
        configs["scene"] = str(args.scene)
        for k, b in enumerate(raw.get("boxes", [])):
            ctx = f"{args.scene}.boxes[{k}]"
            c = quantity(b["center"], "length", f"{ctx}.center")
            s = quantity(b["size"], "length", f"{ctx}.size")
            T = np.eye(4)
            T[:3, 3] = c
            boxes.append(Box(str(b.get("name", f"box{k}")), T, np.asarray(s) / 2.0, "obstacle"))
    scene = CollisionScene(model, boxes)
    for name, q in (("start", qs), ("goal", qg)):
        if not model.within_limits(q):
            raise UsageError(f"{name} configuration outside the joint limits")
        if collides(scene, q):
            raise DomainFailure(f"{name} configuration is in collision ({', '.join(scene.blockers(q))})")
    out = _outdir(args, "plan")
    try:
        path = rrt_connect(scene, qs, qg, RRTParams(budget=args.budget), seed=args.seed)
    except PlanningError as exc:
        _manifest(out, args, "plan", configs, [], started, {"error": str(exc)})
        raise DomainFailure(str(exc)) from None
    path.write_csv(out / "path.csv")
    print(f"{len(path)} waypoints, joint-space length {path.length:.4f} rad")
    _manifest(out, args, "plan", configs, ["path.csv"], started,
              {"waypoints": len(path), "length": path.length})
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fineassembly", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config_help: str):
        sp.add_argument("--config", help=config_help)
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--out", help="run directory (default runs/<command>)")
        sp.add_argument("--jobs", type=int, default=1, help="worker processes")

    w = sub.add_parser("workspace", help="scan the base distance of two facing arms")
    common(w, "robot config (JSON/TOML)")
    w.add_argument("--objective", help="objective config with alpha, beta, d_min, d_max, step, resolution")
    w.add_argument("--alpha", type=float)
    w.add_argument("--beta", type=float)
    w.add_argument("--d-min", dest="d_min", type=float, help="m")
    w.add_argument("--d-max", dest="d_max", type=float, help="m")
    w.add_argument("--step", type=float, help="scan step (m)")
    w.add_argument("--resolution", type=float, help="voxel size (m)")
    w.add_argument("--orientations", type=int, help="approach directions per voxel")
    w.set_defaults(func=cmd_workspace)

    e = sub.add_parser("excite", help="optimize a periodic excitation trajectory")
    common(e, "robot config (JSON/TOML)")
    e.add_argument("--harmonics", type=int, default=5, help="N, harmonics per joint")
    e.add_argument("--frequency", type=float, default=0.1, help="base frequency (Hz)")
    e.add_argument("--budget", type=int, default=4000, help="objective evaluations")
    e.set_defaults(func=cmd_excite)

    i = sub.add_parser("identify", help="estimate end-effector inertial parameters")
    common(i, "robot config (JSON/TOML)")
    src = i.add_mutually_exclusive_group()
    src.add_argument("--params", help="excitation parameters JSON used to synthesize samples")
    src.add_argument("--samples", help="recorded samples CSV to fit")
    i.add_argument("--noise", type=float, default=0.0, help="synthetic noise sigma (N, Nm)")
    i.add_argument("--count", type=int, default=200, help="synthetic samples per period")
    i.set_defaults(func=cmd_identify)

    t = sub.add_parser("task", help="simulate the bimanual pin insertion")
    common(t, "scenario config (JSON/TOML)")
    t.add_argument("--runs", type=int, default=1)
    t.add_argument("--noise-mm", dest="noise_mm", type=float,
                   help="perception position bound in mm (orientation bound scales as 0.05 rad per 3 mm)")
    t.add_argument("--no-exploration", dest="no_exploration", action="store_true")
    t.add_argument("--offset-mm", dest="offset_mm", type=float, help="lateral aiming offset without exploration")
    t.set_defaults(func=cmd_task)

    pl = sub.add_parser("plan", help="plan a collision-free joint path")
    common(pl, "robot config (JSON/TOML)")
    pl.add_argument("--start", required=True, help="comma-separated joint values (rad)")
    pl.add_argument("--goal", required=True, help="comma-separated joint values (rad)")
    pl.add_argument("--scene", help="JSON/TOML with a 'boxes' list (center, size)")
    pl.add_argument("--no-table", dest="no_table", action="store_true")
    pl.add_argument("--budget", type=int, default=50_000)
    pl.set_defaults(func=cmd_plan)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    args._argv = argv
    if getattr(args, "jobs", 1) < 1:
        print("error: --jobs must be at least 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DomainFailure as exc:
        print(f"failed: {exc}", file=sys.stderr)
        return EXIT_DOMAIN


if __name__ == "__main__":
    sys.exit(main())
