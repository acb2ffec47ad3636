"""``skelfit`` command line: gen, fit, eval, gradcheck, bench, charts.

Exit codes: 0 success, 1 failure (JSON error on stderr), 2 usage error,
3 numerical failure (the optimizer trace is written next to the outputs).
Set ``SKELFIT_LOG`` (e.g. ``INFO`` or ``DEBUG``) for progress logging.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .bodymodel import BodyState, body_forward, body_landmarks
from .energies import EnergySpec
from .exceptions import NumericalError, SceneError, SkelfitError
from .gradcheck import format_table, run_gradcheck
from .io import (
    PRESETS,
    RESULT_COLUMNS,
    load_json,
    load_preset,
    save_json,
    write_obj,
    write_rows_csv,
    write_trace_csv,
)
from .metrics import d_mean, pve, reconstruction_error
from .optim import OptimizerConfig, compare_rotation_charts, fit_body, fit_skeleton
from .skeleton import SkeletonState, skeleton_forward
from .synth import NOISE_TIERS, Scene, SynthModels, body_warm_start, gen_models, gen_suite, warm_start

log = logging.getLogger("skelfit")

CHART_NAMES = {"quat": "quaternion", "quaternion": "quaternion", "rodrigues": "rodrigues"}
FIT_MODES = ("osf", "osfplus", "plus", "body")
INIT_TIERS = {"truth": "exact", "warm": "warm", "cold": "cold"}


class UsageError(Exception):
    pass


@dataclass
class RunManifest:
    models: Path
    scenes: list
    out: Path
    seed: int = 0
    config: Path | None = None
    tiers: dict = field(default_factory=dict)

    @classmethod
    def load(cls, path):
        path = Path(path)
        d = load_json(path)
        base = path.parent
        m = cls(
            models=base / d["models"],
            scenes=[base / s for s in d["scenes"]],
            out=base / d.get("out", "out"),
            seed=int(d.get("seed", 0)),
            config=(base / d["config"]) if d.get("config") else None,
            tiers=d.get("tiers", {}),
        )
        missing = [str(p) for p in [m.models / "body.json", m.models / "skeleton.json", *m.scenes] if not p.exists()]
        if m.config is not None and not m.config.exists():
            missing.append(str(m.config))
        if missing:
            raise SceneError(f"manifest references missing files: {', '.join(missing[:5])}")
        return m


# --------------------------------------------------------------------------- helpers


def _setup_logging():
    level = os.environ.get("SKELFIT_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")


def _run_config(args, mode, preset=None):
    """OptimizerConfig from --config (file or preset name) overridden by explicit flags."""
    base = {}
    if preset:
        base = load_preset(preset) if preset in PRESETS else load_json(preset)
    energy = EnergySpec.from_dict({**EnergySpec().to_dict(), **base.get("energy", base.get("lambdas", {}))})
    kw = {k: base[k] for k in ("rounds", "steps_per_round", "lr_pose", "lr_shape", "lr_decay", "tol") if k in base}
    if getattr(args, "rounds", None) is not None:
        kw["rounds"] = args.rounds
    if getattr(args, "steps", None) is not None:
        kw["steps_per_round"] = args.steps
    chart = CHART_NAMES[getattr(args, "chart", None) or base.get("chart", "quaternion")]
    return OptimizerConfig(mode=mode, chart=chart, seed=args.seed, energy=energy, **kw)


def run_config_document(config):
    """Run-config JSON: mode, rounds, steps, stepSizes, chart, seed, lambdas."""
    return {
        "mode": config.mode,
        "rounds": config.rounds,
        "steps": config.steps_per_round,
        "stepSizes": {"pose": config.lr_pose, "shape": config.lr_shape, "decay": config.lr_decay},
        "chart": config.chart,
        "seed": config.seed,
        "tol": config.tol,
        "lambdas": config.energy.to_dict(),
    }


def _scene_inputs(args):
    """(models directory, scene paths, default out dir, seed, config path) from --manifest or --scene/--models."""
    if args.manifest:
        m = RunManifest.load(args.manifest)
        return m.models, m.scenes, m.out, m.seed, m.config
    if not args.scene:
        raise UsageError("either --manifest or --scene is required")
    scenes = [Path(s) for s in args.scene]
    models = Path(args.models) if args.models else scenes[0].parent.parent / "models"
    for p in [models / "body.json", *scenes]:
        if not p.exists():
            raise SceneError(f"missing input file {p}")
    return models, scenes, Path("out"), None, None


def _fit_one(task):
    """Fit one scene; returns the result row. Runs in worker processes."""
    models_dir, scene_path, mode, cfg_doc, init_tier, seed, out_dir = task
    models = SynthModels.load(models_dir)
    scene = Scene.from_dict(load_json(scene_path))
    config = OptimizerConfig.from_dict(cfg_doc)
    out = Path(out_dir) / scene.name / mode
    out.mkdir(parents=True, exist_ok=True)
    save_json(out / "run_config.json", run_config_document(config))
    try:
        if mode == "body":
            rng = np.random.default_rng([scene.seed, seed, 3])
            init = scene.gt_body.copy() if init_tier == "exact" else body_warm_start(scene, rng)
            rep = fit_body(models.body, scene, config, init)
        else:
            init = warm_start(scene, NOISE_TIERS[init_tier], models, seed=seed, chart=config.chart)
            rep = fit_skeleton(models.skeleton, models.body, scene.gt_body, init, config)
    except NumericalError as exc:
        write_trace_csv(out / "trace.csv", exc.trace)
        raise NumericalError(f"{scene.name}: {exc}; trace at {out / 'trace.csv'}", exc.trace) from None
    save_json(out / "state.json", rep.state.to_dict())
    report = rep.to_dict()
    report.pop("state")
    report["wallTime"] = round(rep.wall_time, 6)
    save_json(out / "report.json", report)
    write_trace_csv(out / "trace.csv", rep.trace)
    if mode == "body":
        write_obj(out / "body.obj", [("body", body_forward(models.body, rep.state))])
    else:
        posed = skeleton_forward(models.skeleton, rep.state)
        write_obj(out / "skeleton.obj", list(zip(models.skeleton.block_names, posed.vertices)))
    return evaluate_output(models, scene, mode, out)


def evaluate_output(models, scene, mode, out):
    """Result row for one fitted scene directory (state.json + report.json)."""
    state_doc = load_json(out / "state.json")
    report = load_json(out / "report.json")
    if mode == "body":
        fitted = BodyState.from_dict(state_doc)
        fv, gv = body_forward(models.body, fitted), body_forward(models.body, scene.gt_body)
        rec = pve(fv, gv)
        dm = d_mean(body_landmarks(models.body, fv), body_landmarks(models.body, gv))
    else:
        fitted = SkeletonState.from_dict(state_doc)
        p, g = skeleton_forward(models.skeleton, fitted), skeleton_forward(models.skeleton, scene.gt_skeleton)
        rec = reconstruction_error(p.all_vertices, g.all_vertices)
        dm = d_mean(p.landmarks, g.landmarks)
    return {
        "scene": scene.name,
        "method": mode,
        "reconstruction_error_mm": f"{rec:.6f}",
        "d_mean": f"{dm:.9f}",
        "total_time_s": f"{report['wallTime']:.6f}",
    }


def _map(fn, tasks, jobs):
    if jobs <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, tasks))


# --------------------------------------------------------------------------- commands


def cmd_gen(args):
    out = Path(args.out)
    models = gen_models(args.model_seed)
    models.save(out / "models")
    scenes = gen_suite(models, args.scenes, seed=args.seed)
    paths = []
    for sc in scenes:
        sc.model_ids = {"body": "models/body.json", "skeleton": "models/skeleton.json"}
        save_json(out / "scenes" / f"{sc.name}.json", sc.to_dict())
        paths.append(f"scenes/{sc.name}.json")
    manifest = {
        "models": "models",
        "scenes": paths,
        "out": "out",
        "seed": args.seed,
        "config": None,
        "tiers": {k: v.to_dict() for k, v in NOISE_TIERS.items()},
    }
    save_json(out / "manifest.json", manifest)
    print(f"wrote {len(paths)} scenes and models to {out}")
    return 0


def cmd_fit(args):
    models_dir, scenes, default_out, mseed, mconfig = _scene_inputs(args)
    seed = args.seed if args.seed is not None else (mseed or 0)
    args.seed = seed
    out = Path(args.out) if args.out else default_out
    mode = "osf_plus" if args.mode == "osfplus" else args.mode
    config = _run_config(args, mode, args.config or (str(mconfig) if mconfig else None))
    cfg_doc = config.to_dict()
    tier = INIT_TIERS[args.init]
    tasks = [(str(models_dir), str(p), args.mode, cfg_doc, tier, seed, str(out)) for p in scenes]
    rows = _map(_fit_one, tasks, args.jobs)
    write_rows_csv(out / f"results_{args.mode}.csv", rows, RESULT_COLUMNS)
    for r in rows:
        print(f"{r['scene']}  {r['method']}  recon {float(r['reconstruction_error_mm']):.3f} mm  "
              f"d_mean {float(r['d_mean']):.2e}")
    return 0


def cmd_eval(args):
    models_dir, scenes, default_out, _, _ = _scene_inputs(args)
    fits = Path(args.fits) if args.fits else default_out
    models = SynthModels.load(models_dir)
    rows = []
    for p in scenes:
        scene = Scene.from_dict(load_json(p))
        for mode in args.modes.split(","):
            d = fits / scene.name / mode
            if (d / "state.json").exists():
                rows.append(evaluate_output(models, scene, mode, d))
    if not rows:
        raise SceneError(f"no fitted outputs found under {fits}")
    out = Path(args.out) if args.out else fits / "results.csv"
    write_rows_csv(out, rows, RESULT_COLUMNS)
    print(f"wrote {len(rows)} rows to {out}")
    return 0


def _models_for(args):
    return SynthModels.load(args.models) if args.models else gen_models(0)


def cmd_gradcheck(args):
    rows = run_gradcheck(_models_for(args), n_states=args.states, seed=args.seed or 0)
    print(format_table(rows))
    if args.out:
        save_json(args.out, [r.to_dict() for r in rows])
    return 0 if all(r.passed for r in rows) else 1


def _suite(args):
    if args.manifest:
        m = RunManifest.load(args.manifest)
        return SynthModels.load(m.models), [Scene.from_dict(load_json(p)) for p in m.scenes]
    models = _models_for(args)
    return models, gen_suite(models, args.scenes, seed=args.seed or 0)


def cmd_bench(args):
    """Timing table per mode: total seconds, rounds and seconds per round."""
    models, scenes = _suite(args)
    rows = []
    for mode in ("osf_plus", "osf", "plus"):
        config = _run_config(args, mode)
        times, recon = [], []
        for sc in scenes:
            ws = warm_start(sc, NOISE_TIERS["warm"], models, seed=args.seed or 0, chart=config.chart)
            t0 = time.perf_counter()
            rep = fit_skeleton(models.skeleton, models.body, sc.gt_body, ws, config)
            times.append(time.perf_counter() - t0)
            gt = skeleton_forward(models.skeleton, sc.gt_skeleton).all_vertices
            recon.append(reconstruction_error(skeleton_forward(models.skeleton, rep.state).all_vertices, gt))
        mean_t = float(np.mean(times))
        rows.append({
            "method": "osfplus" if mode == "osf_plus" else mode,
            "iterations": config.rounds,
            "total_time_s": f"{mean_t:.4f}",
            "time_per_iteration_s": f"{mean_t / config.rounds:.4f}",
            "reconstruction_error_mm": f"{np.median(recon):.3f}",
        })
    cols = ("method", "iterations", "total_time_s", "time_per_iteration_s", "reconstruction_error_mm")
    print("  ".join(f"{c:>24}" for c in cols))
    for r in rows:
        print("  ".join(f"{str(r[c]):>24}" for c in cols))
    if args.out:
        write_rows_csv(args.out, rows, cols)
    return 0


def cmd_charts(args):
    """Paired quaternion / Rodrigues fits; writes a paired CSV and the full curves."""
    models, scenes = _suite(args)
    config = _run_config(args, "osf")
    problems = []
    for sc in scenes:
        verts = body_forward(models.body, sc.gt_body)
        ws = warm_start(sc, NOISE_TIERS["warm"], models, seed=args.seed or 0)
        problems.append((models.skeleton, body_landmarks(models.body, verts), ws, sc.gt_body.beta, models.body.kp_matrix))
    rows = compare_rotation_charts(problems, config)
    out = Path(args.out)
    paired = [{"problem": r["problem"], "quaternion_final": repr(r["quaternion"]["final"]),
               "rodrigues_final": repr(r["rodrigues"]["final"])} for r in rows]
    write_rows_csv(out / "charts.csv", paired, ("problem", "quaternion_final", "rodrigues_final"))
    save_json(out / "curves.json", rows)
    wins = sum(r["quaternion"]["final"] <= r["rodrigues"]["final"] for r in rows)
    print(f"quaternion <= rodrigues in {wins}/{len(rows)} pairs")
    return 0


# --------------------------------------------------------------------------- parser


def build_parser():
    p = argparse.ArgumentParser(prog="skelfit", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, scenes=True):
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--out", default=None)
        if scenes:
            sp.add_argument("--manifest", default=None, help="suite manifest JSON written by 'gen'")
            sp.add_argument("--scene", action="append", help="scene JSON (repeatable)")
            sp.add_argument("--models", default=None, help="directory holding body.json / skeleton.json")

    g = sub.add_parser("gen", help="generate models and a scene suite")
    g.add_argument("--out", required=True)
    g.add_argument("--scenes", type=int, default=50)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--model-seed", type=int, default=0)
    g.set_defaults(func=cmd_gen)

    f = sub.add_parser("fit", help="fit scenes and write state / report / trace / OBJ")
    common(f)
    f.add_argument("--mode", choices=FIT_MODES, default="osf")
    f.add_argument("--chart", choices=sorted(CHART_NAMES), default=None)
    f.add_argument("--init", choices=sorted(INIT_TIERS), default="warm")
    f.add_argument("--rounds", type=int, default=None)
    f.add_argument("--steps", type=int, default=None)
    f.add_argument("--jobs", type=int, default=1)
    f.add_argument("--config", default=None, help="run-config JSON or preset name (stage1, stage2, stage3)")
    f.set_defaults(func=cmd_fit)

    e = sub.add_parser("eval", help="results CSV from fitted outputs")
    common(e)
    e.add_argument("--fits", default=None, help="directory written by 'fit' (default: manifest out)")
    e.add_argument("--modes", default="osfplus,osf,plus,body")
    e.set_defaults(func=cmd_eval)

    gc = sub.add_parser("gradcheck", help="finite-difference validation table")
    common(gc, scenes=False)
    gc.add_argument("--models", default=None)
    gc.add_argument("--states", type=int, default=50)
    gc.set_defaults(func=cmd_gradcheck)

    for name, func, n in (("bench", cmd_bench, 5), ("charts", cmd_charts, 20)):
        sp = sub.add_parser(name, help="timing table per mode" if name == "bench" else "rotation chart comparison")
        common(sp, scenes=False)
        sp.add_argument("--manifest", default=None)
        sp.add_argument("--models", default=None)
        sp.add_argument("--scenes", type=int, default=n)
        sp.add_argument("--chart", choices=sorted(CHART_NAMES), default=None)
        sp.add_argument("--rounds", type=int, default=None)
        sp.add_argument("--steps", type=int, default=None)
        sp.set_defaults(func=func)
    return p


def _fail(code, kind, message, **extra):
    sys.stderr.write(json.dumps({"error": kind, "message": message, **extra}) + "\n")
    return code


def main(argv=None):
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "charts" and not args.out:
        parser.error("charts needs --out")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        return _fail(2, "usage", str(exc))
    except NumericalError as exc:
        return _fail(3, "numerical", str(exc))
    except (SkelfitError, OSError, ValueError, KeyError) as exc:
        return _fail(1, type(exc).__name__, str(exc))


if __name__ == "__main__":
    sys.exit(main())
