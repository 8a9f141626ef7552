"""Command-line interface.

Verbs: synth, fit-body, reconstruct, evaluate, pipeline, compare.
Exit codes: 0 success, 2 stage failure, 3 invalid configuration or arguments.
The MVAVATAR_OUT environment variable sets the default output root for
relative --out paths.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from .exceptions import ComparisonError, MvAvatarError, StageError

EXIT_OK = 0
EXIT_STAGE_FAILURE = 2
EXIT_INVALID_CONFIG = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_INVALID_CONFIG)


def _resolve_out(path: str) -> str:
    root = os.environ.get("MVAVATAR_OUT", "")
    if root and not os.path.isabs(path):
        return os.path.join(root, path)
    return path


def _load_config(path):
    if not path:
        return {}
    with open(path) as fh:
        return json.load(fh)


def _parse_views(value):
    if value in (None, "all"):
        return "all"
    if "," in value:
        return [int(v) for v in value.split(",")]
    return int(value)


def _add_common(parser):
    parser.add_argument("--seed", type=int, default=0, help="root random seed")
    parser.add_argument("--config", default="", help="JSON config file")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--views", default="all",
                        help="1, 2, all, or comma-separated indices")
    parser.add_argument("--resolution", type=int, default=256)


def _add_fit_flags(parser):
    parser.add_argument("--lambda-n", type=float, default=None)
    parser.add_argument("--lambda-l", type=float, default=None)
    parser.add_argument("--lambda-h", type=float, default=None)
    parser.add_argument("--max-iters", type=int, default=None)
    parser.add_argument("--no-head-loss", action="store_true",
                        help="set the head regularizer weight to 0")


def _fit_config(args, base: dict):
    from .fitting import FitConfig

    cfg = FitConfig.from_dict(base.get("fit", {}))
    if args.lambda_n is not None:
        cfg.lambda_n = args.lambda_n
    if args.lambda_l is not None:
        cfg.lambda_l = args.lambda_l
    if args.lambda_h is not None:
        cfg.lambda_h = args.lambda_h
    if args.max_iters is not None:
        cfg.max_iterations = args.max_iters
    if args.no_head_loss:
        cfg.lambda_h = 0.0
    return cfg


def cmd_synth(args) -> int:
    from .synth import make_scene, save_scene

    out = _resolve_out(args.out)
    base = _load_config(args.config)
    scene = make_scene(
        subject_seed=args.seed,
        noise_seed=args.noise_seed if args.noise_seed is not None else args.seed + 1,
        amplitude_m=args.amplitude,
        pose=args.pose,
        n_views=args.n_views,
        resolution=args.resolution,
        **base.get("synth", {}),
    )
    save_scene(scene, out)
    print(f"scene written to {out} ({scene.n_views} views, pose={scene.pose}, "
          f"amplitude={scene.amplitude_m} m)")
    return EXIT_OK


def cmd_fit_body(args) -> int:
    import numpy as np

    from .body import average_params
    from .fitting import optimize, write_loss_trace
    from .humanoid import default_model
    from .pipeline import select_views
    from .synth import load_scene

    out = _resolve_out(args.out)
    os.makedirs(out, exist_ok=True)
    base = _load_config(args.config)
    scene = load_scene(args.scene)
    idx = select_views(scene.n_views, _parse_views(args.views))
    model = default_model()
    cfg = _fit_config(args, base)
    init = average_params([scene.noisy_estimates[i] for i in idx])
    result = optimize(model, [scene.observations[i] for i in idx], init, cfg)
    result.params.save(os.path.join(out, "body_params.json"))
    write_loss_trace(os.path.join(out, "loss_trace.csv"), result.loss_trace)
    print(f"fit over views {idx}: total loss "
          f"{result.loss_trace[0].total:.4f} -> {result.loss_trace[-1].total:.4f} "
          f"in {result.iterations_run} iterations ({result.stop_reason})")
    return EXIT_OK


def _pipeline_config(args, base: dict):
    from .pipeline import PipelineConfig

    cfg = PipelineConfig.from_dict(base) if base else PipelineConfig()
    cfg.views = _parse_views(args.views)
    cfg.seed = args.seed
    if getattr(args, "provider", None):
        cfg.provider = args.provider
    if getattr(args, "label", ""):
        cfg.label = args.label
    if getattr(args, "no_evaluate", False):
        cfg.evaluate = False
    if hasattr(args, "lambda_n"):
        cfg.fit = _fit_config(args, base)
    return cfg


def cmd_reconstruct(args) -> int:
    from .pipeline import run_pipeline

    out = _resolve_out(args.out)
    cfg = _pipeline_config(args, _load_config(args.config))
    manifest = run_pipeline(args.scene, cfg, out, resume=args.resume)
    print(f"reconstruction complete: {manifest.output('fuse', 'mesh_ply')}")
    if cfg.evaluate:
        print(open(manifest.output("evaluate", "table")).read().rstrip())
    return EXIT_OK


def cmd_evaluate(args) -> int:
    from .mesh_io import load_mesh
    from .metrics import MetricConfig, evaluate_pair, report_table, write_report_csv

    out = _resolve_out(args.out)
    os.makedirs(out, exist_ok=True)
    rec = load_mesh(args.rec)
    gt = load_mesh(args.gt)
    cfg = MetricConfig(sample_count=args.samples, seed=args.seed)
    report = evaluate_pair(rec, gt, cfg)
    report.save(os.path.join(out, "metrics.json"))
    label = os.path.basename(str(args.rec))
    table = report_table([(label, report)])
    write_report_csv(os.path.join(out, "metrics.csv"), [(label, report)])
    with open(os.path.join(out, "metrics.txt"), "w") as fh:
        fh.write(table + "\n")
    print(table)
    return EXIT_OK


def cmd_pipeline(args) -> int:
    from .pipeline import run_pipeline
    from .synth import make_scene, save_scene

    out = _resolve_out(args.out)
    os.makedirs(out, exist_ok=True)
    base = _load_config(args.config)
    scene = make_scene(
        subject_seed=args.seed,
        noise_seed=args.seed + 1,
        amplitude_m=args.amplitude,
        pose=args.pose,
        n_views=args.n_views,
        resolution=args.resolution,
        **base.get("synth", {}),
    )
    scene_dir = os.path.join(out, "scene")
    save_scene(scene, scene_dir)
    cfg = _pipeline_config(args, base)
    manifest = run_pipeline(scene, cfg, os.path.join(out, "run"),
                            resume=args.resume, gt_reference=scene_dir)
    print(f"pipeline complete: {manifest.output('fuse', 'mesh_ply')}")
    if cfg.evaluate:
        print(open(manifest.output("evaluate", "table")).read().rstrip())
    return EXIT_OK


def cmd_compare(args) -> int:
    from .pipeline import compare_runs

    table = compare_runs(args.runs, aggregate=args.aggregate)
    print(table)
    if args.out:
        out = _resolve_out(args.out)
        os.makedirs(os.path.dirname(out) or ".", exist_ok=True)
        with open(out, "w") as fh:
            fh.write(table + "\n")
    return EXIT_OK


def build_parser() -> _Parser:
    parser = _Parser(prog="mvavatar",
                     description="Multi-view clothed avatar reconstruction")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[], help="generate a synthetic scene")
    _add_common(p)
    p.add_argument("--noise-seed", type=int, default=None)
    p.add_argument("--amplitude", type=float, default=0.02,
                   help="clothing displacement amplitude in meters")
    p.add_argument("--pose", default="rest", choices=["rest", "walking", "arms_raised"])
    p.add_argument("--n-views", type=int, default=8)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("fit-body", help="fit the body model to a scene's views")
    _add_common(p)
    p.add_argument("--scene", required=True)
    _add_fit_flags(p)
    p.set_defaults(func=cmd_fit_body)

    p = sub.add_parser("reconstruct", help="run the pipeline on an existing scene")
    _add_common(p)
    p.add_argument("--scene", required=True)
    p.add_argument("--provider", choices=["oracle", "file"], default=None)
    p.add_argument("--label", default="")
    p.add_argument("--resume", action="store_true")
    p.add_argument("--no-evaluate", action="store_true")
    _add_fit_flags(p)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("evaluate", help="compare a reconstruction against ground truth")
    p.add_argument("--rec", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--samples", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("pipeline", help="synthesize a scene and reconstruct it")
    _add_common(p)
    p.add_argument("--amplitude", type=float, default=0.02)
    p.add_argument("--pose", default="rest", choices=["rest", "walking", "arms_raised"])
    p.add_argument("--n-views", type=int, default=8)
    p.add_argument("--provider", choices=["oracle", "file"], default=None)
    p.add_argument("--label", default="")
    p.add_argument("--resume", action="store_true")
    p.add_argument("--no-evaluate", action="store_true")
    _add_fit_flags(p)
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("compare", help="tabulate metric reports of several runs")
    p.add_argument("runs", nargs="+", help="run output directories")
    p.add_argument("--aggregate", action="store_true",
                   help="average runs sharing a label")
    p.add_argument("--out", default="", help="optional path for the table")
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE_FAILURE
    except (ComparisonError, MvAvatarError, ValueError, FileNotFoundError,
            json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID_CONFIG


if __name__ == "__main__":
    sys.exit(main())
