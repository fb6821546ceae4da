import sys
import argparse
import logging
from pathlib import Path
from typing import List, Optional

import numpy as np
import yaml
from dotenv import load_dotenv
from tabulate import tabulate

from src.formats.images import load_style_dir, load_style_image, write_png
from src.formats.ppm import write_ppm
from src.formats.run_config import load_run_config
from src.formats.style_cache import StyleCache
from src.metrics.engine import RANGES, ConsistencyEngine
from src.nets.revnet import rev_inverse, to_display
from src.render.renderer import render
from src.scene.bundle_io import load_scene, save_scene
from src.scene.generator import SceneSpec, generate_scene
from src.stylize.gaussian import TRANSFORM_MODES, GaussianStylizer
from src.stylize.per_frame import PerFrameStylizer
from src.train.config import TrainConfig
from src.train.gradcheck import COMPONENTS, run_gradcheck
from src.train.predictor_fit import PASS_RATIO, PredictorFitter
from src.train.stage1 import train_stage1
from src.train.stage2 import train_stage2
from src.train.state import ModelState
from src.utils.errors import InvalidInputError, SceneSpecError, UsageError
from src.utils.logging import setup_logging
from src.wct.transform import interpolate_styles

logger = logging.getLogger(__name__)

GPU_SECONDS_PER_FRAME = 0.037


class CLIArgumentParser(argparse.ArgumentParser):
    """ArgumentParser that raises instead of exiting, so usage errors map to exit code 1."""

    def error(self, message):
        raise UsageError(message)


def parse_args(argv: Optional[List[str]] = None):
    """Parse command line arguments."""
    parser = CLIArgumentParser(description="Zero-shot 4D style transfer with embedded Gaussians")
    parser.add_argument("--seed", type=int, default=None, help="Random seed (overrides the run config)")
    parser.add_argument("--config", help="YAML run config")
    parser.add_argument("--log-level", default=None, help="Logging level (default: $G4DS_LOG_LEVEL or INFO)")
    sub = parser.add_subparsers(dest="command", parser_class=CLIArgumentParser)
    sub.required = True

    p = sub.add_parser("gen-scene", help="Generate a procedural dynamic scene")
    p.add_argument("--spec", help="YAML file with scene parameters")
    p.add_argument("--out", required=True, help="Output scene.json path")
    p.add_argument("--cameras", type=int, help="Number of cameras")
    p.add_argument("--timesteps", type=int, help="Number of timestamps")
    p.add_argument("--resolution", type=int, help="Image resolution in pixels")
    p.add_argument("--gaussians", type=int, help="Number of Gaussians")
    p.add_argument("--layout", choices=["ring", "row"], help="Camera layout")
    p.add_argument("--motion", choices=["linear", "orbital"], help="Sphere motion model")

    p = sub.add_parser("train-embed", help="Stage 1: embedded Gaussians, deformation, reversible net")
    p.add_argument("--scene", help="Scene JSON (default: paths.scene)")
    p.add_argument("--out", help="Output checkpoint (default: paths.checkpoint)")
    p.add_argument("--metrics", help="Metrics CSV (default: <out>.stage1.csv)")

    p = sub.add_parser("train-style", help="Stage 2: extractors, transform predictors, CSPN")
    p.add_argument("--checkpoint", required=True, help="Stage-1 checkpoint")
    p.add_argument("--scene", help="Scene JSON (default: paths.scene)")
    p.add_argument("--styles", help="Directory of style images (default: paths.styles)")
    p.add_argument("--out", help="Output checkpoint (default: overwrite --checkpoint)")
    p.add_argument("--metrics", help="Metrics CSV (default: <out>.stage2.csv)")

    p = sub.add_parser("render", help="Render one view of a trained model")
    _add_view_args(p)
    p.add_argument("--out", required=True, help="Output PPM")
    p.add_argument("--branch", choices=["color", "feature"], default="color",
                   help="Color head C or the reversible decoding of F")
    p.add_argument("--reference", action="store_true", help="Use the per-pixel compositing loop")
    p.add_argument("--png", action="store_true", help="Also write a PNG next to the PPM")

    p = sub.add_parser("stylize", help="Stylize one view with an unseen style image")
    _add_view_args(p)
    _add_style_args(p)
    p.add_argument("--style", required=True, help="Style image (PPM, PNG or JPEG)")
    p.add_argument("--out", required=True, help="Output PPM")
    p.add_argument("--png", action="store_true", help="Also write a PNG next to the PPM")

    p = sub.add_parser("interpolate", help="Blend several styles and render a camera sweep")
    p.add_argument("--checkpoint", required=True, help="Stage-2 checkpoint")
    _add_style_args(p)
    p.add_argument("--styles", nargs="+", required=True, help="Style images")
    p.add_argument("--weights", nargs="+", type=float, required=True, help="Convex weights, one per style")
    p.add_argument("--t", type=float, default=0.0, help="Timestamp in [0, 1]")
    p.add_argument("--cameras", nargs="+", type=int, help="Cameras of the sweep (default: all)")
    p.add_argument("--out-dir", required=True, help="Output directory")

    p = sub.add_parser("eval-consistency", help="Short/long-range consistency vs the per-frame baseline")
    p.add_argument("--checkpoint", required=True, help="Stage-2 checkpoint")
    p.add_argument("--scene", help="Scene JSON (default: paths.scene)")
    _add_style_args(p)
    p.add_argument("--style", nargs="+", required=True, help="Held-out style image(s)")
    p.add_argument("--range", choices=list(RANGES) + ["both"], default="both", help="Pair range")
    p.add_argument("--out", required=True, help="Per-pair CSV")
    p.add_argument("--summary", help="JSON summary (default: <out>.json)")
    p.add_argument("--no-baseline", action="store_true", help="Skip the per-frame baseline")
    p.add_argument("--flow-dir", help="Also write the oracle flow fields used for the pairs")

    p = sub.add_parser("gradcheck", help="Finite-difference gradient suite")
    p.add_argument("--component", nargs="+", default=["all"],
                   help=f"Components to check: all or any of {', '.join(COMPONENTS)}")
    p.add_argument("--trials", type=int, default=20, help="Coordinates sampled per leaf")

    p = sub.add_parser("fit-predictor", help="Fit the transform predictor on random covariance pairs")
    p.add_argument("--steps", type=int, default=1500, help="Training steps")
    p.add_argument("--dim", type=int, default=32, help="Feature dimension D")
    p.add_argument("--hidden", type=int, default=512, help="Hidden width of each predictor MLP")
    p.add_argument("--lr", type=float, default=1e-3, help="Adam learning rate")
    p.add_argument("--batch", type=int, default=8, help="Covariance pairs per step")
    p.add_argument("--held-out", type=int, default=64, help="Held-out pairs used for scoring")

    p = sub.add_parser("benchmark", help="Time the stylization of one frame")
    _add_view_args(p)
    _add_style_args(p)
    p.add_argument("--style", required=True, help="Style image")
    p.add_argument("--repeats", type=int, default=5, help="Timed repetitions")

    return parser.parse_args(argv)


def _add_view_args(p):
    p.add_argument("--checkpoint", required=True, help="Model checkpoint")
    p.add_argument("--camera", type=int, default=0, help="Camera index")
    p.add_argument("--t", type=float, default=0.0, help="Timestamp in [0, 1]")


def _add_style_args(p):
    p.add_argument("--no-propagation", action="store_true", help="Emit the transformed image without CSPN")
    p.add_argument("--transform", choices=TRANSFORM_MODES, help="Transform source (default: eval.transform)")
    p.add_argument("--style-cache", help="Directory caching per-style transforms")


def load_config(args) -> TrainConfig:
    config = load_run_config(args.config) if args.config else TrainConfig()
    if args.seed is not None:
        config.seed = args.seed
    return config.validate()


def _stylizer(args, config: TrainConfig, state: ModelState) -> GaussianStylizer:
    cache_dir = args.style_cache or config.paths.style_cache
    return GaussianStylizer(
        state,
        tile=config.render.tile,
        transform=args.transform or config.eval.transform,
        propagate=config.eval.propagate and not args.no_propagation,
        cache=StyleCache(cache_dir) if cache_dir else None,
    )


def _write_image(path: str, image: np.ndarray, png: bool):
    write_ppm(path, image)
    if png:
        write_png(Path(path).with_suffix(".png"), image)
    logger.info(f"Wrote {path}")


def cmd_gen_scene(args, config: TrainConfig) -> int:
    values = {}
    if args.spec:
        values = yaml.safe_load(Path(args.spec).read_text(encoding="utf-8")) or {}
        if not isinstance(values, dict):
            raise SceneSpecError(f"Scene spec {args.spec} must be a mapping")
    overrides = {"n_cameras": args.cameras, "n_timesteps": args.timesteps, "resolution": args.resolution,
                 "n_gaussians": args.gaussians, "layout": args.layout, "motion": args.motion}
    values.update({k: v for k, v in overrides.items() if v is not None})
    bundle = generate_scene(SceneSpec.from_dict(values), config.seed)
    save_scene(bundle, args.out)
    return 0


def cmd_train_embed(args, config: TrainConfig) -> int:
    bundle = load_scene(args.scene or config.paths.scene)
    out = args.out or config.paths.checkpoint
    metrics = args.metrics or f"{out}.stage1.csv"
    state = train_stage1(bundle, config, metrics_path=metrics, checkpoint_path=out)
    logger.info(f"Stage 1 finished; checkpoint {out} (digest {state.digest()[:12]})")
    return 0


def cmd_train_style(args, config: TrainConfig) -> int:
    bundle = load_scene(args.scene or config.paths.scene)
    state = ModelState.load(args.checkpoint)
    styles = load_style_dir(args.styles or config.paths.styles, size=config.stage2.style_resolution)
    logger.info(f"Training on {len(styles)} styles: {', '.join(s.name for s in styles)}")
    out = args.out or args.checkpoint
    metrics = args.metrics or f"{out}.stage2.csv"
    state = train_stage2(state, bundle, [s.pixels for s in styles], config, metrics_path=metrics,
                         checkpoint_path=out)
    logger.info(f"Stage 2 finished; checkpoint {out} (digest {state.digest()[:12]})")
    return 0


def cmd_render(args, config: TrainConfig) -> int:
    state = ModelState.load(args.checkpoint)
    if not 0 <= args.camera < len(state.cameras):
        raise UsageError(f"--camera must lie in [0, {len(state.cameras) - 1}], got {args.camera}")
    out = render(state.gaussians, state.deformation, state.cameras[args.camera], args.t, state.heads,
                 tile=config.render.tile, reference=args.reference)
    if args.branch == "color":
        image = to_display(out.color)
    else:
        image = to_display(rev_inverse(state.revnet, out.feature))
    _write_image(args.out, image, args.png)
    return 0


def cmd_stylize(args, config: TrainConfig) -> int:
    state = ModelState.load(args.checkpoint)
    stylizer = _stylizer(args, config, state)
    style = load_style_image(args.style, size=config.stage2.style_resolution)
    stylizer.set_style(style.pixels, style_key=style.raw)
    frame = stylizer.stylize(args.camera, args.t)
    _write_image(args.out, to_display(frame.output), args.png)
    return 0


def cmd_interpolate(args, config: TrainConfig) -> int:
    if len(args.weights) != len(args.styles):
        raise UsageError(f"Got {len(args.weights)} weights for {len(args.styles)} styles")
    state = ModelState.load(args.checkpoint)
    stylizer = _stylizer(args, config, state)
    transforms = []
    for path in args.styles:
        style = load_style_image(path, size=config.stage2.style_resolution)
        stylizer.set_style(style.pixels, style_key=style.raw)
        transforms.append(stylizer.transform)
    stylizer.set_transform(interpolate_styles(list(zip(transforms, args.weights))))
    cameras = args.cameras if args.cameras else list(range(len(state.cameras)))
    out_dir = Path(args.out_dir)
    for ci in cameras:
        frame = stylizer.stylize(ci, args.t)
        write_ppm(out_dir / f"view_{ci:02d}.ppm", to_display(frame.output))
    logger.info(f"Wrote {len(cameras)} blended views to {out_dir}")
    return 0


def cmd_eval_consistency(args, config: TrainConfig) -> int:
    bundle = load_scene(args.scene or config.paths.scene)
    state = ModelState.load(args.checkpoint)
    stylizers = [_stylizer(args, config, state)]
    if not args.no_baseline:
        stylizers.append(PerFrameStylizer(state, tile=config.render.tile))
    styles = {}
    for path in args.style:
        style = load_style_image(path, size=config.stage2.style_resolution)
        styles[style.name] = style.pixels
    ranges = list(RANGES) if args.range == "both" else [args.range]
    engine = ConsistencyEngine(bundle, stylizers, config.eval)
    reports = engine.evaluate(styles, ranges)
    engine.write_csv(reports, args.out)
    engine.write_summary(reports, args.summary or Path(args.out).with_suffix(".json"))
    if args.flow_dir:
        engine.write_flows(args.flow_dir)
    engine.print_results(reports)
    return 0


def cmd_gradcheck(args, config: TrainConfig) -> int:
    report = run_gradcheck(args.component, trials=args.trials, seed=config.seed)
    print(report)
    if not report.passed:
        failed = [r.name for r in report.results if not r.passed]
        logger.error(f"Gradient check failed for: {', '.join(failed)}")
        return 2
    return 0


def cmd_fit_predictor(args, config: TrainConfig) -> int:
    try:
        fitter = PredictorFitter(dim=args.dim, hidden=args.hidden, lr=args.lr, batch=args.batch, seed=config.seed)
        report = fitter.fit(args.steps, held_out=args.held_out)
    except InvalidInputError as e:
        raise UsageError(str(e)) from e
    print(report)
    if not report.passed:
        logger.error(f"Predictor reached {report.ratio:.3f} of the identity loss, needs < {PASS_RATIO}")
        return 2
    return 0


def cmd_benchmark(args, config: TrainConfig) -> int:
    if args.repeats < 1:
        raise UsageError(f"--repeats must be positive, got {args.repeats}")
    state = ModelState.load(args.checkpoint)
    stylizer = _stylizer(args, config, state)
    style = load_style_image(args.style, size=config.stage2.style_resolution)
    stylizer.set_style(style.pixels, style_key=style.raw)
    stylizer.stylize(args.camera, args.t)
    runs = []
    for _ in range(args.repeats):
        stylizer.stylize(args.camera, args.t)
        runs.append(dict(stylizer.timings))
    cam = state.cameras[args.camera]
    stages = ["render", "transform", "decode", "propagate", "total"]
    rows = [[stage, f"{np.mean([r[stage] for r in runs]):.4f}", f"{np.min([r[stage] for r in runs]):.4f}"]
            for stage in stages]
    print(f"\nStylization timing ({cam.width}x{cam.height}, {len(state.gaussians)} Gaussians, "
          f"{args.repeats} runs):")
    print(tabulate(rows, headers=["Stage", "Mean (s)", "Min (s)"], tablefmt="grid"))
    print(f"GPU reference: {GPU_SECONDS_PER_FRAME:.3f} s/frame")
    return 0


COMMANDS = {
    "gen-scene": cmd_gen_scene,
    "train-embed": cmd_train_embed,
    "train-style": cmd_train_style,
    "render": cmd_render,
    "stylize": cmd_stylize,
    "interpolate": cmd_interpolate,
    "eval-consistency": cmd_eval_consistency,
    "gradcheck": cmd_gradcheck,
    "fit-predictor": cmd_fit_predictor,
    "benchmark": cmd_benchmark,
}


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point; returns the process exit code."""
    load_dotenv()
    try:
        args = parse_args(argv)
    except UsageError as e:
        print(f"usage error: {str(e)}", file=sys.stderr)
        return 1

    setup_logging(args.log_level)
    try:
        config = load_config(args)
        return COMMANDS[args.command](args, config)
    except UsageError as e:
        logger.error(f"Usage error in {args.command}: {str(e)}")
        return 1
    except Exception as e:
        logger.error(f"Error running {args.command}: {str(e)}")
        return 2


if __name__ == "__main__":
    sys.exit(main())
