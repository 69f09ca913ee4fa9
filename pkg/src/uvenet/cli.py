"""Command-line entry point: ``uvenet {synth,train,enhance,eval,bench,aggregate}``.

Every subcommand accepts ``--config FILE`` (YAML with optional ``model``,
``train``, ``inference``, ``synth`` and ``aggregate`` sections) and
``--seed N``. Failures print one JSON line ``{"error": ..., "message": ...}``
on stderr and exit with status 1.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
import torch
import yaml

from . import annotation, data, evaluation, inference
from .model import ModelConfig, build_model, load_checkpoint
from .training import TrainingConfig, load_config, train

log = logging.getLogger("uvenet")


def _read_doc(path):
    if path is None:
        return {}
    return yaml.safe_load(Path(path).read_text()) or {}


def _resolution(text: str) -> tuple[int, int]:
    try:
        w, h = text.lower().split("x")
        return int(w), int(h)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected WxH, got {text!r}") from None


def cmd_synth(args, doc):
    opts = doc.get("synth") or {}
    seed = args.seed if args.seed is not None else opts.get("seed", 0)
    casts = args.casts or opts.get("casts") or list(data.CASTS)
    if args.clean:
        clean_root = Path(args.clean)
        clips = [(d.name, data.read_frames(d)) for d in sorted(p for p in clean_root.iterdir() if p.is_dir())]
        if not clips:
            raise ValueError(f"no clip directories under {clean_root}")
    else:
        w, h = args.size
        clips = data.procedural_clips(args.clips, args.frames, h, w, seed)
    manifest = data.synthesize_dataset(args.out, args.split, clips, seed=seed, casts=casts,
                                       presets_path=args.presets or opts.get("presets"))
    print(json.dumps({"split": args.split, "clips": len(manifest["clips"]), "root": str(args.out)}))


def cmd_train(args, doc):
    if args.config:
        mcfg, tcfg = load_config(args.config)
    else:
        mcfg, tcfg = ModelConfig(), TrainingConfig()
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.iterations is not None:
        overrides["total_iterations"] = args.iterations
    if overrides:
        tcfg = TrainingConfig(**{**tcfg.__dict__, **overrides})
    clips = data.load_dataset(args.data, args.split, min_frames=mcfg.window_length)
    if not clips:
        raise ValueError(f"no usable training clips under {args.data}/{args.split}")
    dataset = [c.to_memory() for c in clips]
    model = build_model(mcfg, seed=tcfg.seed)
    result = train(model, dataset, tcfg, out_dir=args.out)
    last = result.history[-1] if result.history else {}
    print(json.dumps({"checkpoint": str(result.checkpoint), "iterations": result.iterations, **last}))


def _load_model(args, doc):
    if args.ckpt:
        model, _ = load_checkpoint(args.ckpt)
        return model
    mdoc = dict(doc.get("model") or {})
    preset = mdoc.pop("preset", "full")
    cfg = getattr(ModelConfig, preset)(**mdoc)
    return build_model(cfg, seed=args.seed if args.seed is not None else 0)


def cmd_enhance(args, doc):
    opts = doc.get("inference") or {}
    model, _ = load_checkpoint(args.ckpt)
    frames = data.read_frames(args.input)
    p = inference.plan(len(frames), model.cfg.temporal_radius, frame_size=frames.shape[-2:],
                       memory_budget=opts.get("memory_budget"), sliding=args.sliding or opts.get("sliding", False),
                       tile_size=opts.get("tile_size", 256), tile_overlap=opts.get("tile_overlap", 32))
    result = inference.enhance_clip(model, frames, p, tile=args.tile,
                                    tile_size=opts.get("tile_size", 256), tile_overlap=opts.get("tile_overlap", 32))
    data.write_frames(args.out, result.frames.numpy())
    print(json.dumps({"frames": len(frames), "windows": result.windows,
                      "aenet_activations": result.aenet_activations, "seconds": result.seconds}))


def cmd_eval(args, doc):
    pred, gt = data.read_frames(args.pred), data.read_frames(args.gt)
    report = evaluation.evaluate_frames(pred, gt)
    out = Path(args.out) if args.out else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        evaluation.write_report(report, out / "per_frame.csv", out / "summary.json")
        if len(pred) >= 2:
            evaluation.write_curve_csv(evaluation.brightness_curve(pred), out / "brightness_pred.csv")
            evaluation.write_curve_csv(evaluation.brightness_curve(gt), out / "brightness_gt.csv")
    summary = report.summary()
    if len(pred) >= 2:
        summary["flicker_mean_abs_diff"] = evaluation.brightness_curve(pred).mean_abs_diff
    print(json.dumps(summary))


def cmd_bench(args, doc):
    model = _load_model(args, doc)
    w, h = args.resolution
    rng = np.random.default_rng(args.seed or 0)
    clip = torch.from_numpy(rng.random((model.cfg.window_length, 3, h, w), dtype=np.float32))
    res = evaluation.benchmark(model, clip, repeats=args.repeats)
    if not res.ok:
        raise MemoryError(res.error)
    print(json.dumps({"seconds_per_frame": res.seconds_per_frame, "peak_memory_gib": res.peak_memory_gib,
                      "windows_timed": res.windows_timed, "resolution": f"{w}x{h}"}))


def cmd_aggregate(args, doc):
    opts = doc.get("aggregate") or {}
    tables = annotation.read_ratings_csv(args.ratings)
    mode = args.filter or opts.get("filter_mode", "and")
    results = [annotation.aggregate(t, filter_mode=mode) for t in tables]
    rel = annotation.reliability_stat(tables)
    if args.out:
        annotation.write_results(results, args.out)
    print(json.dumps({"sets": len(results), "filtered_out": sum(r.filtered_out for r in results),
                      "reliability": rel.fraction, "reliability_passed": rel.passed}))


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML configuration file")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="uvenet", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic paired dataset")
    p.add_argument("--out", required=True, help="dataset root")
    p.add_argument("--split", default="train")
    p.add_argument("--clean", help="directory of clean clips (one sub-directory of PNG frames per clip)")
    p.add_argument("--clips", type=int, default=4, help="procedural clips when --clean is not given")
    p.add_argument("--frames", type=int, default=10)
    p.add_argument("--size", type=_resolution, default=(128, 128), help="WxH of procedural clips")
    p.add_argument("--casts", nargs="+", choices=data.CASTS)
    p.add_argument("--presets", help="degradation presets YAML (defaults to the packaged file)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", parents=[common], help="train a model")
    p.add_argument("--data", required=True, help="dataset root")
    p.add_argument("--split", default="train")
    p.add_argument("--out", required=True, help="output directory for checkpoints and metrics.csv")
    p.add_argument("--iterations", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("enhance", parents=[common], help="enhance a directory of frames")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--tile", action="store_true", help="force spatial tiling")
    p.add_argument("--sliding", action="store_true", help="stride-1 windows (one auxiliary pass per frame)")
    p.set_defaults(func=cmd_enhance)

    p = sub.add_parser("eval", parents=[common], help="PSNR/MSE and brightness curves of predicted frames")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--out", help="directory for per_frame.csv, summary.json and brightness curves")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", parents=[common], help="inference time and peak memory")
    p.add_argument("--ckpt", help="checkpoint; without it a randomly initialised model from --config is used")
    p.add_argument("--resolution", type=_resolution, required=True, help="WxH")
    p.add_argument("--repeats", type=int, default=10)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("aggregate", parents=[common], help="aggregate subjective ratings")
    p.add_argument("--ratings", required=True, help="CSV with set_id, observer_id, method_id, score")
    p.add_argument("--out", help="directory for per-set JSON and summary.csv")
    p.add_argument("--filter", choices=("and", "or"))
    p.set_defaults(func=cmd_aggregate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args, _read_doc(args.config))
    except Exception as exc:  # noqa: BLE001 - every failure becomes one structured line
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
