"""Command-line pipeline: gen / train / eval / activate / sweep.

stdout carries one machine-readable JSON line per run; everything else
goes to stderr, gated by FCNET_LOG (error, info, debug).  Exit codes:
0 success, 1 runtime failure (e.g. unwritable output), 2 usage or input
errors.  Every run drops an effective-config JSON next to its outputs;
none of the outputs embed timestamps, so reruns with the same seed are
byte-identical.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import json
import logging
import os
import sys

import numpy as np

from . import detector, evaluation, synthdata
from .activation import self_activation_map, write_pgm, write_raw_csv
from .calibration import find_calibration_regions, regions_to_json
from .detector import TrainConfig

log = logging.getLogger("fcnet.cli")

EVAL_SUBSETS = ("all", "reasonable", "partial", "heavy", "reasonable+heavy")


class UsageError(Exception):
    pass


def _setup_logging() -> None:
    wanted = os.environ.get("FCNET_LOG", "error").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    if wanted not in levels:
        print(f"warning: FCNET_LOG={wanted!r} not one of {sorted(levels)}, using error",
              file=sys.stderr)
        wanted = "error"
    logging.basicConfig(stream=sys.stderr, level=levels[wanted],
                        format="%(name)s: %(message)s")


def _require_file(path, what: str) -> str:
    if not os.path.isfile(path):
        raise UsageError(f"{what} not found: {path}")
    return path


def _load_json_file(path, what: str) -> dict:
    _require_file(path, what)
    with open(path, "r", encoding="utf-8") as f:
        try:
            return json.load(f)
        except json.JSONDecodeError as e:
            raise UsageError(f"{what} {path} is not valid JSON: {e}") from e


def _write_json(path, obj) -> None:
    with open(path, "w", encoding="ascii") as f:
        json.dump(obj, f, sort_keys=True, indent=2)
        f.write("\n")


def _emit(obj) -> None:
    print(json.dumps(obj, sort_keys=True))


def _on_off(value: str) -> bool:
    if value == "on":
        return True
    if value == "off":
        return False
    raise argparse.ArgumentTypeError(f"expected on or off, got {value!r}")


# flag dest -> TrainConfig field
_TRAIN_FLAG_FIELDS = {
    "iters": "iterations",
    "lr": "lr",
    "seed": "seed",
    "pixel": "pixel",
    "region": "region",
    "rh": "r_h",
    "rw": "r_w",
}


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file with TrainConfig fields; flags override it")
    p.add_argument("--iters", type=int, default=None, help="training iterations")
    p.add_argument("--lr", type=float, default=None, help="learning rate")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--pixel", type=_on_off, default=None, metavar="on|off",
                   help="pixel-wise feature calibration")
    p.add_argument("--region", type=_on_off, default=None, metavar="on|off",
                   help="per-proposal region calibration")
    p.add_argument("--rh", type=float, default=None, help="region height ratio")
    p.add_argument("--rw", type=float, default=None, help="region width ratio")


def _resolve_train_config(args, overrides: dict | None = None) -> TrainConfig:
    """Precedence: explicit flags > config file > TrainConfig defaults."""
    merged: dict = {}
    if args.config:
        file_cfg = _load_json_file(args.config, "config file")
        unknown = set(file_cfg) - set(TrainConfig.__dataclass_fields__)
        if unknown:
            raise UsageError(f"unknown config fields in {args.config}: {sorted(unknown)}")
        merged.update(file_cfg)
    for flag, name in _TRAIN_FLAG_FIELDS.items():
        value = getattr(args, flag, None)
        if value is not None:
            merged[name] = value
    if overrides:
        merged.update(overrides)
    try:
        return TrainConfig.from_dict(merged)
    except (TypeError, ValueError) as e:
        raise UsageError(f"bad training config: {e}") from e


def cmd_gen(args) -> int:
    spec_obj = _load_json_file(args.spec, "spec file")
    try:
        spec = synthdata.DatasetSpec.from_json(spec_obj)
    except (TypeError, ValueError) as e:
        raise UsageError(f"bad dataset spec {args.spec}: {e}") from e
    scenes = synthdata.generate(spec, args.seed)
    synthdata.save_dataset(args.out, scenes)
    if args.dump_images:
        os.makedirs(args.dump_images, exist_ok=True)
        for scene in scenes:
            synthdata.write_image_pgm(
                os.path.join(args.dump_images, f"scene_{scene.index:05d}.pgm"),
                scene.image)
    _write_json(args.out + ".config.json",
                {"command": "gen", "spec": spec_obj, "seed": args.seed, "out": args.out})
    _emit({"scenes": len(scenes),
           "objects": sum(len(s.objects) for s in scenes),
           "out": args.out})
    return 0


def cmd_train(args) -> int:
    _require_file(args.data, "data file")
    cfg = _resolve_train_config(args)
    dataset = synthdata.load_dataset(args.data)
    params, history = detector.train(dataset, cfg)
    os.makedirs(args.out, exist_ok=True)
    detector.save_checkpoint(args.out, params, cfg, cfg.iterations)
    with open(os.path.join(args.out, "loss.csv"), "w", encoding="ascii") as f:
        f.write("iteration,loss\n")
        for i, loss in enumerate(history):
            f.write(f"{i},{loss!r}\n")
    _write_json(os.path.join(args.out, "config.json"),
                {"command": "train", "data": args.data, "out": args.out,
                 "cfg": cfg.to_dict()})
    _emit({"iterations": cfg.iterations, "final_loss": history[-1], "out": args.out})
    return 0


def _run_inference(params, dataset, cfg):
    return [detector.infer(params, scene.image, cfg) for scene in dataset]


def cmd_eval(args) -> int:
    _require_file(args.data, "data file")
    try:
        params, cfg, _ = detector.load_checkpoint(args.model)
    except FileNotFoundError as e:
        raise UsageError(str(e)) from e
    dataset = synthdata.load_dataset(args.data)
    subsets = tuple(args.subset) if args.subset else EVAL_SUBSETS
    detections = _run_inference(params, dataset, cfg)
    pairs = [[(d.box, d.score) for d in dets] for dets in detections]
    curves = evaluation.evaluate_by_subset(pairs, dataset, subsets)
    os.makedirs(args.out, exist_ok=True)
    evaluation.write_summary_csv(os.path.join(args.out, "summary.csv"), curves)
    for subset, curve in curves.items():
        evaluation.write_curve_csv(
            os.path.join(args.out, f"curve_{subset}.csv"), curve)
    bg_rows = [(ref, evaluation.background_error_fraction(pairs, dataset, at_fppi=ref))
               for ref in evaluation.MR2_REFERENCE_FPPI]
    evaluation.write_background_csv(os.path.join(args.out, "background.csv"), bg_rows)
    _write_json(os.path.join(args.out, "config.json"),
                {"command": "eval", "data": args.data, "model": args.model,
                 "out": args.out, "subsets": list(subsets), "cfg": cfg.to_dict()})
    _emit({"subsets": {name: curve.mr2 for name, curve in curves.items()},
           "out": args.out})
    return 0


def cmd_activate(args) -> int:
    _require_file(args.data, "data file")
    try:
        params, cfg, _ = detector.load_checkpoint(args.model)
    except FileNotFoundError as e:
        raise UsageError(str(e)) from e
    dataset = synthdata.load_dataset(args.data)
    if not 0 <= args.scene < len(dataset):
        raise UsageError(f"--scene {args.scene} out of range, dataset has {len(dataset)} scenes")
    scene = dataset[args.scene]
    cache = detector.forward_image(params, scene.image, [], cfg)
    amap = cache.amap
    os.makedirs(args.out, exist_ok=True)
    write_pgm(os.path.join(args.out, "activation.pgm"), amap.norm)
    write_raw_csv(os.path.join(args.out, "activation_raw.csv"), amap.raw)
    if args.regions:
        m, n = amap.norm.shape
        dumped = []
        for obj in scene.objects:
            grid_box = detector.image_box_to_grid(obj.box, m, n)
            if grid_box is None:
                continue
            regions = find_calibration_regions(amap, grid_box, cfg.r_h, cfg.r_w)
            dumped.append(regions_to_json(regions))
        _write_json(os.path.join(args.out, "regions.json"), dumped)
    _write_json(os.path.join(args.out, "config.json"),
                {"command": "activate", "data": args.data, "model": args.model,
                 "scene": args.scene, "out": args.out, "regions": bool(args.regions)})
    _emit({"out": args.out, "shape": list(amap.norm.shape)})
    return 0


def _sweep_one(task) -> list[tuple]:
    """One (value, seed) training + evaluation; self-contained for use in
    worker processes."""
    data_path, eval_path, cfg_dict, param, value, seed = task
    cfg = TrainConfig.from_dict(cfg_dict)
    dataset = synthdata.load_dataset(data_path)
    params, _ = detector.train(dataset, cfg)
    eval_set = dataset if eval_path == data_path else synthdata.load_dataset(eval_path)
    pairs = [[(d.box, d.score) for d in detector.infer(params, s.image, cfg)]
             for s in eval_set]
    curves = evaluation.evaluate_by_subset(pairs, eval_set,
                                           ("reasonable", "partial", "heavy"))
    return [(param, value, seed, subset, curve.mr2)
            for subset, curve in curves.items()]


def cmd_sweep(args) -> int:
    _require_file(args.data, "data file")
    eval_data = args.eval_data or args.data
    if args.eval_data:
        _require_file(args.eval_data, "eval data file")
    try:
        values = [float(v) for v in args.values.split(",") if v.strip()]
    except ValueError as e:
        raise UsageError(f"bad --values: {e}") from e
    if not values:
        raise UsageError("empty --values list")
    try:
        seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    except ValueError as e:
        raise UsageError(f"bad --seeds: {e}") from e
    if not seeds:
        raise UsageError("empty --seeds list")
    field = {"rh": "r_h", "rw": "r_w"}[args.param]

    tasks = []
    for value in values:
        for seed in seeds:
            cfg = _resolve_train_config(
                args, overrides={field: value, "seed": seed,
                                 "pixel": True, "region": True})
            tasks.append((args.data, eval_data, cfg.to_dict(), args.param, value, seed))

    if args.jobs > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_sweep_one, tasks))
    else:
        results = [_sweep_one(task) for task in tasks]

    with open(args.out, "w", encoding="ascii") as f:
        f.write("param,value,seed,subset,mr2\n")
        for rows in results:
            for param, value, seed, subset, mr2 in rows:
                f.write(f"{param},{value!r},{seed},{subset},{mr2!r}\n")
    _write_json(args.out + ".config.json",
                {"command": "sweep", "data": args.data, "eval_data": eval_data,
                 "param": args.param, "values": values, "seeds": seeds,
                 "jobs": args.jobs, "out": args.out,
                 "run_cfgs": [t[2] for t in tasks]})
    _emit({"runs": len(tasks), "out": args.out})
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fcnet",
        description="Occlusion-aware toy pedestrian detector with feature calibration")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic dataset")
    p.add_argument("--spec", required=True, help="dataset spec JSON file")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True, help="output JSONL path")
    p.add_argument("--dump-images", default=None, metavar="DIR",
                   help="also write per-scene PGM images")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train a detector")
    p.add_argument("--data", required=True, help="JSONL dataset")
    p.add_argument("--out", required=True, help="checkpoint directory")
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True, help="checkpoint directory")
    p.add_argument("--out", required=True, help="output directory for metric CSVs")
    p.add_argument("--subset", action="append", choices=EVAL_SUBSETS,
                   help="evaluate this subset (repeatable; default: all of them)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("activate", help="export a scene's activation map")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--scene", type=int, default=0, metavar="K")
    p.add_argument("--out", required=True)
    p.add_argument("--regions", action="store_true",
                   help="also dump calibration regions for the scene's ground truth")
    p.set_defaults(func=cmd_activate)

    p = sub.add_parser("sweep", help="grid of training runs over a ratio parameter")
    p.add_argument("--data", required=True)
    p.add_argument("--eval-data", default=None,
                   help="separate evaluation dataset (default: --data)")
    p.add_argument("--param", required=True, choices=("rh", "rw"))
    p.add_argument("--values", required=True, help="comma-separated ratio values")
    p.add_argument("--seeds", required=True, help="comma-separated seeds")
    p.add_argument("--out", required=True, help="output CSV path")
    p.add_argument("--jobs", type=int, default=1,
                   help="parallel training processes (default 1, serial)")
    _add_train_flags(p)
    p.set_defaults(func=cmd_sweep)

    return parser


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
