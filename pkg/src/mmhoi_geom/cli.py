"""Command line front end.

Exit codes: 0 success, 1 some scenes/objects failed, 2 usage or I/O error.
Set ``MMHOI_GEOM_LOG`` (e.g. ``INFO``) to change the log level.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import Callable, List, Sequence

import numpy as np

from . import __version__
from .alignment import IcpParams, icp, procrustes
from .evaluation import EvalReport, evaluate_scene, report_summary
from .geometry import GeometryError
from .interaction import PROTOCOLS, EvalConfig, InteractionError
from .losses import LossWeights
from .patches import (DEFAULT_SHRINK_RULES, PATCH_SIZE, ObjectPatchError, PatchGrid,
                      extract_object_patch, load_shrink_rules, orientation_ray)
from .scene_io import load_mesh, load_scene, save_scene
from .synth import SynthConfig, generate

log = logging.getLogger("mmhoi_geom")

EXIT_OK, EXIT_FAILURES, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def parse_thresholds(spec: str) -> tuple:
    """``start:stop:step`` in cm, stop inclusive -> thresholds in meters."""
    try:
        start, stop, step = (float(x) for x in spec.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected start:stop:step, got {spec!r}") from None
    if step <= 0 or stop < start:
        raise argparse.ArgumentTypeError("need step > 0 and stop >= start")
    n = int(round((stop - start) / step)) + 1
    return tuple(round((start + k * step) / 100.0, 12) for k in range(n))


def _pmap(fn: Callable, items: Sequence, jobs: int) -> List:
    if jobs <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def _match(pred_dir: Path, gt_dir: Path):
    for d in (pred_dir, gt_dir):
        if not d.is_dir():
            raise UsageError(f"not a directory: {d}")
    preds = {p.name for p in pred_dir.glob("*.json")}
    gts = {p.name for p in gt_dir.glob("*.json")}
    errors = [{"scene": n, "error": "missing prediction"} for n in sorted(gts - preds)]
    errors += [{"scene": n, "error": "missing ground truth"} for n in sorted(preds - gts)]
    return sorted(preds & gts), errors


def _write(path: Path, text: str) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot write {path}: {exc}") from None


def cmd_synth(args) -> int:
    base = SynthConfig(
        seed=args.seed, n_humans=args.n_humans, n_objects=args.n_objects,
        human_vertex_count=args.human_vertices, object_vertex_count=args.object_vertices,
        rotation_noise_deg=args.rotation_noise_deg, translation_noise_m=args.translation_noise,
        vertex_noise_m=args.vertex_noise, contact_fraction=args.contact_fraction)
    out = Path(args.out)
    for sub in ("gt", "pred"):
        (out / sub).mkdir(parents=True, exist_ok=True)

    def one(k):
        gt, pred = generate(replace(base, seed=base.seed + k))
        name = f"scene_{k:04d}.json"
        save_scene(gt, out / "gt" / name)
        save_scene(pred, out / "pred" / name)
        return name

    names = _pmap(one, range(args.count), args.jobs)
    log.info("wrote %d scene pairs to %s", len(names), out)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    pred_dir, gt_dir = Path(args.pred), Path(args.gt)
    names, errors = _match(pred_dir, gt_dir)
    config = {"mode": args.mode.upper(), "with_scale": not args.no_scale}
    if args.weights:
        config["loss_weights"] = LossWeights.from_json(args.weights).to_dict()

    def one(name):
        try:
            return evaluate_scene(load_scene(pred_dir / name), load_scene(gt_dir / name),
                                  args.mode, name, not args.no_scale), None
        except (ValueError, OSError) as exc:
            return None, {"scene": name, "error": str(exc)}

    results = _pmap(one, names, args.jobs)
    scenes = [r for r, _ in results if r is not None]
    errors = sorted(errors + [e for _, e in results if e is not None], key=lambda e: e["scene"])
    report = EvalReport(args.mode, scenes, errors, config=config)
    out = Path(args.out)
    _write(out / "report.json", report.to_json())
    _write(out / "report.csv", report.to_csv())
    summary = report_summary(report)
    if summary:
        print(summary)
    for e in errors:
        print(f"error: {e['scene']}: {e['error']}", file=sys.stderr)
    return EXIT_FAILURES if errors else EXIT_OK


def cmd_curves(args) -> int:
    pred_dir, gt_dir = Path(args.pred), Path(args.gt)
    names, errors = _match(pred_dir, gt_dir)
    cfg = EvalConfig(delta=args.delta, thresholds=args.thresholds, with_scale=not args.no_scale)

    def one(name):
        try:
            return (load_scene(pred_dir / name), load_scene(gt_dir / name)), None
        except (ValueError, OSError) as exc:
            return None, {"scene": name, "error": str(exc)}

    loaded = _pmap(one, names, args.jobs)
    errors += [e for _, e in loaded if e is not None]
    pairs = [p for p, _ in loaded if p is not None]
    try:
        curve = PROTOCOLS[args.protocol]([p for p, _ in pairs], [g for _, g in pairs], cfg)
    except (InteractionError, GeometryError) as exc:
        print(f"error: protocol {args.protocol}: {exc}", file=sys.stderr)
        return EXIT_FAILURES
    curve.check_monotone()
    out = Path(args.out)
    doc = curve.to_dict()
    doc["errors"] = errors
    _write(out / f"curve_{args.protocol}.csv", curve.to_csv())
    _write(out / f"curve_{args.protocol}.json", json.dumps(doc, indent=2) + "\n")
    for e in errors:
        print(f"error: {e['scene']}: {e['error']}", file=sys.stderr)
    return EXIT_FAILURES if errors else EXIT_OK


def cmd_patches(args) -> int:
    scene = load_scene(args.scene)
    rules = load_shrink_rules(args.shrink_rules) if args.shrink_rules else DEFAULT_SHRINK_RULES
    grid = PatchGrid(scene.image_size[0], scene.image_size[1], args.patch_size)
    entries, failed = [], False
    for i in range(len(scene.objects)):
        try:
            dp = extract_object_patch(scene, i, grid, rules)
        except ObjectPatchError as exc:
            entries.append({"object": i, "error": str(exc)})
            failed = True
            continue
        entry = {"object": i, **dp.to_dict()}
        try:
            entry["ray"] = list(orientation_ray(dp, grid))
        except ValueError as exc:
            entry["ray"] = None
            entry["error"] = str(exc)
            failed = True
        entries.append(entry)
    doc = {"patch_size": grid.patch_size, "image_size": list(scene.image_size), "objects": entries}
    text = json.dumps(doc, indent=2) + "\n"
    if args.out:
        _write(Path(args.out), text)
    else:
        sys.stdout.write(text)
    return EXIT_FAILURES if failed else EXIT_OK


def cmd_align(args) -> int:
    src = load_mesh(args.source).vertices
    dst = load_mesh(args.target).vertices
    if args.method == "procrustes":
        t = procrustes(src, dst, with_scale=not args.no_scale)
        rmse = float(np.sqrt(np.mean(((t.apply(src) - dst) ** 2).sum(1))))
        doc = {"method": "procrustes", "transform": t.to_dict(), "rmse": rmse}
    else:
        res = icp(src, dst, params=IcpParams(args.max_iterations, args.tol))
        doc = {"method": "icp", "transform": res.transform.as_similarity().to_dict(),
               "rmse": res.rmse, "iterations": res.iterations}
    text = json.dumps(doc, indent=2) + "\n"
    if args.out:
        _write(Path(args.out), text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mmhoi-geom", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="write synthetic gt/pred scene pairs")
    s.add_argument("--out", required=True)
    s.add_argument("--count", type=int, default=10)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--n-humans", type=int, default=2)
    s.add_argument("--n-objects", type=int, default=3)
    s.add_argument("--human-vertices", type=int, default=SynthConfig.human_vertex_count)
    s.add_argument("--object-vertices", type=int, default=SynthConfig.object_vertex_count)
    s.add_argument("--rotation-noise-deg", type=float, default=0.0)
    s.add_argument("--translation-noise", type=float, default=0.0, help="meters")
    s.add_argument("--vertex-noise", type=float, default=0.0, help="meters")
    s.add_argument("--contact-fraction", type=float, default=0.5)
    s.add_argument("--jobs", type=int, default=1)
    s.set_defaults(func=cmd_synth)

    e = sub.add_parser("evaluate", help="CD/V2V (cm) after S or M Procrustes alignment")
    e.add_argument("pred")
    e.add_argument("gt")
    e.add_argument("--mode", choices=["s", "m"], default="m")
    e.add_argument("--out", required=True, help="output directory")
    e.add_argument("--no-scale", action="store_true", help="rigid instead of similarity fit")
    e.add_argument("--weights", help="loss-weight JSON echoed into the report config")
    e.add_argument("--jobs", type=int, default=1)
    e.set_defaults(func=cmd_evaluate)

    c = sub.add_parser("curves", help="interaction accuracy curve")
    c.add_argument("pred")
    c.add_argument("gt")
    c.add_argument("--protocol", choices=sorted(PROTOCOLS), default="multi")
    c.add_argument("--thresholds", type=parse_thresholds, default=parse_thresholds("0:30:1"),
                   help="start:stop:step in cm (stop inclusive)")
    c.add_argument("--delta", type=float, default=0.005, help="contact threshold, meters")
    c.add_argument("--no-scale", action="store_true")
    c.add_argument("--out", required=True, help="output directory")
    c.add_argument("--jobs", type=int, default=1)
    c.set_defaults(func=cmd_curves)

    d = sub.add_parser("patches", help="dual-patch encoding of every object in a scene")
    d.add_argument("scene")
    d.add_argument("--out")
    d.add_argument("--patch-size", type=int, default=PATCH_SIZE)
    d.add_argument("--shrink-rules", help="JSON {category_id: [top, bottom]}")
    d.set_defaults(func=cmd_patches)

    a = sub.add_parser("align", help="align one mesh onto another")
    a.add_argument("source")
    a.add_argument("target")
    a.add_argument("--method", choices=["procrustes", "icp"], default="procrustes")
    a.add_argument("--no-scale", action="store_true")
    a.add_argument("--max-iterations", type=int, default=50)
    a.add_argument("--tol", type=float, default=1e-6)
    a.add_argument("--out")
    a.set_defaults(func=cmd_align)
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("MMHOI_GEOM_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ValueError) as exc:
        # unreadable inputs, schema violations, incompatible meshes
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
