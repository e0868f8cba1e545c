"""Command-line entry point: ``viewstitch {stitch,evaluate,generate,cluster}``.

Exit codes: 0 success, 1 invalid input, 2 stitching failed.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
import time
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from . import serialize as io
from .evaluation import DetectionThresholds, EvaluationError, evaluate_scenes
from .geometry import GeometryError
from .pose_space import PoseHypothesis, PoseSpaceError, kmeans_translations, spherical_kmeans_rotations
from .stitcher import EdgeParams, StitchError, StitchWeights, solve

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_SOLVE_FAILED = 2

log = logging.getLogger("viewstitch")


def _default_seed() -> int:
    raw = os.environ.get("SEED")
    if raw is None or raw == "":
        return 0
    try:
        return int(raw)
    except ValueError:
        raise SystemExit(f"error: SEED environment variable must be an integer, got {raw!r}")


def _write(text: str, out: Optional[str]) -> None:
    if out is None or out == "-":
        sys.stdout.write(text)
    else:
        Path(out).write_text(text, encoding="utf-8")


# ---------------------------------------------------------------------------
# stitch


def cmd_stitch(args) -> int:
    try:
        pair = io.load_scene_pair(args.input)
        affinity = pair.resolve_affinity()
        w = StitchWeights(
            lambda_s=args.lambda_s,
            lambda_u=args.lambda_u,
            lambda_p_rot=args.lambda_rot,
            lambda_p_trans=args.lambda_trans,
            k_samples=args.k_samples,
            affinity_threshold=args.threshold,
        )
        edge = EdgeParams(max_points=args.max_points)
        if not pair.views[0] or not pair.views[1]:
            empty = 0 if not pair.views[0] else 1
            raise io.ValidationError(f"views[{empty}]", "needs at least one object")
    except (io.ValidationError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    k_rot = min(args.k_rot, len(pair.camera.rotation_bins))
    k_trans = min(args.k_trans, len(pair.camera.translation_bins))
    start = time.perf_counter()
    try:
        result = solve(list(pair.views[0]), list(pair.views[1]), affinity, pair.camera, w, k_rot, k_trans,
                       seed=args.seed, edge=edge, workers=args.workers)
    except (StitchError, GeometryError, PoseSpaceError) as exc:
        print(f"error: stitching failed: {exc}", file=sys.stderr)
        return EXIT_SOLVE_FAILED
    elapsed = time.perf_counter() - start
    _write(io.dumps(io.report_to_dict(result, w, elapsed)), args.out)
    log.info("objective %.6f with %d pairs in %.3f s", result.objective, len(result.correspondence), elapsed)
    return EXIT_OK


# ---------------------------------------------------------------------------
# evaluate


def _pairs_of_paths(pred: Path, gt: Path) -> List[tuple]:
    if pred.is_dir() != gt.is_dir():
        raise io.ValidationError(str(pred), "predictions and ground truth must both be files or both be directories")
    if not pred.is_dir():
        return [(pred, gt)]
    out = []
    for p in sorted(pred.glob("*.json")):
        if p.name == "manifest.json":
            continue
        g = gt / p.name
        if not g.exists():
            raise io.ValidationError(str(g), "no ground-truth file for this prediction")
        out.append((p, g))
    if not out:
        raise io.ValidationError(str(pred), "no prediction files found")
    return out


def _scene_for_evaluation(pred_path: Path, gt_path: Path) -> dict:
    truth = io.load_scene_pair(gt_path)
    if truth.ground_truth is None:
        raise io.ValidationError(f"{gt_path}: ground_truth", "missing required field")
    gt = truth.ground_truth
    raw = io.load_json(pred_path)
    if isinstance(raw, dict) and "merged" in raw:
        report = io.report_from_dict(raw)
        predictions, pose, corr = list(report.merged), report.pose, report.correspondence
    else:
        as_pair = io.scene_pair_from_dict(raw)
        if as_pair.ground_truth is None:
            raise io.ValidationError(f"{pred_path}", "neither a stitch report nor a scene file with ground_truth")
        pg = as_pair.ground_truth
        predictions, corr = pg.view1_objects(), pg.correspondence
        pose = PoseHypothesis(pg.relative_pose[0], pg.relative_pose[1])
    try:
        affinity = truth.resolve_affinity()
    except io.ValidationError:
        affinity = None
    n, m = len(truth.views[0]), len(truth.views[1])
    corr.check(n, m)
    return {
        "predictions": predictions,
        "ground_truth": gt.view1_objects(),
        "affinity": affinity,
        "predicted_correspondence": corr,
        "gt_correspondence": gt.correspondence,
        "pose": pose,
        "gt_pose": gt.relative_pose,
    }


def cmd_evaluate(args) -> int:
    try:
        th = DetectionThresholds(
            trans_max=args.trans_max,
            scale_max=args.scale_max,
            rot_max=math.radians(args.rot_max_deg),
            fscore_min=args.fscore_min,
            fscore_tau=args.fscore_tau,
        )
        scenes = [_scene_for_evaluation(p, g) for p, g in _pairs_of_paths(Path(args.predictions), Path(args.ground_truth))]
        report = evaluate_scenes(scenes, th)
    except (io.ValidationError, EvaluationError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    if args.format == "json":
        _write(json.dumps(report.as_dict(), indent=1, sort_keys=True) + "\n", args.out)
    else:
        _write(report.to_text() + "\n", args.out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# generate


def cmd_generate(args) -> int:
    from . import synthetic as syn

    if args.scenes < 1:
        print("error: --scenes must be at least 1", file=sys.stderr)
        return EXIT_INVALID
    try:
        params = syn.SceneParams(n_objects=args.objects, visibility=args.visibility,
                                 partial_overlap=args.visibility == "frustum" and args.objects > 1)
        base = syn.NoiseModel.moderate() if args.noise_preset == "moderate" else syn.NoiseModel()
        overrides = {
            "trans_sigma": args.noise_trans,
            "rot_sigma": None if args.noise_rot_deg is None else math.radians(args.noise_rot_deg),
            "scale_sigma": args.noise_scale,
            "embedding_noise": args.noise_embedding,
            "pose_top1_accuracy": args.pose_accuracy,
            "duplicate_shape_prob": args.duplicate_prob,
            "duplicate_similarity": args.duplicate_similarity,
        }
        noise = syn.NoiseModel(**{**vars(base), **{k: v for k, v in overrides.items() if v is not None}})
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    seeds = [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(args.seed).spawn(args.scenes)]
    entries = []
    for k, s in enumerate(seeds):
        try:
            pair = syn.make_pair(params, noise, s)
        except syn.SceneGenerationError as exc:
            print(f"error: scene {k} (seed {s}): {exc}", file=sys.stderr)
            return EXIT_SOLVE_FAILED
        name = f"scene_{k:04d}.json"
        io.save_json(out / name, io.scene_pair_to_dict(io.scene_pair_from_synthetic(pair)))
        entries.append({"file": name, "seed": s})
    manifest = {
        "version": io.FORMAT_VERSION,
        "seed": args.seed,
        "scenes": entries,
        "scene_params": {k: v for k, v in vars(params).items()},
        "noise": dict(vars(noise)),
    }
    io.save_json(out / "manifest.json", manifest)
    return EXIT_OK


# ---------------------------------------------------------------------------
# cluster


def cmd_cluster(args) -> int:
    try:
        corpus = io.load_json(args.poses)
        rots = np.array([io._vector(q, f"rotations_wxyz[{k}]", 4) for k, q in
                         enumerate(io._list(io._field(corpus, "rotations_wxyz", ""), "rotations_wxyz"))]).reshape(-1, 4)
        trans = np.array([io._vector(t, f"translations[{k}]", 3) for k, t in
                          enumerate(io._list(io._field(corpus, "translations", ""), "translations"))]).reshape(-1, 3)
        norms = np.linalg.norm(rots, axis=1)
        bad = np.flatnonzero(np.abs(norms - 1.0) > 1e-6)
        if bad.size:
            raise io.ValidationError(f"rotations_wxyz[{bad[0]}]", "quaternion is not unit norm")
        rbins = spherical_kmeans_rotations(rots, args.k_rot, seed=args.seed, workers=args.workers)
        tbins = kmeans_translations(trans, args.k_trans, seed=args.seed, workers=args.workers)
    except (io.ValidationError, PoseSpaceError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    _write(io.dumps(io.bins_to_dict(rbins, tbins)), args.out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    seed = _default_seed()
    parser = argparse.ArgumentParser(prog="viewstitch", description=__doc__.splitlines()[0], formatter_class=fmt)
    parser.add_argument("-v", "--verbose", action="count", default=0, help="log more (repeatable)")
    sub = parser.add_subparsers(dest="command", required=True)

    d = StitchWeights()
    p = sub.add_parser("stitch", help="stitch one scene-pair file", formatter_class=fmt)
    p.add_argument("input", help="scene-pair JSON file")
    p.add_argument("--out", default="-", help="report path, '-' for stdout")
    p.add_argument("--seed", type=int, default=seed, help="random seed (env SEED)")
    p.add_argument("--k-samples", type=int, default=d.k_samples, help="correspondence proposals per hypothesis")
    p.add_argument("--k-rot", type=int, default=3, help="rotation bins searched")
    p.add_argument("--k-trans", type=int, default=10, help="translation bins searched")
    p.add_argument("--lambda-s", type=float, default=d.lambda_s, help="weight of the affinity term")
    p.add_argument("--lambda-u", type=float, default=d.lambda_u, help="weight of the unmatched-object term")
    p.add_argument("--lambda-rot", type=float, default=d.lambda_p_rot, help="weight of the rotation probability term")
    p.add_argument("--lambda-trans", type=float, default=d.lambda_p_trans, help="weight of the translation probability term")
    p.add_argument("--threshold", type=float, default=d.affinity_threshold, help="affinity needed for a pair to be matchable")
    p.add_argument("--max-points", type=int, default=EdgeParams().max_points, help="edge points per object")
    p.add_argument("--workers", type=int, default=1, help="threads over pose hypotheses")
    p.set_defaults(func=cmd_stitch)

    th = DetectionThresholds()
    p = sub.add_parser("evaluate", help="score stitch reports against ground truth", formatter_class=fmt)
    p.add_argument("predictions", help="stitch report or scene file with ground truth (or a directory of them)")
    p.add_argument("ground_truth", help="scene file with a ground_truth block (or a directory of them)")
    p.add_argument("--format", choices=("json", "text"), default="text", help="output format")
    p.add_argument("--out", default="-", help="output path, '-' for stdout")
    p.add_argument("--trans-max", type=float, default=th.trans_max, help="translation error threshold, meters")
    p.add_argument("--scale-max", type=float, default=th.scale_max, help="scale error threshold")
    p.add_argument("--rot-max-deg", type=float, default=math.degrees(th.rot_max), help="rotation error threshold, degrees")
    p.add_argument("--fscore-min", type=float, default=th.fscore_min, help="minimum shape F-score")
    p.add_argument("--fscore-tau", type=float, default=th.fscore_tau, help="F-score distance threshold")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("generate", help="write synthetic scene-pair files", formatter_class=fmt)
    p.add_argument("--scenes", type=int, default=10, help="number of scene pairs")
    p.add_argument("--objects", type=int, default=5, help="objects per scene")
    p.add_argument("--visibility", choices=("frustum", "both"), default="frustum", help="visibility model")
    p.add_argument("--noise-preset", choices=("zero", "moderate"), default="moderate", help="base noise level")
    p.add_argument("--noise-trans", type=float, default=None, help="translation noise sigma, meters (overrides preset)")
    p.add_argument("--noise-rot-deg", type=float, default=None, help="rotation noise sigma, degrees (overrides preset)")
    p.add_argument("--noise-scale", type=float, default=None, help="log2 scale noise sigma (overrides preset)")
    p.add_argument("--noise-embedding", type=float, default=None, help="embedding perturbation, radians (overrides preset)")
    p.add_argument("--pose-accuracy", type=float, default=None, help="top-1 pose bin accuracy (overrides preset)")
    p.add_argument("--duplicate-prob", type=float, default=None, help="chance an object reuses an earlier shape (overrides preset)")
    p.add_argument("--duplicate-similarity", type=float, default=None, help="embedding cosine of duplicates (overrides preset)")
    p.add_argument("--seed", type=int, default=seed, help="random seed (env SEED)")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("cluster", help="build pose bins from a pose corpus", formatter_class=fmt)
    p.add_argument("--poses", required=True, help="JSON with rotations_wxyz and translations lists")
    p.add_argument("--k-rot", type=int, default=30, help="rotation bins")
    p.add_argument("--k-trans", type=int, default=60, help="translation bins")
    p.add_argument("--seed", type=int, default=seed, help="random seed (env SEED)")
    p.add_argument("--workers", type=int, default=1, help="threads for the assignment step")
    p.add_argument("--out", default="-", help="bin-set path, '-' for stdout")
    p.set_defaults(func=cmd_cluster)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=(logging.WARNING, logging.INFO, logging.DEBUG)[min(args.verbose, 2)],
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
