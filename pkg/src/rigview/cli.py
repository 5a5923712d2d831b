"""Command-line surface: generate, refine-poses, warp, train, render, evaluate.

Commands run as independent processes and communicate only through files in
the scene/output directories.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

from . import fileio
from .geometry import camera_pose
from .metrics import EvalReport, psnr, split_dataset, ssim
from .pose_refine import SolverOptions, load_graph, observability_report, save_graph, solve
from .radiance import load_checkpoint
from .render import render_panorama, render_view, resolve_codes
from .scenegen import (default_scene_spec, load_scene, make_correspondences,
                       parse_image_id, render_ground_truth, save_scene,
                       spec_from_dict, spec_to_dict)
from .trainer import TrainConfig, config_from_file, train
from .warp import WarpOptions, generate_virtual_set, load_virtual_set, save_virtual_set

log = logging.getLogger("rigview")


def _apply_threads(n):
    if n is None:
        return
    try:
        import threadpoolctl

        threadpoolctl.threadpool_limits(limits=n)
    except ImportError:
        log.info("threadpoolctl not installed; --threads applies only via "
                 "BLAS environment variables set before startup")


def cmd_generate(args) -> int:
    if args.spec:
        spec = spec_from_dict(fileio.load_json(args.spec))
    else:
        spec = default_scene_spec()
    if args.seed is not None:
        spec.seed = args.seed
    dataset = render_ground_truth(spec)
    save_scene(dataset, args.out)
    graph = make_correspondences(dataset)
    save_graph(Path(args.out) / "correspondences.jsonl", graph)
    print(f"generated {len(dataset.image_ids)} images and "
          f"{len(graph.edges)} correspondence edges in {args.out}")
    return 0


def cmd_refine_poses(args) -> int:
    graph = load_graph(args.graph)
    rig, intrinsics, names = fileio.load_rig(args.rig_in)
    opts = SolverOptions(optimize_point_depths=not args.no_point_depths)
    refined, depths, report = solve(graph, rig, intrinsics, opts)
    fileio.save_rig(args.rig_out, refined, intrinsics, names)
    obs = observability_report(graph, refined, intrinsics)
    doc = {"solve": report.to_dict(),
           "observability": {str(k): v for k, v in obs.items()}}
    if args.report:
        fileio.dump_json(args.report, doc)
    print(f"refined {rig.n_timestamps} ego poses / {rig.n_cameras} rig offsets: "
          f"cost {report.initial_cost:.6g} -> {report.final_cost:.6g} "
          f"in {report.iterations} iterations")
    for cam, entry in obs.items():
        if entry["unconstrained"]:
            print(f"warning: rig translation of camera {cam} is unconstrained "
                  f"by the graph (column norm {entry['column_norm']:.3e})")
    return 0


def cmd_warp(args) -> int:
    dataset = load_scene(args.scene)
    opts = WarpOptions(virtual_per_real=args.virtual_per_real)
    views = generate_virtual_set(dataset, dataset.rig, opts, seed=args.seed)
    save_virtual_set(args.out, views)
    n_valid = sum(int(v.valid.sum()) for v in views)
    print(f"warped {len(views)} virtual views ({n_valid} valid pixels) "
          f"into {args.out}")
    return 0


def cmd_train(args) -> int:
    cfg = config_from_file(args.config) if args.config else TrainConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    dataset = load_scene(args.scene)
    if args.rig:
        dataset.rig, _, _ = fileio.load_rig(args.rig)
    virtual = load_virtual_set(args.virtual) if args.virtual else None
    field, cc, metrics, info = train(dataset, cfg, virtual_views=virtual,
                                     checkpoint_path=args.out)
    metrics_path = args.metrics or (Path(args.out).parent / "metrics.jsonl")
    with open(metrics_path, "w") as f:
        for record in metrics:
            f.write(json.dumps(record, sort_keys=True) + "\n")
    final = metrics[-1] if metrics else {}
    print(f"trained {cfg.n_iters} iterations; final loss "
          f"{final.get('loss', float('nan')):.6g}, held-out psnr "
          f"{final.get('psnr_val')}")
    return 0


def _load_scene_poses(scene_dir):
    dataset = load_scene(scene_dir)
    poses = [(name, camera_pose(dataset.rig, *parse_image_id(name)))
             for name in dataset.image_ids]
    return dataset, dict(poses)


def cmd_render(args) -> int:
    field, cc, cfg = load_checkpoint(args.checkpoint)
    n_samples = args.samples or cfg.get("n_samples", 64)
    dataset, poses = _load_scene_poses(args.scene)
    train_ids = cc.image_ids if cc is not None else list(dataset.image_ids)
    candidates = [(name, poses[name]) for name in train_ids]
    if args.panorama:
        w, h = (int(x) for x in args.panorama.split("x"))
        origin = poses[args.image_id].trans if args.image_id \
            else dataset.rig.ego_poses[0].trans
        fg_tf, sky_tf, chosen = resolve_codes(
            cc, args.codes, poses.get(args.image_id), candidates)
        img = render_panorama(field, cc, origin, w, h, n_samples,
                              codes=(fg_tf, sky_tf))
    else:
        if not args.image_id:
            print("render: --image-id is required unless --panorama is given",
                  file=sys.stderr)
            return 2
        pose = poses[args.image_id]
        if args.codes == "nearest":
            cam = parse_image_id(args.image_id)[1]
            same = [(n, p) for n, p in candidates if parse_image_id(n)[1] == cam]
            candidates = same or candidates
        fg_tf, sky_tf, chosen = resolve_codes(cc, args.codes, pose, candidates)
        img = render_view(field, cc, pose, dataset.intrinsics[0], n_samples,
                          codes=(fg_tf, sky_tf))
    fileio.write_image(args.out, img)
    print(f"rendered {args.out} (codes: {chosen or args.codes})")
    return 0


def cmd_evaluate(args) -> int:
    field, cc, cfg = load_checkpoint(args.checkpoint)
    n_samples = args.samples or cfg.get("n_samples", 64)
    dataset, poses = _load_scene_poses(args.scene)
    train_ids, test_ids = split_dataset(dataset)
    candidates = [(name, poses[name]) for name in train_ids
                  if cc is None or name in cc.index]
    report = EvalReport(split="1-in-8 per camera",
                        config_hash=hashlib.sha256(
                            json.dumps(cfg, sort_keys=True).encode()
                        ).hexdigest()[:12])
    for name in test_ids:
        pose = poses[name]
        cand = candidates
        if args.codes == "nearest":
            cam = parse_image_id(name)[1]
            same = [(n, p) for n, p in candidates if parse_image_id(n)[1] == cam]
            cand = same or candidates
        fg_tf, sky_tf, _ = resolve_codes(cc, args.codes, pose, cand)
        img = render_view(field, cc, pose, dataset.intrinsics[0], n_samples,
                          codes=(fg_tf, sky_tf))
        target = dataset.images[name]
        report.per_image[name] = {"psnr": psnr(img, target),
                                  "ssim": ssim(img, target)}
    if args.out:
        fileio.dump_json(args.out, report.to_dict())
    print(report.table())
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rigview",
        description="Multi-camera rig view synthesis: synthetic scene "
                    "generation, rig pose refinement, virtual warping, "
                    "radiance-field training, and evaluation.")
    parser.add_argument("--threads", type=int, default=None,
                        help="limit BLAS thread pools (best effort)")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="render a synthetic multi-camera scene")
    p.add_argument("--spec", help="scene spec JSON (omit for the default scene)")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("refine-poses", help="bundle-adjust rig and ego poses")
    p.add_argument("--graph", required=True)
    p.add_argument("--rig-in", required=True)
    p.add_argument("--rig-out", required=True)
    p.add_argument("--no-point-depths", action="store_true",
                   help="hold per-edge depths fixed")
    p.add_argument("--report", help="write solver + observability report JSON")
    p.set_defaults(func=cmd_refine_poses)

    p = sub.add_parser("warp", help="generate warped virtual views")
    p.add_argument("--scene", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--virtual-per-real", type=int, default=9)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_warp)

    p = sub.add_parser("train", help="optimize the layered radiance field")
    p.add_argument("--scene", required=True)
    p.add_argument("--config", help="flat key=value training config file")
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.add_argument("--virtual", help="directory from the warp command")
    p.add_argument("--rig", help="rig JSON overriding the scene's rig")
    p.add_argument("--metrics", help="metrics JSONL path")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("render", help="render a view or panorama")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--scene", required=True)
    p.add_argument("--image-id", help="render this view's pose")
    p.add_argument("--panorama", help="WxH equirect panorama instead")
    p.add_argument("--codes", default="nearest",
                   help="nearest | identity | image:<id>")
    p.add_argument("--samples", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("evaluate", help="PSNR/SSIM on the held-out split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--scene", required=True)
    p.add_argument("--codes", default="nearest")
    p.add_argument("--samples", type=int, default=None)
    p.add_argument("--out", help="report JSON path")
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    _apply_threads(args.threads)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
