"""Command line interface: `overlapreg <subcommand>`.

Subcommands: datagen, register, icp, train, eval, sweep-overlap, sweep-noise,
study-iters. Every error path exits nonzero.
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import datagen, evalcli, plyio
from .geometry import RigidTransform, isotropic_errors
from .icp import IcpConfig, icp_register
from .model import run_iterative
from .train import TrainConfig, evaluate, load_model, smoke_train_config, train


def _parse_shape(name: str) -> datagen.ShapeSpec:
    if name.endswith(".ply"):
        return datagen.ShapeSpec.ply(name)
    if name.startswith("asym"):
        idx = int(name[4:]) if len(name) > 4 else 0
        return datagen.asymmetric_composite(idx)
    factories = {
        "sphere": datagen.ShapeSpec.sphere,
        "box": datagen.ShapeSpec.box,
        "cylinder": datagen.ShapeSpec.cylinder,
        "torus": datagen.ShapeSpec.torus,
    }
    if name not in factories:
        raise ValueError(f"unknown shape '{name}' (use sphere/box/cylinder/torus/asym[0-3]/file.ply)")
    return factories[name]()


def _load_gt(path) -> RigidTransform:
    return RigidTransform.from_json_dict(json.loads(Path(path).read_text()))


def _cmd_datagen(args) -> int:
    config = datagen.PairConfig(
        shape=_parse_shape(args.shape),
        n_points=args.n_points,
        rot_range_deg=args.rot_range,
        trans_range=args.trans_range,
        partial=args.partial,
        keep=args.keep,
        retain_frac=args.retain_frac,
        downsample_to=args.downsample_to,
        noise_sigma=args.noise_sigma,
        noise_clip=args.noise_clip,
        mask_threshold=args.mask_threshold,
    )
    pairs = []
    for i in range(args.pairs):
        seed = int(np.random.SeedSequence([args.seed, i]).generate_state(1, np.uint64)[0])
        pairs.append(datagen.make_pair(config, seed))
    manifest = datagen.write_manifest(args.out_dir, pairs)
    print(f"wrote {len(pairs)} pairs to {manifest}")
    return 0


def _cmd_register(args) -> int:
    params, config, _ = load_model(args.ckpt)
    src = plyio.load_ply(args.src)
    ref = plyio.load_ply(args.ref)
    gt = _load_gt(args.gt) if args.gt else None
    trace = run_iterative(src, ref, params, config)
    result = {
        "transform": trace.final_transform.to_json_dict(),
        "masks": {
            "x": [float(v) for v in trace.steps[-1].mask_x],
            "y": [float(v) for v in trace.steps[-1].mask_y],
        },
        "per_iteration": [],
    }
    for i, step in enumerate(trace.steps, start=1):
        entry = {"iteration": i, "transform": step.accumulated.to_json_dict()}
        if gt is not None:
            rot, trans = isotropic_errors(step.accumulated, gt)
            entry["iso_rot"] = rot
            entry["iso_trans"] = trans
        result["per_iteration"].append(entry)
    if gt is not None:
        rot, trans = isotropic_errors(trace.final_transform, gt)
        result["iso_rot"] = rot
        result["iso_trans"] = trans
    Path(args.out).write_text(json.dumps(result, indent=2))
    print(f"wrote {args.out}")
    return 0


def _cmd_icp(args) -> int:
    src = plyio.load_ply(args.src)
    ref = plyio.load_ply(args.ref)
    gt = _load_gt(args.gt) if args.gt else None
    config = IcpConfig(
        max_iterations=args.max_iterations,
        convergence_eps=args.eps,
        max_correspondence_dist=args.max_corr_dist,
        trim_fraction=args.trim_fraction,
    )
    res = icp_register(src, ref, config=config)
    result = {
        "transform": res.transform.to_json_dict(),
        "residuals": res.residuals,
        "converged": res.converged,
        "degenerate": res.degenerate,
        "iterations": res.iterations,
    }
    if gt is not None:
        rot, trans = isotropic_errors(res.transform, gt)
        result["iso_rot"] = rot
        result["iso_trans"] = trans
    Path(args.out).write_text(json.dumps(result, indent=2))
    print(f"wrote {args.out}")
    return 0


def _cmd_train(args) -> int:
    if args.write_default_config:
        Path(args.write_default_config).write_text(json.dumps(smoke_train_config().to_dict(), indent=2))
        print(f"wrote default config to {args.write_default_config}")
        return 0
    if not args.config:
        raise ValueError("--config is required (or use --write-default-config)")
    config = TrainConfig.from_dict(json.loads(Path(args.config).read_text()))
    result = train(config, args.out_dir, resume_from=args.resume_from, log_every=args.log_every)
    print(f"checkpoint: {result.checkpoint_path}\nmetrics: {result.metrics_path}")
    return 0


def _cmd_eval(args) -> int:
    params, config, _ = load_model(args.ckpt)
    pairs = datagen.read_manifest(args.manifest)
    report = evaluate(params, config, pairs)
    Path(args.out).write_text(json.dumps(report.to_dict(), indent=2))
    print(f"wrote {args.out}")
    return 0


def _cmd_sweep_overlap(args) -> int:
    params, config, _ = load_model(args.ckpt)
    ratios = [float(v) for v in args.ratios.split(",")]
    evalcli.overlap_sweep(params, config, ratios, args.trials, args.seed, args.out_dir)
    print(f"wrote sweep to {args.out_dir}")
    return 0


def _cmd_sweep_noise(args) -> int:
    params, config, _ = load_model(args.ckpt)
    sigmas = [float(v) for v in args.sigmas.split(",")]
    evalcli.noise_sweep(params, config, sigmas, args.trials, args.seed, args.out_dir)
    print(f"wrote sweep to {args.out_dir}")
    return 0


def _cmd_study_iters(args) -> int:
    params, config, _ = load_model(args.ckpt)
    evalcli.iteration_study(params, config, args.max_n, args.trials, args.seed, args.out_dir)
    print(f"wrote study to {args.out_dir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="overlapreg", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("datagen", help="generate a benchmark manifest of registration pairs")
    p.add_argument("--shape", default="asym0")
    p.add_argument("--pairs", type=int, default=16)
    p.add_argument("--partial", choices=["knn", "halfspace", "none"], default="none")
    p.add_argument("--n-points", type=int, default=2048)
    p.add_argument("--keep", type=int, default=768)
    p.add_argument("--retain-frac", type=float, default=0.7)
    p.add_argument("--downsample-to", type=int, default=717)
    p.add_argument("--noise-sigma", type=float, default=0.0)
    p.add_argument("--noise-clip", type=float, default=0.05)
    p.add_argument("--rot-range", type=float, default=45.0)
    p.add_argument("--trans-range", type=float, default=0.5)
    p.add_argument("--mask-threshold", type=float, default=datagen.DEFAULT_MASK_THRESHOLD)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=_cmd_datagen)

    p = sub.add_parser("register", help="register two PLY clouds with a trained model")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--src", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--gt", help="optional ground-truth transform JSON for error reporting")
    p.set_defaults(func=_cmd_register)

    p = sub.add_parser("icp", help="register two PLY clouds with the ICP baseline")
    p.add_argument("--src", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--gt")
    p.add_argument("--max-iterations", type=int, default=50)
    p.add_argument("--eps", type=float, default=1e-8)
    p.add_argument("--max-corr-dist", type=float, default=None)
    p.add_argument("--trim-fraction", type=float, default=None)
    p.set_defaults(func=_cmd_icp)

    p = sub.add_parser("train", help="train a model from a JSON config")
    p.add_argument("--config")
    p.add_argument("--out-dir", default="train_out")
    p.add_argument("--resume-from")
    p.add_argument("--log-every", type=int, default=0)
    p.add_argument("--write-default-config", help="write the desk-scale default config and exit")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint against a manifest")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("sweep-overlap", help="error vs overlap ratio, model and ICP")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trials", type=int, default=16)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--ratios", default="1.0,0.9,0.7,0.5,0.3,0.1")
    p.set_defaults(func=_cmd_sweep_overlap)

    p = sub.add_parser("sweep-noise", help="error vs noise level")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trials", type=int, default=16)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--sigmas", default="0.0,0.005,0.01,0.02,0.04")
    p.set_defaults(func=_cmd_sweep_noise)

    p = sub.add_parser("study-iters", help="error after each model iteration")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trials", type=int, default=64)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--max-n", type=int, default=6)
    p.set_defaults(func=_cmd_study_iters)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
