"""Command-line surface: train, sample, eval, convert, smooth, gen-synth.

Every command prints line-delimited JSON records to stdout (one object per
event) and human-readable notes to stderr. Exit codes: 0 success, 2 usage,
3 data error, 4 numeric failure. The only environment variable read is
MOTIONDIFF_THREADS (BLAS/OpenMP thread cap, set before numpy loads).

A JSON config file given with --config overrides the command-line flags of
the same name; the effective configuration is persisted next to the outputs
so a run is reproducible from that file plus its seed.
"""

import argparse
import json
import os
import sys
from pathlib import Path

_KINDS = ["positions", "rot6d", "quat", "axisangle", "euler", "rotmat"]


def _apply_thread_env():
    threads = os.environ.get("MOTIONDIFF_THREADS")
    if threads:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                    "NUMEXPR_NUM_THREADS"):
            os.environ.setdefault(var, threads)


def emit(record):
    sys.stdout.write(json.dumps(record, sort_keys=True) + "\n")
    sys.stdout.flush()


def note(message):
    sys.stderr.write(message + "\n")
    sys.stderr.flush()


def build_parser():
    parser = argparse.ArgumentParser(
        prog="motiondiff",
        description="Desk-scale motion diffusion: train, sample, evaluate.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model on a directory of clip files")
    p.add_argument("--data", required=True, help="directory of .mclip files")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--config", help="JSON config; overrides flags of the same name")
    p.add_argument("--kind", choices=_KINDS, default="positions")
    p.add_argument("--steps", type=int, default=1000, help="total optimizer steps")
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--num-steps", type=int, default=100, help="diffusion timesteps T")
    p.add_argument("--latent-dim", type=int, default=64)
    p.add_argument("--num-layers", type=int, default=2)
    p.add_argument("--num-heads", type=int, default=2)
    p.add_argument("--ffn-dim", type=int, default=128)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dtype", choices=["float32", "float64"], default="float32")
    p.add_argument("--no-geometric", action="store_true", help="train with the v loss only")
    p.add_argument("--lambda-pos", type=float, default=1.0)
    p.add_argument("--lambda-vel", type=float, default=1.0)
    p.add_argument("--lambda-fc", type=float, default=1.0)
    p.add_argument("--checkpoint-every", type=int, default=0,
                   help="write intermediate checkpoints every N steps (0 = final only)")
    p.add_argument("--log-every", type=int, default=1,
                   help="emit a loss record every N steps")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample", help="generate clips from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--count", type=int, default=1000,
                   help="number of sequences (evaluation default: 1000)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--smooth", dest="smooth", action="store_true", default=True)
    p.add_argument("--no-smooth", dest="smooth", action="store_false")
    p.add_argument("--sigma", type=float, default=1.5)
    p.add_argument("--truncate", type=float, default=4.0)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("eval", help="metric report for generated vs reference sets")
    p.add_argument("--real", required=True, help="directory of .mclip/.mfeat files")
    p.add_argument("--generated", required=True)
    p.add_argument("--skeleton", help="skeleton JSON (for rotation-kind .mfeat inputs)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--k", type=int, default=3, help="kNN neighborhood size")
    p.add_argument("--subset-size", type=int, default=200, help="diversity pairs")
    p.add_argument("--alpha", type=float, default=1.0, help="smoothness sensitivity")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("convert", help="clip -> features, or features -> clip")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--kind", choices=_KINDS, help="target representation (clip input)")
    p.add_argument("--skeleton", help="skeleton JSON (features -> clip)")
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("smooth", help="Gaussian-smooth a feature file along time")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--sigma", type=float, default=1.5)
    p.add_argument("--truncate", type=float, default=4.0)
    p.set_defaults(func=cmd_smooth)

    p = sub.add_parser("gen-synth", help="write a deterministic synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--generator", choices=["gait", "figure8"], default="gait")
    p.add_argument("--joints", type=int, default=4)
    p.add_argument("--frames", type=int, default=32)
    p.add_argument("--clips", type=int, default=64)
    p.add_argument("--fps", type=float, default=20.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--amplitude", type=float, nargs=2, default=(0.3, 0.6),
                   metavar=("LO", "HI"))
    p.add_argument("--frequency", type=float, nargs=2, default=(0.25, 0.4),
                   metavar=("LO", "HI"))
    p.add_argument("--speed", type=float, default=0.01)
    p.set_defaults(func=cmd_gen_synth)
    return parser


def _apply_config_file(args):
    if getattr(args, "config", None):
        with open(args.config) as f:
            overrides = json.load(f)
        for key, value in overrides.items():
            attr = key.replace("-", "_")
            if not hasattr(args, attr):
                raise ValueError(f"config file key {key!r} is not a known option")
            setattr(args, attr, value)
    return args


def _load_clip_dir(path):
    from . import dataio

    files = sorted(Path(path).glob("*.mclip"))
    if not files:
        raise FileNotFoundError(f"no .mclip files in {path}")
    clips, skel = [], None
    for f in files:
        clip, s = dataio.read_clip(f)
        clips.append(clip)
        skel = s
    return clips, skel


def _load_positions_dir(path, skel=None):
    """World positions per file from a directory of .mclip/.mfeat files."""
    from . import dataio, representation as rep, skeleton as sk

    files = sorted(Path(path).glob("*.mclip")) + sorted(Path(path).glob("*.mfeat"))
    if not files:
        raise FileNotFoundError(f"no .mclip/.mfeat files in {path}")
    out = []
    for f in files:
        if f.suffix == ".mclip":
            clip, fskel = dataio.read_clip(f)
            out.append(sk.forward_kinematics(fskel, clip.root_positions, clip.joint_rotations))
        else:
            fm, _ = dataio.read_features(f)
            out.append(rep.decode(fm, skel).positions)
    return out


def cmd_train(args):
    import numpy as np

    from .model import MotionDiffusionModel

    _apply_config_file(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    clips, skel = _load_clip_dir(args.data)

    run_config = {
        k: getattr(args, k)
        for k in ("data", "out", "kind", "steps", "batch_size", "lr", "num_steps",
                  "latent_dim", "num_layers", "num_heads", "ffn_dim", "seed",
                  "dtype", "no_geometric", "lambda_pos", "lambda_vel", "lambda_fc",
                  "checkpoint_every", "log_every")
    }
    with open(out_dir / "runconfig.json", "w") as f:
        json.dump(run_config, f, indent=1, sort_keys=True)

    def on_step(record):
        if args.log_every and record["step"] % args.log_every == 0:
            emit({"record": "train_step", **record})
        if args.checkpoint_every and record["step"] % args.checkpoint_every == 0:
            path = out_dir / f"checkpoint_{record['step']:07d}.ckpt"
            model.save(path)
            emit({"record": "checkpoint", "step": record["step"], "path": str(path)})

    if args.resume:
        model = MotionDiffusionModel.load(
            args.resume, batch_size=args.batch_size, train_steps=args.steps
        )
        note(f"resuming from {args.resume} at step {model.step_}")
        model.continue_fit(clips, skeleton=skel, on_step=on_step)
    else:
        model = MotionDiffusionModel(
            kind=args.kind,
            num_steps=args.num_steps,
            latent_dim=args.latent_dim,
            num_layers=args.num_layers,
            num_heads=args.num_heads,
            ffn_dim=args.ffn_dim,
            lambda_pos=args.lambda_pos,
            lambda_vel=args.lambda_vel,
            lambda_fc=args.lambda_fc,
            geometric=not args.no_geometric,
            lr=args.lr,
            batch_size=args.batch_size,
            train_steps=args.steps,
            seed=args.seed,
            dtype=args.dtype,
        )
        model.fit(clips, skeleton=skel, on_step=on_step)

    final = out_dir / "model.ckpt"
    model.save(final)
    totals = [r["total"] for r in model.history_]
    emit({
        "record": "train_done",
        "steps": model.step_,
        "checkpoint": str(final),
        "first_loss": totals[0] if totals else None,
        "final_loss": totals[-1] if totals else None,
        "mean_ms_per_step": float(np.mean([r["ms"] for r in model.history_])) if totals else None,
    })
    return 0


def cmd_sample(args):
    from . import dataio
    from .model import MotionDiffusionModel
    from .representation import ReprKind

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    model = MotionDiffusionModel.load(args.checkpoint)
    fms = model.sample(
        args.count, seed=args.seed, smooth=args.smooth,
        sigma=args.sigma, truncate=args.truncate,
    )
    kind = ReprKind.parse(model.kind)
    written = []
    if kind is ReprKind.POSITIONS:
        # positions carry no rotations, so samples stay in feature form
        for i, fm in enumerate(fms):
            path = out_dir / f"sample_{i:05d}.mfeat"
            dataio.write_features(path, fm, fps=model.fps_)
            written.append(str(path))
    else:
        for i, dec in enumerate(model.decode(fms)):
            path = out_dir / f"sample_{i:05d}.mclip"
            dataio.write_clip(path, dec.clip, model.skeleton_)
            written.append(str(path))
    emit({
        "record": "sample_done",
        "count": len(written),
        "seed": args.seed,
        "smoothed": bool(args.smooth),
        "sigma": args.sigma if args.smooth else None,
        "out": str(out_dir),
        "format": "mfeat" if kind is ReprKind.POSITIONS else "mclip",
    })
    return 0


def cmd_eval(args):
    import numpy as np

    from . import dataio, metrics

    skel = dataio.load_skeleton(args.skeleton) if args.skeleton else None
    real = _load_positions_dir(args.real, skel)
    gen = _load_positions_dir(args.generated, skel)
    report = metrics.evaluate(
        real, gen, k=args.k, subset_size=args.subset_size, alpha=args.alpha,
        rng=np.random.default_rng(args.seed),
    )
    emit({"record": "metric_report", "seed": args.seed, **report.to_dict()})
    return 0


def cmd_convert(args):
    from . import dataio, representation as rep

    src = Path(args.input)
    if src.suffix == ".mclip":
        if not args.kind:
            raise ValueError("converting a clip requires --kind")
        clip, skel = dataio.read_clip(src)
        fm = rep.encode(clip, args.kind, skel)
        dataio.write_features(args.out, fm, fps=clip.fps)
        emit({"record": "convert_done", "direction": "clip->features",
              "kind": args.kind, "dim": fm.data.shape[0], "frames": fm.num_frames,
              "out": str(args.out)})
        return 0
    if src.suffix == ".mfeat":
        fm, fps = dataio.read_features(src)
        if fm.kind is rep.ReprKind.POSITIONS:
            raise ValueError(
                "positions features carry no rotations; cannot convert to a clip"
            )
        if not args.skeleton:
            raise ValueError("converting features to a clip requires --skeleton")
        skel = dataio.load_skeleton(args.skeleton)
        dec = rep.decode(fm, skel, fps=fps)
        dataio.write_clip(args.out, dec.clip, skel)
        emit({"record": "convert_done", "direction": "features->clip",
              "kind": fm.kind.value, "frames": fm.num_frames, "out": str(args.out)})
        return 0
    raise ValueError(f"unrecognized input extension {src.suffix!r}")


def cmd_smooth(args):
    from . import dataio
    from .postprocess import SmootherConfig, gaussian_smooth

    fm, fps = dataio.read_features(args.input)
    cfg = SmootherConfig(sigma=args.sigma, truncate=args.truncate)
    dataio.write_features(args.out, gaussian_smooth(fm, cfg), fps=fps)
    emit({"record": "smooth_done", "sigma": args.sigma, "truncate": args.truncate,
          "out": str(args.out)})
    return 0


def cmd_gen_synth(args):
    from . import dataio

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    spec = dataio.SyntheticMotionSpec(
        generator=args.generator,
        joint_count=args.joints,
        num_frames=args.frames,
        fps=args.fps,
        num_clips=args.clips,
        seed=args.seed,
        amplitude_range=tuple(args.amplitude),
        frequency_range=tuple(args.frequency),
        speed=args.speed,
    )
    clips, skel = dataio.generate_synthetic(spec)
    for i, clip in enumerate(clips):
        dataio.write_clip(out_dir / f"clip_{i:05d}.mclip", clip, skel)
    dataio.save_skeleton(out_dir / "skeleton.json", skel)
    emit({"record": "gen_synth_done", "clips": len(clips), "generator": args.generator,
          "joints": args.joints, "frames": args.frames, "seed": args.seed,
          "out": str(out_dir)})
    return 0


def main(argv=None):
    _apply_thread_env()
    parser = build_parser()
    args = parser.parse_args(argv)
    from .errors import FormatError, NonFiniteLossError, NumericError

    try:
        return args.func(args)
    except (NonFiniteLossError, NumericError, FloatingPointError) as e:
        note(f"numeric failure: {e}")
        return 4
    except (FormatError, FileNotFoundError, NotADirectoryError, ValueError, OSError) as e:
        note(f"data error: {e}")
        return 3


if __name__ == "__main__":
    sys.exit(main())
