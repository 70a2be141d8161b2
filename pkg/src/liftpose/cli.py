"""``liftpose`` command line: one binary, one subcommand per pipeline stage.

Exit codes: 0 ok, 2 config or usage error, 3 numerical abort, 4 I/O failure.
"""

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import __version__
from .calib import fit_poly_surface
from .datamodel import (
    Config,
    RunConfig,
    dump_config,
    emit_calibration_samples,
    emit_detections,
    emit_sequence,
    load_config,
    parse_calibration_samples,
    parse_detections,
    parse_sequence,
)
from .errors import CheckpointError, IllConditionedError, LiftPoseError, NumericalError
from .harness import (
    make_experiment,
    predict,
    prepare_frames,
    run_seeds,
    scenario_table,
    train,
    window_sweep,
    write_history,
)
from .models import (
    gradcheck_suite,
    load_checkpoint,
    save_checkpoint,
    window_to_widths,
)
from .preprocess import Scenario, Standardizer
from .synth import SynthSpec, default_rig, gen_calibration, gen_sequence, project
from .triangulate import triangulate_sequence

log = logging.getLogger("liftpose")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4
GRADCHECK_TOL = 1e-5


class UsageError(LiftPoseError):
    pass


# --- argument parsing ----------------------------------------------------------


def _common(p):
    g = p.add_argument_group("shared options")
    g.add_argument("--config", metavar="PATH", help="JSON config document (rig, run, calibration, synth)")
    g.add_argument("--seed", type=int, metavar="U64", help="base seed (overrides run.seed)")
    g.add_argument("--scenario", choices=("xy-z", "xz-y", "zy-x"), help="input axes and lifted axis")
    g.add_argument("--rotate-x-deg", type=float, metavar="REAL", help="pre-rotation about x before axis selection")
    g.add_argument("--window", type=int, metavar="INT", help="temporal receptive field in frames")
    g.add_argument("--channels", type=int, metavar="INT", help="hidden width C")
    g.add_argument("--epochs", type=int, metavar="INT", help="training epochs")
    g.add_argument("--runs", type=int, metavar="INT", help="repetitions with fresh init and split")
    g.add_argument("--jobs", type=int, default=1, metavar="INT", help="worker processes for repeated runs (default 1)")
    g.add_argument("--out", metavar="DIR", help="output directory")


def build_parser():
    parser = argparse.ArgumentParser(prog="liftpose", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"liftpose {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", required=True)

    p = sub.add_parser("synth", help="generate synthetic detections, ground truth and calibration samples")
    _common(p)
    p.add_argument("--frames", type=int, metavar="INT", help="sequence length (overrides synth.frames)")

    p = sub.add_parser("calibrate", help="fit per-camera height surfaces and write them into the config")
    _common(p)
    p.add_argument("--samples", required=True, metavar="PATH", help="calibration samples CSV")

    p = sub.add_parser("triangulate", help="fuse detections into a gap-free 3D sequence")
    _common(p)
    p.add_argument("--detections", required=True, metavar="PATH", help="detections CSV")

    p = sub.add_parser("train", help="train one model and write a checkpoint plus history")
    _common(p)
    p.add_argument("--sequence", metavar="PATH", help="3D sequence CSV (default: synthesize from config)")
    p.add_argument("--model", choices=("linear", "temporal"), default="temporal", help="model kind")

    p = sub.add_parser("eval", help="score a checkpoint on a sequence")
    _common(p)
    p.add_argument("--checkpoint", required=True, metavar="PATH", help="checkpoint written by train")
    p.add_argument("--sequence", metavar="PATH", help="3D sequence CSV (default: synthesize from config)")

    p = sub.add_parser("sweep", help="temporal window sweep")
    _common(p)
    p.add_argument("--sequence", metavar="PATH", help="3D sequence CSV (default: synthesize from config)")
    p.add_argument("--windows", metavar="LIST", help="comma-separated windows (default: run.windows)")

    p = sub.add_parser("table", help="scenario x model table")
    _common(p)
    p.add_argument("--sequence", metavar="PATH", help="3D sequence CSV (default: synthesize from config)")

    p = sub.add_parser("gradcheck", help="finite-difference check of both models")
    _common(p)
    return parser


# --- config resolution -----------------------------------------------------------


def resolve(args):
    """Config file, then flag overrides."""
    cfg = load_config(args.config) if args.config else None
    run = cfg.run if cfg else RunConfig()
    run = run.replace(
        seed=args.seed,
        scenario=args.scenario,
        rotate_x_deg=args.rotate_x_deg,
        window=args.window,
        channels=args.channels,
        epochs=args.epochs,
        runs=args.runs,
    )
    if args.jobs is not None and args.jobs < 1:
        raise UsageError("--jobs must be >= 1")
    if cfg is None:
        return None, run
    return Config(cfg.rig, run, cfg.surfaces, cfg.synth), run


def _echo(command, cfg, run, extra):
    doc = {"command": command, "run": run.to_dict()}
    if cfg is not None:
        doc["config"] = cfg.to_dict()
    doc.update({k: v for k, v in extra.items() if v is not None})
    print(json.dumps(doc, sort_keys=True, indent=1), file=sys.stderr)


def _out_dir(args):
    out = args.out or "."
    os.makedirs(out, exist_ok=True)
    return out


def _synth_spec(cfg, run, seed=None, frames=None):
    synth = dict(cfg.synth) if cfg else {}
    if cfg is not None:
        synth.setdefault("keypoints", list(cfg.rig.keypoints))
        synth.setdefault("fps", cfg.rig.fps)
    synth.setdefault("seed", run.seed)
    overrides = {}
    if seed is not None:
        overrides["seed"] = seed
    if frames is not None:
        overrides["frames"] = frames
    return SynthSpec.from_dict(synth, **overrides)


def _load_sequence(args, cfg, run):
    if args.sequence:
        fps = cfg.rig.fps if cfg else 50.0
        return parse_sequence(args.sequence, fps)
    return gen_sequence(_synth_spec(cfg, run))


def _scenario(run):
    return Scenario.parse(run.scenario, run.rotate_x_deg)


# --- subcommands -----------------------------------------------------------------


def cmd_synth(args, cfg, run):
    spec = _synth_spec(cfg, run, seed=args.seed, frames=args.frames)
    rig = cfg.rig if cfg else default_rig(spec.keypoints, fps=spec.fps)
    if tuple(rig.keypoints) != tuple(spec.keypoints):
        raise UsageError(f"rig keypoints {list(rig.keypoints)} differ from synth keypoints {list(spec.keypoints)}")
    _echo("synth", cfg, run, {"synth_seed": spec.seed, "frames": spec.frames})
    out = _out_dir(args)
    seq = gen_sequence(spec)
    emit_sequence(seq, os.path.join(out, "truth.csv"))
    emit_detections(project(seq, rig, spec), os.path.join(out, "detections.csv"))
    samples = {cam.camera_id: gen_calibration(spec, cam, rig) for cam in rig.side_cameras}
    emit_calibration_samples(samples, os.path.join(out, "calibration_samples.csv"))
    synth_doc = dict(cfg.synth) if cfg else {}
    synth_doc.update(seed=spec.seed, frames=spec.frames)
    dump_config(Config(rig, run, {}, synth_doc), os.path.join(out, "config.json"))
    print(f"wrote {spec.frames} frames x {len(spec.keypoints)} keypoints to {out}")
    return EXIT_OK


def cmd_calibrate(args, cfg, run):
    if cfg is None:
        raise UsageError("calibrate needs --config with a rig section")
    _echo("calibrate", cfg, run, {"samples": args.samples})
    by_cam = parse_calibration_samples(args.samples)
    surfaces = {}
    for cam in cfg.rig.side_cameras:
        if cam.camera_id not in by_cam:
            raise UsageError(f"no calibration samples for camera {cam.camera_id!r}")
        s = fit_poly_surface(by_cam[cam.camera_id], run.degree_v, run.degree_d, cam.calibration_id)
        surfaces[cam.calibration_id] = s
        print(f"{cam.camera_id}: {len(by_cam[cam.camera_id])} samples, rms {s.fit_rms_mm:.3e} mm")
    target = os.path.join(args.out, "config.json") if args.out else args.config
    if args.out:
        os.makedirs(args.out, exist_ok=True)
    dump_config(Config(cfg.rig, run, surfaces, cfg.synth), target)
    return EXIT_OK


def cmd_triangulate(args, cfg, run):
    if cfg is None or not cfg.surfaces:
        raise UsageError("triangulate needs --config with rig and calibration sections")
    _echo("triangulate", cfg, run, {"detections": args.detections})
    dets = parse_detections(args.detections)
    seq, coverage = triangulate_sequence(dets, cfg.rig, cfg.surfaces, run)
    out = _out_dir(args)
    emit_sequence(seq, os.path.join(out, "sequence.csv"))
    print(f"coverage {coverage:.4f}", file=sys.stderr)
    return EXIT_OK


def cmd_train(args, cfg, run):
    scenario = _scenario(run)
    window = run.window if args.model == "temporal" else 1
    if args.model == "temporal":
        window_to_widths(window)
    _echo("train", cfg, run, {"model": args.model, "sequence": args.sequence})
    seq = _load_sequence(args, cfg, run)
    exp = make_experiment(seq, scenario, args.model, run, window=window)
    init_seed, split_seed, train_seed = run_seeds(run.seed, 0)
    model = exp.build(init_seed)
    split, st = exp.split_with_standardizer(split_seed)
    hist = train(model, split, run, seed=train_seed)
    out = _out_dir(args)
    label = f"{args.model}_{scenario.tag}"
    write_history(hist, os.path.join(out, f"history_{label}_0.csv"))
    meta = {
        "scenario": scenario.to_dict(),
        "standardizer": st.to_dict(),
        "keypoints": list(seq.keypoint_names),
        "training": {
            "epochs": run.epochs,
            "seed": run.seed,
            "align": run.align,
            "window": window,
            "final_train": hist.final_train,
            "final_test": hist.final_test,
        },
    }
    save_checkpoint(os.path.join(out, "model.lpck"), model, meta)
    print(f"{label}: train {hist.final_train:.4f} test {hist.final_test:.4f}")
    return EXIT_OK


def cmd_eval(args, cfg, run):
    model, meta = load_checkpoint(args.checkpoint)
    _echo("eval", cfg, run, {"checkpoint": args.checkpoint, "sequence": args.sequence})
    try:
        scenario = Scenario.from_dict(meta["scenario"])
        st = Standardizer.from_dict(meta["standardizer"])
        align = bool(meta["training"]["align"])
    except (KeyError, TypeError) as exc:
        raise CheckpointError(f"{args.checkpoint}: metadata lacks {exc}") from None
    seq = _load_sequence(args, cfg, run)
    inputs, targets, _, _ = prepare_frames(seq, scenario, align)
    x = st.apply_inputs(inputs)
    y = st.apply_targets(targets)
    if model.spec.kind == "temporal":
        pad = model.receptive_field // 2
        pred = model.forward_dilated(x)
        y = y[pad : len(y) - pad]
        targets = targets[pad : len(targets) - pad]
    else:
        pred = predict(model, x)
    err_std = float(np.mean(np.abs(pred - y)))
    err_mm = float(np.mean(np.abs(st.invert_targets(pred) - targets)))
    print(f"mpjpe {err_std:.6f} (standardized) {err_mm:.6f} mm over {len(y)} frames")
    if args.out:
        out = _out_dir(args)
        with open(os.path.join(out, "eval.json"), "w", encoding="utf-8") as fh:
            json.dump({"frames": len(y), "mpjpe_mm": err_mm, "mpjpe_standardized": err_std}, fh, sort_keys=True)
            fh.write("\n")
    return EXIT_OK


def cmd_sweep(args, cfg, run):
    windows = [int(w) for w in args.windows.split(",")] if args.windows else list(run.windows)
    for w in windows:
        window_to_widths(w)
    _echo("sweep", cfg, run, {"windows": windows, "sequence": args.sequence})
    seq = _load_sequence(args, cfg, run)
    results = window_sweep(windows, _scenario(run), seq, run, jobs=args.jobs, out_dir=_out_dir(args))
    for w, rep in results:
        print(f"window {w}: test {rep.test_mean:.4f} ± {rep.test_std:.4f}")
    return EXIT_OK


def cmd_table(args, cfg, run):
    window_to_widths(run.window)
    _echo("table", cfg, run, {"sequence": args.sequence})
    seq = _load_sequence(args, cfg, run)
    table = scenario_table(seq, run, window=run.window, jobs=args.jobs, out_dir=_out_dir(args))
    print(table.render())
    return EXIT_OK


def cmd_gradcheck(args, cfg, run):
    channels = args.channels or 8
    _echo("gradcheck", cfg, run, {"gradcheck_channels": channels})
    worst = 0.0
    for label, report in gradcheck_suite(run.seed, channels):
        print(f"{label}: {report}")
        worst = max(worst, report.max_rel_err)
    print(f"worst relative error {worst:.3e}")
    return EXIT_OK if worst < GRADCHECK_TOL else EXIT_NUMERIC


COMMANDS = {
    "synth": cmd_synth,
    "calibrate": cmd_calibrate,
    "triangulate": cmd_triangulate,
    "train": cmd_train,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
    "table": cmd_table,
    "gradcheck": cmd_gradcheck,
}


def run_cli(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        cfg, run = resolve(args)
        return COMMANDS[args.command](args, cfg, run)
    except (NumericalError, IllConditionedError, FloatingPointError) as exc:
        print(f"liftpose: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, CheckpointError) as exc:
        print(f"liftpose: I/O failure: {exc}", file=sys.stderr)
        return EXIT_IO
    except (LiftPoseError, ValueError) as exc:
        print(f"liftpose: {exc}", file=sys.stderr)
        return EXIT_USAGE


def main(argv=None):
    sys.exit(run_cli(argv))


if __name__ == "__main__":
    main()
