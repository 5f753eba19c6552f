"""Command-line driver: run a sequence through the tracking service, run the
noise study, or serve the HTTP API.

`run` is a thin client: frames are pushed to the service (in-process by
default, remote with --server) and artifacts are fetched back. `study`
drives the engine directly. Outputs are written atomically; failures exit
nonzero with a machine-readable JSON record.
"""

import argparse
import json
import os
import sys
import tempfile
import time

import numpy as np

from .client import EngineClient
from .config import build_config, config_hash
from .datasets import DatasetError, SequenceSpec, read_sequence
from .evaluation import format_study_csv, run_noise_study
from .synthetic import make_scene, render_synthetic, synthetic_intrinsics


def _atomic_write(path, data):
    """Write bytes or text via a temp file and rename."""
    mode = "wb" if isinstance(data, bytes) else "w"
    d = os.path.dirname(os.path.abspath(path)) or "."
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    try:
        with os.fdopen(fd, mode) as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _fail(record, report_path=None):
    record = {"status": "failed", **record}
    line = json.dumps(record, sort_keys=True)
    print(line, file=sys.stderr)
    if report_path:
        _atomic_write(report_path, line + "\n")
    return 1


def _frame_source(cfg):
    """(intrinsics, iterator of (timestamp, depth, color)) for the config."""
    if cfg.format == "tum":
        if not cfg.input:
            raise DatasetError("--input is required for --format tum")
        spec = SequenceSpec(root=cfg.input)
        limit = cfg.max_frames or None
        return spec.intrinsics, read_sequence(spec, max_frames=limit)
    if cfg.format == "synthetic":
        name = cfg.input or cfg.scene
        scene = make_scene(name, n_frames=cfg.max_frames or None)
        intr = synthetic_intrinsics(cfg.width, cfg.height)
        rng = np.random.default_rng(
            [cfg.seed, int(round(cfg.noise_sigma * 1000))])

        def frames():
            for ts, pose in scene.poses:
                depth, color = render_synthetic(scene, pose, intr,
                                                cfg.noise_sigma, rng)
                yield ts, depth, color
        return intr, frames()
    raise DatasetError(f"unknown format '{cfg.format}'")


def cmd_run(args):
    overrides = {k: getattr(args, k) for k in (
        "input", "format", "max_frames", "noise_sigma", "predictor",
        "window", "output_traj", "output_ply", "report", "seed")}
    try:
        cfg = build_config(args.config, overrides)
    except (ValueError, OSError) as e:
        return _fail({"stage": "config", "error": str(e)})

    t0 = time.perf_counter()
    try:
        intr, frames = _frame_source(cfg)
    except (DatasetError, ValueError) as e:
        return _fail({"stage": "dataset", "error": str(e)}, cfg.report)

    client = EngineClient(base_url=args.server or None)
    results = []
    try:
        client.create_session(intr, _config_payload(cfg))
        try:
            for ts, depth, color in frames:
                results.append(client.push_frame(ts, depth, color))
        except DatasetError as e:
            return _fail({"stage": "dataset", "error": str(e),
                          "frames_read": len(results)}, cfg.report)
        total = len(results)
        lost = sum(1 for r in results if not r["tracked"])
        if total == 0:
            return _fail({"stage": "run", "error": "no frames"}, cfg.report)
        if lost > total / 2:
            return _fail({"stage": "tracking",
                          "error": f"{lost}/{total} frames lost tracking"},
                         cfg.report)
        if cfg.output_traj:
            _atomic_write(cfg.output_traj, client.trajectory_text())
        if cfg.output_ply:
            _atomic_write(cfg.output_ply, client.pointcloud_bytes())
        info = client.info()
        report = {
            "status": "ok", "frames_total": total, "frames_lost": lost,
            "model_size": info["model_size"], "seed": cfg.seed,
            "config_hash": config_hash(cfg),
            "elapsed_s": round(time.perf_counter() - t0, 3)}
        if cfg.report:
            _atomic_write(cfg.report,
                          json.dumps(report, sort_keys=True, indent=2) + "\n")
        print(json.dumps(report, sort_keys=True))
        return 0
    finally:
        client.close()


def _config_payload(cfg):
    """RunConfig fields that matter to the engine, as override dict."""
    from dataclasses import asdict
    skip = {"input", "format", "scene", "max_frames", "output_traj",
            "output_ply", "report", "width", "height"}
    return {k: v for k, v in asdict(cfg).items() if k not in skip}


def cmd_study(args):
    overrides = {"seed": args.seed, "predictor": "hrbf",
                 "window": args.window}
    try:
        cfg = build_config(args.config, overrides)
    except (ValueError, OSError) as e:
        return _fail({"stage": "config", "error": str(e)})
    scene = make_scene(args.scene, n_frames=args.frames or None)
    intr = synthetic_intrinsics(args.width, args.height)
    sigmas = [float(s) for s in args.sigmas.split(",")]
    methods = tuple(args.methods.split(","))
    rows = run_noise_study(
        scene, intr, sigmas=sigmas, methods=methods, config=cfg,
        seed=args.seed, csv_path=None, meta_path=args.out_meta or None,
        include_prediction=not args.tracking_only,
        include_tracking=not args.prediction_only)
    if args.out_csv:
        _atomic_write(args.out_csv, format_study_csv(rows))
    for r in rows:
        print("sigma=%g method=%s rms_pred=%.6f ate=%.6f lost=%d/%d"
              % (r["sigma"], r["method"], r["rms_pred_m"], r["ate_rmse_m"],
                 r["frames_lost"], r["frames_total"]))
    return 0


def cmd_serve(args):
    import uvicorn
    from .service import create_app
    uvicorn.run(create_app(), host=args.host, port=args.port)
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="implifusion",
                                description="RGB-D tracking and fusion")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="track a sequence and export artifacts")
    r.add_argument("--input", default=None,
                   help="sequence root (tum) or scene name (synthetic)")
    r.add_argument("--format", choices=("tum", "synthetic"), default=None)
    r.add_argument("--config", default=None, help="key=value config file")
    r.add_argument("--max-frames", dest="max_frames", type=int, default=None)
    r.add_argument("--noise-sigma", dest="noise_sigma", type=float,
                   default=None, help="depth noise in depth units")
    r.add_argument("--predictor", choices=("hrbf", "splat"), default=None)
    r.add_argument("--window", type=int, choices=(5, 7, 9), default=None)
    r.add_argument("--output-traj", dest="output_traj", default=None)
    r.add_argument("--output-ply", dest="output_ply", default=None)
    r.add_argument("--report", default=None)
    r.add_argument("--seed", type=int, default=None)
    r.add_argument("--server", default=None,
                   help="remote service URL (default: in-process)")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("study", help="noise-robustness study")
    s.add_argument("--scene", default="room")
    s.add_argument("--frames", type=int, default=None)
    s.add_argument("--sigmas", default="0,3,6,12")
    s.add_argument("--methods", default="hrbf,splat")
    s.add_argument("--config", default=None)
    s.add_argument("--window", type=int, choices=(5, 7, 9), default=5)
    s.add_argument("--width", type=int, default=160)
    s.add_argument("--height", type=int, default=120)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out-csv", dest="out_csv", default=None)
    s.add_argument("--out-meta", dest="out_meta", default=None)
    s.add_argument("--tracking-only", action="store_true")
    s.add_argument("--prediction-only", action="store_true")
    s.set_defaults(func=cmd_study)

    v = sub.add_parser("serve", help="run the HTTP service")
    v.add_argument("--host", default="127.0.0.1")
    v.add_argument("--port", type=int, default=8000)
    v.set_defaults(func=cmd_serve)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
