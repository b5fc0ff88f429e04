"""Command line entry point: ``nailforce <command> [options]``.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional

from . import analysis, pipeline, report, servo
from .config import PipelineConfig, load_config, override
from .errors import DegenerateConfigurationError, NailforceError, UnderdeterminedError, WarpError
from .synth import SCENARIOS, session_frames, simulate_session, write_session

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
NUMERIC_ERRORS = (UnderdeterminedError, DegenerateConfigurationError, WarpError)

log = logging.getLogger("nailforce")


class UsageError(Exception):
    pass


def _config(args) -> PipelineConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else PipelineConfig()
    return override(cfg, seed=getattr(args, "seed", None), output_dir=getattr(args, "out", None))


def cmd_calibrate(args) -> int:
    cfg = _config(args)
    cfg = override(cfg, "grid", mode="dense" if args.dense else None)
    cfg = override(cfg, "oracle", noise_sigma=args.noise)
    pipeline.calibrate(cfg, cfg.output_dir)
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config(args)
    cfg = override(cfg, "registration", variance_kept=args.variance_kept)
    summary = pipeline.train(cfg, args.dataset, cfg.output_dir)
    print(f"k={summary['k']} train_rms_n={summary['train_rms_n']}")
    return EXIT_OK


def cmd_estimate(args) -> int:
    cfg = _config(args)
    res = pipeline.estimate(cfg, args.model, args.session, cfg.output_dir, args.stride, args.source)
    print(f"processed {res.processed}/{res.expected} nail frames ({100 * res.fraction:.1f}%)")
    if res.fraction < cfg.min_processed_fraction:
        log.error("only %.1f%% of frames processed", 100 * res.fraction)
        return EXIT_DATA
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = _config(args)
    cfg = override(cfg, "oracle", noise_sigma=args.noise)
    model = pipeline.nail_model_for(cfg)
    session, _ = simulate_session(args.scenario, cfg.seed, args.dt, model=model)
    frames = session_frames(session, model, stride=args.frame_stride)
    write_session(session, cfg.output_dir, None if args.no_frames else frames,
                  camera_frames=args.camera_frames, frame_stride=args.frame_stride)
    return EXIT_OK


def cmd_servo(args) -> int:
    cfg = _config(args)
    s = override(cfg.servo, preset=args.preset, offset_px=args.offset_px, duration=args.duration,
                 gain=args.gain, control_dt=args.control_dt, capture_dt=args.capture_dt,
                 depth_mode=args.depth_mode, measure=args.measure)
    scfg = servo.ServoConfig(s.gain, s.control_dt, s.capture_dt, s.depth_mode, s.measure)
    scen = servo.preset(s.preset, s.offset_px, s.duration)
    trace = servo.run_tracking(scen, scfg)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    servo.write_trace_csv(trace, out / "trace.csv")
    servo.write_scenario_json(scen, scfg, out / "scenario.json")
    for name in trace.cameras:
        print(f"{name}: final error {trace.final_error(name):.4g} px")
    if trace.truncated:
        ev = trace.loss_event
        print(f"nailforce: trace truncated at t={ev['time']:.3f} s ({ev['camera']}): {ev['reason']}",
              file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def _parse_conditions(specs: List[str]) -> Dict[str, List[str]]:
    out: Dict[str, List[str]] = {}
    for spec in specs:
        name, sep, paths = spec.partition("=")
        if not sep or not name or not paths:
            raise UsageError(f"--condition expects NAME=PATH[,PATH...], got {spec!r}")
        out.setdefault(name, []).extend(p for p in paths.split(",") if p)
    return out


def cmd_analyze(args) -> int:
    cfg = _config(args)
    conditions = _parse_conditions(args.condition)
    trials = {name: [pipeline.load_trial(p) for p in paths] for name, paths in conditions.items()}
    mode = args.mode or cfg.analysis.test_mode
    rep = analysis.trial_report(trials, mode, pipeline.thresholds_for(cfg))
    paths = report.write_report(rep, cfg.output_dir)
    for t in rep.tests:
        if t.quantity == "hold_mean" and t.condition_a != t.condition_b:
            print(f"{t.finger:>6} {t.component:<6} U={t.U:g} p={t.p:.4g}"
                  f"{' *' if t.significant else ''}")
    print(f"wrote {paths['json']}")
    return EXIT_OK


def cmd_report(args) -> int:
    doc = report.load_report(args.report)
    out = args.out or str(Path(args.report).parent)
    report.write_report(doc, out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nailforce", description="Fingernail-image force estimation toolkit")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_help="output directory"):
        sp.add_argument("--config", help="JSON pipeline config; flags override it")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", help=out_help)
        return sp

    sp = common(sub.add_parser("calibrate", help="render a calibration dataset"))
    sp.add_argument("--dense", action="store_true", help="use the dense grid")
    sp.add_argument("--noise", type=float, help="image noise sigma")
    sp.set_defaults(func=cmd_calibrate)

    sp = common(sub.add_parser("train", help="fit appearance and eigennail models"))
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--variance-kept", type=float)
    sp.set_defaults(func=cmd_train)

    sp = common(sub.add_parser("estimate", help="estimate forces for a session"))
    sp.add_argument("--model", required=True)
    sp.add_argument("--session", required=True)
    sp.add_argument("--stride", type=int, default=1, help="use every n-th stored frame")
    sp.add_argument("--source", choices=("nail", "camera"), default="nail")
    sp.set_defaults(func=cmd_estimate)

    sp = common(sub.add_parser("simulate-session", help="simulate one grasp trial"))
    sp.add_argument("--scenario", choices=sorted(SCENARIOS), default="constrained")
    sp.add_argument("--dt", type=float, default=0.01)
    sp.add_argument("--noise", type=float)
    sp.add_argument("--no-frames", action="store_true")
    sp.add_argument("--camera-frames", action="store_true")
    sp.add_argument("--frame-stride", type=int, default=1)
    sp.set_defaults(func=cmd_simulate)

    sp = common(sub.add_parser("servo", help="simulate camera tracking"))
    sp.add_argument("--preset", choices=("static", "moving", "two-camera", "two-camera-moving"))
    sp.add_argument("--offset-px", type=float)
    sp.add_argument("--duration", type=float)
    sp.add_argument("--gain", type=float)
    sp.add_argument("--control-dt", type=float)
    sp.add_argument("--capture-dt", type=float)
    sp.add_argument("--depth-mode", choices=("true", "desired"))
    sp.add_argument("--measure", choices=("model", "image"))
    sp.set_defaults(func=cmd_servo)

    sp = common(sub.add_parser("analyze", help="compare grasp conditions"))
    sp.add_argument("--condition", action="append", required=True, metavar="NAME=PATH[,PATH...]")
    sp.add_argument("--mode", choices=("auto", "exact", "normal"))
    sp.set_defaults(func=cmd_analyze)

    sp = sub.add_parser("report", help="regenerate CSV and SVG from report.json")
    sp.add_argument("report")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_report)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"nailforce: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NUMERIC_ERRORS as exc:
        print(f"nailforce: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (NailforceError, OSError, json.JSONDecodeError) as exc:
        print(f"nailforce: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
