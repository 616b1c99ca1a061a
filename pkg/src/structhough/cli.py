"""Command-line front end.

Subcommands::

    structhough generate  --out DIR [--script FILE] [--seed N]
    structhough detect    --images DIR --model FILE --out FILE
    structhough track     --voters FILE --out FILE [--tracker NAME] [--params FILE]
    structhough learn     --truth FILE [FILE ...] --out FILE
    structhough eval      --results FILE --truth FILE [--csv FILE] [--json FILE]
    structhough bench     [--script FILE] [--tracker NAME] [--json FILE]

Exit codes: 0 success, 2 bad configuration, 3 infeasible inference,
4 file errors.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import kernels
from .baselines import TRACKERS, KalmanConfig, LinePair, iter_tracker
from .features import (
    IntegralChannels, PlantedLineDetector, WindowSpec, fit_line_detectors, load_models,
    save_models, scan_windows,
)
from .fileio import list_pgm, read_pgm, read_voters, write_voters
from .inference import FrameObservation, FrameResult, InferenceError, iter_sequence
from .learning import LearningError, learn_lambda_mode, learn_params, read_ground_truth
from .metrics import AcceptThresholds, evaluate_frames, frames_csv, summarize
from .potentials import HARD_VIOLATION, ModelParams, coupled_structure
from .simulation import SceneScript, ScriptError, default_script, generate
from .voting import HypothesisGrid, LineHypothesis, flip_line, gradient_voters, to_road_frame

EXIT_OK, EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_IO = 0, 2, 3, 4


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _io(fn, *args, what: str = "file"):
    try:
        return fn(*args)
    except OSError as exc:
        raise CliError(f"cannot read {what}: {exc}", EXIT_IO) from None


# -- shared option handling --------------------------------------------------

def _add_grid_args(p):
    g = p.add_argument_group("hypothesis grid")
    g.add_argument("--theta-min", type=float, default=60.0, help="degrees (default 60)")
    g.add_argument("--theta-max", type=float, default=120.0, help="degrees (default 120)")
    g.add_argument("--theta-step", type=float, default=0.5, help="degrees (default 0.5)")
    g.add_argument("--r-step", type=float, default=1.0, help="pixels (default 1)")


def _grid(args, height: int) -> HypothesisGrid:
    try:
        return HypothesisGrid.for_image(height, theta_min_deg=args.theta_min,
                                        theta_max_deg=args.theta_max,
                                        theta_step_deg=args.theta_step, r_step=args.r_step)
    except ValueError as exc:
        raise CliError(f"bad grid: {exc}", EXIT_CONFIG) from None


def _add_params_args(p):
    p.add_argument("--params", help="model parameter file (name = value lines)")
    p.add_argument("--set", action="append", default=[], metavar="NAME=VALUE",
                   help="override one parameter; flags win over the file")


def _params(args) -> ModelParams:
    params = ModelParams()
    if args.params:
        text = _io(Path(args.params).read_text, "utf-8", what="params file")
        try:
            params = ModelParams.from_text(text)
        except (ValueError, TypeError) as exc:
            raise CliError(f"{args.params}: {exc}", EXIT_CONFIG) from None
    if args.set:
        values = params.to_dict()
        for item in args.set:
            key, sep, value = item.partition("=")
            if not sep:
                raise CliError(f"--set expects NAME=VALUE, got {item!r}", EXIT_CONFIG)
            try:
                values[key.strip()] = float(value)
            except ValueError:
                raise CliError(f"--set {key}: not a number", EXIT_CONFIG) from None
        try:
            params = ModelParams.from_dict(values)
        except (ValueError, TypeError) as exc:
            raise CliError(str(exc), EXIT_CONFIG) from None
    return params


def _load_script(path) -> SceneScript:
    if path is None:
        return default_script()
    text = _io(Path(path).read_text, "utf-8", what="scene script")
    try:
        return SceneScript.from_text(text)
    except ScriptError as exc:
        raise CliError(f"{path}: {exc}", EXIT_CONFIG) from None


# -- generate ----------------------------------------------------------------

def cmd_generate(args) -> int:
    script = _load_script(args.script)
    if args.frames is not None:
        script = script.with_frames(args.frames)
    if args.no_images:
        script = script.with_updates(render=False)
    seq = generate(script, args.seed)
    try:
        paths = seq.write(args.out)
        Path(args.out, "script.ini").write_text(script.to_text(), encoding="utf-8")
        if args.detector_model:
            if seq.images is None:
                raise CliError("--detector-model needs rendered frames", EXIT_CONFIG)
            n = min(args.train_frames, len(seq.images))
            models = fit_line_detectors(seq.images[:n], seq.truth[:n], script.height)
            save_models([models["bd"], models["ln"]], args.detector_model)
    except OSError as exc:
        raise CliError(f"cannot write outputs: {exc}", EXIT_IO) from None
    print(f"wrote {len(seq)} frames to {paths['voters'].parent}")
    return EXIT_OK


# -- detect ------------------------------------------------------------------

def _window_spec(args, height: int) -> WindowSpec:
    try:
        w, h = (int(v) for v in args.window.lower().split("x"))
        band = None
        if args.band:
            r0, r1 = (int(v) for v in args.band.split(":"))
            band = (r0, r1)
        spec = WindowSpec(w, h, args.stride, args.stride, band)
    except ValueError:
        raise CliError(f"bad window spec {args.window!r} / band {args.band!r}", EXIT_CONFIG) from None
    return spec


def detect_frame(image: np.ndarray, detectors: dict, spec: WindowSpec, index: int,
                 grad_threshold: float | None = None) -> FrameObservation:
    """Type-1 voters from both detectors and Type-2 gradient voters, in road coordinates."""
    height = image.shape[0]
    ic = None
    if any(not isinstance(d, PlantedLineDetector) for d in detectors.values()):
        bank = next(d.bank for d in detectors.values() if hasattr(d, "bank"))
        ic = IntegralChannels.from_image(image, bank)
    voters = {name: to_road_frame(scan_windows(image, spec, det, ic=ic), height)
              for name, det in detectors.items()}
    grad = to_road_frame(gradient_voters(image, grad_threshold), height)
    return FrameObservation(index, voters["bd"], voters["ln"], grad)


def cmd_detect(args) -> int:
    images_dir = Path(args.images)
    if not images_dir.is_dir():
        raise CliError(f"{images_dir}: not a directory", EXIT_IO)
    paths = list_pgm(images_dir)
    if not paths:
        raise CliError(f"{images_dir}: no .pgm frames", EXIT_IO)
    try:
        models = load_models(args.model)
    except OSError as exc:
        raise CliError(f"cannot read model: {exc}", EXIT_IO) from None
    except (ValueError, KeyError, IndexError) as exc:
        raise CliError(f"{args.model}: bad detector model ({exc})", EXIT_CONFIG) from None
    missing = {"bd", "ln"} - set(models)
    if missing:
        raise CliError(f"{args.model}: missing model block(s) {sorted(missing)}", EXIT_CONFIG)
    if args.threshold is not None:
        models = {k: replace(m, threshold=args.threshold) for k, m in models.items()}
    obs = []
    width = height = None
    for k, p in enumerate(paths, 1):
        try:
            img = read_pgm(p)
        except (OSError, ValueError) as exc:
            raise CliError(f"cannot read frame: {exc}", EXIT_IO) from None
        if height is None:
            height, width = img.shape
        elif img.shape != (height, width):
            raise CliError(f"{p}: frame size differs from the first frame", EXIT_IO)
        spec = _window_spec(args, height)
        try:
            obs.append(detect_frame(img, models, spec, k, args.grad_threshold))
        except ValueError as exc:
            raise CliError(str(exc), EXIT_CONFIG) from None
    try:
        write_voters(obs, args.out, width, height)
    except OSError as exc:
        raise CliError(f"cannot write voters: {exc}", EXIT_IO) from None
    n1 = sum(len(o.bd_voters) + len(o.ln_voters) for o in obs)
    n2 = sum(len(o.grad_voters) for o in obs)
    print(f"{len(obs)} frames: {n1} detector voters, {n2} gradient voters -> {args.out}")
    return EXIT_OK


# -- track -------------------------------------------------------------------

def svg_overlay(pred: LinePair, width: int, height: int,
                truth=None) -> str:
    """Overlay in image coordinates: shoulder fill, truth solid, prediction dashed."""

    def seg(h: LineHypothesis):
        hi = flip_line(h, height)
        s, c = math.sin(hi.theta), math.cos(hi.theta)
        if abs(s) >= abs(c):
            return (0.0, hi.r / s), (float(width), (hi.r - c * width) / s)
        return (hi.r / c, 0.0), ((hi.r - s * height) / c, float(height))

    def fmt(v):
        return format(v, ".3f")

    def line(h, stroke, extra=""):
        (x1, y1), (x2, y2) = seg(h)
        return (f'<line x1="{fmt(x1)}" y1="{fmt(y1)}" x2="{fmt(x2)}" y2="{fmt(y2)}" '
                f'stroke="{stroke}" stroke-width="1"{extra}/>')

    (a1, b1), (a2, b2) = seg(pred.ln)
    (c1, d1), (c2, d2) = seg(pred.bd)
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<polygon points="{fmt(a1)},{fmt(b1)} {fmt(a2)},{fmt(b2)} {fmt(c2)},{fmt(d2)} '
        f'{fmt(c1)},{fmt(d1)}" fill="orange" fill-opacity="0.3"/>',
    ]
    if truth is not None:
        parts += [line(truth.bd, "green"), line(truth.ln, "green")]
    parts += [line(pred.bd, "red", ' stroke-dasharray="4 2"'),
              line(pred.ln, "blue", ' stroke-dasharray="4 2"'), "</svg>"]
    return "\n".join(parts) + "\n"


def cmd_track(args) -> int:
    try:
        vf = read_voters(args.voters)
    except OSError as exc:
        raise CliError(f"cannot read voters: {exc}", EXIT_IO) from None
    except ValueError as exc:
        raise CliError(str(exc), EXIT_IO) from None
    params = _params(args)
    grid = _grid(args, vf.height)
    truth = None
    if args.truth:
        try:
            truth = {g.frame: g for g in read_ground_truth(args.truth)}
        except OSError as exc:
            raise CliError(f"cannot read truth: {exc}", EXIT_IO) from None
    overlay = Path(args.overlay_dir) if args.overlay_dir else None
    try:
        if overlay is not None:
            overlay.mkdir(parents=True, exist_ok=True)
        fh = open(args.out, "w", encoding="utf-8")
    except OSError as exc:
        raise CliError(f"cannot write results: {exc}", EXIT_IO) from None
    violations = 0
    with fh:
        try:
            for out in iter_tracker(args.tracker, vf.observations, grid, params, KalmanConfig()):
                fh.write(json.dumps(out.to_record()) + "\n")
                pair = (LinePair(out.frame, out.state.h_bd, out.state.h_ln)
                        if isinstance(out, FrameResult) else out)
                if coupled_structure(pair.bd, pair.ln, params) is HARD_VIOLATION:
                    violations += 1
                if overlay is not None:
                    svg = svg_overlay(pair, vf.width, vf.height,
                                      truth.get(pair.frame) if truth else None)
                    (overlay / f"frame_{pair.frame:04d}.svg").write_text(svg, encoding="utf-8")
        except InferenceError as exc:
            raise CliError(str(exc), EXIT_INFEASIBLE) from None
    print(f"{len(vf.observations)} frames tracked with {args.tracker}; "
          f"structure violations: {violations}")
    return EXIT_OK


# -- learn -------------------------------------------------------------------

def cmd_learn(args) -> int:
    sequences = []
    for path in args.truth:
        try:
            sequences.append(read_ground_truth(path))
        except OSError as exc:
            raise CliError(f"cannot read truth: {exc}", EXIT_IO) from None
        except ValueError as exc:
            raise CliError(str(exc), EXIT_CONFIG) from None
    base = _params(args)
    height = args.height
    grid = _grid(args, height)
    try:
        params = learn_params(sequences, grid, base)
        if args.voters:
            results = []
            for vpath in args.voters:
                vf = read_voters(vpath)
                results += list(iter_sequence(vf.observations, _grid(args, vf.height), params))
            params = params.with_updates(lambda_mode=learn_lambda_mode(results, base.lambda_mode))
    except LearningError as exc:
        raise CliError(f"learning failed: {exc}", EXIT_CONFIG) from None
    except OSError as exc:
        raise CliError(f"cannot read voters: {exc}", EXIT_IO) from None
    except ValueError as exc:
        raise CliError(str(exc), EXIT_IO) from None
    except InferenceError as exc:
        raise CliError(str(exc), EXIT_INFEASIBLE) from None
    try:
        params.save(args.out)
    except OSError as exc:
        raise CliError(f"cannot write params: {exc}", EXIT_IO) from None
    sys.stdout.write(params.to_text())
    return EXIT_OK


# -- eval --------------------------------------------------------------------

def read_line_records(path) -> list[LinePair]:
    """Line pairs from a results JSONL file (any tracker)."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            if not raw.strip():
                continue
            try:
                rec = json.loads(raw)
                out.append(LinePair(int(rec["frame"]),
                                    LineHypothesis.from_degrees(rec["bd"]["theta"], rec["bd"]["r"]),
                                    LineHypothesis.from_degrees(rec["ln"]["theta"], rec["ln"]["r"])))
            except (ValueError, KeyError, TypeError):
                raise ValueError(f"{path}:{lineno}: malformed result record") from None
    return out


def _size(text: str) -> tuple[int, int]:
    try:
        w, h = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise CliError(f"bad size {text!r}; expected WIDTHxHEIGHT", EXIT_CONFIG) from None
    return w, h


def cmd_eval(args) -> int:
    try:
        pred = read_line_records(args.results)
        truth = read_ground_truth(args.truth, args.polygons)
    except OSError as exc:
        raise CliError(f"cannot read input: {exc}", EXIT_IO) from None
    except ValueError as exc:
        raise CliError(str(exc), EXIT_CONFIG) from None
    thresholds = AcceptThresholds(args.bd_threshold, args.ln_threshold)
    try:
        frames = evaluate_frames(pred, truth, _size(args.size), thresholds)
    except ValueError as exc:
        raise CliError(str(exc), EXIT_CONFIG) from None
    report = summarize(frames, thresholds)
    csv_text = report.to_csv(args.label)
    try:
        if args.csv:
            Path(args.csv).write_text(csv_text, encoding="utf-8")
        if args.json:
            Path(args.json).write_text(report.to_json() + "\n", encoding="utf-8")
        if args.per_frame:
            Path(args.per_frame).write_text(frames_csv(frames), encoding="utf-8")
    except OSError as exc:
        raise CliError(f"cannot write report: {exc}", EXIT_IO) from None
    sys.stdout.write(csv_text)
    return EXIT_OK


# -- bench -------------------------------------------------------------------

def _percentiles(samples) -> dict:
    a = np.asarray(samples, dtype=float) * 1e3
    return {"frames": int(a.size), "p50_ms": float(np.percentile(a, 50)),
            "p90_ms": float(np.percentile(a, 90)), "max_ms": float(a.max()),
            "mean_ms": float(a.mean())}


def bench_inference(observations, grid, params, tracker: str = "structured") -> list[float]:
    """Wall-clock seconds per frame with voters precomputed."""
    times = []
    it = iter_tracker(tracker, observations, grid, params, KalmanConfig())
    while True:
        t0 = time.perf_counter()
        try:
            next(it)
        except StopIteration:
            break
        times.append(time.perf_counter() - t0)
    return times


def bench_detect_inference(images, detectors, spec, grid, params, grad_threshold,
                           tracker: str = "structured") -> list[float]:
    """Wall-clock seconds per frame for detection followed by tracking."""
    times = []
    pending: list[FrameObservation] = []
    it = iter_tracker(tracker, feed_forever(pending), grid, params, KalmanConfig())
    for k, img in enumerate(images, 1):
        t0 = time.perf_counter()
        pending.append(detect_frame(img, detectors, spec, k, grad_threshold))
        next(it)
        times.append(time.perf_counter() - t0)
    return times


def feed_forever(queue: list):
    """Generator handing out items appended to ``queue`` one at a time."""
    while True:
        yield queue.pop(0)


def cmd_bench(args) -> int:
    if args.backend and args.backend not in kernels.available_backends():
        raise CliError(f"unknown backend {args.backend!r}; have "
                       f"{kernels.available_backends()}", EXIT_CONFIG)
    with kernels.use_backend(args.backend or kernels.current_backend()):
        return _bench(args)


def _bench(args) -> int:
    script = _load_script(args.script)
    if args.frames is not None:
        script = script.with_frames(args.frames)
    params = _params(args)
    grid = _grid(args, script.height)
    seq = generate(script.with_updates(render=True), args.seed)
    report = {"tracker": args.tracker, "backend": kernels.current_backend(),
              "grid": list(grid.shape), "frames": len(seq)}
    try:
        report["inference_only"] = _percentiles(
            bench_inference(seq.observations, grid, params, args.tracker))
        n = min(10, len(seq.images))
        detectors = fit_line_detectors(seq.images[:n], seq.truth[:n], script.height)
        report["detect_inference"] = _percentiles(bench_detect_inference(
            seq.images, detectors, WindowSpec(), grid, params, script.grad_threshold,
            args.tracker))
    except InferenceError as exc:
        raise CliError(str(exc), EXIT_INFEASIBLE) from None
    text = json.dumps(report, indent=2)
    if args.json:
        try:
            Path(args.json).write_text(text + "\n", encoding="utf-8")
        except OSError as exc:
            raise CliError(f"cannot write report: {exc}", EXIT_IO) from None
    print(text)
    return EXIT_OK


# -- entry point -------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="structhough", description=__doc__.split("\n\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="synthesize a scene")
    p.add_argument("--script", help="scene script (INI); default: packaged scene")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--frames", type=int, help="override the frame count")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--no-images", action="store_true", help="skip rendering PGM frames")
    p.add_argument("--detector-model", help="also fit bd/ln detectors and write them here")
    p.add_argument("--train-frames", type=int, default=10,
                   help="frames used to fit detectors (default 10)")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("detect", help="scan frames with detectors")
    p.add_argument("--images", required=True, help="directory of .pgm frames")
    p.add_argument("--model", required=True, help="detector model file with bd and ln blocks")
    p.add_argument("--out", required=True, help="voter file to write")
    p.add_argument("--window", default="32x16", help="window WIDTHxHEIGHT (default 32x16)")
    p.add_argument("--stride", type=int, default=4)
    p.add_argument("--band", help="detection band as ROW0:ROW1 (image rows)")
    p.add_argument("--threshold", type=float, help="override both decision thresholds")
    p.add_argument("--grad-threshold", type=float,
                   help="gradient voter cut (default: 10%% of the frame maximum)")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("track", help="run a tracker over a voter file")
    p.add_argument("--voters", required=True)
    p.add_argument("--out", required=True, help="results JSONL")
    p.add_argument("--tracker", choices=TRACKERS, default="structured")
    p.add_argument("--overlay-dir", help="write one SVG overlay per frame here")
    p.add_argument("--truth", help="ground truth drawn in the overlays")
    _add_params_args(p)
    _add_grid_args(p)
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("learn", help="estimate model parameters from ground truth")
    p.add_argument("--truth", required=True, nargs="+", help="ground-truth file(s)")
    p.add_argument("--voters", nargs="*", help="voter files for learning the mode penalty")
    p.add_argument("--out", required=True, help="params file to write")
    p.add_argument("--height", type=int, default=120, help="image height (default 120)")
    _add_params_args(p)
    _add_grid_args(p)
    p.set_defaults(func=cmd_learn)

    p = sub.add_parser("eval", help="score results against ground truth")
    p.add_argument("--results", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--polygons", help="shoulder polygon file")
    p.add_argument("--size", default="160x120", help="image WIDTHxHEIGHT (default 160x120)")
    p.add_argument("--bd-threshold", type=float, default=10.0)
    p.add_argument("--ln-threshold", type=float, default=20.0)
    p.add_argument("--label", help="tracker label for the CSV row")
    p.add_argument("--csv", help="write the CSV report here")
    p.add_argument("--json", help="write the JSON report here")
    p.add_argument("--per-frame", help="write per-frame metrics CSV here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="time inference and detection")
    p.add_argument("--script")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--frames", type=int, default=100)
    p.add_argument("--tracker", choices=TRACKERS, default="structured")
    p.add_argument("--backend", help=f"kernel backend ({', '.join(kernels.available_backends())})")
    p.add_argument("--json", help="write the JSON report here")
    _add_params_args(p)
    _add_grid_args(p)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"structhough {args.command}: error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
