"""Command-line entry point: ``flowstate <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 training failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from .datasets import REGIMES, SplitMode, SplitSpec, class_balance, make_split
from .errors import DataError, FlowstateError, TrainingError
from .models import MODEL_NAMES, evaluate, load_model, make_model
from .pipeline import ExperimentConfig, PipelineError, exit_code_for, run_pipeline
from .preprocess import (SENSOR_RANGES, dedup, load_windows, make_windows, preprocess_session,
                         save_windows, trim_to_match)
from .report import emit_report, read_report_csv
from .session_io import (FALL, FLOW, FLOW_KEY, FALL_KEY, QUIT_KEY, Session, Source,
                         align_session, capture_labels, detect_sync_markers, normalize_events,
                         parse_motion_csv, read_labels_jsonl, read_session_archive,
                         reconcile_labels, write_labels_jsonl, write_session_archive)

log = logging.getLogger("flowstate")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_TRAIN = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; 2 is reserved for data errors here
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# -- capture ----------------------------------------------------------------------

def _tty_keys():
    import termios
    import tty

    fd = sys.stdin.fileno()
    old = termios.tcgetattr(fd)
    t0 = time.monotonic()
    try:
        tty.setcbreak(fd)
        while True:
            ch = sys.stdin.read(1)
            if not ch:
                return
            yield ch, time.monotonic() - t0
    finally:
        termios.tcsetattr(fd, termios.TCSADRAIN, old)


def _piped_keys(stream):
    """Lines ``<key> [seconds]``; a missing time uses the wall clock."""
    t0 = time.monotonic()
    for line in stream:
        parts = line.split()
        if not parts:
            continue
        t = float(parts[1]) if len(parts) > 1 else time.monotonic() - t0
        yield parts[0], t


def cmd_capture(args) -> int:
    keys = _tty_keys() if sys.stdin.isatty() else _piped_keys(sys.stdin)
    if sys.stdin.isatty():
        print(f"press {FLOW_KEY}=flow, {FALL_KEY}=fall, {QUIT_KEY}=quit", file=sys.stderr)
    source = Source(args.source)
    presses: list[tuple[str, float]] = []
    events = []
    out = open(args.out, "w", encoding="utf-8") if args.out else sys.stdout
    try:
        for key, t in keys:
            if key == QUIT_KEY:
                break
            if key not in (FLOW_KEY, FALL_KEY):
                continue
            presses.append((key, t))
            now = capture_labels(presses, args.origin_ds, source)
            if len(now) > len(events):
                ev = now[-1]
                write_labels_jsonl([ev], out)
                out.flush()
                name = "flow" if ev.state == FLOW else "fall"
                print(f"{ev.t_ds:>7d} ds  {ev.state:+d} {name}", file=sys.stderr)
            events = now
    finally:
        if out is not sys.stdout:
            out.close()
    return EXIT_OK


# -- ingest / preprocess / split ----------------------------------------------------

def _read_events(path) -> list:
    with open(path, encoding="utf-8") as fh:
        return read_labels_jsonl(fh)


def cmd_ingest(args) -> int:
    with open(args.motion, encoding="utf-8", newline="") as fh:
        samples = parse_motion_csv(fh, allow_duplicates=True)
    n_raw = len(samples)
    samples = dedup(samples)
    events = normalize_events(_read_events(args.labels))
    reconcile = None
    if args.manual:
        events, rep = reconcile_labels(events, _read_events(args.manual), args.tol_ds)
        reconcile = {"matched": rep.matched, "conflicts": rep.n_conflicts,
                     "missing_in_app": len(rep.missing_in_app),
                     "missing_in_manual": len(rep.missing_in_manual)}
        if rep.n_conflicts:
            log.warning("%d label conflict(s), app source kept", rep.n_conflicts)
    markers = detect_sync_markers(samples)
    session = align_session(samples, events, markers, args.initial_state, args.player)
    extra = {"n_raw": n_raw, "n_dedup": len(samples), "flow_fraction":
             session.labels.flow_fraction()}
    if reconcile:
        extra["reconcile"] = reconcile
    write_session_archive(args.out, session, events, extra)
    print(json.dumps({"archive": str(args.out), "markers": [[m.start_ds, m.end_ds]
                                                            for m in markers], **extra}))
    return EXIT_OK


def cmd_preprocess(args) -> int:
    session = read_session_archive(args.session)
    if not args.no_trim:
        session = trim_to_match(session)
    ranges = None if args.ranges == "data" else SENSOR_RANGES
    ws = make_windows(preprocess_session(session, ranges, args.smooth))
    save_windows(args.out, ws)
    print(json.dumps({"windows": len(ws), "flow_fraction": class_balance(ws),
                      "out": str(args.out)}))
    return EXIT_OK


def _split_from_args(args):
    p1, p2 = load_windows(args.p1), load_windows(args.p2)
    return make_split(SplitSpec(args.regime, args.seed, SplitMode(args.mode)), p1, p2)


def cmd_split(args) -> int:
    train, test = _split_from_args(args)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_windows(out / "train.npy", train)
    save_windows(out / "test.npy", test)
    info = {"regime": args.regime, "seed": args.seed, "mode": args.mode,
            "n_train": len(train), "n_test": len(test)}
    (out / "split.json").write_text(json.dumps(info, indent=2), encoding="utf-8")
    print(json.dumps(info))
    return EXIT_OK


# -- train / eval ---------------------------------------------------------------------

def cmd_train(args) -> int:
    if args.train:
        train, test = load_windows(args.train), None
    elif args.p1 and args.p2:
        train, test = _split_from_args(args)
    else:
        raise UsageError("train needs --train or both --p1 and --p2")
    options = json.loads(args.options) if args.options else {}
    if args.model in ("cnn", "lstm"):
        options.setdefault("epochs", args.epochs)
    model = make_model(args.model, seed=args.seed, **options)
    t0 = time.perf_counter()
    model.fit(train)
    runtime = time.perf_counter() - t0
    ckpt = Path(args.checkpoint)
    ckpt.parent.mkdir(parents=True, exist_ok=True)
    model.save(ckpt)
    info = {"model": args.model, "checkpoint": str(ckpt), "n_train": len(train),
            "runtime_s": round(runtime, 3)}
    if test is not None:
        test_path = ckpt.with_name(ckpt.stem + ".test.npy")
        save_windows(test_path, test)
        info["test"] = str(test_path)
    print(json.dumps(info))
    return EXIT_OK


def cmd_eval(args) -> int:
    model = load_model(args.checkpoint)
    test = load_windows(args.test)
    metrics = evaluate(model.predict(test.values), test.labels).to_json()
    text = json.dumps(metrics, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    print(text)
    return EXIT_OK


# -- report / synth / gradcheck / run ---------------------------------------------------

def cmd_report(args) -> int:
    rows = read_report_csv(args.csv)
    csv_path, svg_path = emit_report(rows, args.out_dir)
    print(json.dumps({"csv": str(csv_path), "svg": str(svg_path), "rows": len(rows)}))
    return EXIT_OK


def cmd_synth(args) -> int:
    from .synth import gen_match

    sessions = gen_match(duration_ds=args.duration_ds, delta=args.delta, seed=args.seed,
                         mean_dwell_ds=args.mean_dwell)
    out = Path(args.out_dir)
    for s in sessions:
        d = out / s.player_id.lower()
        sess = Session(s.player_id, s.samples,
                       align_session(s.samples, s.events, s.markers, s.initial_state,
                                     s.player_id).labels, tuple(s.markers), s.initial_state)
        write_session_archive(d, sess, s.events)
        (d / "truth.json").write_text(json.dumps(s.truth_json(), indent=2), encoding="utf-8")
        print(json.dumps({"archive": str(d), "samples": len(s.samples),
                          "flow_fraction": s.plan.flow_fraction()}))
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .models import build_cnn, build_lstm
    from .nn import grad_check

    kinds = ("cnn", "lstm") if args.model == "both" else (args.model,)
    rng = np.random.default_rng(args.seed)
    x = rng.uniform(-1, 1, (args.batch, 10, 12))
    y = np.where(rng.random(args.batch) < 0.5, FLOW, FALL)
    ok = True
    for kind in kinds:
        net = (build_cnn if kind == "cnn" else build_lstm)(seed=args.seed)
        res = grad_check(net, x, y, n_coords=args.coords, seed=args.seed)
        passed = res.passed(args.tol)
        ok &= passed
        print(f"{kind}: max relative error {res.max_rel_error:.3e} over "
              f"{sum(res.n_checked.values())} "
              f"coordinates ({'pass' if passed else 'FAIL'})")
        for name, err in res.per_param.items():
            print(f"  {name:24s} {err:.3e}")
    return EXIT_OK if ok else EXIT_TRAIN


def cmd_run(args) -> int:
    cfg = ExperimentConfig.from_json(args.config)
    rows = run_pipeline(cfg, args.out_dir)
    out = args.out_dir or cfg.out_dir
    print(json.dumps({"rows": len(rows), "out_dir": str(out), "config_hash": cfg.config_hash}))
    return EXIT_OK


# -- parser -------------------------------------------------------------------------------

def _add_split_args(p, required=True):
    p.add_argument("--p1", required=required, help="player 1 window file")
    p.add_argument("--p2", required=required, help="player 2 window file")
    p.add_argument("--regime", choices=REGIMES, default="B-B")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mode", choices=[m.value for m in SplitMode], default="random")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="flowstate", description="Flow-state detection from wrist IMU streams.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = p.add_subparsers(dest="command", metavar="{capture,ingest,preprocess,split,train,"
                                                   "eval,report,synth,gradcheck,run}",
                           parser_class=_Parser)
    sub.required = True

    c = sub.add_parser("capture", help="record coach labels from the keyboard (f/d, q quits)")
    c.add_argument("--out", help="labels JSONL (default stdout)")
    c.add_argument("--origin-ds", type=int, default=0, help="clock origin in deciseconds")
    c.add_argument("--source", choices=[s.value for s in Source], default="app")
    c.set_defaults(func=cmd_capture)

    c = sub.add_parser("ingest", help="parse, dedup, reconcile and align one player's session")
    c.add_argument("--motion", required=True, help="motion CSV")
    c.add_argument("--labels", required=True, help="app labels JSONL")
    c.add_argument("--manual", help="manual labels JSONL to reconcile against")
    c.add_argument("--initial-state", type=int, choices=(FLOW, FALL), required=True)
    c.add_argument("--player", default="P1")
    c.add_argument("--tol-ds", type=int, default=20)
    c.add_argument("--out", required=True, help="session archive directory")
    c.set_defaults(func=cmd_ingest)

    c = sub.add_parser("preprocess", help="smooth, scale and window a session archive")
    c.add_argument("--session", required=True)
    c.add_argument("--out", required=True, help="window file (.npy or .csv)")
    c.add_argument("--ranges", choices=("table", "data"), default="table")
    c.add_argument("--smooth", type=int, default=5)
    c.add_argument("--no-trim", action="store_true", help="keep the sync-marker prefix")
    c.set_defaults(func=cmd_preprocess)

    c = sub.add_parser("split", help="materialize one train/test regime")
    _add_split_args(c)
    c.add_argument("--out-dir", required=True)
    c.set_defaults(func=cmd_split)

    c = sub.add_parser("train", help="fit one model and write a checkpoint")
    c.add_argument("--model", choices=MODEL_NAMES, required=True)
    _add_split_args(c, required=False)
    c.add_argument("--train", help="pre-split training window file")
    c.add_argument("--epochs", type=int, default=20)
    c.add_argument("--options", help="JSON object of model options")
    c.add_argument("--checkpoint", required=True)
    c.set_defaults(func=cmd_train)

    c = sub.add_parser("eval", help="score a checkpoint on a test window file")
    c.add_argument("--checkpoint", required=True)
    c.add_argument("--test", required=True)
    c.add_argument("--out", help="metrics JSON path")
    c.set_defaults(func=cmd_eval)

    c = sub.add_parser("report", help="re-render CSV + SVG from a report CSV")
    c.add_argument("--csv", required=True)
    c.add_argument("--out-dir", required=True)
    c.set_defaults(func=cmd_report)

    c = sub.add_parser("synth", help="generate a synthetic two-player match")
    c.add_argument("--out-dir", required=True)
    c.add_argument("--duration-ds", type=int, default=44_520)
    c.add_argument("--delta", type=float, default=1.0)
    c.add_argument("--mean-dwell", type=float, default=1200.0)
    c.add_argument("--seed", type=int, default=0)
    c.set_defaults(func=cmd_synth)

    c = sub.add_parser("gradcheck", help="finite-difference check of the deep models")
    c.add_argument("--model", choices=("cnn", "lstm", "both"), default="both")
    c.add_argument("--batch", type=int, default=4)
    c.add_argument("--coords", type=int, default=200)
    c.add_argument("--tol", type=float, default=1e-4)
    c.add_argument("--seed", type=int, default=0)
    c.set_defaults(func=cmd_gradcheck)

    c = sub.add_parser("run", help="run a JSON experiment config end to end")
    c.add_argument("--config", required=True)
    c.add_argument("--out-dir", help="override the config's out_dir")
    c.set_defaults(func=cmd_run)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as e:
        parser.print_usage(sys.stderr)
        print(f"flowstate: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except PipelineError as e:
        print(f"flowstate: {e} ({len(e.rows)} finished row(s) kept)", file=sys.stderr)
        return exit_code_for(e)
    except TrainingError as e:
        print(f"flowstate: training failed: {e}", file=sys.stderr)
        return EXIT_TRAIN
    except (DataError, FlowstateError, OSError, ValueError) as e:
        print(f"flowstate: data error: {e}", file=sys.stderr)
        return EXIT_DATA
