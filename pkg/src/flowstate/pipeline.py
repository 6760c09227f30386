"""Config-driven experiment runner: data -> windows -> splits -> models -> report."""

from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .datasets import REGIMES, SplitMode, SplitSpec, make_split
from .errors import DataError, FlowstateError, TrainingError
from .models import MODEL_NAMES, evaluate, make_model
from .preprocess import SENSOR_RANGES, WindowSet, make_windows, preprocess_session, trim_to_match
from .report import REFERENCE_ACCURACY, ReportRow, emit_report
from .session_io import align_session, detect_sync_markers, read_session_archive
from .synth import gen_match

log = logging.getLogger(__name__)


class PipelineError(FlowstateError):
    """A stage failed; ``rows`` holds every cell finished before the failure."""

    def __init__(self, stage: str, cause: Exception, rows: list[ReportRow]):
        self.stage = stage
        self.cause = cause
        self.rows = list(rows)
        super().__init__(f"stage {stage!r} failed: {cause}")


@dataclass(frozen=True)
class ModelSpec:
    name: str
    options: dict = field(default_factory=dict)
    seed: int | None = None


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int
    out_dir: str
    splits: tuple[SplitSpec, ...]
    models: tuple[ModelSpec, ...]
    synth: dict | None = None
    sessions: tuple[str, str] | None = None
    preprocess: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict, repr=False, compare=False)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        if "seed" not in d:
            raise DataError("config needs an explicit top-level 'seed'")
        data = d.get("data") or {}
        synth, sessions = data.get("synth"), data.get("sessions")
        if (synth is None) == (sessions is None):
            raise DataError("config 'data' needs exactly one of 'synth' or 'sessions'")
        if synth is not None and "seed" not in synth:
            raise DataError("synth data needs an explicit 'seed'")
        if sessions is not None and len(sessions) != 2:
            raise DataError("'sessions' must list two archives (P1, P2)")
        splits = []
        for s in d.get("splits") or []:
            if "seed" not in s:
                raise DataError(f"split {s} needs an explicit 'seed'")
            regimes = REGIMES if s.get("regime") == "all" else [s["regime"]]
            for r in regimes:
                try:
                    splits.append(SplitSpec(r, int(s["seed"]), SplitMode(s.get("mode", "random"))))
                except ValueError as e:
                    raise DataError(str(e)) from e
        models = []
        for m in d.get("models") or []:
            m = dict(m)
            name = m.pop("name")
            if name not in MODEL_NAMES:
                raise DataError(f"unknown model {name!r}; expected one of {MODEL_NAMES}")
            seed = m.pop("seed", None)
            models.append(ModelSpec(name, m, None if seed is None else int(seed)))
        if not splits or not models:
            raise DataError("config needs at least one split and one model")
        pre = dict(d.get("preprocess") or {})
        unknown = set(pre) - {"ranges", "smooth_w", "window", "trim", "permute_labels"}
        if unknown:
            raise DataError(f"unknown preprocess option(s) {sorted(unknown)}")
        return cls(int(d["seed"]), str(d.get("out_dir", "runs/default")), tuple(splits),
                   tuple(models), synth, tuple(sessions) if sessions else None, pre, dict(d))

    @classmethod
    def from_json(cls, path: Path | str) -> "ExperimentConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    @property
    def config_hash(self) -> str:
        blob = json.dumps(self.raw, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


# -- stages ---------------------------------------------------------------------

def load_player_windows(cfg: ExperimentConfig) -> tuple[WindowSet, WindowSet]:
    pre = cfg.preprocess
    ranges = None if pre.get("ranges") == "data" else SENSOR_RANGES
    w = int(pre.get("smooth_w", 5))
    length = int(pre.get("window", 10))
    if cfg.synth is not None:
        s = cfg.synth
        p1, p2 = gen_match(duration_ds=int(s.get("duration_ds", 44_520)),
                           delta=float(s.get("delta", 1.0)), seed=int(s["seed"]),
                           mean_dwell_ds=float(s.get("mean_dwell_ds", 1200.0)),
                           flow_fractions=tuple(s.get("flow_fractions", (0.5111, 0.4995))))
        sessions = [align_session(p.samples, p.events, detect_sync_markers(p.samples),
                                  p.initial_state, p.player_id) for p in (p1, p2)]
    else:
        sessions = [read_session_archive(p) for p in cfg.sessions]
    out = []
    for k, sess in enumerate(sessions, start=1):
        if pre.get("trim", True):
            sess = trim_to_match(sess)
        ws = make_windows(preprocess_session(sess, ranges, w), length)
        if pre.get("permute_labels", False):
            rng = np.random.default_rng([cfg.seed, 7, k])
            ws = ws.with_labels(rng.permutation(ws.labels))
        out.append(ws)
    return out[0], out[1]


def _cell_dir(out_dir: Path, model: str, spec: SplitSpec) -> Path:
    return out_dir / "cells" / f"{model}_{spec.regime}_{spec.mode.value}"


def run_cell(model_spec: ModelSpec, spec: SplitSpec, p1: WindowSet, p2: WindowSet,
             default_seed: int, out_dir: Path | None = None, config_hash: str = "",
             ) -> ReportRow:
    """Split, train, evaluate one (model x regime) cell."""
    seed = default_seed if model_spec.seed is None else model_spec.seed
    stage = "split"
    try:
        train, test = make_split(spec, p1, p2)
        stage = "train"
        t0 = time.perf_counter()
        model = make_model(model_spec.name, seed=seed, **model_spec.options)
        model.fit(train)
        stage = "evaluate"
        metrics = evaluate(model.predict(test.values), test.labels)
        runtime = time.perf_counter() - t0
    except FlowstateError as e:
        e.stage = stage
        raise
    row = ReportRow(model_spec.name, spec.regime, spec.mode.value, metrics.accuracy,
                    len(train), len(test), seed, round(runtime, 3))
    if out_dir is not None:
        cell = _cell_dir(out_dir, model_spec.name, spec)
        cell.mkdir(parents=True, exist_ok=True)
        model.save(cell / "model.ckpt")
        info = {"config_hash": config_hash, "model": model_spec.name,
                "options": model_spec.options, "regime": spec.regime,
                "mode": spec.mode.value, "split_seed": spec.seed, "model_seed": seed,
                "n_train": len(train), "n_test": len(test), "metrics": metrics.to_json()}
        if model_spec.name == "svm":
            info["svm_train_used"] = model.model.n_train
        hist = getattr(model, "history", None)
        if hist is not None:
            info["history"] = {"train_loss": hist.train_loss,
                               "holdout_accuracy": hist.holdout_accuracy,
                               "best_epoch": hist.best_epoch}
        (cell / "metrics.json").write_text(json.dumps(info, indent=2), encoding="utf-8")
    log.info("%s %s %s: accuracy %.4f (%d train, %d test)", model_spec.name, spec.regime,
             spec.mode.value, metrics.accuracy, len(train), len(test))
    return row


def run_pipeline(cfg: ExperimentConfig, out_dir: Path | str | None = None) -> list[ReportRow]:
    """Run every (model x split) cell and write checkpoints, metrics and the report.

    On failure a ``PipelineError`` names the stage; finished rows are kept on
    the exception and written to the output directory before it is raised.
    """
    out = Path(out_dir if out_dir is not None else cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    chash = cfg.config_hash
    rows: list[ReportRow] = []

    def fail(stage, e):
        if rows:
            emit_report(rows, out)
        _write_manifest(out, cfg, rows, error=f"{stage}: {e}")
        return PipelineError(stage, e, rows)

    try:
        p1, p2 = load_player_windows(cfg)
    except (FlowstateError, OSError, ValueError) as e:
        raise fail("preprocess", e) from e
    log.info("windows: P1 %d, P2 %d", len(p1), len(p2))
    for spec in cfg.splits:
        for m in cfg.models:
            try:
                rows.append(run_cell(m, spec, p1, p2, cfg.seed, out, chash))
            except FlowstateError as e:
                raise fail(getattr(e, "stage", "train"), e) from e
    try:
        emit_report(rows, out)
        _write_manifest(out, cfg, rows)
    except OSError as e:
        raise PipelineError("report", e, rows) from e
    return rows


def _write_manifest(out: Path, cfg: ExperimentConfig, rows, error: str | None = None) -> None:
    manifest = {"config_hash": cfg.config_hash, "config": cfg.raw,
                "rows": [{"model": r.model, "regime": r.regime, "mode": r.mode,
                          "seed": r.seed, "config_hash": cfg.config_hash,
                          "cell": str(_cell_dir(Path("."), r.model,
                                                SplitSpec(r.regime, 0, r.mode)))}
                         for r in rows],
                "reference_accuracy": REFERENCE_ACCURACY}
    if error:
        manifest["error"] = error
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2), encoding="utf-8")


def exit_code_for(e: BaseException) -> int:
    if isinstance(e, PipelineError):
        e = e.cause
    if isinstance(e, TrainingError):
        return 3
    if isinstance(e, (DataError, OSError, ValueError)):
        return 2
    return 1
