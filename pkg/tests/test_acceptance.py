"""Acceptance criteria 1-10; each test records one PASS/FAIL line."""

import io
import json
import time

import numpy as np
import pytest
from conftest import record_criterion

from flowstate.datasets import REGIMES, SplitSpec, make_split
from flowstate.models import build_cnn, build_lstm, dedup_windows, knn_classify
from flowstate.models.knn import nearest_indices
from flowstate.models.svm import SvmConfig, kkt_report, rbf_kernel, smo_solve
from flowstate.nn import grad_check
from flowstate.pipeline import ExperimentConfig, run_pipeline
from flowstate.preprocess import WindowSet, dedup, make_windows, preprocess_samples, smooth
from flowstate.session_io import (FALL, FLOW, LabelTrack, Session, detect_sync_markers,
                                  parse_motion_csv, write_motion_csv)
from flowstate.synth import gen_match

from test_models import SvmQpOracle


def _history(out_dir, model, regime, mode="random"):
    path = out_dir / "cells" / f"{model}_{regime}_{mode}" / "metrics.json"
    return json.loads(path.read_text())["history"]


# 1 ----------------------------------------------------------------------------------

def test_criterion_01_preprocessing_arithmetic():
    t0 = time.perf_counter()
    p1, _ = gen_match(duration_ds=44_520, seed=0)
    raw = p1.samples
    smoothed = smooth(dedup(raw))
    pre = preprocess_samples(raw)
    labels = LabelTrack(int(pre.t_ds[0]), int(pre.t_ds[-1]) + 1,
                        p1.truth[int(pre.t_ds[0]):int(pre.t_ds[-1]) + 1])
    windows = make_windows(Session("P1", pre, labels))
    elapsed = time.perf_counter() - t0
    ok = (len(raw), len(smoothed), len(pre), len(windows)) == (44_520, 44_516, 44_516, 44_507)
    ok &= elapsed < 5.0
    record_criterion(1, ok, "preprocessing arithmetic",
                     f"{len(raw)} raw -> {len(pre)} smoothed -> {len(windows)} windows "
                     f"in {elapsed:.2f}s")
    assert ok


# 2 ----------------------------------------------------------------------------------

EXPECTED_SIZES = {
    "B-B": (80_113, 8_901), "B-P1": (84_564, 4_450), "B-P2": (84_564, 4_450),
    "P1-P1": (40_057, 4_450), "P1-P2": (44_507, 44_507), "P2-P1": (44_507, 44_507),
    "P2-P2": (40_057, 4_450),
}


def test_criterion_02_split_cardinalities():
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)

    def player(k):
        n = 44_507
        return WindowSet(np.zeros((n, 10, 12), dtype=np.float32),
                         np.where(rng.random(n) < 0.5, FLOW, FALL), np.arange(n),
                         np.full(n, k))

    p1, p2 = player(1), player(2)
    got = {}
    for mode in ("random", "chrono"):
        for regime in REGIMES:
            train, test = make_split(SplitSpec(regime, 0, mode), p1, p2)
            got[(regime, mode)] = (len(train), len(test))
    elapsed = time.perf_counter() - t0
    bad = {k: v for k, v in got.items() if v != EXPECTED_SIZES[k[0]]}
    ok = not bad and elapsed < 5.0
    record_criterion(2, ok, "split cardinalities",
                     f"14 regime/mode cells exact, B-B test {got[('B-B', 'random')][1]}, "
                     f"P1-P2 {got[('P1-P2', 'random')]} in {elapsed:.2f}s" if not bad
                     else f"mismatches {bad}")
    assert ok


# 3 ----------------------------------------------------------------------------------

def test_criterion_03_gradient_fidelity():
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    x = rng.uniform(-1, 1, (4, 10, 12))
    y = np.array([FLOW, FALL, FALL, FLOW])
    worst, per_layer, lines = 0.0, {}, []
    for name, builder in (("cnn", build_cnn), ("lstm", build_lstm)):
        net = builder(seed=0)
        assert net.dtype == np.float64
        res = grad_check(net, x, y, n_coords=200, seed=0)
        worst = max(worst, res.max_rel_error)
        for tensor, n in res.n_checked.items():
            key = (name, tensor.split(".")[0])
            per_layer[key] = per_layer.get(key, 0) + n
        lines.append(f"{name} {res.max_rel_error:.2e}")
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-4 and min(per_layer.values()) >= 200 and elapsed < 120
    record_criterion(3, ok, "gradient fidelity",
                     f"max relative error {', '.join(lines)}; at least "
                     f"{min(per_layer.values())} coords per layer; {elapsed:.1f}s")
    assert ok


# 4 ----------------------------------------------------------------------------------

def test_criterion_04_learnability(tmp_path):
    t0 = time.perf_counter()
    deep = {"epochs": 10, "target_accuracy": 0.97}
    cfg = ExperimentConfig.from_dict({
        "seed": 0,
        "data": {"synth": {"seed": 0, "delta": 1.0, "duration_ds": 44_520}},
        "splits": [{"regime": "B-B", "seed": 0, "mode": "random"}],
        "models": [{"name": "cnn", **deep}, {"name": "lstm", **deep}],
    })
    rows = run_pipeline(cfg, tmp_path)
    elapsed = time.perf_counter() - t0
    accs = {r.model: r.accuracy for r in rows}
    epochs = {m: len(_history(tmp_path, m, "B-B")["holdout_accuracy"]) for m in accs}
    ok = all(a >= 0.95 for a in accs.values()) and max(epochs.values()) <= 10
    ok &= elapsed < 20 * 60 and rows[0].n_train + rows[0].n_test > 80_000
    record_criterion(4, ok, "learnability",
                     f"B-B test accuracy cnn {accs['cnn']:.4f} ({epochs['cnn']} ep), "
                     f"lstm {accs['lstm']:.4f} ({epochs['lstm']} ep); {elapsed / 60:.1f} min")
    assert ok


# 5 ----------------------------------------------------------------------------------

def test_criterion_05_null_control(tmp_path):
    t0 = time.perf_counter()
    results = []
    for seed in (0, 1, 2):
        cfg = ExperimentConfig.from_dict({
            "seed": seed,
            "data": {"synth": {"seed": 0, "delta": 1.0, "duration_ds": 20_000}},
            "preprocess": {"permute_labels": True},
            "splits": [{"regime": "B-B", "seed": seed}],
            "models": [{"name": "cnn", "epochs": 1}, {"name": "lstm", "epochs": 1},
                       {"name": "knn"}, {"name": "svm", "max_train": 3000},
                       {"name": "forest"}],
        })
        results.extend(run_pipeline(cfg, tmp_path / f"s{seed}"))
    elapsed = time.perf_counter() - t0
    accs = {(r.model, r.seed): r.accuracy for r in results}
    outside = {k: v for k, v in accs.items() if not 0.47 <= v <= 0.53}
    ok = not outside and len(accs) == 15 and elapsed < 20 * 60
    lo, hi = min(accs.values()), max(accs.values())
    record_criterion(5, ok, "null control",
                     f"15 permuted-label cells in [{lo:.4f}, {hi:.4f}]"
                     f"{'' if not outside else f', outside: {outside}'}; {elapsed / 60:.1f} min")
    assert ok


# 6 ----------------------------------------------------------------------------------

def test_criterion_06_cross_player(tmp_path):
    t0 = time.perf_counter()
    deep = {"epochs": 10, "target_accuracy": 0.97}
    cfg = ExperimentConfig.from_dict({
        "seed": 0,
        "data": {"synth": {"seed": 0, "delta": 1.0, "duration_ds": 20_000}},
        "splits": [{"regime": r, "seed": 0} for r in ("P1-P1", "P2-P2", "P1-P2", "P2-P1")],
        "models": [{"name": "cnn", **deep}, {"name": "lstm", **deep}],
    })
    rows = run_pipeline(cfg, tmp_path)
    elapsed = time.perf_counter() - t0
    acc = {(r.model, r.regime): r.accuracy for r in rows}
    gaps, parts = [], []
    for m in ("cnn", "lstm"):
        for cross, within in (("P1-P2", "P1-P1"), ("P2-P1", "P2-P2")):
            gaps.append(acc[(m, within)] - acc[(m, cross)])
            parts.append(f"{m} {within} {acc[(m, within)]:.3f} vs {cross} "
                         f"{acc[(m, cross)]:.3f}")
    ok = min(gaps) >= 0.30 and elapsed < 30 * 60
    record_criterion(6, ok, "cross-player structure",
                     f"min gap {min(gaps):.3f}; {'; '.join(parts)}; {elapsed / 60:.1f} min")
    assert ok


# 7 ----------------------------------------------------------------------------------

def test_criterion_07_knn_memorization():
    t0 = time.perf_counter()
    from conftest import synth_windows

    p1, p2 = synth_windows(8000, 3)
    train = dedup_windows(WindowSet.concat([p1, p2]))
    train_acc = float(np.mean(knn_classify(train, train.values) == train.labels))
    rng = np.random.default_rng(0)
    q = rng.uniform(-1, 1, (500, 120)) * 0.2 + train.flat[rng.choice(len(train), 500)]
    tv = train.flat
    brute = np.array([int(np.argmin(((tv - row) ** 2).sum(axis=1))) for row in q])
    agree = float(np.mean(nearest_indices(tv, q) == brute))
    elapsed = time.perf_counter() - t0
    ok = train_acc == 1.0 and agree == 1.0 and elapsed < 60
    record_criterion(7, ok, "kNN memorization",
                     f"training accuracy {train_acc} on {len(train)} deduplicated windows, "
                     f"brute-force agreement {agree:.0%} on 500 queries; {elapsed:.1f}s")
    assert ok


# 8 ----------------------------------------------------------------------------------

def test_criterion_08_svm_optimality():
    t0 = time.perf_counter()
    from conftest import synth_windows

    p1, p2 = synth_windows(8000, 3)
    both = WindowSet.concat([p1, p2])
    cfg = SvmConfig()
    rng = np.random.default_rng(0)
    kkt_ok = True
    worst = {}
    for n in (200, 500, 1000):
        ws = both[rng.choice(len(both), n, replace=False)]
        x, y = ws.flat, ws.labels.astype(float)
        K = rbf_kernel(x, x, cfg.gamma)
        sol = smo_solve(K, y, cfg.C, cfg.tol)
        r = kkt_report(sol.alpha, y, K, sol.b, cfg.C, tol=cfg.tol)
        kkt_ok &= sol.converged and r["box"] == 0.0 and r["violations_off_bound"] == 0
        kkt_ok &= r["equality"] < 1e-6 * cfg.C
        for k in ("equality", "violations_off_bound"):
            worst[k] = max(worst.get(k, 0), r[k])
    ws = both[np.random.default_rng(2).choice(len(both), 200, replace=False)]
    rel = SvmQpOracle(ws, cfg).relative_gap()
    elapsed = time.perf_counter() - t0
    ok = kkt_ok and rel <= 1e-3 and elapsed < 120
    record_criterion(8, ok, "SVM optimality",
                     f"KKT held on 3 fits (worst {worst}); dual vs QP oracle relative "
                     f"difference {rel:.2e} on 200 windows; {elapsed:.1f}s")
    assert ok


# 9 ----------------------------------------------------------------------------------

def _csv_without_runtime(path):
    lines = path.read_text().splitlines()
    return [",".join(line.split(",")[:-1]) for line in lines]


def test_criterion_09_determinism(tmp_path):
    from test_cli import small_config

    t0 = time.perf_counter()
    cfg = ExperimentConfig.from_dict(small_config(tmp_path))
    run_pipeline(cfg, tmp_path / "a")
    first = time.perf_counter() - t0
    run_pipeline(cfg, tmp_path / "b")
    elapsed = time.perf_counter() - t0
    a = _csv_without_runtime(tmp_path / "a" / "report.csv")
    b = _csv_without_runtime(tmp_path / "b" / "report.csv")
    ckpts = sorted((tmp_path / "a" / "cells").glob("*/model.ckpt"))
    same_ckpt = all(p.read_bytes() == (tmp_path / "b" / p.relative_to(tmp_path / "a"))
                    .read_bytes() for p in ckpts)
    ok = a == b and len(a) == 36 and same_ckpt and elapsed < 2 * first + 5
    record_criterion(9, ok, "determinism",
                     f"35-row report identical on rerun (runtime_s excluded), "
                     f"{len(ckpts)} checkpoints byte-identical; {elapsed:.1f}s")
    assert ok


# 10 ---------------------------------------------------------------------------------

def test_criterion_10_closed_loop():
    t0 = time.perf_counter()
    worst, n_sessions, failures = 0, 0, []
    for seed in range(25):
        for p in gen_match(duration_ds=1500, seed=seed, mean_dwell_ds=200):
            n_sessions += 1
            buf = io.StringIO()
            write_motion_csv(p.samples, buf)
            parsed = parse_motion_csv(buf.getvalue())   # full range/order/gap validation
            found = detect_sync_markers(parsed)
            if len(found) != 2:
                failures.append((seed, p.player_id, len(found)))
                continue
            for f, m in zip(found, p.markers):
                worst = max(worst, abs(f.start_ds - m.start_ds), abs(f.end_ds - m.end_ds))
    elapsed = time.perf_counter() - t0
    ok = not failures and worst <= 3 and n_sessions == 50 and elapsed < 120
    record_criterion(10, ok, "closed loop",
                     f"{n_sessions} sessions validated, markers within {worst} ds"
                     f"{'' if not failures else f', failures {failures}'}; {elapsed:.1f}s")
    assert ok
