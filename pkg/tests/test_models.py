import math

import numpy as np
import pytest
from conftest import synth_windows

from flowstate.datasets import SplitSpec, make_split
from flowstate.errors import ConvergenceError, DataError, TrainingError
from flowstate.models import (CnnConfig, DeepClassifier, ForestConfig, KnnConfig, LstmConfig,
                              SvmConfig, build_cnn, build_lstm, dedup_windows, evaluate,
                              forest_fit, knn_classify, load_model, make_model, svm_fit,
                              train_deep)
from flowstate.models.forest import fit_tree
from flowstate.models.knn import nearest_indices
from flowstate.models.svm import dual_objective, kkt_report, rbf_kernel, smo_solve
from flowstate.preprocess import WindowSet
from flowstate.session_io import FALL, FLOW

SMALL_CNN = CnnConfig((16, 32, 32), fc_width=32)
SMALL_LSTM = LstmConfig(hidden=32, fc_width=32)


def _ws(values, labels, player=1):
    values = np.asarray(values, dtype=np.float64).reshape(len(labels), 10, 12)
    n = len(labels)
    return WindowSet(values, np.asarray(labels), np.arange(n), np.full(n, player))


def _random_ws(n, seed=0):
    rng = np.random.default_rng(seed)
    return _ws(rng.uniform(-1, 1, (n, 120)), np.where(rng.random(n) < 0.5, FLOW, FALL))


@pytest.fixture(scope="module")
def bb_split():
    p1, p2 = synth_windows(8000, 3)
    return make_split(SplitSpec("B-B", 0), p1, p2)


# -- architectures -------------------------------------------------------------------

def test_cnn_parameter_count():
    net = build_cnn()
    assert net.n_params(include_batchnorm=False) == 822_018
    assert net.n_params() - net.n_params(include_batchnorm=False) == 1_792


def test_lstm_parameter_count():
    net = build_lstm()
    assert net.n_params() == 1_075_200 + 65_664 + 258


@pytest.mark.parametrize("builder,cfg", [(build_cnn, SMALL_CNN), (build_lstm, SMALL_LSTM)])
def test_output_is_a_distribution(builder, cfg):
    x = np.random.default_rng(0).uniform(-1, 1, (3, 10, 12))
    p = builder(cfg, seed=1).forward(x)
    assert p.shape == (3, 2)
    assert np.allclose(p.sum(axis=1), 1.0, atol=1e-12) and np.all(p >= 0)


@pytest.mark.parametrize("builder", [build_cnn, build_lstm])
def test_same_seed_same_weights(builder):
    a, b = builder(seed=4).state(), builder(seed=4).state()
    assert all(np.array_equal(a[k], b[k]) for k in a)
    c = builder(seed=5).state()
    assert any(not np.array_equal(a[k], c[k]) for k in a)


def test_lstm_zero_input_rows_identical():
    p = build_lstm(SMALL_LSTM, seed=2).forward(np.zeros((4, 10, 12)))
    assert np.all(p == p[0])


def test_invalid_configs():
    with pytest.raises(ValueError):
        CnnConfig(first_kernel=(1, 6))
    with pytest.raises(ValueError):
        LstmConfig(layers=2)
    with pytest.raises(ValueError):
        CnnConfig(conv_dropout=1.0)
    with pytest.raises(ValueError):
        make_model("transformer")


# -- deep training -------------------------------------------------------------------

def test_cnn_learns_separable_split(bb_split):
    train, test = bb_split
    m = DeepClassifier("cnn", seed=0, epochs=10, config=SMALL_CNN, target_accuracy=0.95)
    m.fit(train)
    assert max(m.history.holdout_accuracy) >= 0.95
    assert len(m.history.holdout_accuracy) <= 10


def test_lstm_first_epoch_loss_below_chance(bb_split):
    train, _ = bb_split
    m = DeepClassifier("lstm", seed=0, epochs=1, config=SMALL_LSTM).fit(train)
    assert m.history.train_loss[0] < math.log(2)


def test_shuffled_labels_give_chance_holdout(bb_split):
    # the holdout is carved from the shuffled set, so its labels carry no signal
    train, _ = bb_split
    rng = np.random.default_rng(9)
    shuffled = train.with_labels(rng.permutation(train.labels))
    m = DeepClassifier("cnn", seed=0, epochs=3, config=SMALL_CNN).fit(shuffled)
    assert all(abs(a - 0.5) <= 0.03 for a in m.history.holdout_accuracy)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_loss_raises_with_diagnostics(bb_split):
    train, _ = bb_split
    net = build_cnn(SMALL_CNN, seed=0)
    name, p = net.named_params()[-1]
    p.value[...] = np.nan
    with pytest.raises(TrainingError, match="grad norms"):
        train_deep(net, train[:256], train[256:320], epochs=1)


def test_train_deep_rejects_empty():
    with pytest.raises(DataError):
        train_deep(build_cnn(SMALL_CNN), _random_ws(10)[:0], _random_ws(10), epochs=1)


# -- kNN -----------------------------------------------------------------------------

def test_knn_self_match():
    ws = _random_ws(200, 1)
    assert np.array_equal(knn_classify(ws, ws.values), ws.labels)


def test_knn_two_points():
    a, b = np.zeros(120), np.full(120, 0.5)
    train = _ws([a, b], [FLOW, FALL])
    q = np.stack([a + 0.1, b - 0.1, np.full(120, 0.9)])
    assert knn_classify(train, q).tolist() == [FLOW, FALL, FALL]


def test_knn_matches_brute_force():
    train = _random_ws(500, 2)
    q = np.random.default_rng(3).uniform(-1, 1, (300, 120))
    d = ((q[:, None, :] - train.flat[None, :, :]) ** 2).sum(axis=2)
    assert np.array_equal(nearest_indices(train.flat, q), d.argmin(axis=1))


def test_knn_tie_goes_to_lower_index():
    train = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0]])
    assert nearest_indices(train, np.zeros((1, 2)))[0] == 0


def test_knn_dedup_training_accuracy_is_one():
    ws = _random_ws(100, 4)
    dup = WindowSet.concat([ws, ws[:30].with_labels(-ws.labels[:30])])
    clean = dedup_windows(dup)
    assert len(clean) == 100
    assert evaluate(knn_classify(clean, clean.values), clean.labels).accuracy == 1.0


def test_knn_invariant_under_rigid_motion():
    rng = np.random.default_rng(5)
    train = rng.uniform(-1, 1, (80, 120))
    q = rng.uniform(-1, 1, (40, 120))
    rot, _ = np.linalg.qr(rng.normal(size=(120, 120)))
    shift = rng.normal(size=120)
    assert np.array_equal(nearest_indices(train, q),
                          nearest_indices(train @ rot + shift, q @ rot + shift))


# -- SVM -----------------------------------------------------------------------------

def test_svm_two_points_bisector():
    a, b = np.zeros(120), np.full(120, 0.05)
    model = svm_fit(_ws([a, b], [FLOW, FALL]), SvmConfig())
    assert model.decision(a[None])[0] > 0 > model.decision(b[None])[0]
    assert abs(model.decision(((a + b) / 2)[None])[0]) < 1e-9
    # any point equidistant from both lies on the boundary
    rng = np.random.default_rng(0)
    for _ in range(5):
        v = rng.normal(size=120)
        v -= v.mean()  # orthogonal to b - a
        assert abs(model.decision(((a + b) / 2 + 0.1 * v)[None])[0]) < 1e-9


def test_svm_kkt_on_generator_windows():
    p1, _ = synth_windows(8000, 3)
    ws = p1[np.random.default_rng(1).choice(len(p1), 300, replace=False)]
    cfg = SvmConfig()
    x, y = ws.flat, ws.labels.astype(float)
    K = rbf_kernel(x, x, cfg.gamma)
    sol = smo_solve(K, y, cfg.C, cfg.tol)
    assert sol.converged
    r = kkt_report(sol.alpha, y, K, sol.b, cfg.C, tol=cfg.tol)
    assert r["box"] == 0.0 and r["equality"] < 1e-6 * cfg.C
    assert r["violations_off_bound"] == 0


class SvmQpOracle:
    """Dense interior-point solve of the same dual, for small instances."""

    def __init__(self, ws, cfg):
        self.cfg = cfg
        self.x, self.y = ws.flat, ws.labels.astype(float)
        self.K = rbf_kernel(self.x, self.x, cfg.gamma)

    def reference(self) -> float:
        import cvxopt

        n, y, C = len(self.y), self.y, self.cfg.C
        Q = np.outer(y, y) * self.K
        cvxopt.solvers.options.update(show_progress=False, abstol=1e-10, reltol=1e-10,
                                      feastol=1e-10, maxiters=200)
        res = cvxopt.solvers.qp(cvxopt.matrix(Q), cvxopt.matrix(-np.ones(n)),
                                cvxopt.matrix(np.vstack([-np.eye(n), np.eye(n)])),
                                cvxopt.matrix(np.concatenate([np.zeros(n), np.full(n, C)])),
                                cvxopt.matrix(y[None, :]), cvxopt.matrix(0.0))
        return dual_objective(np.clip(np.ravel(res["x"]), 0, C), y, self.K)

    def relative_gap(self, tol: float = 1e-5) -> float:
        sol = smo_solve(self.K, self.y, self.cfg.C, tol=tol)
        ref = self.reference()
        return abs(sol.dual_objective - ref) / max(1.0, abs(ref))


def test_svm_dual_matches_qp_solver():
    pytest.importorskip("cvxopt")
    p1, p2 = synth_windows(8000, 3)
    both = WindowSet.concat([p1, p2])
    ws = both[np.random.default_rng(2).choice(len(both), 200, replace=False)]
    assert SvmQpOracle(ws, SvmConfig()).relative_gap() <= 1e-3


def test_svm_single_class_rejected():
    ws = _random_ws(20)
    with pytest.raises(DataError):
        svm_fit(ws.with_labels(np.full(20, FLOW)))


def test_svm_non_convergence_reports_gap():
    with pytest.raises(ConvergenceError, match="duality gap"):
        svm_fit(_random_ws(60, 6), SvmConfig(max_iter=1))


def test_svm_training_cap():
    model = svm_fit(_random_ws(120, 7), SvmConfig(max_train=50))
    assert model.n_train == 50


# -- forest --------------------------------------------------------------------------

def test_single_unlimited_tree_memorizes():
    ws = _random_ws(150, 8)
    cfg = ForestConfig(n_trees=1, max_depth=None, bootstrap=False)
    f = forest_fit(ws, cfg)
    assert np.array_equal(f.predict(ws.values), ws.labels)


def test_pure_node_is_single_leaf():
    x = np.random.default_rng(0).uniform(-1, 1, (30, 120))
    tree = fit_tree(x, np.full(30, FALL), ForestConfig(), np.random.default_rng(0))
    assert tree.n_nodes == 1 and tree.value[0] == FALL


def test_forest_deterministic():
    ws = _random_ws(120, 9)
    cfg = ForestConfig(n_trees=7, seed=3)
    q = _random_ws(50, 10).values
    assert np.array_equal(forest_fit(ws, cfg).predict(q), forest_fit(ws, cfg).predict(q))


def test_forest_vote_tie_goes_to_fall():
    a = np.zeros((1, 120))
    trees = [fit_tree(a, np.array([s]), ForestConfig(), np.random.default_rng(0))
             for s in (FLOW, FALL)]
    from flowstate.models import Forest
    assert Forest(trees).predict(a)[0] == FALL


# -- metrics -------------------------------------------------------------------------

def test_evaluate_confusion():
    m = evaluate([1, 1, -1, -1], [1, -1, -1, -1])
    assert m.accuracy == 0.75
    assert m.confusion.tolist() == [[2, 1], [0, 1]]
    assert m.counts == {"fall": 3, "flow": 1, "pred_fall": 2, "pred_flow": 2}


def test_evaluate_errors():
    with pytest.raises(ValueError):
        evaluate([1], [1, 1])
    with pytest.raises(ValueError):
        evaluate([], [])


# -- save / load ---------------------------------------------------------------------

@pytest.mark.parametrize("name,options", [
    ("cnn", {"epochs": 1, "config": SMALL_CNN}),
    ("lstm", {"epochs": 1, "config": SMALL_LSTM}),
    ("knn", {}),
    ("svm", {}),
    ("forest", {"n_trees": 5}),
])
def test_checkpoint_round_trip(tmp_path, name, options):
    train = _random_ws(300, 11)
    q = _random_ws(64, 12).values
    m = make_model(name, seed=1, **options).fit(train)
    before = m.predict(q)
    assert set(np.unique(before)) <= {FLOW, FALL}
    m.save(tmp_path / "m.ckpt")
    back = load_model(tmp_path / "m.ckpt")
    assert np.array_equal(back.predict(q), before)
