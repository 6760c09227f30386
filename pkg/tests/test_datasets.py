import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flowstate.datasets import (REGIMES, SplitMode, SplitSpec, batches, class_balance,
                                make_split, n_test)
from flowstate.errors import DataError
from flowstate.preprocess import WindowSet
from flowstate.session_io import FALL, FLOW


def fake_windows(n, player, seed=0, t0=0, flow=None):
    rng = np.random.default_rng([seed, player])
    if flow is None:
        labels = np.where(rng.random(n) < 0.5, FLOW, FALL)
    else:
        labels = np.where(np.arange(n) < round(flow * n), FLOW, FALL)
    return WindowSet(rng.uniform(-1, 1, (n, 10, 12)).astype(np.float32), labels,
                     np.arange(t0, t0 + n), np.full(n, player))


def _ids(ws):
    return set(zip(ws.t_end_ds.tolist(), ws.player.tolist()))


# sizes for |P1| = |P2| = 44,507 under the floor rule
EXPECTED = {
    "B-B": (80_113, 8_901),
    "B-P1": (40_057 + 44_507, 4_450),
    "B-P2": (40_057 + 44_507, 4_450),
    "P1-P1": (40_057, 4_450),
    "P1-P2": (44_507, 44_507),
    "P2-P1": (44_507, 44_507),
    "P2-P2": (40_057, 4_450),
}


@pytest.fixture(scope="module")
def full_players():
    return fake_windows(44_507, 1), fake_windows(44_507, 2)


def test_floor_rule():
    assert n_test(89_014) == 8_901 and n_test(44_507) == 4_450 and n_test(9) == 0


@pytest.mark.parametrize("regime", REGIMES)
@pytest.mark.parametrize("mode", ["random", "chrono"])
def test_split_sizes_and_disjointness(full_players, regime, mode):
    p1, p2 = full_players
    train, test = make_split(SplitSpec(regime, 7, mode), p1, p2)
    assert (len(train), len(test)) == EXPECTED[regime]
    assert not (_ids(train) & _ids(test))


def test_p1_p2_is_all_of_each_player(full_players):
    p1, p2 = full_players
    train, test = make_split(SplitSpec("P1-P2", 0), p1, p2)
    assert np.all(train.player == 1) and np.all(test.player == 2)


def test_b_p1_test_only_player_one(full_players):
    p1, p2 = full_players
    train, test = make_split(SplitSpec("B-P1", 0), p1, p2)
    assert np.all(test.player == 1)
    assert int(np.sum(train.player == 2)) == len(p2)


def test_same_seed_same_split():
    p1, p2 = fake_windows(500, 1), fake_windows(400, 2)
    a = make_split(SplitSpec("B-B", 3), p1, p2)
    b = make_split(SplitSpec("B-B", 3), p1, p2)
    c = make_split(SplitSpec("B-B", 4), p1, p2)
    assert np.array_equal(a[1].t_end_ds, b[1].t_end_ds)
    assert np.array_equal(a[1].values, b[1].values)
    assert not np.array_equal(a[1].t_end_ds, c[1].t_end_ds)


@pytest.mark.parametrize("regime", ["P1-P1", "B-P2", "B-B"])
def test_chrono_test_is_final_stretch(regime):
    p1, p2 = fake_windows(300, 1, t0=100), fake_windows(300, 2, t0=100)
    train, test = make_split(SplitSpec(regime, 0, SplitMode.CHRONO), p1, p2)
    for player in np.unique(test.player):
        tr = train.t_end_ds[train.player == player]
        te = test.t_end_ds[test.player == player]
        assert tr.max() < te.min()


def test_unknown_regime():
    with pytest.raises(ValueError):
        SplitSpec("P3-P1", 0)
    with pytest.raises(ValueError):
        SplitSpec("B-B", 0, "sorted")


def test_empty_player_rejected():
    with pytest.raises(DataError):
        make_split(SplitSpec("B-B", 0), fake_windows(0, 1), fake_windows(5, 2))


@given(st.integers(1, 300), st.integers(1, 300), st.sampled_from(REGIMES),
       st.sampled_from(["random", "chrono"]), st.integers(0, 1000))
@settings(max_examples=80, deadline=None)
def test_split_partitions(n1, n2, regime, mode, seed):
    p1, p2 = fake_windows(n1, 1), fake_windows(n2, 2)
    train, test = make_split(SplitSpec(regime, seed, mode), p1, p2)
    assert not (_ids(train) & _ids(test))
    used = len(train) + len(test)
    if regime in ("B-B", "B-P1", "B-P2"):
        assert used == n1 + n2
    elif regime == "P1-P1":
        assert used == n1 and len(test) == n1 // 10
    elif regime == "P2-P2":
        assert used == n2 and len(test) == n2 // 10


# -- class balance -------------------------------------------------------------------

def test_class_balance_cases():
    assert class_balance(fake_windows(10, 1, flow=1.0)) == 1.0
    assert class_balance(fake_windows(10, 1, flow=0.5)) == 0.5
    with pytest.raises(DataError):
        class_balance(fake_windows(0, 1))


def test_class_counts_sum():
    ws = fake_windows(77, 1)
    assert sum(ws.class_counts) == 77


def test_class_balance_of_generator_session():
    from flowstate.preprocess import make_windows, preprocess_session
    from flowstate.session_io import align_session, detect_sync_markers
    from flowstate.synth import gen_match

    p1, _ = gen_match(duration_ds=20_000, seed=6)
    sess = align_session(p1.samples, p1.events, detect_sync_markers(p1.samples),
                         p1.initial_state, "P1")
    ws = make_windows(preprocess_session(sess))
    assert abs(class_balance(ws) - 0.5111) <= 0.005


# -- batches -------------------------------------------------------------------------

def test_batch_sizes():
    assert [len(y) for _, y in batches(fake_windows(130, 1), 64, seed=0)] == [64, 64, 2]


def test_batches_deterministic_and_epoch_dependent():
    ws = fake_windows(200, 1)
    a = [x for x, _ in batches(ws, 64, seed=5)]
    b = [x for x, _ in batches(ws, 64, seed=5)]
    c = [x for x, _ in batches(ws, 64, seed=5, epoch=1)]
    assert all(np.array_equal(u, v) for u, v in zip(a, b))
    assert not np.array_equal(a[0], c[0])


def test_batches_partition_labels():
    ws = fake_windows(150, 1)
    xs, ys = zip(*batches(ws, 32, seed=1))
    assert np.array_equal(np.sort(np.concatenate(ys)), np.sort(ws.labels))
    flat = np.concatenate(xs).reshape(150, -1)
    assert len({row.tobytes() for row in flat}) == 150


def test_batch_size_must_be_positive():
    with pytest.raises(ValueError):
        list(batches(fake_windows(3, 1), 0))
