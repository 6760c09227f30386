from functools import lru_cache

from flowstate.preprocess import make_windows, preprocess_session, trim_to_match
from flowstate.session_io import align_session, detect_sync_markers
from flowstate.synth import gen_match


@lru_cache(maxsize=None)
def synth_windows(duration_ds=6000, seed=0, delta=1.0, mean_dwell_ds=600.0):
    """Windows for both generated players, through the full ingest path."""
    out = []
    for p in gen_match(duration_ds=duration_ds, delta=delta, seed=seed,
                       mean_dwell_ds=mean_dwell_ds):
        sess = align_session(p.samples, p.events, detect_sync_markers(p.samples),
                             p.initial_state, p.player_id)
        out.append(make_windows(preprocess_session(trim_to_match(sess))))
    return tuple(out)


CRITERIA: dict[int, str] = {}


def record_criterion(number: int, ok: bool, title: str, detail: str) -> None:
    line = f"criterion {number:2d} [{'PASS' if ok else 'FAIL'}] {title}: {detail}"
    CRITERIA[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for k in sorted(CRITERIA):
            terminalreporter.write_line(CRITERIA[k])
