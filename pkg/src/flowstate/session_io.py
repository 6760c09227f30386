"""Motion stream parsing, coach label capture, and session alignment.

A recorded stream is held as a :class:`Samples` block (one int64 timestamp
column plus a ``(N, 12)`` float64 channel matrix) rather than a list of
per-decisecond objects; :class:`ImuSample` is the row view.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import warnings
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator, Sequence, TextIO

import numpy as np

from .errors import (
    AlignmentError,
    GapError,
    InsufficientMarkersError,
    OrderingError,
    ParseError,
    RangeError,
)

log = logging.getLogger(__name__)

CHANNELS = ("gx", "gy", "gz", "ax", "ay", "az", "rx", "ry", "rz", "yaw", "roll", "pitch")
CHANNEL_NAMES = (
    "GravityX", "GravityY", "GravityZ",
    "AccelerationX", "AccelerationY", "AccelerationZ",
    "RotationRateX", "RotationRateY", "RotationRateZ",
    "AttitudeYAW", "AttitudeROLL", "AttitudePITCH",
)
CSV_HEADER = ("t_ds",) + CHANNELS
N_CHANNELS = len(CHANNELS)

# Acceptance envelope for raw values. Gravity and attitude are physical
# bounds; accel/rot are the observed extremes padded by a margin.
VALID_LOW = np.array([-1, -1, -1, -20, -20, -20, -45, -45, -45,
                      -math.pi, -math.pi, -math.pi / 2])
VALID_HIGH = -VALID_LOW

FLOW = 1
FALL = -1

RAISE_DIRECTION = (0.0, -1.0, 0.0)
RAISE_TOLERANCE_DEG = 20.0
MIN_MARKER_DS = 25
MAX_GAP_DS = 5
DEFAULT_TOL_DS = 20


@dataclass(frozen=True)
class ImuSample:
    t_ds: int
    gravity: tuple[float, float, float]
    accel: tuple[float, float, float]
    rot: tuple[float, float, float]
    attitude: tuple[float, float, float]

    def as_row(self) -> list[float]:
        return [*self.gravity, *self.accel, *self.rot, *self.attitude]


def _frozen(a, dtype) -> np.ndarray:
    """Read-only contiguous view; copies rather than freezing a caller's writable array."""
    out = np.ascontiguousarray(a, dtype=dtype)
    if out.flags.writeable and (out is a or np.shares_memory(out, a)):
        out = out.copy()
    return out


@dataclass(frozen=True, eq=False)
class Samples:
    """Time-ordered block of IMU samples."""

    t_ds: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        t = _frozen(self.t_ds, np.int64)
        v = _frozen(self.values, np.float64)
        if v.ndim != 2 or v.shape[1] != N_CHANNELS or t.shape != (v.shape[0],):
            raise ValueError(f"expected t (N,) and values (N, {N_CHANNELS}); "
                             f"got {t.shape} and {v.shape}")
        t.flags.writeable = False
        v.flags.writeable = False
        object.__setattr__(self, "t_ds", t)
        object.__setattr__(self, "values", v)

    @classmethod
    def from_samples(cls, rows: Iterable[ImuSample]) -> "Samples":
        rows = list(rows)
        t = np.array([r.t_ds for r in rows], dtype=np.int64)
        v = np.array([r.as_row() for r in rows], dtype=np.float64).reshape(len(rows), N_CHANNELS)
        return cls(t, v)

    def __len__(self) -> int:
        return len(self.t_ds)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return Samples(self.t_ds[i], self.values[i])
        row = self.values[i]
        return ImuSample(int(self.t_ds[i]), tuple(row[0:3]), tuple(row[3:6]),
                         tuple(row[6:9]), tuple(row[9:12]))

    def __iter__(self) -> Iterator[ImuSample]:
        for i in range(len(self)):
            yield self[i]

    def __eq__(self, other) -> bool:
        if not isinstance(other, Samples):
            return NotImplemented
        return (np.array_equal(self.t_ds, other.t_ds)
                and np.array_equal(self.values, other.values))

    @property
    def gravity(self) -> np.ndarray:
        return self.values[:, 0:3]

    def with_values(self, values: np.ndarray) -> "Samples":
        return Samples(self.t_ds, values)


class Source(str, Enum):
    APP = "app"
    MANUAL = "manual"


@dataclass(frozen=True)
class LabelEvent:
    t_ds: int
    state: int
    source: Source = Source.APP

    def __post_init__(self):
        if self.state not in (FLOW, FALL):
            raise ValueError(f"label state must be +1 or -1, got {self.state!r}")
        object.__setattr__(self, "source", Source(self.source))


@dataclass(frozen=True, eq=False)
class LabelTrack:
    start_ds: int
    end_ds: int
    values: np.ndarray

    def __post_init__(self):
        v = _frozen(self.values, np.int8)
        if len(v) != self.end_ds - self.start_ds:
            raise ValueError("label track length must equal end_ds - start_ds")
        if not np.all((v == FLOW) | (v == FALL)):
            raise ValueError("label track values must be +1 or -1")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    def __len__(self) -> int:
        return len(self.values)

    def at(self, t_ds) -> np.ndarray:
        """Label values at the given timestamps (must lie inside the track)."""
        idx = np.asarray(t_ds, dtype=np.int64) - self.start_ds
        if np.any(idx < 0) or np.any(idx >= len(self.values)):
            raise AlignmentError("timestamp outside label track")
        return self.values[idx]

    def flow_fraction(self) -> float:
        return float(np.mean(self.values == FLOW))


@dataclass(frozen=True)
class SyncMarker:
    """Raised-hand interval, ``end_ds`` exclusive."""

    start_ds: int
    end_ds: int

    def __post_init__(self):
        if self.end_ds - self.start_ds < MIN_MARKER_DS:
            raise ValueError(f"marker shorter than {MIN_MARKER_DS} ds")


@dataclass(frozen=True)
class Session:
    player_id: str
    samples: Samples
    labels: LabelTrack
    markers: tuple[SyncMarker, ...] = ()
    initial_state: int = FALL

    def __post_init__(self):
        t = self.samples.t_ds
        if len(t) and np.any(np.diff(t) <= 0):
            raise OrderingError("session timestamps must be strictly increasing")
        if len(t) and (self.labels.start_ds > t[0] or self.labels.end_ds <= t[-1]):
            raise AlignmentError("label track does not cover the sample span")

    def label_values(self) -> np.ndarray:
        return self.labels.at(self.samples.t_ds)


# -- motion CSV ---------------------------------------------------------------

def _check_ranges(row: np.ndarray, line: int, row_no: int) -> None:
    bad = np.flatnonzero(~((row >= VALID_LOW) & (row <= VALID_HIGH)))
    if len(bad):
        j = bad[0]
        raise RangeError(CHANNEL_NAMES[j], float(row[j]), line, row_no)


def validate_samples(samples: Samples, allow_duplicates: bool = False) -> None:
    """Raise if any sample breaks the ImuSample invariants or time order."""
    v = samples.values
    ok = (v >= VALID_LOW) & (v <= VALID_HIGH)
    if not ok.all():
        i, j = np.argwhere(~ok)[0]
        raise RangeError(CHANNEL_NAMES[j], float(v[i, j]), row=int(i) + 1)
    d = np.diff(samples.t_ds)
    bad = np.flatnonzero(d < 0 if allow_duplicates else d <= 0)
    if len(bad):
        raise OrderingError("non-increasing timestamp", row=int(bad[0]) + 2)


def parse_motion_csv(stream: TextIO | str, allow_duplicates: bool = False) -> Samples:
    """Parse a motion CSV (header ``t_ds,gx,...,pitch``) into samples.

    Duplicate timestamps are an ordering error unless ``allow_duplicates``
    is set, in which case they are left for :func:`preprocess.dedup`.
    Error line numbers are physical file lines; ``row`` counts data rows.
    """
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    reader = csv.reader(stream)
    ts: list[int] = []
    rows: list[np.ndarray] = []
    prev = None
    row_no = 0
    for line_no, fields in enumerate(reader, start=1):
        if not fields or (len(fields) == 1 and not fields[0].strip()):
            continue
        if line_no == 1 and fields[0].strip() == "t_ds":
            if tuple(f.strip() for f in fields) != CSV_HEADER:
                raise ParseError(f"unexpected header {fields!r}", line_no)
            continue
        row_no += 1
        if len(fields) != len(CSV_HEADER):
            raise ParseError(f"expected {len(CSV_HEADER)} fields, got {len(fields)}",
                             line_no, row_no)
        try:
            t = int(fields[0])
            vals = np.array([float(f) for f in fields[1:]])
        except ValueError as exc:
            raise ParseError(f"non-numeric field ({exc})", line_no, row_no) from None
        if not np.all(np.isfinite(vals)):
            j = int(np.flatnonzero(~np.isfinite(vals))[0])
            raise RangeError(CHANNEL_NAMES[j], float(vals[j]), line_no, row_no)
        _check_ranges(vals, line_no, row_no)
        if prev is not None and (t < prev or (t == prev and not allow_duplicates)):
            raise OrderingError(f"timestamp {t} after {prev}", line_no, row_no)
        prev = t
        ts.append(t)
        rows.append(vals)
    values = np.array(rows).reshape(len(rows), N_CHANNELS)
    return Samples(np.array(ts, dtype=np.int64), values)


def _fmt(x: float) -> str:
    # shortest round-trip repr, integral values without the trailing ".0"
    s = repr(x)
    return s[:-2] if s.endswith(".0") else s


def write_motion_csv(samples: Samples, stream: TextIO) -> None:
    stream.write(",".join(CSV_HEADER) + "\n")
    for t, row in zip(samples.t_ds.tolist(), samples.values.tolist()):
        stream.write(str(t) + "," + ",".join(_fmt(x) for x in row) + "\n")


def serialize_motion_csv(samples: Samples) -> str:
    buf = io.StringIO()
    write_motion_csv(samples, buf)
    return buf.getvalue()


# -- labels ---------------------------------------------------------------------

FLOW_KEY = "f"
FALL_KEY = "d"
QUIT_KEY = "q"
_KEY_STATE = {FLOW_KEY: FLOW, FALL_KEY: FALL}


def capture_labels(key_stream: Iterable[tuple[str, float]], clock_origin_ds: int = 0,
                   source: Source = Source.APP) -> list[LabelEvent]:
    """Turn ``(key, seconds)`` presses into label events in deciseconds.

    Presses repeating the current state are dropped; presses before the
    clock origin are clamped to 0 with a warning.
    """
    events: list[LabelEvent] = []
    for key, t_s in key_stream:
        if key not in _KEY_STATE:
            raise ValueError(f"unexpected key {key!r}; only {FLOW_KEY!r}/{FALL_KEY!r} allowed")
        t = int(round(t_s * 10)) - clock_origin_ds
        if t < 0:
            warnings.warn(f"key press at {t_s} s precedes clock origin; clamped to 0",
                          stacklevel=2)
            t = 0
        state = _KEY_STATE[key]
        if events and events[-1].state == state:
            continue
        events.append(LabelEvent(t, state, source))
    return events


def normalize_events(events: Iterable[LabelEvent]) -> list[LabelEvent]:
    """Sort by time and collapse consecutive same-state events."""
    out: list[LabelEvent] = []
    for ev in sorted(events, key=lambda e: e.t_ds):
        if out and out[-1].state == ev.state:
            continue
        out.append(ev)
    return out


@dataclass
class ReconcileReport:
    matched: int = 0
    conflicts: list[tuple[LabelEvent, LabelEvent]] = field(default_factory=list)
    missing_in_app: list[LabelEvent] = field(default_factory=list)
    missing_in_manual: list[LabelEvent] = field(default_factory=list)

    @property
    def n_conflicts(self) -> int:
        return len(self.conflicts)


def _greedy_pairs(left, right, tol_ds, same_state, used_l, used_r):
    cands = []
    for i, a in enumerate(left):
        if i in used_l:
            continue
        for j, b in enumerate(right):
            if j in used_r or (a.state == b.state) != same_state:
                continue
            dt = abs(a.t_ds - b.t_ds)
            if dt <= tol_ds:
                lo, hi = sorted((a.t_ds, b.t_ds))
                cands.append((dt, lo, hi, i, j))
    pairs = []
    for dt, lo, hi, i, j in sorted(cands):
        if i in used_l or j in used_r:
            continue
        used_l.add(i)
        used_r.add(j)
        pairs.append((i, j))
    return pairs


def reconcile_labels(app: Sequence[LabelEvent], manual: Sequence[LabelEvent],
                     tol_ds: int = DEFAULT_TOL_DS) -> tuple[list[LabelEvent], ReconcileReport]:
    """Cross-check app-recorded labels against the researcher's manual notes.

    Same-state events within ``tol_ds`` are matched (app timestamp kept);
    opposite-state events within ``tol_ds`` are conflicts resolved in favour
    of the app; anything left over is kept and flagged.
    """
    report = ReconcileReport()
    used_a: set[int] = set()
    used_m: set[int] = set()
    matches = _greedy_pairs(app, manual, tol_ds, True, used_a, used_m)
    report.matched = len(matches)
    for i, j in _greedy_pairs(app, manual, tol_ds, False, used_a, used_m):
        report.conflicts.append((app[i], manual[j]))
    merged = [app[i] for i in range(len(app))]
    for i, a in enumerate(app):
        if i not in used_a:
            report.missing_in_manual.append(a)
    for j, m in enumerate(manual):
        if j not in used_m:
            report.missing_in_app.append(m)
            merged.append(m)
    merged.sort(key=lambda e: (e.t_ds, e.source != Source.APP))
    return merged, report


def write_labels_jsonl(events: Iterable[LabelEvent], stream: TextIO) -> None:
    for ev in events:
        stream.write(json.dumps({"t_ds": ev.t_ds, "state": ev.state,
                                 "source": ev.source.value}) + "\n")


def read_labels_jsonl(stream: TextIO | str) -> list[LabelEvent]:
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    events = []
    for line_no, line in enumerate(stream, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            events.append(LabelEvent(int(obj["t_ds"]), int(obj["state"]),
                                     Source(obj.get("source", "app"))))
        except (ValueError, KeyError, TypeError) as exc:
            raise ParseError(f"bad label event: {exc}", line_no) from None
    return events


# -- markers and alignment ----------------------------------------------------------

def detect_sync_markers(samples: Samples, tolerance_deg: float = RAISE_TOLERANCE_DEG,
                        min_dwell_ds: int = MIN_MARKER_DS, min_markers: int = 2,
                        reference=RAISE_DIRECTION) -> list[SyncMarker]:
    """Find maximal raised-hand intervals from the gravity channels alone."""
    if len(samples) == 0:
        raise InsufficientMarkersError("no samples")
    g = samples.gravity
    ref = np.asarray(reference, dtype=float)
    ref = ref / np.linalg.norm(ref)
    norms = np.linalg.norm(g, axis=1)
    cos = (g @ ref) / np.where(norms > 0, norms, 1.0)
    hit = (norms > 0) & (cos >= math.cos(math.radians(tolerance_deg)))

    t = samples.t_ds
    # a run also breaks on a timestamp gap
    contiguous = np.concatenate(([False], np.diff(t) == 1))
    markers = []
    i, n = 0, len(t)
    while i < n:
        if not hit[i]:
            i += 1
            continue
        j = i
        while j + 1 < n and hit[j + 1] and contiguous[j + 1]:
            j += 1
        if t[j] + 1 - t[i] >= min_dwell_ds:
            markers.append(SyncMarker(int(t[i]), int(t[j]) + 1))
        i = j + 1
    if len(markers) < min_markers:
        raise InsufficientMarkersError(
            f"found {len(markers)} sync marker(s), need {min_markers}")
    return markers


def find_gaps(t_ds: np.ndarray) -> list[tuple[int, int]]:
    """(previous t, next t) pairs where consecutive timestamps differ by > 1."""
    d = np.diff(t_ds)
    idx = np.flatnonzero(d > 1)
    return [(int(t_ds[i]), int(t_ds[i + 1])) for i in idx]


def split_at_gaps(samples: Samples, max_gap_ds: int = MAX_GAP_DS) -> list[Samples]:
    cut = np.flatnonzero(np.diff(samples.t_ds) > max_gap_ds) + 1
    bounds = [0, *cut.tolist(), len(samples)]
    return [samples[a:b] for a, b in zip(bounds[:-1], bounds[1:])]


def expand_track(events: Sequence[LabelEvent], start_ds: int, end_ds: int,
                 initial_state: int, offset_ds: int = 0) -> LabelTrack:
    """Step-function hold of ``events`` over ``[start_ds, end_ds)``."""
    t = np.arange(start_ds, end_ds, dtype=np.int64)
    ev_t = np.array([e.t_ds + offset_ds for e in events], dtype=np.int64)
    ev_s = np.array([e.state for e in events], dtype=np.int8)
    order = np.argsort(ev_t, kind="stable")
    ev_t, ev_s = ev_t[order], ev_s[order]
    idx = np.searchsorted(ev_t, t, side="right") - 1
    values = np.where(idx >= 0, ev_s[np.maximum(idx, 0)] if len(ev_s) else initial_state,
                      initial_state).astype(np.int8)
    return LabelTrack(start_ds, end_ds, values)


def align_session(samples: Samples, events: Sequence[LabelEvent],
                  markers: Sequence[SyncMarker], initial_state: int,
                  player_id: str = "P1", max_gap_ds: int = MAX_GAP_DS) -> Session:
    """Shift the label clock onto the motion clock and build a dense track.

    The label stream's origin is placed at the start of the first sync
    marker. Gaps up to ``max_gap_ds`` are tolerated with a warning.
    """
    if not markers:
        raise AlignmentError("at least one sync marker is required")
    if initial_state not in (FLOW, FALL):
        raise ValueError("initial_state must be +1 or -1")
    if len(samples) == 0:
        raise AlignmentError("no samples")
    gaps = find_gaps(samples.t_ds)
    big = [g for g in gaps if g[1] - g[0] > max_gap_ds]
    if big:
        raise GapError(big)
    if gaps:
        warnings.warn(f"{len(gaps)} small gap(s) in motion stream", stacklevel=2)

    offset = markers[0].start_ds
    start, end = int(samples.t_ds[0]), int(samples.t_ds[-1]) + 1
    shifted = [e.t_ds + offset for e in events]
    if events and all(t < start or t >= end for t in shifted):
        warnings.warn("no label event falls inside the sample span", stacklevel=2)
        events = []
    track = expand_track(events, start, end, initial_state, offset)
    return Session(player_id, samples, track, tuple(markers), initial_state)


# -- session archive --------------------------------------------------------------

def write_session_archive(path: Path | str, session: Session,
                          events: Sequence[LabelEvent], extra: dict | None = None) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    with open(path / "motion.csv", "w", encoding="utf-8", newline="") as fh:
        write_motion_csv(session.samples, fh)
    with open(path / "labels.jsonl", "w", encoding="utf-8") as fh:
        write_labels_jsonl(events, fh)
    meta = {
        "player_id": session.player_id,
        "initial_state": session.initial_state,
        "markers": [[m.start_ds, m.end_ds] for m in session.markers],
        "label_offset_ds": session.markers[0].start_ds if session.markers else 0,
    }
    if extra:
        meta.update(extra)
    (path / "session.json").write_text(json.dumps(meta, indent=2), encoding="utf-8")
    return path


def read_session_archive(path: Path | str) -> Session:
    path = Path(path)
    meta = json.loads((path / "session.json").read_text(encoding="utf-8"))
    with open(path / "motion.csv", encoding="utf-8", newline="") as fh:
        samples = parse_motion_csv(fh)
    with open(path / "labels.jsonl", encoding="utf-8") as fh:
        events = read_labels_jsonl(fh)
    markers = [SyncMarker(int(a), int(b)) for a, b in meta.get("markers", [])]
    if not markers:
        markers = detect_sync_markers(samples)
    return align_session(samples, events, markers, int(meta["initial_state"]),
                         player_id=str(meta["player_id"]))
