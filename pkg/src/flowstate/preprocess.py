"""Cleaning chain (dedup -> smooth -> scale) and 10x12 window extraction."""

from __future__ import annotations

import logging
import math
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DataError, InsufficientDataError, OrderingError
from .session_io import CHANNEL_NAMES, FLOW, N_CHANNELS, LabelTrack, Samples, Session

log = logging.getLogger(__name__)

SMOOTH_WIDTH = 5
WINDOW_LEN = 10


@dataclass(frozen=True, eq=False)
class ChannelRanges:
    low: np.ndarray
    high: np.ndarray

    def __post_init__(self):
        low = np.asarray(self.low, dtype=np.float64)
        high = np.asarray(self.high, dtype=np.float64)
        if low.shape != (N_CHANNELS,) or high.shape != (N_CHANNELS,):
            raise ValueError(f"ranges need {N_CHANNELS} channels")
        if not np.all(low < high):
            bad = CHANNEL_NAMES[int(np.flatnonzero(~(low < high))[0])]
            raise ValueError(f"empty range for {bad}")
        object.__setattr__(self, "low", low)
        object.__setattr__(self, "high", high)

    @classmethod
    def from_data(cls, samples: Samples) -> "ChannelRanges":
        """Observed per-channel min/max; constant channels get a unit span."""
        lo = samples.values.min(axis=0)
        hi = samples.values.max(axis=0)
        flat = hi <= lo
        return cls(np.where(flat, lo - 0.5, lo), np.where(flat, hi + 0.5, hi))


SENSOR_RANGES = ChannelRanges(
    low=np.array([-1.0, -1.0, -1.0,
                  -17.1031, -16.2396, -16.3296,
                  -26.3145, -39.8416, -35.2566,
                  -math.pi, -math.pi, -math.pi / 2]),
    high=np.array([1.0, 1.0, 1.0,
                   7.0596, 16.6477, 16.8778,
                   40.8265, 32.0937, 25.3197,
                   math.pi, math.pi, math.pi / 2]),
)


def dedup(samples: Samples) -> Samples:
    """Keep the first row of every run of identical timestamps."""
    t = samples.t_ds
    if len(t) == 0:
        return samples
    d = np.diff(t)
    if np.any(d < 0):
        raise OrderingError("samples are not time-sorted", row=int(np.flatnonzero(d < 0)[0]) + 2)
    keep = np.concatenate(([True], d > 0))
    if keep.all():
        return samples
    return Samples(t[keep], samples.values[keep])


def smooth(samples: Samples, w: int = SMOOTH_WIDTH) -> Samples:
    """Trailing moving average, valid mode: N samples in, N - w + 1 out.

    Each output carries the timestamp of the last sample in its window.
    """
    n = len(samples)
    if w < 1:
        raise ValueError("window width must be >= 1")
    if n < w:
        raise InsufficientDataError(f"need at least {w} samples to smooth, got {n}")
    means = sliding_window_view(samples.values, w, axis=0).mean(axis=-1)
    return Samples(samples.t_ds[w - 1:], means)


def scale(samples: Samples, ranges: ChannelRanges = SENSOR_RANGES) -> tuple[Samples, int]:
    """Map each channel affinely from ``[low, high]`` onto ``[-1, 1]``.

    Out-of-range values are clamped; the clamp count is returned alongside
    the scaled samples.
    """
    z = 2.0 * (samples.values - ranges.low) / (ranges.high - ranges.low) - 1.0
    out = (z < -1.0) | (z > 1.0)
    n_clamped = int(out.sum())
    if n_clamped:
        log.info("scale: clamped %d value(s) to [-1, 1]", n_clamped)
        z = np.clip(z, -1.0, 1.0)
    return samples.with_values(z), n_clamped


def unscale(samples: Samples, ranges: ChannelRanges = SENSOR_RANGES) -> Samples:
    return samples.with_values((samples.values + 1.0) * (ranges.high - ranges.low) / 2.0
                               + ranges.low)


def preprocess_samples(samples: Samples, ranges: ChannelRanges | None = SENSOR_RANGES,
                       w: int = SMOOTH_WIDTH) -> Samples:
    """dedup -> smooth -> scale. ``ranges=None`` derives ranges from the data."""
    s = smooth(dedup(samples), w)
    if ranges is None:
        ranges = ChannelRanges.from_data(s)
    scaled, _ = scale(s, ranges)
    return scaled


def preprocess_session(session: Session, ranges: ChannelRanges | None = SENSOR_RANGES,
                       w: int = SMOOTH_WIDTH) -> Session:
    return Session(session.player_id, preprocess_samples(session.samples, ranges, w),
                   session.labels, session.markers, session.initial_state)


def trim_to_match(session: Session, margin_ds: int = 0) -> Session:
    """Drop the pre-match sync period (everything before the last marker ends)."""
    if not session.markers:
        return session
    start = max(m.end_ds for m in session.markers) + margin_ds
    keep = session.samples.t_ds >= start
    return Session(session.player_id, Samples(session.samples.t_ds[keep],
                                              session.samples.values[keep]),
                   session.labels, session.markers, session.initial_state)


def player_code(player_id: str) -> int:
    m = re.search(r"(\d+)$", str(player_id))
    return int(m.group(1)) if m else 0


@dataclass(frozen=True, eq=False)
class Window:
    values: np.ndarray
    label: int
    t_end_ds: int
    player: int = 0


@dataclass(frozen=True, eq=False)
class WindowSet:
    """A block of labeled windows: ``values`` is ``(N, len, 12)``."""

    values: np.ndarray
    labels: np.ndarray
    t_end_ds: np.ndarray
    player: np.ndarray

    def __post_init__(self):
        n = len(self.values)
        if self.values.ndim != 3 or self.values.shape[2] != N_CHANNELS:
            raise ValueError(f"window values must be (N, T, {N_CHANNELS})")
        for name in ("labels", "t_end_ds", "player"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"{name} length mismatch")
        object.__setattr__(self, "labels", np.asarray(self.labels, dtype=np.int8))
        object.__setattr__(self, "t_end_ds", np.asarray(self.t_end_ds, dtype=np.int64))
        object.__setattr__(self, "player", np.asarray(self.player, dtype=np.int64))

    def __len__(self) -> int:
        return len(self.values)

    def __getitem__(self, i):
        if isinstance(i, (int, np.integer)):
            return Window(self.values[i], int(self.labels[i]), int(self.t_end_ds[i]),
                          int(self.player[i]))
        return WindowSet(self.values[i], self.labels[i], self.t_end_ds[i], self.player[i])

    @property
    def class_counts(self) -> tuple[int, int]:
        n_flow = int(np.sum(self.labels == FLOW))
        return n_flow, len(self) - n_flow

    @property
    def flat(self) -> np.ndarray:
        return self.values.reshape(len(self), -1)

    def with_labels(self, labels: np.ndarray) -> "WindowSet":
        return WindowSet(self.values, labels, self.t_end_ds, self.player)

    @staticmethod
    def concat(parts) -> "WindowSet":
        parts = list(parts)
        return WindowSet(np.concatenate([p.values for p in parts]),
                         np.concatenate([p.labels for p in parts]),
                         np.concatenate([p.t_end_ds for p in parts]),
                         np.concatenate([p.player for p in parts]))


def make_windows(session: Session, length: int = WINDOW_LEN, stride: int = 1) -> WindowSet:
    """Overlapping windows labeled by the track value at their last step."""
    n = len(session.samples)
    if n < length:
        raise InsufficientDataError(f"need at least {length} samples for a window, got {n}")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    v = sliding_window_view(session.samples.values, length, axis=0)  # (N-len+1, 12, len)
    v = np.ascontiguousarray(v.transpose(0, 2, 1)[::stride])
    t_end = session.samples.t_ds[length - 1:][::stride]
    labels = session.labels.at(t_end)
    player = np.full(len(t_end), player_code(session.player_id), dtype=np.int64)
    return WindowSet(v, labels, t_end, player)


# -- window files -------------------------------------------------------------------
# Binary form: .npy float64 array (N, T*12 + 3); columns are the row-major
# (time, channel) window values followed by label, t_end_ds, player code.
# A .csv with the same columns and a header is also accepted.

def _to_matrix(ws: WindowSet) -> np.ndarray:
    return np.column_stack([ws.flat, ws.labels, ws.t_end_ds, ws.player]).astype(np.float64)


def _from_matrix(m: np.ndarray, length: int = WINDOW_LEN) -> WindowSet:
    if m.ndim != 2 or m.shape[1] != length * N_CHANNELS + 3:
        raise DataError(f"window file must have {length * N_CHANNELS + 3} columns")
    return WindowSet(m[:, :-3].reshape(len(m), length, N_CHANNELS),
                     m[:, -3].astype(np.int8), m[:, -2].astype(np.int64),
                     m[:, -1].astype(np.int64))


def save_windows(path: Path | str, ws: WindowSet) -> Path:
    path = Path(path)
    m = _to_matrix(ws)
    if path.suffix == ".csv":
        t = ws.values.shape[1]
        header = [f"v{i}_{j}" for i in range(t) for j in range(N_CHANNELS)]
        header += ["label", "t_end_ds", "player"]
        np.savetxt(path, m, delimiter=",", header=",".join(header), comments="", fmt="%.17g")
    else:
        with open(path, "wb") as fh:
            np.save(fh, m.astype("<f8"))
    return path


def load_windows(path: Path | str, length: int = WINDOW_LEN) -> WindowSet:
    path = Path(path)
    if path.suffix == ".csv":
        m = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    else:
        m = np.load(path)
    return _from_matrix(m, length)
