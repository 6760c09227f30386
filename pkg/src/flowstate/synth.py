"""Synthetic two-player match generator with known flow/fall regimes.

Stands in for private match recordings. The flow signature is a synthetic
convention: under fall the rotation-rate noise is inflated by a factor of
``1 + (FALL_ROT_RATIO - 1) * delta`` and the stroke tempo becomes less
regular. At ``delta = 0`` the random draws do not depend on the regime at all.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import lfilter

from .session_io import (FALL, FLOW, N_CHANNELS, RAISE_DIRECTION, LabelEvent, Samples,
                         Source, SyncMarker, VALID_HIGH, VALID_LOW)

FALL_ROT_RATIO = 4.0
RAISE_DS = 30
RAMP_DS = 3
DEFAULT_RAISES = (50, 150)
STROKE_LEN = (3, 6)

_GRAV, _ACC, _ROT, _ATT = slice(0, 3), slice(3, 6), slice(6, 9), slice(9, 12)


@dataclass(frozen=True)
class PlayerProfile:
    signature_seed: int
    baseline_mean: tuple[float, ...]
    baseline_std: tuple[float, ...]
    stroke_rate: float = 20.0          # strokes per minute
    stroke_accel: float = 6.0          # peak m/s^2
    stroke_rot: float = 3.0            # peak rad/s

    def __post_init__(self):
        if len(self.baseline_mean) != N_CHANNELS or len(self.baseline_std) != N_CHANNELS:
            raise ValueError(f"profile needs {N_CHANNELS} baseline means and stds")
        if min(self.baseline_std) < 0:
            raise ValueError("baseline std must be >= 0")
        if self.stroke_rate <= 0:
            raise ValueError("stroke rate must be positive")

    @property
    def gravity_dir(self) -> np.ndarray:
        g = np.asarray(self.baseline_mean[_GRAV])
        return g / np.linalg.norm(g)


def make_profile(signature_seed: int, rot_level: float | None = None) -> PlayerProfile:
    """Derive a player's baseline pose, noise levels and stroke shape from a seed."""
    rng = np.random.default_rng([7919, signature_seed])
    # forearm pose well away from the raised-hand direction (gy >= -0.2)
    while True:
        g = rng.normal(size=3)
        g /= np.linalg.norm(g)
        if g[1] > -0.2:
            break
    mean = np.zeros(N_CHANNELS)
    mean[_GRAV] = g
    mean[_ACC] = rng.uniform(-0.3, 0.3, 3)
    mean[_ATT] = [rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0), rng.uniform(-0.8, 0.8)]
    if rot_level is None:
        rot_level = float(np.exp(rng.uniform(math.log(0.4), math.log(2.5))))
    std = np.zeros(N_CHANNELS)
    std[_GRAV] = 0.04
    std[_ACC] = rng.uniform(0.3, 0.6)
    std[_ROT] = rot_level
    std[_ATT] = rng.uniform(0.1, 0.2)
    return PlayerProfile(signature_seed, tuple(mean), tuple(std),
                         stroke_rate=float(rng.uniform(15, 25)),
                         stroke_accel=float(rng.uniform(4, 8)),
                         stroke_rot=float(rng.uniform(2, 4)))


def default_profiles() -> tuple[PlayerProfile, PlayerProfile]:
    """Two players whose rotation levels differ by exactly the fall ratio."""
    return make_profile(1, rot_level=1.0), make_profile(2, rot_level=FALL_ROT_RATIO)


@dataclass(frozen=True)
class RegimePlan:
    states: tuple[int, ...]
    durations: tuple[int, ...]
    target_flow_fraction: float = 0.5

    def __post_init__(self):
        if len(self.states) != len(self.durations) or not self.states:
            raise ValueError("plan needs matching, nonempty states and durations")
        if min(self.durations) < 1:
            raise ValueError("segment durations must be >= 1")
        if any(a == b for a, b in zip(self.states, self.states[1:])):
            raise ValueError("plan states must alternate")

    @property
    def duration(self) -> int:
        return int(sum(self.durations))

    @property
    def starts(self) -> np.ndarray:
        return np.concatenate(([0], np.cumsum(self.durations)[:-1])).astype(np.int64)

    def track(self) -> np.ndarray:
        return np.repeat(np.array(self.states, dtype=np.int8), self.durations)

    def flow_fraction(self) -> float:
        return float(sum(d for s, d in zip(self.states, self.durations) if s == FLOW)
                     / self.duration)


def _apportion(lengths: np.ndarray, total: int) -> np.ndarray:
    """Scale positive lengths to integers >= 1 summing to ``total`` (largest remainder)."""
    raw = lengths / lengths.sum() * total
    out = np.maximum(np.floor(raw).astype(np.int64), 1)
    short = total - out.sum()
    order = np.argsort(-(raw - np.floor(raw)), kind="stable")
    k = 0
    while short > 0:
        out[order[k % len(out)]] += 1
        short -= 1
        k += 1
    while short < 0:
        i = int(np.argmax(out))
        out[i] -= 1
        short += 1
    return out


def gen_regime_plan(duration_ds: int, mean_dwell_ds: float, target_flow_fraction: float,
                    seed: int = 0) -> RegimePlan:
    """Alternating flow/fall segments with exponential-like dwell times.

    Flow and fall segment lengths are rescaled as groups so the realized
    flow fraction equals the target up to integer rounding.
    """
    if not 0.0 < target_flow_fraction < 1.0:
        raise ValueError("target flow fraction must lie strictly between 0 and 1")
    if duration_ds < mean_dwell_ds or mean_dwell_ds <= 0:
        raise ValueError("duration must be at least the mean dwell")
    n_flow = int(round(target_flow_fraction * duration_ds))
    if n_flow < 1 or n_flow > duration_ds - 1:
        raise ValueError("target flow fraction infeasible for this duration")
    rng = np.random.default_rng(seed)
    state = FLOW if rng.random() < 0.5 else FALL
    means = {FLOW: 2 * mean_dwell_ds * target_flow_fraction,
             FALL: 2 * mean_dwell_ds * (1 - target_flow_fraction)}
    states, lengths, total = [], [], 0.0
    while total < duration_ds or len(states) < 2:
        d = max(1.0, rng.exponential(means[state]))
        states.append(state)
        lengths.append(d)
        total += d
        state = -state
    states_a = np.array(states)
    lengths_a = np.array(lengths)
    flow = states_a == FLOW
    ints = np.empty(len(states), dtype=np.int64)
    ints[flow] = _apportion(lengths_a[flow], n_flow)
    ints[~flow] = _apportion(lengths_a[~flow], duration_ds - n_flow)
    return RegimePlan(tuple(int(s) for s in states), tuple(int(d) for d in ints),
                      target_flow_fraction)


@dataclass
class SynthSession:
    player_id: str
    samples: Samples
    events: list[LabelEvent]
    markers: list[SyncMarker]
    plan: RegimePlan
    initial_state: int
    delta: float
    truth: np.ndarray = field(repr=False, default=None)   # per-sample state

    def truth_json(self) -> dict:
        return {"player_id": self.player_id, "delta": self.delta,
                "initial_state": self.initial_state,
                "markers": [[m.start_ds, m.end_ds] for m in self.markers],
                "plan": {"states": list(self.plan.states),
                         "durations": list(self.plan.durations),
                         "target_flow_fraction": self.plan.target_flow_fraction}}


def _ar1(noise: np.ndarray, phi: float) -> np.ndarray:
    """Unit-variance AR(1) filter along axis 0."""
    return lfilter([math.sqrt(1 - phi * phi)], [1.0, -phi], noise, axis=0)


def _stroke_shape(length: int) -> np.ndarray:
    return np.sin(np.pi * (np.arange(length) + 0.5) / length)


def gen_session(profile: PlayerProfile, plan: RegimePlan, delta: float, seed: int = 0,
                raise_starts: tuple[int, int] = DEFAULT_RAISES,
                player_id: str = "P1") -> SynthSession:
    """Generate one player's 10 Hz stream, coach events and true sync markers.

    Label events are on the coach clock, whose origin is the start of the
    first raised-hand marker.
    """
    if not 0.0 <= delta <= 1.0:
        raise ValueError("delta must lie in [0, 1]")
    n = plan.duration
    r1, r2 = raise_starts
    if not (RAMP_DS <= r1 and r1 + RAISE_DS + 2 * RAMP_DS <= r2 and r2 + RAISE_DS + RAMP_DS < n):
        raise ValueError("raise markers do not fit in the session")
    rng = np.random.default_rng([seed, profile.signature_seed])
    state = plan.track()
    mean = np.asarray(profile.baseline_mean)
    std = np.asarray(profile.baseline_std)

    # regime-independent draws first, so delta = 0 ignores the plan entirely
    e_grav = _ar1(rng.standard_normal((n, 3)), 0.95)
    e_acc = _ar1(rng.standard_normal((n, 3)), 0.5)
    e_rot = _ar1(rng.standard_normal((n, 3)), 0.3)
    e_att = _ar1(rng.standard_normal((n, 3)), 0.98)
    e_norm = rng.uniform(-0.03, 0.03, n)

    values = np.empty((n, N_CHANNELS))
    fall = state == FALL
    rot_scale = np.where(fall, 1.0 + (FALL_ROT_RATIO - 1.0) * delta, 1.0)
    values[:, _ACC] = mean[_ACC] + std[_ACC] * e_acc
    values[:, _ROT] = mean[_ROT] + (std[_ROT] * e_rot) * rot_scale[:, None]
    values[:, _ATT] = mean[_ATT] + std[_ATT] * e_att

    # strokes: half-sine bursts after the sync protocol
    period = 600.0 / profile.stroke_rate
    t = r2 + RAISE_DS + RAMP_DS + 20 + rng.uniform(0, period)
    swing = np.zeros((n, 3))
    while True:
        z = rng.standard_normal()
        length = int(rng.integers(STROKE_LEN[0], STROKE_LEN[1] + 1))
        amp = 1.0 + 0.2 * rng.standard_normal(2)
        d_acc = rng.normal(size=3)
        d_rot = rng.normal(size=3)
        d_acc /= np.linalg.norm(d_acc)
        d_rot /= np.linalg.norm(d_rot)
        start = int(t)
        if start + length > n:
            break
        shape = _stroke_shape(length)
        values[start:start + length, _ACC] += np.outer(shape, d_acc) * profile.stroke_accel * amp[0]
        values[start:start + length, _ROT] += np.outer(shape, d_rot) * profile.stroke_rot * amp[1]
        swing[start:start + length] += np.outer(shape, d_rot) * 0.15
        jitter = 0.1 + (0.4 * delta if state[start] == FALL else 0.0)
        t += max(8.0, period * (1.0 + jitter * z))

    g = profile.gravity_dir + std[_GRAV] * e_grav + swing
    up = np.asarray(RAISE_DIRECTION)
    g_raise = up + 0.03 * e_grav
    weight = np.zeros(n)
    for r in (r1, r2):
        weight[r:r + RAISE_DS] = 1.0
        ramp = (np.arange(1, RAMP_DS + 1)) / (RAMP_DS + 1)
        weight[r - RAMP_DS:r] = ramp
        weight[r + RAISE_DS:r + RAISE_DS + RAMP_DS] = ramp[::-1]
        # standing still: no stroke noise during the protocol
        quiet = slice(r - RAMP_DS, r + RAISE_DS + RAMP_DS)
        values[quiet, _ROT] = mean[_ROT] + 0.05 * e_rot[quiet]
        values[quiet, _ACC] = mean[_ACC] + 0.05 * e_acc[quiet]
    g = (1 - weight)[:, None] * g + weight[:, None] * g_raise
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    values[:, _GRAV] = g * (1.0 + e_norm)[:, None]

    # keep everything inside the validation envelope (gravity norm stays in [0.95, 1.05])
    values = np.clip(values, VALID_LOW * 0.97, VALID_HIGH * 0.97)
    values[:, _GRAV] = np.clip(g * (1.0 + e_norm)[:, None], -1.0, 1.0)

    samples = Samples(np.arange(n, dtype=np.int64), values)
    starts = plan.starts
    events = [LabelEvent(int(s) - r1, int(st), Source.APP)
              for s, st in zip(starts[1:], plan.states[1:])]
    markers = [SyncMarker(r1, r1 + RAISE_DS), SyncMarker(r2, r2 + RAISE_DS)]
    return SynthSession(player_id, samples, events, markers, plan, int(plan.states[0]),
                        float(delta), state)


def gen_match(duration_ds: int = 44_520, delta: float = 1.0, seed: int = 0,
              mean_dwell_ds: float = 1200.0, flow_fractions=(0.5111, 0.4995),
              profiles: tuple[PlayerProfile, PlayerProfile] | None = None,
              ) -> tuple[SynthSession, SynthSession]:
    """Two players, each with an independent regime plan."""
    profiles = profiles or default_profiles()
    out = []
    for k, (prof, frac) in enumerate(zip(profiles, flow_fractions), start=1):
        plan = gen_regime_plan(duration_ds, mean_dwell_ds, frac, seed=seed * 1000 + k)
        out.append(gen_session(prof, plan, delta, seed=seed * 1000 + k, player_id=f"P{k}"))
    return out[0], out[1]
