"""Demonstration corpus: data model, CSV ingestion, alignment, synthetic generation.

A demonstration is a time-stamped sequence of wrist position/velocity and
planar pelvis pose samples.  The 9-D output vector used everywhere downstream
is laid out as ``[wrist_pos (3), wrist_vel (3), pelvis_pose (3)]``.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DataError,
    EmptySet,
    InvalidAnchorTimes,
    MalformedHeader,
    NonFiniteValue,
    NonMonotonicTime,
)

CSV_HEADER = ("demo_id", "t", "wx", "wy", "wz", "wvx", "wvy", "wvz", "px", "py", "pphi")

OUTPUT_DIM = 9
WRIST_POS = slice(0, 3)
WRIST_VEL = slice(3, 6)
PELVIS_POSE = slice(6, 9)


def _check_finite(arr: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteValue(message=f"non-finite value in {what}")


@dataclass(frozen=True)
class DemoSample:
    """One time-stamped whole-body sample."""

    t: float
    wrist_pos: np.ndarray
    wrist_vel: np.ndarray
    pelvis_pose: np.ndarray

    def __post_init__(self):
        for name in ("wrist_pos", "wrist_vel", "pelvis_pose"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
            if getattr(self, name).shape != (3,):
                raise DataError(f"{name} must be a 3-vector")
            _check_finite(getattr(self, name), name)
        if not math.isfinite(self.t) or self.t < 0.0:
            raise DataError(f"sample time must be finite and non-negative, got {self.t}")
        phi = float(self.pelvis_pose[2])
        if not (-math.pi < phi <= math.pi):
            raise DataError(f"pelvis heading {phi} outside (-pi, pi]")

    def output(self) -> np.ndarray:
        return np.concatenate([self.wrist_pos, self.wrist_vel, self.pelvis_pose])


class Demonstration:
    """One trial, stored as channel arrays over a strictly increasing time base."""

    def __init__(self, t, wrist_pos, wrist_vel, pelvis_pose, source_id: str = ""):
        self.t = np.asarray(t, dtype=float)
        self.wrist_pos = np.asarray(wrist_pos, dtype=float)
        self.wrist_vel = np.asarray(wrist_vel, dtype=float)
        self.pelvis_pose = np.asarray(pelvis_pose, dtype=float)
        self.source_id = str(source_id)
        n = self.t.shape[0]
        if n < 2:
            raise DataError(f"demonstration {source_id!r} needs at least 2 samples, got {n}")
        for name in ("wrist_pos", "wrist_vel", "pelvis_pose"):
            if getattr(self, name).shape != (n, 3):
                raise DataError(f"{name} must have shape ({n}, 3)")
            _check_finite(getattr(self, name), name)
        _check_finite(self.t, "t")
        if self.t[0] < 0.0:
            raise DataError("sample times must be non-negative")
        if np.any(np.diff(self.t) <= 0.0):
            raise DataError(f"demonstration {source_id!r} has non-increasing timestamps")
        phi = self.pelvis_pose[:, 2]
        if np.any(phi <= -math.pi) or np.any(phi > math.pi):
            raise DataError("pelvis heading outside (-pi, pi]")
        for arr in (self.t, self.wrist_pos, self.wrist_vel, self.pelvis_pose):
            arr.setflags(write=False)

    @classmethod
    def from_samples(cls, samples: list[DemoSample], source_id: str = "") -> "Demonstration":
        return cls(
            [s.t for s in samples],
            [s.wrist_pos for s in samples],
            [s.wrist_vel for s in samples],
            [s.pelvis_pose for s in samples],
            source_id,
        )

    @property
    def n_samples(self) -> int:
        return self.t.shape[0]

    @property
    def duration(self) -> float:
        return float(self.t[-1] - self.t[0])

    def sample(self, i: int) -> DemoSample:
        return DemoSample(float(self.t[i]), self.wrist_pos[i], self.wrist_vel[i], self.pelvis_pose[i])

    def outputs(self) -> np.ndarray:
        """All samples stacked as an (N, 9) output matrix."""
        return np.hstack([self.wrist_pos, self.wrist_vel, self.pelvis_pose])


@dataclass
class DemoSet:
    """A collection of demonstrations, optionally aligned onto a common grid."""

    demos: list[Demonstration]
    n_resample: int | None = None
    duration: float | None = None

    @property
    def aligned(self) -> bool:
        return self.n_resample is not None

    @property
    def n_demos(self) -> int:
        return len(self.demos)

    def total_samples(self) -> int:
        return sum(d.n_samples for d in self.demos)


def load_csv(path) -> DemoSet:
    """Read a demonstration CSV.

    Schema: header ``demo_id,t,wx,wy,wz,wvx,wvy,wvz,px,py,pphi``; within one
    ``demo_id`` the rows must appear in strictly increasing time order.
    """
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise MalformedHeader(f"{path}: empty file") from None
        if tuple(h.strip() for h in header) != CSV_HEADER:
            raise MalformedHeader(f"{path}: expected header {','.join(CSV_HEADER)}, got {','.join(header)}")
        groups: dict[str, list[list[float]]] = {}
        for row_idx, row in enumerate(reader, start=1):
            if len(row) != len(CSV_HEADER):
                raise MalformedHeader(f"{path}: row {row_idx} has {len(row)} fields, expected {len(CSV_HEADER)}")
            demo_id = row[0]
            try:
                values = [float(v) for v in row[1:]]
            except ValueError:
                raise NonFiniteValue(row=row_idx) from None
            if not all(math.isfinite(v) for v in values):
                raise NonFiniteValue(row=row_idx)
            group = groups.setdefault(demo_id, [])
            if group and values[0] <= group[-1][0]:
                raise NonMonotonicTime(row=row_idx)
            group.append(values)
    demos = []
    for demo_id, rows in groups.items():
        arr = np.asarray(rows)
        demos.append(Demonstration(arr[:, 0], arr[:, 1:4], arr[:, 4:7], arr[:, 7:10], demo_id))
    return DemoSet(demos)


def save_csv(demo_set: DemoSet, path) -> None:
    """Write the canonical CSV form (shortest round-trip float formatting)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for demo in demo_set.demos:
            data = np.column_stack([demo.t, demo.wrist_pos, demo.wrist_vel, demo.pelvis_pose])
            for row in data:
                writer.writerow([demo.source_id] + [repr(float(v)) for v in row])


def align(demo_set: DemoSet, n_points: int) -> DemoSet:
    """Resample every demo onto a uniform grid of ``n_points`` over [0, T].

    T is the median demo duration; each demo's time axis is linearly rescaled
    onto [0, T] before interpolation.  Velocity channels are interpolated as
    stored, never re-differentiated.
    """
    if not demo_set.demos:
        raise EmptySet("cannot align an empty demo set")
    if n_points < 2:
        raise DataError(f"n_points must be >= 2, got {n_points}")
    durations = [d.duration for d in demo_set.demos]
    if min(durations) <= 0.0:
        raise DataError("every demo must have positive duration")
    target = float(np.median(durations))
    grid = np.linspace(0.0, target, n_points)
    resampled = []
    for demo in demo_set.demos:
        scaled_t = (demo.t - demo.t[0]) * (target / demo.duration)
        channels = demo.outputs()
        out = np.empty((n_points, OUTPUT_DIM))
        for j in range(OUTPUT_DIM):
            out[:, j] = np.interp(grid, scaled_t, channels[:, j])
        resampled.append(
            Demonstration(grid, out[:, WRIST_POS], out[:, WRIST_VEL], out[:, PELVIS_POSE], demo.source_id)
        )
    return DemoSet(resampled, n_resample=n_points, duration=target)


# ---------------------------------------------------------------------------
# Synthetic generation


@dataclass(frozen=True)
class DemoAnchor:
    """A waypoint the generated paths pass through exactly.

    ``hold_s`` is how long (seconds) the trial-to-trial noise stays suppressed
    around this anchor: short for a casually-chosen start pose, long for a
    rehearsed contact.
    """

    t: float
    wrist_pos: tuple[float, float, float]
    wrist_vel: tuple[float, float, float]
    pelvis_pose: tuple[float, float, float]
    hold_s: float = 0.5


@dataclass
class DemoGenConfig:
    """Synthetic-demonstration generator settings.

    ``noise_m`` scales a smooth per-demo perturbation that vanishes (value and
    slope) at every anchor, so anchors are hit exactly with the prescribed
    velocity in every trial.
    """

    anchors: list[DemoAnchor] = field(default_factory=lambda: list(DEFAULT_ANCHORS))
    noise_m: float = 0.02
    sample_hz: float = 100.0

    @classmethod
    def from_dict(cls, data: dict) -> "DemoGenConfig":
        anchors = [
            DemoAnchor(
                t=float(a["t"]),
                wrist_pos=tuple(float(v) for v in a["wrist_pos"]),
                wrist_vel=tuple(float(v) for v in a["wrist_vel"]),
                pelvis_pose=tuple(float(v) for v in a["pelvis_pose"]),
                hold_s=float(a.get("hold_s", 0.5)),
            )
            for a in data.get("anchors", [a.__dict__ for a in DEFAULT_ANCHORS])
        ]
        return cls(
            anchors=anchors,
            noise_m=float(data.get("noise_m", 0.02)),
            sample_hz=float(data.get("sample_hz", 100.0)),
        )

    @classmethod
    def from_json(cls, path) -> "DemoGenConfig":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


# Bottle pick-and-place task: start at rest, grasp on the move at 18.15 s,
# place and settle at 26 s.
DEFAULT_ANCHORS = (
    # Start pose is casual (subjects stand roughly in place), the grasp is a
    # rehearsed contact on a fixed bottle, the placement is deliberate.
    DemoAnchor(
        t=0.0,
        wrist_pos=(0.417, 0.062, 1.107),
        wrist_vel=(0.0, 0.0, 0.0),
        pelvis_pose=(-0.288, 0.263, 0.046),
        hold_s=0.2,
    ),
    DemoAnchor(
        t=18.15,
        wrist_pos=(3.687, 0.423, 0.812),
        wrist_vel=(0.056, 0.164, 0.072),
        pelvis_pose=(2.823, 0.427, 0.885),
        hold_s=2.5,
    ),
    DemoAnchor(
        t=26.0,
        wrist_pos=(3.73, 0.97, 0.862),
        wrist_vel=(0.0, 0.0, 0.0),
        pelvis_pose=(2.95, 0.75, 0.75),
        hold_s=0.75,
    ),
)

_N_HARMONICS = 3


def _quintic(p0, v0, p1, v1, h, tau):
    """Quintic Hermite segment with zero endpoint accelerations.

    Returns (value, d/dt value) at normalized times tau in [0, 1]; h is the
    segment duration in seconds.
    """
    t2 = tau * tau
    t3 = t2 * tau
    t4 = t3 * tau
    t5 = t4 * tau
    h00 = 1.0 - 10.0 * t3 + 15.0 * t4 - 6.0 * t5
    h01 = tau - 6.0 * t3 + 8.0 * t4 - 3.0 * t5
    h10 = 10.0 * t3 - 15.0 * t4 + 6.0 * t5
    h11 = -4.0 * t3 + 7.0 * t4 - 3.0 * t5
    d00 = (-30.0 * t2 + 60.0 * t3 - 30.0 * t4) / h
    d01 = (1.0 - 18.0 * t2 + 32.0 * t3 - 15.0 * t4) / h
    d10 = (30.0 * t2 - 60.0 * t3 + 30.0 * t4) / h
    d11 = (-12.0 * t2 + 28.0 * t3 - 15.0 * t4) / h
    value = p0 * h00 + v0 * h * h01 + p1 * h10 + v1 * h * h11
    deriv = p0 * d00 + v0 * h * d01 + p1 * d10 + v1 * h * d11
    return value, deriv


def _anchor_window(tau, rise_left, rise_right):
    """Plateau window: 0 with zero slope at both ends, 1 in the middle.

    Ramp lengths are in normalized segment time; short ramps mimic
    trial-to-trial variability that collapses only right at an anchor.
    """
    total = rise_left + rise_right
    if total > 1.0:
        rise_left, rise_right = rise_left / total, rise_right / total
    rise_left = max(rise_left, 1e-6)
    rise_right = max(rise_right, 1e-6)
    w = np.ones_like(tau)
    dw = np.zeros_like(tau)
    left = tau < rise_left
    x = tau[left] / rise_left
    w[left] = np.sin(0.5 * math.pi * x) ** 2
    dw[left] = (0.5 * math.pi / rise_left) * np.sin(math.pi * x)
    right = tau > 1.0 - rise_right
    x = (1.0 - tau[right]) / rise_right
    w[right] = np.sin(0.5 * math.pi * x) ** 2
    dw[right] = -(0.5 * math.pi / rise_right) * np.sin(math.pi * x)
    return w, dw


def _segment_noise(rng, noise_m, h, tau, hold_left_s, hold_right_s):
    """Smooth noise with zero value and slope at both segment ends."""
    amps = rng.normal(0.0, 1.0 / math.sqrt(_N_HARMONICS), size=_N_HARMONICS)
    phases = rng.uniform(0.0, 2.0 * math.pi, size=_N_HARMONICS)
    s = np.zeros_like(tau)
    ds = np.zeros_like(tau)
    for j in range(_N_HARMONICS):
        w = (j + 1) * math.pi
        s += amps[j] * np.sin(w * tau + phases[j])
        ds += amps[j] * w * np.cos(w * tau + phases[j])
    window, dwindow = _anchor_window(tau, hold_left_s / h, hold_right_s / h)
    value = noise_m * window * s
    deriv = noise_m * (dwindow * s + window * ds) / h
    return value, deriv


def _pelvis_anchor_velocities(anchors: list[DemoAnchor]) -> np.ndarray:
    """Pass-through velocities at interior anchors (central differences), zero at the ends."""
    poses = np.array([a.pelvis_pose for a in anchors])
    times = np.array([a.t for a in anchors])
    vel = np.zeros_like(poses)
    for i in range(1, len(anchors) - 1):
        vel[i] = (poses[i + 1] - poses[i - 1]) / (times[i + 1] - times[i - 1])
    return vel


def generate_synthetic(cfg: DemoGenConfig, n_demos: int, rng_seed: int) -> DemoSet:
    """Generate smooth wrist+pelvis trials through the configured anchors."""
    if n_demos < 1:
        raise DataError(f"n_demos must be >= 1, got {n_demos}")
    if len(cfg.anchors) < 2:
        raise InvalidAnchorTimes("need at least two anchors")
    times = np.array([a.t for a in cfg.anchors])
    if np.any(np.diff(times) <= 0.0):
        bad = int(np.flatnonzero(np.diff(times) <= 0.0)[0]) + 1
        raise InvalidAnchorTimes(f"anchor times must be strictly increasing (anchor {bad} at t={times[bad]})")
    if times[0] < 0.0:
        raise InvalidAnchorTimes("first anchor time must be non-negative")

    wrist_p = np.array([a.wrist_pos for a in cfg.anchors])
    wrist_v = np.array([a.wrist_vel for a in cfg.anchors])
    pelvis_p = np.array([a.pelvis_pose for a in cfg.anchors])
    pelvis_v = _pelvis_anchor_velocities(cfg.anchors)

    n_samples = int(round((times[-1] - times[0]) * cfg.sample_hz)) + 1
    t_grid = times[0] + np.arange(n_samples) / cfg.sample_hz
    t_grid[-1] = min(t_grid[-1], times[-1])
    seg_idx = np.clip(np.searchsorted(times, t_grid, side="right") - 1, 0, len(times) - 2)

    rng = np.random.default_rng(rng_seed)
    demos = []
    for d in range(n_demos):
        wpos = np.empty((n_samples, 3))
        wvel = np.empty((n_samples, 3))
        ppose = np.empty((n_samples, 3))
        for seg in range(len(times) - 1):
            mask = seg_idx == seg
            h = times[seg + 1] - times[seg]
            tau = (t_grid[mask] - times[seg]) / h
            hold_left = cfg.anchors[seg].hold_s
            hold_right = cfg.anchors[seg + 1].hold_s
            for axis in range(3):
                value, deriv = _quintic(wrist_p[seg, axis], wrist_v[seg, axis],
                                        wrist_p[seg + 1, axis], wrist_v[seg + 1, axis], h, tau)
                nval, nder = _segment_noise(rng, cfg.noise_m, h, tau, hold_left, hold_right)
                wpos[mask, axis] = value + nval
                wvel[mask, axis] = deriv + nder
            for axis in range(3):
                value, _ = _quintic(pelvis_p[seg, axis], pelvis_v[seg, axis],
                                    pelvis_p[seg + 1, axis], pelvis_v[seg + 1, axis], h, tau)
                nval, _ = _segment_noise(rng, cfg.noise_m, h, tau, hold_left, hold_right)
                ppose[mask, axis] = value + nval
        demos.append(Demonstration(t_grid, wpos, wvel, ppose, f"synthetic-{d:02d}"))
    return DemoSet(demos)
