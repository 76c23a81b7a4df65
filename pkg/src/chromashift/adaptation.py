"""Dynamics of the viewer's adaptation state under a moving illuminant.

The state is a u'v' chromaticity that relaxes toward a fraction of the
current illuminant's offset from the display white:

    da/dt = k1 * (k2 * (A(t) - d65) - (a(t) - d65))

applied component-wise to the offset from the white point. For the piecewise
triphasic program (ramp out, hold, jump back) the solution has a closed form;
a fixed-step RK4 integrator over arbitrary illuminant tracks serves as the
independent oracle everything is validated against.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .colorimetry import D65_UV, xyz_to_uv
from . import _kernels


@dataclass(frozen=True)
class AdaptationParams:
    """Adaptation rate (1/s) and completeness (fraction of the offset
    asymptotically adapted to)."""

    k1: float
    k2: float

    def __post_init__(self):
        if not self.k1 > 0:
            raise ValueError("adaptation rate k1 must be positive")
        if not 0.0 <= self.k2 <= 1.0:
            raise ValueError("adaptation completeness k2 must be in [0, 1]")


# ---------------------------------------------------------------------------
# Daylight locus
# ---------------------------------------------------------------------------

# Quadratic daylight locus in CIE xy (Judd's parameterization shared by the
# CIE D-series): y = 2.870 x - 3.000 x^2 - 0.275, with x spanned by the
# D-series correlated color temperature range 4000 K .. 25000 K.
_LOCUS_CCT_MIN = 4000.0
_LOCUS_CCT_MAX = 25000.0
# CCTs of the D-series anchor illuminants use the revised radiation constant.
_D65_CCT = 6500.0 * 1.4388 / 1.4380


def _daylight_x(cct: float) -> float:
    t = 1e3 / cct
    if 4000.0 <= cct <= 7000.0:
        return ((-4.6070 * t + 2.9678) * t + 0.09911) * t + 0.244063
    if 7000.0 < cct <= 25000.0:
        return ((-2.0064 * t + 1.9018) * t + 0.24748) * t + 0.237040
    raise ValueError("daylight series is defined for 4000 K to 25000 K")


def _daylight_xy(x: np.ndarray) -> np.ndarray:
    y = 2.870 * x - 3.000 * x * x - 0.275
    return np.stack([x, y], axis=-1)


def _xy_to_uv(xy: np.ndarray) -> np.ndarray:
    x, y = xy[..., 0], xy[..., 1]
    d = -2.0 * x + 12.0 * y + 3.0
    return np.stack([4.0 * x / d, 9.0 * y / d], axis=-1)


@lru_cache(maxsize=1)
def _locus_table():
    """Arc-length table of the daylight curve in u'v'.

    Positive arc runs toward warmer illuminants (decreasing CCT). The curve
    is rigidly translated by < 1.5e-4 so the 6504 K point coincides exactly
    with the display white, making it a valid trajectory origin.
    """
    n = 6001
    x_anchor = _daylight_x(_D65_CCT)
    x_warm = np.linspace(x_anchor, _daylight_x(_LOCUS_CCT_MIN), n)
    x_cool = np.linspace(x_anchor, _daylight_x(_LOCUS_CCT_MAX), n)
    shift = D65_UV - _xy_to_uv(_daylight_xy(np.array(x_anchor)))

    def arcs_of(xs):
        uv = _xy_to_uv(_daylight_xy(xs)) + shift
        seg = np.linalg.norm(np.diff(uv, axis=0), axis=1)
        return np.concatenate([[0.0], np.cumsum(seg)]), uv

    arc_w, uv_w = arcs_of(x_warm)
    arc_c, uv_c = arcs_of(x_cool)
    arcs = np.concatenate([-arc_c[::-1], arc_w[1:]])
    uvs = np.concatenate([uv_c[::-1], uv_w[1:]])
    return arcs, uvs


def daylight_locus_span() -> tuple[float, float]:
    """Signed arc-length range over which the daylight curve is defined."""
    arcs, _ = _locus_table()
    return float(arcs[0]), float(arcs[-1])


def daylight_locus(arc) -> np.ndarray:
    """Point on the daylight curve at signed arc length from the white point.

    Positive arcs move toward warmer (lower CCT) daylights. Raises if the
    requested arc leaves the curve's definition range.
    """
    arcs, uvs = _locus_table()
    a = np.asarray(arc, dtype=np.float64)
    if np.any(a < arcs[0]) or np.any(a > arcs[-1]):
        raise ValueError(
            f"arc outside the daylight series range [{arcs[0]:.6f}, {arcs[-1]:.6f}]"
        )
    u = np.interp(a, arcs, uvs[:, 0])
    v = np.interp(a, arcs, uvs[:, 1])
    return np.stack([u, v], axis=-1)


# ---------------------------------------------------------------------------
# Trajectories and schedules
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Trajectory:
    """Path of the illuminant through u'v', starting at the display white.

    Either a straight ray at angle ``phi`` (radians, 0 = +u' axis) or the
    daylight curve toward warmer illuminants.
    """

    kind: str  # "linear" | "daylight"
    phi: float | None = None

    def __post_init__(self):
        if self.kind == "linear":
            if self.phi is None:
                raise ValueError("linear trajectory needs an angle phi")
        elif self.kind == "daylight":
            if self.phi is not None:
                raise ValueError("daylight trajectory takes no angle")
        else:
            raise ValueError(f"unknown trajectory kind {self.kind!r}")

    @property
    def name(self) -> str:
        if self.kind == "daylight":
            return "daylight"
        return f"linear-{self.phi:.3f}"

    def max_arc(self) -> float:
        """Largest forward arc the trajectory is defined for."""
        if self.kind == "daylight":
            return daylight_locus_span()[1]
        return math.inf

    def point_at(self, arc) -> np.ndarray:
        """Chromaticity after traveling ``arc`` u'v' units along the path."""
        if self.kind == "daylight":
            return daylight_locus(arc)
        a = np.asarray(arc, dtype=np.float64)
        u = np.array([math.cos(self.phi), math.sin(self.phi)])
        return D65_UV + a[..., None] * u

    def direction(self, chord_arc: float) -> np.ndarray:
        """Unit vector from the white point toward the point at ``chord_arc``.

        For linear trajectories this is the ray direction; for the daylight
        curve it is the chord direction used by the scalar closed forms.
        """
        if self.kind == "linear":
            return np.array([math.cos(self.phi), math.sin(self.phi)])
        delta = daylight_locus(chord_arc) - D65_UV
        return delta / np.linalg.norm(delta)


def linear_trajectory(phi: float) -> Trajectory:
    return Trajectory("linear", phi)


def daylight_trajectory() -> Trajectory:
    return Trajectory("daylight")


# Population-level parameter fits shipped as defaults, one per trajectory
# measured by the pilot protocol.
MEASURED_PARAMS: dict[str, AdaptationParams] = {
    "daylight": AdaptationParams(0.127, 0.712),
    "linear-1.470": AdaptationParams(0.101, 0.685),
    "linear-1.863": AdaptationParams(0.107, 0.638),
    "linear-2.256": AdaptationParams(0.069, 0.707),
}

MEASURED_TRAJECTORIES: dict[str, Trajectory] = {
    "daylight": daylight_trajectory(),
    "linear-1.470": linear_trajectory(1.470),
    "linear-1.863": linear_trajectory(1.863),
    "linear-2.256": linear_trajectory(2.256),
}


@dataclass(frozen=True)
class TriphasicSchedule:
    """Measurement-stage illuminant program: ramp out at speed ``v`` until a
    distance ``D`` from white, hold for ``t1`` seconds, then jump back to the
    white point for ``t2`` seconds."""

    trajectory: Trajectory
    v: float          # u'v' distance per second
    D: float          # phase-1 traversal distance, u'v' units
    t1: float
    t2: float

    def __post_init__(self):
        if not self.v > 0:
            raise ValueError("traversal velocity must be positive")
        if not self.D > 0:
            raise ValueError("traversal distance must be positive")
        if self.t1 < 0 or self.t2 < 0:
            raise ValueError("hold and return durations must be non-negative")
        if self.D > self.trajectory.max_arc():
            raise ValueError("traversal distance exceeds the trajectory's range")

    @property
    def ramp_end(self) -> float:
        return self.D / self.v

    @property
    def hold_end(self) -> float:
        return self.ramp_end + self.t1

    @property
    def duration(self) -> float:
        return self.ramp_end + self.t1 + self.t2

    def direction(self) -> np.ndarray:
        return self.trajectory.direction(self.D)

    def to_json(self) -> str:
        doc = {"kind": self.trajectory.kind, "v": self.v, "D": self.D,
               "t1": self.t1, "t2": self.t2}
        if self.trajectory.kind == "linear":
            doc["phi"] = self.trajectory.phi
        return json.dumps(doc)

    @classmethod
    def from_json(cls, text: str) -> "TriphasicSchedule":
        doc = json.loads(text)
        traj = Trajectory(doc["kind"], doc.get("phi"))
        return cls(traj, doc["v"], doc["D"], doc["t1"], doc["t2"])


def illuminant_at(s: TriphasicSchedule, t) -> np.ndarray:
    """Scene illuminant of a triphasic schedule at time(s) ``t``."""
    ts = np.asarray(t, dtype=np.float64)
    if np.any(ts < 0) or np.any(ts > s.duration + 1e-9):
        raise ValueError(f"time outside the schedule range [0, {s.duration}]")
    arc = np.where(ts < s.ramp_end, s.v * ts, np.where(ts < s.hold_end, s.D, 0.0))
    return s.trajectory.point_at(arc)


def unit_offset(s: TriphasicSchedule, k1s, ts) -> np.ndarray:
    """Closed-form adaptation offset along the traversal per unit k2.

    The solution of the state equation is proportional to k2 in every phase,
    so the fit and the point evaluation share this (len(k1s), len(ts)) table.
    Phases 1 and 2 integrate the ramp and the hold; phase 3 is the
    continuity-matched exponential decay after the jump back to white.
    """
    k1s = np.atleast_1d(np.asarray(k1s, dtype=np.float64))[:, None]
    ts = np.atleast_1d(np.asarray(ts, dtype=np.float64))
    ramp, hold = s.ramp_end, s.hold_end
    out = np.empty((k1s.shape[0], ts.shape[0]))

    m1 = ts <= ramp
    m2 = (ts > ramp) & (ts <= hold)
    m3 = ts > hold
    # gap accumulated over the ramp, reached at its end
    ramp_rem = (s.v / k1s) * (1.0 - np.exp(-k1s * ramp))
    if m1.any():
        t1 = ts[m1]
        out[:, m1] = s.v * t1 - (s.v / k1s) * (1.0 - np.exp(-k1s * t1))
    if m2.any():
        out[:, m2] = s.D - ramp_rem * np.exp(-k1s * (ts[m2] - ramp))
    if m3.any():
        at_hold_end = s.D - ramp_rem * np.exp(-k1s * s.t1)
        out[:, m3] = at_hold_end * np.exp(-k1s * (ts[m3] - hold))
    return out


def adaptation_closed_form(s: TriphasicSchedule, p: AdaptationParams, t) -> np.ndarray:
    """Closed-form adaptation state at time(s) ``t`` under a triphasic program.

    The offset lives on the traversal chord; the daylight curve is treated as
    its chord here, with the curved-path discrepancy quantified against the
    ODE oracle rather than hidden.
    """
    ts = np.asarray(t, dtype=np.float64)
    if np.any(ts < 0) or np.any(ts > s.duration + 1e-9):
        raise ValueError(f"time outside the schedule range [0, {s.duration}]")
    h = unit_offset(s, [p.k1], np.atleast_1d(ts))[0]
    offsets = p.k2 * h
    uv = D65_UV + offsets[..., None] * s.direction()
    return uv.reshape(ts.shape + (2,))


def ramp_hold_unit_offset(v: float, t_ramp_end: float, k1s, ts) -> np.ndarray:
    """Closed-form unit-k2 offset for a deployment program (ramp then hold)."""
    k1s = np.atleast_1d(np.asarray(k1s, dtype=np.float64))[:, None]
    ts = np.atleast_1d(np.asarray(ts, dtype=np.float64))
    out = np.empty((k1s.shape[0], ts.shape[0]))
    m1 = ts <= t_ramp_end
    m2 = ~m1
    if m1.any():
        t1 = ts[m1]
        out[:, m1] = v * t1 - (v / k1s) * (1.0 - np.exp(-k1s * t1))
    if m2.any():
        end = v * t_ramp_end
        rem = (v / k1s) * (1.0 - np.exp(-k1s * t_ramp_end))
        out[:, m2] = end - rem * np.exp(-k1s * (ts[m2] - t_ramp_end))
    return out


# ---------------------------------------------------------------------------
# Numerical oracle
# ---------------------------------------------------------------------------

def adaptation_ode(a_fn, p: AdaptationParams, t_end: float, dt: float = 1e-3):
    """Integrate the adaptation state with fixed-step RK4.

    ``a_fn`` maps an array of times to illuminant chromaticities (n, 2);
    integration starts from the white point. Returns (times, states) with
    states as absolute u'v' positions. ``dt`` is the target step; the actual
    step divides ``t_end`` exactly.
    """
    if dt <= 0:
        raise ValueError("step size must be positive")
    if t_end <= 0:
        raise ValueError("end time must be positive")
    n = max(1, int(round(t_end / dt)))
    h = t_end / n
    times = np.arange(n + 1) * h
    mids = times[:-1] + 0.5 * h
    a_nodes = np.asarray(a_fn(times), dtype=np.float64) - D65_UV
    a_mids = np.asarray(a_fn(mids), dtype=np.float64) - D65_UV
    if not (np.all(np.isfinite(a_nodes)) and np.all(np.isfinite(a_mids))):
        raise ValueError("illuminant track contains non-finite samples")
    states = _kernels.rk4_relax(a_nodes, a_mids, p.k1, p.k2, h)
    return times, states + D65_UV
