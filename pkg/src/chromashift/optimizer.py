"""Power-minimizing illuminant traversals.

For a trajectory with fitted adaptation dynamics, the gap between the
illuminant and the adaptation state grows monotonically along a constant-
velocity ramp, so the fastest admissible traversal is the one whose gap
exactly meets the perceptual allowance at the deadline. Sweeping the
allowance yields Pareto curves per trajectory; sweeping the deadline too
yields sensitivity heatmaps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .adaptation import (
    AdaptationParams,
    MEASURED_PARAMS,
    MEASURED_TRAJECTORIES,
    Trajectory,
)
from .colorimetry import D65_UV, JND
from .power import ColorHistogram, DisplayPowerParams, illuminant_power, illuminant_validity


def gap_at(v: float, p: AdaptationParams, t) -> np.ndarray | float:
    """Distance between illuminant and adaptation state at time ``t`` of a
    constant-velocity ramp: v*((1-k2)*t + (k2/k1)*(1-exp(-k1*t))).

    Monotone non-decreasing in both ``t`` and ``v``.
    """
    t = np.asarray(t, dtype=np.float64)
    out = v * ((1.0 - p.k2) * t + (p.k2 / p.k1) * (1.0 - np.exp(-p.k1 * t)))
    return float(out) if out.ndim == 0 else out


def optimal_velocity(p: AdaptationParams, delta_t: float, t_max: float) -> float:
    """Fastest ramp speed whose gap stays within ``delta_t`` until ``t_max``.

    Written in the cancellation-free form delta_t / ((1-k2)*t + (k2/k1)*
    (1-exp(-k1*t))); by construction gap_at(v, p, t_max) == delta_t.
    """
    if delta_t < 0:
        raise ValueError("perceptual allowance must be non-negative")
    if t_max <= 0:
        raise ValueError("traversal deadline must be positive")
    if delta_t == 0.0:
        return 0.0
    denom = (1.0 - p.k2) * t_max + (p.k2 / p.k1) * (1.0 - math.exp(-p.k1 * t_max))
    return delta_t / denom


# ---------------------------------------------------------------------------
# Candidates and sweeps
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrajectoryCandidate:
    name: str
    trajectory: Trajectory
    params: AdaptationParams


DEFAULT_CANDIDATES: tuple[TrajectoryCandidate, ...] = tuple(
    TrajectoryCandidate(name, MEASURED_TRAJECTORIES[name], MEASURED_PARAMS[name])
    for name in ("daylight", "linear-1.470", "linear-1.863", "linear-2.256")
)


@dataclass(frozen=True)
class OptimizationConfig:
    t_max: float = 120.0
    delta_t: float = 5 * JND
    candidates: tuple[TrajectoryCandidate, ...] = DEFAULT_CANDIDATES

    def __post_init__(self):
        if self.t_max <= 0 or self.delta_t <= 0:
            raise ValueError("deadline and allowance must be positive")


@dataclass(frozen=True)
class ParetoPoint:
    trajectory: str
    delta_t: float
    v: float
    terminal_uv: np.ndarray
    relative_power: float
    saving: float
    truncated: bool = False


def _terminal_point(cand: TrajectoryCandidate, v: float, t_max: float):
    """Terminal chromaticity of a ramp, truncated to where the trajectory is
    defined and representable."""
    arc = v * t_max
    truncated = False
    limit = cand.trajectory.max_arc()
    if arc > limit:
        arc = limit
        truncated = True
    uv = cand.trajectory.point_at(arc)
    if not illuminant_validity(uv):
        lo, hi = 0.0, arc
        for _ in range(50):
            mid = 0.5 * (lo + hi)
            if illuminant_validity(cand.trajectory.point_at(mid)):
                lo = mid
            else:
                hi = mid
        arc, uv, truncated = lo, cand.trajectory.point_at(lo), True
    return arc, uv, truncated


def pareto_sweep(cfg: OptimizationConfig, delta_ts,
                 hist: ColorHistogram, dp: DisplayPowerParams
                 ) -> dict[str, list[ParetoPoint]]:
    """Power saving versus perceptual allowance for every candidate."""
    p_d65 = illuminant_power(D65_UV, hist, dp)
    out: dict[str, list[ParetoPoint]] = {}
    for cand in cfg.candidates:
        pts = []
        for dt in delta_ts:
            v = optimal_velocity(cand.params, float(dt), cfg.t_max)
            _, uv, truncated = _terminal_point(cand, v, cfg.t_max)
            rel = illuminant_power(uv, hist, dp) / p_d65
            pts.append(ParetoPoint(cand.name, float(dt), v, uv, rel,
                                   1.0 - rel, truncated))
        out[cand.name] = pts
    return out


@dataclass(frozen=True)
class SensitivityGrid:
    trajectory: str
    delta_ts: np.ndarray
    t_maxes: np.ndarray
    savings: np.ndarray  # (len(delta_ts), len(t_maxes))


def sensitivity_heatmap(cand: TrajectoryCandidate, delta_ts, t_maxes,
                        hist: ColorHistogram, dp: DisplayPowerParams) -> SensitivityGrid:
    """Savings as a function of both the allowance and the deadline."""
    delta_ts = np.asarray(delta_ts, dtype=np.float64)
    t_maxes = np.asarray(t_maxes, dtype=np.float64)
    p_d65 = illuminant_power(D65_UV, hist, dp)
    savings = np.empty((delta_ts.size, t_maxes.size))
    for i, dt in enumerate(delta_ts):
        for j, tm in enumerate(t_maxes):
            if dt == 0.0:
                savings[i, j] = 0.0
                continue
            v = optimal_velocity(cand.params, float(dt), float(tm))
            _, uv, _ = _terminal_point(cand, v, float(tm))
            savings[i, j] = 1.0 - illuminant_power(uv, hist, dp) / p_d65
    return SensitivityGrid(cand.name, delta_ts, t_maxes, savings)


@dataclass(frozen=True)
class TrajectoryChoice:
    candidate: TrajectoryCandidate
    v: float
    terminal_uv: np.ndarray
    saving: float
    truncated: bool


def select_trajectory(cfg: OptimizationConfig, hist: ColorHistogram,
                      dp: DisplayPowerParams) -> TrajectoryChoice:
    """Candidate whose optimal ramp ends at the cheapest illuminant; ties
    keep the earliest listed candidate."""
    if not cfg.candidates:
        raise ValueError("no candidate trajectories")
    p_d65 = illuminant_power(D65_UV, hist, dp)
    best: TrajectoryChoice | None = None
    for cand in cfg.candidates:
        v = optimal_velocity(cand.params, cfg.delta_t, cfg.t_max)
        _, uv, truncated = _terminal_point(cand, v, cfg.t_max)
        saving = 1.0 - illuminant_power(uv, hist, dp) / p_d65
        if best is None or saving > best.saving:
            best = TrajectoryChoice(cand, v, uv, saving, truncated)
    return best
