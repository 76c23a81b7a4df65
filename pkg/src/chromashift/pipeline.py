"""Deployment side: per-frame illuminant schedules applied to image sequences.

A director evaluates the illuminant for every frame time (ramp along the
chosen trajectory, then hold); the per-frame transform is one 3x3 matrix in
linear sRGB. Frame reports carry estimated power and gamut-clip statistics.
A feedback variant retargets dynamically lit content while bounding the
appearance deviation per sample.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .adaptation import (
    AdaptationParams,
    Trajectory,
    adaptation_ode,
    ramp_hold_unit_offset,
)
from .colorimetry import (
    D65_UV,
    apply_cat,
    cat_between_uv,
    cat_from_d65,
    rgb_to_xyz,
    srgb_decode,
    srgb_encode,
    uv_to_xyz,
    xyz_to_rgb,
    xyz_to_uv,
)
from .power import DisplayPowerParams, pixel_power

CLIP_POLICIES = ("clamp", "project")


@dataclass(frozen=True)
class DeploymentSchedule:
    """Ramp from the display white along a trajectory for ``t_max`` seconds,
    then hold the terminal illuminant for the rest of the session."""

    trajectory: Trajectory
    v: float
    t_max: float

    def __post_init__(self):
        if self.v < 0:
            raise ValueError("traversal velocity must be non-negative")
        if self.t_max <= 0:
            raise ValueError("ramp duration must be positive")
        if self.v * self.t_max > self.trajectory.max_arc():
            raise ValueError("terminal point lies beyond the trajectory's range")

    @property
    def terminal_uv(self) -> np.ndarray:
        return self.trajectory.point_at(self.v * self.t_max)

    def illuminant_uv(self, t: float) -> np.ndarray:
        if t < 0:
            raise ValueError("time must be non-negative")
        return self.trajectory.point_at(self.v * min(t, self.t_max))

    def to_json(self) -> str:
        doc = {"kind": self.trajectory.kind, "v": self.v, "t_max": self.t_max}
        if self.trajectory.kind == "linear":
            doc["phi"] = self.trajectory.phi
        return json.dumps(doc)

    @classmethod
    def from_json(cls, text: str) -> "DeploymentSchedule":
        doc = json.loads(text)
        return cls(Trajectory(doc["kind"], doc.get("phi")), doc["v"], doc["t_max"])


def frame_cat(s: DeploymentSchedule, t: float) -> np.ndarray:
    """Adaptation matrix for the frame at time ``t``: display white to the
    schedule's illuminant, constant once the ramp ends."""
    return cat_from_d65(s.illuminant_uv(t))


# ---------------------------------------------------------------------------
# Image transform
# ---------------------------------------------------------------------------

def _project_into_gamut(linear: np.ndarray, white_rgb: np.ndarray) -> np.ndarray:
    """Blend out-of-gamut pixels toward the neutral axis of the shifted white
    at each pixel's own luminance, falling back to a clamp."""
    y_pix = rgb_to_xyz(linear)[..., 1]
    y_white = rgb_to_xyz(white_rgb)[1]
    neutral = y_pix[..., None] * (white_rgb / y_white)
    lam = np.zeros(linear.shape[:-1])
    for hi, bound in ((True, 1.0), (False, 0.0)):
        viol = linear > bound if hi else linear < bound
        denom = linear - neutral
        with np.errstate(divide="ignore", invalid="ignore"):
            need = (linear - bound) / denom
        need = np.where(viol & np.isfinite(need), need, 0.0)
        lam = np.maximum(lam, need.max(axis=-1))
    lam = np.clip(lam, 0.0, 1.0)[..., None]
    return np.clip((1.0 - lam) * linear + lam * neutral, 0.0, 1.0)


def shift_linear(linear: np.ndarray, m: np.ndarray, clip: str = "clamp"):
    """Apply an adaptation matrix to linear pixels and bring the result into
    gamut. Returns (pixels, fraction of pixels the policy had to alter)."""
    if clip not in CLIP_POLICIES:
        raise ValueError(f"clip policy must be one of {CLIP_POLICIES}")
    shifted = apply_cat(linear, m)
    out_of_gamut = np.any((shifted < 0.0) | (shifted > 1.0), axis=-1)
    frac = float(out_of_gamut.mean()) if shifted.size else 0.0
    if clip == "clamp":
        return np.clip(shifted, 0.0, 1.0), frac
    return _project_into_gamut(shifted, apply_cat(np.ones(3), m)), frac


def apply_shift_image(img: np.ndarray, m: np.ndarray, clip: str = "clamp") -> np.ndarray:
    """Decode an 8-bit sRGB image, shift it, and re-encode."""
    linear = srgb_decode(np.asarray(img, dtype=np.float64))
    shifted, _ = shift_linear(linear, m, clip)
    return srgb_encode(shifted)


def apply_dimming(img: np.ndarray, factor: float) -> np.ndarray:
    """Uniform luminance scaling in linear light; the trivial comparison
    transform for dimming-style baselines."""
    if not 0.0 <= factor <= 1.0:
        raise ValueError("dimming factor must be in [0, 1]")
    return srgb_encode(srgb_decode(np.asarray(img, dtype=np.float64)) * factor)


# ---------------------------------------------------------------------------
# Frame sequences
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FrameReport:
    index: int
    time: float
    illuminant_uv: tuple[float, float]
    power: float
    clip_fraction: float


def save_frame_reports(path, reports: list[FrameReport]) -> None:
    with open(path, "w") as f:
        f.write("frame,time,u,v,power,clip_fraction\n")
        for r in reports:
            f.write(f"{r.index},{r.time!r},{r.illuminant_uv[0]!r},"
                    f"{r.illuminant_uv[1]!r},{r.power!r},{r.clip_fraction!r}\n")


def _check_frame_numbering(paths: list[Path]) -> None:
    nums = []
    for p in paths:
        found = re.findall(r"\d+", p.stem)
        if not found:
            return  # not numbered; sorted order is authoritative
        nums.append(int(found[-1]))
    expected = range(min(nums), min(nums) + len(nums))
    missing = sorted(set(expected) - set(nums))
    if missing:
        raise ValueError(f"missing frames: {missing}")


def process_sequence(in_dir, out_dir, s: DeploymentSchedule, fps: float,
                     dp: DisplayPowerParams, clip: str = "clamp") -> list[FrameReport]:
    """Shift every frame of an image sequence along the schedule.

    Frame k (sorted order) renders at t = k / fps. Reported power is the
    density-weighted mean pixel power of the transformed frame before 8-bit
    re-encoding; cumulative energy is sum(power) / fps.
    """
    if fps <= 0:
        raise ValueError("fps must be positive")
    in_dir, out_dir = Path(in_dir), Path(out_dir)
    paths = sorted(p for p in in_dir.iterdir()
                   if p.suffix.lower() in {".png", ".ppm", ".bmp", ".jpg", ".jpeg"})
    if not paths:
        raise ValueError(f"no frames in {in_dir}")
    _check_frame_numbering(paths)
    out_dir.mkdir(parents=True, exist_ok=True)

    reports = []
    for k, p in enumerate(paths):
        t = k / fps
        with Image.open(p) as im:
            img = np.asarray(im.convert("RGB"))
        m = frame_cat(s, t)
        linear = srgb_decode(img.astype(np.float64))
        shifted, frac = shift_linear(linear, m, clip)
        Image.fromarray(srgb_encode(shifted)).save(out_dir / p.name)
        power = float(np.mean(pixel_power(shifted.reshape(-1, 3), dp)))
        uv = s.illuminant_uv(t)
        reports.append(FrameReport(k, t, (float(uv[0]), float(uv[1])), power, frac))
    return reports


def cumulative_energy(reports: list[FrameReport], fps: float) -> float:
    return sum(r.power for r in reports) / fps


def gray_world_illuminant(img: np.ndarray) -> np.ndarray:
    """Chromaticity of the mean linear color of an image."""
    linear = srgb_decode(np.asarray(img, dtype=np.float64).reshape(-1, 3))
    mean = linear.mean(axis=0)
    if np.all(mean <= 0):
        raise ValueError("cannot estimate an illuminant from an all-black image")
    return xyz_to_uv(rgb_to_xyz(mean))


# ---------------------------------------------------------------------------
# Dynamic-lighting retargeting
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DynamicScheduleResult:
    times: np.ndarray
    illuminant: np.ndarray        # emitted A(t), (n, 2)
    appearance_target: np.ndarray  # A*(t), (n, 2)
    clamped: np.ndarray           # bool per sample


def dynamic_target(a_o_times, a_o_uvs, p: AdaptationParams, delta_d: float,
                   base: DeploymentSchedule, sample_hz: float = 10.0
                   ) -> DynamicScheduleResult:
    """Retarget a dynamically lit sequence while bounding appearance change.

    ``a_o_times``/``a_o_uvs`` sample the original content's illuminant. At
    each output sample the appearance-preserving illuminant A* maps the
    original illuminant through the adaptation transform between the two
    predicted states (original viewer vs. shifted viewer). The emitted
    illuminant offsets A* along the base schedule's traversal by the static
    gap profile, clamped so |A - A*| <= delta_d everywhere; the state of the
    shifted viewer is advanced with the ODE oracle on the emitted track
    (sample-and-hold between outputs). With static content this reproduces
    the base schedule.
    """
    if delta_d < 0:
        raise ValueError("appearance allowance must be non-negative")
    a_o_times = np.asarray(a_o_times, dtype=np.float64)
    a_o_uvs = np.asarray(a_o_uvs, dtype=np.float64)
    if not (np.all(np.isfinite(a_o_times)) and np.all(np.isfinite(a_o_uvs))):
        raise ValueError("illuminant track contains non-finite samples")
    t_end = float(a_o_times[-1])
    h = 1.0 / sample_hz
    n = max(1, int(round(t_end * sample_hz)))
    times = np.arange(n + 1) * h

    def a_o_fn(ts):
        u = np.interp(ts, a_o_times, a_o_uvs[:, 0])
        v = np.interp(ts, a_o_times, a_o_uvs[:, 1])
        return np.stack([u, v], axis=-1)

    _, a_o_state = adaptation_ode(a_o_fn, p, t_end if t_end > 0 else h, dt=h)
    a_o_state = a_o_state[: n + 1]
    a_o_track = a_o_fn(times)

    direction = base.trajectory.direction(max(base.v * base.t_max, 1e-9)) \
        if base.v > 0 else np.array([1.0, 0.0])
    gaps = (base.v * np.minimum(times, base.t_max)
            - p.k2 * ramp_hold_unit_offset(base.v, base.t_max, [p.k1], times)[0])

    emitted = np.empty((n + 1, 2))
    target = np.empty((n + 1, 2))
    clamped = np.zeros(n + 1, dtype=bool)
    a_state = np.zeros(2)  # offset from white
    y = 1.0
    for i in range(n + 1):
        m = cat_between_uv(a_o_state[i], D65_UV + a_state, y)
        rgb_o = xyz_to_rgb(uv_to_xyz(a_o_track[i], y))
        a_star = xyz_to_uv(rgb_to_xyz(apply_cat(rgb_o, m)))
        prop = a_star + gaps[i] * direction
        delta = prop - a_star
        dist = float(np.linalg.norm(delta))
        if dist > delta_d * (1.0 + 1e-12):
            prop = a_star + (delta_d / dist if dist > 0 else 0.0) * delta
            clamped[i] = True
        target[i] = a_star
        emitted[i] = prop
        if i < n:
            # advance the shifted viewer one step under the emitted sample
            a_off = prop - D65_UV
            k1, k2 = p.k1, p.k2
            s1 = k1 * (k2 * a_off - a_state)
            s2 = k1 * (k2 * a_off - (a_state + 0.5 * h * s1))
            s3 = k1 * (k2 * a_off - (a_state + 0.5 * h * s2))
            s4 = k1 * (k2 * a_off - (a_state + h * s3))
            a_state = a_state + (h / 6.0) * (s1 + 2 * s2 + 2 * s3 + s4)
    return DynamicScheduleResult(times, emitted, target, clamped)
