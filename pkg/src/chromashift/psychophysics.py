"""Psychometric calibration, adaptive 2AFC stimulus placement, and maximum
likelihood estimation of the adaptation dynamics.

Observers judge which of two patches straddling a midpoint looks more
achromatic; the probability of picking the patch lagging the traversal is a
logistic in the signed distance between the midpoint and the adaptation
state. Calibration fits that logistic while the state is pinned at the white
point; the measurement stage fits the (k1, k2) dynamics by a dense grid
search over the Bernoulli likelihood of all choices.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.special import expit, ndtri
import scipy.optimize

from . import _kernels
from .adaptation import AdaptationParams, TriphasicSchedule, adaptation_ode, illuminant_at, unit_offset
from .colorimetry import D65_UV, JND, uv_to_xyz, xyz_to_rgb

logger = logging.getLogger(__name__)

LAGGING = "lagging"
FURTHER = "further"

# Patch separation along the traversal and default midpoint jitter. The
# separation is 6 JND: closer patches make the task too hard, farther ones
# risk leaving the display gamut. A 1.5 JND jitter keeps ~95% of midpoints
# within 3 JND of the placement center.
PATCH_SEPARATION = 6 * JND
SIGMA_PLACE = 1.5 * JND
STIMULUS_LUMINANCE = 0.3

# Half the 95% chi-square quantile (1 dof), in log-likelihood units.
PROFILE_CI_DROP = 1.920729410347062

_SLOPE_BOUND = 1e5


@dataclass(frozen=True)
class PsychometricParams:
    """Logistic choice model: slope per u'v' unit and bias offset."""

    k: float
    x0: float


def psychometric(offset, p: PsychometricParams):
    """Probability of choosing the lagging patch given the signed midpoint
    offset from the adaptation state along the traversal."""
    return expit(p.k * (np.asarray(offset, dtype=np.float64) - p.x0))


def signed_offset(m, a, direction) -> float:
    """Projection of (m - a) on a unit direction."""
    return float(np.dot(np.asarray(m, float) - np.asarray(a, float), direction))


# ---------------------------------------------------------------------------
# Records
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CalibrationRecord:
    """One 2AFC answer with the state pinned at white: signed midpoint offset
    from the white point along the trajectory, and the choice."""

    m_offset: float
    choice: str

    def __post_init__(self):
        if self.choice not in (LAGGING, FURTHER):
            raise ValueError(f"choice must be {LAGGING!r} or {FURTHER!r}")


@dataclass(frozen=True)
class TrialRecord:
    """One measurement-stage 2AFC observation."""

    t: float
    further: np.ndarray
    lagging: np.ndarray
    midpoint: np.ndarray
    choice: str
    response_latency: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "further", np.asarray(self.further, float))
        object.__setattr__(self, "lagging", np.asarray(self.lagging, float))
        object.__setattr__(self, "midpoint", np.asarray(self.midpoint, float))
        if self.choice not in (LAGGING, FURTHER):
            raise ValueError(f"choice must be {LAGGING!r} or {FURTHER!r}")
        sep = np.linalg.norm(self.further - self.lagging)
        if abs(sep - PATCH_SEPARATION) > 1e-9:
            raise ValueError(f"patch separation {sep} != {PATCH_SEPARATION}")
        if np.linalg.norm(self.midpoint - 0.5 * (self.further + self.lagging)) > 1e-9:
            raise ValueError("midpoint must bisect the two patches")


def record_to_dict(rec) -> dict:
    if isinstance(rec, CalibrationRecord):
        return {"v": 1, "type": "calibration", "m_offset": rec.m_offset,
                "choice": rec.choice}
    if isinstance(rec, TrialRecord):
        return {"v": 1, "type": "trial", "t": rec.t,
                "further": list(rec.further), "lagging": list(rec.lagging),
                "midpoint": list(rec.midpoint), "choice": rec.choice,
                "latency": rec.response_latency}
    raise TypeError(f"not a record: {rec!r}")


def record_from_dict(doc: dict):
    if doc.get("v") != 1:
        raise ValueError(f"unsupported record schema version {doc.get('v')!r}")
    if doc["type"] == "calibration":
        return CalibrationRecord(doc["m_offset"], doc["choice"])
    if doc["type"] == "trial":
        return TrialRecord(doc["t"], doc["further"], doc["lagging"],
                           doc["midpoint"], doc["choice"], doc.get("latency", 0.0))
    raise ValueError(f"unknown record type {doc['type']!r}")


def save_records(path, records: Iterable) -> None:
    with open(path, "w") as f:
        for rec in records:
            f.write(json.dumps(record_to_dict(rec)) + "\n")


def load_records(path) -> list:
    out = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if line:
                out.append(record_from_dict(json.loads(line)))
    return out


# ---------------------------------------------------------------------------
# Psychometric calibration fit
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PsychometricFit:
    params: PsychometricParams
    log_likelihood: float
    at_bound: bool = False


def _psy_nll(theta, offsets, ys):
    k, x0 = theta
    z = k * (offsets - x0)
    # -log sigmoid(z) for lagging, -log sigmoid(-z) for further
    zs = np.where(ys, z, -z)
    return float(np.sum(np.logaddexp(0.0, -zs)))


def fit_psychometric(records: Sequence[CalibrationRecord]) -> PsychometricFit:
    """Maximum-likelihood logistic fit to calibration answers.

    Perfectly separable answer sets have no finite slope; those return the
    slope pinned at the search bound with ``at_bound`` set.
    """
    if len(records) < 2:
        raise ValueError("need at least two calibration records")
    offsets = np.array([r.m_offset for r in records], dtype=np.float64)
    ys = np.array([r.choice == LAGGING for r in records])

    lag, fur = offsets[ys], offsets[~ys]
    if lag.size == 0 or fur.size == 0 or lag.min() > fur.max() or fur.min() > lag.max():
        # separable: lagging strictly above (k -> +inf) or below (k -> -inf)
        if lag.size == 0:
            k, x0 = -_SLOPE_BOUND, float(np.median(fur))
        elif fur.size == 0:
            k, x0 = _SLOPE_BOUND, float(np.median(lag))
        elif lag.min() > fur.max():
            k, x0 = _SLOPE_BOUND, float(0.5 * (lag.min() + fur.max()))
        else:
            k, x0 = -_SLOPE_BOUND, float(0.5 * (fur.min() + lag.max()))
        params = PsychometricParams(k, x0)
        return PsychometricFit(params, -_psy_nll((k, x0), offsets, ys), at_bound=True)

    span = float(offsets.max() - offsets.min()) or JND
    bounds = [(-_SLOPE_BOUND, _SLOPE_BOUND),
              (float(offsets.min()) - span, float(offsets.max()) + span)]
    best = None
    for k0 in (50.0, 200.0, 800.0):
        for x00 in (0.0, float(np.median(offsets))):
            res = scipy.optimize.minimize(
                _psy_nll, x0=np.array([k0, x00]), args=(offsets, ys),
                method="L-BFGS-B", bounds=bounds)
            if best is None or res.fun < best.fun - 1e-12:
                best = res
    k, x0 = best.x
    return PsychometricFit(PsychometricParams(float(k), float(x0)),
                           -float(best.fun),
                           at_bound=bool(abs(k) >= 0.98 * _SLOPE_BOUND))


# ---------------------------------------------------------------------------
# Adaptation-dynamics fit
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GridSpec:
    """Search lattice for the (k1, k2) grid fit."""

    k1_start: float = 0.0004
    k1_stop: float = 0.5
    k1_step: float = 0.0004
    k2_start: float = 0.0
    k2_stop: float = 1.0
    k2_step: float = 0.0006

    def k1_values(self) -> np.ndarray:
        n = int((self.k1_stop - self.k1_start) / self.k1_step + 1e-9) + 1
        return self.k1_start + self.k1_step * np.arange(n)

    def k2_values(self) -> np.ndarray:
        n = int((self.k2_stop - self.k2_start) / self.k2_step + 1e-9) + 1
        return self.k2_start + self.k2_step * np.arange(n)


PAPER_GRID = GridSpec()

# Coarser lattice for batch experiments; steps stay far below the recovery
# tolerances asserted anywhere in the suite.
COARSE_GRID = GridSpec(k1_step=0.002, k2_step=0.003)


@dataclass(frozen=True)
class FitResult:
    params: AdaptationParams
    log_likelihood: float
    ci_k1: tuple[float, float]
    ci_k2: tuple[float, float]
    flags: tuple[str, ...] = ()


def log_likelihood(trials: Sequence[TrialRecord], s: TriphasicSchedule,
                   p_adapt: AdaptationParams, p_psy: PsychometricParams) -> float:
    """Bernoulli log-likelihood of the observed choices under the closed-form
    adaptation state. Choice probabilities are clamped to [1e-12, 1 - 1e-12]
    before the log; clamping is logged, not fatal."""
    if len(trials) == 0:
        return 0.0
    direction = s.direction()
    ts = np.array([r.t for r in trials])
    h = unit_offset(s, [p_adapt.k1], ts)[0]
    total = 0.0
    clamped = 0
    for j, rec in enumerate(trials):
        m_off = signed_offset(rec.midpoint, D65_UV, direction)
        g = float(expit(p_psy.k * (m_off - p_adapt.k2 * h[j] - p_psy.x0)))
        prob = g if rec.choice == LAGGING else 1.0 - g
        if prob < 1e-12:
            prob = 1e-12
            clamped += 1
        total += math.log(prob)
    if clamped:
        logger.warning("clamped %d saturated choice probabilities", clamped)
    return total


def _session_blocks(sessions, grid_k1s):
    """Stack per-session unit offsets, midpoint offsets, and choices."""
    hs, m_offs, lags = [], [], []
    for schedule, trials in sessions:
        if not trials:
            continue
        direction = schedule.direction()
        ts = np.array([r.t for r in trials])
        hs.append(unit_offset(schedule, grid_k1s, ts))
        m_offs.append(np.array([signed_offset(r.midpoint, D65_UV, direction)
                                for r in trials]))
        lags.append(np.array([r.choice == LAGGING for r in trials]))
    if not hs:
        raise ValueError("no trials to fit")
    return (np.concatenate(hs, axis=1), np.concatenate(m_offs),
            np.concatenate(lags))


def _grid_result(ll, k1s, k2s) -> FitResult:
    idx = int(np.argmax(ll))
    i, l = divmod(idx, ll.shape[1])
    ll_max = float(ll[i, l])
    thr = ll_max - PROFILE_CI_DROP
    prof1 = ll.max(axis=1)
    prof2 = ll.max(axis=0)
    in1 = k1s[prof1 >= thr]
    in2 = k2s[prof2 >= thr]
    flags = []
    if in1[0] <= k1s[0] and in1[-1] >= k1s[-1]:
        flags.append("k1-ci-full-range")
    if in2[0] <= k2s[0] and in2[-1] >= k2s[-1]:
        flags.append("k2-ci-full-range")
    return FitResult(AdaptationParams(float(k1s[i]), float(k2s[l])), ll_max,
                     (float(in1[0]), float(in1[-1])),
                     (float(in2[0]), float(in2[-1])), tuple(flags))


def fit_adaptation_pooled(sessions: Sequence[tuple[TriphasicSchedule, Sequence[TrialRecord]]],
                          p_psy: PsychometricParams,
                          grid: GridSpec = PAPER_GRID) -> FitResult:
    """Grid-search MLE of (k1, k2) over trials pooled across schedules.

    The arg-max ties break toward the lexicographically smallest (k1, k2);
    confidence intervals are 95% profile-likelihood intervals on the grid.
    """
    k1s, k2s = grid.k1_values(), grid.k2_values()
    h, m_off, lags = _session_blocks(sessions, k1s)
    ll = _kernels.grid_loglik(h, m_off, lags, k2s, p_psy.k, p_psy.x0)
    return _grid_result(ll, k1s, k2s)


def fit_adaptation(trials: Sequence[TrialRecord], s: TriphasicSchedule,
                   p_psy: PsychometricParams,
                   grid: GridSpec = PAPER_GRID) -> FitResult:
    """Grid-search MLE of (k1, k2) for a single schedule's trials."""
    return fit_adaptation_pooled([(s, trials)], p_psy, grid)


def fit_adaptation_local(trials: Sequence[TrialRecord], s: TriphasicSchedule,
                         p_psy: PsychometricParams, center: AdaptationParams,
                         grid: GridSpec = PAPER_GRID,
                         half_steps: int = 30) -> FitResult:
    """Warm-started fit over a window of the grid around ``center``.

    Used for low-latency running estimates; intervals are relative to the
    window, so results carry a ``local-window`` flag.
    """
    k1s, k2s = grid.k1_values(), grid.k2_values()
    i0 = int(np.argmin(np.abs(k1s - center.k1)))
    l0 = int(np.argmin(np.abs(k2s - center.k2)))
    k1w = k1s[max(0, i0 - half_steps):i0 + half_steps + 1]
    k2w = k2s[max(0, l0 - half_steps):l0 + half_steps + 1]
    h, m_off, lags = _session_blocks([(s, trials)], k1w)
    ll = _kernels.grid_loglik(h, m_off, lags, k2w, p_psy.k, p_psy.x0)
    res = _grid_result(ll, k1w, k2w)
    return FitResult(res.params, res.log_likelihood, res.ci_k1, res.ci_k2,
                     res.flags + ("local-window",))


# ---------------------------------------------------------------------------
# Stimulus placement and simulated observers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StimulusPlacement:
    further: np.ndarray
    lagging: np.ndarray
    midpoint: np.ndarray
    clamped: bool = False


def _patches_in_gamut(m, direction, luminance) -> bool:
    half = 0.5 * PATCH_SEPARATION
    pts = np.stack([m + half * direction, m - half * direction])
    rgb = xyz_to_rgb(uv_to_xyz(pts, luminance))
    return bool(np.all(rgb >= 0.0) and np.all(rgb <= 1.0))


def place_stimuli(a_hat, direction, rng: np.random.Generator,
                  sigma: float = SIGMA_PLACE,
                  luminance: float = STIMULUS_LUMINANCE,
                  max_resamples: int = 16) -> StimulusPlacement:
    """Draw a 2AFC pair straddling a midpoint jittered around ``a_hat``.

    The midpoint is normal along the traversal direction; the two patches sit
    half the separation ahead of and behind it. Draws that push a patch out
    of the display gamut are resampled; if the jitter keeps falling outside,
    the midpoint is pulled toward the white point and flagged."""
    a_hat = np.asarray(a_hat, dtype=np.float64)
    direction = np.asarray(direction, dtype=np.float64)
    half = 0.5 * PATCH_SEPARATION
    m = a_hat
    for _ in range(max_resamples):
        m = a_hat + rng.normal(0.0, sigma) * direction
        if _patches_in_gamut(m, direction, luminance):
            return StimulusPlacement(m + half * direction, m - half * direction, m)
    # pull toward white until the pair fits
    lo, hi = 0.0, 1.0
    offset = m - D65_UV
    if not _patches_in_gamut(D65_UV, direction, luminance):
        raise ValueError("cannot place a gamut-legal pair even at the white point")
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if _patches_in_gamut(D65_UV + mid * offset, direction, luminance):
            lo = mid
        else:
            hi = mid
    m = D65_UV + lo * offset
    return StimulusPlacement(m + half * direction, m - half * direction, m,
                             clamped=True)


# One stimulus flash plus the answer window.
TRIAL_PERIOD = 0.75 + 3.0


def simulate_observer(truth: AdaptationParams, p_psy: PsychometricParams,
                      s: TriphasicSchedule, rng: np.random.Generator,
                      trial_interval: float = TRIAL_PERIOD,
                      sigma: float = SIGMA_PLACE,
                      luminance: float = STIMULUS_LUMINANCE,
                      dt: float = 1e-3) -> list[TrialRecord]:
    """Run the measurement protocol against a synthetic observer.

    The observer's state follows the ODE oracle for ``truth``; choices are
    Bernoulli draws from the psychometric model. Midpoints are placed around
    the true state, standing in for the adaptive loop's running prediction.
    """
    times, states = adaptation_ode(lambda t: illuminant_at(s, t), truth,
                                   s.duration, dt)
    direction = s.direction()
    trial_times = np.arange(trial_interval, s.duration + 1e-9, trial_interval)
    a_u = np.interp(trial_times, times, states[:, 0])
    a_v = np.interp(trial_times, times, states[:, 1])
    records = []
    for t, au, av in zip(trial_times, a_u, a_v):
        a_true = np.array([au, av])
        placed = place_stimuli(a_true, direction, rng, sigma, luminance)
        p_lag = float(psychometric(signed_offset(placed.midpoint, a_true, direction), p_psy))
        choice = LAGGING if rng.uniform() < p_lag else FURTHER
        records.append(TrialRecord(float(t), placed.further, placed.lagging,
                                   placed.midpoint, choice,
                                   response_latency=float(rng.uniform(0.3, 2.5))))
    return records


# ---------------------------------------------------------------------------
# Signal detection analysis
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SdtResult:
    d_prime: float
    hit_rate: float
    false_alarm_rate: float
    n_signal: int
    n_noise: int


def d_prime_from_rates(hit: float, fa: float) -> float:
    """z(hit) - z(false alarm), uncorrected."""
    return float(ndtri(hit) - ndtri(fa))


def sdt_analysis(records: Sequence[tuple[bool, bool]]) -> SdtResult:
    """Discriminability from (signal_present, responded_yes) records.

    Rates of exactly 0 or 1 are corrected by the 1/(2N) rule before the
    inverse-normal transform."""
    signal = np.array([bool(s) for s, _ in records])
    yes = np.array([bool(r) for _, r in records])
    n_sig = int(signal.sum())
    n_noise = int((~signal).sum())
    if n_sig == 0 or n_noise == 0:
        raise ValueError("need at least one signal and one noise trial")
    hit = yes[signal].mean()
    fa = yes[~signal].mean()

    def corrected(rate, n):
        if rate == 0.0:
            return 1.0 / (2 * n)
        if rate == 1.0:
            return 1.0 - 1.0 / (2 * n)
        return rate

    dp = d_prime_from_rates(corrected(hit, n_sig), corrected(fa, n_noise))
    return SdtResult(dp, float(hit), float(fa), n_sig, n_noise)
