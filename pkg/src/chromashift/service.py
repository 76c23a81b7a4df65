"""Live session engine for the adaptive 2AFC protocol.

A session walks through warm-up (blank background at the display white),
calibration (fixed-white 2AFC answers fitting the observer's psychometric
function), and the triphasic measurement stage (adaptive placement around the
running dynamics estimate). State is persisted after every mutation, so a
restarted process resumes sessions byte-identically. The HTTP layer is a thin
JSON wrapper; the protocol, not the stack, is the contract.
"""

from __future__ import annotations

import json
import logging
import os
import threading
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .adaptation import (
    AdaptationParams,
    MEASURED_PARAMS,
    TriphasicSchedule,
    adaptation_closed_form,
    illuminant_at,
)
from .colorimetry import D65_UV, srgb_encode, uv_to_xyz, xyz_to_rgb
from .psychophysics import (
    LAGGING,
    FURTHER,
    PATCH_SEPARATION,
    SIGMA_PLACE,
    STIMULUS_LUMINANCE,
    CalibrationRecord,
    FitResult,
    PAPER_GRID,
    PsychometricFit,
    PsychometricParams,
    TrialRecord,
    fit_adaptation,
    fit_adaptation_local,
    fit_psychometric,
    place_stimuli,
    record_from_dict,
    record_to_dict,
    signed_offset,
)

logger = logging.getLogger(__name__)

WARMUP, CALIBRATION, MEASUREMENT, DONE = "warmup", "calibration", "measurement", "done"

# Fallback prior for the running estimate before any measurement evidence.
_PRIOR_PARAMS = AdaptationParams(0.1, 0.7)


@dataclass(frozen=True)
class SessionConfig:
    schedule: TriphasicSchedule
    warmup_s: float = 60.0
    calibration_trials: int = 70
    sigma_place: float = SIGMA_PLACE
    display_s: float = 0.75
    response_window_s: float = 3.0
    luminance: float = STIMULUS_LUMINANCE
    seed: int = 0
    stale_gap_s: float = 30.0
    rest_s: float = 0.0

    def to_dict(self) -> dict:
        return {"schedule": json.loads(self.schedule.to_json()),
                "warmup_s": self.warmup_s,
                "calibration_trials": self.calibration_trials,
                "sigma_place": self.sigma_place,
                "display_s": self.display_s,
                "response_window_s": self.response_window_s,
                "luminance": self.luminance,
                "seed": self.seed,
                "stale_gap_s": self.stale_gap_s,
                "rest_s": self.rest_s}

    @classmethod
    def from_dict(cls, doc: dict) -> "SessionConfig":
        schedule = TriphasicSchedule.from_json(json.dumps(doc["schedule"]))
        kwargs = {k: doc[k] for k in ("warmup_s", "calibration_trials",
                                      "sigma_place", "display_s",
                                      "response_window_s", "luminance", "seed",
                                      "stale_gap_s", "rest_s") if k in doc}
        return cls(schedule=schedule, **kwargs)


class ServiceError(Exception):
    """Client-attributable error with an HTTP-ish status code."""

    def __init__(self, status: int, message: str):
        super().__init__(message)
        self.status = status


def _display_rgb8(uv, luminance) -> list[int]:
    return [int(c) for c in srgb_encode(xyz_to_rgb(uv_to_xyz(uv, luminance)))]


@dataclass
class Session:
    id: str
    config: SessionConfig
    phase: str = WARMUP
    t0: float = 0.0                      # wall clock at session start
    measurement_t0: float | None = None  # wall clock when measurement began
    last_interaction: float = 0.0
    trial_counter: int = 0
    calibration_answered: int = 0
    pending: dict | None = None
    pending_issued_at: float | None = None
    records: list = field(default_factory=list)
    epoch: int = 0
    flags: list[str] = field(default_factory=list)
    rng_state: dict | None = None
    psy_fit: PsychometricFit | None = None
    running: AdaptationParams | None = None
    lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def rng(self) -> np.random.Generator:
        gen = np.random.default_rng(self.config.seed)
        if self.rng_state is not None:
            gen.bit_generator.state = self.rng_state
        return gen

    def store_rng(self, gen: np.random.Generator) -> None:
        self.rng_state = gen.bit_generator.state


class StudyService:
    """Owns sessions, their clocks, and their on-disk state."""

    def __init__(self, data_dir, clock=time.time):
        self.data_dir = Path(data_dir)
        self.data_dir.mkdir(parents=True, exist_ok=True)
        self.clock = clock
        self._sessions: dict[str, Session] = {}
        self._registry_lock = threading.Lock()
        for manifest in sorted(self.data_dir.glob("*/manifest.json")):
            try:
                sess = self._load_session(manifest.parent)
                self._sessions[sess.id] = sess
            except Exception as exc:
                logger.warning("could not restore session at %s: %s",
                               manifest.parent, exc)

    # -- persistence --------------------------------------------------------

    def _session_dir(self, sid: str) -> Path:
        return self.data_dir / sid

    def _persist(self, sess: Session) -> None:
        d = self._session_dir(sess.id)
        d.mkdir(parents=True, exist_ok=True)
        doc = {
            "id": sess.id,
            "config": sess.config.to_dict(),
            "phase": sess.phase,
            "t0": sess.t0,
            "measurement_t0": sess.measurement_t0,
            "last_interaction": sess.last_interaction,
            "trial_counter": sess.trial_counter,
            "calibration_answered": sess.calibration_answered,
            "pending": sess.pending,
            "pending_issued_at": sess.pending_issued_at,
            "epoch": sess.epoch,
            "flags": sess.flags,
            "rng_state": sess.rng_state,
            "psy_fit": None if sess.psy_fit is None else {
                "k": sess.psy_fit.params.k, "x0": sess.psy_fit.params.x0,
                "log_likelihood": sess.psy_fit.log_likelihood,
                "at_bound": sess.psy_fit.at_bound},
            "running": None if sess.running is None else
                       {"k1": sess.running.k1, "k2": sess.running.k2},
        }
        tmp = d / "manifest.json.tmp"
        tmp.write_text(json.dumps(doc))
        os.replace(tmp, d / "manifest.json")

    def _append_record(self, sess: Session, rec, epoch: int) -> None:
        doc = record_to_dict(rec)
        doc["epoch"] = epoch
        with open(self._session_dir(sess.id) / "records.jsonl", "a") as f:
            f.write(json.dumps(doc) + "\n")
            f.flush()
            os.fsync(f.fileno())
        sess.records.append((epoch, rec))

    def _load_session(self, d: Path) -> Session:
        doc = json.loads((d / "manifest.json").read_text())
        sess = Session(id=doc["id"], config=SessionConfig.from_dict(doc["config"]))
        sess.phase = doc["phase"]
        sess.t0 = doc["t0"]
        sess.measurement_t0 = doc["measurement_t0"]
        sess.last_interaction = doc["last_interaction"]
        sess.trial_counter = doc["trial_counter"]
        sess.calibration_answered = doc["calibration_answered"]
        sess.pending = doc["pending"]
        sess.pending_issued_at = doc["pending_issued_at"]
        sess.epoch = doc["epoch"]
        sess.flags = doc["flags"]
        sess.rng_state = doc["rng_state"]
        if sess.rng_state is not None:
            # JSON round-trips PCG64 state ints fine, but keys must be restored
            sess.rng_state = _coerce_rng_state(sess.rng_state)
        if doc["psy_fit"] is not None:
            pf = doc["psy_fit"]
            sess.psy_fit = PsychometricFit(
                PsychometricParams(pf["k"], pf["x0"]), pf["log_likelihood"],
                pf["at_bound"])
        if doc["running"] is not None:
            sess.running = AdaptationParams(doc["running"]["k1"], doc["running"]["k2"])
        rec_path = d / "records.jsonl"
        if rec_path.exists():
            with open(rec_path) as f:
                for line in f:
                    line = line.strip()
                    if line:
                        rd = json.loads(line)
                        epoch = rd.pop("epoch", 0)
                        sess.records.append((epoch, record_from_dict(rd)))
        return sess

    # -- protocol ------------------------------------------------------------

    def create_session(self, config: SessionConfig) -> str:
        sid = uuid.uuid4().hex[:12]
        sess = Session(id=sid, config=config)
        now = self.clock()
        sess.t0 = now
        sess.last_interaction = now
        sess.store_rng(np.random.default_rng(config.seed))
        with self._registry_lock:
            self._sessions[sid] = sess
        self._persist(sess)
        return sid

    def _get(self, sid: str) -> Session:
        sess = self._sessions.get(sid)
        if sess is None:
            raise ServiceError(404, f"unknown session {sid!r}")
        return sess

    def _maybe_leave_warmup(self, sess: Session) -> None:
        if sess.phase == WARMUP and self.clock() - sess.t0 >= sess.config.warmup_s:
            sess.phase = CALIBRATION

    def _running_params(self, sess: Session) -> AdaptationParams:
        if sess.running is not None:
            return sess.running
        return MEASURED_PARAMS.get(sess.config.schedule.trajectory.name,
                                   _PRIOR_PARAMS)

    def next_trial(self, sid: str) -> dict:
        sess = self._get(sid)
        with sess.lock:
            now = self.clock()
            self._maybe_leave_warmup(sess)
            if sess.phase == DONE:
                return {"notice": "done", "phase": DONE}
            if sess.phase == WARMUP:
                return {"notice": "warmup", "phase": WARMUP,
                        "remaining_s": sess.config.warmup_s - (now - sess.t0)}
            if sess.pending is not None:
                return sess.pending
            if (sess.phase == CALIBRATION
                    and sess.calibration_answered >= sess.config.calibration_trials):
                sess.phase = MEASUREMENT
                sess.measurement_t0 = now
                self._persist(sess)
                return {"notice": "phase-transition", "phase": MEASUREMENT}
            if sess.phase == MEASUREMENT:
                gap = now - sess.last_interaction
                if gap > sess.config.stale_gap_s and "stale-gap" not in sess.flags:
                    sess.flags.append("stale-gap")
                t = now - sess.measurement_t0
                if t > sess.config.schedule.duration:
                    sess.phase = DONE
                    self._persist(sess)
                    return {"notice": "done", "phase": DONE}
            trial = self._issue_trial(sess, now)
            sess.pending = trial
            sess.pending_issued_at = now
            self._persist(sess)
            return trial

    def _issue_trial(self, sess: Session, now: float) -> dict:
        cfg = sess.config
        schedule = cfg.schedule
        direction = schedule.direction()
        rng = sess.rng()
        sess.trial_counter += 1
        if sess.phase == CALIBRATION:
            t = now - sess.t0
            background = D65_UV
            center = D65_UV
        else:
            t = now - sess.measurement_t0
            t = min(t, schedule.duration)
            background = illuminant_at(schedule, t)
            p = self._running_params(sess)
            center = adaptation_closed_form(schedule, p, t)
        placed = place_stimuli(center, direction, rng, cfg.sigma_place,
                               cfg.luminance)
        left_is_further = bool(rng.integers(0, 2))
        noise_seed = int(rng.integers(0, 2 ** 31 - 1))
        sess.store_rng(rng)
        spec = {
            "trial_id": sess.trial_counter,
            "phase": sess.phase,
            "t": float(t),
            "background_uv": [float(x) for x in background],
            "background_rgb8": _display_rgb8(background, cfg.luminance),
            "further_uv": [float(x) for x in placed.further],
            "lagging_uv": [float(x) for x in placed.lagging],
            "further_rgb8": _display_rgb8(placed.further, cfg.luminance),
            "lagging_rgb8": _display_rgb8(placed.lagging, cfg.luminance),
            "midpoint_uv": [float(x) for x in placed.midpoint],
            "left_is_further": left_is_further,
            "display_s": cfg.display_s,
            "response_window_s": cfg.response_window_s,
            "rest_s": cfg.rest_s,
            "patch_diameter_frac": 0.18,
            "noise_seed": noise_seed,
            "placement_clamped": placed.clamped,
        }
        return spec

    def submit_response(self, sid: str, trial_id: int, choice: str,
                        latency: float) -> dict:
        sess = self._get(sid)
        with sess.lock:
            if choice not in (LAGGING, FURTHER):
                raise ServiceError(422, f"choice must be {LAGGING!r} or {FURTHER!r}")
            if sess.pending is None or sess.pending["trial_id"] != trial_id:
                raise ServiceError(409, f"trial {trial_id} is not pending")
            now = self.clock()
            trial = sess.pending
            late = latency > sess.config.response_window_s
            if late:
                sess.flags.append(f"late-trial-{trial_id}")
            direction = sess.config.schedule.direction()
            if trial["phase"] == CALIBRATION:
                rec = CalibrationRecord(
                    signed_offset(np.array(trial["midpoint_uv"]), D65_UV, direction),
                    choice)
                self._append_record(sess, rec, sess.epoch)
                sess.calibration_answered += 1
                cal = [r for e, r in sess.records
                       if e == sess.epoch and isinstance(r, CalibrationRecord)]
                if sess.calibration_answered >= 2 and len({c.choice for c in cal}) > 1:
                    sess.psy_fit = fit_psychometric(cal)
            else:
                rec = TrialRecord(trial["t"], np.array(trial["further_uv"]),
                                  np.array(trial["lagging_uv"]),
                                  np.array(trial["midpoint_uv"]), choice,
                                  response_latency=latency)
                self._append_record(sess, rec, sess.epoch)
                trials = self._measurement_trials(sess)
                choices = {r.choice for r in trials}
                if len(choices) > 1:
                    fit = fit_adaptation_local(
                        trials, sess.config.schedule, self._psy_params(sess),
                        center=self._running_params(sess))
                    sess.running = fit.params
            sess.pending = None
            sess.pending_issued_at = None
            sess.last_interaction = now
            self._persist(sess)
            psy = sess.psy_fit
            return {
                "ok": True,
                "late": late,
                "psychometric": None if psy is None else
                    {"k": psy.params.k, "x0": psy.params.x0,
                     "at_bound": psy.at_bound},
                "adaptation": None if sess.running is None else
                    {"k1": sess.running.k1, "k2": sess.running.k2},
            }

    def _psy_params(self, sess: Session) -> PsychometricParams:
        if sess.psy_fit is not None:
            return sess.psy_fit.params
        return PsychometricParams(400.0, 0.0)

    def _measurement_trials(self, sess: Session) -> list[TrialRecord]:
        return [r for e, r in sess.records
                if e == sess.epoch and isinstance(r, TrialRecord)]

    def reset(self, sid: str) -> dict:
        """Back to warm-up for a fresh measurement epoch; records are kept."""
        sess = self._get(sid)
        with sess.lock:
            sess.epoch += 1
            sess.phase = WARMUP
            sess.t0 = self.clock()
            sess.measurement_t0 = None
            sess.pending = None
            sess.calibration_answered = 0
            sess.psy_fit = None
            sess.running = None
            sess.flags.append(f"reset-to-epoch-{sess.epoch}")
            self._persist(sess)
            return {"ok": True, "epoch": sess.epoch}

    def results(self, sid: str, finalize: bool = False) -> dict:
        sess = self._get(sid)
        with sess.lock:
            if sess.phase != DONE:
                if not finalize:
                    raise ServiceError(409, "session is not done; pass finalize")
                sess.phase = DONE
                sess.pending = None
                self._persist(sess)
            trials = self._measurement_trials(sess)
            fit: FitResult | None = None
            flags = list(sess.flags)
            if trials and len({r.choice for r in trials}) > 1:
                fit = fit_adaptation(trials, sess.config.schedule,
                                     self._psy_params(sess), PAPER_GRID)
            else:
                flags.append("no-fit")
            psy = sess.psy_fit
            exported = []
            for epoch, rec in sess.records:
                doc = record_to_dict(rec)
                doc["epoch"] = epoch
                exported.append(doc)
            return {
                "id": sess.id,
                "phase": sess.phase,
                "flags": flags,
                "psychometric": None if psy is None else
                    {"k": psy.params.k, "x0": psy.params.x0,
                     "at_bound": psy.at_bound},
                "fit": None if fit is None else {
                    "k1": fit.params.k1, "k2": fit.params.k2,
                    "log_likelihood": fit.log_likelihood,
                    "ci_k1": list(fit.ci_k1), "ci_k2": list(fit.ci_k2),
                    "flags": list(fit.flags)},
                "records": exported,
            }

    def export_jsonl(self, sid: str) -> str:
        sess = self._get(sid)
        with sess.lock:
            lines = []
            for epoch, rec in sess.records:
                doc = record_to_dict(rec)
                doc["epoch"] = epoch
                lines.append(json.dumps(doc))
            return "\n".join(lines) + ("\n" if lines else "")


def _coerce_rng_state(state):
    """JSON turns the PCG64 state dict's ints into ints already; walk nested
    dicts to keep the expected structure."""
    if isinstance(state, dict):
        return {k: _coerce_rng_state(v) for k, v in state.items()}
    return state


# ---------------------------------------------------------------------------
# HTTP layer
# ---------------------------------------------------------------------------

def create_app(data_dir, clock=time.time):
    """FastAPI app exposing the session protocol."""
    from fastapi import FastAPI, Request
    from fastapi.middleware.cors import CORSMiddleware
    from fastapi.responses import JSONResponse, PlainTextResponse

    service = StudyService(data_dir, clock=clock)
    app = FastAPI(title="chromashift study service")
    app.state.service = service
    app.add_middleware(CORSMiddleware, allow_origins=["*"],
                       allow_methods=["*"], allow_headers=["*"])

    @app.exception_handler(ServiceError)
    async def service_error(_req: Request, exc: ServiceError):
        return JSONResponse(status_code=exc.status, content={"error": str(exc)})

    @app.post("/sessions")
    async def create(request: Request):
        try:
            doc = await request.json()
            config = SessionConfig.from_dict(doc)
        except Exception as exc:
            raise ServiceError(400, f"malformed session config: {exc}")
        return {"id": service.create_session(config)}

    @app.get("/sessions/{sid}/trial")
    def trial(sid: str):
        return service.next_trial(sid)

    @app.post("/sessions/{sid}/response")
    async def respond(sid: str, request: Request):
        try:
            doc = await request.json()
            trial_id = int(doc["trial_id"])
            choice = doc["choice"]
            latency = float(doc.get("latency", 0.0))
        except ServiceError:
            raise
        except Exception as exc:
            raise ServiceError(400, f"malformed response: {exc}")
        return service.submit_response(sid, trial_id, choice, latency)

    @app.post("/sessions/{sid}/reset")
    def reset(sid: str):
        return service.reset(sid)

    @app.get("/sessions/{sid}/results")
    def results(sid: str, finalize: bool = False):
        return service.results(sid, finalize=finalize)

    @app.get("/sessions/{sid}/export")
    def export(sid: str):
        return PlainTextResponse(service.export_jsonl(sid))

    return app
