"""Command-line entry point: every pipeline stage as a subcommand.

Outputs are data files (CSV/JSON/JSONL); errors are a single machine-parsable
``error: ...`` line on stderr with a non-zero exit. Randomized subcommands
take an explicit seed.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import adaptation as ad
from . import optimizer as opt
from . import pipeline as pl
from . import power as pw
from . import psychophysics as psy
from .colorimetry import JND


def _parse_delta_t(text: str) -> float:
    """u'v' distance, or a JND count with a 'jnd' suffix (e.g. '5jnd')."""
    text = text.strip().lower()
    if text.endswith("jnd"):
        return float(text[:-3]) * JND
    return float(text)


def _parse_adaptation(text: str) -> tuple[ad.Trajectory | None, ad.AdaptationParams]:
    """A measured trajectory name (params implied) or a raw 'k1,k2' pair."""
    if text in ad.MEASURED_PARAMS:
        return ad.MEASURED_TRAJECTORIES[text], ad.MEASURED_PARAMS[text]
    try:
        k1, k2 = (float(x) for x in text.split(","))
    except ValueError:
        names = ", ".join(ad.MEASURED_PARAMS)
        raise ValueError(f"expected 'k1,k2' or one of: {names}")
    return None, ad.AdaptationParams(k1, k2)


def _load_power_params(path: str | None) -> pw.DisplayPowerParams:
    if path is None or path == "-":
        return pw.DEFAULT_POWER_PARAMS
    return pw.DisplayPowerParams.from_json(Path(path).read_text())


def _load_psy(path: str | None) -> psy.PsychometricParams:
    if path is None:
        return psy.PsychometricParams(400.0, 0.0)
    doc = json.loads(Path(path).read_text())
    return psy.PsychometricParams(doc["k"], doc["x0"])


def _trial_records(path) -> list[psy.TrialRecord]:
    return [r for r in psy.load_records(path) if isinstance(r, psy.TrialRecord)]


# ---------------------------------------------------------------------------
# Subcommand handlers
# ---------------------------------------------------------------------------

def cmd_histogram(args) -> int:
    hist = pw.build_histogram(args.corpus, bins=args.bins)
    hist.save(args.out)
    print(f"wrote {args.out}: {len(hist.weights)} occupied bins "
          f"({hist.bins_per_channel}/channel)")
    return 0


def cmd_landscape(args) -> int:
    hist = pw.ColorHistogram.load(args.hist)
    params = _load_power_params(args.params)
    scape = pw.power_landscape(hist, params, resolution=args.resolution,
                               threads=args.threads)
    scape.save_csv(args.out)
    print(f"wrote {args.out}")
    if args.image:
        scape.save_image(args.image)
        print(f"wrote {args.image}")
    if args.boundary:
        polylines = pw.savings_boundary(scape)
        with open(args.boundary, "w") as f:
            f.write("segment,u,v\n")
            for si, poly in enumerate(polylines):
                for u, v in poly:
                    f.write(f"{si},{u!r},{v!r}\n")
        print(f"wrote {args.boundary} ({len(polylines)} segments)")
    return 0


def cmd_fit_calibration(args) -> int:
    records = [r for r in psy.load_records(args.records)
               if isinstance(r, psy.CalibrationRecord)]
    if not records:
        raise ValueError(f"no calibration records in {args.records}")
    fit = psy.fit_psychometric(records)
    doc = {"k": fit.params.k, "x0": fit.params.x0,
           "log_likelihood": fit.log_likelihood, "at_bound": fit.at_bound}
    if args.out:
        Path(args.out).write_text(json.dumps(doc))
    print(json.dumps(doc))
    return 0


def cmd_fit_adaptation(args) -> int:
    trials = _trial_records(args.records)
    if not trials:
        raise ValueError(f"no trial records in {args.records}")
    schedule = ad.TriphasicSchedule.from_json(Path(args.schedule).read_text())
    if args.threads:
        import numba
        numba.set_num_threads(args.threads)
    fit = psy.fit_adaptation(trials, schedule, _load_psy(args.psy))
    doc = {"k1": fit.params.k1, "k2": fit.params.k2,
           "log_likelihood": fit.log_likelihood,
           "ci_k1": list(fit.ci_k1), "ci_k2": list(fit.ci_k2),
           "flags": list(fit.flags)}
    if args.out:
        Path(args.out).write_text(json.dumps(doc))
    print(json.dumps(doc))
    return 0


def cmd_simulate(args) -> int:
    _, truth = _parse_adaptation(args.truth)
    schedule = ad.TriphasicSchedule.from_json(Path(args.schedule).read_text())
    rng = np.random.default_rng(args.seed)
    p_psy = _load_psy(args.psy)
    records = psy.simulate_observer(truth, p_psy, schedule, rng)
    psy.save_records(args.out, records)
    print(f"wrote {args.out}: {len(records)} trials")
    return 0


def cmd_optimize(args) -> int:
    traj, params = _parse_adaptation(args.params)
    if traj is None:
        traj = ad.linear_trajectory(args.phi)
    delta_t = _parse_delta_t(args.delta_t)
    t0 = time.perf_counter()
    v = opt.optimal_velocity(params, delta_t, args.t_max)
    elapsed_ms = (time.perf_counter() - t0) * 1e3
    arc = min(v * args.t_max, traj.max_arc())
    schedule = pl.DeploymentSchedule(traj, arc / args.t_max, args.t_max)
    if args.out:
        Path(args.out).write_text(schedule.to_json())
    print(json.dumps({"v": v, "schedule": json.loads(schedule.to_json()),
                      "solve_ms": elapsed_ms}))
    return 0


def cmd_pareto(args) -> int:
    hist = pw.ColorHistogram.load(args.hist)
    dp = _load_power_params(args.params)
    cfg = opt.OptimizationConfig(t_max=args.t_max)
    delta_ts = [j * JND for j in args.jnds]
    sweep = opt.pareto_sweep(cfg, delta_ts, hist, dp)
    with open(args.out, "w") as f:
        f.write("trajectory,delta_t_jnd,delta_t,v,terminal_u,terminal_v,"
                "relative_power,saving,truncated\n")
        for name, points in sweep.items():
            for jnd_count, pt in zip(args.jnds, points):
                f.write(f"{name},{jnd_count},{pt.delta_t!r},{pt.v!r},"
                        f"{pt.terminal_uv[0]!r},{pt.terminal_uv[1]!r},"
                        f"{pt.relative_power!r},{pt.saving!r},{int(pt.truncated)}\n")
    print(f"wrote {args.out}")
    return 0


def cmd_heatmap(args) -> int:
    hist = pw.ColorHistogram.load(args.hist)
    dp = _load_power_params(args.params)
    traj, params = _parse_adaptation(args.trajectory)
    if traj is None:
        raise ValueError("heatmap needs a measured trajectory name")
    cand = opt.TrajectoryCandidate(args.trajectory, traj, params)
    grid = opt.sensitivity_heatmap(cand, [j * JND for j in args.jnds],
                                   args.t_maxes, hist, dp)
    with open(args.out, "w") as f:
        f.write("delta_t_jnd,t_max,saving\n")
        for i, jnd_count in enumerate(args.jnds):
            for j, tm in enumerate(args.t_maxes):
                f.write(f"{jnd_count},{tm!r},{grid.savings[i, j]!r}\n")
    print(f"wrote {args.out}")
    return 0


def cmd_shift(args) -> int:
    schedule = pl.DeploymentSchedule.from_json(Path(args.schedule).read_text())
    dp = _load_power_params(args.power_params)
    reports = pl.process_sequence(args.in_dir, args.out_dir, schedule,
                                  args.fps, dp, clip=args.clip)
    if args.report:
        pl.save_frame_reports(args.report, reports)
        print(f"wrote {args.report}")
    energy = pl.cumulative_energy(reports, args.fps)
    print(f"processed {len(reports)} frames; cumulative energy {energy:.6g}")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    app = create_app(args.data_dir)
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return 0


def cmd_sdt(args) -> int:
    by_condition: dict[str, list[tuple[bool, bool]]] = {}
    with open(args.records) as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            doc = json.loads(line)
            if doc.get("type") != "detection":
                raise ValueError("sdt expects detection records")
            by_condition.setdefault(doc.get("condition", "all"), []).append(
                (bool(doc["signal"]), bool(doc["response"])))
    rows = []
    for cond in sorted(by_condition):
        res = psy.sdt_analysis(by_condition[cond])
        rows.append((cond, res))
        print(json.dumps({"condition": cond, "d_prime": res.d_prime,
                          "hit_rate": res.hit_rate,
                          "false_alarm_rate": res.false_alarm_rate}))
    if args.out:
        with open(args.out, "w") as f:
            f.write("condition,d_prime,hit_rate,false_alarm_rate,n_signal,n_noise\n")
            for cond, res in rows:
                f.write(f"{cond},{res.d_prime!r},{res.hit_rate!r},"
                        f"{res.false_alarm_rate!r},{res.n_signal},{res.n_noise}\n")
        print(f"wrote {args.out}")
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="chromashift",
                                description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    q = sub.add_parser("histogram", help="build a scene color histogram")
    q.add_argument("corpus", help="directory of images")
    q.add_argument("out", help="histogram CSV to write")
    q.add_argument("--bins", type=int, default=64)
    q.set_defaults(fn=cmd_histogram)

    q = sub.add_parser("landscape", help="sweep the illuminant power landscape")
    q.add_argument("hist", help="histogram CSV")
    q.add_argument("params", help="display power params JSON ('-' for defaults)")
    q.add_argument("out", help="landscape CSV to write")
    q.add_argument("--resolution", type=int, default=256)
    q.add_argument("--image", help="optional 8-bit preview PNG")
    q.add_argument("--boundary", help="optional break-even contour CSV")
    q.add_argument("--threads", type=int, default=1)
    q.set_defaults(fn=cmd_landscape)

    q = sub.add_parser("fit-calibration", help="fit the psychometric function")
    q.add_argument("records", help="calibration records JSONL")
    q.add_argument("--out", help="write the fit as JSON")
    q.set_defaults(fn=cmd_fit_calibration)

    q = sub.add_parser("fit-adaptation", help="grid-search (k1, k2) MLE")
    q.add_argument("records", help="trial records JSONL")
    q.add_argument("schedule", help="triphasic schedule JSON file")
    q.add_argument("--psy", help="psychometric fit JSON (from fit-calibration)")
    q.add_argument("--threads", type=int, default=0,
                   help="grid-search threads (0 = library default)")
    q.add_argument("--out", help="write the fit as JSON")
    q.set_defaults(fn=cmd_fit_adaptation)

    q = sub.add_parser("simulate", help="run a synthetic observer session")
    q.add_argument("truth", help="'k1,k2' or a measured trajectory name")
    q.add_argument("schedule", help="triphasic schedule JSON file")
    q.add_argument("seed", type=int)
    q.add_argument("--psy", help="psychometric params JSON")
    q.add_argument("--out", required=True, help="trial records JSONL to write")
    q.set_defaults(fn=cmd_simulate)

    q = sub.add_parser("optimize", help="solve for the optimal ramp velocity")
    q.add_argument("params", help="'k1,k2' or a measured trajectory name")
    q.add_argument("delta_t", help="perceptual allowance (u'v' or e.g. '5jnd')")
    q.add_argument("t_max", type=float)
    q.add_argument("--phi", type=float, default=1.470,
                   help="ray angle when params are a raw pair")
    q.add_argument("--out", help="write the deployment schedule JSON")
    q.set_defaults(fn=cmd_optimize)

    q = sub.add_parser("pareto", help="saving vs allowance per trajectory")
    q.add_argument("hist", help="histogram CSV")
    q.add_argument("out", help="CSV to write")
    q.add_argument("--params", help="display power params JSON")
    q.add_argument("--t-max", type=float, default=120.0)
    q.add_argument("--jnds", type=float, nargs="+",
                   default=[1, 2, 3, 4, 5, 6])
    q.set_defaults(fn=cmd_pareto)

    q = sub.add_parser("heatmap", help="saving vs allowance and deadline")
    q.add_argument("hist", help="histogram CSV")
    q.add_argument("out", help="CSV to write")
    q.add_argument("--trajectory", default="linear-1.470")
    q.add_argument("--params", help="display power params JSON")
    q.add_argument("--jnds", type=float, nargs="+", default=[1, 2, 3, 4, 5, 6])
    q.add_argument("--t-maxes", type=float, nargs="+",
                   default=[60, 120, 180, 240, 300, 420, 600])
    q.set_defaults(fn=cmd_heatmap)

    q = sub.add_parser("shift", help="apply a schedule to a frame sequence")
    q.add_argument("in_dir")
    q.add_argument("out_dir")
    q.add_argument("schedule", help="deployment schedule JSON file")
    q.add_argument("--fps", type=float, default=30.0)
    q.add_argument("--clip", choices=pl.CLIP_POLICIES, default="clamp")
    q.add_argument("--power-params", help="display power params JSON")
    q.add_argument("--report", help="frame report CSV to write")
    q.set_defaults(fn=cmd_shift)

    q = sub.add_parser("serve", help="run the study service")
    q.add_argument("--host", default="127.0.0.1")
    q.add_argument("--port", type=int, default=8000)
    q.add_argument("--data-dir", default="./sessions")
    q.set_defaults(fn=cmd_serve)

    q = sub.add_parser("sdt", help="signal-detection analysis of detections")
    q.add_argument("records", help="detection records JSONL")
    q.add_argument("--out", help="per-condition CSV to write")
    q.set_defaults(fn=cmd_sdt)

    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ValueError, OSError, json.JSONDecodeError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
