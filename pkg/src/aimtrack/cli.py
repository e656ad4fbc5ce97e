"""Batch command line: simulate scenarios, track recordings, score tracks.

Exit codes: 0 success, 2 input/schema error, 3 drone identification failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
import time
from pathlib import Path

import numpy as np

from .config import PipelineConfig
from .dataio import (evaluate, read_positions_csv, read_wav, track_to_csv,
                     write_text_atomic, write_wav)
from .flightplan import plan_flight
from .ident import build_database, identify, ProfileDatabase
from .pipeline import run_pipeline
from .scenario import ScenarioError, load_scenario
from .synth import synthesize

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_IDENT = 3


def cmd_simulate(args) -> int:
    try:
        scenario = load_scenario(args.scenario)
        if args.seed is not None:
            doc = json.loads(Path(scenario_path(args.scenario)).read_text())
            doc["seed"] = args.seed
            from .scenario import scenario_from_dict

            scenario = scenario_from_dict(doc)
        truth = plan_flight(scenario)
    except ScenarioError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    audio = synthesize(truth, scenario)
    for arr_id, channels in audio.items():
        write_wav(out / f"{arr_id}.wav", channels, scenario.sample_rate)
    write_text_atomic(out / "truth.csv", truth.to_csv())
    meta = {
        "scenario": scenario.name,
        "seed": scenario.seed,
        "sample_rate": scenario.sample_rate,
        "duration_s": truth.duration,
        "arrays": [a.id for a in scenario.arrays],
    }
    write_text_atomic(out / "meta.json", json.dumps(meta, indent=2))
    print(f"wrote {len(audio)} array recording(s) + truth.csv to {out}")
    return EXIT_OK


def scenario_path(arg: str) -> Path:
    p = Path(arg)
    if p.exists():
        return p
    from .scenario import SCENARIO_DIR

    return SCENARIO_DIR / f"{arg}.json"


def cmd_track(args) -> int:
    t0 = time.perf_counter()
    try:
        scenario = load_scenario(args.scenario)
        config = PipelineConfig.resolve(args.config)
    except (ScenarioError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT

    audio_dir = Path(args.audio_dir)
    recordings = {}
    for arr in scenario.arrays:
        wav = audio_dir / f"{arr.id}.wav"
        if not wav.exists():
            print(f"error: missing recording {wav}", file=sys.stderr)
            return EXIT_INPUT
        rate, data = read_wav(wav)
        if data.shape[1] != arr.n_elements:
            print(f"error: {wav} has {data.shape[1]} channels, "
                  f"array {arr.id} expects {arr.n_elements}", file=sys.stderr)
            return EXIT_INPUT
        if abs(rate - scenario.sample_rate) > 1e-6:
            print(f"error: {wav} sample rate {rate} != scenario "
                  f"{scenario.sample_rate}", file=sys.stderr)
            return EXIT_INPUT
        recordings[arr.id] = data

    db = ProfileDatabase.load(args.db) if args.db else build_database()
    first = recordings[scenario.arrays[0].id]
    ident_len = int(min(len(first), round(1.5 * scenario.sample_rate)))
    if ident_len < scenario.sample_rate:
        print("error: recording shorter than 1 s, cannot identify drone",
              file=sys.stderr)
        return EXIT_INPUT
    result = identify(first[:ident_len].mean(axis=1).astype(np.float64), db,
                      scenario.sample_rate, config=config)
    if not result.known:
        print(f"error: unknown drone (best similarity {result.confidence:.3f} "
              f"below floor)", file=sys.stderr)
        return EXIT_IDENT
    print(f"identified profile: {result.profile.name} "
          f"(confidence {result.confidence:.3f})")

    start_height = (args.start_height if args.start_height is not None
                    else scenario.start_position[2])
    pipe = run_pipeline(recordings, result.profile, list(scenario.arrays),
                        scenario.sample_rate, config=config,
                        start_height=start_height, scenario=scenario,
                        single_array=args.single_array)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    multi = pipe.sync is not None
    write_text_atomic(out / "track.csv", track_to_csv(pipe.points, multi=multi))
    if args.dump_debug:
        _write_debug(out, pipe)
    print(f"wrote track.csv ({len(pipe.points)} steps, "
          f"{'multi' if multi else 'single'}-array) in "
          f"{time.perf_counter() - t0:.1f} s")
    return EXIT_OK


def _write_debug(out: Path, pipe) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["t", "array", "azimuth", "elevation", "residual",
                     "var_azimuth", "nlos", "bpf"])
    for d in pipe.debug:
        writer.writerow([f"{d.t:.3f}", d.array_id, f"{d.azimuth:.5f}",
                         f"{d.elevation:.5f}", f"{d.residual:.3f}",
                         f"{d.var_azimuth:.6f}", int(d.nlos),
                         "|".join(f"{b:.2f}" for b in d.bpf)])
    write_text_atomic(out / "doa_trace.csv", buf.getvalue())
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["t", "mode", "arrays"])
    for t, ids, mode in pipe.selection_trace:
        writer.writerow([f"{t:.3f}", mode, "|".join(ids)])
    write_text_atomic(out / "selection_trace.csv", buf.getvalue())


def cmd_eval(args) -> int:
    t0 = time.perf_counter()
    try:
        track_t, track_xyz, _ = read_positions_csv(args.track)
        truth_t, truth_xyz, extras = read_positions_csv(args.truth)
        report = evaluate(track_t, track_xyz, truth_t, truth_xyz,
                          truth_extras=extras)
    except (ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    report.runtime_s = time.perf_counter() - t0
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_text_atomic(out / "report.json", report.to_json())
    write_text_atomic(out / "cdf.csv", report.cdf_csv())
    print(f"mean error {report.mean_error:.3f} m over {len(report.errors)} steps"
          + "".join(f"; {k} {v:.3f} m" for k, v in report.per_regime.items()))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="aimtrack",
        description="Acoustic drone tracking: simulate, track, evaluate.")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="synthesize array audio for a scenario")
    sim.add_argument("--scenario", required=True,
                     help="scenario JSON path or bundled name")
    sim.add_argument("--out", required=True, help="output directory")
    sim.add_argument("--seed", type=int, default=None, help="override the seed")
    sim.set_defaults(func=cmd_simulate)

    trk = sub.add_parser("track", help="run the tracking pipeline on recordings")
    trk.add_argument("--scenario", required=True,
                     help="scenario JSON (array geometry source)")
    trk.add_argument("--audio-dir", required=True,
                     help="directory with <array_id>.wav recordings")
    trk.add_argument("--out", required=True)
    trk.add_argument("--config", default=None, help="pipeline config JSON")
    trk.add_argument("--db", default=None, help="profile database JSON")
    trk.add_argument("--single-array", action="store_true",
                     help="force single-array mode")
    trk.add_argument("--start-height", type=float, default=None,
                     help="initial drone height; defaults to the scenario start z")
    trk.add_argument("--dump-debug", action="store_true")
    trk.set_defaults(func=cmd_track)

    ev = sub.add_parser("eval", help="score a track against ground truth")
    ev.add_argument("--track", required=True)
    ev.add_argument("--truth", required=True)
    ev.add_argument("--out", required=True)
    ev.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
