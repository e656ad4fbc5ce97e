"""Scenario files: scripted flights, array layouts, obstacles, noise, beacon.

A scenario is a JSON document; `load_scenario` validates it against a schema
and returns the typed object. All randomness anywhere in the simulator is
derived from the scenario seed through named substreams, so one (scenario,
seed) pair always produces bit-identical audio.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from jsonschema import Draft202012Validator

from .geometry import ArrayGeometry, Box
from .profiles import DroneProfile, MotionKind, load_profile

SCENARIO_DIR = Path(__file__).parent / "scenarios"

SCENARIO_SCHEMA = {
    "type": "object",
    "required": ["name", "seed", "profile", "start_position", "segments", "arrays"],
    "properties": {
        "name": {"type": "string"},
        "seed": {"type": "integer"},
        "profile": {"type": ["string", "object"]},
        "start_position": {"type": "array", "minItems": 3, "maxItems": 3,
                           "items": {"type": "number"}},
        "start_heading": {"type": "number"},
        "segments": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["motion", "duration"],
                "properties": {
                    "motion": {"enum": ["hover", "yaw", "horizontal", "vertical"]},
                    "duration": {"type": "number", "exclusiveMinimum": 0},
                    "magnitude": {"type": "number"},
                },
            },
        },
        "arrays": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["id", "origin", "elements"],
                "properties": {
                    "id": {"type": "string"},
                    "origin": {"type": "array", "minItems": 3, "maxItems": 3,
                               "items": {"type": "number"}},
                    "elements": {"type": ["string", "array"]},
                    "orientation": {"type": "number"},
                    "clock_offset": {"type": "number"},
                },
            },
        },
        "obstacles": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["min", "max"],
                "properties": {
                    "min": {"type": "array", "minItems": 3, "maxItems": 3,
                            "items": {"type": "number"}},
                    "max": {"type": "array", "minItems": 3, "maxItems": 3,
                            "items": {"type": "number"}},
                },
            },
        },
        "noise_sources": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["position", "center_freq", "bandwidth", "spl"],
                "properties": {
                    "position": {"type": "array", "minItems": 3, "maxItems": 3,
                                 "items": {"type": "number"}},
                    "center_freq": {"type": "number", "exclusiveMinimum": 0},
                    "bandwidth": {"type": "number", "exclusiveMinimum": 0},
                    "spl": {"type": "number"},
                },
            },
        },
        "beacon": {
            "type": ["object", "null"],
            "required": ["period", "length", "spl", "position"],
            "properties": {
                "period": {"type": "number", "exclusiveMinimum": 0},
                "length": {"type": "number", "exclusiveMinimum": 0},
                "spl": {"type": "number"},
                "position": {"type": "array", "minItems": 3, "maxItems": 3,
                             "items": {"type": "number"}},
                "band": {"type": "array", "minItems": 2, "maxItems": 2,
                         "items": {"type": "number"}},
            },
        },
        "sample_rate": {"type": "number", "exclusiveMinimum": 0},
        "snr_floor": {"type": "number"},
    },
}

_validator = Draft202012Validator(SCENARIO_SCHEMA)


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class Segment:
    motion: MotionKind
    duration: float
    magnitude: float = 0.0  # target speed m/s or yaw rate rad/s; unused for hover


@dataclass(frozen=True)
class NoiseSource:
    position: tuple[float, float, float]
    center_freq: float
    bandwidth: float
    spl: float  # dB SPL at 1 m


@dataclass(frozen=True)
class Beacon:
    period: float
    length: float
    spl: float
    position: tuple[float, float, float]
    band: tuple[float, float] = (16000.0, 20000.0)
    start: float = 0.05  # first emission time, s


@dataclass(frozen=True)
class Scenario:
    name: str
    seed: int
    profile: DroneProfile
    start_position: tuple[float, float, float]
    segments: tuple[Segment, ...]
    arrays: tuple[ArrayGeometry, ...]
    obstacles: tuple[Box, ...] = ()
    noise_sources: tuple[NoiseSource, ...] = ()
    beacon: Beacon | None = None
    sample_rate: float = 48000.0
    snr_floor: float = 40.0  # dB SNR vs. the hover emission referenced at 1 m
    start_heading: float = 0.0

    @property
    def duration(self) -> float:
        return sum(s.duration for s in self.segments)

    def substream(self, *labels: str | int) -> np.random.Generator:
        """Deterministic named RNG substream derived from the scenario seed."""
        digest = hashlib.sha256("/".join(str(x) for x in labels).encode()).digest()
        key = int.from_bytes(digest[:8], "little")
        return np.random.default_rng(np.random.SeedSequence([self.seed, key]))

    def validate(self) -> None:
        self.profile.validate()
        if not self.segments:
            raise ScenarioError("segments must be non-empty")
        if any(s.duration <= 0 for s in self.segments):
            raise ScenarioError("segment durations must be > 0")
        # Highest harmonic the synthesizer can produce: allow rotors 40% above
        # hover before aliasing, plus the beacon band upper edge.
        from .synth import HARMONIC_COUNT  # local import avoids a cycle

        f_max = 1.4 * self.profile.bpf_hover * HARMONIC_COUNT
        if self.beacon is not None:
            f_max = max(f_max, self.beacon.band[1])
        if self.sample_rate < 2.0 * f_max:
            raise ScenarioError(
                f"sample_rate {self.sample_rate} Hz below 2x the highest "
                f"synthesized frequency ({f_max:.0f} Hz)"
            )
        orientations = {a.orientation for a in self.arrays}
        if len(orientations) > 1:
            raise ScenarioError("all arrays must share one orientation")
        ids = [a.id for a in self.arrays]
        if len(set(ids)) != len(ids):
            raise ScenarioError("array ids must be unique")


def scenario_from_dict(doc: dict) -> Scenario:
    errors = sorted(_validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        where = "/".join(str(p) for p in err.absolute_path) or "<root>"
        raise ScenarioError(f"at {where}: {err.message}")
    beacon = None
    if doc.get("beacon"):
        b = doc["beacon"]
        beacon = Beacon(
            period=float(b["period"]),
            length=float(b["length"]),
            spl=float(b["spl"]),
            position=tuple(float(v) for v in b["position"]),
            band=tuple(float(v) for v in b.get("band", (16000.0, 20000.0))),
        )
    scen = Scenario(
        name=doc["name"],
        seed=int(doc["seed"]),
        profile=load_profile(doc["profile"]),
        start_position=tuple(float(v) for v in doc["start_position"]),
        start_heading=float(doc.get("start_heading", 0.0)),
        segments=tuple(
            Segment(MotionKind(s["motion"]), float(s["duration"]),
                    float(s.get("magnitude", 0.0)))
            for s in doc["segments"]
        ),
        arrays=tuple(ArrayGeometry.from_dict(a) for a in doc["arrays"]),
        obstacles=tuple(Box.from_dict(o) for o in doc.get("obstacles", [])),
        noise_sources=tuple(
            NoiseSource(tuple(float(v) for v in s["position"]),
                        float(s["center_freq"]), float(s["bandwidth"]), float(s["spl"]))
            for s in doc.get("noise_sources", [])
        ),
        beacon=beacon,
        sample_rate=float(doc.get("sample_rate", 48000.0)),
        snr_floor=float(doc.get("snr_floor", 40.0)),
    )
    scen.validate()
    return scen


def load_scenario(path: str | Path) -> Scenario:
    """Load a scenario JSON file, or a bundled scenario by bare name."""
    p = Path(path)
    if not p.exists():
        bundled = SCENARIO_DIR / f"{path}.json"
        if bundled.exists():
            p = bundled
        else:
            raise ScenarioError(f"scenario file not found: {path}")
    try:
        doc = json.loads(p.read_text())
    except json.JSONDecodeError as e:
        raise ScenarioError(f"{p}:{e.lineno}:{e.colno}: {e.msg}") from e
    try:
        return scenario_from_dict(doc)
    except ScenarioError as e:
        raise ScenarioError(f"{p}: {e}") from e


def bundled_scenarios() -> list[str]:
    return sorted(p.stem for p in SCENARIO_DIR.glob("*.json"))
