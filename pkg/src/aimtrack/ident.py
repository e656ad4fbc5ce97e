"""Drone structure identification from band-passed MFCC features.

Every archived profile owns a band-pass filter bracketing its blade-passing
frequency and first harmonics. The captured signal runs through each filter;
normalized, time-averaged MFCC features of the filtered signal are compared
against the profile's stored centroid by cosine similarity. The classifier
is deliberately pluggable (any scorer with the same signature works); the
bundled nearest-centroid scorer is enough to route the correct profile on
clean captures. With several drones in disjoint bands, each is identified on
its own filtered signal.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.signal import butter, sosfiltfilt

from .config import PipelineConfig
from .profiles import DroneProfile, MotionKind, default_profiles
from .spectral import mfcc


def default_band(profile: DroneProfile, sample_rate: float = 48000.0
                 ) -> tuple[float, float]:
    """Pass band bracketing the BPF and its first two harmonics."""
    lo = 0.70 * profile.bpf_hover
    hi = min(3.4 * profile.bpf_hover, 0.47 * sample_rate)
    return lo, hi


@dataclass(frozen=True)
class DbEntry:
    profile: DroneProfile
    band: tuple[float, float]
    centroid: np.ndarray  # L2-normalized feature template


@dataclass(frozen=True)
class IdentResult:
    profile: DroneProfile | None
    confidence: float
    scores: dict[str, float]

    @property
    def known(self) -> bool:
        return self.profile is not None


class ProfileDatabase:
    def __init__(self, entries: list[DbEntry]):
        if not entries:
            raise ValueError("profile database is empty")
        self.entries = list(entries)

    def names(self) -> list[str]:
        return [e.profile.name for e in self.entries]

    def get(self, name: str) -> DbEntry:
        for e in self.entries:
            if e.profile.name == name:
                return e
        raise KeyError(name)

    def to_json(self) -> str:
        return json.dumps({
            "entries": [
                {
                    "profile": e.profile.to_dict(),
                    "band": list(e.band),
                    "centroid": base64.b64encode(
                        np.asarray(e.centroid, dtype=np.float64).tobytes()).decode(),
                }
                for e in self.entries
            ]
        }, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "ProfileDatabase":
        doc = json.loads(text)
        entries = []
        for e in doc["entries"]:
            centroid = np.frombuffer(base64.b64decode(e["centroid"]), dtype=np.float64)
            entries.append(DbEntry(
                profile=DroneProfile.from_dict(e["profile"]),
                band=tuple(e["band"]),
                centroid=centroid,
            ))
        return cls(entries)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path: str | Path) -> "ProfileDatabase":
        return cls.from_json(Path(path).read_text())


def _bandpass(signal: np.ndarray, band: tuple[float, float],
              sample_rate: float) -> np.ndarray:
    sos = butter(6, band, btype="bandpass", fs=sample_rate, output="sos")
    return sosfiltfilt(sos, signal)


def bandpass_bank(signal: np.ndarray, db: ProfileDatabase,
                  sample_rate: float) -> dict[str, np.ndarray]:
    """Zero-phase band-pass of the capture through every profile's band."""
    return {e.profile.name: _bandpass(signal, e.band, sample_rate)
            for e in db.entries}


def feature_vector(signal: np.ndarray, sample_rate: float) -> np.ndarray:
    """Time-averaged normalized MFCC of one (already filtered) capture."""
    cep = mfcc(signal, sample_rate)
    vec = cep.mean(axis=1)
    return vec / max(np.linalg.norm(vec), 1e-12)


def identify(signal: np.ndarray, db: ProfileDatabase, sample_rate: float,
             floor: float | None = None,
             config: PipelineConfig | None = None) -> IdentResult:
    """Nearest-centroid identification over the band-passed feature vectors.

    `signal` is a mono capture (e.g. the channel mean of one array) of at
    least one second. Scores below the similarity floor return Unknown.
    """
    cfg = config or PipelineConfig()
    floor = cfg.ident_floor if floor is None else floor
    if len(signal) < sample_rate:
        raise ValueError("identification needs at least 1 s of audio")
    scores: dict[str, float] = {}
    for entry in db.entries:
        filtered = _bandpass(signal, entry.band, sample_rate)
        vec = feature_vector(filtered, sample_rate)
        scores[entry.profile.name] = float(np.dot(vec, entry.centroid))
    best = max(db.names(), key=lambda name: scores[name])  # db order breaks ties
    if scores[best] < floor:
        return IdentResult(None, scores[best], scores)
    return IdentResult(db.get(best).profile, scores[best], scores)


def _template_scenario(profile: DroneProfile, seed: int):
    from .scenario import Scenario, Segment
    from .geometry import ArrayGeometry, respeaker6_offsets

    return Scenario(
        name=f"template-{profile.name}",
        seed=seed,
        profile=profile,
        start_position=(1.5, 0.6, 1.6),
        segments=(Segment(MotionKind.HOVER, 1.6),),
        arrays=(ArrayGeometry(id="tmpl", origin=(0.0, 0.0, 0.0),
                              element_offsets=tuple(respeaker6_offsets())),),
    )


def build_database(profiles: list[DroneProfile] | None = None, seed: int = 7,
                   sample_rate: float = 48000.0) -> ProfileDatabase:
    """Generate centroid templates from short simulated hover captures.

    Deterministic in (profiles, seed): rebuilt databases are identical.
    """
    from .flightplan import plan_flight
    from .synth import synthesize

    profiles = list(default_profiles().values()) if profiles is None else profiles
    entries = []
    for profile in profiles:
        scen = _template_scenario(profile, seed)
        audio = synthesize(plan_flight(scen), scen)["tmpl"]
        mono = audio.mean(axis=1).astype(np.float64)
        band = default_band(profile, sample_rate)
        centroid = feature_vector(_bandpass(mono, band, sample_rate), sample_rate)
        entries.append(DbEntry(profile=profile, band=band, centroid=centroid))
    return ProfileDatabase(entries)
