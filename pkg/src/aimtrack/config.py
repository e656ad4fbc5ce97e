"""Tunable thresholds and filter parameters for the tracking pipeline.

Defaults were calibrated once against the bundled simulator scenarios; every
value can be overridden from a JSON file passed via --config or the
AIM_CONFIG environment variable.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass
from pathlib import Path

ENV_VAR = "AIM_CONFIG"


@dataclass
class PipelineConfig:
    # Spectral front end
    window_len: int = 8192
    hop: float = 0.1                 # s, location update interval
    noise_floor_db: float = 6.0
    delta_merge_hz: float = 4.0

    # DoA front end
    doa_window: int = 10             # estimates per sliding window (1 s at 10 Hz)
    theta_nlos: float = 0.02         # rad^2, smoothed-azimuth variance => NLoS
    theta_motion: float = 6e-4       # rad^2, stability split for Table-style rows
    residual_max: float = 1.5        # samples, high-residual flag
    zenith_guard_deg: float = 3.0    # suppress tan-based update near zenith
    grazing_guard_deg: float = 3.0   # and near grazing elevation

    # Tracker
    sigma_doa_deg: float = 2.5       # typical bearing error -> measurement R
    sigma_xy_floor: float = 0.15     # m
    sigma_z: float = 0.2             # m
    process_sigma: float = 0.05      # m per step, baseline random walk
    kinematic_frac: float = 0.15     # fraction of dynamics displacement -> Q
    gate_sigma: float = 4.0          # innovation gate, standard deviations
    collapse_min_sep: float = 0.4    # m, hypothesis separation before collapse
    min_init_fixes: int = 3
    class_vote: int = 3              # motion-class majority vote depth

    # Multi-array
    fuse_cutoff_hz: float = 0.5
    fuse_window_s: float = 2.0
    tdoa_guard_samples: float = 4.0
    tdoa_search_radius_s: float = 1.2e-3  # around the predicted inter-array delay
    solve_residual_max_m: float = 0.25
    beacon_corr_min: float = 0.2

    # Identification
    ident_floor: float = 0.75

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2)

    @classmethod
    def from_file(cls, path: str | Path) -> "PipelineConfig":
        doc = json.loads(Path(path).read_text())
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**doc)

    @classmethod
    def resolve(cls, path: str | Path | None = None) -> "PipelineConfig":
        """Explicit path, else AIM_CONFIG, else defaults."""
        if path is not None:
            return cls.from_file(path)
        env = os.environ.get(ENV_VAR)
        if env:
            return cls.from_file(env)
        return cls()
