"""File formats: multi-channel WAV, truth/track CSV, evaluation reports."""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.io import wavfile

from .pipeline import TrackPoint


def write_wav(path: str | Path, audio: np.ndarray, sample_rate: float) -> None:
    """32-bit float multi-channel WAV, written atomically."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".wav.tmp")
    os.close(fd)
    try:
        wavfile.write(tmp, int(sample_rate), audio.astype(np.float32))
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def read_wav(path: str | Path) -> tuple[float, np.ndarray]:
    rate, data = wavfile.read(path)
    if data.ndim == 1:
        data = data[:, None]
    return float(rate), data.astype(np.float32)


def write_text_atomic(path: str | Path, text: str) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    with os.fdopen(fd, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def track_to_csv(points: list[TrackPoint], multi: bool = False) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf)
    header = ["t", "x", "y", "z", "los", "n_hypotheses"]
    if multi:
        header.append("source")
    writer.writerow(header)
    for p in points:
        row = [f"{p.t:.3f}"] + [f"{v:.6f}" for v in p.position]
        row += [str(int(p.los)), str(p.n_hypotheses)]
        if multi:
            row.append(p.source)
        writer.writerow(row)
    return buf.getvalue()


def read_positions_csv(path: str | Path) -> tuple[np.ndarray, np.ndarray, dict]:
    """Read any CSV with t,x,y,z leading columns; returns (t, xyz, extras)."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        rows = list(reader)
    if not rows:
        raise ValueError(f"{path}: empty CSV")
    for col in ("t", "x", "y", "z"):
        if col not in rows[0]:
            raise ValueError(f"{path}: missing column {col!r}")
    t = np.array([float(r["t"]) for r in rows])
    xyz = np.array([[float(r["x"]), float(r["y"]), float(r["z"])] for r in rows])
    extras = {k: [r[k] for r in rows] for k in rows[0] if k not in "txyz"}
    return t, xyz, extras


@dataclass
class RunReport:
    mean_error: float
    errors: np.ndarray          # per aligned step
    times: np.ndarray
    per_regime: dict[str, float] = field(default_factory=dict)
    runtime_s: float = 0.0

    def cdf(self) -> tuple[np.ndarray, np.ndarray]:
        e = np.sort(self.errors)
        p = np.arange(1, len(e) + 1) / len(e)
        return e, p

    def to_json(self) -> str:
        e, p = self.cdf()
        return json.dumps({
            "mean_error_m": self.mean_error,
            "median_error_m": float(np.median(self.errors)),
            "p95_error_m": float(np.percentile(self.errors, 95)),
            "steps": int(len(self.errors)),
            "per_regime_mean_m": self.per_regime,
            "runtime_s": self.runtime_s,
            "cdf": {"error_m": e.round(4).tolist(), "p": p.round(4).tolist()},
        }, indent=2)

    def cdf_csv(self) -> str:
        e, p = self.cdf()
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(["error_m", "p"])
        for ei, pi in zip(e, p):
            writer.writerow([f"{ei:.4f}", f"{pi:.4f}"])
        return buf.getvalue()


def evaluate(track_t: np.ndarray, track_xyz: np.ndarray, truth_t: np.ndarray,
             truth_xyz: np.ndarray, align_tol: float = 0.05,
             truth_extras: dict | None = None) -> RunReport:
    """Nearest-timestamp alignment and per-step 3-D Euclidean errors."""
    start = time.perf_counter()
    idx = np.searchsorted(truth_t, track_t)
    idx = np.clip(idx, 1, len(truth_t) - 1)
    before = np.abs(truth_t[idx - 1] - track_t)
    after = np.abs(truth_t[idx] - track_t)
    nearest = np.where(before < after, idx - 1, idx)
    ok = np.abs(truth_t[nearest] - track_t) <= align_tol + 1e-9
    if not ok.any():
        raise ValueError("no overlapping time range between track and truth")
    errors = np.linalg.norm(track_xyz[ok] - truth_xyz[nearest[ok]], axis=1)
    report = RunReport(mean_error=float(errors.mean()), errors=errors,
                       times=track_t[ok])
    if truth_extras:
        los_cols = [k for k in truth_extras if k.startswith("los_")]
        if los_cols:
            los = np.array([[int(v) for v in truth_extras[k]] for k in los_cols]).T
            los = los[nearest[ok]]
            regime = np.where(los.all(axis=1), "LoS",
                              np.where(los.any(axis=1), "PLoS", "NLoS"))
            for name in ("LoS", "PLoS", "NLoS"):
                mask = regime == name
                if mask.any():
                    report.per_regime[name] = float(errors[mask].mean())
    report.runtime_s = time.perf_counter() - start
    return report
