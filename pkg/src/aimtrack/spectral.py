"""Frequency-domain front end: STFT, harmonic peak grouping, BPF, MFCC.

The blade-passing frequency (BPF) estimate is the amplitude-weighted average
of the fundamental and its harmonics, each divided by its harmonic index.
Harmonics carry real weight here on purpose: low-frequency ambient noise
pollutes the fundamental long before it touches the upper harmonics, so the
weighted estimate degrades gracefully.

Peak clusters are ranked by how many distinct harmonic indices support them
before raw amplitude, which keeps a loud narrowband interferer from posing
as a second rotor group.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.fft import dct

from .errors import NoSignalError
from .profiles import DroneProfile
from .synth import HARMONIC_COUNT

WINDOW_LEN = 8192            # samples; 170 ms at 48 kHz, 5.86 Hz bins
NOISE_FLOOR_DB = 6.0         # peaks must clear the band median by this much
DELTA_MERGE_HZ = 4.0         # closer fundamental groups collapse into one
DELTA_CLUSTER_HZ = 3.0       # candidate fundamentals within this join a cluster
GROUP_REL_WEIGHT_MIN = 0.2   # 2nd group must carry this fraction of the 1st
FUND_BAND = (0.70, 1.45)     # fundamental search band, x hover BPF


@dataclass(frozen=True)
class MultiChannelFrame:
    """One analysis window of synchronized samples from one array."""

    array_id: str
    t_start: float
    sample_rate: float
    channels: np.ndarray  # (C, L)

    def __post_init__(self):
        c, length = self.channels.shape
        if c not in (4, 6):
            raise ValueError(f"channel count must be 4 or 6, got {c}")
        if length & (length - 1):
            raise ValueError(f"window length must be a power of two, got {length}")
        if not np.all(np.isfinite(self.channels)):
            raise ValueError("non-finite samples in frame")

    @property
    def mean_channel(self) -> np.ndarray:
        return self.channels.mean(axis=0)


@dataclass(frozen=True)
class Peak:
    freq: float
    amplitude: float
    harmonic_index: int | None = None
    group_index: int | None = None


@dataclass(frozen=True)
class SpectralPeaks:
    peaks: tuple[Peak, ...]
    fundamental_groups: tuple[tuple[float, float], ...]  # (bpf_est, weight), by freq

    @property
    def group_freqs(self) -> tuple[float, ...]:
        return tuple(g[0] for g in self.fundamental_groups)


def frames_from_audio(audio: np.ndarray, sample_rate: float, array_id: str,
                      hop: float, window_len: int = WINDOW_LEN):
    """Yield MultiChannelFrames hopping through (n, C) audio."""
    hop_n = round(hop * sample_rate)
    n = len(audio)
    start = 0
    while start + window_len <= n:
        yield MultiChannelFrame(
            array_id=array_id,
            t_start=start / sample_rate,
            sample_rate=sample_rate,
            channels=np.ascontiguousarray(audio[start:start + window_len].T,
                                          dtype=np.float64),
        )
        start += hop_n


def magnitude_spectrum(x: np.ndarray, sample_rate: float):
    """Hann-windowed amplitude spectrum; returns (freqs, amplitude)."""
    n = len(x)
    win = np.hanning(n)
    spec = np.abs(np.fft.rfft(x * win)) * (2.0 / win.sum())
    freqs = np.fft.rfftfreq(n, d=1.0 / sample_rate)
    return freqs, spec


def stft_magnitude(frame: MultiChannelFrame):
    """Magnitude spectrum of the channel-averaged signal."""
    return magnitude_spectrum(frame.mean_channel, frame.sample_rate)


def _refine_peak(freqs: np.ndarray, mag: np.ndarray, i: int) -> tuple[float, float]:
    """Quadratic interpolation of a spectral peak on the log-magnitude."""
    if i <= 0 or i >= len(mag) - 1:
        return float(freqs[i]), float(mag[i])
    a, b, c = np.log(mag[i - 1] + 1e-30), np.log(mag[i] + 1e-30), np.log(mag[i + 1] + 1e-30)
    denom = a - 2.0 * b + c
    delta = 0.0 if abs(denom) < 1e-12 else 0.5 * (a - c) / denom
    delta = float(np.clip(delta, -0.5, 0.5))
    bin_hz = freqs[1] - freqs[0]
    amp = float(np.exp(b - 0.25 * (a - c) * delta))
    return float(freqs[i] + delta * bin_hz), amp


def detect_peaks(freqs: np.ndarray, mag: np.ndarray, lo: float, hi: float,
                 floor_db: float = NOISE_FLOOR_DB) -> list[tuple[float, float]]:
    """Local maxima above the band-median noise floor, refined to sub-bin."""
    sel = (freqs >= lo) & (freqs <= hi)
    if not sel.any():
        return []
    floor = np.median(mag[sel]) * 10.0 ** (floor_db / 20.0)
    idx = np.flatnonzero(sel)
    out = []
    for i in idx:
        if mag[i] <= floor:
            continue
        if 0 < i < len(mag) - 1 and mag[i] >= mag[i - 1] and mag[i] > mag[i + 1]:
            out.append(_refine_peak(freqs, mag, i))
    return out


def estimate_bpf_groups(freqs: np.ndarray, mag: np.ndarray, profile: DroneProfile,
                        delta_merge: float = DELTA_MERGE_HZ) -> SpectralPeaks:
    """Cluster spectral peaks into 1 or 2 harmonic families around the BPF.

    Raises NoSignalError when nothing rises above the noise floor in the
    search band.
    """
    bpf0 = profile.bpf_hover
    f_lo, f_hi = FUND_BAND[0] * bpf0, FUND_BAND[1] * bpf0
    peaks = detect_peaks(freqs, mag, 0.6 * bpf0,
                         min((HARMONIC_COUNT + 0.5) * f_hi, freqs[-1]))
    if not peaks:
        raise NoSignalError("no spectral peaks above the noise floor")

    # Every peak votes for the fundamentals it could be a harmonic of.
    candidates = []  # (f0, amplitude, harmonic_index, peak_freq)
    for f_p, a_p in peaks:
        for k in range(1, HARMONIC_COUNT + 1):
            f0 = f_p / k
            if f_lo <= f0 <= f_hi:
                candidates.append((f0, a_p, k, f_p))
    if not candidates:
        raise NoSignalError("no peaks consistent with the profile BPF band")

    remaining = sorted(candidates, key=lambda c: (-c[1], c[0]))
    clusters = []  # dict(f0, weight, members, kset)
    while remaining:
        seed = remaining[0]
        members = [c for c in remaining if abs(c[0] - seed[0]) <= DELTA_CLUSTER_HZ]
        remaining = [c for c in remaining if abs(c[0] - seed[0]) > DELTA_CLUSTER_HZ]
        weight = sum(c[1] for c in members)
        f0 = sum(c[0] * c[1] for c in members) / weight
        clusters.append({
            "f0": f0,
            "weight": weight,
            "members": members,
            "kset": {c[2] for c in members},
        })

    # Harmonic support beats raw amplitude; a narrowband interferer shows up
    # with a single harmonic index only.
    clusters.sort(key=lambda c: (-min(len(c["kset"]), 2), -c["weight"], c["f0"]))

    groups = [clusters[0]]
    for cand in clusters[1:]:
        near = next((g for g in groups if abs(g["f0"] - cand["f0"]) <= delta_merge), None)
        if near is not None:
            total = near["weight"] + cand["weight"]
            near["f0"] = (near["f0"] * near["weight"] + cand["f0"] * cand["weight"]) / total
            near["weight"] = total
            near["members"] += cand["members"]
            near["kset"] |= cand["kset"]
        elif (len(groups) < 2 and len(cand["kset"]) >= min(len(groups[0]["kset"]), 2)
              and cand["weight"] >= GROUP_REL_WEIGHT_MIN * groups[0]["weight"]
              and _shared_weight(cand, groups[0]) < 0.5 * cand["weight"]):
            groups.append(cand)
    groups.sort(key=lambda g: g["f0"])

    if len(groups) == 2:
        _refine_pair(groups, candidates, freqs[1] - freqs[0])

    out_peaks = []
    for gi, g in enumerate(groups):
        for f0c, a_p, k, f_p in g["members"]:
            out_peaks.append(Peak(freq=f_p, amplitude=a_p, harmonic_index=k,
                                  group_index=gi))
    out_peaks.sort(key=lambda p: p.freq)
    return SpectralPeaks(
        peaks=tuple(out_peaks),
        fundamental_groups=tuple((g["f0"], g["weight"]) for g in groups),
    )


def _shared_weight(cand: dict, group: dict) -> float:
    """Weight of the candidate's members whose source peak also feeds `group`.

    A genuine second rotor group radiates its own spectral lines; a cluster
    living off sub-harmonic aliases of the first group's peaks does not.
    """
    owned = {round(c[3], 1) for c in group["members"]}
    return sum(c[1] for c in cand["members"] if round(c[3], 1) in owned)


def _refine_pair(groups: list[dict], candidates: list[tuple], bin_hz: float,
                 resolve_bins: float = 2.2) -> None:
    """Re-estimate two close fundamentals from the harmonics that resolve them.

    Two lines separated by df merge below ~2 bins at the fundamental but
    separate at harmonic k once k*df clears the window mainlobe; blended
    low-order peaks would otherwise drag both weighted averages together.
    """
    f_a, f_b = groups[0]["f0"], groups[1]["f0"]
    sep = abs(f_b - f_a)
    if sep < 1e-9:
        return
    k_min = int(np.ceil(resolve_bins * bin_hz / sep))
    usable = [c for c in candidates if c[2] >= k_min
              and min(abs(c[0] - f_a), abs(c[0] - f_b)) <= DELTA_CLUSTER_HZ]
    if not usable:
        return
    for g, f_own, f_other in ((groups[0], f_a, f_b), (groups[1], f_b, f_a)):
        mine = [c for c in usable if abs(c[0] - f_own) < abs(c[0] - f_other)]
        if not mine:
            continue
        weight = sum(c[1] for c in mine)
        g["f0"] = sum(c[0] * c[1] for c in mine) / weight
        g["members"] = mine
        g["kset"] = {c[2] for c in mine}
    groups.sort(key=lambda g: g["f0"])


def peak_group_count(peaks: SpectralPeaks, delta_merge: float = DELTA_MERGE_HZ) -> int:
    """1 or 2 fundamental groups; groups closer than delta_merge count as one."""
    groups = peaks.fundamental_groups
    if len(groups) < 2:
        return 1
    return 2 if abs(groups[1][0] - groups[0][0]) > delta_merge else 1


def _mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f) / 700.0)


def _mel_inv(m):
    return 700.0 * (10.0 ** (np.asarray(m) / 2595.0) - 1.0)


def mel_filterbank(sample_rate: float, n_fft: int, n_mels: int,
                   fmin: float = 50.0, fmax: float | None = None) -> np.ndarray:
    if fmax is None:
        fmax = min(8000.0, 0.475 * sample_rate)
    pts = _mel_inv(np.linspace(_mel(fmin), _mel(fmax), n_mels + 2))
    bins = np.fft.rfftfreq(n_fft, d=1.0 / sample_rate)
    bank = np.zeros((n_mels, len(bins)))
    for i in range(n_mels):
        left, center, right = pts[i], pts[i + 1], pts[i + 2]
        up = (bins - left) / (center - left)
        down = (right - bins) / (right - center)
        bank[i] = np.clip(np.minimum(up, down), 0.0, None)
    return bank


def mfcc(signal: np.ndarray, sample_rate: float, n_mels: int = 20,
         n_coeffs: int = 13, win: float = 0.025, hop: float = 0.010) -> np.ndarray:
    """Normalized mel-frequency cepstra, shape (n_coeffs, n_frames).

    The log-energy term (DCT coefficient 0) is dropped and each frame vector
    is L2-normalized, which makes the features invariant to amplitude scaling.
    """
    win_n = round(win * sample_rate)
    hop_n = round(hop * sample_rate)
    if len(signal) < win_n:
        raise ValueError("signal shorter than one MFCC analysis window")
    n_frames = 1 + (len(signal) - win_n) // hop_n
    window = np.hanning(win_n)
    bank = mel_filterbank(sample_rate, win_n, n_mels)
    idx = np.arange(win_n)[None, :] + hop_n * np.arange(n_frames)[:, None]
    frames = signal[idx] * window
    power = np.abs(np.fft.rfft(frames, axis=1)) ** 2
    mel_energy = np.log(power @ bank.T + 1e-20)
    cep = dct(mel_energy, type=2, norm="ortho", axis=1)[:, 1:n_coeffs + 1]
    norms = np.linalg.norm(cep, axis=1, keepdims=True)
    cep = cep / np.maximum(norms, 1e-12)
    return cep.T
