"""Multi-channel audio synthesis for a planned flight.

Each rotor emits its blade-passing fundamental plus harmonics with a
geometric amplitude decay; amplitude scales with the square of the rotor
frequency. Propagation to every microphone applies the geometric delay and
1/r spreading. When an obstacle cuts the direct path to an array, the
direct path is replaced by a single dominant reflected path from the image
point behind the obstruction face, with extra attenuation and a per-frame
wander of the image point (large when the drone moves, small when it
hovers) that reproduces the erratic NLoS bearings seen on real arrays.

Also mixed in: band-limited noise sources, the 16-20 kHz pseudo-random sync
beacon, per-microphone white sensor noise, and each array's clock skew.
All randomness derives from the scenario seed.
"""

from __future__ import annotations

import numpy as np
from scipy.signal import butter, sosfiltfilt

from . import SPEED_OF_SOUND
from .flightplan import TAU_SIM, GroundTruth
from .geometry import ArrayGeometry, mirror_across_face, segments_blocked
from .scenario import Scenario, ScenarioError

HARMONIC_COUNT = 5
HARMONIC_DECAY = 0.6
NLOS_EXTRA_ATT_DB = 6.0
JITTER_BASE_M = 0.12        # image-point wander while stationary
JITTER_PER_SPEED = 1.1      # extra wander per m/s of drone speed
JITTER_OUTLIER_P = 0.12     # fraction of frames with a wild multipath flip
JITTER_OUTLIER_SCALE = 4.0
ANALYSIS_HOP = 0.1          # s, update interval of the tracking pipeline
P_REF = 20e-6               # Pa at 0 dB SPL
MIN_RANGE = 0.1             # m, guards the 1/r law


def spl_to_pa(spl_db: float) -> float:
    return P_REF * 10.0 ** (spl_db / 20.0)


def cubic_interp(signal: np.ndarray, positions: np.ndarray) -> np.ndarray:
    """4-point Lagrange interpolation of `signal` at fractional sample positions.

    Positions outside the signal evaluate to zero.
    """
    n = len(signal)
    idx = np.floor(positions).astype(np.int64)
    f = positions - idx
    valid = (positions >= 0.0) & (positions <= n - 1)
    base = np.clip(idx, 1, n - 3)
    f = f + (idx - base)  # shift fraction when the index got clipped
    sm1 = signal[base - 1]
    s0 = signal[base]
    s1 = signal[base + 1]
    s2 = signal[base + 2]
    out = (
        sm1 * (-f * (f - 1.0) * (f - 2.0) / 6.0)
        + s0 * ((f + 1.0) * (f - 1.0) * (f - 2.0) / 2.0)
        + s1 * (-(f + 1.0) * f * (f - 2.0) / 2.0)
        + s2 * ((f + 1.0) * f * (f - 1.0) / 6.0)
    )
    out[~valid] = 0.0
    return out


def _emission_waveform(truth: GroundTruth, scenario: Scenario) -> np.ndarray:
    """Sound of all rotors at 1 m, on the output sample grid."""
    profile = scenario.profile
    fs = scenario.sample_rate
    n48 = round(truth.duration * fs)
    t48 = np.arange(n48) / fs

    decay = HARMONIC_DECAY ** np.arange(HARMONIC_COUNT)
    amp0 = spl_to_pa(profile.spl_1m) * np.sqrt(
        2.0 / (profile.rotor_count * np.sum(decay**2)))

    rng = scenario.substream("rotor-phases")
    phases0 = rng.uniform(0.0, 2.0 * np.pi, profile.rotor_count)

    out = np.zeros(n48)
    for i in range(profile.rotor_count):
        f_rotor = np.interp(t48, truth.t, truth.rotor_freq[:, i])
        bpf = profile.blade_count * f_rotor
        phase = 2.0 * np.pi * np.cumsum(bpf) / fs
        amp = amp0 * (f_rotor / profile.hover_freq) ** 2
        for k in range(1, HARMONIC_COUNT + 1):
            out += amp * decay[k - 1] * np.sin(k * phase + phases0[i])
    return out


def _effective_source(truth: GroundTruth, scenario: Scenario,
                      array_index: int) -> np.ndarray:
    """Apparent source position seen by one array, on the TAU_SIM grid.

    Line of sight: the true drone position. Blocked: the image point across
    the obstruction face, plus the per-frame wander.
    """
    arr = scenario.arrays[array_index]
    pos = truth.position
    eff = pos.copy()
    blocked_any = ~truth.los[:, array_index]
    if not blocked_any.any():
        return eff

    origin = np.asarray(arr.origin)
    remaining = blocked_any.copy()
    for box in scenario.obstacles:
        hit = remaining & segments_blocked(pos, origin, box)
        if hit.any():
            eff[hit] = mirror_across_face(pos[hit], box, origin)
            remaining &= ~hit

    # Per-analysis-frame wander of the image point.
    rng = scenario.substream("nlos-jitter", arr.id)
    knot_t = np.arange(0.0, truth.duration + ANALYSIS_HOP, ANALYSIS_HOP)
    speed = np.interp(knot_t, truth.t, np.linalg.norm(truth.velocity, axis=1))
    sigma = JITTER_BASE_M + JITTER_PER_SPEED * speed
    sigma = sigma * np.where(rng.random(len(knot_t)) < JITTER_OUTLIER_P,
                             JITTER_OUTLIER_SCALE, 1.0)
    knots = rng.standard_normal((len(knot_t), 3)) * sigma[:, None]
    jitter = np.stack([np.interp(truth.t, knot_t, knots[:, d]) for d in range(3)],
                      axis=1)
    eff[blocked_any] += jitter[blocked_any]
    return eff


def beacon_waveform(scenario: Scenario) -> np.ndarray:
    """The fixed pseudo-random beacon burst at 1 m, unit schedule-independent."""
    beacon = scenario.beacon
    if beacon is None:
        raise ScenarioError("scenario has no beacon")
    fs = scenario.sample_rate
    if fs < 2.0 * beacon.band[1]:
        raise ScenarioError(
            f"sample_rate {fs} Hz cannot represent the {beacon.band[1]:.0f} Hz beacon")
    rng = scenario.substream("beacon")
    n = round(beacon.length * fs)
    white = rng.standard_normal(n)
    sos = butter(8, beacon.band, btype="bandpass", fs=fs, output="sos")
    pn = sosfiltfilt(sos, white)
    pn *= spl_to_pa(beacon.spl) / np.sqrt(np.mean(pn**2))
    return pn


def beacon_times(scenario: Scenario, duration: float) -> np.ndarray:
    """Emission start times within the given duration."""
    b = scenario.beacon
    if b is None:
        return np.array([])
    starts = np.arange(b.start, duration - b.length, b.period)
    return starts


def emit_beacon(scenario: Scenario, t: float) -> np.ndarray:
    """Beacon waveform if an emission is active at time t."""
    b = scenario.beacon
    starts = beacon_times(scenario, t + (b.length if b else 0.0) + 1.0)
    active = (starts <= t) & (t < starts + b.length)
    if not active.any():
        raise ScenarioError(f"no beacon emission active at t={t}")
    return beacon_waveform(scenario)


def _noise_waveform(scenario: Scenario, index: int, n48: int) -> np.ndarray:
    src = scenario.noise_sources[index]
    fs = scenario.sample_rate
    rng = scenario.substream("noise-source", index)
    white = rng.standard_normal(n48)
    lo = max(1.0, src.center_freq - src.bandwidth / 2.0)
    hi = min(fs / 2.0 - 1.0, src.center_freq + src.bandwidth / 2.0)
    sos = butter(4, [lo, hi], btype="bandpass", fs=fs, output="sos")
    shaped = sosfiltfilt(sos, white)
    return shaped * (spl_to_pa(src.spl) / np.sqrt(np.mean(shaped**2)))


def _propagate_moving(emission: np.ndarray, src_path: np.ndarray, truth_t: np.ndarray,
                      mic: np.ndarray, t_query: np.ndarray, fs: float,
                      gain_extra: np.ndarray | float = 1.0) -> np.ndarray:
    """Delay-and-attenuate a moving point source to one microphone."""
    r = np.linalg.norm(src_path - mic[None, :], axis=1)
    r = np.maximum(r, MIN_RANGE)
    delay = np.interp(t_query, truth_t, r / SPEED_OF_SOUND)
    gain = np.interp(t_query, truth_t, gain_extra / r)
    return gain * cubic_interp(emission, (t_query - delay) * fs)


def _propagate_static(waveform: np.ndarray, src: np.ndarray, mic: np.ndarray,
                      clock_offset: float, fs: float) -> np.ndarray:
    """Exact constant fractional delay via an FFT phase ramp.

    Polynomial interpolation would distort components near Nyquist (the
    16-20 kHz beacon); the spectral shift is exact for any band.
    """
    from scipy.fft import next_fast_len

    r = max(float(np.linalg.norm(np.asarray(src) - mic)), MIN_RANGE)
    shift = (r / SPEED_OF_SOUND + clock_offset) * fs  # samples, may be fractional
    n = len(waveform)
    nfft = next_fast_len(n + int(np.ceil(abs(shift))) + 4)
    spec = np.fft.rfft(waveform, n=nfft)
    k = np.arange(len(spec))
    spec *= np.exp(-2j * np.pi * k * shift / nfft)
    return np.fft.irfft(spec, n=nfft)[:n] / r


def synthesize(truth: GroundTruth, scenario: Scenario) -> dict[str, np.ndarray]:
    """Render per-array multi-channel audio; returns {array_id: (n, C) float32}."""
    fs = scenario.sample_rate
    n48 = round(truth.duration * fs)
    emission = _emission_waveform(truth, scenario)

    noise_waves = [_noise_waveform(scenario, i, n48)
                   for i in range(len(scenario.noise_sources))]
    beacon_stream = None
    if scenario.beacon is not None:
        pn = beacon_waveform(scenario)
        beacon_stream = np.zeros(n48)
        for t0 in beacon_times(scenario, truth.duration):
            i0 = round(t0 * fs)
            beacon_stream[i0:i0 + len(pn)] += pn[: n48 - i0]

    nlos_gain = 10.0 ** (-NLOS_EXTRA_ATT_DB / 20.0)
    sensor_sigma = spl_to_pa(scenario.profile.spl_1m) * 10.0 ** (-scenario.snr_floor / 20.0)

    out: dict[str, np.ndarray] = {}
    for j, arr in enumerate(scenario.arrays):
        src_path = _effective_source(truth, scenario, j)
        gain_extra = np.where(truth.los[:, j], 1.0, nlos_gain)
        mics = arr.element_positions()
        t_query = np.arange(n48) / fs - arr.clock_offset
        channels = np.empty((n48, arr.n_elements), dtype=np.float32)
        rng_sensor = scenario.substream("sensor-noise", arr.id)
        for m, mic in enumerate(mics):
            sig = _propagate_moving(emission, src_path, truth.t, mic, t_query, fs,
                                    gain_extra)
            for wave, src in zip(noise_waves, scenario.noise_sources):
                sig += _propagate_static(wave, src.position, mic,
                                         arr.clock_offset, fs)
            if beacon_stream is not None:
                sig += _propagate_static(beacon_stream, scenario.beacon.position,
                                         mic, arr.clock_offset, fs)
            sig += rng_sensor.normal(0.0, sensor_sigma, n48)
            channels[:, m] = sig.astype(np.float32)
        out[arr.id] = channels
    return out
