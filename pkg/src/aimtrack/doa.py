"""Spatial front end: GCC-PHAT delays, far-field bearing fit, IQR smoothing.

Per-pair time delays come from the phase transform of the cross-spectrum,
optionally band-limited and softly weighted by cross-magnitude so that empty
noise bins do not dilute the phase information of the harmonic lines. The
bearing is a plane-wave least-squares fit over all element pairs, which
instantiates the two-ratio closed form of a square array but works for any
planar layout.

A sliding window per array applies the interquartile-range rule to discard
bearing outliers, median-smooths the survivors, and exposes the variance of
the smoothed azimuth/elevation: low variance on both means the source holds
its position (hover/yaw row), and an azimuth variance beyond a larger
threshold flags a blocked line of sight.
"""

from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass, replace

import numpy as np

from . import SPEED_OF_SOUND
from .errors import NoSignalError
from .geometry import ArrayGeometry

MASK_MEDIAN_MULT = 24.0  # soft spectral mask knee, x median cross-magnitude


class Stability(enum.Enum):
    STABLE = "stable"
    UNSTABLE = "unstable"


@dataclass(frozen=True)
class DoAEstimate:
    array_id: str
    t: float
    azimuth: float     # rad, [-pi, pi), world frame
    elevation: float   # rad, [0, pi/2], pi/2 = straight above
    residual: float    # plane-wave fit error, samples RMS
    smoothed: bool = False

    def direction(self) -> np.ndarray:
        ce = np.cos(self.elevation)
        return np.array([ce * np.cos(self.azimuth), ce * np.sin(self.azimuth),
                         np.sin(self.elevation)])


def wrap_angle(a):
    """Wrap to [-pi, pi)."""
    return (np.asarray(a) + np.pi) % (2.0 * np.pi) - np.pi


def gcc_phat_corr(x: np.ndarray, y: np.ndarray, sample_rate: float,
                  band: tuple[float, float] | None = None,
                  soft_mask: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """PHAT-weighted cross-correlation; returns (lags in seconds, correlation)."""
    if np.sqrt(np.mean(x**2)) < 1e-12 or np.sqrt(np.mean(y**2)) < 1e-12:
        raise NoSignalError("zero-energy channel")
    n = len(x) + len(y)
    # Hann window: harmonic-line leakage otherwise floods the between-line
    # bins with constant-phase energy that votes for zero lag after PHAT.
    wx = x * np.hanning(len(x))
    wy = y * np.hanning(len(y))
    X = np.fft.rfft(wx, n=n)
    Y = np.fft.rfft(wy, n=n)
    R = np.conj(X) * Y
    mag = np.abs(R)
    in_band = np.ones(len(mag), dtype=bool)
    if band is not None:
        freqs = np.fft.rfftfreq(n, d=1.0 / sample_rate)
        in_band = (freqs >= band[0]) & (freqs <= band[1])
    weight = in_band.astype(float)
    if soft_mask and in_band.any():
        # Whitened bins all carry equal magnitude, so noise-only bins would
        # outvote the few harmonic lines; squash bins near the band median.
        med = float(np.median(mag[in_band])) + 1e-30
        weight = weight * (mag / (mag + MASK_MEDIAN_MULT * med)) ** 2
    cc = np.fft.irfft(R / (mag + 1e-30) * weight, n=n)
    half = n // 2
    cc = np.concatenate([cc[-half:], cc[:half + 1]])
    lags = np.arange(-half, half + 1) / sample_rate
    return lags, cc


def _parabolic(cc: np.ndarray, i: int) -> float:
    if i <= 0 or i >= len(cc) - 1:
        return 0.0
    denom = cc[i - 1] - 2.0 * cc[i] + cc[i + 1]
    if abs(denom) < 1e-18:
        return 0.0
    return float(np.clip(0.5 * (cc[i - 1] - cc[i + 1]) / denom, -0.5, 0.5))


def gcc_phat_delay(chan_i: np.ndarray, chan_j: np.ndarray, sample_rate: float,
                   max_tau: float | None = None,
                   band: tuple[float, float] | None = None,
                   soft_mask: bool = True,
                   prior: tuple[float, float] | None = None) -> float:
    """Delay of chan_j relative to chan_i, seconds, sub-sample interpolated.

    `max_tau` bounds the search to the physical delay range; `prior` is an
    optional (expected delay, search radius) window that picks the correlation
    peak nearest a prediction when the source spectrum is periodic.
    """
    lags, cc = gcc_phat_corr(chan_i, chan_j, sample_rate, band, soft_mask)
    sel = np.ones(len(lags), dtype=bool)
    if max_tau is not None:
        sel &= np.abs(lags) <= max_tau
    if not sel.any():
        sel = np.abs(lags) == np.min(np.abs(lags))
    idx = np.flatnonzero(sel)
    score = cc[idx]
    if prior is not None:
        # Periodic (harmonic-line) sources produce a comb of near-equal
        # correlation peaks; a soft Gaussian prior around the predicted delay
        # keeps the geometrically consistent one on top.
        center, radius = prior
        score = score * np.exp(-0.5 * ((lags[idx] - center) / radius) ** 2)
    i = idx[np.argmax(score)]
    return float(lags[i] + _parabolic(cc, i) / sample_rate)


def estimate_doa(frame, geometry: ArrayGeometry,
                 band: tuple[float, float] | None = None,
                 c: float = SPEED_OF_SOUND) -> DoAEstimate:
    """Far-field azimuth/elevation of the dominant source at one array.

    Least-squares plane-wave fit over all element pairs: find the unit
    direction u minimizing sum of (tau_ij + u.(p_j - p_i)/c)^2. Planar arrays
    observe only the horizontal direction components; the vertical one comes
    from the unit-norm constraint with the source above the array plane.
    """
    pts = geometry.element_positions()
    m = len(pts)
    fs = frame.sample_rate
    guard = 2.0 / fs
    rows, rhs = [], []
    for i in range(m):
        for j in range(i + 1, m):
            dp = pts[j] - pts[i]
            tau = gcc_phat_delay(frame.channels[i], frame.channels[j], fs,
                                 max_tau=float(np.linalg.norm(dp)) / c + guard,
                                 band=band)
            rows.append(dp[:2] / c)
            rhs.append(-tau)
    a_mat = np.asarray(rows)
    b = np.asarray(rhs)
    u_xy, *_ = np.linalg.lstsq(a_mat, b, rcond=None)
    horiz = float(np.linalg.norm(u_xy))
    if horiz > 1.0:
        u_xy = u_xy / horiz
        horiz = 1.0
    u_z = float(np.sqrt(max(0.0, 1.0 - horiz**2)))
    residual = float(np.sqrt(np.mean((a_mat @ u_xy - b) ** 2)) * fs)
    azimuth = float(wrap_angle(np.arctan2(u_xy[1], u_xy[0])))
    elevation = float(np.arctan2(u_z, horiz))
    return DoAEstimate(array_id=geometry.id, t=frame.t_start, azimuth=azimuth,
                       elevation=elevation, residual=residual)


def _circular_center(angles: np.ndarray) -> float:
    return float(np.arctan2(np.sin(angles).sum(), np.cos(angles).sum()))


def _iqr_keep(values: np.ndarray) -> np.ndarray:
    q1, q3 = np.percentile(values, [25.0, 75.0])
    iqr = q3 - q1
    return (values >= q1 - 1.5 * iqr) & (values <= q3 + 1.5 * iqr)


def _moving_median(values: np.ndarray, k: int = 3) -> np.ndarray:
    half = k // 2
    out = np.empty_like(values)
    for i in range(len(values)):
        lo, hi = max(0, i - half), min(len(values), i + half + 1)
        out[i] = np.median(values[lo:hi])
    return out


@dataclass
class SmoothedSeries:
    azimuth: np.ndarray      # smoothed, only surviving samples
    elevation: np.ndarray
    kept_az: np.ndarray      # survivor masks over the raw window
    kept_el: np.ndarray
    var_azimuth: float
    var_elevation: float
    low_confidence: bool


def iqr_smooth(window: "DoAWindow") -> SmoothedSeries:
    """IQR outlier rejection + moving-median smoothing over the window.

    Azimuth is treated circularly: samples are unwrapped about the window's
    circular center before the quartiles are taken.
    """
    az = np.array([e.azimuth for e in window.estimates])
    el = np.array([e.elevation for e in window.estimates])
    if len(az) < 4:
        raise ValueError("window needs at least 4 estimates")

    center = _circular_center(az)
    az_un = center + wrap_angle(az - center)

    low_confidence = False
    kept_az = _iqr_keep(az_un)
    if not kept_az.any():
        kept_az = np.zeros_like(kept_az)
        sm_az = np.array([np.median(az_un)])
        low_confidence = True
    else:
        sm_az = _moving_median(az_un[kept_az])

    kept_el = _iqr_keep(el)
    if not kept_el.any():
        kept_el = np.zeros_like(kept_el)
        sm_el = np.array([np.median(el)])
        low_confidence = True
    else:
        sm_el = _moving_median(el[kept_el])

    return SmoothedSeries(
        azimuth=wrap_angle(sm_az),
        elevation=sm_el,
        kept_az=kept_az,
        kept_el=kept_el,
        var_azimuth=float(np.var(sm_az)),
        var_elevation=float(np.var(sm_el)),
        low_confidence=low_confidence,
    )


class DoAWindow:
    """Ring buffer of the last W bearing estimates for one array."""

    def __init__(self, size: int = 10):
        self.size = size
        self.estimates: deque[DoAEstimate] = deque(maxlen=size)
        self.smoothed: SmoothedSeries | None = None
        self.los_believed = True

    def __len__(self) -> int:
        return len(self.estimates)

    @property
    def full(self) -> bool:
        return len(self.estimates) == self.size

    def push(self, est: DoAEstimate) -> None:
        self.estimates.append(est)
        if len(self.estimates) >= 4:
            self.smoothed = iqr_smooth(self)

    def latest_smoothed(self) -> DoAEstimate | None:
        """The newest estimate with smoothed bearing values substituted."""
        if self.smoothed is None or len(self.smoothed.azimuth) == 0:
            return None
        last = self.estimates[-1]
        return replace(
            last,
            azimuth=float(self.smoothed.azimuth[-1]),
            elevation=float(np.clip(self.smoothed.elevation[-1], 0.0, np.pi / 2)),
            smoothed=True,
        )

    @property
    def var_azimuth(self) -> float:
        return np.inf if self.smoothed is None else self.smoothed.var_azimuth

    @property
    def var_elevation(self) -> float:
        return np.inf if self.smoothed is None else self.smoothed.var_elevation


def detect_nlos(window: DoAWindow, threshold: float) -> bool:
    """Blocked line of sight: smoothed azimuth variance beyond the threshold."""
    nlos = window.var_azimuth > threshold
    window.los_believed = not nlos
    return nlos


def doa_stability(window: DoAWindow, theta_motion: float) -> Stability:
    """Source-position stability, the row selector for motion classification."""
    if (window.var_azimuth <= theta_motion
            and window.var_elevation <= theta_motion):
        return Stability.STABLE
    return Stability.UNSTABLE
