"""Distributed-array extension: clock sync, inter-array TDoA, multilateration.

Arrays synchronize on a 16-20 kHz pseudo-random beacon from a speaker at a
known position: each array band-passes its recording, matched-filters
against the reference burst, and subtracts the known propagation time; the
leftover disagreement between arrays is the clock offset. Inter-array TDoA
averages the per-element GCC-PHAT delays of corresponding elements. Source
positions come from damped least squares over the range-difference
hyperboloids, multistarted across the workspace; with only two usable
arrays the widest non-collinear element pairs act as four individual
receivers in the same solver.

Because the drone signal is a harmonic line spectrum, its cross-correlation
is periodic at 1/BPF; inter-array delays are therefore picked as the
correlation peak nearest a geometric prediction (from the running track or
a bearing-ray intersection) rather than the global argmax.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares
from scipy.signal import butter, fftconvolve, sosfiltfilt

from . import SPEED_OF_SOUND
from .config import PipelineConfig
from .doa import DoAWindow, _parabolic, gcc_phat_delay
from .errors import NoMeasurementError, SolveFailedError, StaleSyncError
from .geometry import ArrayGeometry
from .scenario import Scenario
from .synth import beacon_times, beacon_waveform


@dataclass
class SyncState:
    """Per-array clock offsets relative to a reference array (offset 0)."""

    reference: str
    offsets: dict[str, float] = field(default_factory=dict)
    confidence: dict[str, float] = field(default_factory=dict)
    t_last: float = 0.0

    def relative(self, id_p: str, id_q: str) -> float:
        """offset_q - offset_p, the clock shift a p->q correlation sees."""
        return self.offsets[id_q] - self.offsets[id_p]


@dataclass(frozen=True)
class TdoaMeasurement:
    pair: tuple[str, str]
    t_pq: float          # s, arrival at q minus arrival at p
    elements_used: int
    t: float


def _detect_burst(audio: np.ndarray, pn_analytic: np.ndarray, sample_rate: float,
                  band: tuple[float, float], t_expect: float,
                  search: float) -> tuple[float, float]:
    """Matched-filter arrival time of one beacon burst near t_expect.

    Correlating against the analytic template gives a smooth envelope (no
    carrier ripple), so the peak interpolates to a fraction of a sample.
    Returns (arrival time of the burst start, detection score).
    """
    sos = butter(6, band, btype="bandpass", fs=sample_rate, output="sos")
    i0 = max(0, int((t_expect - search) * sample_rate))
    i1 = min(len(audio), int((t_expect + search + len(pn_analytic) / sample_rate)
                             * sample_rate))
    chunk = sosfiltfilt(sos, audio[i0:i1])
    corr = fftconvolve(chunk, np.conj(pn_analytic)[::-1], mode="full")
    mag = np.abs(corr)
    peak = int(np.argmax(mag))
    med = float(np.median(mag)) + 1e-30
    score = 1.0 - med / (mag[peak] + 1e-30)
    lag = peak - (len(pn_analytic) - 1) + _parabolic(mag, peak)
    return i0 / sample_rate + lag / sample_rate, score


def sync_clocks(recordings: dict[str, np.ndarray], scenario: Scenario,
                reference: str | None = None,
                config: PipelineConfig | None = None,
                max_offset: float = 0.06) -> SyncState:
    """Estimate per-array clock offsets from the shared beacon emissions.

    Raises StaleSyncError when no array pair produces a confident detection.
    """
    from scipy.signal import hilbert

    cfg = config or PipelineConfig()
    if scenario.beacon is None:
        raise StaleSyncError("scenario has no beacon")
    pn = beacon_waveform(scenario)
    pn_analytic = hilbert(pn / np.linalg.norm(pn))
    fs = scenario.sample_rate
    speaker = np.asarray(scenario.beacon.position)
    ids = [a.id for a in scenario.arrays]
    reference = reference or ids[0]
    duration = min(len(recordings[a.id]) for a in scenario.arrays) / fs
    starts = beacon_times(scenario, duration)
    if len(starts) == 0:
        raise StaleSyncError("no beacon emission within the recording")

    apparent: dict[str, list[float]] = {i: [] for i in ids}
    conf: dict[str, list[float]] = {i: [] for i in ids}
    for arr in scenario.arrays:
        rec = recordings[arr.id]
        audio = rec[:, 0] if rec.ndim == 2 else rec
        mic0 = arr.element_positions()[0]
        prop = float(np.linalg.norm(speaker - mic0)) / SPEED_OF_SOUND
        for t0 in starts:
            t_det, score = _detect_burst(audio, pn_analytic, fs,
                                         scenario.beacon.band, t0 + prop,
                                         max_offset)
            if score >= cfg.beacon_corr_min:
                apparent[arr.id].append(t_det - prop)
                conf[arr.id].append(score)

    if not apparent[reference]:
        raise StaleSyncError(f"beacon not detected at reference array {reference}")
    state = SyncState(reference=reference, t_last=float(starts[-1]))
    # Median over emissions of (apparent emission time_p - _ref), per burst index.
    n_ref = len(apparent[reference])
    for arr_id in ids:
        det = apparent[arr_id]
        if not det:
            raise StaleSyncError(f"beacon not detected at array {arr_id}")
        k = min(len(det), n_ref)
        diffs = [det[i] - apparent[reference][i] for i in range(k)]
        state.offsets[arr_id] = float(np.median(diffs))
        state.confidence[arr_id] = float(np.mean(conf[arr_id]))
    return state


def inter_array_tdoa(frame_p, frame_q, sync: SyncState,
                     geom_p: ArrayGeometry, geom_q: ArrayGeometry,
                     predicted: float | None = None,
                     band: tuple[float, float] | None = None,
                     config: PipelineConfig | None = None) -> TdoaMeasurement:
    """Average per-element GCC-PHAT delay between two arrays, offsets removed."""
    cfg = config or PipelineConfig()
    if frame_p.channels.shape[0] != frame_q.channels.shape[0]:
        raise ValueError("arrays must have the same element count")
    fs = frame_p.sample_rate
    clock = sync.relative(geom_p.id, geom_q.id)
    baseline = float(np.linalg.norm(np.asarray(geom_q.origin)
                                    - np.asarray(geom_p.origin)))
    bound = baseline / SPEED_OF_SOUND + cfg.tdoa_guard_samples / fs
    prior = None
    if predicted is not None:
        prior = (predicted + clock, cfg.tdoa_search_radius_s)
    # A moving source sweeps the inter-array delay by up to ~1.5 ms across a
    # full analysis window; a centered sub-window keeps the peak sharp.
    sub = min(frame_p.channels.shape[1], 4096)
    lo_i = (frame_p.channels.shape[1] - sub) // 2
    delays = []
    for i in range(frame_p.channels.shape[0]):
        tau = gcc_phat_delay(frame_p.channels[i, lo_i:lo_i + sub],
                             frame_q.channels[i, lo_i:lo_i + sub], fs,
                             max_tau=bound + abs(clock), band=band, prior=prior)
        t_pq = tau - clock
        if abs(t_pq) <= bound:
            delays.append(t_pq)
    if not delays:
        raise NoMeasurementError(
            f"all element delays of {geom_p.id}->{geom_q.id} beyond physical bound")
    # Individual elements can lock onto the wrong comb peak; average the
    # largest cluster of mutually agreeing element delays.
    arr = np.asarray(delays)
    counts = [int(np.sum(np.abs(arr - d) <= 3.0e-4)) for d in delays]
    anchor = arr[int(np.argmax(counts))]
    kept = arr[np.abs(arr - anchor) <= 3.0e-4]
    return TdoaMeasurement(pair=(geom_p.id, geom_q.id),
                           t_pq=float(np.mean(kept)),
                           elements_used=int(len(kept)), t=frame_p.t_start)


def _xy_collinear(points: np.ndarray, tol: float = 0.3) -> bool:
    pts = np.asarray(points, dtype=float)[:, :2]
    if len(pts) < 3:
        return True
    centered = pts - pts.mean(axis=0)
    sv = np.linalg.svd(centered, compute_uv=False)
    return bool(sv[-1] < tol)


def solve_position(tdoas: list[TdoaMeasurement],
                   positions: dict[str, np.ndarray],
                   bounds_lo=(-30.0, -30.0, 0.05), bounds_hi=(30.0, 30.0, 15.0),
                   hint: np.ndarray | None = None,
                   prior: tuple[np.ndarray, np.ndarray] | None = None,
                   config: PipelineConfig | None = None) -> np.ndarray:
    """Position minimizing the hyperboloid residuals, multistart damped LS.

    Each TDoA constrains the source to one sheet of a hyperboloid of
    revolution about the pair baseline (semi-axis a = c*T/2); intersecting at
    least three of them fixes the position in the upper half space.

    With all receivers in one plane the height is weakly observable under
    noise; `prior` (position, per-axis sigma) optionally adds a soft
    anchor, used by the tracking coordinator with the running track.
    """
    cfg = config or PipelineConfig()
    if len(tdoas) < 3:
        raise SolveFailedError(f"need >= 3 TDoA measurements, got {len(tdoas)}")
    anchors = np.stack([positions[t.pair[0]] for t in tdoas]
                       + [positions[t.pair[1]] for t in tdoas])
    if _xy_collinear(np.unique(anchors.round(6), axis=0)):
        raise SolveFailedError("arrays are collinear; fall back to two-array mode")

    p_mat = np.stack([positions[t.pair[0]] for t in tdoas])
    q_mat = np.stack([positions[t.pair[1]] for t in tdoas])
    target = SPEED_OF_SOUND * np.array([t.t_pq for t in tdoas])

    def residuals(s):
        dp = np.linalg.norm(s - p_mat, axis=1)
        dq = np.linalg.norm(s - q_mat, axis=1)
        out = (dq - dp) - target
        if prior is not None:
            # a deviation of one prior sigma weighs like one f_scale unit
            out = np.concatenate([out, (s - prior[0]) / prior[1] * 0.05])
        return out

    lo = np.asarray(bounds_lo)
    hi = np.asarray(bounds_hi)
    starts = []
    if hint is not None and np.all(np.isfinite(hint)):
        starts.append(np.clip(hint, lo + 1e-3, hi - 1e-3))
    center = anchors.mean(axis=0)
    for dx, dy, dz in itertools.product((-1.0, 1.0), (-1.0, 1.0), (0.5, 2.5)):
        s0 = center + np.array([4.0 * dx, 4.0 * dy, dz])
        starts.append(np.clip(s0, lo + 1e-3, hi - 1e-3))

    best, best_cost = None, np.inf
    for s0 in starts:
        try:
            res = least_squares(residuals, s0, bounds=(lo, hi), method="trf",
                                loss="soft_l1", f_scale=0.05)
        except ValueError:
            continue
        if res.cost < best_cost:
            best, best_cost = res, res.cost
    if best is None:
        raise SolveFailedError("least-squares solver failed from every start")
    resid = float(np.median(np.abs(best.fun[:len(tdoas)])))
    if resid > cfg.solve_residual_max_m:
        raise SolveFailedError(f"residual {resid:.3f} m above threshold")
    return best.x


def _widest_pairs(geom: ArrayGeometry) -> list[tuple[int, int]]:
    """Element index pairs by descending spacing, lowest indices first on ties."""
    pts = geom.element_positions()
    pairs = []
    for i, j in itertools.combinations(range(len(pts)), 2):
        pairs.append((-(float(np.linalg.norm(pts[j] - pts[i]))), i, j))
    pairs.sort()
    return [(i, j) for _, i, j in pairs]


def select_element_pairs(geom_p: ArrayGeometry, geom_q: ArrayGeometry
                         ) -> tuple[tuple[int, int], tuple[int, int]]:
    """Widest element pair per array such that the four are not collinear."""
    for pp in _widest_pairs(geom_p):
        for qq in _widest_pairs(geom_q):
            pts = np.stack([
                geom_p.element_positions()[list(pp)],
                geom_q.element_positions()[list(qq)],
            ]).reshape(4, 3)
            if not _xy_collinear(pts, tol=0.01):
                return pp, qq
    raise SolveFailedError("every element choice is collinear")


def solve_two_array(frame_p, frame_q, geom_p: ArrayGeometry, geom_q: ArrayGeometry,
                    sync: SyncState, predicted: np.ndarray | None = None,
                    band: tuple[float, float] | None = None,
                    config: PipelineConfig | None = None) -> np.ndarray:
    """Two-array fallback: four individual elements act as receivers."""
    cfg = config or PipelineConfig()
    fs = frame_p.sample_rate
    pp, qq = select_element_pairs(geom_p, geom_q)
    pos_p = geom_p.element_positions()
    pos_q = geom_q.element_positions()
    receivers = [(geom_p.id, i, pos_p[i], frame_p.channels[i]) for i in pp]
    receivers += [(geom_q.id, i, pos_q[i], frame_q.channels[i]) for i in qq]

    tdoas, positions = [], {}
    for a in range(4):
        positions[f"el{a}"] = receivers[a][2]
    for a, b in itertools.combinations(range(4), 2):
        id_a, _, p_a, ch_a = receivers[a]
        id_b, _, p_b, ch_b = receivers[b]
        clock = sync.relative(id_a, id_b) if id_a != id_b else 0.0
        baseline = float(np.linalg.norm(p_b - p_a))
        bound = baseline / SPEED_OF_SOUND + cfg.tdoa_guard_samples / fs
        prior = None
        if predicted is not None:
            geo = (float(np.linalg.norm(predicted - p_b))
                   - float(np.linalg.norm(predicted - p_a))) / SPEED_OF_SOUND
            prior = (geo + clock, cfg.tdoa_search_radius_s)
        tau = gcc_phat_delay(ch_a, ch_b, fs, max_tau=bound + abs(clock),
                             band=band, prior=prior)
        t_ab = tau - clock
        if abs(t_ab) <= bound:
            tdoas.append(TdoaMeasurement((f"el{a}", f"el{b}"), t_ab, 1,
                                         frame_p.t_start))
    if len(tdoas) < 3:
        raise NoMeasurementError("too few valid element-level delays")
    hint = predicted if predicted is not None else None
    return solve_position(tdoas, positions, hint=hint, config=cfg)


@dataclass(frozen=True)
class ArraySelection:
    ids: tuple[str, ...]
    mode: str  # "multi", "two", "none"


def select_arrays(windows: dict[str, DoAWindow], geoms: dict[str, ArrayGeometry],
                  threshold: float,
                  predicted: np.ndarray | None = None) -> ArraySelection:
    """Screen arrays by bearing stability, then spread them wide.

    Arrays whose smoothed azimuth variance exceeds the threshold are dropped.
    With more than three survivors the initial triple maximizes the product
    of pairwise distances and the most stable remaining candidate joins it;
    collinear survivors fall back to the two nearest the predicted position.
    """
    candidates = [i for i, w in windows.items()
                  if w.smoothed is not None and w.var_azimuth < threshold]
    if len(candidates) <= 1:
        return ArraySelection(tuple(candidates), "none")

    origins = {i: np.asarray(geoms[i].origin, dtype=float) for i in candidates}
    if len(candidates) == 2:
        return ArraySelection(tuple(candidates), "two")

    if _xy_collinear(np.stack([origins[i] for i in candidates])):
        if predicted is not None:
            candidates.sort(key=lambda i: float(np.linalg.norm(
                predicted - origins[i])))
        return ArraySelection(tuple(candidates[:2]), "two")

    if len(candidates) == 3:
        return ArraySelection(tuple(candidates), "multi")

    best_triple, best_prod = None, -np.inf
    for tri in itertools.combinations(sorted(candidates), 3):
        p, q, s = (origins[i] for i in tri)
        prod = (np.linalg.norm(p - q) * np.linalg.norm(p - s)
                * np.linalg.norm(q - s))
        if prod > best_prod:
            best_triple, best_prod = tri, prod
    rest = [i for i in candidates if i not in best_triple]
    extra = min(rest, key=lambda i: windows[i].var_azimuth)
    return ArraySelection(tuple(best_triple) + (extra,), "multi")


def intersect_bearings(origins: list[np.ndarray], directions: list[np.ndarray]
                       ) -> np.ndarray:
    """Least-squares intersection of bearing rays, for TDoA bootstrap priors."""
    a_sum = np.zeros((3, 3))
    b_sum = np.zeros(3)
    for o, u in zip(origins, directions):
        u = np.asarray(u) / np.linalg.norm(u)
        proj = np.eye(3) - np.outer(u, u)
        a_sum += proj
        b_sum += proj @ np.asarray(o)
    return np.linalg.lstsq(a_sum, b_sum, rcond=None)[0]


def fuse_tracks(z_m: np.ndarray, z_a: np.ndarray, rate_hz: float,
                cutoff_hz: float | None = None, window_s: float | None = None,
                config: PipelineConfig | None = None
                ) -> tuple[np.ndarray, np.ndarray]:
    """Complementary-filter fusion of the two position tracks.

    Per axis and per overlapping window, the multilateration track passes a
    first-order low-pass G and the acoustic-inertial track its complement
    1-G in the frequency domain; both windows are detrended (non-periodic
    positions) and the multilateration trend carries the DC band. Gaps (NaN
    rows) in z_m are filled from z_a first; an entirely absent z_m returns
    z_a unchanged.

    Returns (fused (n,3), mask of steps where z_m contributed).
    """
    cfg = config or PipelineConfig()
    fc = cutoff_hz if cutoff_hz is not None else cfg.fuse_cutoff_hz
    win_s = window_s if window_s is not None else cfg.fuse_window_s
    z_a = np.asarray(z_a, dtype=float)
    z_m = np.asarray(z_m, dtype=float)
    n = len(z_a)
    valid = np.all(np.isfinite(z_m), axis=1)
    if not valid.any():
        return z_a.copy(), valid
    filled = np.where(valid[:, None], z_m, z_a)

    win_n = max(4, round(win_s * rate_hz))
    win_n = min(win_n, n)
    hop = max(1, win_n // 2)
    freqs = np.fft.rfftfreq(win_n, d=1.0 / rate_hz)
    lowpass = 1.0 / (1.0 + 1j * freqs / fc)
    taper = np.bartlett(win_n) + 1e-3

    acc = np.zeros((n, 3))
    den = np.zeros(n)
    starts = list(range(0, max(1, n - win_n + 1), hop))
    if starts[-1] != n - win_n:
        starts.append(n - win_n)
    x_idx = np.arange(win_n)
    for s0 in starts:
        sl = slice(s0, s0 + win_n)
        for ax in range(3):
            wm = filled[sl, ax]
            wa = z_a[sl, ax]
            cm = np.polyfit(x_idx, wm, 1)
            ca = np.polyfit(x_idx, wa, 1)
            trend_m = np.polyval(cm, x_idx)
            trend_a = np.polyval(ca, x_idx)
            spec = (np.fft.rfft(wm - trend_m) * lowpass
                    + np.fft.rfft(wa - trend_a) * (1.0 - lowpass))
            acc[sl, ax] += taper * (trend_m + np.fft.irfft(spec, n=win_n))
        den[sl] += taper
    fused = acc / den[:, None]
    return fused, valid
