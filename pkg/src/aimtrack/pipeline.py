"""End-to-end tracking: audio streams in, per-interval track points out.

Per analysis window and per array the front end measures the spectrum peaks
and the bearing; the classifier picks the motion from (peak-group count,
bearing stability); the matching dynamics inversion updates the speed
accumulators; bearing plus the height accumulator yield a position
measurement that the Kalman tracker fuses unless the window is flagged
non-line-of-sight. With several arrays a coordinator additionally solves
inter-array TDoA multilateration per window and complementary-fuses that
track with the acoustic-inertial one.
"""

from __future__ import annotations

import itertools
from collections import deque
from dataclasses import dataclass

import numpy as np

from . import SPEED_OF_SOUND
from .config import PipelineConfig
from .doa import (DoAWindow, Stability, detect_nlos, doa_stability, estimate_doa,
                  wrap_angle)
from .dynamics import (KinematicEstimate, classify_motion, invert_horizontal,
                       invert_vertical, invert_yaw, update_coordinates)
from .errors import (InfeasibleTiltError, NoMeasurementError, NoSignalError,
                     SolveFailedError, StaleSyncError)
from .geometry import ArrayGeometry
from .multiarray import (SyncState, fuse_tracks, inter_array_tdoa,
                         intersect_bearings, select_arrays, solve_position,
                         solve_two_array, sync_clocks)
from .profiles import DroneProfile, MotionKind
from .scenario import Scenario
from .spectral import (SpectralPeaks, estimate_bpf_groups, frames_from_audio,
                       peak_group_count, stft_magnitude)
from .synth import HARMONIC_COUNT


@dataclass
class TrackPoint:
    t: float
    position: np.ndarray
    los: bool
    n_hypotheses: int
    kind: MotionKind | None
    source: str = "inertial"   # "fused" when multilateration contributed


@dataclass
class DebugRecord:
    t: float
    array_id: str
    azimuth: float
    elevation: float
    residual: float
    var_azimuth: float
    nlos: bool
    bpf: tuple[float, ...]


class _ArrayFrontEnd:
    """Per-array spectral + bearing state."""

    def __init__(self, geometry: ArrayGeometry, profile: DroneProfile,
                 config: PipelineConfig):
        self.geometry = geometry
        self.config = config
        self.window = DoAWindow(config.doa_window)
        self.band = (0.5 * profile.bpf_hover,
                     1.45 * (HARMONIC_COUNT + 0.45) * profile.bpf_hover)
        self.peaks: SpectralPeaks | None = None
        self.power = 0.0
        self.frame = None

    def ingest(self, frame, profile: DroneProfile) -> None:
        self.frame = frame
        self.power = float(np.mean(frame.mean_channel**2))
        freqs, mag = stft_magnitude(frame)
        try:
            self.peaks = estimate_bpf_groups(freqs, mag, profile,
                                             self.config.delta_merge_hz)
        except NoSignalError:
            self.peaks = None
            return
        est = estimate_doa(frame, self.geometry, band=self.band)
        self.window.push(est)

    @property
    def ready(self) -> bool:
        return self.peaks is not None and self.window.smoothed is not None

    def nlos(self) -> bool:
        if not self.window.full:
            return False
        return detect_nlos(self.window, self.config.theta_nlos)


class _YawIntegrator:
    """Angular rate from the per-window angular-acceleration magnitudes.

    The audio only reveals |beta|; its sign relative to the running rotation
    flips whenever the two rotor groups swap, observable as the spectral
    split closing and reopening. Integrating the signed rate gives the
    per-window heading increment (still globally sign-ambiguous).
    """

    def __init__(self):
        self.omega = 0.0
        self.sign = 1.0
        self.closed = False

    def reset(self):
        self.omega = 0.0
        self.sign = 1.0
        self.closed = False

    def step(self, beta: float | None, tau: float) -> float:
        if beta is None:  # split collapsed inside the yaw stretch
            self.closed = True
            dpsi = self.omega * tau
            return dpsi
        if self.closed:
            self.sign = -self.sign
            self.closed = False
        dpsi = self.omega * tau + 0.5 * self.sign * beta * tau**2
        self.omega += self.sign * beta * tau
        return dpsi


class Pipeline:
    """Single- or multi-array tracking over synchronized audio streams."""

    def __init__(self, profile: DroneProfile, arrays: list[ArrayGeometry],
                 config: PipelineConfig | None = None, start_height: float = 0.0,
                 sync: SyncState | None = None):
        from .tracker import TrackState

        self.profile = profile
        self.config = config or PipelineConfig()
        self.arrays = {a.id: a for a in arrays}
        self.fronts = {a.id: _ArrayFrontEnd(a, profile, self.config) for a in arrays}
        self.sync = sync
        self.state = TrackState(self.config)
        self.h = start_height
        self.v_h = 0.0
        self.v_v = 0.0
        self.kind: MotionKind | None = None
        self.vote: deque[MotionKind] = deque(maxlen=self.config.class_vote)
        self.fixes: list[np.ndarray] = []
        self.prev_doa = {a.id: None for a in arrays}
        self.recent_fixes: deque[tuple[float, np.ndarray]] = deque(maxlen=12)
        self.yaw_integ = _YawIntegrator()
        self.points: list[TrackPoint] = []
        self.z_multilat: list[np.ndarray] = []
        self.debug: list[DebugRecord] = []
        self.selection_trace: list[tuple[float, tuple[str, ...], str]] = []

    # -- helpers ---------------------------------------------------------

    def _rank_arrays(self, ids: list[str]) -> list[str]:
        return sorted(ids, key=lambda i: -self.fronts[i].power)

    def _choose_spectral(self) -> _ArrayFrontEnd | None:
        ready = [i for i, f in self.fronts.items() if f.ready]
        if not ready:
            return None
        stable = [i for i in ready if self.fronts[i].window.los_believed]
        pool = stable or ready
        return self.fronts[self._rank_arrays(pool)[0]]

    def _classify(self, front: _ArrayFrontEnd) -> MotionKind:
        count = peak_group_count(front.peaks, self.config.delta_merge_hz)
        stability = doa_stability(front.window, self.config.theta_motion)
        raw = classify_motion(count, stability)
        self.vote.append(raw)
        values = list(self.vote)
        return max(set(values), key=values.count)

    def _kinematics(self, front: _ArrayFrontEnd, t: float) -> KinematicEstimate | None:
        tau = self.config.hop
        try:
            if self.kind is MotionKind.YAW:
                beta = None
                if len(front.peaks.fundamental_groups) == 2:
                    beta = invert_yaw(front.peaks, self.profile, tau, t=t).beta
                dpsi = self.yaw_integ.step(beta, tau)
                return KinematicEstimate(t=t, kind=MotionKind.YAW,
                                         beta=beta or 0.0, dpsi=dpsi)
            if self.kind is MotionKind.HORIZONTAL \
                    and len(front.peaks.fundamental_groups) == 2:
                kin = invert_horizontal(front.peaks, self.profile, self.v_h, tau, t=t)
                self.v_h = kin.speed
                return kin
            if self.kind is MotionKind.VERTICAL:
                kin = invert_vertical(front.peaks, self.profile, self.v_v, tau, t=t)
                self.v_v = kin.speed
                return kin
        except InfeasibleTiltError:
            return None
        return KinematicEstimate(t=t, kind=MotionKind.HOVER)

    def _measurement_cov(self, z: np.ndarray, geometry: ArrayGeometry,
                         high_residual: bool) -> np.ndarray:
        cfg = self.config
        rng = float(np.linalg.norm(z - np.asarray(geometry.origin)))
        sigma_xy = max(cfg.sigma_xy_floor,
                       rng * np.sin(np.radians(cfg.sigma_doa_deg)))
        if high_residual:
            sigma_xy *= 3.0
        return np.diag([sigma_xy**2, sigma_xy**2, cfg.sigma_z**2])

    def _observe_heading(self) -> None:
        """Travel direction from a linear fit over the recent position fixes."""
        if len(self.recent_fixes) < 5:
            return
        t0, p0 = self.recent_fixes[0]
        t1, p1 = self.recent_fixes[-1]
        if np.linalg.norm((p1 - p0)[:2]) < 0.4:
            return
        times = np.array([t for t, _ in self.recent_fixes])
        pts = np.stack([p for _, p in self.recent_fixes])
        times = times - times.mean()
        vx = float(times @ (pts[:, 0] - pts[:, 0].mean()) / (times @ times))
        vy = float(times @ (pts[:, 1] - pts[:, 1].mean()) / (times @ times))
        self.state.set_heading(float(np.arctan2(vy, vx)))

    def _bootstrap_position(self) -> np.ndarray:
        """Best-effort position before any proper fix exists."""
        from .dynamics import position_from_doa

        for arr_id in self._rank_arrays(list(self.fronts)):
            front = self.fronts[arr_id]
            if front.window.estimates:
                est = front.window.estimates[-1]
                guard = np.radians(self.config.grazing_guard_deg)
                if guard < est.elevation < np.pi / 2 - guard:
                    return position_from_doa(est, front.geometry, self.h)
        origin = next(iter(self.arrays.values())).origin
        return np.array([origin[0], origin[1], self.h])

    def _bearing_prior(self) -> np.ndarray | None:
        """Position hint for TDoA peak disambiguation."""
        if self.state.initialized:
            return self.state.position
        origins, dirs = [], []
        for i, f in self.fronts.items():
            sm = f.window.latest_smoothed()
            if sm is not None:
                origins.append(np.asarray(f.geometry.origin))
                dirs.append(sm.direction())
        if len(origins) >= 2:
            return intersect_bearings(origins, dirs)
        return None

    # -- per-window step ---------------------------------------------------

    def step(self, frames: dict[str, "object"], t: float) -> TrackPoint:
        cfg = self.config
        tau = cfg.hop
        for arr_id, frame in frames.items():
            self.fronts[arr_id].ingest(frame, self.profile)

        nlos_by_id = {i: f.nlos() for i, f in self.fronts.items()}
        spectral_front = self._choose_spectral()

        kin = None
        if spectral_front is not None:
            new_kind = self._classify(spectral_front)
            if new_kind is not self.kind:
                self.kind = new_kind
                self.v_h = 0.0
                self.v_v = 0.0
                self.yaw_integ.reset()
            kin = self._kinematics(spectral_front, t)

        # Measurement from the best line-of-sight array.
        z = None
        meas_cov = None
        meas_front = None
        candidates = [i for i, f in self.fronts.items()
                      if f.ready and not nlos_by_id[i]]
        for arr_id in self._rank_arrays(candidates):
            front = self.fronts[arr_id]
            cur = front.window.latest_smoothed()
            upd = update_coordinates(
                kin or KinematicEstimate(t=t, kind=MotionKind.HOVER),
                self.prev_doa[arr_id], cur, self.h, front.geometry, tau,
                zenith_guard=np.radians(cfg.zenith_guard_deg),
                grazing_guard=np.radians(cfg.grazing_guard_deg))
            if meas_front is None:
                self.h = upd.h_next  # height integrates once per step
            if upd.position is not None and meas_front is None:
                z = upd.position
                high_res = (front.window.estimates[-1].residual > cfg.residual_max)
                meas_cov = self._measurement_cov(z, front.geometry, high_res)
                meas_front = front
            self.prev_doa[arr_id] = cur
        if meas_front is None and kin is not None \
                and kin.kind is MotionKind.VERTICAL:
            # no array in guard range: still integrate the climb
            self.h += kin.displacement(tau)

        all_nlos = bool(nlos_by_id) and all(
            nlos_by_id[i] or not self.fronts[i].ready for i in self.fronts)

        # Tracker.
        if not self.state.initialized:
            if z is not None:
                self.fixes.append(z)
                if len(self.fixes) >= cfg.min_init_fixes:
                    self.state.initialize(self.fixes)
        else:
            self.state.predict(kin, tau)
            self.state.update(z if not all_nlos else None, all_nlos, meas_cov)
            if self.state.los:
                self.h = float(self.state.position[2])
                if self.kind is MotionKind.HORIZONTAL:
                    self.recent_fixes.append((t, self.state.position.copy()))
                    self._observe_heading()
                else:
                    self.recent_fixes.clear()

        # Multilateration (needs sync + at least two arrays).
        z_m = np.full(3, np.nan)
        if self.sync is not None and len(self.arrays) >= 2:
            z_m = self._multilaterate(t, nlos_by_id)
        self.z_multilat.append(z_m)

        if self.state.initialized:
            position = self.state.position.copy()
            los = self.state.los
        elif self.fixes:
            position = np.mean(self.fixes, axis=0)
            los = z is not None
        else:
            position = self._bootstrap_position()
            los = False

        point = TrackPoint(t=t, position=position, los=los,
                           n_hypotheses=self.state.n_hypotheses or 1,
                           kind=self.kind)
        self.points.append(point)

        for arr_id, front in self.fronts.items():
            sm = front.window.latest_smoothed()
            if sm is not None and front.peaks is not None:
                self.debug.append(DebugRecord(
                    t=t, array_id=arr_id, azimuth=sm.azimuth,
                    elevation=sm.elevation,
                    residual=front.window.estimates[-1].residual,
                    var_azimuth=front.window.var_azimuth,
                    nlos=nlos_by_id[arr_id],
                    bpf=front.peaks.group_freqs))
        return point

    def _multilaterate(self, t: float, nlos_by_id: dict[str, bool]) -> np.ndarray:
        cfg = self.config
        geoms = {i: f.geometry for i, f in self.fronts.items()}
        windows = {i: f.window for i, f in self.fronts.items()}
        prior_pos = self._bearing_prior()
        selection = select_arrays(windows, geoms, cfg.theta_nlos, prior_pos)
        self.selection_trace.append((t, selection.ids, selection.mode))
        if selection.mode == "none":
            return np.full(3, np.nan)
        band = self.fronts[selection.ids[0]].band

        def predicted_tdoa(id_p, id_q):
            if prior_pos is None:
                return None
            dp = float(np.linalg.norm(prior_pos - np.asarray(geoms[id_p].origin)))
            dq = float(np.linalg.norm(prior_pos - np.asarray(geoms[id_q].origin)))
            return (dq - dp) / SPEED_OF_SOUND

        try:
            if selection.mode == "two":
                id_p, id_q = selection.ids
                return solve_two_array(
                    self.fronts[id_p].frame, self.fronts[id_q].frame,
                    geoms[id_p], geoms[id_q], self.sync,
                    predicted=prior_pos, band=band, config=cfg)
            tdoas = []
            positions = {i: np.asarray(geoms[i].origin, dtype=float)
                         for i in selection.ids}
            for id_p, id_q in itertools.combinations(selection.ids, 2):
                try:
                    tdoas.append(inter_array_tdoa(
                        self.fronts[id_p].frame, self.fronts[id_q].frame,
                        self.sync, geoms[id_p], geoms[id_q],
                        predicted=predicted_tdoa(id_p, id_q), band=band,
                        config=cfg))
                except NoMeasurementError:
                    continue
            soft_prior = None
            if prior_pos is not None:
                # Planar arrays observe height weakly; anchor z to the
                # acoustic-inertial altitude, leave the horizontal loose.
                soft_prior = (prior_pos, np.array([3.0, 3.0, 0.4]))
            return solve_position(tdoas, positions, hint=prior_pos,
                                  prior=soft_prior, config=cfg)
        except (SolveFailedError, NoMeasurementError):
            return np.full(3, np.nan)

    # -- batch drivers -----------------------------------------------------

    def finalize(self) -> list[TrackPoint]:
        """Complementary-fuse the multilateration track into the output."""
        if not self.points:
            return self.points
        z_m = np.stack(self.z_multilat)
        if not np.any(np.all(np.isfinite(z_m), axis=1)):
            return self.points
        z_a = np.stack([p.position for p in self.points])
        fused, used = fuse_tracks(z_m, z_a, 1.0 / self.config.hop, config=self.config)
        for i, point in enumerate(self.points):
            point.position = fused[i]
            point.source = "fused" if used[i] else "inertial"
        return self.points


def run_pipeline(recordings: dict[str, np.ndarray], profile: DroneProfile,
                 arrays: list[ArrayGeometry], sample_rate: float,
                 config: PipelineConfig | None = None,
                 start_height: float = 0.0,
                 scenario: Scenario | None = None,
                 single_array: bool = False) -> Pipeline:
    """Drive the pipeline over full recordings; returns the finished Pipeline.

    Multi-array mode engages when more than one array is supplied and the
    beacon sync succeeds; otherwise the strongest single array tracks alone.
    """
    cfg = config or PipelineConfig()
    use = list(arrays)
    sync = None
    if single_array and len(use) > 1:
        use = [use[0]]
    if len(use) > 1:
        if scenario is None or scenario.beacon is None:
            import warnings

            warnings.warn("no sync beacon configured; falling back to single-array mode")
            use = [use[0]]
        else:
            try:
                sync = sync_clocks(recordings, scenario, reference=use[0].id,
                                   config=cfg)
            except StaleSyncError as e:
                import warnings

                warnings.warn(f"beacon sync failed ({e}); single-array mode")
                use = [use[0]]

    pipe = Pipeline(profile, use, cfg, start_height=start_height, sync=sync)
    frame_iters = {
        a.id: frames_from_audio(recordings[a.id].astype(np.float64), sample_rate,
                                a.id, cfg.hop, cfg.window_len)
        for a in use
    }
    window_center = cfg.window_len / sample_rate / 2.0
    while True:
        frames = {}
        for arr_id, it in frame_iters.items():
            frame = next(it, None)
            if frame is not None:
                frames[arr_id] = frame
        if len(frames) < len(use):
            break
        t = next(iter(frames.values())).t_start + window_center
        pipe.step(frames, t)
    pipe.finalize()
    return pipe
