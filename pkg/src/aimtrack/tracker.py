"""Position Kalman filter with dynamics as control input.

The state is the 3-D position only; velocity lives in the dynamics-inversion
accumulators and enters the filter as a per-step displacement along the
current heading (horizontal) or the vertical axis. Measurements are the
bearing-derived positions; during blocked line of sight they are discarded
and the filter dead-reckons on the acoustic inertial displacement alone.

Yaw leaves the travel direction ambiguous (the rotor-group assignment is not
observable from audio), so after a rotation the tracker carries both mirror
headings as separate hypotheses until a position fix or an observed travel
direction collapses them.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import PipelineConfig
from .dynamics import KinematicEstimate
from .errors import NotReadyError
from .profiles import MotionKind

P_FLOOR = 0.04      # m^2, covariance floor at initialization
SPLIT_DPSI = 0.05   # rad of ambiguous rotation before hypotheses fork


@dataclass
class Hypothesis:
    heading: float
    weight: float
    position: np.ndarray          # (3,)
    covariance: np.ndarray        # (3, 3)
    yaw_sign: float = 1.0         # which branch of the ambiguity this tracks

    def copy(self) -> "Hypothesis":
        return Hypothesis(self.heading, self.weight, self.position.copy(),
                          self.covariance.copy(), self.yaw_sign)


def _symmetrize(p: np.ndarray) -> np.ndarray:
    return (p + p.T) / 2.0


def wrap_scalar(a: float) -> float:
    return (a + np.pi) % (2.0 * np.pi) - np.pi


class TrackState:
    """One tracked drone: position hypotheses plus heading bookkeeping."""

    def __init__(self, config: PipelineConfig | None = None):
        self.config = config or PipelineConfig()
        self.hypotheses: list[Hypothesis] = []
        self.initialized = False
        self.heading_valid = False
        self.los = False
        self.t = 0.0
        self._pending_dpsi = 0.0
        self._reject_streak = 0

    # -- outputs ---------------------------------------------------------

    @property
    def position(self) -> np.ndarray:
        w = np.array([h.weight for h in self.hypotheses])
        pts = np.stack([h.position for h in self.hypotheses])
        return (pts * w[:, None]).sum(axis=0) / w.sum()

    @property
    def covariance(self) -> np.ndarray:
        best = max(self.hypotheses, key=lambda h: h.weight)
        return best.covariance

    @property
    def n_hypotheses(self) -> int:
        return len(self.hypotheses)

    # -- lifecycle -------------------------------------------------------

    def initialize(self, fixes: list[np.ndarray], heading: float = 0.0,
                   min_fixes: int | None = None) -> None:
        need = min_fixes or self.config.min_init_fixes
        if len(fixes) < need:
            raise NotReadyError(f"need {need} position fixes, got {len(fixes)}")
        pts = np.stack([np.asarray(f, dtype=float) for f in fixes])
        mean = pts.mean(axis=0)
        cov = np.zeros((3, 3))
        if len(pts) > 1:
            cov = np.cov(pts.T, bias=False)
        cov = _symmetrize(np.atleast_2d(cov)) + P_FLOOR * np.eye(3)
        self.hypotheses = [Hypothesis(heading, 1.0, mean, cov)]
        self.initialized = True

    def set_heading(self, heading: float) -> None:
        """A directly observed travel direction collapses any ambiguity.

        The hypothesis whose integrated heading is nearest the observed
        direction survives; its own heading is kept when the two roughly
        agree (the integral is less noisy than a short-baseline direction).
        """
        def gap(h):
            return abs(float(wrap_scalar(h.heading - heading)))

        best = min(self.hypotheses, key=gap)
        if gap(best) > 0.6:
            best.heading = float(heading)
        best.weight = 1.0
        best.yaw_sign = 1.0
        self.hypotheses = [best]
        self.heading_valid = True
        self._pending_dpsi = 0.0

    # -- filter steps ----------------------------------------------------

    def predict(self, kin: KinematicEstimate | None, tau: float) -> None:
        """A-priori update: advance each hypothesis by the dynamics displacement."""
        if not self.initialized:
            return
        cfg = self.config
        if kin is not None and kin.kind is MotionKind.YAW and kin.dpsi:
            self._apply_yaw(kin.dpsi)

        for hyp in self.hypotheses:
            d = np.zeros(3)
            q_extra = 0.0
            if kin is not None:
                step = kin.displacement(tau)
                if kin.kind is MotionKind.VERTICAL:
                    d[2] = step
                    q_extra = (cfg.kinematic_frac * abs(step)) ** 2
                elif kin.kind is MotionKind.HORIZONTAL:
                    if self.heading_valid:
                        d[0] = step * np.cos(hyp.heading)
                        d[1] = step * np.sin(hyp.heading)
                        q_extra = (cfg.kinematic_frac * abs(step)) ** 2
                    else:
                        q_extra = step**2  # direction unknown yet
            hyp.position = hyp.position + d
            q = (cfg.process_sigma**2 + q_extra) * np.eye(3)
            hyp.covariance = _symmetrize(hyp.covariance + q)
        self.t += tau

    def _apply_yaw(self, dpsi: float) -> None:
        self._pending_dpsi += dpsi
        if len(self.hypotheses) == 1 and self.heading_valid:
            if abs(self._pending_dpsi) > SPLIT_DPSI:
                base = self.hypotheses[0]
                plus, minus = base.copy(), base.copy()
                plus.yaw_sign, minus.yaw_sign = 1.0, -1.0
                plus.heading = base.heading + self._pending_dpsi
                minus.heading = base.heading - self._pending_dpsi
                plus.weight = minus.weight = 0.5
                self.hypotheses = [plus, minus]
                self._pending_dpsi = 0.0
        else:
            for hyp in self.hypotheses:
                hyp.heading += hyp.yaw_sign * dpsi

    def update(self, measurement: np.ndarray | None, nlos: bool,
               meas_cov: np.ndarray | None = None) -> None:
        """A-posteriori update; discards the measurement in NLoS."""
        if not self.initialized:
            return
        cfg = self.config
        z = None if measurement is None else np.asarray(measurement, dtype=float)
        if nlos or z is None or not np.all(np.isfinite(z)):
            self.los = False
            return

        if meas_cov is None:
            meas_cov = np.diag([cfg.sigma_xy_floor**2] * 2 + [cfg.sigma_z**2])

        def mahalanobis2(hyp):
            innov = z - hyp.position
            s_inv = np.linalg.inv(hyp.covariance + meas_cov)
            return float(innov @ s_inv @ innov)

        gate = cfg.gate_sigma**2 * 3.0  # ~chi^2 scale for 3 dof
        if len(self.hypotheses) == 2:
            sep = np.linalg.norm(self.hypotheses[0].position
                                 - self.hypotheses[1].position)
            near = min(self.hypotheses,
                       key=lambda h: float(np.linalg.norm(z - h.position)))
            # Collapse only on a measurement the surviving branch accepts;
            # an undetected bad bearing must not kill the right hypothesis.
            if sep > cfg.collapse_min_sep and mahalanobis2(near) <= gate:
                near.weight = 1.0
                self.hypotheses = [near]
                self._pending_dpsi = 0.0

        # Re-acquisition: a long run of gated-out measurements means the
        # track is lost, not the measurements; fuse softly to pull back.
        rescue = self._reject_streak >= 10
        r_eff = meas_cov * (9.0 if rescue else 1.0)

        fused_any = False
        for hyp in self.hypotheses:
            innov = z - hyp.position
            s_inv = np.linalg.inv(hyp.covariance + r_eff)
            if not rescue and float(innov @ s_inv @ innov) > gate:
                continue
            gain = hyp.covariance @ s_inv
            hyp.position = hyp.position + gain @ innov
            ikh = np.eye(3) - gain
            hyp.covariance = _symmetrize(
                ikh @ hyp.covariance @ ikh.T + gain @ r_eff @ gain.T)
            fused_any = True
        self.los = fused_any
        self._reject_streak = 0 if fused_any else self._reject_streak + 1


def init_track(first_fixes: list[np.ndarray],
               config: PipelineConfig | None = None) -> TrackState:
    state = TrackState(config)
    state.initialize(first_fixes)
    return state


def predict(state: TrackState, kin: KinematicEstimate | None, tau: float) -> TrackState:
    state.predict(kin, tau)
    return state


def update(state: TrackState, measurement: np.ndarray | None, nlos: bool,
           meas_cov: np.ndarray | None = None) -> TrackState:
    state.update(measurement, nlos, meas_cov)
    return state
