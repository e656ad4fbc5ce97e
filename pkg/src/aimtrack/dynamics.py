"""Motion classification and dynamics inversion: sound back to kinematics.

Classification is a two-bit table: the number of fundamental peak groups
(one or two) crossed with the stability of the smoothed bearing. Each class
then has a closed-form inversion from the measured blade-passing frequencies
to its kinematic magnitude:

* yaw        - the drag-torque difference of the two rotor groups gives the
               angular acceleration; its sign is not observable from audio,
               so both orientations are carried until the tracker resolves
               the ambiguity from position fixes
* horizontal - vertical thrust balance solves the tilt, the horizontal
               thrust component minus the speed-squared drag gives the
               acceleration; the travel direction again comes from the
               tracker
* vertical   - total thrust against weight and drag gives the signed
               vertical acceleration

Rotor frequencies enter as the blade-passing frequency, so the lift/drag
coefficients carry a 1/blade_count^2 factor throughout, matching the
forward model exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import GRAVITY
from .doa import DoAEstimate, Stability, wrap_angle
from .errors import InfeasibleTiltError
from .geometry import ArrayGeometry
from .profiles import DroneProfile, MotionKind
from .spectral import SpectralPeaks


def classify_motion(group_count: int, stability: Stability) -> MotionKind:
    """Two peak groups mean differential rotors (yaw or translation); a moving
    bearing separates translation from rotation-in-place."""
    if group_count == 1:
        return MotionKind.HOVER if stability is Stability.STABLE else MotionKind.VERTICAL
    return MotionKind.YAW if stability is Stability.STABLE else MotionKind.HORIZONTAL


@dataclass(frozen=True)
class KinematicEstimate:
    t: float
    kind: MotionKind
    beta: float | None = None      # rad/s^2, magnitude (sign ambiguous), yaw only
    speed: float | None = None     # m/s along the active axis
    accel: float | None = None     # m/s^2 along the active axis
    tilt: float | None = None      # rad, horizontal only
    dpsi: float | None = None      # rad, accumulated rotation magnitude

    def displacement(self, tau: float) -> float:
        """Path length v*tau + a*tau^2/2 along the active axis (signed for vertical)."""
        if self.speed is None:
            return 0.0
        return self.speed * tau + 0.5 * (self.accel or 0.0) * tau**2


def _group_bpf_sq_sums(peaks: SpectralPeaks, profile: DroneProfile,
                       kind: MotionKind) -> tuple[float, float]:
    """Per-group sums of squared blade-passing frequencies.

    The stronger spectral family maps to the larger rotor group (more rotors,
    more radiated energy); for equal group sizes the assignment is irrelevant
    to every downstream total.
    """
    groups = peaks.fundamental_groups
    if len(groups) != 2:
        raise ValueError(f"expected 2 fundamental groups, got {len(groups)}")
    sizes = profile.group_sizes(kind)
    (f_a, w_a), (f_b, w_b) = groups
    if sizes[0] != sizes[1] and (w_a >= w_b) != (sizes[0] >= sizes[1]):
        sizes = (sizes[1], sizes[0])
    return sizes[0] * f_a**2, sizes[1] * f_b**2


def invert_yaw(peaks: SpectralPeaks, profile: DroneProfile, tau: float,
               t: float = 0.0) -> KinematicEstimate:
    """Angular acceleration magnitude from the two-group frequency split."""
    s_a, s_b = _group_bpf_sq_sums(peaks, profile, MotionKind.YAW)
    k_h = profile.drag_coeff / profile.blade_count**2
    beta = abs(k_h * (s_a - s_b) / profile.inertia)
    return KinematicEstimate(t=t, kind=MotionKind.YAW, beta=beta,
                             dpsi=beta * tau)


def invert_horizontal(peaks: SpectralPeaks, profile: DroneProfile,
                      v_prev: float, tau: float, t: float = 0.0) -> KinematicEstimate:
    """Tilt from vertical thrust balance, then speed from the horizontal rest."""
    s_a, s_b = _group_bpf_sq_sums(peaks, profile, MotionKind.HORIZONTAL)
    thrust = profile.lift_coeff / profile.blade_count**2 * (s_a + s_b)
    weight = profile.mass * GRAVITY
    sin_g = weight / thrust
    if sin_g > 1.0 + 1e-6:
        raise InfeasibleTiltError(
            f"thrust {thrust:.3f} N below weight {weight:.3f} N")
    sin_g = min(sin_g, 1.0)
    cos_g = float(np.sqrt(1.0 - sin_g**2))
    accel = (thrust * cos_g - profile.drag_h * v_prev**2) / profile.mass
    speed = max(0.0, v_prev + accel * tau)
    return KinematicEstimate(t=t, kind=MotionKind.HORIZONTAL, speed=speed,
                             accel=accel, tilt=float(np.arcsin(sin_g)))


def invert_vertical(peaks: SpectralPeaks, profile: DroneProfile,
                    v_prev: float, tau: float, t: float = 0.0) -> KinematicEstimate:
    """Signed climb rate from total thrust against weight and drag."""
    groups = peaks.fundamental_groups
    bpf = groups[0][0] if len(groups) == 1 else (
        sum(f * w for f, w in groups) / sum(w for _, w in groups))
    thrust = (profile.lift_coeff / profile.blade_count**2
              * profile.rotor_count * bpf**2)
    weight = profile.mass * GRAVITY
    drag = np.sign(v_prev) * profile.drag_v * v_prev**2
    accel = (thrust - weight - drag) / profile.mass
    speed = v_prev + accel * tau
    return KinematicEstimate(t=t, kind=MotionKind.VERTICAL, speed=speed,
                             accel=accel)


@dataclass(frozen=True)
class CoordinateUpdate:
    position: np.ndarray | None  # measured world position, None when guarded
    h_next: float                # height accumulator after this step
    residual: float | None       # |measured horizontal step - dynamics step|, m
    guarded: bool                # bearing too close to zenith/grazing for tan


def position_from_doa(doa: DoAEstimate, geometry: ArrayGeometry,
                      h: float) -> np.ndarray:
    """World position on the bearing ray at height h.

    The horizontal range follows from the elevation: r = (h - z_array) /
    tan(elevation), i.e. h * tan(zenith angle) in zenith terms.
    """
    dz = h - geometry.origin[2]
    r = dz / max(np.tan(doa.elevation), 1e-9)
    return np.asarray(geometry.origin) + np.array(
        [r * np.cos(doa.azimuth), r * np.sin(doa.azimuth), dz])


def update_coordinates(kin: KinematicEstimate, doa_prev: DoAEstimate | None,
                       doa_cur: DoAEstimate | None, h: float,
                       geometry: ArrayGeometry, tau: float,
                       zenith_guard: float = np.radians(3.0),
                       grazing_guard: float = np.radians(3.0)) -> CoordinateUpdate:
    """Advance the height accumulator and derive the measured position.

    Horizontal motion keeps the height; vertical motion integrates the
    inverted climb rate into the height while the bearing supplies the
    horizontal coordinates. Near zenith the azimuth is unconstrained and
    near grazing the range diverges, so those windows report no position
    and the tracker runs prediction-only.
    """
    h_next = h
    if kin.kind is MotionKind.VERTICAL:
        h_next = h + kin.displacement(tau)

    if doa_cur is None:
        return CoordinateUpdate(None, h_next, None, False)

    guarded = (doa_cur.elevation > np.pi / 2 - zenith_guard
               or doa_cur.elevation < grazing_guard)
    if guarded:
        return CoordinateUpdate(None, h_next, None, True)

    height_for_range = h_next if kin.kind is MotionKind.VERTICAL else h
    position = position_from_doa(doa_cur, geometry, height_for_range)

    residual = None
    if kin.kind is MotionKind.HORIZONTAL and doa_prev is not None:
        p_prev = position_from_doa(doa_prev, geometry, h)
        step = float(np.linalg.norm((position - p_prev)[:2]))
        residual = abs(step - kin.displacement(tau))
    return CoordinateUpdate(position, h_next, residual, False)
