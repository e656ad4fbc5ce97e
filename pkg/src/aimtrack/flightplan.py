"""Forward flight model: scripted segments -> rotor frequencies -> kinematics.

Each basic motion commands a rotor-frequency pattern:

* hover      - all rotors at the hover frequency
* vertical   - all rotors equal, thrust = weight + signed speed-squared drag
* horizontal - two groups split around the tilt-balancing thrust
* yaw        - two groups split so the drag-torque difference gives the
               commanded angular acceleration while keeping vertical balance

Kinematics are then integrated from the realized frequency trace with the
same equations the inverse pipeline solves, so a round trip through the
synthesizer is exact up to measurement error. Segments join with a 50 ms
linear frequency ramp; velocity resets at segment boundaries (the drone
passes through hover between basic motions).
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from . import GRAVITY
from .geometry import line_of_sight
from .profiles import DroneProfile, MotionKind
from .scenario import Scenario, ScenarioError

TAU_SIM = 1e-3          # s, integration step
JOIN_RAMP = 0.050       # s, linear frequency ramp at segment joins
SPLIT_FRAC = 0.05       # relative f^2 split between groups in horizontal motion

MOTION_CODES = {kind: i for i, kind in enumerate(MotionKind)}
MOTION_FROM_CODE = {i: kind for kind, i in MOTION_CODES.items()}


@dataclass
class GroundTruth:
    """Time series of the true flight state on the TAU_SIM grid."""

    t: np.ndarray            # (n,)
    position: np.ndarray     # (n, 3)
    velocity: np.ndarray     # (n, 3)
    yaw: np.ndarray          # (n,)
    rotor_freq: np.ndarray   # (n, N) rotation frequency of each rotor, Hz
    motion: np.ndarray       # (n,) uint8 codes, see MOTION_CODES
    los: np.ndarray          # (n, n_arrays) bool, drone->array-origin clear
    array_ids: tuple[str, ...]

    @property
    def duration(self) -> float:
        return float(self.t[-1])

    def index_at(self, time: float) -> int:
        return int(np.clip(round(time / TAU_SIM), 0, len(self.t) - 1))

    def position_at(self, time: float) -> np.ndarray:
        i = self.index_at(time)
        return self.position[i]

    def motion_at(self, time: float) -> MotionKind:
        return MOTION_FROM_CODE[int(self.motion[self.index_at(time)])]

    def sample(self, hop: float) -> np.ndarray:
        """Row indices at the analysis hop grid 0, hop, 2*hop, ..."""
        times = np.arange(0.0, self.duration - 1e-9, hop)
        return np.clip(np.round(times / TAU_SIM).astype(int), 0, len(self.t) - 1)

    def to_csv(self, hop: float = 0.1) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(
            ["t", "x", "y", "z", "vx", "vy", "vz", "yaw", "motion"]
            + [f"los_{a}" for a in self.array_ids]
        )
        for i in self.sample(hop):
            row = [f"{self.t[i]:.3f}"]
            row += [f"{v:.6f}" for v in self.position[i]]
            row += [f"{v:.6f}" for v in self.velocity[i]]
            row += [f"{self.yaw[i]:.6f}", MOTION_FROM_CODE[int(self.motion[i])].value]
            row += [str(int(v)) for v in self.los[i]]
            writer.writerow(row)
        return buf.getvalue()


def _commanded_freqs(profile: DroneProfile, seg_kind: MotionKind, magnitude: float,
                     n_steps: int, yaw_scale: float = 1.0) -> np.ndarray:
    """Commanded per-rotor frequency trace for one segment, shape (n_steps, N)."""
    n_rot = profile.rotor_count
    k_v, k_h = profile.lift_coeff, profile.drag_coeff
    weight = profile.mass * GRAVITY
    f = np.empty((n_steps, n_rot))

    if seg_kind is MotionKind.HOVER:
        f[:] = profile.hover_freq
        return f

    if seg_kind is MotionKind.VERTICAL:
        thrust = weight + np.sign(magnitude) * profile.drag_v * magnitude**2
        if thrust <= 0:
            raise ScenarioError(
                f"descent speed {abs(magnitude)} m/s unreachable: thrust would be negative"
            )
        f[:] = np.sqrt(thrust / (n_rot * k_v))
        return f

    if seg_kind is MotionKind.HORIZONTAL:
        thrust = float(np.hypot(weight, profile.drag_h * magnitude**2))
        mean_sq = thrust / (n_rot * k_v)
        ga, gb = profile.motion_groups[MotionKind.HORIZONTAL]
        s_a, s_b = len(ga), len(gb)
        # Sum-preserving split: s_a*eps_a == s_b*eps_b. The split ramps in and
        # out so segment joins always blend equal-frequency states.
        t = np.arange(n_steps) * TAU_SIM
        duration = n_steps * TAU_SIM
        ramp = min(JOIN_RAMP, duration / 4.0)
        env = np.minimum(1.0, np.minimum(t / ramp, (duration - t) / ramp))
        eps_a = SPLIT_FRAC * 2.0 * s_b / n_rot * env[:, None]
        eps_b = SPLIT_FRAC * 2.0 * s_a / n_rot * env[:, None]
        f[:, list(ga)] = np.sqrt(mean_sq * (1.0 + eps_a))
        f[:, list(gb)] = np.sqrt(mean_sq * (1.0 - eps_b))
        return f

    if seg_kind is MotionKind.YAW:
        duration = n_steps * TAU_SIM
        t = np.arange(n_steps) * TAU_SIM
        # Accelerate-then-brake profile with ramped transitions; starts and
        # ends at zero split so segment joins do not perturb the rotation.
        ramp = min(JOIN_RAMP, duration / 6.0)
        flip = duration / 2.0
        unit = np.where(t < flip, 1.0, -1.0)
        unit[t < ramp] = t[t < ramp] / ramp
        sel = np.abs(t - flip) < ramp
        unit[sel] = (flip - t[sel]) / ramp
        tail = t > duration - ramp
        unit[tail] = -(duration - t[tail]) / ramp
        omega_u = np.cumsum(unit) * TAU_SIM
        dpsi_u = float(np.sum(omega_u) * TAU_SIM)
        target = yaw_scale * magnitude * duration / 2.0
        beta = unit * (target / dpsi_u if abs(dpsi_u) > 1e-12 else 0.0)
        total_sq = weight / k_v
        diff_sq = profile.inertia * beta / k_h
        if np.any(np.abs(diff_sq) >= total_sq):
            raise ScenarioError(
                f"yaw rate {magnitude} rad/s unreachable: rotor groups would stall"
            )
        ga, gb = profile.motion_groups[MotionKind.YAW]
        f[:, list(ga)] = np.sqrt((total_sq + diff_sq[:, None]) / 2.0 / len(ga))
        f[:, list(gb)] = np.sqrt((total_sq - diff_sq[:, None]) / 2.0 / len(gb))
        return f

    raise ValueError(seg_kind)


def plan_flight(scenario: Scenario) -> GroundTruth:
    """Run the scripted flight forward and return the full state history."""
    profile = scenario.profile
    n_rot = profile.rotor_count
    k_v, k_h = profile.lift_coeff, profile.drag_coeff
    mass, weight = profile.mass, profile.mass * GRAVITY

    steps_per_seg = [max(1, round(s.duration / TAU_SIM)) for s in scenario.segments]
    n = sum(steps_per_seg) + 1
    t = np.arange(n) * TAU_SIM

    ga, gb = profile.motion_groups[MotionKind.YAW]
    ramp_steps = round(JOIN_RAMP / TAU_SIM)
    yaw_scales = [1.0] * len(scenario.segments)
    freqs = np.empty((n, n_rot))
    motion = np.empty(n, dtype=np.uint8)
    seg_bounds: list[tuple[int, int, MotionKind]] = []

    # Two passes: the join ramps blunt the start of each yaw profile, so the
    # second pass rescales each yaw segment to realize the commanded rotation.
    for _ in range(2):
        seg_bounds.clear()
        pos0 = 0
        for si, (seg, n_steps) in enumerate(zip(scenario.segments, steps_per_seg)):
            freqs[pos0:pos0 + n_steps] = _commanded_freqs(
                profile, seg.motion, seg.magnitude, n_steps, yaw_scales[si])
            motion[pos0:pos0 + n_steps] = MOTION_CODES[seg.motion]
            seg_bounds.append((pos0, pos0 + n_steps, seg.motion))
            pos0 += n_steps
        freqs[-1] = freqs[-2]
        motion[-1] = motion[-2]

        # Linear frequency ramps at segment joins.
        for start, _, _ in seg_bounds[1:]:
            lo = freqs[start - 1]
            span = min(ramp_steps, n - start)
            w = np.linspace(0.0, 1.0, span + 1)[1:, None]
            freqs[start:start + span] = lo + w * (freqs[start:start + span] - lo)

        converged = True
        for si, ((start, end, kind), seg) in enumerate(zip(seg_bounds,
                                                           scenario.segments)):
            if kind is not MotionKind.YAW or abs(seg.magnitude) < 1e-12:
                continue
            diff = k_h * (np.sum(freqs[start:end, list(ga)] ** 2, axis=1)
                          - np.sum(freqs[start:end, list(gb)] ** 2, axis=1))
            realized = float(np.sum(np.cumsum(diff / profile.inertia))) * TAU_SIM**2
            target = seg.magnitude * seg.duration / 2.0
            if abs(realized) > 1e-12 and abs(realized - target) > 1e-6:
                yaw_scales[si] *= target / realized
                converged = False
        if converged:
            break

    max_f = float(freqs.max())
    if max_f > 1.4 * profile.hover_freq:
        raise ScenarioError(
            f"commanded rotor frequency {max_f:.1f} Hz exceeds the 1.4x hover "
            "envelope; lower the segment magnitudes"
        )

    position = np.empty((n, 3))
    velocity = np.zeros((n, 3))
    yaw = np.empty(n)
    position[0] = scenario.start_position
    yaw[0] = scenario.start_heading

    thrust_total = k_v * np.sum(freqs**2, axis=1)
    ga, gb = profile.motion_groups[MotionKind.YAW]
    torque_diff = k_h * (np.sum(freqs[:, list(ga)] ** 2, axis=1)
                         - np.sum(freqs[:, list(gb)] ** 2, axis=1))

    for start, end, kind in seg_bounds:
        p = position[start].copy()
        psi = yaw[start]
        if kind in (MotionKind.HOVER,):
            position[start:end + 1] = p
            yaw[start:end + 1] = psi
        elif kind is MotionKind.YAW:
            beta = torque_diff[start:end] / profile.inertia
            omega = np.concatenate([[0.0], np.cumsum(beta) * TAU_SIM])
            yaw[start:end + 1] = psi + np.concatenate(
                [[0.0], np.cumsum(omega[:-1] + np.diff(omega) / 2.0) * TAU_SIM])
            position[start:end + 1] = p
        elif kind is MotionKind.VERTICAL:
            v = 0.0
            yaw[start:end + 1] = psi
            position[start] = p
            for i in range(start, end):
                a = (thrust_total[i] - weight - np.sign(v) * profile.drag_v * v**2) / mass
                v += a * TAU_SIM
                p = p + np.array([0.0, 0.0, v * TAU_SIM])
                position[i + 1] = p
                velocity[i + 1] = (0.0, 0.0, v)
        elif kind is MotionKind.HORIZONTAL:
            v = 0.0
            heading = np.array([np.cos(psi), np.sin(psi), 0.0])
            yaw[start:end + 1] = psi
            position[start] = p
            for i in range(start, end):
                sin_g = min(1.0, weight / thrust_total[i])
                cos_g = np.sqrt(1.0 - sin_g**2)
                a = (thrust_total[i] * cos_g - profile.drag_h * v**2) / mass
                v = max(0.0, v + a * TAU_SIM)
                p = p + heading * (v * TAU_SIM)
                position[i + 1] = p
                velocity[i + 1] = heading * v
        velocity[end] = 0.0  # brakes at the boundary; next segment starts at rest

    los = np.ones((n, len(scenario.arrays)), dtype=bool)
    if scenario.obstacles:
        for j, arr in enumerate(scenario.arrays):
            los[:, j] = line_of_sight(position, np.asarray(arr.origin),
                                      list(scenario.obstacles))

    return GroundTruth(
        t=t, position=position, velocity=velocity, yaw=yaw,
        rotor_freq=freqs, motion=motion, los=los,
        array_ids=tuple(a.id for a in scenario.arrays),
    )
