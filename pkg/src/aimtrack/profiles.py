"""Drone physical profiles and the four basic motion kinds.

A profile collects the constants the dynamics equations need (mass, lift and
drag coefficients, inertia, air-drag terms) together with the rotor layout:
how the rotors split into two groups for yaw and for horizontal motion. The
same profile drives both the forward simulator and the inverse pipeline, so
round trips are exact up to measurement error.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from . import GRAVITY


class MotionKind(enum.Enum):
    HOVER = "hover"
    YAW = "yaw"
    HORIZONTAL = "horizontal"
    VERTICAL = "vertical"


class Structure(enum.Enum):
    QUAD = "quad"
    HEXA = "hexa"
    OCTO = "octo"
    Y6 = "y6"


_ROTORS_FOR_STRUCTURE = {
    Structure.QUAD: 4,
    Structure.HEXA: 6,
    Structure.OCTO: 8,
    Structure.Y6: 6,
}


class ProfileError(ValueError):
    """A profile violates one of its self-consistency invariants."""


@dataclass(frozen=True)
class DroneProfile:
    """Physical constants of one drone structure.

    Thrust of one rotor is ``lift_coeff * f**2`` with ``f`` the rotor
    rotation frequency in Hz; the acoustic fundamental is the blade-passing
    frequency ``blade_count * f``.
    """

    name: str
    structure: Structure
    rotor_count: int
    blade_count: int
    mass: float            # kg
    lift_coeff: float      # N s^2 (thrust = k_v f^2)
    drag_coeff: float      # N m s^2 (rotor drag torque = k_h f^2)
    inertia: float         # kg m^2, about the vertical axis
    drag_h: float          # N s^2/m^2, horizontal air drag
    drag_v: float          # N s^2/m^2, vertical air drag
    hover_freq: float      # Hz, per-rotor rotation frequency at hover
    spl_1m: float          # dB SPL at 1 m while hovering
    motion_groups: dict[MotionKind, tuple[tuple[int, ...], tuple[int, ...]]] = field(
        default_factory=dict
    )

    @property
    def bpf_hover(self) -> float:
        """Blade-passing frequency at hover, Hz."""
        return self.blade_count * self.hover_freq

    def hover_thrust(self) -> float:
        return self.rotor_count * self.lift_coeff * self.hover_freq**2

    def validate(self) -> None:
        n = self.rotor_count
        if n != _ROTORS_FOR_STRUCTURE[self.structure]:
            raise ProfileError(
                f"{self.name}: structure {self.structure.value} requires "
                f"{_ROTORS_FOR_STRUCTURE[self.structure]} rotors, got {n}"
            )
        if self.blade_count < 2:
            raise ProfileError(f"{self.name}: blade_count must be >= 2")
        weight = self.mass * GRAVITY
        imbalance = abs(self.hover_thrust() - weight) / weight
        if imbalance > 0.01:
            raise ProfileError(
                f"{self.name}: hover thrust {self.hover_thrust():.4f} N does not "
                f"balance weight {weight:.4f} N (off by {imbalance:.1%})"
            )
        for kind in (MotionKind.YAW, MotionKind.HORIZONTAL):
            groups = self.motion_groups.get(kind)
            if groups is None or len(groups) != 2:
                raise ProfileError(f"{self.name}: {kind.value} needs exactly 2 rotor groups")
            members = sorted(groups[0] + groups[1])
            if members != list(range(n)):
                raise ProfileError(
                    f"{self.name}: {kind.value} groups must partition rotors 0..{n - 1}"
                )
        if self.structure is Structure.Y6:
            sizes = sorted(len(g) for g in self.motion_groups[MotionKind.HORIZONTAL])
            if sizes != [2, 4]:
                raise ProfileError(f"{self.name}: Y6 horizontal groups must have sizes 2 and 4")

    def group_sizes(self, kind: MotionKind) -> tuple[int, int]:
        a, b = self.motion_groups[kind]
        return len(a), len(b)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "structure": self.structure.value,
            "rotor_count": self.rotor_count,
            "blade_count": self.blade_count,
            "mass": self.mass,
            "lift_coeff": self.lift_coeff,
            "drag_coeff": self.drag_coeff,
            "inertia": self.inertia,
            "drag_h": self.drag_h,
            "drag_v": self.drag_v,
            "hover_freq": self.hover_freq,
            "spl_1m": self.spl_1m,
            "motion_groups": {
                kind.value: [list(g) for g in groups]
                for kind, groups in self.motion_groups.items()
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DroneProfile":
        groups = {
            MotionKind(k): (tuple(v[0]), tuple(v[1]))
            for k, v in d["motion_groups"].items()
        }
        prof = cls(
            name=d["name"],
            structure=Structure(d["structure"]),
            rotor_count=int(d["rotor_count"]),
            blade_count=int(d["blade_count"]),
            mass=float(d["mass"]),
            lift_coeff=float(d["lift_coeff"]),
            drag_coeff=float(d["drag_coeff"]),
            inertia=float(d["inertia"]),
            drag_h=float(d["drag_h"]),
            drag_v=float(d["drag_v"]),
            hover_freq=float(d["hover_freq"]),
            spl_1m=float(d["spl_1m"]),
            motion_groups=groups,
        )
        prof.validate()
        return prof


def _balanced_lift(mass: float, rotors: int, hover_freq: float) -> float:
    """Lift coefficient that exactly balances gravity at hover."""
    return mass * GRAVITY / (rotors * hover_freq**2)


def _quad_groups() -> dict[MotionKind, tuple[tuple[int, ...], tuple[int, ...]]]:
    return {
        MotionKind.YAW: ((0, 2), (1, 3)),
        MotionKind.HORIZONTAL: ((0, 1), (2, 3)),
    }


def _make_profile(name, structure, blades, mass, hover, spl, drag_coeff, inertia,
                  groups) -> DroneProfile:
    rotors = _ROTORS_FOR_STRUCTURE[structure]
    scale = mass / 0.249
    prof = DroneProfile(
        name=name,
        structure=structure,
        rotor_count=rotors,
        blade_count=blades,
        mass=mass,
        lift_coeff=_balanced_lift(mass, rotors, hover),
        drag_coeff=drag_coeff,
        inertia=inertia,
        drag_h=0.40 * scale,
        drag_v=0.30 * scale,
        hover_freq=hover,
        spl_1m=spl,
        motion_groups=groups,
    )
    prof.validate()
    return prof


def default_profiles() -> dict[str, DroneProfile]:
    """Bundled profile set: small quad, 5-blade cinewhoop, 3-blade FPV, Y6."""
    mini = _make_profile("mini2-like", Structure.QUAD, 2, 0.249, 164.0, 77.0,
                         drag_coeff=3.0e-7, inertia=2.0e-3, groups=_quad_groups())
    avata = _make_profile("avata-like", Structure.QUAD, 5, 0.410, 300.0, 80.0,
                          drag_coeff=1.0e-7, inertia=2.5e-3, groups=_quad_groups())
    fpv = _make_profile("fpv-like", Structure.QUAD, 3, 0.795, 185.0, 82.0,
                        drag_coeff=4.0e-7, inertia=6.0e-3, groups=_quad_groups())
    y6 = _make_profile(
        "y6-like", Structure.Y6, 2, 1.20, 110.0, 84.0,
        drag_coeff=8.0e-7, inertia=1.6e-2,
        groups={
            MotionKind.YAW: ((0, 2, 4), (1, 3, 5)),
            MotionKind.HORIZONTAL: ((2, 3, 4, 5), (0, 1)),
        },
    )
    return {p.name: p for p in (mini, avata, fpv, y6)}


def load_profile(source: str | Path | dict) -> DroneProfile:
    """Resolve a profile from a bundled name, a JSON file path, or a dict."""
    if isinstance(source, dict):
        return DroneProfile.from_dict(source)
    defaults = default_profiles()
    if isinstance(source, str) and source in defaults:
        return defaults[source]
    path = Path(source)
    if path.exists():
        return DroneProfile.from_dict(json.loads(path.read_text()))
    raise ProfileError(f"unknown profile {source!r}; bundled: {sorted(defaults)}")


def steady_rotor_freq(profile: DroneProfile, kind: MotionKind, speed: float) -> float:
    """Mean rotor frequency that holds the given steady motion.

    Hover and yaw keep vertical balance; vertical motion must beat gravity
    plus the speed-squared drag; horizontal motion carries the extra thrust
    that both balances gravity through the tilt and cancels horizontal drag.
    """
    weight = profile.mass * GRAVITY
    if kind in (MotionKind.HOVER, MotionKind.YAW):
        thrust = weight
    elif kind is MotionKind.VERTICAL:
        thrust = weight + math.copysign(profile.drag_v * speed**2, speed)
    elif kind is MotionKind.HORIZONTAL:
        thrust = math.hypot(weight, profile.drag_h * speed**2)
    else:
        raise ValueError(kind)
    if thrust <= 0:
        raise ProfileError(f"infeasible steady {kind.value} at {speed} m/s")
    return math.sqrt(thrust / (profile.rotor_count * profile.lift_coeff))
