"""Passive acoustic drone localization and tracking.

A flying multirotor is tracked from the sound of its own propellers: the
blade-passing frequency (BPF) and its harmonics reveal the rotor speeds and
hence, through the drone's dynamics, its accelerations; the direction of
arrival at a small microphone array anchors the position. Distributed arrays
extend the range via TDoA multilateration fused with the single-array track.

The package also contains the forward model (flight planner + multi-channel
audio synthesizer) used as the ground-truth oracle for closed-loop testing.
"""

__version__ = "0.1.0"

SPEED_OF_SOUND = 343.0  # m/s, dry air ~20 C
GRAVITY = 9.81  # m/s^2
