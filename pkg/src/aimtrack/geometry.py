"""Array layouts, obstacles, line-of-sight tests and image-source reflection.

World frame: x east, y north, z up. Arrays are planar (all elements at the
array's mounting height) and share one orientation convention so element
indices correspond across arrays.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class GeometryError(ValueError):
    pass


def respeaker6_offsets(spacing: float = 0.05) -> list[tuple[float, float]]:
    """Six elements on a circle, adjacent spacing = circle radius = `spacing`."""
    ang = np.arange(6) * np.pi / 3.0
    return [(spacing * float(np.cos(a)), spacing * float(np.sin(a))) for a in ang]


def respeaker4_offsets(spacing: float = 0.065) -> list[tuple[float, float]]:
    """Four elements on a square with adjacent spacing `spacing`."""
    h = spacing / 2.0
    return [(h, h), (-h, h), (-h, -h), (h, -h)]


_NAMED_LAYOUTS = {
    "respeaker6": respeaker6_offsets,
    "respeaker4": respeaker4_offsets,
}


@dataclass(frozen=True)
class ArrayGeometry:
    """One planar microphone array placed in the world."""

    id: str
    origin: tuple[float, float, float]
    element_offsets: tuple[tuple[float, float], ...]
    orientation: float = 0.0     # rad about +z
    clock_offset: float = 0.0    # s, simulated sampling-clock skew

    def __post_init__(self):
        m = len(self.element_offsets)
        if m not in (4, 6):
            raise GeometryError(f"array {self.id}: element count must be 4 or 6, got {m}")
        pts = np.asarray(self.element_offsets, dtype=float)
        d = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=-1)
        if np.any(d[np.triu_indices(m, k=1)] <= 0):
            raise GeometryError(f"array {self.id}: coincident elements")

    @property
    def n_elements(self) -> int:
        return len(self.element_offsets)

    def element_positions(self) -> np.ndarray:
        """World positions of the elements, shape (m, 3)."""
        off = np.asarray(self.element_offsets, dtype=float)
        c, s = np.cos(self.orientation), np.sin(self.orientation)
        rot = np.array([[c, -s], [s, c]])
        xy = off @ rot.T
        pts = np.zeros((len(off), 3))
        pts[:, :2] = xy
        return pts + np.asarray(self.origin, dtype=float)

    def aperture(self) -> float:
        pts = self.element_positions()
        d = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=-1)
        return float(d.max())

    @classmethod
    def from_dict(cls, d: dict) -> "ArrayGeometry":
        elements = d["elements"]
        if isinstance(elements, str):
            try:
                offsets = _NAMED_LAYOUTS[elements]()
            except KeyError:
                raise GeometryError(f"unknown layout {elements!r}") from None
        else:
            offsets = [tuple(p) for p in elements]
        return cls(
            id=str(d["id"]),
            origin=tuple(float(v) for v in d["origin"]),
            element_offsets=tuple(offsets),
            orientation=float(d.get("orientation", 0.0)),
            clock_offset=float(d.get("clock_offset", 0.0)),
        )

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "origin": list(self.origin),
            "elements": [list(p) for p in self.element_offsets],
            "orientation": self.orientation,
            "clock_offset": self.clock_offset,
        }


@dataclass(frozen=True)
class Box:
    """Axis-aligned obstacle."""

    lo: tuple[float, float, float]
    hi: tuple[float, float, float]

    def __post_init__(self):
        if not all(l < h for l, h in zip(self.lo, self.hi)):
            raise GeometryError(f"degenerate box {self.lo}..{self.hi}")

    @classmethod
    def from_dict(cls, d: dict) -> "Box":
        return cls(tuple(float(v) for v in d["min"]), tuple(float(v) for v in d["max"]))

    def to_dict(self) -> dict:
        return {"min": list(self.lo), "max": list(self.hi)}


def segments_blocked(starts: np.ndarray, end: np.ndarray, box: Box) -> np.ndarray:
    """Slab test: which of the segments starts[i] -> end intersect the box.

    `starts` is (n, 3); `end` is (3,). Returns a boolean (n,) array.
    Endpoints inside the box count as blocked.
    """
    starts = np.atleast_2d(np.asarray(starts, dtype=float))
    end = np.asarray(end, dtype=float)
    d = end[None, :] - starts
    lo = np.asarray(box.lo) - starts
    hi = np.asarray(box.hi) - starts
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = lo / d
        t2 = hi / d
    # Parallel-axis handling: if d==0 on an axis, segment blocked on that axis
    # only if the start lies inside the slab.
    near = np.where(np.isfinite(t1), np.minimum(t1, t2), -np.inf)
    far = np.where(np.isfinite(t2), np.maximum(t1, t2), np.inf)
    parallel_out = (np.abs(d) < 1e-12) & ((lo > 0) | (hi < 0))
    tmin = np.maximum(near.max(axis=1), 0.0)
    tmax = np.minimum(far.min(axis=1), 1.0)
    hit = (tmin <= tmax) & ~parallel_out.any(axis=1)
    return hit


def line_of_sight(positions: np.ndarray, target: np.ndarray,
                  obstacles: list[Box]) -> np.ndarray:
    """True where the segment position->target clears every obstacle."""
    positions = np.atleast_2d(np.asarray(positions, dtype=float))
    clear = np.ones(len(positions), dtype=bool)
    for box in obstacles:
        clear &= ~segments_blocked(positions, target, box)
    return clear


def first_blocking_box(position: np.ndarray, target: np.ndarray,
                       obstacles: list[Box]) -> Box | None:
    """Nearest obstacle (from `target`, i.e. the receiver) cutting the segment."""
    best = None
    best_t = np.inf
    position = np.asarray(position, dtype=float)
    target = np.asarray(target, dtype=float)
    for box in obstacles:
        if not segments_blocked(position[None, :], target, box)[0]:
            continue
        # entry parameter along target -> position
        d = position - target
        with np.errstate(divide="ignore", invalid="ignore"):
            t1 = (np.asarray(box.lo) - target) / d
            t2 = (np.asarray(box.hi) - target) / d
        near = np.where(np.isfinite(t1), np.minimum(t1, t2), -np.inf)
        t_entry = max(near.max(), 0.0)
        if t_entry < best_t:
            best_t = t_entry
            best = box
    return best


def mirror_across_face(points: np.ndarray, box: Box, receiver: np.ndarray) -> np.ndarray:
    """Mirror source points across the box face first crossed from the receiver.

    Models the dominant reflected path when the direct path is blocked: the
    receiver hears the source roughly from the image position behind the
    obstruction face it looks at.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    receiver = np.asarray(receiver, dtype=float)
    centroid = points.mean(axis=0)
    d = centroid - receiver
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (np.asarray(box.lo) - receiver) / d
        t2 = (np.asarray(box.hi) - receiver) / d
    near = np.where(np.isfinite(np.minimum(t1, t2)), np.minimum(t1, t2), -np.inf)
    axis = int(np.argmax(near))
    # Which side of the slab was entered first determines the face plane.
    plane = box.lo[axis] if receiver[axis] < (box.lo[axis] + box.hi[axis]) / 2 else box.hi[axis]
    mirrored = points.copy()
    mirrored[:, axis] = 2.0 * plane - mirrored[:, axis]
    return mirrored
