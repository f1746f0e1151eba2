from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .geometry import BBox


@dataclass
class Detection:
    frame: int
    box: BBox
    score: float = 1.0
    appearance: Optional[np.ndarray] = None

    def __post_init__(self):
        if not (0.0 <= self.score <= 1.0):
            raise ValueError(f"detection score must lie in [0, 1], got {self.score}")


@dataclass
class Trajectory:
    id: int
    points: list[tuple[int, BBox]] = field(default_factory=list)

    def frames(self) -> list[int]:
        return [f for f, _ in self.points]

    def box_at(self, frame: int) -> Optional[BBox]:
        for f, b in self.points:
            if f == frame:
                return b
        return None


def frames_of_boxes(trajectories: list[Trajectory], first: int, last: int) -> list[list[BBox]]:
    """Per-frame box lists for frames ``first..last`` (inclusive), ordered by id."""
    out: list[list[BBox]] = [[] for _ in range(last - first + 1)]
    for traj in sorted(trajectories, key=lambda t: t.id):
        for f, b in traj.points:
            if first <= f <= last:
                out[f - first].append(b)
    return out


def by_frame(trajectories: list[Trajectory]) -> dict[int, dict[int, BBox]]:
    out: dict[int, dict[int, BBox]] = {}
    for traj in trajectories:
        for f, b in traj.points:
            out.setdefault(f, {})[traj.id] = b
    return out


def clip_frames(trajectories: list[Trajectory], first: int, last: int) -> list[Trajectory]:
    out = []
    for t in trajectories:
        pts = [(f, b) for f, b in t.points if first <= f <= last]
        if pts:
            out.append(Trajectory(t.id, pts))
    return out
