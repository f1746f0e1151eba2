"""Constant-velocity Kalman tracks and two-stage (high / low score) association.

Affinities are IoU between Kalman-predicted track boxes and detections,
optionally blended with aligned-feature affinities from a ``RamModel``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .assignment import match_by_affinity
from .geometry import BBox, iou_matrix, mark_box
from .ram import (
    FusionCoefficients,
    RamKind,
    RamModel,
    clipped_cosine_matrix,
    fuse_spatial,
    fuse_st,
    fuse_temporal,
    sram_align,
    tram_align,
)
from .records import Detection, Trajectory

STD_WEIGHT_POSITION = 1.0 / 20
STD_WEIGHT_VELOCITY = 1.0 / 160


class KalmanBoxFilter:
    """State ``(cx, cy, w, h, vcx, vcy, vw, vh)``; noise scales with box height."""

    def __init__(self, process_noise_scale: float = 1.0, measurement_noise_scale: float = 1.0):
        self.q_scale = process_noise_scale
        self.r_scale = measurement_noise_scale
        self.F = np.eye(8)
        self.F[:4, 4:] = np.eye(4)
        self.H = np.eye(4, 8)

    @staticmethod
    def measurement(box: BBox) -> np.ndarray:
        cx, cy = box.center
        return np.array([cx, cy, box.w, box.h])

    def initiate(self, box: BBox):
        z = self.measurement(box)
        mean = np.r_[z, np.zeros(4)]
        h = box.h
        std = np.r_[np.full(4, 2 * STD_WEIGHT_POSITION * h), np.full(4, 10 * STD_WEIGHT_VELOCITY * h)]
        return mean, np.diag(std ** 2)

    def predict(self, mean, cov):
        h = mean[3]
        std = np.r_[np.full(4, STD_WEIGHT_POSITION * h), np.full(4, STD_WEIGHT_VELOCITY * h)]
        Q = np.diag(std ** 2) * self.q_scale
        return self.F @ mean, self.F @ cov @ self.F.T + Q

    def update(self, mean, cov, box: BBox):
        z = self.measurement(box)
        R = np.diag(np.full(4, (STD_WEIGHT_POSITION * mean[3]) ** 2)) * self.r_scale
        S = self.H @ cov @ self.H.T + R
        K = np.linalg.solve(S, self.H @ cov).T
        mean = mean + K @ (z - self.H @ mean)
        cov = cov - K @ S @ K.T
        return mean, cov


def state_box(mean: np.ndarray) -> BBox:
    return BBox.from_center(mean[0], mean[1], max(mean[2], 0.0), max(mean[3], 0.0))


@dataclass
class Track:
    id: int
    mean: np.ndarray
    cov: np.ndarray
    last_box: BBox
    age_since_update: int = 0
    history: list[tuple[int, BBox]] = field(default_factory=list)
    cached_aligned_human: Optional[np.ndarray] = None
    predicted: Optional[BBox] = None


def kalman_predict(track: Track, kf: KalmanBoxFilter) -> BBox:
    track.mean, track.cov = kf.predict(track.mean, track.cov)
    track.predicted = state_box(track.mean)
    return track.predicted


def kalman_update(track: Track, observed: BBox, kf: KalmanBoxFilter) -> Track:
    track.mean, track.cov = kf.update(track.mean, track.cov, observed)
    return track


@dataclass
class StageConfig:
    alpha: float
    gate: float
    use_ram: bool = True


@dataclass
class TrackerConfig:
    tau_high: float = 0.6
    tau_low: float = 0.1
    stage1: StageConfig = field(default_factory=lambda: StageConfig(0.2, 0.9))
    stage2: StageConfig = field(default_factory=lambda: StageConfig(0.3, 0.5))
    lam: float = 0.5
    max_age: int = 30
    min_score_new_track: Optional[float] = None
    process_noise_scale: float = 1.0
    measurement_noise_scale: float = 1.0

    def __post_init__(self):
        if not (0.0 <= self.tau_low < self.tau_high <= 1.0):
            raise ValueError(f"need 0 <= tau_low < tau_high <= 1, got {self.tau_low}, {self.tau_high}")
        if self.max_age < 0:
            raise ValueError("max_age must be >= 0")
        for st in (self.stage1, self.stage2):
            FusionCoefficients(st.alpha, st.alpha, self.lam)
        if self.min_score_new_track is None:
            self.min_score_new_track = self.tau_high

    @classmethod
    def single_stage(cls, **kw) -> "TrackerConfig":
        """One association stage over all kept detections (alpha 0.3, gate 0.9)."""
        return cls(tau_high=kw.pop("tau_high", 0.6), tau_low=kw.pop("tau_low", 0.1),
                   stage1=StageConfig(0.3, 0.9), stage2=StageConfig(0.3, 0.9, False), **kw)


class Tracker:
    """Fold-style tracker: call :meth:`step` once per frame, in order."""

    def __init__(self, cfg: Optional[TrackerConfig] = None, ram: Optional[RamModel] = None):
        self.cfg = cfg or TrackerConfig()
        self.ram = ram if ram is not None and ram.kind is not RamKind.NONE else None
        self.kf = KalmanBoxFilter(self.cfg.process_noise_scale, self.cfg.measurement_noise_scale)
        self.tracks: list[Track] = []
        self.retired: list[Track] = []
        self.next_id = 1

    # -- affinities -----------------------------------------------------
    def _aligned(self, tracks: list[Track], boxes: list[BBox]):
        """Aligned affinities of all tracks vs all kept detections of the frame."""
        ram = self.ram
        out = {"temporal": None, "spatial": None, "humans_s": None}
        if ram is None:
            return out
        if ram.temporal is not None:
            preds = [t.predicted for t in tracks]
            h_bar, c_bar = tram_align(ram.temporal, boxes, preds, ram.frame)
            out["temporal"] = clipped_cosine_matrix(c_bar, h_bar)
        if ram.spatial is not None:
            marks = [mark_box(b, ram.mark_fraction) for b in boxes]
            h_bar, _ = sram_align(ram.spatial, boxes, marks, ram.frame)
            dim = ram.spatial.dim
            cached = np.array([t.cached_aligned_human if t.cached_aligned_human is not None
                               else np.zeros(dim) for t in tracks]).reshape(len(tracks), dim)
            out["spatial"] = clipped_cosine_matrix(cached, h_bar)
            out["humans_s"] = h_bar
        return out

    def _affinity(self, raw: np.ndarray, aligned: dict, rows, cols, stage: StageConfig):
        if self.ram is None or not stage.use_ram:
            return raw
        a_t = a_s = None
        if aligned["temporal"] is not None:
            a_t = fuse_temporal(raw, aligned["temporal"][np.ix_(rows, cols)], stage.alpha)
        if aligned["spatial"] is not None:
            a_s = fuse_spatial(raw, aligned["spatial"][np.ix_(rows, cols)], stage.alpha)
        if a_t is not None and a_s is not None:
            return fuse_st(a_s, a_t, self.cfg.lam)
        return a_t if a_t is not None else a_s

    # -- main loop ------------------------------------------------------
    def step(self, detections: Sequence[Detection]) -> dict[int, int]:
        """Associate one frame. Returns ``{detection index: track id}``."""
        cfg = self.cfg
        frames = {d.frame for d in detections}
        if len(frames) > 1:
            raise ValueError(f"detections from several frames in one step: {sorted(frames)}")

        for t in self.tracks:
            kalman_predict(t, self.kf)
        if not detections:
            self._age([], None)
            return {}
        frame = detections[0].frame

        kept = [i for i, d in enumerate(detections) if d.score >= cfg.tau_low]
        high = [k for k, i in enumerate(kept) if detections[i].score >= cfg.tau_high]
        low = [k for k, i in enumerate(kept) if detections[i].score < cfg.tau_high]
        boxes = [detections[i].box for i in kept]
        tracks = self.tracks
        aligned = self._aligned(tracks, boxes) if (self.ram is not None and boxes) else None
        preds = [t.predicted for t in tracks]
        raw_all = iou_matrix(preds, boxes)

        assigned: dict[int, int] = {}  # kept index -> track position
        matched_tracks: set[int] = set()

        def run_stage(rows: list[int], cols: list[int], stage: StageConfig):
            if not rows or not cols:
                return
            raw = raw_all[np.ix_(rows, cols)]
            aff = raw if aligned is None else self._affinity(raw, aligned, rows, cols, stage)
            m = match_by_affinity(aff, stage.gate)
            for r, c in m.pairs:
                assigned[cols[c]] = rows[r]
                matched_tracks.add(rows[r])

        run_stage(list(range(len(tracks))), high, cfg.stage1)
        remaining = [r for r in range(len(tracks)) if r not in matched_tracks]
        run_stage(remaining, low, cfg.stage2)

        h_bar = aligned["humans_s"] if aligned is not None else None
        result: dict[int, int] = {}
        for k, r in sorted(assigned.items()):
            t = tracks[r]
            box = boxes[k]
            kalman_update(t, box, self.kf)
            t.last_box = box
            t.age_since_update = 0
            t.history.append((frame, box))
            if h_bar is not None:
                t.cached_aligned_human = h_bar[k].copy()
            result[kept[k]] = t.id

        new_tracks = []
        for k in high:
            if k in assigned or detections[kept[k]].score < cfg.min_score_new_track:
                continue
            box = boxes[k]
            mean, cov = self.kf.initiate(box)
            t = Track(self.next_id, mean, cov, box, 0, [(frame, box)])
            if h_bar is not None:
                t.cached_aligned_human = h_bar[k].copy()
            self.next_id += 1
            new_tracks.append(t)
            result[kept[k]] = t.id

        self._age(matched_tracks, new_tracks)
        return result

    def _age(self, matched, new_tracks):
        alive = []
        for r, t in enumerate(self.tracks):
            if r not in matched:
                t.age_since_update += 1
                if t.age_since_update > self.cfg.max_age:
                    self.retired.append(t)
                    continue
            alive.append(t)
        self.tracks = alive + (new_tracks or [])

    def trajectories(self) -> list[Trajectory]:
        all_tracks = sorted(self.retired + self.tracks, key=lambda t: t.id)
        return [Trajectory(t.id, list(t.history)) for t in all_tracks]


def track_step(tracker: Tracker, detections: Sequence[Detection]) -> dict[int, int]:
    return tracker.step(detections)


def track_sequence(frames: Sequence[Sequence[Detection]], cfg: Optional[TrackerConfig] = None,
                   ram: Optional[RamModel] = None) -> list[Trajectory]:
    tracker = Tracker(cfg, ram)
    for dets in frames:
        tracker.step(dets)
    return tracker.trajectories()

