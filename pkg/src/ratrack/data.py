"""MOT Challenge text IO, model files and the synthetic scenario generator."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Optional

import numpy as np

from .geometry import BBox, FrameSize, iou
from .neural import RamParams
from .ram import RamKind, RamModel
from .records import Detection, Trajectory

MODEL_FORMAT = "ratrack-model-v1"


class MotFormatError(ValueError):
    pass


class ModelFormatError(ValueError):
    pass


# ---------------------------------------------------------------------------
# MOT Challenge files: frame,id,bb_left,bb_top,bb_width,bb_height,conf,x,y,z[,feat...]

@dataclass
class MotFile:
    detections: dict[int, list[Detection]]
    trajectories: list[Trajectory]

    def frame_range(self) -> tuple[int, int]:
        frames = set(self.detections)
        for t in self.trajectories:
            frames.update(t.frames())
        if not frames:
            return (1, 0)
        return min(frames), max(frames)

    def detections_in(self, first: int, last: int) -> list[list[Detection]]:
        return [self.detections.get(f, []) for f in range(first, last + 1)]


def read_mot(path) -> MotFile:
    """Parse a MOT text file.

    Rows with id -1 are detections; rows with id >= 1 are trajectory points.
    Columns past the tenth, if present on a detection row, are read as its
    appearance vector. Rows may appear in any frame order.
    """
    dets: dict[int, list[Detection]] = {}
    points: dict[int, list[tuple[int, BBox]]] = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            cols = line.split(",")
            if len(cols) < 6:
                raise MotFormatError(f"{path}:{lineno}: expected at least 6 columns, got {len(cols)}")
            try:
                frame = int(float(cols[0]))
                tid = int(float(cols[1]))
                x, y, w, h = (float(c) for c in cols[2:6])
                conf = float(cols[6]) if len(cols) > 6 else 1.0
                extra = [float(c) for c in cols[10:]]
            except ValueError as exc:
                raise MotFormatError(f"{path}:{lineno}: {exc}") from None
            try:
                box = BBox(x, y, w, h)
            except ValueError as exc:
                raise MotFormatError(f"{path}:{lineno}: {exc}") from None
            if tid == -1:
                score = min(max(conf, 0.0), 1.0)
                app = np.array(extra) if extra else None
                dets.setdefault(frame, []).append(Detection(frame, box, score, app))
            elif tid >= 1:
                points.setdefault(tid, []).append((frame, box))
            else:
                raise MotFormatError(f"{path}:{lineno}: invalid id {tid}")
    trajectories = [Trajectory(tid, sorted(pts, key=lambda p: p[0])) for tid, pts in sorted(points.items())]
    return MotFile(dict(sorted(dets.items())), trajectories)


def _num(v: float) -> str:
    v = float(v)
    if v.is_integer() and abs(v) < 1e15:
        return str(int(v))
    return repr(v)


def write_mot(trajectories: list[Trajectory], path) -> None:
    rows = []
    for t in trajectories:
        for f, b in t.points:
            rows.append((f, t.id, b))
    rows.sort(key=lambda r: (r[0], r[1]))
    with open(path, "w") as fh:
        for f, tid, b in rows:
            fh.write(f"{f},{tid},{_num(b.x)},{_num(b.y)},{_num(b.w)},{_num(b.h)},1.0,-1,-1,-1\n")


def write_detections(frames: list[list[Detection]], path) -> None:
    with open(path, "w") as fh:
        for dets in frames:
            for d in dets:
                b = d.box
                row = f"{d.frame},-1,{_num(b.x)},{_num(b.y)},{_num(b.w)},{_num(b.h)},{_num(d.score)},-1,-1,-1"
                if d.appearance is not None:
                    row += "," + ",".join(_num(v) for v in d.appearance)
                fh.write(row + "\n")


# ---------------------------------------------------------------------------
# model files (JSON; floats are written with repr so they round-trip exactly)

def save_model(model: RamModel, path, train_config: Optional[dict] = None,
               seed: Optional[int] = None) -> None:
    encoders = model.encoders()
    first = next(iter(encoders.values()))
    doc = {
        "format": MODEL_FORMAT,
        "kind": model.kind.value,
        "frame": [model.frame.width, model.frame.height],
        "mark_fraction": model.mark_fraction,
        "dims": {"in_dim": first.in_dim, "dim": first.dim, "heads": first.heads, "ff_dim": first.ff_dim},
        "seed": seed,
        "train_config": train_config or {},
        "encoders": {
            name: {k: v.tolist() for k, v in p.arrays.items()} for name, p in encoders.items()
        },
    }
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def load_model(path) -> RamModel:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"{path}: not a valid model file ({exc})") from None
    if not isinstance(doc, dict) or doc.get("format") != MODEL_FORMAT:
        found = doc.get("format") if isinstance(doc, dict) else None
        raise ModelFormatError(f"{path}: expected format {MODEL_FORMAT!r}, found {found!r}")
    try:
        kind = RamKind.parse(doc["kind"])
        dims = doc["dims"]
        frame = FrameSize(*doc["frame"])
        encoders = {}
        for name, arrays in doc["encoders"].items():
            arrs = {k: np.asarray(v, dtype=np.float64) for k, v in arrays.items()}
            encoders[name] = RamParams(arrs, int(dims["in_dim"]), int(dims["dim"]),
                                       int(dims["heads"]), int(dims["ff_dim"]))
        return RamModel(kind, frame, encoders.get("temporal"), encoders.get("spatial"),
                        float(doc.get("mark_fraction", 0.6)))
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"{path}: invalid model contents: {exc}") from None


def model_train_config(path) -> dict:
    return json.loads(Path(path).read_text()).get("train_config", {})


# ---------------------------------------------------------------------------
# deterministic RNG

_MASK = (1 << 64) - 1


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & _MASK


class Xoshiro256:
    """xoshiro256** (Blackman & Vigna) seeded through splitmix64.

    Pure integer arithmetic, so the stream is identical on every platform.
    Uniform doubles use the top 53 bits; normals use Box-Muller.
    """

    def __init__(self, seed: int):
        x = seed & _MASK
        state = []
        for _ in range(4):
            x = (x + 0x9E3779B97F4A7C15) & _MASK
            z = x
            z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
            z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
            state.append(z ^ (z >> 31))
        self.s = state
        self._spare: Optional[float] = None

    def next_u64(self) -> int:
        s = self.s
        result = (_rotl((s[1] * 5) & _MASK, 7) * 9) & _MASK
        t = (s[1] << 17) & _MASK
        s[2] ^= s[0]
        s[3] ^= s[1]
        s[1] ^= s[2]
        s[0] ^= s[3]
        s[2] ^= t
        s[3] = _rotl(s[3], 45)
        return result

    def random(self) -> float:
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def uniform(self, lo: float, hi: float) -> float:
        return lo + (hi - lo) * self.random()

    def normal(self) -> float:
        if self._spare is not None:
            z, self._spare = self._spare, None
            return z
        u1 = 1.0 - self.random()  # (0, 1]
        u2 = self.random()
        r = math.sqrt(-2.0 * math.log(u1))
        self._spare = r * math.sin(2.0 * math.pi * u2)
        return r * math.cos(2.0 * math.pi * u2)

    def poisson(self, lam: float) -> int:
        limit = math.exp(-lam)
        k, p = 0, self.random()
        while p > limit:
            k += 1
            p *= self.random()
        return k

    def below(self, n: int) -> int:
        return self.next_u64() % n


# ---------------------------------------------------------------------------
# synthetic scenario

@dataclass
class ScenarioSpec:
    n_objects: int = 16
    n_frames: int = 300
    frame_width: int = 1920
    frame_height: int = 1080
    speed_min: float = 0.5
    speed_max: float = 2.0
    turn_prob: float = 0.02
    dropout: float = 0.1
    noise_sigma: float = 1.0
    clutter_rate: float = 0.5
    width_min: float = 60.0
    width_max: float = 120.0
    aspect_min: float = 2.0
    aspect_max: float = 3.0
    occlusion_iou: float = 0.3
    occlusion_factor: float = 3.0
    seed: int = 7

    def __post_init__(self):
        for name in ("turn_prob", "dropout"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if self.noise_sigma < 0 or self.clutter_rate < 0:
            raise ValueError("noise_sigma and clutter_rate must be >= 0")
        if self.n_objects < 0 or self.n_frames < 0:
            raise ValueError("n_objects and n_frames must be >= 0")
        if not (0 <= self.speed_min <= self.speed_max):
            raise ValueError("need 0 <= speed_min <= speed_max")
        if not (0 < self.width_min <= self.width_max) or not (0 < self.aspect_min <= self.aspect_max):
            raise ValueError("size ranges must be positive and ordered")
        if self.width_max * self.aspect_max >= self.frame_height or self.width_max >= self.frame_width:
            raise ValueError("object boxes must fit inside the frame")

    @property
    def frame(self) -> FrameSize:
        return FrameSize(self.frame_width, self.frame_height)

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def to_dict(self) -> dict:
        return asdict(self)


def _reflect(c: float, v: float, half: float, limit: float) -> tuple[float, float]:
    if c - half < 0:
        c, v = 2 * half - c, -v
    elif c + half > limit:
        c, v = 2 * (limit - half) - c, -v
    return c, v


def generate_scenario(spec: ScenarioSpec) -> tuple[list[Trajectory], list[list[Detection]]]:
    """Random-walk objects with noisy, dropped and cluttered detections.

    Returns ground-truth trajectories (ids 1..n, frames 1..n_frames) and the
    per-frame detection lists. An object whose box overlaps another with
    IoU above ``occlusion_iou`` while its bottom edge is higher in the image
    (i.e. it stands behind) has its dropout probability multiplied by
    ``occlusion_factor``.
    """
    rng = Xoshiro256(spec.seed)
    W, H = spec.frame_width, spec.frame_height
    objs = []
    for _ in range(spec.n_objects):
        w = rng.uniform(spec.width_min, spec.width_max)
        h = w * rng.uniform(spec.aspect_min, spec.aspect_max)
        cx = rng.uniform(w / 2, W - w / 2)
        cy = rng.uniform(h / 2, H - h / 2)
        speed = rng.uniform(spec.speed_min, spec.speed_max)
        theta = rng.uniform(0.0, 2 * math.pi)
        objs.append([cx, cy, w, h, speed * math.cos(theta), speed * math.sin(theta)])

    gt = [Trajectory(i + 1) for i in range(spec.n_objects)]
    detections: list[list[Detection]] = []
    for frame in range(1, spec.n_frames + 1):
        boxes = [BBox.from_center(o[0], o[1], o[2], o[3]) for o in objs]
        for traj, b in zip(gt, boxes):
            traj.points.append((frame, b))

        dets: list[Detection] = []
        for i, b in enumerate(boxes):
            occluded = any(
                j != i and b.y + b.h < other.y + other.h and iou(b, other) > spec.occlusion_iou
                for j, other in enumerate(boxes)
            )
            p_drop = min(1.0, spec.dropout * (spec.occlusion_factor if occluded else 1.0))
            if rng.random() < p_drop:
                continue
            s = spec.noise_sigma
            if s > 0:
                nb = BBox(b.x + s * rng.normal(), b.y + s * rng.normal(),
                          max(1.0, b.w + s * rng.normal()), max(1.0, b.h + s * rng.normal()))
            else:
                nb = b
            dets.append(Detection(frame, nb, rng.uniform(0.6, 1.0)))
        n_clutter = rng.poisson(spec.clutter_rate) if spec.clutter_rate > 0 else 0
        for _ in range(n_clutter):
            w = rng.uniform(spec.width_min, spec.width_max)
            h = w * rng.uniform(spec.aspect_min, spec.aspect_max)
            x = rng.uniform(0.0, W - w)
            y = rng.uniform(0.0, H - h)
            dets.append(Detection(frame, BBox(x, y, w, h), rng.uniform(0.1, 0.6)))
        # Fisher-Yates so detection order carries no identity information
        for k in range(len(dets) - 1, 0, -1):
            j = rng.below(k + 1)
            dets[k], dets[j] = dets[j], dets[k]
        detections.append(dets)

        for o in objs:
            if rng.random() < spec.turn_prob:
                speed = rng.uniform(spec.speed_min, spec.speed_max)
                theta = rng.uniform(0.0, 2 * math.pi)
                o[4], o[5] = speed * math.cos(theta), speed * math.sin(theta)
            o[0], o[4] = _reflect(o[0] + o[4], o[4], o[2] / 2, W)
            o[1], o[5] = _reflect(o[1] + o[5], o[5], o[3] / 2, H)
    return gt, detections
