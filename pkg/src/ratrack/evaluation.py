"""CLEAR MOT counts, identity F1 and the Davies-Bouldin index."""
from __future__ import annotations

import csv
from dataclasses import asdict, dataclass

import numpy as np

from .assignment import match_by_affinity, solve_min_cost
from .geometry import iou, iou_matrix
from .records import Trajectory, by_frame


@dataclass
class MetricsReport:
    MOTA: float
    IDF1: float
    IDP: float
    IDR: float
    FP: int
    FN: int
    IDS: int
    GT_count: int
    MT: int
    ML: int

    def as_dict(self) -> dict:
        return asdict(self)

    def table(self) -> str:
        rows = [
            ("MOTA", f"{self.MOTA:.4f}"), ("IDF1", f"{self.IDF1:.4f}"),
            ("IDP", f"{self.IDP:.4f}"), ("IDR", f"{self.IDR:.4f}"),
            ("FP", str(self.FP)), ("FN", str(self.FN)), ("IDS", str(self.IDS)),
            ("GT", str(self.GT_count)), ("MT", str(self.MT)), ("ML", str(self.ML)),
        ]
        width = max(len(k) for k, _ in rows)
        return "\n".join(f"{k:<{width}}  {v:>10}" for k, v in rows)

    def write_csv(self, path) -> None:
        d = self.as_dict()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(list(d))
            w.writerow([repr(v) if isinstance(v, float) else v for v in d.values()])


@dataclass
class ClearCounts:
    FP: int
    FN: int
    IDS: int
    GT_count: int
    MT: int
    ML: int

    @property
    def MOTA(self) -> float:
        errors = self.FP + self.FN + self.IDS
        if self.GT_count == 0:
            return 1.0 if errors == 0 else float("-inf")
        return 1.0 - errors / self.GT_count


def clear_mot(gt: list[Trajectory], hyp: list[Trajectory], iou_gate: float = 0.5) -> ClearCounts:
    """CLEAR MOT error counts.

    A ground-truth object keeps its previous hypothesis while their IoU stays
    at or above ``iou_gate``; everything else is matched by Hungarian on
    IoU. An identity switch is counted when an object is matched to a
    hypothesis different from the one it was last matched to.
    """
    gt_frames = by_frame(gt)
    hyp_frames = by_frame(hyp)
    last: dict[int, int] = {}
    fp = fn = ids = n_gt = 0
    matched_count: dict[int, int] = {}
    present_count: dict[int, int] = {}

    for f in sorted(set(gt_frames) | set(hyp_frames)):
        g = gt_frames.get(f, {})
        h = hyp_frames.get(f, {})
        n_gt += len(g)
        for o in g:
            present_count[o] = present_count.get(o, 0) + 1
        pairs: dict[int, int] = {}
        for o in sorted(g):
            prev = last.get(o)
            if prev is not None and prev in h and prev not in pairs.values():
                if iou(g[o], h[prev]) >= iou_gate:
                    pairs[o] = prev
        free_g = [o for o in sorted(g) if o not in pairs]
        used_h = set(pairs.values())
        free_h = [k for k in sorted(h) if k not in used_h]
        if free_g and free_h:
            aff = iou_matrix([g[o] for o in free_g], [h[k] for k in free_h])
            m = match_by_affinity(aff, iou_gate)
            for r, c in m.pairs:
                o, k = free_g[r], free_h[c]
                if o in last and last[o] != k:
                    ids += 1
                pairs[o] = k
        for o, k in pairs.items():
            last[o] = k
            matched_count[o] = matched_count.get(o, 0) + 1
        fn += len(g) - len(pairs)
        fp += len(h) - len(pairs)

    mt = ml = 0
    for o, n in present_count.items():
        ratio = matched_count.get(o, 0) / n
        if ratio >= 0.8:
            mt += 1
        elif ratio <= 0.2:
            ml += 1
    return ClearCounts(fp, fn, ids, n_gt, mt, ml)


def idf1(gt: list[Trajectory], hyp: list[Trajectory], iou_gate: float = 0.5):
    """Identity F1 under the best one-to-one map between gt and hypothesis ids.

    Returns ``(IDF1, IDP, IDR)``. Two empty inputs score 1.0.
    """
    n_gt = sum(len(t.points) for t in gt)
    n_hyp = sum(len(t.points) for t in hyp)
    if n_gt == 0 and n_hyp == 0:
        return 1.0, 1.0, 1.0
    gt_ids = sorted(t.id for t in gt)
    hyp_ids = sorted(t.id for t in hyp)
    gi = {k: i for i, k in enumerate(gt_ids)}
    hi = {k: i for i, k in enumerate(hyp_ids)}
    overlap = np.zeros((len(gt_ids), len(hyp_ids)))
    gt_frames = by_frame(gt)
    hyp_frames = by_frame(hyp)
    for f, g in gt_frames.items():
        h = hyp_frames.get(f)
        if not h:
            continue
        g_keys, h_keys = list(g), list(h)
        m = iou_matrix([g[k] for k in g_keys], [h[k] for k in h_keys])
        for r, c in zip(*np.nonzero(m >= iou_gate)):
            overlap[gi[g_keys[r]], hi[h_keys[c]]] += 1
    idtp = 0.0
    if overlap.size:
        matching = solve_min_cost(-overlap)
        idtp = matching.total(overlap)
    idfp = n_hyp - idtp
    idfn = n_gt - idtp
    f1 = 2 * idtp / (2 * idtp + idfp + idfn)
    idp = idtp / n_hyp if n_hyp else 0.0
    idr = idtp / n_gt if n_gt else 0.0
    return f1, idp, idr


def evaluate(gt: list[Trajectory], hyp: list[Trajectory], iou_gate: float = 0.5) -> MetricsReport:
    c = clear_mot(gt, hyp, iou_gate)
    f1, idp, idr = idf1(gt, hyp, iou_gate)
    return MetricsReport(c.MOTA, f1, idp, idr, c.FP, c.FN, c.IDS, c.GT_count, c.MT, c.ML)


def dbi(features, labels) -> float:
    """Davies-Bouldin index with Euclidean centroids; lower means tighter clusters."""
    x = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    if x.ndim != 2 or len(x) != len(labels):
        raise ValueError("features must be N x D with one label per row")
    uniq = np.unique(labels)
    if len(uniq) < 2:
        raise ValueError("the Davies-Bouldin index needs at least 2 clusters")
    cents = np.array([x[labels == u].mean(axis=0) for u in uniq])
    spread = np.array([np.linalg.norm(x[labels == u] - c, axis=1).mean() for u, c in zip(uniq, cents)])
    dist = np.linalg.norm(cents[:, None] - cents[None], axis=-1)
    off = ~np.eye(len(uniq), dtype=bool)
    if np.any(dist[off] == 0):
        raise ValueError("two clusters share a centroid; the index is unbounded")
    ratio = np.where(off, (spread[:, None] + spread[None]) / np.where(off, dist, 1.0), -np.inf)
    return float(ratio.max(axis=1).mean())
