"""Rule-based triplet generation, InfoNCE losses and the alignment training loop."""
from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .assignment import solve_min_cost
from .geometry import BBox, FrameSize, box_features, iou_matrix, ir_matrix, mark_box
from .neural import AdamWState, RamParams, adamw_step, init_params
from .ram import RamKind, RamModel, align_backward, align_forward

log = logging.getLogger(__name__)


@dataclass
class TripletBatch:
    """Anchor / positive / negatives as indices into a stacked sequence."""

    anchors: list[int]
    positives: list[int]
    negatives: list[list[int]]
    tag: str = ""

    def __len__(self):
        return len(self.anchors)


def _rule_batches(sim: np.ndarray, eps: float, row_offset: int, col_offset: int,
                  tags: tuple[str, str]) -> tuple[TripletBatch, TripletBatch]:
    """Shared logic of the temporal and spatial rules.

    ``sim`` is rows x cols. The row-anchored batch draws its positive and
    negatives from the columns and vice versa. A match counts only if its
    similarity is strictly above ``eps``; otherwise the anchor is its own
    positive and every box of the other side is a negative.
    """
    n_rows, n_cols = sim.shape
    matching = solve_min_cost(1.0 - sim) if sim.size else None
    partner_of_row: dict[int, int] = {}
    if matching is not None:
        for r, c in matching.pairs:
            if sim[r, c] > eps:
                partner_of_row[r] = c
    partner_of_col = {c: r for r, c in partner_of_row.items()}

    def build(n_anchor, anchor_off, n_other, other_off, partner, tag):
        anchors, positives, negatives = [], [], []
        for i in range(n_anchor):
            a = anchor_off + i
            j = partner.get(i)
            if j is None:
                pos = a
                negs = [other_off + k for k in range(n_other)]
            else:
                pos = other_off + j
                negs = [other_off + k for k in range(n_other) if k != j]
            anchors.append(a)
            positives.append(pos)
            negatives.append(negs)
        return TripletBatch(anchors, positives, negatives, tag)

    row_batch = build(n_rows, row_offset, n_cols, col_offset, partner_of_row, tags[0])
    col_batch = build(n_cols, col_offset, n_rows, row_offset, partner_of_col, tags[1])
    return row_batch, col_batch


def temporal_triplets(boxes_prev: Sequence[BBox], boxes_cur: Sequence[BBox],
                      eps_iou: float, pad: Optional[int] = None):
    """Forward (previous-frame anchors) and backward (current-frame anchors) batches.

    Indices refer to the stack ``[cur; prev]``: current box ``i`` is at ``i``,
    previous box ``j`` at ``pad + j`` (``pad`` defaults to ``len(boxes_cur)``).
    """
    off = len(boxes_cur) if pad is None else pad
    sim = iou_matrix(boxes_prev, boxes_cur)
    return _rule_batches(sim, eps_iou, off, 0, ("temporal-forward", "temporal-backward"))


def spatial_triplets(humans: Sequence[BBox], marks: Sequence[BBox], eps_ir: float = 0.0,
                     pad: Optional[int] = None):
    """Mark-anchored and human-anchored batches.

    Indices refer to the stack ``[humans; marks]``: human ``i`` at ``i``, mark
    ``j`` at ``pad + j``. Matching is recomputed from the intersection rate
    rather than assuming mark ``i`` belongs to human ``i``.
    """
    off = len(humans) if pad is None else pad
    sim = ir_matrix(marks, humans)
    return _rule_batches(sim, eps_ir, off, 0, ("spatial-mark", "spatial-human"))


def infonce(aligned: np.ndarray, batch: TripletBatch, tau: float):
    """Summed InfoNCE over the anchors of ``batch`` and its gradient w.r.t. ``aligned``.

    Per anchor: ``-log(exp(s_ap/tau) / (exp(s_ap/tau) + sum_n exp(s_an/tau)))``
    with ``s = aligned @ aligned.T``. Anchors without negatives contribute 0.
    """
    if tau <= 0:
        raise ValueError("temperature must be positive")
    grad = np.zeros_like(aligned)
    if len(batch) == 0:
        return 0.0, grad
    anchors = np.asarray(batch.anchors)
    pos = np.asarray(batch.positives)
    k = np.arange(len(anchors))
    cand = np.zeros((len(anchors), aligned.shape[0]), dtype=bool)
    for i, negs in enumerate(batch.negatives):
        cand[i, negs] = True
    cand[k, pos] = True

    va = aligned[anchors]
    logits = (va @ aligned.T) / tau
    masked = np.where(cand, logits, -np.inf)
    zmax = masked.max(axis=1, keepdims=True)
    e = np.exp(masked - zmax)
    s = e.sum(axis=1, keepdims=True)
    loss = float(np.sum(zmax[:, 0] + np.log(s[:, 0]) - logits[k, pos]))

    d_logits = e / s
    d_logits[k, pos] -= 1.0
    d_logits /= tau
    # logits[k, j] = va_k . v_j
    grad += d_logits.T @ va
    np.add.at(grad, anchors, d_logits @ aligned)
    return loss, grad


def merge_batches(*batches: TripletBatch) -> TripletBatch:
    out = TripletBatch([], [], [], "+".join(b.tag for b in batches))
    for b in batches:
        out.anchors += b.anchors
        out.positives += b.positives
        out.negatives += b.negatives
    return out


def corrupt_positives(batch: TripletBatch, fraction: float,
                      rng: np.random.Generator) -> TripletBatch:
    """Swap the positive of a random ``fraction`` of anchors with one of their negatives."""
    out = TripletBatch(list(batch.anchors), list(batch.positives),
                       [list(n) for n in batch.negatives], batch.tag)
    for i in range(len(out)):
        if not out.negatives[i] or rng.random() >= fraction:
            continue
        j = int(rng.integers(len(out.negatives[i])))
        wrong = out.negatives[i][j]
        old = out.positives[i]
        out.positives[i] = wrong
        negs = [n for n in out.negatives[i] if n != wrong]
        if old != out.anchors[i]:
            negs.append(old)
        out.negatives[i] = negs
    return out


# ---------------------------------------------------------------------------
# training

@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 5
    lr: float = 2e-3
    lr_decay_every: int = 10
    lr_decay_factor: float = 0.1
    tau: float = 0.1
    eps_iou: float = 0.9
    eps_ir: float = 0.0
    pad_length: int = 110
    seed: int = 0
    dim: int = 128
    heads: int = 8
    ff_dim: Optional[int] = None
    weight_decay: float = 1e-2
    mark_fraction: float = 0.6

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError("tau must be > 0")
        if self.epochs < 0 or self.batch_size < 1 or self.pad_length < 1:
            raise ValueError("epochs >= 0, batch_size >= 1 and pad_length >= 1 required")
        if self.lr <= 0 or self.lr_decay_every < 1:
            raise ValueError("lr must be > 0 and lr_decay_every >= 1")
        if self.dim % self.heads:
            raise ValueError(f"dim {self.dim} not divisible by heads {self.heads}")
        if not (0.0 < self.mark_fraction <= 1.0):
            raise ValueError("mark_fraction must lie in (0, 1]")

    def lr_at(self, epoch: int) -> float:
        return self.lr * self.lr_decay_factor ** (epoch // self.lr_decay_every)


@dataclass
class EpochLoss:
    epoch: int
    l_t: float
    l_s: float

    @property
    def l_st(self) -> float:
        return self.l_t + self.l_s


@dataclass
class LossReport:
    history: list[EpochLoss] = field(default_factory=list)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "L_T", "L_S", "L_ST"])
            for e in self.history:
                w.writerow([e.epoch, repr(e.l_t), repr(e.l_s), repr(e.l_st)])


def init_model(kind: RamKind, cfg: TrainConfig, frame: FrameSize, in_dim: int = 4) -> RamModel:
    if kind is RamKind.NONE:
        raise ValueError("cannot train a model of kind 'none'")
    rng = np.random.default_rng(cfg.seed)
    temporal = init_params(rng, in_dim, cfg.dim, cfg.heads, cfg.ff_dim) if kind.temporal else None
    spatial = init_params(rng, in_dim, cfg.dim, cfg.heads, cfg.ff_dim) if kind.spatial else None
    return RamModel(kind, frame, temporal, spatial, cfg.mark_fraction)


def _padded(boxes: Sequence[BBox], frame: FrameSize, pad: int):
    feats = np.zeros((pad, 4))
    valid = np.zeros(pad, dtype=bool)
    if boxes:
        feats[: len(boxes)] = box_features(boxes, frame)
        valid[: len(boxes)] = True
    return feats, valid


@dataclass
class _Stream:
    feats_a: np.ndarray
    valid_a: np.ndarray
    feats_b: np.ndarray
    valid_b: np.ndarray
    batches: list[TripletBatch]


def _build_streams(frames: Sequence[Sequence[BBox]], kind: RamKind, cfg: TrainConfig,
                   frame: FrameSize, rng: np.random.Generator, corrupt: float):
    """Padded inputs and triplets for every consecutive frame pair ``(t-1, t)``.

    Temporal items stack ``[boxes(t); boxes(t-1)]``; spatial items stack
    ``[boxes(t); marks(t)]``.
    """
    P = cfg.pad_length
    temporal, spatial = [], []
    for t in range(1, len(frames)):
        prev, cur = list(frames[t - 1]), list(frames[t])
        if kind.temporal:
            fc, vc = _padded(cur, frame, P)
            fp, vp = _padded(prev, frame, P)
            b = merge_batches(*temporal_triplets(prev, cur, cfg.eps_iou, pad=P))
            if corrupt:
                b = corrupt_positives(b, corrupt, rng)
            temporal.append((fc, vc, fp, vp, b))
        if kind.spatial:
            marks = [mark_box(h, cfg.mark_fraction) for h in cur]
            fh, vh = _padded(cur, frame, P)
            fm, vm = _padded(marks, frame, P)
            b = merge_batches(*spatial_triplets(cur, marks, cfg.eps_ir, pad=P))
            if corrupt:
                b = corrupt_positives(b, corrupt, rng)
            spatial.append((fh, vh, fm, vm, b))

    def stack(items):
        if not items:
            return None
        return _Stream(*(np.stack([it[i] for it in items]) for i in range(4)),
                       [it[4] for it in items])

    return stack(temporal), stack(spatial)


def _step(params: RamParams, roles, stream: _Stream, idx: np.ndarray, tau: float):
    normed, tape = align_forward(params, roles, stream.feats_a[idx], stream.valid_a[idx],
                                 stream.feats_b[idx], stream.valid_b[idx])
    grad = np.zeros_like(normed)
    total = 0.0
    for i, item in enumerate(idx):
        loss, g = infonce(normed[i], stream.batches[item], tau)
        total += loss
        grad[i] = g
    return total, align_backward(tape, grad)


def train_ram(frames: Sequence[Sequence[BBox]], kind, cfg: TrainConfig, frame: FrameSize,
              corrupt: float = 0.0, init: Optional[RamModel] = None):
    """Train an alignment model on consecutive frames of boxes.

    Each optimiser step consumes ``cfg.batch_size`` frame pairs with their
    losses summed. The spatio-temporal model trains its two encoders on
    their own loss terms; the reported ``L_ST`` is their sum.
    """
    kind = RamKind.parse(kind) if isinstance(kind, str) else kind
    if len(frames) < 2:
        raise ValueError("training needs at least 2 frames")
    worst = max(len(f) for f in frames)
    if worst > cfg.pad_length:
        raise ValueError(f"a frame has {worst} boxes, more than pad_length={cfg.pad_length}")
    model = init_model(kind, cfg, frame) if init is None else init
    report = LossReport()
    if cfg.epochs == 0:
        return model, report

    rng = np.random.default_rng([cfg.seed, 1])
    t_stream, s_stream = _build_streams(frames, kind, cfg, frame, rng, corrupt)
    n_items = len(frames) - 1
    t_state = AdamWState.for_params(model.temporal) if model.temporal else None
    s_state = AdamWState.for_params(model.spatial) if model.spatial else None

    for epoch in range(cfg.epochs):
        lr = cfg.lr_at(epoch)
        order = rng.permutation(n_items)
        sum_t = sum_s = 0.0
        for start in range(0, n_items, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            if t_stream is not None:
                loss, grads = _step(model.temporal, ("human", "trajectory"), t_stream, idx, cfg.tau)
                adamw_step(model.temporal, grads, t_state, lr, weight_decay=cfg.weight_decay)
                sum_t += loss
            if s_stream is not None:
                loss, grads = _step(model.spatial, ("human", "mark"), s_stream, idx, cfg.tau)
                adamw_step(model.spatial, grads, s_state, lr, weight_decay=cfg.weight_decay)
                sum_s += loss
        rec = EpochLoss(epoch + 1, sum_t / n_items, sum_s / n_items)
        report.history.append(rec)
        log.info("epoch %d lr %.1e  L_T %.4f  L_S %.4f  L_ST %.4f",
                 rec.epoch, lr, rec.l_t, rec.l_s, rec.l_st)
    return model, report


def stram_loss_and_grads(model: RamModel, prev: Sequence[BBox], cur: Sequence[BBox],
                         cfg: TrainConfig):
    """Full ``L_S + L_T`` for one frame pair and gradients for both encoders.

    Used by gradient checks; mirrors one item of the training loop exactly.
    """
    t_stream, s_stream = _build_streams([prev, cur], model.kind, cfg, model.frame,
                                        np.random.default_rng(0), 0.0)
    idx = np.array([0])
    total = 0.0
    grads = {}
    if t_stream is not None:
        loss, grads["temporal"] = _step(model.temporal, ("human", "trajectory"), t_stream, idx, cfg.tau)
        total += loss
    if s_stream is not None:
        loss, grads["spatial"] = _step(model.spatial, ("human", "mark"), s_stream, idx, cfg.tau)
        total += loss
    return total, grads


def config_dict(cfg: TrainConfig) -> dict:
    return asdict(cfg)
