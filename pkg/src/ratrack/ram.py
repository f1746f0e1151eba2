"""Alignment modules (temporal, spatial, spatio-temporal) and affinity fusion.

A temporal module encodes the stack ``[humans; trajectories]``, a spatial one
``[humans; marks]``. The spatio-temporal variant is simply one of each with
independent weights, whose affinities are blended by ``fuse_st``.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence, Union

import numpy as np

from .geometry import BBox, FrameSize, box_features, mark_box
from .neural import (
    RamParams,
    Tape,
    encoder_backward,
    encoder_forward,
    l2_normalize_rows,
    l2_normalize_rows_backward,
    project,
    project_backward,
)

Features = Union[Sequence[BBox], np.ndarray]


class RamKind(str, Enum):
    NONE = "none"
    TRAM = "TRAM"
    SRAM = "SRAM"
    STRAM = "STRAM"

    @classmethod
    def parse(cls, value: str) -> "RamKind":
        if isinstance(value, cls):
            return value
        for k in cls:
            if k.value.lower() == str(value).lower():
                return k
        raise ValueError(f"unknown RAM kind {value!r} (expected none/TRAM/SRAM/STRAM)")

    @property
    def temporal(self) -> bool:
        return self in (RamKind.TRAM, RamKind.STRAM)

    @property
    def spatial(self) -> bool:
        return self in (RamKind.SRAM, RamKind.STRAM)


@dataclass
class FusionCoefficients:
    alpha_t: float = 0.2
    alpha_s: float = 0.2
    lam: float = 0.5

    def __post_init__(self):
        for name in ("alpha_t", "alpha_s"):
            a = getattr(self, name)
            if not (0.0 < a <= 1.0):
                raise ValueError(f"{name} must lie in (0, 1], got {a}")
        if not (0.0 <= self.lam <= 1.0):
            raise ValueError(f"lambda must lie in [0, 1], got {self.lam}")


@dataclass
class RamModel:
    """Trained alignment weights plus what is needed to featurise boxes."""

    kind: RamKind
    frame: FrameSize
    temporal: Optional[RamParams] = None
    spatial: Optional[RamParams] = None
    mark_fraction: float = 0.6

    def __post_init__(self):
        if self.kind.temporal != (self.temporal is not None):
            raise ValueError(f"{self.kind.value} model: temporal encoder presence mismatch")
        if self.kind.spatial != (self.spatial is not None):
            raise ValueError(f"{self.kind.value} model: spatial encoder presence mismatch")

    def encoders(self) -> dict[str, RamParams]:
        out = {}
        if self.temporal is not None:
            out["temporal"] = self.temporal
        if self.spatial is not None:
            out["spatial"] = self.spatial
        return out


def _as_features(items: Features, frame: FrameSize, in_dim: int) -> np.ndarray:
    if isinstance(items, np.ndarray):
        feats = np.asarray(items, dtype=np.float64).reshape(-1, in_dim)
    else:
        feats = box_features(list(items), frame).reshape(-1, 4)
    if feats.shape[1] != in_dim:
        raise ValueError(f"feature width {feats.shape[1]} != model input width {in_dim}")
    return feats


@dataclass
class AlignTape:
    tape: Tape
    out: np.ndarray
    roles: tuple[str, str]
    feats_a: np.ndarray
    feats_b: np.ndarray


def align_forward(params: RamParams, roles: tuple[str, str],
                  feats_a: np.ndarray, valid_a: np.ndarray,
                  feats_b: np.ndarray, valid_b: np.ndarray):
    """Project two (padded) streams, stack them and encode.

    Shapes are ``(..., P, in_dim)`` / ``(..., P)``; the result has
    ``P_a + P_b`` rows per sequence, L2-normalised.
    """
    xa = project(params, roles[0], feats_a)
    xb = project(params, roles[1], feats_b)
    x = np.concatenate([xa, xb], axis=-2)
    valid = np.concatenate([valid_a, valid_b], axis=-1)
    out, tape = encoder_forward(params, x, valid)
    return l2_normalize_rows(out), AlignTape(tape, out, roles, feats_a, feats_b)


def align_backward(at: AlignTape, grad_normed: np.ndarray) -> dict[str, np.ndarray]:
    gout = l2_normalize_rows_backward(at.out, grad_normed)
    grads, gx = encoder_backward(at.tape, gout)
    pa = at.feats_a.shape[-2]
    project_backward(at.roles[0], at.feats_a, gx[..., :pa, :], grads)
    project_backward(at.roles[1], at.feats_b, gx[..., pa:, :], grads)
    return grads


def _align(params: RamParams, role_b: str, humans: Features, others: Features,
           frame: FrameSize):
    fa = _as_features(humans, frame, params.in_dim)
    fb = _as_features(others, frame, params.in_dim)
    na, nb = len(fa), len(fb)
    if na + nb == 0:
        return np.zeros((0, params.dim)), np.zeros((0, params.dim))
    normed, _ = align_forward(params, ("human", role_b),
                              fa, np.ones(na, bool), fb, np.ones(nb, bool))
    return normed[:na], normed[na:]


def tram_align(params: RamParams, humans: Features, trajectories: Features,
               frame: FrameSize):
    """Temporally aligned ``(H_bar, C_bar)`` for current humans and track features."""
    return _align(params, "trajectory", humans, trajectories, frame)


def sram_align(params: RamParams, humans: Features, marks: Features, frame: FrameSize):
    """Spatially aligned ``(H_bar, M_bar)``."""
    return _align(params, "mark", humans, marks, frame)


def marks_for(humans: Sequence[BBox], fraction: float = 0.6) -> list[BBox]:
    return [mark_box(b, fraction) for b in humans]


def clipped_cosine_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape[0] == 0 or b.shape[0] == 0:
        return np.zeros((a.shape[0], b.shape[0]))
    return np.clip(a @ b.T, 0.0, 1.0)


def _check_shapes(x: np.ndarray, y: np.ndarray) -> None:
    if x.shape != y.shape:
        raise ValueError(f"affinity shapes differ: {x.shape} vs {y.shape}")


def fuse_temporal(raw, aligned, alpha_t: float) -> np.ndarray:
    raw, aligned = np.asarray(raw, float), np.asarray(aligned, float)
    _check_shapes(raw, aligned)
    return alpha_t * raw + (1.0 - alpha_t) * aligned


def fuse_spatial(raw, aligned, alpha_s: float) -> np.ndarray:
    raw, aligned = np.asarray(raw, float), np.asarray(aligned, float)
    _check_shapes(raw, aligned)
    return alpha_s * raw + (1.0 - alpha_s) * aligned


def fuse_st(a_s, a_t, lam: float) -> np.ndarray:
    a_s, a_t = np.asarray(a_s, float), np.asarray(a_t, float)
    _check_shapes(a_s, a_t)
    blended = lam * a_s + (1.0 - lam) * a_t
    # equal inputs must come back untouched, not re-rounded
    return np.where(a_s == a_t, a_t, blended)
