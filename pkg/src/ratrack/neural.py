"""Single-layer transformer encoder with hand-written reverse-mode gradients.

Everything is float64 numpy. Sequences are handled in batches of shape
``(B, L, D)`` with a boolean ``valid`` mask of shape ``(B, L)``; 2-D inputs
are treated as a batch of one.

Layer order (post-norm)::

    z   = LayerNorm1(x + MHA(x))
    out = LayerNorm2(z + FFN(z))        # rows with valid=False are zeroed
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

ROLES = ("human", "mark", "trajectory")
LN_EPS = 1e-5


class StaleTapeError(RuntimeError):
    """Raised when a tape is replayed after its parameters were updated."""


@dataclass
class RamParams:
    """Weights of one alignment encoder (input projections + encoder layer)."""

    arrays: dict[str, np.ndarray]
    in_dim: int
    dim: int
    heads: int
    ff_dim: int
    version: int = 0

    def __post_init__(self):
        if self.dim % self.heads:
            raise ValueError(f"dim {self.dim} is not divisible by heads {self.heads}")
        expected = param_shapes(self.in_dim, self.dim, self.ff_dim)
        if set(expected) != set(self.arrays):
            missing = set(expected) ^ set(self.arrays)
            raise ValueError(f"parameter set mismatch: {sorted(missing)}")
        for name, shape in expected.items():
            if self.arrays[name].shape != shape:
                raise ValueError(f"{name}: expected shape {shape}, got {self.arrays[name].shape}")

    def __getitem__(self, name: str) -> np.ndarray:
        return self.arrays[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self.arrays)

    def copy(self) -> "RamParams":
        return RamParams(
            {k: v.copy() for k, v in self.arrays.items()},
            self.in_dim, self.dim, self.heads, self.ff_dim, self.version,
        )

    def zeros_like(self) -> dict[str, np.ndarray]:
        return {k: np.zeros_like(v) for k, v in self.arrays.items()}

    def n_params(self) -> int:
        return sum(v.size for v in self.arrays.values())


def param_shapes(in_dim: int, dim: int, ff_dim: int) -> dict[str, tuple[int, ...]]:
    shapes: dict[str, tuple[int, ...]] = {}
    for role in ROLES:
        shapes[f"proj_{role}.W"] = (in_dim, dim)
        shapes[f"proj_{role}.b"] = (dim,)
    for p in "qkvo":
        shapes[f"attn.W{p}"] = (dim, dim)
        shapes[f"attn.b{p}"] = (dim,)
    shapes["ffn.W1"] = (dim, ff_dim)
    shapes["ffn.b1"] = (ff_dim,)
    shapes["ffn.W2"] = (ff_dim, dim)
    shapes["ffn.b2"] = (dim,)
    for ln in ("ln1", "ln2"):
        shapes[f"{ln}.g"] = (dim,)
        shapes[f"{ln}.b"] = (dim,)
    return shapes


def init_params(rng: np.random.Generator, in_dim: int = 4, dim: int = 128,
                heads: int = 8, ff_dim: int | None = None) -> RamParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for affine maps, LN scale 1 / shift 0."""
    ff_dim = 4 * dim if ff_dim is None else ff_dim
    shapes = param_shapes(in_dim, dim, ff_dim)
    arrays: dict[str, np.ndarray] = {}
    for name, shape in shapes.items():
        if name.startswith("ln"):
            arrays[name] = np.ones(shape) if name.endswith(".g") else np.zeros(shape)
            continue
        # biases share the bound of their weight matrix ("attn.bq" -> "attn.Wq")
        fan_in = shapes[name.replace(".b", ".W", 1)][0]
        bound = np.sqrt(1.0 / fan_in)
        arrays[name] = rng.uniform(-bound, bound, size=shape)
    return RamParams(arrays, in_dim, dim, heads, ff_dim)


# ---------------------------------------------------------------------------
# input projections

def project(params: RamParams, role: str, feats: np.ndarray) -> np.ndarray:
    return feats @ params[f"proj_{role}.W"] + params[f"proj_{role}.b"]


def project_backward(role: str, feats: np.ndarray, grad: np.ndarray,
                     grads: dict[str, np.ndarray]) -> None:
    """Accumulate the projection gradients for ``role`` into ``grads``."""
    f2 = feats.reshape(-1, feats.shape[-1])
    g2 = grad.reshape(-1, grad.shape[-1])
    grads[f"proj_{role}.W"] += f2.T @ g2
    grads[f"proj_{role}.b"] += g2.sum(axis=0)


# ---------------------------------------------------------------------------
# encoder layer

def _layer_norm(x, g, b):
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + LN_EPS)
    xhat = (x - mu) * rstd
    return xhat * g + b, (xhat, rstd)


def _layer_norm_backward(dy, g, cache):
    xhat, rstd = cache
    dxhat = dy * g
    dx = rstd * (
        dxhat
        - dxhat.mean(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
    )
    dg = (dy * xhat).sum(axis=(0, 1))
    db = dy.sum(axis=(0, 1))
    return dx, dg, db


@dataclass
class Tape:
    params: RamParams
    version: int
    cache: dict = field(repr=False)


def encoder_forward(params: RamParams, x: np.ndarray, valid: np.ndarray):
    """Run the encoder layer. Returns ``(out, tape)`` with ``out`` shaped like ``x``."""
    squeeze = x.ndim == 2
    if squeeze:
        x, valid = x[None], np.asarray(valid)[None]
    valid = np.asarray(valid, dtype=bool)
    B, L, D = x.shape
    if D != params.dim:
        raise ValueError(f"feature width {D} != encoder dim {params.dim}")
    if valid.shape != (B, L):
        raise ValueError(f"valid mask shape {valid.shape} does not match sequence {(B, L)}")
    H = params.heads
    dh = D // H
    scale = 1.0 / np.sqrt(dh)

    def heads(t):
        return t.reshape(B, L, H, dh).transpose(0, 2, 1, 3)

    q = heads(x @ params["attn.Wq"] + params["attn.bq"])
    k = heads(x @ params["attn.Wk"] + params["attn.bk"])
    v = heads(x @ params["attn.Wv"] + params["attn.bv"])
    logits = (q @ k.transpose(0, 1, 3, 2)) * scale
    key_ok = valid[:, None, None, :]
    logits = np.where(key_ok, logits, -np.inf)
    mx = logits.max(axis=-1, keepdims=True)
    mx = np.where(np.isfinite(mx), mx, 0.0)
    e = np.exp(logits - mx)
    z = e.sum(axis=-1, keepdims=True)
    probs = e / np.where(z > 0, z, 1.0)
    ctx = (probs @ v).transpose(0, 2, 1, 3).reshape(B, L, D)
    attn = ctx @ params["attn.Wo"] + params["attn.bo"]

    z1, ln1 = _layer_norm(x + attn, params["ln1.g"], params["ln1.b"])
    hpre = z1 @ params["ffn.W1"] + params["ffn.b1"]
    hact = np.maximum(hpre, 0.0)
    f = hact @ params["ffn.W2"] + params["ffn.b2"]
    y, ln2 = _layer_norm(z1 + f, params["ln2.g"], params["ln2.b"])
    out = y * valid[..., None]

    cache = dict(x=x, valid=valid, q=q, k=k, v=v, probs=probs, ctx=ctx, z1=z1,
                 ln1=ln1, hpre=hpre, hact=hact, ln2=ln2, scale=scale, squeeze=squeeze)
    return (out[0] if squeeze else out), Tape(params, params.version, cache)


def encoder_backward(tape: Tape, grad_out: np.ndarray):
    """Reverse pass. Returns ``(grads, grad_in)``; ``grads`` covers encoder
    parameters only (projection entries are zero)."""
    p = tape.params
    if p.version != tape.version:
        raise StaleTapeError("parameters changed since this forward pass")
    c = tape.cache
    if c["squeeze"]:
        grad_out = grad_out[None]
    x, valid = c["x"], c["valid"]
    B, L, D = x.shape
    H = p.heads
    dh = D // H
    grads = p.zeros_like()

    dy = grad_out * valid[..., None]
    dr2, grads["ln2.g"], grads["ln2.b"] = _layer_norm_backward(dy, p["ln2.g"], c["ln2"])

    df = dr2
    hact2 = c["hact"].reshape(-1, p.ff_dim)
    df2 = df.reshape(-1, D)
    grads["ffn.W2"] = hact2.T @ df2
    grads["ffn.b2"] = df2.sum(axis=0)
    dhact = df @ p["ffn.W2"].T
    dhpre = dhact * (c["hpre"] > 0)
    dhpre2 = dhpre.reshape(-1, p.ff_dim)
    grads["ffn.W1"] = c["z1"].reshape(-1, D).T @ dhpre2
    grads["ffn.b1"] = dhpre2.sum(axis=0)
    dz1 = dr2 + dhpre @ p["ffn.W1"].T

    dr1, grads["ln1.g"], grads["ln1.b"] = _layer_norm_backward(dz1, p["ln1.g"], c["ln1"])

    dattn = dr1
    dattn2 = dattn.reshape(-1, D)
    grads["attn.Wo"] = c["ctx"].reshape(-1, D).T @ dattn2
    grads["attn.bo"] = dattn2.sum(axis=0)
    dctx = (dattn @ p["attn.Wo"].T).reshape(B, L, H, dh).transpose(0, 2, 1, 3)

    probs, q, k, v, scale = c["probs"], c["q"], c["k"], c["v"], c["scale"]
    dprobs = dctx @ v.transpose(0, 1, 3, 2)
    dv = probs.transpose(0, 1, 3, 2) @ dctx
    dlogits = probs * (dprobs - (dprobs * probs).sum(axis=-1, keepdims=True))
    dlogits *= scale
    dq = dlogits @ k
    dk = dlogits.transpose(0, 1, 3, 2) @ q

    def merge(t):
        return t.transpose(0, 2, 1, 3).reshape(B, L, D)

    x2 = x.reshape(-1, D)
    dx = dr1.copy()
    for name, d in (("q", dq), ("k", dk), ("v", dv)):
        dm = merge(d)
        dm2 = dm.reshape(-1, D)
        grads[f"attn.W{name}"] = x2.T @ dm2
        grads[f"attn.b{name}"] = dm2.sum(axis=0)
        dx += dm @ p[f"attn.W{name}"].T
    dx *= valid[..., None]
    return grads, (dx[0] if c["squeeze"] else dx)


# ---------------------------------------------------------------------------
# normalisation

def l2_normalize_rows(m: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(m, axis=-1, keepdims=True)
    return np.divide(m, norms, out=np.zeros_like(m), where=norms > 0)


def l2_normalize_rows_backward(m: np.ndarray, grad: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(m, axis=-1, keepdims=True)
    y = np.divide(m, norms, out=np.zeros_like(m), where=norms > 0)
    proj = grad - y * (y * grad).sum(axis=-1, keepdims=True)
    return np.divide(proj, norms, out=np.zeros_like(m), where=norms > 0)


# ---------------------------------------------------------------------------
# optimiser

@dataclass
class AdamWState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def for_params(cls, params: RamParams) -> "AdamWState":
        return cls(params.zeros_like(), params.zeros_like())


def adamw_step(params: RamParams, grads: dict[str, np.ndarray], state: AdamWState,
               lr: float, beta1: float = 0.9, beta2: float = 0.999,
               eps: float = 1e-8, weight_decay: float = 1e-2) -> None:
    """One decoupled-weight-decay Adam update, in place on ``params`` and ``state``."""
    state.step += 1
    t = state.step
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    for name, p in params.arrays.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"{name}: gradient shape {g.shape} != parameter shape {p.shape}")
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        if weight_decay:
            p *= 1.0 - lr * weight_decay
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
    params.version += 1
