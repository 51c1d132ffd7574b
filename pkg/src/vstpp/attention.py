"""Attention blocks: self-attention, cross-modality attention, patch-task
attention and Select-Integrate Attention (SIA), plus foreground-mask helpers.

All blocks are pre-norm: ``x + Attn(LN(x))`` followed by ``x + FFN(LN(x))``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
import numpy as np

from . import tensor as T
from .geometry import PositionEncoding, TokenSeq
from .tensor import Param, RngSpec, Tensor

__all__ = [
    "AttentionParams",
    "TransformerLayerParams",
    "PatchTaskParams",
    "TaskTokens",
    "ForegroundMask",
    "ParamFactory",
    "MASK_LOGIT",
    "multi_head_attention",
    "msa_block",
    "cross_modality_attention",
    "patch_task_attention",
    "prepare_mask",
    "background_token",
    "sia_block",
    "decoder_self_attention_block",
]

MASK_LOGIT = -1e30


class ParamFactory:
    """Creates named parameters whose initial values depend only on (seed, name)."""

    def __init__(self, seed: int, prefix: str = "", registry: list | None = None):
        self.rng = RngSpec(seed)
        self.prefix = prefix
        self.registry = [] if registry is None else registry

    def child(self, name: str) -> "ParamFactory":
        f = ParamFactory.__new__(ParamFactory)
        f.rng, f.prefix, f.registry = self.rng, f"{self.prefix}{name}.", self.registry
        return f

    def _make(self, name: str, value: Tensor) -> Param:
        p = Param(value.data, id=self.prefix + name)
        self.registry.append(p)
        return p

    def uniform(self, name: str, shape, fan_in: int | None = None) -> Param:
        return self._make(name, T.init(shape, self.rng.derive(self.prefix + name), fan_in))

    def zeros(self, name: str, shape) -> Param:
        return self._make(name, T.init(shape, RngSpec(0, "zeros")))

    def ones(self, name: str, shape) -> Param:
        return self._make(name, T.init(shape, RngSpec(0, "ones")))

    def weight(self, name: str, n_out: int, n_in: int) -> Param:
        return self.uniform(name, (n_out, n_in))


@dataclass
class Linear:
    weight: Param  # (out, in)
    bias: Param | None = None

    @classmethod
    def create(cls, f: ParamFactory, name: str, n_in: int, n_out: int, bias: bool = True) -> "Linear":
        return cls(f.weight(f"{name}.w", n_out, n_in), f.zeros(f"{name}.b", (n_out,)) if bias else None)

    def __call__(self, x, label: str = "linear") -> Tensor:
        return T.linear(x, self.weight, self.bias, label=label)


@dataclass
class LayerNormParams:
    gain: Param
    bias: Param

    @classmethod
    def create(cls, f: ParamFactory, name: str, e: int) -> "LayerNormParams":
        return cls(f.ones(f"{name}.gain", (e,)), f.zeros(f"{name}.bias", (e,)))

    def __call__(self, x) -> Tensor:
        return T.layer_norm(x, self.gain, self.bias)


@dataclass
class AttentionParams:
    w_q: Param
    w_k: Param
    w_v: Param
    w_o: Param
    heads: int

    def __post_init__(self):
        e = self.w_q.shape[0]
        if e % self.heads:
            raise ValueError(f"width {e} is not divisible by {self.heads} heads")

    @property
    def width(self) -> int:
        return self.w_q.shape[0]

    @classmethod
    def create(cls, f: ParamFactory, e: int, heads: int) -> "AttentionParams":
        return cls(f.weight("w_q", e, e), f.weight("w_k", e, e), f.weight("w_v", e, e), f.weight("w_o", e, e), heads)


@dataclass
class TransformerLayerParams:
    attn: AttentionParams
    norm1: LayerNormParams
    norm2: LayerNormParams
    ffn_in: Linear
    ffn_out: Linear

    @property
    def width(self) -> int:
        return self.attn.width

    @classmethod
    def create(cls, f: ParamFactory, e: int, heads: int, ffn_ratio: float = 4.0) -> "TransformerLayerParams":
        hidden = int(round(ffn_ratio * e))
        return cls(
            AttentionParams.create(f.child("attn"), e, heads),
            LayerNormParams.create(f, "norm1", e),
            LayerNormParams.create(f, "norm2", e),
            Linear.create(f, "ffn_in", e, hidden),
            Linear.create(f, "ffn_out", hidden, e),
        )

    def ffn(self, x) -> Tensor:
        return self.ffn_out(T.gelu(self.ffn_in(x, label="ffn_in")), label="ffn_out")


@dataclass
class PatchTaskParams:
    w_q: Param
    w_k: Param
    w_v: Param

    @classmethod
    def create(cls, f: ParamFactory, d: int) -> "PatchTaskParams":
        return cls(f.weight("w_q", d, d), f.weight("w_k", d, d), f.weight("w_v", d, d))


@dataclass
class TaskTokens:
    """Saliency / boundary tokens and the learned encodings of the three special tokens."""

    saliency: Tensor
    boundary: Tensor
    pe_saliency: Tensor
    pe_boundary: Tensor
    pe_background: Tensor

    @classmethod
    def create(cls, f: ParamFactory, d: int) -> "TaskTokens":
        return cls(*(f.uniform(n, (1, d)) for n in ("saliency", "boundary", "pe_saliency", "pe_boundary", "pe_background")))

    def replace(self, saliency: Tensor, boundary: Tensor) -> "TaskTokens":
        return TaskTokens(saliency, boundary, self.pe_saliency, self.pe_boundary, self.pe_background)


@dataclass
class ForegroundMask:
    bits: np.ndarray
    grid: tuple[int, int] | None = None

    def __post_init__(self):
        b = np.asarray(self.bits).reshape(-1)
        if not np.isin(b, (0, 1)).all():
            raise ValueError("foreground mask must be binary")
        self.bits = b.astype(np.int8)
        if self.grid is None:
            self.grid = (1, b.size)

    @property
    def n_foreground(self) -> int:
        return int(self.bits.sum())

    @property
    def foreground(self) -> np.ndarray:
        return np.flatnonzero(self.bits)

    @property
    def background(self) -> np.ndarray:
        return np.flatnonzero(self.bits == 0)


# ---------------------------------------------------------------------------
# attention primitives


def multi_head_attention(q_in, kv_in, p: AttentionParams, pe_q=None, pe_k=None, key_bias=None) -> Tensor:
    """Softmax attention from ``q_in`` rows to ``kv_in`` rows.

    Encodings are added to the query/key inputs only. ``key_bias`` is a
    constant row added to every score row (masked attention).
    """
    q_in, kv_in = T.as_tensor(q_in), T.as_tensor(kv_in)
    if q_in.shape[1] != p.width or kv_in.shape[1] != p.width:
        raise ValueError(f"attention width {p.width} does not match inputs {q_in.shape}, {kv_in.shape}")
    q = T.linear(q_in if pe_q is None else q_in + pe_q, p.w_q, label="proj_q")
    k = T.linear(kv_in if pe_k is None else kv_in + pe_k, p.w_k, label="proj_k")
    v = T.linear(kv_in, p.w_v, label="proj_v")
    dh = p.width // p.heads
    bias = None if key_bias is None else np.asarray(key_bias, dtype=np.float64).reshape(1, -1)
    outs = []
    for h in range(p.heads):
        cols = slice(h * dh, (h + 1) * dh)
        s = T.scale(T.matmul(q[:, cols], k[:, cols].T, label="score"), 1.0 / math.sqrt(dh))
        if bias is not None:
            s = s + bias
        outs.append(T.matmul(T.softmax_rows(s), v[:, cols], label="value"))
    heads = outs[0] if len(outs) == 1 else T.concat(outs, axis=1)
    return T.linear(heads, p.w_o, label="proj_o")


def _attend(q_stack, kv_stack, p: TransformerLayerParams, pe_q=None, pe_k=None, key_bias=None, same=False) -> Tensor:
    hq = p.norm1(q_stack)
    hk = hq if same else p.norm1(kv_stack)
    x = q_stack + multi_head_attention(hq, hk, p.attn, pe_q, pe_k, key_bias)
    return x + p.ffn(p.norm2(x))


def msa_block(seq, params: TransformerLayerParams, pe=None) -> Tensor:
    """Pre-norm transformer layer over an (l, e) sequence."""
    seq = T.as_tensor(seq)
    if seq.shape[1] != params.width:
        raise ValueError(f"sequence width {seq.shape[1]} does not match layer width {params.width}")
    return _attend(seq, seq, params, pe, pe, same=True)


def cross_modality_attention(a, b, params: TransformerLayerParams) -> tuple[Tensor, Tensor]:
    """Returns (CA(a, b), CA(b, a)): queries from one stream, keys/values from the other."""
    a, b = T.as_tensor(a), T.as_tensor(b)
    if a.shape != b.shape:
        raise ValueError(f"cross-modality inputs must match in shape, got {a.shape} and {b.shape}")
    return _attend(a, b, params), _attend(b, a, params)


def patch_task_attention(patches, task, params: PatchTaskParams) -> Tensor:
    """sigmoid(Q K^T / sqrt(d)) V + patches with a single task-token key/value.

    Q K^T is evaluated as patches @ (K W_q)^T, the same product reassociated
    so the cost is linear in the token count.
    """
    patches, task = T.as_tensor(patches), T.as_tensor(task)
    d = patches.shape[1]
    if task.shape != (1, d):
        raise ValueError(f"task token must be 1x{d}, got {task.shape}")
    k = T.linear(task, params.w_k, label="pta_k")
    v = T.linear(task, params.w_v, label="pta_v")
    u = T.matmul(k, params.w_q, label="pta_q")
    gate = T.sigmoid(T.scale(T.matmul(patches, u.T, label="pta_score"), 1.0 / math.sqrt(d)))
    return T.matmul(gate, v, label="pta_value") + patches


# ---------------------------------------------------------------------------
# Select-Integrate Attention


def prepare_mask(prev_pred, target_grid: tuple[int, int]) -> ForegroundMask:
    """2x nearest upsampling of the previous saliency map, then ``value > 0.5``."""
    pred = np.asarray(prev_pred.data if isinstance(prev_pred, Tensor) else prev_pred, dtype=np.float64)
    if pred.ndim == 1:
        raise ValueError("prepare_mask needs a 2D prediction map")
    h, w = pred.shape[:2]
    if (2 * h, 2 * w) != tuple(target_grid):
        raise ValueError(f"previous prediction {pred.shape} is not half of target grid {tuple(target_grid)}")
    up = pred.repeat(2, axis=0).repeat(2, axis=1)
    return ForegroundMask((up > 0.5).astype(np.int8).reshape(-1), tuple(target_grid))


def background_token(seq, mask: ForegroundMask) -> Tensor | None:
    """Mean of the background rows, or None when every row is foreground."""
    tokens = seq.tokens if isinstance(seq, TokenSeq) else T.as_tensor(seq)
    if mask.bits.size != tokens.shape[0]:
        raise ValueError(f"mask length {mask.bits.size} != token count {tokens.shape[0]}")
    bg = mask.background
    if bg.size == 0:
        return None
    return T.mean(T.take_rows(tokens, bg), axis=0).reshape(1, -1)


def _pe_table(pe, shape) -> Tensor:
    if pe is None:
        return T.Tensor(np.zeros(shape))
    return pe.table if isinstance(pe, PositionEncoding) else T.as_tensor(pe)


def sia_block(
    patches,
    tasks: TaskTokens,
    mask: ForegroundMask,
    pe_q,
    pe_k,
    params: TransformerLayerParams,
    mode: str = "select",
) -> tuple[Tensor, TaskTokens]:
    """Select-Integrate Attention layer.

    Queries are [t_s; patches; t_b]. In ``select`` mode keys/values are
    [t_s; foreground patches; t_g; t_b]; in ``masked`` mode they are
    [t_s; all patches; t_g; t_b] with background patch columns masked out of
    the softmax. Both compute the same function. ``t_g`` (background mean) is
    dropped when the mask has no background.
    """
    tokens = patches.tokens if isinstance(patches, TokenSeq) else T.as_tensor(patches)
    l = tokens.shape[0]
    if mask.bits.size != l:
        raise ValueError(f"mask length {mask.bits.size} != patch count {l}")
    if mode not in ("select", "masked"):
        raise ValueError(f"unknown SIA mode {mode!r}")
    pq, pk = _pe_table(pe_q, tokens.shape), _pe_table(pe_k, tokens.shape)
    fg = mask.foreground
    t_g = background_token(tokens, mask)
    if t_g is None and fg.size == 0:
        raise ValueError("SIA has no keys: empty foreground and no background token")

    q_stack = T.concat([tasks.saliency, tokens, tasks.boundary], axis=0)
    pe_q_stack = T.concat([tasks.pe_saliency, pq, tasks.pe_boundary], axis=0)

    if mode == "select":
        kv_rows, pe_rows = [tasks.saliency], [tasks.pe_saliency]
        if fg.size:
            kv_rows.append(T.take_rows(tokens, fg))
            pe_rows.append(T.take_rows(pk, fg))
        key_bias = None
    else:
        kv_rows, pe_rows = [tasks.saliency, tokens], [tasks.pe_saliency, pk]
        key_bias = np.zeros(l + 2 + (t_g is not None))
        key_bias[1 + mask.background] = MASK_LOGIT
    if t_g is not None:
        kv_rows.append(t_g)
        pe_rows.append(tasks.pe_background)
    kv_rows.append(tasks.boundary)
    pe_rows.append(tasks.pe_boundary)

    out = _attend(q_stack, T.concat(kv_rows, axis=0), params, pe_q_stack, T.concat(pe_rows, axis=0), key_bias)
    return out[1 : l + 1], tasks.replace(out[0:1], out[l + 1 : l + 2])


def decoder_self_attention_block(patches, tasks: TaskTokens, pe, params: TransformerLayerParams) -> tuple[Tensor, TaskTokens]:
    """Self-attention over [t_s; patches; t_b], used where no mask exists yet."""
    tokens = patches.tokens if isinstance(patches, TokenSeq) else T.as_tensor(patches)
    l = tokens.shape[0]
    stack = T.concat([tasks.saliency, tokens, tasks.boundary], axis=0)
    pe_stack = T.concat([tasks.pe_saliency, _pe_table(pe, tokens.shape), tasks.pe_boundary], axis=0)
    out = _attend(stack, stack, params, pe_stack, pe_stack, same=True)
    return out[1 : l + 1], tasks.replace(out[0:1], out[l + 1 : l + 2])
