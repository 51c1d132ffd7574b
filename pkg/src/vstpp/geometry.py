"""Image <-> token-sequence geometry and position encodings.

Soft split (overlapping unfold) and its transpose, the reverse-T2T fold, the
output-length rule, 2D sinusoidal encodings for token grids and the depth
position encoding used by the RGB-D decoder.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Param, Tensor, _node, as_tensor, concat, mul

__all__ = [
    "SoftSplitSpec",
    "TokenSeq",
    "PositionEncoding",
    "DpeParams",
    "DepthMap",
    "ENCODER_SCHEDULE",
    "RT2T_SCHEDULE",
    "ss_length",
    "soft_split",
    "rt2t_fold",
    "unfold_array",
    "fold_array",
    "nearest_resize",
    "spatial_pe_2d",
    "depth_pe",
    "dpe_arguments",
    "combine_3d",
    "decoder_pe",
]


@dataclass(frozen=True)
class SoftSplitSpec:
    """Patch size ``k``, overlap ``s`` and zero padding ``p``, all in pixels."""

    k: int
    s: int
    p: int

    def __post_init__(self):
        if self.k <= self.s:
            raise ValueError(f"invalid soft-split spec: k={self.k} must exceed overlap s={self.s}")
        if self.s < 0 or self.p < 0:
            raise ValueError(f"invalid soft-split spec: negative overlap or padding in {self}")

    @property
    def stride(self) -> int:
        return self.k - self.s


ENCODER_SCHEDULE = (SoftSplitSpec(7, 3, 2), SoftSplitSpec(3, 1, 1), SoftSplitSpec(3, 1, 1))
RT2T_SCHEDULE = (SoftSplitSpec(3, 1, 1), SoftSplitSpec(3, 1, 1), SoftSplitSpec(7, 3, 3))


@dataclass
class TokenSeq:
    tokens: Tensor
    grid: tuple[int, int]

    def __post_init__(self):
        h, w = self.grid
        if h <= 0 or w <= 0:
            raise ValueError(f"grid dimensions must be positive, got {self.grid}")
        if self.tokens.shape[0] != h * w:
            raise ValueError(f"token count {self.tokens.shape[0]} does not match grid {self.grid}")

    @property
    def length(self) -> int:
        return self.grid[0] * self.grid[1]

    @property
    def width(self) -> int:
        return self.tokens.shape[1]


@dataclass
class PositionEncoding:
    table: Tensor
    kind: str  # "spatial-2d" | "depth" | "combined-3d"


@dataclass
class DpeParams:
    """One learnable scale per decoder level, keyed "1/16", "1/8", "1/4"."""

    z: dict[str, Param]
    d_model: int

    def __post_init__(self):
        if sorted(self.z) != sorted(("1/16", "1/8", "1/4")):
            raise ValueError(f"DPE needs exactly three level scales, got {sorted(self.z)}")


@dataclass
class DepthMap:
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise ValueError(f"depth map must be 2D, got shape {v.shape}")
        if v.size and (v.min() < 0.0 or v.max() > 1.0):
            raise ValueError(f"depth map must be normalized to [0, 1], got range [{v.min()}, {v.max()}]")
        self.values = v


def ss_length(h_in: int, spec: SoftSplitSpec) -> int:
    """Token-grid size along one axis after soft split."""
    if h_in + 2 * spec.p < spec.k:
        raise ValueError(f"input size {h_in} with padding {spec.p} is smaller than patch size {spec.k}")
    return (h_in + 2 * spec.p - spec.k) // spec.stride + 1


# ---------------------------------------------------------------------------
# unfold / fold on plain arrays


def unfold_array(x: np.ndarray, spec: SoftSplitSpec) -> tuple[np.ndarray, tuple[int, int]]:
    """(h, w, e) -> (gh*gw, k*k*e); window row-major, channels contiguous per pixel."""
    h, w, e = x.shape
    gh, gw = ss_length(h, spec), ss_length(w, spec)
    k, st, p = spec.k, spec.stride, spec.p
    xp = np.pad(x, ((p, p), (p, p), (0, 0)))
    win = sliding_window_view(xp, (k, k), axis=(0, 1))[::st, ::st][:gh, :gw]
    # (gh, gw, e, k, k) -> (gh, gw, k, k, e)
    tokens = win.transpose(0, 1, 3, 4, 2).reshape(gh * gw, k * k * e)
    return tokens, (gh, gw)


def fold_array(tokens: np.ndarray, grid: tuple[int, int], spec: SoftSplitSpec, target: tuple[int, int]) -> np.ndarray:
    """Transpose of :func:`unfold_array`: scatter-add patches, crop the padding."""
    gh, gw = grid
    h, w = target
    k, st, p = spec.k, spec.stride, spec.p
    if tokens.shape[1] % (k * k):
        raise ValueError(f"token width {tokens.shape[1]} is not a multiple of k*k={k * k}")
    e = tokens.shape[1] // (k * k)
    for size, g in ((h, gh), (w, gw)):
        if size + 2 * p < (g - 1) * st + k:
            raise ValueError(
                f"target grid {target} too small for {grid} patches with k={k}, s={spec.s}, p={p}"
            )
    canvas = np.zeros((h + 2 * p, w + 2 * p, e))
    patches = tokens.reshape(gh, gw, k, k, e)
    for di in range(k):
        for dj in range(k):
            canvas[di : di + st * (gh - 1) + 1 : st, dj : dj + st * (gw - 1) + 1 : st] += patches[:, :, di, dj]
    return canvas[p : p + h, p : p + w]


def soft_split(image, spec: SoftSplitSpec) -> TokenSeq:
    """Overlapping k x k unfold of an (h, w, e) map into a token sequence."""
    image = as_tensor(image)
    if image.data.ndim != 3:
        raise ValueError(f"soft_split expects an (h, w, e) map, got shape {image.shape}")
    shape = image.shape
    tokens, grid = unfold_array(image.data, spec)
    out = _node(tokens, (image,), lambda g: (fold_array(g, grid, spec, shape[:2]),))
    return TokenSeq(out, grid)


def rt2t_fold(seq: TokenSeq, spec: SoftSplitSpec, target_grid: tuple[int, int], channels_out: int) -> Tensor:
    """Reverse-T2T upsampling: fold tokens of width e*k*k into an (h, w, e) map."""
    if seq.width != channels_out * spec.k * spec.k:
        raise ValueError(
            f"token width {seq.width} != channels_out*k*k = {channels_out}*{spec.k}*{spec.k}"
        )
    grid = seq.grid
    x = seq.tokens
    folded = fold_array(x.data, grid, spec, target_grid)

    def back(g):
        # the padded canvas may be larger than the patch coverage
        full = np.zeros((target_grid[0] + 2 * spec.p, target_grid[1] + 2 * spec.p, channels_out))
        full[spec.p : spec.p + target_grid[0], spec.p : spec.p + target_grid[1]] = g
        win = sliding_window_view(full, (spec.k, spec.k), axis=(0, 1))[:: spec.stride, :: spec.stride]
        win = win[: grid[0], : grid[1]]
        return (win.transpose(0, 1, 3, 4, 2).reshape(grid[0] * grid[1], -1),)

    return _node(folded, (x,), back)


def nearest_resize(x: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Nearest-neighbour resize of the first two axes (source index floor(i*H/h))."""
    h, w = x.shape[:2]
    rows = (np.arange(shape[0]) * h) // shape[0]
    cols = (np.arange(shape[1]) * w) // shape[1]
    return x[rows][:, cols]


# ---------------------------------------------------------------------------
# position encodings


def _sincos(positions: np.ndarray, d_model: int) -> np.ndarray:
    """Interleaved sin/cos: channel 2m = sin(pos / 10000^(2m/d_model)), 2m+1 = cos."""
    m = np.arange(d_model // 2)
    freq = 1.0 / (10000.0 ** (2 * m / d_model))
    arg = positions[:, None] * freq[None, :]
    out = np.empty((positions.shape[0], d_model))
    out[:, 0::2] = np.sin(arg)
    out[:, 1::2] = np.cos(arg)
    return out


def spatial_pe_2d(grid: tuple[int, int], d: int) -> PositionEncoding:
    """Sinusoidal table of shape (h*w, d): d/2 channels for x, then d/2 for y."""
    if d % 4:
        raise ValueError(f"2D sinusoidal encoding needs d divisible by 4, got {d}")
    h, w = grid
    ys, xs = np.divmod(np.arange(h * w), w)
    table = np.concatenate([_sincos(xs.astype(float), d // 2), _sincos(ys.astype(float), d // 2)], axis=1)
    return PositionEncoding(Tensor(table), "spatial-2d")


def dpe_arguments(dep: float, d_model: int) -> np.ndarray:
    """Arguments dep / 10000^(2m/d_model), one per sin/cos channel pair."""
    m = np.arange(d_model // 2)
    return dep / (10000.0 ** (2 * m / d_model))


def depth_pe(depth: DepthMap, grid: tuple[int, int], d_model: int, z) -> PositionEncoding:
    """Depth position encoding on ``grid``, scaled by the level factor ``z``.

    Depth is resized to the grid (nearest), discretized as ceil(depth * h_i)
    so it spans the same range as row coordinates, then sin/cos encoded.
    """
    if not isinstance(depth, DepthMap):
        depth = DepthMap(depth)
    if d_model % 2:
        raise ValueError(f"depth encoding needs an even channel count, got {d_model}")
    h, w = grid
    dep = np.ceil(nearest_resize(depth.values, grid) * h).reshape(-1)
    table = Tensor(_sincos(dep, d_model))
    z = as_tensor(z)
    return PositionEncoding(mul(table, z.reshape(1, 1)), "depth")


def combine_3d(spatial: PositionEncoding, depth: PositionEncoding, d: int | None = None) -> PositionEncoding:
    """Channel concatenation, spatial first."""
    a, b = spatial.table, depth.table
    if a.shape[0] != b.shape[0]:
        raise ValueError(f"position encodings disagree on length: {a.shape[0]} vs {b.shape[0]}")
    if d is not None and a.shape[1] + b.shape[1] != d:
        raise ValueError(f"channel budget mismatch: {a.shape[1]} + {b.shape[1]} != {d}")
    return PositionEncoding(concat([a, b], axis=1), "combined-3d")


def decoder_pe(grid: tuple[int, int], d: int, depth: DepthMap | None = None, z=None) -> PositionEncoding:
    """Decoder encoding: plain 2D when no depth is given, else 2D (d/2) + DPE (d/2)."""
    if depth is None:
        return spatial_pe_2d(grid, d)
    half = d // 2
    if half % 4:
        raise ValueError(f"combined 3D encoding needs d divisible by 8, got {d}")
    return combine_3d(spatial_pe_2d(grid, half), depth_pe(depth, grid, half, z), d)
