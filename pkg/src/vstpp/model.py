"""Encoder, convertor and multi-task decoder assembled into one forward pass."""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import tensor as T
from .attention import (
    ForegroundMask,
    Linear,
    ParamFactory,
    PatchTaskParams,
    TaskTokens,
    TransformerLayerParams,
    cross_modality_attention,
    decoder_self_attention_block,
    msa_block,
    patch_task_attention,
    prepare_mask,
    sia_block,
)
from .geometry import (
    ENCODER_SCHEDULE,
    RT2T_SCHEDULE,
    DepthMap,
    DpeParams,
    TokenSeq,
    decoder_pe,
    rt2t_fold,
    soft_split,
    spatial_pe_2d,
)
from .tensor import Param, Tensor, mac_scope

LEVELS = ("1/16", "1/8", "1/4", "1")
SIA_LEVELS = ("1/8", "1/4")


@dataclass(frozen=True)
class ModelConfig:
    side: int = 64
    c: int = 64
    d: int = 384
    convertor_layers: int = 4
    decoder_layers: tuple[int, int, int] = (4, 2, 2)
    encoder_layers: int = 4
    modality: str = "rgb"
    heads: int = 6
    t2t_heads: int = 1
    ffn_ratio: float = 4.0
    seed: int = 0
    sia_mode: str = "select"
    decoder_attention: str = "sia"

    def __post_init__(self):
        if self.side <= 0 or self.side % 16:
            raise ValueError(f"input side must be a positive multiple of 16, got {self.side}")
        if self.d % self.heads or self.d % 4:
            raise ValueError(f"d={self.d} must be divisible by heads={self.heads} and by 4")
        if self.c % self.t2t_heads:
            raise ValueError(f"c={self.c} must be divisible by t2t_heads={self.t2t_heads}")
        if self.modality not in ("rgb", "rgbd"):
            raise ValueError(f"modality must be 'rgb' or 'rgbd', got {self.modality!r}")
        if self.modality == "rgbd" and (self.convertor_layers % 2 or self.d % 8):
            raise ValueError("rgbd needs an even convertor layer count and d divisible by 8")
        if len(self.decoder_layers) != 3:
            raise ValueError("decoder_layers needs one count per level (1/16, 1/8, 1/4)")
        if self.sia_mode not in ("select", "masked"):
            raise ValueError(f"sia_mode must be 'select' or 'masked', got {self.sia_mode!r}")
        if self.decoder_attention not in ("sia", "self"):
            raise ValueError(f"decoder_attention must be 'sia' or 'self', got {self.decoder_attention!r}")

    def grid(self, level: str) -> tuple[int, int]:
        n = self.side if level == "1" else self.side // int(level.split("/")[1])
        return (n, n)

    def evolve(self, **changes) -> "ModelConfig":
        return replace(self, **changes)

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]


@dataclass
class EncoderOutput:
    t1: TokenSeq
    t2: TokenSeq
    final: TokenSeq


@dataclass
class LevelPrediction:
    dense_saliency: Tensor
    dense_boundary: Tensor
    token_saliency: Tensor
    token_boundary: Tensor

    def maps(self) -> dict[str, Tensor]:
        return {
            "dense_saliency": self.dense_saliency,
            "dense_boundary": self.dense_boundary,
            "token_saliency": self.token_saliency,
            "token_boundary": self.token_boundary,
        }


@dataclass
class PredictionSet:
    levels: dict[str, LevelPrediction]
    masks: dict[str, ForegroundMask] = field(default_factory=dict)
    head_tokens: dict[str, TaskTokens] = field(default_factory=dict)

    def __getitem__(self, level: str) -> LevelPrediction:
        return self.levels[level]


# ---------------------------------------------------------------------------
# parameter containers


@dataclass
class EncoderParams:
    proj: list[Linear]
    t2t_blocks: list[TransformerLayerParams]
    embed: Linear
    layers: list[TransformerLayerParams]

    @classmethod
    def create(cls, f: ParamFactory, cfg: ModelConfig, in_channels: int = 3) -> "EncoderParams":
        k = [s.k for s in ENCODER_SCHEDULE]
        proj = [
            Linear.create(f, "proj0", in_channels * k[0] ** 2, cfg.c),
            Linear.create(f, "proj1", cfg.c * k[1] ** 2, cfg.c),
            Linear.create(f, "proj2", cfg.c * k[2] ** 2, cfg.c),
        ]
        blocks = [TransformerLayerParams.create(f.child(f"t2t{i}"), cfg.c, cfg.t2t_heads, cfg.ffn_ratio) for i in (1, 2)]
        layers = [TransformerLayerParams.create(f.child(f"layer{i}"), cfg.d, cfg.heads, cfg.ffn_ratio) for i in range(cfg.encoder_layers)]
        return cls(proj, blocks, Linear.create(f, "embed", cfg.c, cfg.d), layers)


@dataclass
class ConvertorParams:
    layers: list[TransformerLayerParams]
    cross: list[TransformerLayerParams] = field(default_factory=list)
    rgb_self: list[TransformerLayerParams] = field(default_factory=list)
    depth_self: list[TransformerLayerParams] = field(default_factory=list)
    fuse: Linear | None = None

    @classmethod
    def create(cls, f: ParamFactory, cfg: ModelConfig) -> "ConvertorParams":
        mk = lambda name: TransformerLayerParams.create(f.child(name), cfg.d, cfg.heads, cfg.ffn_ratio)  # noqa: E731
        if cfg.modality == "rgb":
            return cls([mk(f"layer{i}") for i in range(cfg.convertor_layers)])
        rounds = cfg.convertor_layers // 2
        return cls(
            [],
            [mk(f"cross{i}") for i in range(rounds)],
            [mk(f"rgb_self{i}") for i in range(rounds)],
            [mk(f"depth_self{i}") for i in range(rounds)],
            Linear.create(f, "fuse", 2 * cfg.d, cfg.d),
        )


@dataclass
class HeadParams:
    pta_saliency: PatchTaskParams
    pta_boundary: PatchTaskParams
    pred_saliency: Linear
    pred_boundary: Linear

    @classmethod
    def create(cls, f: ParamFactory, d: int) -> "HeadParams":
        return cls(
            PatchTaskParams.create(f.child("pta_saliency"), d),
            PatchTaskParams.create(f.child("pta_boundary"), d),
            Linear.create(f, "pred_saliency", d, 1),
            Linear.create(f, "pred_boundary", d, 1),
        )


@dataclass
class UpsampleParams:
    reduce: Linear  # d -> c
    expand: Linear  # c -> c*k*k
    fuse: Linear | None  # 2c -> c, absent at full resolution
    restore: Linear  # c -> d


@dataclass
class DecoderLevelParams:
    layers: list[TransformerLayerParams]
    head: HeadParams
    upsample: UpsampleParams | None = None


class VSTModel:
    """Parameters and forward pass of the full RGB / RGB-D network."""

    def __init__(self, cfg: ModelConfig | None = None, **overrides):
        cfg = cfg or ModelConfig()
        if overrides:
            cfg = cfg.evolve(**overrides)
        self.cfg = cfg
        root = ParamFactory(cfg.seed)
        self._registry = root.registry
        self.encoders = {"rgb": EncoderParams.create(root.child("encoder.rgb"), cfg)}
        if cfg.modality == "rgbd":
            self.encoders["depth"] = EncoderParams.create(root.child("encoder.depth"), cfg)
        self.convertor = ConvertorParams.create(root.child("convertor"), cfg)
        dec = root.child("decoder")
        self.tasks = TaskTokens.create(dec.child("tasks"), cfg.d)
        self.dpe = DpeParams({lv: dec.ones(f"dpe_z.{lv}", (1,)) for lv in LEVELS[:3]}, cfg.d // 2)
        self.levels: dict[str, DecoderLevelParams] = {}
        for i, lv in enumerate(LEVELS):
            f = dec.child(f"level{lv.replace('/', '_')}")
            layers = [
                TransformerLayerParams.create(f.child(f"layer{j}"), cfg.d, cfg.heads, cfg.ffn_ratio)
                for j in range(cfg.decoder_layers[i] if i < 3 else 0)
            ]
            up = None
            if i > 0:
                k = RT2T_SCHEDULE[i - 1].k
                up = UpsampleParams(
                    Linear.create(f, "reduce", cfg.d, cfg.c),
                    Linear.create(f, "expand", cfg.c, cfg.c * k * k),
                    Linear.create(f, "fuse", 2 * cfg.c, cfg.c) if lv != "1" else None,
                    Linear.create(f, "restore", cfg.c, cfg.d),
                )
            self.levels[lv] = DecoderLevelParams(layers, HeadParams.create(f.child("head"), cfg.d), up)

    def parameters(self) -> list[Param]:
        return list(self._registry)

    def named_parameters(self) -> dict[str, Param]:
        return {p.id: p for p in self._registry}

    def zero_grad(self) -> None:
        for p in self._registry:
            p.zero_grad()

    # -- forward -----------------------------------------------------------

    def encode(self, image, stream: str = "rgb") -> EncoderOutput:
        return encode(image, self.encoders[stream], self.cfg)

    def convert(self, rgb: EncoderOutput, depth: EncoderOutput | None = None) -> TokenSeq:
        if self.cfg.modality == "rgb":
            return convert_rgb(rgb, self.convertor)
        return convert_rgbd(rgb, depth, self.convertor)

    def decode(self, t_c: TokenSeq, enc: EncoderOutput, depth=None, masks=None) -> PredictionSet:
        return decode(self, t_c, enc, depth, masks)

    def forward(self, image, depth=None, masks: dict[str, ForegroundMask] | None = None) -> PredictionSet:
        image = np.asarray(image.data if isinstance(image, Tensor) else image, dtype=np.float64)
        side = self.cfg.side
        if image.shape != (side, side, 3):
            raise ValueError(f"expected an image of shape {(side, side, 3)}, got {image.shape}")
        if self.cfg.modality == "rgb" and depth is not None:
            raise ValueError("rgb model was given a depth map; use modality='rgbd'")
        if self.cfg.modality == "rgbd" and depth is None:
            raise ValueError("rgbd model needs a depth map")
        with mac_scope("encoder.rgb"):
            enc = self.encode(image, "rgb")
        enc_d = None
        if depth is not None:
            depth = depth if isinstance(depth, DepthMap) else DepthMap(depth)
            if depth.values.shape != (side, side):
                raise ValueError(f"expected a depth map of shape {(side, side)}, got {depth.values.shape}")
            with mac_scope("encoder.depth"):
                enc_d = self.encode(np.repeat(depth.values[:, :, None], 3, axis=2), "depth")
        with mac_scope("convertor"):
            t_c = self.convert(enc, enc_d)
        with mac_scope("decoder"):
            return self.decode(t_c, enc, depth, masks)

    __call__ = forward


def encode(image, p: EncoderParams, cfg: ModelConfig) -> EncoderOutput:
    """Soft split -> [re-structurize -> soft split] x 2 -> embed + 2D PE -> L_E layers."""
    x = T.as_tensor(image)
    lows = []
    for i, spec in enumerate(ENCODER_SCHEDULE):
        with mac_scope(f"t2t{i}"):
            if i > 0:
                prev = lows[-1]
                y = msa_block(prev.tokens, p.t2t_blocks[i - 1])
                x = y.reshape(prev.grid[0], prev.grid[1], cfg.c)
            seq = soft_split(x, spec)
            lows.append(TokenSeq(p.proj[i](seq.tokens, label="proj"), seq.grid))
    t3 = lows[2]
    with mac_scope("embed"):
        z = p.embed(t3.tokens, label="embed") + spatial_pe_2d(t3.grid, cfg.d).table
    for i, layer in enumerate(p.layers):
        with mac_scope(f"layer{i}"):
            z = msa_block(z, layer)
    return EncoderOutput(lows[0], lows[1], TokenSeq(z, t3.grid))


def convert_rgb(t: EncoderOutput, p: ConvertorParams) -> TokenSeq:
    z = t.final.tokens
    for i, layer in enumerate(p.layers):
        with mac_scope(f"layer{i}"):
            z = msa_block(z, layer)
    return TokenSeq(z, t.final.grid)


def convert_rgbd(rgb: EncoderOutput, depth: EncoderOutput, p: ConvertorParams) -> TokenSeq:
    if rgb.final.grid != depth.final.grid:
        raise ValueError(f"rgb grid {rgb.final.grid} != depth grid {depth.final.grid}")
    a, b = rgb.final.tokens, depth.final.tokens
    for i, (cross, rs, ds) in enumerate(zip(p.cross, p.rgb_self, p.depth_self)):
        with mac_scope(f"round{i}"):
            a, b = cross_modality_attention(a, b, cross)
            a, b = msa_block(a, rs), msa_block(b, ds)
    with mac_scope("fuse"):
        z = p.fuse(T.concat([a, b], axis=1), label="fuse")
    return TokenSeq(z, rgb.final.grid)


def token_supervised_head(patches, task, grid: tuple[int, int]) -> Tensor:
    """sigmoid(t P^T / sqrt(d)) reshaped to the token grid."""
    patches = T.as_tensor(patches)
    d = patches.shape[1]
    logits = T.scale(T.matmul(task, patches.T, label="token_head"), 1.0 / np.sqrt(d))
    return T.sigmoid(logits).reshape(grid)


def predict_level(patches: Tensor, tasks: TaskTokens, head: HeadParams, grid: tuple[int, int]) -> LevelPrediction:
    with mac_scope("saliency"):
        fs = patch_task_attention(patches, tasks.saliency, head.pta_saliency)
        dense_s = T.sigmoid(head.pred_saliency(fs, label="dense_head")).reshape(grid)
        token_s = token_supervised_head(patches, tasks.saliency, grid)
    with mac_scope("boundary"):
        fb = patch_task_attention(patches, tasks.boundary, head.pta_boundary)
        dense_b = T.sigmoid(head.pred_boundary(fb, label="dense_head")).reshape(grid)
        token_b = token_supervised_head(patches, tasks.boundary, grid)
    return LevelPrediction(dense_s, dense_b, token_s, token_b)


def _upsample(patches: Tensor, grid, target, spec, up: UpsampleParams, c: int, low: TokenSeq | None) -> Tensor:
    """RT2T upsampling (d -> c -> c*k*k -> fold), optional fusion with encoder tokens, back to d."""
    with mac_scope("rt2t"):
        x = up.expand(up.reduce(patches, label="reduce"), label="expand")
        img = rt2t_fold(TokenSeq(x, grid), spec, target, c)
        x = img.reshape(target[0] * target[1], c)
        if low is not None:
            x = up.fuse(T.concat([x, low.tokens], axis=1), label="fuse")
        return up.restore(x, label="restore")


def decode(model: VSTModel, t_c: TokenSeq, enc: EncoderOutput, depth=None, masks=None) -> PredictionSet:
    cfg = model.cfg
    if cfg.modality == "rgbd" and depth is None:
        raise ValueError("rgbd decoding needs a depth map")
    if depth is not None and not isinstance(depth, DepthMap):
        depth = DepthMap(depth)
    masks = dict(masks or {})
    tasks = model.tasks
    patches, grid = t_c.tokens, t_c.grid
    out = PredictionSet({})
    lows = {"1/8": enc.t2, "1/4": enc.t1, "1": None}

    for i, lv in enumerate(LEVELS):
        lp = model.levels[lv]
        target = cfg.grid(lv)
        with mac_scope(f"level{lv}"):
            if lv != "1/16":
                patches = _upsample(patches, grid, target, RT2T_SCHEDULE[i - 1], lp.upsample, cfg.c, lows[lv])
                grid = target
            if lp.layers:
                pe = decoder_pe(grid, cfg.d, depth, model.dpe.z[lv] if depth is not None else None)
                use_sia = lv in SIA_LEVELS and cfg.decoder_attention == "sia"
                if lv in SIA_LEVELS and lv not in masks:
                    prev = LEVELS[i - 1]
                    masks[lv] = prepare_mask(out.levels[prev].dense_saliency, grid)
                for j, layer in enumerate(lp.layers):
                    with mac_scope(f"layer{j}"):
                        if use_sia:
                            patches, tasks = sia_block(patches, tasks, masks[lv], pe, pe, layer, cfg.sia_mode)
                        else:
                            patches, tasks = decoder_self_attention_block(patches, tasks, pe, layer)
            with mac_scope("heads"):
                out.levels[lv] = predict_level(patches, tasks, lp.head, grid)
            out.head_tokens[lv] = tasks
    out.masks = {lv: masks[lv] for lv in SIA_LEVELS if lv in masks}
    return out
