"""Multiply-accumulate accounting.

:func:`counted_forward` records every matrix product executed by a forward
pass, labelled by the scope it ran in (``decoder.level1/4.layer0.score`` and
so on). The closed forms below predict the same counts analytically; the two
routes are kept independent so each checks the other.

One MAC is one multiply-add inside a matrix product. Softmax, sigmoid,
layer-norm, GELU and pooling arithmetic are not counted.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .attention import ForegroundMask
from .geometry import ENCODER_SCHEDULE, RT2T_SCHEDULE, ss_length
from .model import LEVELS, SIA_LEVELS, ModelConfig, PredictionSet, VSTModel
from .tensor import mac_hook, no_grad

__all__ = [
    "MacReport",
    "counted_forward",
    "attention_cost_breakdown",
    "closed_form_attention_cost",
    "closed_form_model_macs",
    "synthetic_mask",
    "SavingsReport",
    "savings_report",
    "SCORE_LABELS",
]

SCORE_LABELS = ("score", "value")


@dataclass
class MacReport:
    counts: "OrderedDict[str, int]" = field(default_factory=OrderedDict)
    n_foreground: dict[str, int] = field(default_factory=dict)

    def add(self, label: str, macs: int) -> None:
        if macs < 0:
            raise ValueError(f"negative MAC count for {label!r}")
        self.counts[label] = self.counts.get(label, 0) + int(macs)

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    def select(self, prefix: str = "", ops: tuple[str, ...] | None = None) -> int:
        """Sum of entries under ``prefix`` whose final label component is in ``ops``."""
        total = 0
        for label, n in self.counts.items():
            if not label.startswith(prefix):
                continue
            if ops is not None and label.rsplit(".", 1)[-1] not in ops:
                continue
            total += n
        return total

    def stages(self, depth: int = 2) -> "OrderedDict[str, int]":
        out: OrderedDict[str, int] = OrderedDict()
        for label, n in self.counts.items():
            key = ".".join(label.split(".")[:depth])
            out[key] = out.get(key, 0) + n
        return out

    def grouped(self, keys) -> "OrderedDict[str, int]":
        """Totals under each dotted prefix in ``keys`` (for lining up with the closed forms)."""
        return OrderedDict((k, self.select(k + ".")) for k in keys)

    def to_text(self) -> str:
        lines = [f"{label}\t{n}" for label, n in self.counts.items()]
        lines += [f"n_foreground.{lv}\t{n}" for lv, n in self.n_foreground.items()]
        lines.append(f"total\t{self.total}")
        return "\n".join(lines) + "\n"


def counted_forward(forward: Callable, *args, **kwargs) -> tuple[object, MacReport]:
    """Run ``forward(*args, **kwargs)`` with MAC counting installed."""
    report = MacReport()
    with mac_hook(report.add):
        result = forward(*args, **kwargs)
    if isinstance(result, PredictionSet):
        report.n_foreground = {lv: m.n_foreground for lv, m in result.masks.items()}
    return result, report


# ---------------------------------------------------------------------------
# closed forms


def attention_cost_breakdown(n_q: int, n_k: int, e: int) -> dict[str, int]:
    """Matrix-product MACs of one attention layer (all heads) with n_q queries and n_k keys."""
    return {
        "proj_q": n_q * e * e,
        "proj_k": n_k * e * e,
        "proj_v": n_k * e * e,
        "score": n_q * n_k * e,
        "value": n_q * n_k * e,
        "proj_o": n_q * e * e,
    }


def _key_length(l: int, n_fg: int, variant: str, background: bool) -> int:
    if variant == "full":
        return l + 2
    if variant == "sia":
        return n_fg + 2 + int(background)
    if variant == "masked":
        return l + 2 + int(background)
    raise ValueError(f"unknown attention variant {variant!r}")


def closed_form_attention_cost(
    l: int, n_fg: int, e: int, variant: str = "full", background: bool = True, component: str = "all"
) -> int:
    """Attention MACs for l patch tokens plus the two task tokens.

    ``full`` is self-attention over l + 2 tokens, (l+2)^2 score terms. ``sia``
    keeps l + 2 queries but only n_fg + 3 keys (foreground, background token,
    two task tokens), or n_fg + 2 when ``background`` is False. ``component``
    picks "scores" (QK^T and AV), "projections" or "all".
    """
    if not 0 <= n_fg <= l:
        raise ValueError(f"foreground count {n_fg} outside [0, {l}]")
    parts = attention_cost_breakdown(l + 2, _key_length(l, n_fg, variant, background), e)
    if component == "scores":
        return parts["score"] + parts["value"]
    if component == "projections":
        return parts["proj_q"] + parts["proj_k"] + parts["proj_v"] + parts["proj_o"]
    if component == "all":
        return sum(parts.values())
    raise ValueError(f"unknown component {component!r}")


def _ffn(n: int, e: int, ratio: float) -> int:
    return 2 * n * e * int(round(ratio * e))


def _layer(n_q: int, n_k: int, e: int, ratio: float) -> int:
    return sum(attention_cost_breakdown(n_q, n_k, e).values()) + _ffn(n_q, e, ratio)


def _heads(l: int, d: int) -> int:
    # per task: K, V, K@W_q (3 d^2), gate scores, gate*V, dense head, token head (4 l d)
    return 2 * (3 * d * d + 4 * l * d)


def closed_form_model_macs(cfg: ModelConfig, n_foreground: Mapping[str, int] | None = None) -> "OrderedDict[str, int]":
    """Analytic MAC totals per stage for one forward pass of ``cfg``.

    ``n_foreground`` gives the SIA foreground count per level; it is ignored
    when the decoder runs plain self-attention.
    """
    c, d, r = cfg.c, cfg.d, cfg.ffn_ratio
    n_foreground = dict(n_foreground or {})
    out: OrderedDict[str, int] = OrderedDict()

    sizes = []
    h = cfg.side
    for spec in ENCODER_SCHEDULE:
        h = ss_length(h, spec)
        sizes.append(h * h)
    l1, l2, l3 = sizes
    enc = (
        l1 * 3 * ENCODER_SCHEDULE[0].k ** 2 * c
        + _layer(l1, l1, c, r) + l2 * c * ENCODER_SCHEDULE[1].k ** 2 * c
        + _layer(l2, l2, c, r) + l3 * c * ENCODER_SCHEDULE[2].k ** 2 * c
        + l3 * c * d
        + cfg.encoder_layers * _layer(l3, l3, d, r)
    )
    out["encoder.rgb"] = enc
    if cfg.modality == "rgbd":
        out["encoder.depth"] = enc
        rounds = cfg.convertor_layers // 2
        out["convertor"] = rounds * 4 * _layer(l3, l3, d, r) + l3 * 2 * d * d
    else:
        out["convertor"] = cfg.convertor_layers * _layer(l3, l3, d, r)

    prev = l3
    for i, lv in enumerate(LEVELS):
        g = cfg.grid(lv)
        l = g[0] * g[1]
        total = 0
        if lv != "1/16":
            k = RT2T_SCHEDULE[i - 1].k
            total += prev * d * c + prev * c * c * k * k + l * c * d
            if lv != "1":
                total += l * 2 * c * c
        if i < 3:
            n_layers = cfg.decoder_layers[i]
            if n_layers and lv in SIA_LEVELS and cfg.decoder_attention == "sia":
                n_fg = n_foreground[lv]
                n_k = _key_length(l, n_fg, "sia" if cfg.sia_mode == "select" else "masked", n_fg < l)
            else:
                n_k = l + 2
            total += n_layers * _layer(l + 2, n_k, d, r)
        total += _heads(l, d)
        out[f"decoder.level{lv}"] = total
        prev = l
    return out


# ---------------------------------------------------------------------------
# SIA savings


def synthetic_mask(grid: tuple[int, int], fraction: float) -> ForegroundMask:
    """Row-major mask with round(fraction * l) leading foreground positions."""
    if not 0.0 <= fraction <= 1.0:
        raise ValueError(f"foreground fraction must be in [0, 1], got {fraction}")
    l = grid[0] * grid[1]
    bits = np.zeros(l, dtype=np.int8)
    bits[: int(round(fraction * l))] = 1
    return ForegroundMask(bits, grid)


@dataclass
class SavingsReport:
    config: ModelConfig
    fg_fraction: dict[str, float]
    n_foreground: dict[str, int]
    baseline: MacReport
    sia: MacReport
    rows: "OrderedDict[str, tuple[int, int]]" = field(default_factory=OrderedDict)
    predicted_score_reduction: float = 0.0

    @staticmethod
    def reduction(base: int, new: int) -> float:
        return 0.0 if base == 0 else 100.0 * (base - new) / base

    def to_text(self) -> str:
        lines = [f"side\t{self.config.side}", f"modality\t{self.config.modality}"]
        lines += [f"n_foreground.{lv}\t{n}" for lv, n in self.n_foreground.items()]
        for name, (b, s) in self.rows.items():
            lines.append(f"{name}.baseline\t{b}")
            lines.append(f"{name}.sia\t{s}")
            lines.append(f"{name}.reduction_pct\t{self.reduction(b, s):.4f}")
        lines.append(f"decoder.scores.predicted_reduction_pct\t{self.predicted_score_reduction:.4f}")
        return "\n".join(lines) + "\n"

    def summary(self) -> dict:
        return {
            name: {"baseline": b, "sia": s, "reduction_pct": self.reduction(b, s)}
            for name, (b, s) in self.rows.items()
        }


def savings_report(cfg: ModelConfig, fg_fraction: float | Mapping[str, float] = 0.5, image=None, depth=None) -> SavingsReport:
    """Count an all-self-attention decoder against the SIA decoder, same weights and fixed masks."""
    if not isinstance(fg_fraction, Mapping):
        fg_fraction = {lv: float(fg_fraction) for lv in SIA_LEVELS}
    masks = {lv: synthetic_mask(cfg.grid(lv), fg_fraction[lv]) for lv in SIA_LEVELS}
    rng = np.random.default_rng(cfg.seed)
    if image is None:
        image = rng.random((cfg.side, cfg.side, 3))
    if cfg.modality == "rgbd" and depth is None:
        depth = rng.random((cfg.side, cfg.side))

    model = VSTModel(cfg.evolve(decoder_attention="sia"))
    with no_grad():
        _, sia = counted_forward(model.forward, image, depth, masks=masks)
        model.cfg = cfg.evolve(decoder_attention="self")
        _, base = counted_forward(model.forward, image, depth, masks=masks)
    model.cfg = cfg.evolve(decoder_attention="sia")

    rows: OrderedDict[str, tuple[int, int]] = OrderedDict()
    for lv in LEVELS[:3]:
        prefix = f"decoder.level{lv}."
        rows[f"decoder.level{lv}.scores"] = (base.select(prefix, SCORE_LABELS), sia.select(prefix, SCORE_LABELS))
        rows[f"decoder.level{lv}.total"] = (base.select(prefix), sia.select(prefix))
    rows["decoder.scores"] = (base.select("decoder.", SCORE_LABELS), sia.select("decoder.", SCORE_LABELS))
    rows["decoder.total"] = (base.select("decoder."), sia.select("decoder."))
    rows["model.total"] = (base.total, sia.total)

    n_fg = {lv: m.n_foreground for lv, m in masks.items()}
    pred_base = pred_sia = 0
    for i, lv in enumerate(LEVELS[:3]):
        l = cfg.grid(lv)[0] * cfg.grid(lv)[1]
        layers = cfg.decoder_layers[i]
        full = closed_form_attention_cost(l, l, cfg.d, "full", component="scores")
        pred_base += layers * full
        if lv in SIA_LEVELS:
            pred_sia += layers * closed_form_attention_cost(l, n_fg[lv], cfg.d, "sia", n_fg[lv] < l, "scores")
        else:
            pred_sia += layers * full
    return SavingsReport(
        cfg,
        dict(fg_fraction),
        n_fg,
        base,
        sia,
        rows,
        SavingsReport.reduction(pred_base, pred_sia),
    )
