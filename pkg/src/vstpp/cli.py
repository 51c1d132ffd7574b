"""Command-line entry point: infer, macs, gradcheck, overfit, eval.

Exit status is 0 on success, 1 on bad input (config, file format, shapes)
and 2 when gradcheck or overfit miss their thresholds.
"""

from __future__ import annotations

import argparse
import os
import sys
import time

import numpy as np

from .complexity import closed_form_model_macs, savings_report
from .config import DOCS, ConfigError, RunConfig, load_config
from .gradcheck import check_gradients
from .model import LEVELS, VSTModel
from .netpbm import NetpbmError, load_gray, load_image, save_gray
from .objectives import GroundTruth, mae, max_f
from .tensor import no_grad
from .train import overfit, synthetic_depth, synthetic_scene

EXIT_OK, EXIT_INPUT, EXIT_THRESHOLD = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def level_tag(level: str) -> str:
    return level.replace("/", "_")


def _header(cfg: RunConfig) -> list[str]:
    return [f"seed\t{cfg.seed}", f"config_hash\t{cfg.digest()}"]


def _write_text(path: str, text: str) -> None:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def _inputs(cfg: RunConfig, side: int):
    """(image, depth or None, GroundTruth) from config paths, synthetic where a path is empty."""
    scene, mask = synthetic_scene(side)
    image = load_image(cfg.rgb, side, cfg.resize) if cfg.rgb else scene
    gt = mask
    if cfg.gt:
        gt = (load_gray(cfg.gt, side, cfg.resize) > 0.5).astype(np.float64)
    depth = None
    if cfg.modality == "rgbd":
        depth = load_gray(cfg.depth, side, cfg.resize) if cfg.depth else synthetic_depth(mask)
    elif cfg.depth:
        raise ConfigError("a depth map was given but modality is rgb")
    return image, depth, GroundTruth(gt)


def cmd_infer(cfg: RunConfig) -> int:
    mcfg = cfg.model_config()
    image, depth, _ = _inputs(cfg, mcfg.side)
    model = VSTModel(mcfg)
    with no_grad():
        preds = model.forward(image, depth)
    lines = _header(cfg) + [f"modality\t{mcfg.modality}", f"side\t{mcfg.side}", f"rgb\t{cfg.rgb or '<synthetic>'}"]
    for lv in LEVELS:
        p = preds[lv]
        for task, m in (("saliency", p.dense_saliency), ("boundary", p.dense_boundary)):
            name = f"{task}_{level_tag(lv)}.pgm"
            save_gray(np.clip(m.data, 0.0, 1.0), os.path.join(cfg.out, name))
            lines.append(f"{name}\t{m.shape[0]}x{m.shape[1]}")
    for lv, mask in preds.masks.items():
        lines.append(f"n_foreground.{level_tag(lv)}\t{mask.n_foreground}")
    _write_text(os.path.join(cfg.out, "manifest.txt"), "\n".join(lines) + "\n")
    print(f"wrote {2 * len(LEVELS)} maps and manifest.txt to {cfg.out}")
    return EXIT_OK


def cmd_macs(cfg: RunConfig) -> int:
    mcfg = cfg.model_config()
    rep = savings_report(mcfg, cfg.fg_fraction)
    closed = closed_form_model_macs(mcfg, rep.n_foreground)
    lines = _header(cfg) + [f"fg_fraction\t{cfg.fg_fraction}"]
    text = "\n".join(lines) + "\n" + rep.to_text()
    text += "".join(f"closed_form.{k}\t{v}\n" for k, v in closed.items())
    text += f"closed_form.total\t{sum(closed.values())}\ncounted.total\t{rep.sia.total}\n"
    _write_text(os.path.join(cfg.out, "macs.txt"), text)
    _write_text(os.path.join(cfg.out, "macs_counted_sia.txt"), rep.sia.to_text())
    _write_text(os.path.join(cfg.out, "macs_counted_baseline.txt"), rep.baseline.to_text())
    for name, row in rep.summary().items():
        print(f"{name:32s} {row['baseline']:>14d} {row['sia']:>14d} {row['reduction_pct']:8.2f}%")
    print(f"predicted decoder score reduction {rep.predicted_score_reduction:.2f}%")
    return EXIT_OK


def cmd_gradcheck(cfg: RunConfig) -> int:
    mcfg = cfg.model_config(side=cfg.gradcheck_side)
    image, depth, gt = _inputs(cfg, mcfg.side)
    rep = check_gradients(
        VSTModel(mcfg),
        image,
        gt,
        depth,
        entries=cfg.gradcheck_entries,
        directions=cfg.gradcheck_directions,
        step=cfg.gradcheck_step,
        seed=cfg.seed,
    )
    _write_text(os.path.join(cfg.out, "gradcheck.txt"), "\n".join(_header(cfg)) + "\n" + rep.to_text())
    ok = rep.max_rel_error < cfg.gradcheck_tol
    print(f"max relative error {rep.max_rel_error:.3e} over {len(rep.checks)} probes ({'ok' if ok else 'FAIL'})")
    return EXIT_OK if ok else EXIT_THRESHOLD


def cmd_overfit(cfg: RunConfig) -> int:
    mcfg = cfg.model_config()
    image, depth, gt = _inputs(cfg, mcfg.side)
    model = VSTModel(mcfg)
    log_path = os.path.join(cfg.out, "overfit_log.txt")
    os.makedirs(cfg.out, exist_ok=True)
    start = time.perf_counter()
    with open(log_path, "w", encoding="utf-8") as log:
        log.write("\n".join(_header(cfg)) + "\nstep\tL_total\n")

        def report(step: int, loss: float) -> None:
            log.write(f"{step}\t{loss!r}\n")
            if cfg.log_every and step % cfg.log_every == 0:
                print(f"step {step:5d}  L_total {loss:.6f}  {time.perf_counter() - start:.1f}s", flush=True)

        res = overfit(model, image, gt, cfg.steps, cfg.lr, depth, callback=report)
        log.write(f"final\t{res.final_loss!r}\nfinal_mae\t{res.final_mae!r}\n")
    ok = res.final_loss < cfg.loss_threshold and res.final_mae < cfg.mae_threshold
    print(f"final L_total {res.final_loss:.6f}  MAE {res.final_mae:.6f} ({'ok' if ok else 'FAIL'})")
    return EXIT_OK if ok else EXIT_THRESHOLD


def cmd_eval(cfg: RunConfig, pred_path: str, gt_path: str) -> int:
    pred = load_gray(pred_path)
    gt = load_gray(gt_path)
    if pred.shape != gt.shape:
        raise ValueError(f"prediction {pred.shape} and ground truth {gt.shape} differ in shape")
    gt = (gt > 0.5).astype(np.float64)
    print(f"mae\t{mae(pred, gt):.6f}")
    print(f"maxf\t{max_f(pred, gt):.6f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    keys = "\n".join(f"  {k:22s} {v}" for k, v in DOCS.items())
    parser = _Parser(
        prog="vstpp",
        description="Salient-object transformer: inference, MAC accounting, gradient checks, overfitting, metrics.",
        epilog=f"config keys (key=value, '#' comments):\n{keys}",
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    common = _Parser(add_help=False)
    common.add_argument("--config", help="key=value config file")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output directory")
    common.add_argument("--mode", choices=("rgb", "rgbd"), help="input modality")
    common.add_argument("--side", type=int, help="input side in pixels")
    common.add_argument("--fg-fraction", type=float, help="synthetic mask foreground fraction (macs)")
    common.add_argument("--rgb", help="P6 colour image")
    common.add_argument("--depth", help="P5 depth map")
    common.add_argument("--gt", help="P5 ground-truth mask")
    common.add_argument("--resize", action="store_true", help="nearest-resize inputs to the configured side")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override any config key")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("infer", parents=[common], help="write saliency and boundary maps at every level")
    sub.add_parser("macs", parents=[common], help="count MACs of the SIA decoder against plain self-attention")
    sub.add_parser("gradcheck", parents=[common], help="compare autograd with central differences")
    sub.add_parser("overfit", parents=[common], help="gradient descent on one image until the loss is small")
    ev = sub.add_parser("eval", parents=[common], help="MAE and maxF of a predicted map against a mask")
    ev.add_argument("pred", help="P5 predicted saliency map")
    ev.add_argument("gt_map", metavar="gt", help="P5 ground-truth mask")
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    overrides: dict[str, str] = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key.strip()] = value
    flags = {
        "seed": args.seed,
        "out": args.out,
        "modality": args.mode,
        "side": args.side,
        "fg_fraction": args.fg_fraction,
        "rgb": args.rgb,
        "depth": args.depth,
        "gt": args.gt,
        "resize": "true" if args.resize else None,
    }
    overrides.update({k: str(v) for k, v in flags.items() if v is not None})
    return load_config(args.config, overrides)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        if args.command == "eval":
            return cmd_eval(cfg, args.pred, args.gt_map)
        return {"infer": cmd_infer, "macs": cmd_macs, "gradcheck": cmd_gradcheck, "overfit": cmd_overfit}[args.command](cfg)
    except (ConfigError, NetpbmError, ValueError, OSError) as exc:
        print(f"vstpp {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
