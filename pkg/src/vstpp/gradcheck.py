"""Central-difference verification of the analytic gradient of the total loss.

Foreground masks are computed once from the unperturbed forward pass and held
fixed, so the loss is a smooth function of the parameters being probed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import VSTModel
from .objectives import GroundTruth, total_loss
from .tensor import Param, backward, no_grad

__all__ = ["GradCheck", "GradcheckReport", "module_groups", "sample_targets", "check_gradients"]


@dataclass
class GradCheck:
    param: str
    probe: str
    analytic: float
    numeric: float

    @property
    def rel_error(self) -> float:
        scale = max(abs(self.analytic), abs(self.numeric))
        return 0.0 if scale == 0.0 else abs(self.analytic - self.numeric) / scale


@dataclass
class GradcheckReport:
    checks: list[GradCheck] = field(default_factory=list)
    loss: float = float("nan")

    @property
    def max_rel_error(self) -> float:
        return max((c.rel_error for c in self.checks), default=0.0)

    def to_text(self) -> str:
        lines = [f"loss\t{self.loss!r}"]
        for c in self.checks:
            lines.append(f"{c.param}[{c.probe}]\tanalytic={c.analytic:.12e}\tnumeric={c.numeric:.12e}\trel={c.rel_error:.3e}")
        lines.append(f"max_rel_error\t{self.max_rel_error:.3e}")
        return "\n".join(lines) + "\n"


def module_groups(model: VSTModel) -> dict[str, list[str]]:
    """Parameter names grouped by top-level module (encoder streams, convertor, decoder levels)."""
    groups: dict[str, list[str]] = {}
    for name in model.named_parameters():
        parts = name.split(".")
        key = parts[0] if parts[0] == "convertor" else ".".join(parts[:2])
        groups.setdefault(key, []).append(name)
    return groups


def sample_targets(model: VSTModel, rng: np.random.Generator) -> list[str]:
    """Both task tokens plus one randomly chosen weight matrix per module."""
    params = model.named_parameters()
    targets = [model.tasks.saliency.id, model.tasks.boundary.id]
    for key, names in module_groups(model).items():
        if key in ("decoder.tasks", "decoder.dpe_z"):
            continue
        weights = [n for n in names if params[n].data.ndim == 2 and min(params[n].shape) > 1]
        if weights:
            targets.append(weights[int(rng.integers(len(weights)))])
    return targets


def check_gradients(
    model: VSTModel,
    image: np.ndarray,
    gt: GroundTruth,
    depth: np.ndarray | None = None,
    targets: list[str] | None = None,
    entries: int = 3,
    directions: int = 2,
    step: float = 1e-5,
    seed: int = 0,
) -> GradcheckReport:
    """Compare autograd against central differences of the total loss.

    Each target parameter is probed along ``directions`` random unit
    directions and at its ``entries`` largest-magnitude gradient entries.
    Each random direction is averaged with the unit gradient direction so the
    derivative being checked stays comparable to the gradient norm; a purely
    random direction in many dimensions can give a derivative near zero, where
    the difference quotient is dominated by round-off.
    """
    rng = np.random.default_rng(seed)
    params = model.named_parameters()
    if targets is None:
        targets = sample_targets(model, rng)

    with no_grad():
        masks = model.forward(image, depth).masks

    def loss_value() -> float:
        with no_grad():
            return total_loss(model.forward(image, depth, masks=masks), gt).total.item()

    model.zero_grad()
    loss = total_loss(model.forward(image, depth, masks=masks), gt).total
    backward(loss)
    grads = {name: params[name].grad.copy() for name in targets}
    model.zero_grad()

    report = GradcheckReport(loss=loss.item())
    for name in targets:
        p: Param = params[name]
        g = grads[name]
        probes = []
        g_norm = np.linalg.norm(g)
        for k in range(directions):
            v = rng.standard_normal(p.shape)
            v /= np.linalg.norm(v)
            if g_norm > 0:
                v = v + g / g_norm
            probes.append((f"dir{k}", v / np.linalg.norm(v)))
        flat = np.argsort(-np.abs(g).reshape(-1), kind="stable")[:entries]
        for idx in flat:
            e = np.zeros(p.size)
            e[idx] = 1.0
            probes.append((",".join(str(int(i)) for i in np.unravel_index(idx, p.shape)), e.reshape(p.shape)))
        base = p.data.copy()
        for label, v in probes:
            p.assign(base + step * v)
            up = loss_value()
            p.assign(base - step * v)
            down = loss_value()
            p.assign(base)
            report.checks.append(GradCheck(name, label, float(np.sum(g * v)), (up - down) / (2 * step)))
    return report
