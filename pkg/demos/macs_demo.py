"""Counted MACs against the closed form, and the decoder savings at several foreground fractions."""

import numpy as np

from vstpp.complexity import closed_form_model_macs, counted_forward, savings_report
from vstpp.model import ModelConfig, VSTModel
from vstpp.tensor import no_grad


def main():
    cfg = ModelConfig(side=64)
    image = np.random.default_rng(0).random((64, 64, 3))
    with no_grad():
        _, rep = counted_forward(VSTModel(cfg).forward, image)
    closed = closed_form_model_macs(cfg, rep.n_foreground)
    for stage, n in rep.grouped(closed).items():
        print(f"{stage:22s} counted {n:>12d}  closed form {closed[stage]:>12d}")

    print("\nforeground  decoder score reduction")
    for fraction in (0.1, 0.25, 0.5, 0.75, 1.0):
        s = savings_report(cfg, fraction)
        base, sia = s.rows["decoder.scores"]
        print(f"{fraction:10.2f}  {s.reduction(base, sia):6.2f}%")


if __name__ == "__main__":
    main()
