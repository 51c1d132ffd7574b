"""Select-integrate attention: gathering foreground keys equals masking background keys."""

import numpy as np

from vstpp.attention import ForegroundMask, ParamFactory, TaskTokens, TransformerLayerParams, sia_block
from vstpp.complexity import closed_form_attention_cost


def main():
    rng = np.random.default_rng(0)
    d, l = 16, 36
    f = ParamFactory(0, "demo")
    params = TransformerLayerParams.create(f.child("layer"), d, 2)
    tasks = TaskTokens.create(f.child("tasks"), d)
    patches = rng.standard_normal((l, d))
    bits = np.zeros(l, dtype=int)
    bits[rng.choice(l, 9, replace=False)] = 1
    mask = ForegroundMask(bits, (6, 6))

    sel, _ = sia_block(patches, tasks, mask, None, None, params, mode="select")
    msk, _ = sia_block(patches, tasks, mask, None, None, params, mode="masked")
    print(f"{mask.n_foreground} of {l} patches are foreground")
    print(f"select vs masked max difference: {np.abs(sel.data - msk.data).max():.2e}")

    full = closed_form_attention_cost(l, l, d, "full", component="scores")
    sia = closed_form_attention_cost(l, mask.n_foreground, d, "sia", component="scores")
    print(f"score MACs: full {full}, gathered {sia} ({100 * (full - sia) / full:.1f}% fewer)")


if __name__ == "__main__":
    main()
