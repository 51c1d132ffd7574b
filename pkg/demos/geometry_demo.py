"""Soft split, reverse fold and the resulting token grids."""

import numpy as np

from vstpp.geometry import ENCODER_SCHEDULE, RT2T_SCHEDULE, fold_array, soft_split, unfold_array


def main():
    x = np.random.default_rng(0).random((64, 64, 3))
    for spec in ENCODER_SCHEDULE:
        seq = soft_split(x, spec)
        print(f"k={spec.k} s={spec.s} p={spec.p}: {x.shape[:2]} -> grid {seq.grid}, token width {seq.tokens.shape[1]}")
        x = np.random.default_rng(1).random((*seq.grid, 4))

    # fold is the transpose of unfold: <unfold(x), y> == <x, fold(y)>
    spec = RT2T_SCHEDULE[2]
    x = np.random.default_rng(2).random((16, 16, 2))
    tokens, grid = unfold_array(x, spec)
    y = np.random.default_rng(3).random(tokens.shape)
    lhs = np.sum(tokens * y)
    rhs = np.sum(x * fold_array(y, grid, spec, x.shape[:2]))
    print(f"adjoint check: {lhs:.10f} vs {rhs:.10f}")

    # folding a map of ones counts how many windows cover each pixel
    cover = fold_array(np.ones_like(tokens), grid, spec, x.shape[:2])[..., 0]
    print("window cover, top-left 6x6:\n", cover[:6, :6].astype(int))


if __name__ == "__main__":
    main()
