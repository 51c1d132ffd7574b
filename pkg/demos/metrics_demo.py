"""MAE, maxF and the Sobel boundary target on a toy mask."""

import numpy as np

from vstpp.objectives import boundary_gt, mae, max_f


def main():
    gt = np.zeros((12, 12))
    gt[3:9, 4:10] = 1
    noisy = np.clip(gt + 0.2 * np.random.default_rng(0).standard_normal(gt.shape), 0, 1)
    for name, pred in (("perfect", gt), ("noisy", noisy), ("inverted", 1 - gt), ("flat 0.5", np.full_like(gt, 0.5))):
        print(f"{name:9s} MAE {mae(pred, gt):.4f}  maxF {max_f(pred, gt):.4f}")
    print("boundary target:\n", boundary_gt(gt).astype(int))


if __name__ == "__main__":
    main()
