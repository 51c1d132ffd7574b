"""Autograd against central differences on a small model."""

import numpy as np

from vstpp.gradcheck import check_gradients
from vstpp.model import ModelConfig, VSTModel
from vstpp.objectives import GroundTruth
from vstpp.train import synthetic_scene


def main():
    image, mask = synthetic_scene(32)
    image = image + 0.05 * np.random.default_rng(0).standard_normal(image.shape)
    cfg = ModelConfig(side=32, c=16, d=32, heads=2, decoder_layers=(1, 1, 1), encoder_layers=1, convertor_layers=2)
    rep = check_gradients(VSTModel(cfg), image, GroundTruth(mask))
    print(rep.to_text())


if __name__ == "__main__":
    main()
