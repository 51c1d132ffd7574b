"""Plain gradient descent on one synthetic scene with a small model."""

from vstpp.model import ModelConfig, VSTModel
from vstpp.objectives import GroundTruth
from vstpp.train import overfit, synthetic_scene


def main():
    image, mask = synthetic_scene(32)
    cfg = ModelConfig(side=32, c=16, d=32, heads=2, decoder_layers=(1, 1, 1), encoder_layers=1, convertor_layers=2)

    def log(step, loss):
        if step % 50 == 0:
            print(f"step {step:4d}  L_total {loss:.4f}")

    res = overfit(VSTModel(cfg), image, GroundTruth(mask), steps=300, lr=1e-2, callback=log)
    print(f"final L_total {res.final_loss:.4f}, full-resolution MAE {res.final_mae:.4f}")


if __name__ == "__main__":
    main()
