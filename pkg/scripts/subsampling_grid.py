"""Subsampling grid: first-layer stride {10, 40, 160} x number of 2D layers.

Prints the size of each grid point; with --train also runs the toy task on each
(scaled down to --filters filters and --channels 2D channels to stay desk-sized).
"""
import argparse
from dataclasses import replace

from genfront import frontends as fe, training as tr
from genfront.specaugment import MaskSpec
from genfront.tensor import RandomSource

SR = 16000


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--max-layers", type=int, default=12)
    ap.add_argument("--train", action="store_true")
    ap.add_argument("--epochs", type=int, default=tr.TrainConfig.epochs)
    ap.add_argument("--filters", type=int, default=32)
    ap.add_argument("--channels", type=int, default=16)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    cols = ["stride", "layers", "params", "frames_1s", "receptive_field"]
    if args.train:
        cols += ["loss_reduction", "dev_accuracy"]
    print("\t".join(cols))
    for (stride, layers), cfg in fe.subsampling_grid(args.max_layers).items():
        row = [stride, layers, fe.count_parameters(cfg), fe.frame_counts(cfg, SR)[-1], fe.receptive_field(cfg)]
        if args.train:
            small = replace(cfg, n_filters=args.filters, channels_2d=args.channels)
            report = tr.train_toy(small, tr.ToyTask(seed=args.seed), tr.TrainConfig(epochs=args.epochs),
                                  MaskSpec(), RandomSource(args.seed))
            row += [f"{report.loss_reduction:.3f}", f"{report.dev_accuracy[-1]:.3f}"]
        print("\t".join(map(str, row)), flush=True)


if __name__ == "__main__":
    main()
