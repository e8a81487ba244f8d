"""Kernel-size and filter-count sweep of the generic 2D front-end (stride 10)."""
import argparse
from dataclasses import replace

from genfront import frontends as fe, training as tr
from genfront.specaugment import MaskSpec
from genfront.tensor import RandomSource


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--train", action="store_true", help="also train each point on the toy task")
    ap.add_argument("--epochs", type=int, default=tr.TrainConfig.epochs)
    ap.add_argument("--channels", type=int, default=16, help="2D channels when training")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    cols = ["name", "n_filters", "kernel", "params", "receptive_field"]
    if args.train:
        cols += ["loss_reduction", "dev_accuracy"]
    print("\t".join(cols))
    for name, cfg in fe.kernel_channel_sweep().items():
        row = [name, cfg.n_filters, cfg.kernel, fe.count_parameters(cfg), fe.receptive_field(cfg)]
        if args.train:
            small = replace(cfg, channels_2d=args.channels)
            report = tr.train_toy(small, tr.ToyTask(seed=args.seed), tr.TrainConfig(epochs=args.epochs),
                                  MaskSpec(), RandomSource(args.seed))
            row += [f"{report.loss_reduction:.3f}", f"{report.dev_accuracy[-1]:.3f}"]
        print("\t".join(map(str, row)), flush=True)


if __name__ == "__main__":
    main()
