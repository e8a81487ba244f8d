"""Parameter counts, strides and 1-second frame counts for every preset front-end."""
import argparse

from genfront import analysis, frontends as fe

SR = 16000


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--set", choices=("table", "first_layer", "sweep", "grid", "all"), default="table")
    ap.add_argument("--model-dim", type=int, default=fe.MODEL_DIM)
    args = ap.parse_args()

    configs = {}
    if args.set in ("table", "all"):
        configs.update(fe.reference_configs())
    if args.set in ("first_layer", "all"):
        configs.update(fe.first_layer_configs())
    if args.set in ("sweep", "all"):
        configs.update(fe.kernel_channel_sweep())
    if args.set in ("grid", "all"):
        configs.update({f"stride{s}_layers{n}": c for (s, n), c in fe.subsampling_grid().items()})
    print(analysis.emit_report(configs, model_dim=args.model_dim), end="")
    print("\n# frames per second of audio")
    for name, cfg in configs.items():
        print(f"{name}\t{' -> '.join(map(str, fe.frame_counts(cfg, SR)))}")


if __name__ == "__main__":
    main()
